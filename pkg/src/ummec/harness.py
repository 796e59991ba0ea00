"""Benchmark harness: run the full pipeline over many episodes and aggregate.

Per-episode seeds derive from the master seed by a plain counter scheme
(seed_i = master_seed + i), so results are reproducible for any worker-pool
size: workers only change who computes an episode, never which episode is
computed or how results are ordered.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .episodes import BlobSpec, Episode, FeatureSet, gaussian_blobs, load_features, sample_episode
from .exceptions import InvalidInputError, UmmecError
from .losses import LossParams
from .optimizer import EmbeddingState, OptimConfig, init_embeddings, optimize_episode
from .sinkhorn import SinkhornConfig, classify_queries, init_centers, variational_sinkhorn


@dataclass(frozen=True)
class RunConfig:
    """Everything a benchmark run depends on, echoed verbatim into results."""

    data_path: str | None = None
    data_format: str = "csv"
    blob_spec: BlobSpec | None = None
    n_way: int = 5
    k_shot: int = 1
    n_queries: int = 15
    episodes: int = 1000
    loss_params: LossParams = field(default_factory=LossParams)
    optim_config: OptimConfig = field(default_factory=OptimConfig)
    sinkhorn_config: SinkhornConfig = field(default_factory=SinkhornConfig)
    use_local: bool = True
    use_global: bool = True
    use_ummc: bool = True
    norm_factor: int | None = None
    master_seed: int = 0
    workers: int = 1
    out_path: str | None = None
    episode_csv_path: str | None = None

    def __post_init__(self):
        if self.episodes < 1:
            raise InvalidInputError("episodes must be >= 1")
        if self.workers < 1:
            raise InvalidInputError("workers must be >= 1")
        if (self.data_path is None) == (self.blob_spec is None):
            raise InvalidInputError("exactly one of data_path or blob_spec must be set")


@dataclass
class RunResult:
    mean_accuracy: float
    ci95_halfwidth: float
    per_episode_accuracies: list
    wall_time_seconds: float
    episodes: int
    failed_episodes: int
    healthy: bool
    config: RunConfig

    def to_json_dict(self) -> dict:
        doc = {
            "mean_accuracy": self.mean_accuracy,
            "ci95_halfwidth": self.ci95_halfwidth,
            "episodes": self.episodes,
            "failed_episodes": self.failed_episodes,
            "healthy": self.healthy,
            "wall_time_seconds": self.wall_time_seconds,
            "config": asdict(self.config),
        }
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def load_run_features(config: RunConfig) -> FeatureSet:
    """Materialize the run's data source (file or synthetic blobs)."""
    if config.blob_spec is not None:
        return gaussian_blobs(config.blob_spec)
    return load_features(config.data_path, config.data_format)


def run_episode(fs: FeatureSet, episode: Episode, config: RunConfig):
    """One episode through the configured pipeline.

    init_embeddings -> (optional) embedding optimization with the enabled
    loss terms -> either variational Sinkhorn classification or the naive
    nearest-initial-center rule. Returns (accuracy, diagnostics).
    """
    state = init_embeddings(episode.gather(fs))
    optimized = False
    if config.use_local or config.use_global:
        state = optimize_episode(
            state, episode, config.loss_params, config.optim_config,
            norm_factor=config.norm_factor,
            include_local=config.use_local, include_global=config.use_global,
        )
        optimized = True

    centers = init_centers(state, episode.support_positions,
                           episode.support_classes, episode.n_way)
    outer_iters = 0
    if config.use_ummc:
        centers, _plan, history = variational_sinkhorn(
            state, centers, config.sinkhorn_config, log=True,
        )
        outer_iters = len(history)
    predictions = classify_queries(state.z[episode.query_positions], centers)
    accuracy = float(np.mean(predictions == episode.query_classes))
    return accuracy, {"optimized": optimized, "sinkhorn_outer_iters": outer_iters}


# Worker-process state, installed once per worker by the pool initializer.
_WORKER: dict = {}


def _init_worker(fs, config):
    _WORKER["fs"] = fs
    _WORKER["config"] = config


def _episode_task(task):
    index, seed = task
    fs, config = _WORKER["fs"], _WORKER["config"]
    try:
        episode = sample_episode(fs, config.n_way, config.k_shot, config.n_queries, seed)
        accuracy, _ = run_episode(fs, episode, config)
        return index, accuracy, None
    except UmmecError as exc:
        return index, None, f"{type(exc).__name__}: {exc}"


def run_eval(config: RunConfig, fs: FeatureSet | None = None) -> RunResult:
    """Run ``config.episodes`` episodes and aggregate accuracy.

    Numerically failed episodes are recorded (not silently skipped) and the
    run is marked unhealthy when more than 1% fail. Results are identical
    for any ``workers`` value because per-episode seeds and the aggregation
    order are fixed by the episode index.
    """
    start = time.perf_counter()
    if fs is None:
        fs = load_run_features(config)
    tasks = [(i, config.master_seed + i) for i in range(config.episodes)]

    if config.workers == 1:
        _init_worker(fs, config)
        outcomes = [_episode_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=config.workers,
                                 initializer=_init_worker,
                                 initargs=(fs, config)) as pool:
            outcomes = list(pool.map(_episode_task, tasks))
    outcomes.sort(key=lambda item: item[0])

    accuracies = [acc for _, acc, err in outcomes if err is None]
    failures = [(i, err) for i, _, err in outcomes if err is not None]
    mean_acc = float(np.mean(accuracies)) if accuracies else 0.0
    if len(accuracies) > 1:
        ci95 = float(1.96 * np.std(accuracies, ddof=1) / np.sqrt(len(accuracies)))
    else:
        ci95 = 0.0

    if config.episode_csv_path:
        with open(config.episode_csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode_index", "seed", "accuracy", "error"])
            for index, acc, err in outcomes:
                writer.writerow([index, config.master_seed + index,
                                 "" if acc is None else repr(acc), err or ""])

    return RunResult(
        mean_accuracy=mean_acc,
        ci95_halfwidth=ci95,
        per_episode_accuracies=accuracies,
        wall_time_seconds=time.perf_counter() - start,
        episodes=config.episodes,
        failed_episodes=len(failures),
        healthy=len(failures) <= 0.01 * config.episodes,
        config=config,
    )


def dump_embeddings(state: EmbeddingState, episode: Episode, path: str) -> None:
    """Write optimized embeddings as CSV for external plotting.

    Columns: sample_id (original feature-set row), set (support|query),
    true_class (episode class 1..N), then z0..z{d-1} at float32 precision.
    """
    z = state.z
    dim = z.shape[1]
    try:
        fh = open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise InvalidInputError(f"cannot write embeddings to {path}: {exc}") from exc
    with fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "set", "true_class"] + [f"z{i}" for i in range(dim)])
        order = [("support", episode.support_rows, episode.support_classes,
                  episode.support_positions),
                 ("query", episode.query_rows, episode.query_classes,
                  episode.query_positions)]
        for name, rows, classes, positions in order:
            for row_id, cls, pos in zip(rows, classes, positions):
                values = [str(np.float32(v)) for v in z[pos]]
                writer.writerow([int(row_id), name, int(cls)] + values)
