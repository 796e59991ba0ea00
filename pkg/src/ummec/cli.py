"""Command-line interface: eval, gen-blobs, gradcheck, dump-embeddings."""

from __future__ import annotations

import argparse
import sys

from .episodes import BlobSpec, gaussian_blobs, load_features, sample_episode, save_features
from .gradcheck import gradient_check_suite
from .harness import RunConfig, dump_embeddings, run_eval
from .losses import LossParams
from .optimizer import OptimConfig, init_embeddings, optimize_episode
from .sinkhorn import SinkhornConfig


def _data_parser():
    p = argparse.ArgumentParser(add_help=False)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", metavar="PATH", help="feature file to evaluate on")
    src.add_argument("--blobs", action="store_true", help="use synthetic Gaussian blobs")
    p.add_argument("--format", choices=["csv", "umfe"], default="csv",
                   help="feature file format (with --data)")
    p.add_argument("--blob-classes", type=int, default=8)
    p.add_argument("--blob-dim", type=int, default=16)
    p.add_argument("--blob-samples", type=int, default=50, help="samples per blob class")
    p.add_argument("--blob-separation", type=float, default=10.0)
    p.add_argument("--blob-noise", type=float, default=1.0)
    p.add_argument("--blob-seed", type=int, default=7)
    return p


def _hyper_parser():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--alpha", type=float, default=LossParams.alpha)
    p.add_argument("--eta", type=float, default=LossParams.eta)
    p.add_argument("--gamma", type=float, default=LossParams.gamma)
    p.add_argument("--lambda-w", type=float, default=LossParams.lambda_w)
    p.add_argument("--mu", type=float, default=LossParams.mu)
    p.add_argument("--pair-scope", choices=["all_pairs", "same_class_pairs"],
                   default=LossParams.pair_scope)
    p.add_argument("--lambda-ot", type=float, default=SinkhornConfig.lambda_ot)
    p.add_argument("--step-size", type=float, default=SinkhornConfig.step_size)
    p.add_argument("--outer-iters", type=int, default=SinkhornConfig.outer_iters)
    p.add_argument("--opt-steps", type=int, default=OptimConfig.steps)
    p.add_argument("--lr", type=float, default=OptimConfig.learning_rate)
    p.add_argument("--norm-factor", type=int, default=None,
                   help="decov centering divisor (default: episode size n)")
    return p


def _episode_parser():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--n", type=int, default=5, help="classes per episode")
    p.add_argument("--k", type=int, default=1, help="support shots per class")
    p.add_argument("--q", type=int, default=15, help="queries per class")
    p.add_argument("--seed", type=int, default=0)
    return p


def _blob_spec(args) -> BlobSpec:
    return BlobSpec(
        n_classes=args.blob_classes, dim=args.blob_dim,
        samples_per_class=args.blob_samples, separation=args.blob_separation,
        noise_sigma=args.blob_noise, seed=args.blob_seed,
    )


def _run_config(args) -> RunConfig:
    return RunConfig(
        data_path=args.data,
        data_format=args.format,
        blob_spec=_blob_spec(args) if args.blobs else None,
        n_way=args.n, k_shot=args.k, n_queries=args.q,
        episodes=args.episodes,
        loss_params=LossParams(alpha=args.alpha, eta=args.eta, gamma=args.gamma,
                               lambda_w=args.lambda_w, mu=args.mu,
                               pair_scope=args.pair_scope),
        optim_config=OptimConfig(steps=args.opt_steps, learning_rate=args.lr,
                                 seed=args.seed),
        sinkhorn_config=SinkhornConfig(lambda_ot=args.lambda_ot,
                                       step_size=args.step_size,
                                       outer_iters=args.outer_iters),
        use_local=not args.no_local,
        use_global=not args.no_global,
        use_ummc=not args.no_ummc,
        norm_factor=args.norm_factor,
        master_seed=args.seed,
        workers=args.workers,
        out_path=args.out,
        episode_csv_path=args.episode_csv,
    )


def _cmd_eval(args) -> int:
    config = _run_config(args)
    result = run_eval(config)
    doc = result.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(doc + "\n")
    else:
        print(doc)
    print(f"mean_accuracy={result.mean_accuracy:.4f} "
          f"ci95={result.ci95_halfwidth:.4f} episodes={result.episodes} "
          f"failed={result.failed_episodes}", file=sys.stderr)
    return 0 if result.healthy else 1


def _cmd_gen_blobs(args) -> int:
    spec = BlobSpec(n_classes=args.classes, dim=args.dim,
                    samples_per_class=args.samples_per_class,
                    separation=args.separation, noise_sigma=args.noise,
                    seed=args.seed)
    save_features(gaussian_blobs(spec), args.out, "umfe")
    print(f"wrote {args.out}", file=sys.stderr)
    return 0


def _cmd_gradcheck(args) -> int:
    records = gradient_check_suite(instances=args.instances, seed=args.seed,
                                   h=args.h, tol=args.tol)
    failed = 0
    for rec in records:
        status = "ok" if rec["passed"] else "FAIL"
        print(f"instance {rec['instance']:2d}  n={rec['n']:2d} d={rec['dim']}  "
              f"rel_error={rec['rel_error']:.3e}  {status}")
        failed += 0 if rec["passed"] else 1
    print(f"{len(records) - failed}/{len(records)} gradient checks passed")
    return 0 if failed == 0 else 1


def _cmd_dump_embeddings(args) -> int:
    if args.blobs:
        fs = gaussian_blobs(_blob_spec(args))
    else:
        fs = load_features(args.data, args.format)
    episode = sample_episode(fs, args.n, args.k, args.q, args.seed)
    state = init_embeddings(episode.gather(fs))
    if not (args.no_local and args.no_global):
        state = optimize_episode(
            state, episode,
            LossParams(alpha=args.alpha, eta=args.eta, gamma=args.gamma,
                       lambda_w=args.lambda_w, mu=args.mu, pair_scope=args.pair_scope),
            OptimConfig(steps=args.opt_steps, learning_rate=args.lr, seed=args.seed),
            norm_factor=args.norm_factor,
            include_local=not args.no_local, include_global=not args.no_global,
            trace_path=args.trace,
        )
    dump_embeddings(state, episode, args.out)
    print(f"wrote {args.out}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ummec",
        description="Transductive few-shot benchmark: decentralized-covariance "
                    "embedding optimization plus a variational Sinkhorn classifier.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", parents=[_data_parser(), _hyper_parser(), _episode_parser()],
                            help="run the episodic benchmark")
    p_eval.add_argument("--episodes", type=int, default=1000)
    p_eval.add_argument("--no-local", action="store_true", help="disable the local loss")
    p_eval.add_argument("--no-global", action="store_true", help="disable the global loss")
    p_eval.add_argument("--no-ummc", action="store_true",
                        help="classify by nearest initial center instead of Sinkhorn")
    p_eval.add_argument("--out", metavar="PATH", help="write the JSON result here")
    p_eval.add_argument("--episode-csv", metavar="PATH", help="per-episode accuracy CSV")
    p_eval.add_argument("--workers", type=int, default=1)
    p_eval.set_defaults(func=_cmd_eval)

    p_gen = sub.add_parser("gen-blobs", help="write a synthetic UMFE feature file")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--classes", type=int, default=8)
    p_gen.add_argument("--dim", type=int, default=16)
    p_gen.add_argument("--samples-per-class", type=int, default=50)
    p_gen.add_argument("--separation", type=float, default=10.0)
    p_gen.add_argument("--noise", type=float, default=1.0)
    p_gen.add_argument("--seed", type=int, default=7)
    p_gen.set_defaults(func=_cmd_gen_blobs)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p_grad.add_argument("--instances", type=int, default=10)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--h", type=float, default=1e-5)
    p_grad.add_argument("--tol", type=float, default=1e-4)
    p_grad.set_defaults(func=_cmd_gradcheck)

    p_dump = sub.add_parser("dump-embeddings",
                            parents=[_data_parser(), _hyper_parser(), _episode_parser()],
                            help="optimize one episode and dump its embeddings")
    p_dump.add_argument("--out", required=True)
    p_dump.add_argument("--trace", metavar="PATH", help="per-step loss trace CSV")
    p_dump.add_argument("--no-local", action="store_true")
    p_dump.add_argument("--no-global", action="store_true")
    p_dump.set_defaults(func=_cmd_dump_embeddings)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
