"""Transport solver, center refinement, and classification rules."""

import itertools
import math

import numpy as np
import pytest

from ummec.episodes import BlobSpec, gaussian_blobs, sample_episode
from ummec.exceptions import (
    DegenerateCaseWarning,
    DegenerateClassError,
    InvalidEpisodeError,
    InvalidInputError,
    NumericalUnderflowError,
)
from ummec.optimizer import init_embeddings
from ummec.sinkhorn import (
    ClassCenters,
    SinkhornConfig,
    TransportPlan,
    classify_by_plan,
    classify_queries,
    cost_matrix,
    init_centers,
    sinkhorn_plan,
    transport_objective,
    update_centers,
    variational_sinkhorn,
)


def uniform_marginals(n, k):
    return np.full(n, 1.0 / n), np.full(k, 1.0 / k)


def enumerate_optimal_assignment(m):
    """Oracle for the unregularized balanced-transport optimum: exhaustively
    enumerate every assignment of n samples to k classes with n/k samples
    each, and return the cheapest one."""
    n, k = m.shape
    assert n % k == 0
    group = n // k
    base = []
    for cls in range(k):
        base.extend([cls] * group)
    best_cost, best = math.inf, None
    for perm in set(itertools.permutations(base)):
        cost = sum(m[i, perm[i]] for i in range(n))
        if cost < best_cost:
            best_cost, best = cost, perm
    return np.asarray(best)


class TestInitCenters:
    def test_one_shot_center_is_the_support_vector(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal((4, 3))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        centers = init_centers(z, np.array([0, 1]), np.array([1, 2]), 2)
        assert np.array_equal(centers.c[0], z[0])
        assert np.array_equal(centers.c[1], z[1])

    def test_antipodal_support_gives_zero_center_with_flag(self):
        z = np.array([[1.0, 0.0], [-1.0, 0.0]])
        with pytest.warns(DegenerateCaseWarning):
            centers = init_centers(z, np.array([0, 1]), np.array([1, 1]), 1)
        assert np.allclose(centers.c[0], 0.0)

    def test_matches_per_class_mean_oracle(self):
        rng = np.random.default_rng(1)
        z = rng.standard_normal((25, 6))
        classes = np.repeat(np.arange(1, 6), 5)
        centers = init_centers(z, np.arange(25), classes, 5)
        for k in range(5):
            manual = sum(z[i] for i in range(25) if classes[i] == k + 1) / 5.0
            assert np.abs(centers.c[k] - manual).max() < 1e-12

    def test_empty_class_is_an_error(self):
        with pytest.raises(InvalidEpisodeError):
            init_centers(np.eye(3), np.array([0]), np.array([1]), 2)


class TestCostMatrix:
    def test_zero_distance_to_own_center(self):
        z = np.array([[0.6, 0.8]])
        centers = ClassCenters(c=np.array([[0.6, 0.8], [1.0, 0.0]]))
        m = cost_matrix(z, centers)
        assert m[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_antipodal_unit_vector_cost_is_four(self):
        z = np.array([[1.0, 0.0]])
        centers = ClassCenters(c=np.array([[-1.0, 0.0]]))
        assert cost_matrix(z, centers)[0, 0] == pytest.approx(4.0, abs=1e-12)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(2)
        z = rng.standard_normal((7, 4))
        centers = ClassCenters(c=rng.standard_normal((3, 4)))
        m = cost_matrix(z, centers)
        for i in range(7):
            for k in range(3):
                direct = float(((z[i] - centers.c[k]) ** 2).sum())
                assert m[i, k] == pytest.approx(direct, abs=1e-10)


class TestSinkhornPlan:
    def test_uniform_cost_gives_outer_product(self):
        r, c = uniform_marginals(4, 2)
        plan = sinkhorn_plan(np.zeros((4, 2)), r, c, SinkhornConfig())
        assert np.abs(plan.p - np.outer(r, c)).max() < 1e-8

    def test_two_by_two_closed_form(self):
        # costless diagonal, prohibitive off-diagonal: the optimum puts all
        # mass on the diagonal, 0.5 each
        m = np.array([[0.0, 10.0], [10.0, 0.0]])
        r, c = uniform_marginals(2, 2)
        plan = sinkhorn_plan(m, r, c, SinkhornConfig(lambda_ot=10.0))
        assert np.abs(plan.p - np.diag([0.5, 0.5])).max() < 1e-3

    def test_marginals_satisfied(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            n = int(rng.integers(2, 31))
            k = int(rng.integers(2, 6))
            m = rng.uniform(0.0, 2.0, size=(n, k))
            r = rng.uniform(0.5, 1.5, size=n)
            r /= r.sum()
            c = rng.uniform(0.5, 1.5, size=k)
            c /= c.sum()
            plan = sinkhorn_plan(m, r, c, SinkhornConfig())
            assert plan.p.min() >= 0.0
            assert np.abs(plan.p.sum(axis=1) - r).max() < 1e-6
            assert np.abs(plan.p.sum(axis=0) - c).max() < 1e-6
            assert plan.p.sum() == pytest.approx(1.0, abs=1e-6)

    def test_matches_enumeration_at_low_regularization(self):
        rng = np.random.default_rng(4)
        shapes = [(2, 2), (4, 2), (6, 2), (3, 3), (6, 3)]
        agree = 0
        trials = 40
        for _ in range(trials):
            n, k = shapes[int(rng.integers(len(shapes)))]
            m = rng.uniform(0.0, 1.0, size=(n, k))
            r, c = uniform_marginals(n, k)
            plan = sinkhorn_plan(m, r, c, SinkhornConfig(lambda_ot=60.0,
                                                         inner_max_iters=2000))
            oracle = enumerate_optimal_assignment(m)
            if np.array_equal(np.argmax(plan.p, axis=1), oracle):
                agree += 1
        assert agree >= 0.95 * trials

    def test_underflow_raises_named_error(self):
        m = np.array([[0.0, 0.0], [2.0, 2.0]])  # second kernel row all zero
        r, c = uniform_marginals(2, 2)
        with pytest.raises(NumericalUnderflowError, match="lambda_ot"):
            sinkhorn_plan(m, r, c, SinkhornConfig(lambda_ot=1000.0))

    def test_rejects_bad_marginals(self):
        m = np.zeros((2, 2))
        with pytest.raises(InvalidInputError):
            sinkhorn_plan(m, np.array([0.5, 0.5]), np.array([0.9, 0.2]), SinkhornConfig())
        with pytest.raises(InvalidInputError):
            sinkhorn_plan(m, np.array([1.0, 0.0]), np.array([0.5, 0.5]), SinkhornConfig())

    def test_reports_iterations_and_residual(self):
        r, c = uniform_marginals(3, 3)
        plan = sinkhorn_plan(np.zeros((3, 3)), r, c, SinkhornConfig())
        assert plan.iterations >= 1
        assert plan.residual < SinkhornConfig.inner_tol


class TestUpdateCenters:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.z = rng.standard_normal((6, 4))
        self.centers = ClassCenters(c=rng.standard_normal((2, 4)))
        p = rng.uniform(0.1, 1.0, size=(6, 2))
        self.plan = TransportPlan(p=p / p.sum(), r=np.full(6, 1 / 6), c_marg=np.full(2, 0.5))

    def test_zero_step_keeps_centers(self):
        out = update_centers(self.plan, self.z, self.centers, 0.0)
        assert np.array_equal(out.c, self.centers.c)

    def test_full_step_reaches_barycenter(self):
        out = update_centers(self.plan, self.z, self.centers, 1.0)
        omega = (self.plan.p.T @ self.z) / self.plan.p.sum(axis=0)[:, None]
        assert np.abs(out.c - omega).max() < 1e-12

    def test_uniform_plan_maps_to_global_mean(self):
        p = np.full((6, 2), 1.0 / 12.0)
        plan = TransportPlan(p=p, r=np.full(6, 1 / 6), c_marg=np.full(2, 0.5))
        out = update_centers(plan, self.z, self.centers, 1.0)
        mean = self.z.mean(axis=0)
        assert np.abs(out.c - mean).max() < 1e-12

    def test_zero_mass_class_is_an_error(self):
        p = np.zeros((6, 2))
        p[:, 0] = 1.0 / 6.0
        plan = TransportPlan(p=p, r=np.full(6, 1 / 6), c_marg=np.full(2, 0.5))
        with pytest.raises(DegenerateClassError):
            update_centers(plan, self.z, self.centers, 0.5)


class TestVariationalSinkhorn:
    def test_composition_identity_at_zero_step(self):
        rng = np.random.default_rng(6)
        z = rng.standard_normal((8, 3))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        centers0 = ClassCenters(c=z[:2].copy())
        config = SinkhornConfig(outer_iters=1, step_size=0.0)
        centers, plan = variational_sinkhorn(z, centers0, config)
        assert np.array_equal(centers.c, centers0.c)
        r, c = uniform_marginals(8, 2)
        direct = sinkhorn_plan(cost_matrix(z, centers0), r, c, config)
        assert np.abs(plan.p - direct.p).max() < 1e-12

    def test_separated_clusters_are_near_fixed_point(self):
        # centers placed at the exact cluster means (the barycenter limit)
        # should barely move: transport sends each cluster to its own center
        spec = BlobSpec(n_classes=2, dim=8, samples_per_class=20,
                        separation=40.0, noise_sigma=1.0, seed=3)
        fs = gaussian_blobs(spec)
        z = fs.features / np.linalg.norm(fs.features, axis=1, keepdims=True)
        means = np.stack([z[fs.labels == c].mean(axis=0) for c in (0, 1)])
        centers0 = ClassCenters(c=means)
        config = SinkhornConfig(outer_iters=10, inner_max_iters=5000)
        centers, _ = variational_sinkhorn(z, centers0, config)
        drift = np.linalg.norm(centers.c - centers0.c, axis=1).max()
        assert drift < 1e-3

    def test_objective_recorded_and_finite(self):
        rng = np.random.default_rng(7)
        z = rng.standard_normal((10, 4))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        centers0 = ClassCenters(c=z[:2].copy())
        # modest regularization: centers placed on data points make the
        # kernel contrast extreme at large lambda, stalling convergence
        config = SinkhornConfig(lambda_ot=2.0, outer_iters=5, inner_max_iters=5000)
        centers, plan, history = variational_sinkhorn(z, centers0, config, log=True)
        assert 1 <= len(history) <= 5
        for record in history:
            assert math.isfinite(record["objective"])
            assert record["marginal_residual"] < config.inner_tol

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        z = rng.standard_normal((12, 5))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        centers0 = ClassCenters(c=z[:3].copy())
        out1 = variational_sinkhorn(z, centers0, SinkhornConfig())
        out2 = variational_sinkhorn(z, centers0, SinkhornConfig())
        assert np.array_equal(out1[0].c, out2[0].c)
        assert np.array_equal(out1[1].p, out2[1].p)

    def test_diagnostics_csv(self, tmp_path):
        rng = np.random.default_rng(9)
        z = rng.standard_normal((6, 3))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        centers0 = ClassCenters(c=z[:2].copy())
        path = tmp_path / "diag.csv"
        variational_sinkhorn(z, centers0, SinkhornConfig(outer_iters=3),
                             diagnostics_path=str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "objective,marginal_residual,center_displacement,inner_iterations"
        assert len(lines) >= 2

    def test_transport_objective_uniform_case(self):
        # uniform cost, uniform plan: <P,M> = m0 and KL(P || r c^T) = 0
        n, k = 4, 2
        r, c = uniform_marginals(n, k)
        plan = TransportPlan(p=np.outer(r, c), r=r, c_marg=c)
        m = np.full((n, k), 2.5)
        assert transport_objective(plan, m, 10.0) == pytest.approx(2.5, abs=1e-12)


class TestClassification:
    def test_query_on_center(self):
        centers = ClassCenters(c=np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert classify_queries(np.array([[0.0, 1.0]]), centers).tolist() == [2]

    def test_tie_breaks_to_smaller_class(self):
        centers = ClassCenters(c=np.array([[1.0, 0.0], [-1.0, 0.0]]))
        assert classify_queries(np.array([[0.0, 1.0]]), centers).tolist() == [1]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(10)
        q = rng.standard_normal((20, 5))
        centers = ClassCenters(c=rng.standard_normal((4, 5)))
        preds = classify_queries(q, centers)
        for i in range(20):
            dists = [float(((q[i] - centers.c[k]) ** 2).sum()) for k in range(4)]
            assert preds[i] == int(np.argmin(dists)) + 1

    def test_plan_argmax_rule(self):
        p = np.array([[0.9, 0.05, 0.05], [1 / 3, 1 / 3, 1 / 3]])
        plan = TransportPlan(p=p, r=np.full(2, 0.5), c_marg=np.full(3, 1 / 3))
        assert classify_by_plan(plan, [0]).tolist() == [1]
        assert classify_by_plan(plan, [1]).tolist() == [1]  # tie -> class 1

    def test_plan_and_center_rules_agree_after_convergence(self):
        spec = BlobSpec(n_classes=6, dim=8, samples_per_class=30,
                        separation=30.0, noise_sigma=1.0, seed=4)
        fs = gaussian_blobs(spec)
        agreements, totals = 0, 0
        for seed in range(10):
            episode = sample_episode(fs, 5, 1, 10, rng_seed=seed)
            z = init_embeddings(episode.gather(fs)).z
            centers0 = init_centers(z, episode.support_positions,
                                    episode.support_classes, 5)
            centers, plan = variational_sinkhorn(z, centers0,
                                                 SinkhornConfig(outer_iters=15))
            by_center = classify_queries(z[episode.query_positions], centers)
            by_plan = classify_by_plan(plan, episode.query_positions)
            agreements += int((by_center == by_plan).sum())
            totals += len(by_center)
        assert agreements / totals >= 0.95


class TestSinkhornConfig:
    def test_validation(self):
        with pytest.raises(InvalidInputError):
            SinkhornConfig(lambda_ot=0.0)
        with pytest.raises(InvalidInputError):
            SinkhornConfig(step_size=1.5)
        with pytest.raises(InvalidInputError):
            SinkhornConfig(outer_iters=0)
        with pytest.raises(InvalidInputError):
            SinkhornConfig(inner_tol=0.0)
