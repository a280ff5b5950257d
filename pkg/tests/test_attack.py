import numpy as np
import pytest

from tkmia.attack import (
    AttackConfig,
    GlobalScheme,
    RandomScheme,
    filter_instances,
    select_global,
    select_random,
    success_check,
    tkmia_attack,
    tkmia_objective,
)
from tkmia.core import Instance
from tkmia.model import Scorer, TrainConfig, make_affine, make_mlp, train_bce


def constant_score_model(values):
    """Affine scorer with zero weights whose scores are fixed by the bias."""
    values = np.asarray(values, dtype=float)
    logits = np.log(values / (1.0 - values))
    return Scorer([np.zeros((len(values), 3))], [logits])


def rank_of(scores, idx):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return order.index(idx) + 1


def fd_grad(fn, point, step=1e-5):
    grad = np.zeros_like(point)
    for i in range(point.shape[0]):
        bump = np.zeros_like(point)
        bump[i] = step
        grad[i] = (fn(point + bump) - fn(point - bump)) / (2 * step)
    return grad


def generic_objective_point(rng, model, spec, rel, cfg, margin=1e-3):
    """Draw (x, eps, lam1, lam2) with every hinge argument away from 0."""
    for _ in range(200):
        x = rng.uniform(-0.8, 0.8, model.in_dim)
        eps = rng.uniform(-0.05, 0.05, model.in_dim)
        lam1, lam2 = rng.uniform(0.02, 0.5, 2)
        scores = model.score(x + eps)
        smax = max(scores[list(spec)])
        ymin = min(scores[i] for i in rel if i not in spec)
        gaps = np.concatenate([smax - scores - lam1, scores - ymin - lam2])
        if np.min(np.abs(gaps)) > margin:
            return x, eps, lam1, lam2
    raise AssertionError("could not find a generic point")


class TestObjectiveValue:
    def test_all_equal_scores_zero_objective(self):
        model = constant_score_model([0.5, 0.5, 0.5, 0.5])
        cfg = AttackConfig(k=2, eta=0.1, alpha=0.0)
        value, g_eps, g1, g2 = tkmia_objective(
            model, np.zeros(3), np.zeros(3), 0.0, 0.0, (0,), (0, 1, 2), cfg)
        assert value == 0.0
        assert np.all(g_eps == 0.0)

    def test_lambdas_at_one_leave_only_penalty(self):
        model = constant_score_model([0.9, 0.4, 0.2, 0.7])
        cfg = AttackConfig(k=2, eta=0.1, alpha=0.5)
        eps = np.array([0.2, -0.1, 0.3])
        value, _, _, _ = tkmia_objective(
            model, np.zeros(3), eps, 1.0, 1.0, (0,), (0, 3), cfg)
        assert value == pytest.approx(2.0 + 0.25 * float(eps @ eps), abs=1e-12)

    def test_empty_rest_rejected(self):
        model = constant_score_model([0.9, 0.4, 0.2])
        cfg = AttackConfig(k=1, eta=0.1)
        with pytest.raises(ValueError):
            tkmia_objective(model, np.zeros(3), np.zeros(3), 0.0, 0.0,
                            (0, 1), (0, 1), cfg)

    def test_k_bounds(self):
        model = constant_score_model([0.9, 0.4, 0.2])
        with pytest.raises(ValueError):
            tkmia_objective(model, np.zeros(3), np.zeros(3), 0.0, 0.0, (0,),
                            (0, 1), AttackConfig(k=3, eta=0.1))


class TestObjectiveGradients:
    @pytest.mark.parametrize("arch", ["affine", "mlp"])
    def test_matches_finite_differences(self, arch):
        rng = np.random.default_rng(0 if arch == "affine" else 1)
        if arch == "affine":
            model = make_affine(6, 8, seed=3)
        else:
            model = make_mlp(6, 7, 8, seed=4)
        spec, rel = (1, 4), (1, 2, 4, 6)
        cfg = AttackConfig(k=3, eta=0.1, alpha=0.2)
        for _ in range(40):
            x, eps, lam1, lam2 = generic_objective_point(rng, model, spec, rel, cfg)
            value, g_eps, g1, g2 = tkmia_objective(model, x, eps, lam1, lam2,
                                                   spec, rel, cfg)
            num = fd_grad(lambda e: tkmia_objective(model, x, e, lam1, lam2,
                                                    spec, rel, cfg)[0], eps)
            scale = max(np.linalg.norm(num), 1e-8)
            assert np.linalg.norm(g_eps - num) / scale <= 1e-4

            step = 1e-5
            fd1 = (tkmia_objective(model, x, eps, lam1 + step, lam2, spec, rel, cfg)[0]
                   - tkmia_objective(model, x, eps, lam1 - step, lam2, spec, rel, cfg)[0]) / (2 * step)
            fd2 = (tkmia_objective(model, x, eps, lam1, lam2 + step, spec, rel, cfg)[0]
                   - tkmia_objective(model, x, eps, lam1, lam2 - step, spec, rel, cfg)[0]) / (2 * step)
            assert abs(g1 - fd1) <= 1e-4 * max(1.0, abs(fd1))
            assert abs(g2 - fd2) <= 1e-4 * max(1.0, abs(fd2))


class TestObjectiveConvexity:
    def test_midpoint_convexity_without_sigmoid(self):
        # With a raw affine scorer the objective is jointly convex in
        # (eps, lam1, lam2).
        model = make_affine(5, 7, seed=5, sigmoid_output=False)
        cfg = AttackConfig(k=2, eta=0.1, alpha=0.3)
        spec, rel = (0, 3), (0, 2, 3, 5)
        rng = np.random.default_rng(6)

        def value(eps, lam1, lam2):
            return tkmia_objective(model, x, eps, lam1, lam2, spec, rel, cfg)[0]

        for _ in range(400):
            x = rng.uniform(-0.8, 0.8, 5)
            e1, e2 = rng.uniform(-0.5, 0.5, (2, 5))
            l1a, l1b, l2a, l2b = rng.uniform(0, 1, 4)
            mid = value((e1 + e2) / 2, (l1a + l1b) / 2, (l2a + l2b) / 2)
            assert mid <= (value(e1, l1a, l2a) + value(e2, l1b, l2b)) / 2 + 1e-9


class TestSuccessCheck:
    def test_boundary_equality_counts(self):
        # class 2 sits exactly at the (k+1)-th score
        assert success_check([0.9, 0.8, 0.1], (2,), (0, 1, 2), 2)

    def test_rank_reading(self):
        assert success_check([0.9, 0.1, 0.8], (1,), (0, 1), 2)
        assert not success_check([0.9, 0.1, 0.8], (2,), (0, 1, 2), 2)

    def test_strict_requires_gap_closed(self):
        # c1 holds but the k-th score still tops a remaining relevant label
        scores = [0.9, 0.2, 0.8, 0.3]
        assert success_check(scores, (1,), (0, 1, 3), 2, mode="c1_only")
        assert not success_check(scores, (1,), (0, 1, 3), 2, mode="strict")
        # boundary: k-th score equals the lowest remaining relevant score
        scores = [0.9, 0.1, 0.2, 0.85]
        assert success_check(scores, (1,), (0, 1, 3), 2, mode="strict")

    def test_agrees_with_rank_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(500):
            c = int(rng.integers(3, 12))
            scores = rng.uniform(0, 1, c)
            rel = sorted(rng.choice(c, size=int(rng.integers(2, c + 1)), replace=False).tolist())
            spec = rel[: int(rng.integers(1, len(rel)))]
            k = int(rng.integers(1, c))
            expected = all(rank_of(scores, s) > k for s in spec)
            assert success_check(scores, spec, rel, k) == expected

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            success_check([0.9, 0.1, 0.8], (1,), (0, 1), 3)


def trained_toy_victim(seed=0):
    """Six classes, affine victim trained until relevant labels rank high."""
    rng = np.random.default_rng(seed)
    prototypes = rng.uniform(-1, 1, (6, 12))
    instances = []
    for _ in range(400):
        y = np.zeros(6, dtype=np.int64)
        y[rng.choice(6, size=rng.integers(3, 6), replace=False)] = 1
        x = np.tanh(prototypes[y == 1].mean(axis=0) + 0.1 * rng.standard_normal(12))
        instances.append(Instance(x=x, y=y))
    model = train_bce(instances, TrainConfig(epochs=150, learning_rate=1.0,
                                             batch_size=64, seed=seed))
    return model, instances


class TestTkmiaAttack:
    def test_already_successful_returns_zero_epsilon(self):
        model = constant_score_model([0.9, 0.8, 0.1, 0.7])
        inst = Instance(x=np.zeros(3), y=[1, 1, 1, 0])
        cfg = AttackConfig(k=2, eta=0.1, max_iter=50)
        out = tkmia_attack(model, inst, (2,), cfg)
        assert out.success
        assert out.iterations_used == 0
        assert np.all(out.epsilon == 0.0)
        assert out.residual == ()
        np.testing.assert_array_equal(out.scores_before, out.scores_after)

    def test_zero_budget_returns_failure(self):
        model = constant_score_model([0.9, 0.8, 0.6, 0.1])
        inst = Instance(x=np.zeros(3), y=[1, 1, 1, 0])
        cfg = AttackConfig(k=2, eta=0.1, max_iter=0)
        out = tkmia_attack(model, inst, (0,), cfg)
        assert not out.success
        assert np.all(out.epsilon == 0.0)
        assert out.iterations_used == 0

    def test_filter_violation_rejected(self):
        model = constant_score_model([0.9, 0.8, 0.6, 0.1])
        inst = Instance(x=np.zeros(3), y=[1, 1, 0, 0])
        with pytest.raises(ValueError):
            tkmia_attack(model, inst, (0,), AttackConfig(k=2, eta=0.1))

    def test_specified_outside_relevant_rejected(self):
        model = constant_score_model([0.9, 0.8, 0.6, 0.1])
        inst = Instance(x=np.zeros(3), y=[1, 1, 1, 0])
        with pytest.raises(ValueError):
            tkmia_attack(model, inst, (3,), AttackConfig(k=1, eta=0.1))

    def test_non_finite_gradient_reported_with_iteration(self):
        model = make_affine(3, 4, seed=1)

        class Broken(Scorer):
            def input_gradient(self, x, cotangent):
                return np.full(3, np.nan)

        broken = Broken(model.weights, model.biases)
        inst = Instance(x=np.zeros(3), y=[1, 1, 1, 0])
        spec = (int(np.argmax(broken.score(inst.x)[:3])),)
        with pytest.raises(FloatingPointError, match="iteration"):
            tkmia_attack(broken, inst, spec, AttackConfig(k=1, eta=0.1, max_iter=5))

    def test_strict_mode_success_implies_both_conditions(self):
        model, instances = trained_toy_victim(seed=3)
        cfg = AttackConfig(k=2, eta=0.05, alpha=1e-4, max_iter=300,
                           success_mode="strict")
        ran = strict_hits = 0
        for inst in instances[:40]:
            if len(inst.relevant) < cfg.k + 1:
                continue
            scores = model.score(inst.x)
            spec = (max(inst.relevant, key=lambda i: scores[i]),)
            out = tkmia_attack(model, inst, spec, cfg)
            ran += 1
            if out.success:
                strict_hits += 1
                after = out.scores_after
                rest = [i for i in inst.relevant if i not in spec]
                kth = np.sort(after)[::-1][cfg.k - 1]
                assert all(rank_of(after, s) > cfg.k for s in spec)
                assert kth <= min(after[i] for i in rest) + 1e-12
        assert ran >= 10 and strict_hits >= 1

    def test_end_to_end_on_trained_victim(self):
        model, instances = trained_toy_victim(seed=0)
        cfg = AttackConfig(k=2, eta=0.05, alpha=1e-4, max_iter=300)
        attacked = succeeded = 0
        for inst in instances[:80]:
            relevant = inst.relevant
            if len(relevant) < cfg.k + 1:
                continue
            # attack the best-ranked relevant label so the run is non-trivial
            scores = model.score(inst.x)
            spec = (max(relevant, key=lambda i: scores[i]),)
            out = tkmia_attack(model, inst, spec, cfg)
            attacked += 1
            lo, hi = cfg.clip_domain
            assert np.all(inst.x + out.epsilon >= lo - 1e-12)
            assert np.all(inst.x + out.epsilon <= hi + 1e-12)
            assert 0.0 <= out.lambda1 <= 1.0 and 0.0 <= out.lambda2 <= 1.0
            assert set(out.residual) <= set(out.specified)
            if out.success:
                succeeded += 1
                after = out.scores_after
                for s in spec:
                    assert rank_of(after, s) > cfg.k
                if out.iterations_used == 0:
                    assert np.all(out.epsilon == 0.0)
            if out.trace:
                best = np.minimum.accumulate(out.trace)
                assert np.all(np.diff(best) <= 1e-15)
        assert attacked >= 30
        assert succeeded / attacked >= 0.9


class TestSelection:
    def test_global_intersection(self):
        data = [
            Instance(x=np.zeros(2), y=[0, 1, 0, 1, 0, 0]),
            Instance(x=np.zeros(2), y=[1, 0, 1, 0, 0, 0]),
        ]
        pairs = select_global(data, (3, 5))
        assert pairs == [(0, (3,))]

    def test_global_count_matches_bruteforce(self):
        rng = np.random.default_rng(8)
        data = []
        for _ in range(100):
            y = np.zeros(8, dtype=np.int64)
            y[rng.choice(8, size=rng.integers(1, 5), replace=False)] = 1
            data.append(Instance(x=np.zeros(2), y=y))
        cats = {1, 4, 6}
        pairs = select_global(data, cats)
        expected = [i for i, inst in enumerate(data) if set(inst.relevant) & cats]
        assert [i for i, _ in pairs] == expected
        for idx, s in pairs:
            assert set(s) == set(data[idx].relevant) & cats

    def test_global_empty_categories_rejected(self):
        with pytest.raises(ValueError):
            select_global([], ())

    def test_random_full_set(self):
        inst = Instance(x=np.zeros(2), y=[1, 0, 1, 1])
        assert select_random(inst, 3, seed=0) == (0, 2, 3)

    def test_random_singleton(self):
        inst = Instance(x=np.zeros(2), y=[0, 0, 0, 0, 1])
        assert select_random(inst, 1, seed=5) == (4,)

    def test_random_deterministic(self):
        inst = Instance(x=np.zeros(2), y=[1, 1, 0, 1, 1, 1])
        assert select_random(inst, 2, seed=42) == select_random(inst, 2, seed=42)

    def test_random_out_of_range(self):
        inst = Instance(x=np.zeros(2), y=[1, 1, 0, 0])
        with pytest.raises(ValueError):
            select_random(inst, 3, seed=0)
        with pytest.raises(ValueError):
            select_random(inst, 0, seed=0)

    def test_random_uniform_over_subsets(self):
        # m=2 of 4 relevant labels: all 6 subsets equally likely
        inst = Instance(x=np.zeros(2), y=[1, 1, 1, 1])
        counts = {}
        n = 10_000
        for i in range(n):
            s = select_random(inst, 2, seed=i)
            counts[s] = counts.get(s, 0) + 1
        expected = n / 6
        sigma = np.sqrt(n * (1 / 6) * (5 / 6))
        for subset, count in counts.items():
            assert abs(count - expected) <= 3 * sigma, (subset, count)
        assert len(counts) == 6


class TestFilterInstances:
    def test_boundary(self):
        keep = Instance(x=np.zeros(2), y=[1, 1, 1, 1, 1, 0])
        drop = Instance(x=np.zeros(2), y=[1, 1, 1, 1, 0, 0])
        assert filter_instances([keep, drop], k=3, s_size=2) == [0]

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(9)
        data = []
        for _ in range(200):
            y = (rng.uniform(size=10) < 0.4).astype(np.int64)
            data.append(Instance(x=np.zeros(2), y=y))
        got = filter_instances(data, k=2, s_size=2)
        expected = [i for i, inst in enumerate(data) if inst.y.sum() >= 4]
        assert got == expected


class TestAttackConfig:
    def test_random_scheme_m_bounded_by_k(self):
        with pytest.raises(ValueError):
            AttackConfig(k=2, eta=0.1, scheme=RandomScheme(3))
        AttackConfig(k=3, eta=0.1, scheme=RandomScheme(3))

    def test_validation(self):
        with pytest.raises(ValueError):
            AttackConfig(k=0, eta=0.1)
        with pytest.raises(ValueError):
            AttackConfig(k=2, eta=-1.0)
        with pytest.raises(ValueError):
            AttackConfig(k=2, eta=0.1, momentum=1.0)
        with pytest.raises(ValueError):
            AttackConfig(k=2, eta=0.1, clip_domain=(1.0, -1.0))
        with pytest.raises(ValueError):
            AttackConfig(k=2, eta=0.1, success_mode="sometimes")
        with pytest.raises(ValueError):
            GlobalScheme(())
