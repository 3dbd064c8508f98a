import numpy as np
import pytest

from hiercause.errors import DegenerateTargetError
from hiercause.evaluate import (
    PredictionMatrix,
    R2Score,
    are_equivalent,
    auto_bandwidth,
    is_independent,
    kernel_r2,
    median_distance,
    nw_predict,
    pairwise_matrix,
    predicts_perfectly,
)


def brute_force_nw(x_train, y_train, x_eval, h):
    """Literal double-loop Nadaraya-Watson, the oracle for the fast path."""
    out = np.zeros((x_eval.shape[0], y_train.shape[1]))
    for i in range(x_eval.shape[0]):
        logw = np.empty(x_train.shape[0])
        for j in range(x_train.shape[0]):
            d2 = np.sum((x_eval[i] - x_train[j]) ** 2)
            logw[j] = -d2 / (2.0 * h * h)
        w = np.exp(logw - logw.max())
        out[i] = (w[:, None] * y_train).sum(axis=0) / w.sum()
    return out


class TestNwOracle:
    @pytest.mark.parametrize("n,p,q,seed", [(60, 1, 1, 0), (200, 3, 2, 1)])
    def test_matches_brute_force(self, n, p, q, seed):
        rng = np.random.default_rng(seed)
        x_tr = rng.standard_normal((n, p))
        y_tr = rng.standard_normal((n, q))
        x_ev = rng.standard_normal((50, p))
        h = 0.7
        fast = nw_predict(x_tr, y_tr, x_ev, h, chunk=7)
        slow = brute_force_nw(x_tr, y_tr, x_ev, h)
        np.testing.assert_allclose(fast, slow, atol=1e-10, rtol=0)

    def test_far_query_degrades_gracefully(self):
        x_tr = np.zeros((10, 1))
        x_tr[:, 0] = np.arange(10)
        y_tr = x_tr.copy()
        pred = nw_predict(x_tr, y_tr, np.array([[1e6]]), 0.5)
        assert np.all(np.isfinite(pred))


class TestKernelR2:
    def test_self_prediction(self):
        x = np.random.default_rng(0).standard_normal((8192, 1))
        assert kernel_r2(x, x).value >= 0.999

    def test_self_prediction_small_n(self):
        x = np.random.default_rng(1).standard_normal((256, 1))
        assert kernel_r2(x, x).value >= 0.999

    def test_independent_stays_near_zero(self):
        vals = []
        for seed in range(10):
            rng = np.random.default_rng(1000 + seed)
            x = rng.standard_normal((8192, 1))
            y = rng.standard_normal((8192, 1))
            vals.append(kernel_r2(x, y).value)
        assert max(abs(v) for v in vals) <= 0.05

    def test_degenerate_target(self):
        x = np.random.default_rng(0).standard_normal((100, 1))
        with pytest.raises(DegenerateTargetError):
            kernel_r2(x, np.ones((100, 1)))

    def test_requires_min_samples(self):
        with pytest.raises(ValueError, match="at least 50"):
            kernel_r2(np.zeros((10, 1)), np.zeros((10, 1)))

    def test_value_capped_at_one(self):
        with pytest.raises(ValueError):
            R2Score(1.5, 10, 10, 1.0)

    def test_split_determinism(self):
        rng = np.random.default_rng(3)
        x, y = rng.standard_normal((500, 2)), rng.standard_normal((500, 1))
        assert kernel_r2(x, y).value == kernel_r2(x, y).value

    def test_monotone_information_under_noise_columns(self):
        # pure-noise predictor columns may not buy more than 0.05 of R^2
        rng = np.random.default_rng(4)
        x = rng.standard_normal((4096, 1))
        y = np.tanh(x) + 0.3 * rng.standard_normal((4096, 1))
        base = kernel_r2(x, y).value
        noisy = kernel_r2(np.concatenate(
            [x, rng.standard_normal((4096, 2))], axis=1), y).value
        assert noisy <= base + 0.05


class TestBandwidth:
    def test_median_distance_matches_direct(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((40, 2))
        direct = np.median([np.linalg.norm(a - b)
                            for i, a in enumerate(x) for b in x[i + 1:]])
        assert median_distance(x) == pytest.approx(direct)

    def test_bandwidth_scales_with_data(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((512, 2))
        assert auto_bandwidth(3.0 * x) == pytest.approx(3.0 * auto_bandwidth(x))


class TestPredicates:
    def test_threshold_is_closed(self):
        score = R2Score(0.6, 10, 10, 1.0)
        assert predicts_perfectly(score, 0.6)
        assert predicts_perfectly(R2Score(0.85, 1, 1, 1.0), 0.6)
        assert not predicts_perfectly(R2Score(0.55, 1, 1, 1.0), 0.6)

    def test_cube_map_is_equivalent(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((8192, 2))
        assert are_equivalent(a, a ** 3)

    def test_independent_not_equivalent(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((4096, 1))
        b = rng.standard_normal((4096, 1))
        assert not are_equivalent(a, b)

    def test_supervariable_predicts_one_way_only(self):
        rng = np.random.default_rng(9)
        b = rng.standard_normal((8192, 2))
        a = np.concatenate([b, rng.standard_normal((8192, 2))], axis=1)
        assert predicts_perfectly(kernel_r2(a, b))
        assert not predicts_perfectly(kernel_r2(b, a))
        assert not are_equivalent(a, b)

    def test_is_independent(self):
        rng = np.random.default_rng(10)
        a = rng.standard_normal((4096, 1))
        rest = rng.standard_normal((4096, 2))
        assert is_independent(a, rest)
        assert not is_independent(a, np.concatenate([rest, a], axis=1))

    def test_weak_dependence_is_not_independent(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((8192, 1))
        # ~0.3 of the target's variance comes from a
        rest = 0.65 * a + rng.standard_normal((8192, 1))
        assert not is_independent(a, rest)


class TestPairwiseMatrix:
    def test_copies_score_high_both_ways(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((4096, 1))
        m = pairwise_matrix([("a", x), ("b", x.copy())])
        assert m.value("a", "b") >= 0.999
        assert m.value("b", "a") >= 0.999
        assert m.scores[0][0] is None

    def test_degenerate_cell_is_missing_not_fatal(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((200, 1))
        m = pairwise_matrix([("a", x), ("flat", np.ones((200, 1)))])
        assert m.value("a", "flat") is None
        assert m.value("flat", "a") is not None

    def test_csv_rows_layout(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((200, 1))
        m = pairwise_matrix([("a", x), ("b", 2 * x)])
        rows = m.to_csv_rows()
        assert rows[0] == ["", "a", "b"]
        assert rows[1][1] == "x"

    def test_unequal_lengths_rejected(self):
        with pytest.raises(ValueError, match="equal sample"):
            pairwise_matrix([("a", np.zeros((100, 1))), ("b", np.zeros((90, 1)))])
