import numpy as np
import pytest
from scipy import stats

from pailab import criteria, mask as masks, nn
from pailab.errors import ConfigError

from conftest import max_rel_err


def _single_layer(W, b=None):
    W = np.asarray(W, dtype=np.float64)
    specs = (nn.LayerSpec(W.shape[0], W.shape[1], b is not None, "none"),)
    vals = W.ravel() if b is None else np.concatenate([W.ravel(), b])
    return nn.ParamVector(vals, specs)


class TestRandom:
    def test_same_seed(self):
        assert np.array_equal(criteria.random_score(50, 3).values, criteria.random_score(50, 3).values)

    def test_different_seed(self):
        assert not np.array_equal(criteria.random_score(50, 3).values, criteria.random_score(50, 4).values)

    def test_uniform_subset_chi_square(self):
        # kept-position frequency over 1000 seeds, k=20, density 0.25 -> 5 kept
        counts = np.zeros(20)
        for seed in range(1000):
            counts += masks.topk_mask(criteria.random_score(20, seed).values, 0.25)
        assert counts.sum() == 5000
        _, p = stats.chisquare(counts, np.full(20, 250.0))
        assert p > 0.01


class TestMagnitude:
    def test_example(self):
        p = _single_layer([[0.5, -0.2], [0.1, -0.9]])
        s = criteria.magnitude_score(p).values
        np.testing.assert_array_equal(s, [0.5, 0.2, 0.1, 0.9])
        assert masks.topk_mask(s, 0.5).tolist() == [1, 0, 0, 1]

    def test_equal_magnitudes_tie_by_index(self):
        p = _single_layer([[1.0, -1.0], [1.0, -1.0]])
        assert masks.topk_mask(criteria.magnitude_score(p).values, 0.5).tolist() == [1, 1, 0, 0]

    def test_scale_invariance(self, rng):
        p = nn.kaiming_init(nn.mlp_specs([6, 5, 3]), 0)
        a = masks.topk_mask(criteria.magnitude_score(p).values, 0.3)
        b = masks.topk_mask(criteria.magnitude_score(p.with_values(3 * p.values)).values, 0.3)
        assert np.array_equal(a, b)

    def test_masked_sentinel(self):
        p = _single_layer([[0.5, -0.2], [0.1, -0.9]])
        s = criteria.magnitude_score(p, np.array([1, 1, 0, 1])).values
        assert s[2] == -np.inf


class TestSnip:
    def test_variants_from_gradient(self, monkeypatch):
        p = _single_layer([[2.0], [1.0]])
        monkeypatch.setattr(nn, "backward", lambda *a, **k: np.array([0.1, -0.5]))
        x, y = np.zeros((1, 2)), np.zeros(1, dtype=int)
        np.testing.assert_allclose(criteria.snip_score(p, None, x, y).values, [0.1, 0.5])
        np.testing.assert_allclose(criteria.snip_score(p, None, x, y, "weight_times_grad").values, [0.2, 0.5])

    def test_matches_abs_backward(self, rng):
        p = nn.kaiming_init(nn.mlp_specs([8, 6, 3]), 1, np.float64)
        m = (rng.uniform(size=p.k) > 0.3).astype(np.uint8)
        x, y = rng.uniform(size=(10, 8)), rng.integers(0, 3, 10)
        s = criteria.snip_score(p, m, x, y).values
        g = nn.backward(p, m, x, y)
        assert np.all(s[m == 0] == -np.inf)
        np.testing.assert_array_equal(s[m == 1], np.abs(g[m == 1]))
        assert masks.topk_mask(s, 0.5)[m == 0].sum() == 0

    def test_empty_batch(self):
        p = _single_layer([[1.0], [1.0]])
        with pytest.raises(ConfigError):
            criteria.snip_score(p, None, np.zeros((0, 2)), np.zeros(0, dtype=int))

    def test_unknown_variant(self, rng):
        p = nn.kaiming_init(nn.mlp_specs([3, 2]), 0, np.float64)
        with pytest.raises(ConfigError):
            criteria.snip_score(p, None, np.ones((1, 3)), np.zeros(1, dtype=int), "nope")


class TestGrasp:
    def test_quadratic_surrogate(self):
        A = np.diag([2.0, 3.0])
        theta = np.array([1.0, 1.0])
        g = A @ theta
        hg = nn.fd_hvp(lambda t: A @ t, theta, g)
        np.testing.assert_allclose(g, [2, 3])
        np.testing.assert_allclose(hg, [4, 9], atol=1e-9)
        np.testing.assert_allclose(criteria.grasp_from_hg(theta, hg), [-4, -9], atol=1e-9)

    def test_zero_theta(self, rng):
        p = nn.ParamVector(np.zeros(nn.param_count(nn.mlp_specs([5, 4, 3]))), nn.mlp_specs([5, 4, 3]))
        s = criteria.grasp_score(p, None, rng.uniform(size=(4, 5)), rng.integers(0, 3, 4)).values
        assert np.all(s == 0)

    def test_matches_fd_hessian_784_20_10(self, rng):
        p = nn.kaiming_init(nn.mlp_specs([784, 20, 10]), 3, np.float64)
        x, y = rng.uniform(size=(8, 784)), rng.integers(0, 10, 8)
        g = nn.backward(p, None, x, y)
        # difference along the unit direction so the probe stays clear of ReLU kinks
        n = np.linalg.norm(g)
        oracle = -p.values * n * nn.hvp_fd(p, None, x, y, g / n, eps=1e-3)
        assert max_rel_err(criteria.grasp_score(p, None, x, y).values, oracle) < 1e-3

    def test_keep_high_flips(self, rng):
        p = nn.kaiming_init(nn.mlp_specs([5, 4, 3]), 0, np.float64)
        x, y = rng.uniform(size=(4, 5)), rng.integers(0, 3, 4)
        a = criteria.grasp_score(p, None, x, y).values
        b = criteria.grasp_score(p, None, x, y, keep_high=True).values
        np.testing.assert_array_equal(a, -b)


class TestPathStats:
    def test_dense_2_2_2(self):
        specs = nn.mlp_specs([2, 2, 2])
        in_p, out_p = criteria.path_stats(None, specs)
        # 8 input->output paths: 2 in, 2 hidden, 2 out
        np.testing.assert_array_equal(in_p[1], [2, 2])
        np.testing.assert_array_equal(out_p[1], [2, 2])
        # each output node is reached by 4 of the 8 paths
        np.testing.assert_array_equal(in_p[2], [4, 4])

    def test_pruned_layer_kills_downstream(self):
        specs = nn.mlp_specs([3, 4, 2])
        m = np.ones(nn.param_count(specs), dtype=np.uint8)
        nn.unpack(m, specs)[0][0][...] = 0
        in_p, _ = criteria.path_stats(m, specs)
        assert np.all(in_p[1] == 0) and np.all(in_p[2] == 0)

    def test_chain_1_1_1(self):
        in_p, out_p = criteria.path_stats(None, nn.mlp_specs([1, 1, 1]))
        assert all(np.all(v == 1) for v in in_p + out_p)

    def test_saturates_without_overflow(self):
        specs = nn.mlp_specs([1000] * 120 + [2])
        in_p, _ = criteria.path_stats(None, specs)
        assert np.all(np.isfinite(in_p[-1]))


class TestNpb:
    def test_alpha_one_is_node_term(self):
        p = nn.kaiming_init(nn.mlp_specs([3, 4, 2]), 0)
        m = np.ones(p.k, dtype=np.uint8)
        W, _ = nn.unpack(m, p.specs)[1]
        W[0] = 0  # hidden node 0 has no way out
        s = criteria.npb_lite_score(p, m, criteria.NpbConfig(1.0)).values
        W0, _ = nn.unpack(s, p.specs)[0]
        np.testing.assert_array_equal(W0[:, 0], 0.0)
        np.testing.assert_array_equal(W0[:, 1:], 1.0)

    def test_dense_2_2_2_uniform(self):
        p = nn.kaiming_init(nn.mlp_specs([2, 2, 2]), 0)
        s = criteria.npb_lite_score(p, None).values
        w = s[p.weight_positions()]
        assert np.all(w == w[0])

    def test_chain_vs_dangling_alpha_zero(self):
        p = nn.kaiming_init(nn.mlp_specs([1, 2, 1]), 0)
        m = np.ones(p.k, dtype=np.uint8)
        nn.unpack(m, p.specs)[1][0][1, 0] = 0  # hidden 1 -> out removed
        s = criteria.npb_lite_score(p, m, criteria.NpbConfig(0.0)).values
        W0, _ = nn.unpack(s, p.specs)[0]
        W1, _ = nn.unpack(s, p.specs)[1]
        assert W0[0, 0] == 1.0 and W1[0, 0] == 1.0  # chain
        assert W0[0, 1] == 0.0  # dangles into a dead node
        assert W1[1, 0] == -np.inf  # pruned

    def test_degenerate_warns(self, caplog):
        p = nn.kaiming_init(nn.mlp_specs([3, 2, 2]), 0)
        m = np.ones(p.k, dtype=np.uint8)
        nn.unpack(m, p.specs)[0][0][...] = 0
        s = criteria.npb_lite_score(p, m).values
        assert "degenerate" in caplog.text
        assert np.all(s[m == 1] == 0)

    def test_alpha_range(self):
        with pytest.raises(ConfigError):
            criteria.NpbConfig(1.5)
