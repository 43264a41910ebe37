import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pailab import mask as masks, nn
from pailab.errors import ConfigError, MonotonicityError


class TestTopk:
    def test_basic(self):
        assert masks.topk_mask([4, 3, 2, 1], 0.5).tolist() == [1, 1, 0, 0]

    def test_density_one(self):
        assert masks.topk_mask(np.arange(7.0), 1.0).tolist() == [1] * 7

    def test_index_tiebreak(self):
        assert masks.topk_mask([5, 5, 5, 1], 0.5).tolist() == [1, 1, 0, 0]

    def test_secondary_tiebreak_key(self):
        assert masks.topk_mask([5, 5, 5, 1], 0.5, tiebreak=[0, 1, 2, 0]).tolist() == [0, 1, 1, 0]

    @pytest.mark.parametrize("d", [0.0, -0.1, 1.5])
    def test_density_out_of_range(self, d):
        with pytest.raises(ConfigError):
            masks.topk_mask([1.0, 2.0], d)

    def test_nan_rejected(self):
        with pytest.raises(ConfigError):
            masks.topk_mask([1.0, np.nan], 0.5)

    def test_ineligible_untouched(self):
        m = masks.topk_mask([9, 1, 8, 7], 0.5, eligible=[False, True, True, True])
        # 3 eligible -> round(1.5) = 2 kept, position 0 stays on
        assert m.tolist() == [1, 0, 1, 1]

    def test_excluded_sentinel_never_kept(self):
        m = masks.topk_mask([-np.inf, 1.0, -np.inf, 0.5], 0.5)
        assert m.tolist() == [0, 1, 0, 1]

    def test_per_layer_keeps_one(self):
        p = nn.kaiming_init(nn.mlp_specs([20, 10, 2]), 0)
        s = np.abs(p.values)
        m = masks.topk_mask(s, 0.01, p.weight_positions(), scope="per-layer", layer_index=p.layer_index())
        kept = [r.kept for r in masks.per_layer_report(m, p)]
        assert kept == [2, 1]

    @settings(max_examples=200, deadline=None)
    @given(k=st.integers(1, 300), d=st.floats(0.001, 1.0), seed=st.integers(0, 2**32 - 1))
    def test_kept_count_exact(self, k, d, seed):
        s = np.random.default_rng(seed).normal(size=k)
        assert int(masks.topk_mask(s, d).sum()) == int(round(d * k))

    @settings(max_examples=100, deadline=None)
    @given(k=st.integers(2, 100), d=st.floats(0.01, 1.0), seed=st.integers(0, 2**32 - 1),
           a=st.floats(0.01, 100), b=st.floats(-100, 100))
    def test_affine_invariance(self, k, d, seed, a, b):
        s = np.random.default_rng(seed).permutation(k).astype(np.float64)
        assert np.array_equal(masks.topk_mask(s, d), masks.topk_mask(a * s + b, d))

    @settings(max_examples=100, deadline=None)
    @given(k=st.integers(2, 100), d=st.floats(0.01, 1.0), seed=st.integers(0, 2**32 - 1))
    def test_permutation_equivariance(self, k, d, seed):
        r = np.random.default_rng(seed)
        s = r.permutation(k).astype(np.float64)  # distinct scores, no ties
        perm = r.permutation(k)
        assert np.array_equal(masks.topk_mask(s[perm], d), masks.topk_mask(s, d)[perm])


class TestRefine:
    def test_all_ones_is_topk(self, rng):
        s = rng.normal(size=50)
        assert np.array_equal(masks.refine_mask(np.ones(50), s, 0.3), masks.topk_mask(s, 0.3))

    def test_pruned_stays_pruned(self):
        assert masks.refine_mask([1, 0, 1, 1], [9, 99, 1, 2], 0.5).tolist() == [1, 0, 0, 1]

    def test_same_density_unchanged(self, rng):
        cur = masks.topk_mask(rng.normal(size=40), 0.25)
        assert np.array_equal(masks.refine_mask(cur, rng.normal(size=40), 0.25), cur)

    def test_growing_refused(self):
        with pytest.raises(MonotonicityError):
            masks.refine_mask([1, 0, 0, 0], [1, 2, 3, 4], 0.5)

    @settings(max_examples=1000, deadline=None)
    @given(k=st.integers(1, 200), seed=st.integers(0, 2**32 - 1), steps=st.integers(1, 6))
    def test_nesting_over_decreasing_chain(self, k, seed, steps):
        r = np.random.default_rng(seed)
        chain = np.sort(r.uniform(0.001, 1.0, size=steps))[::-1]
        m = np.ones(k, dtype=np.uint8)
        for d in chain:
            new = masks.refine_mask(m, r.normal(size=k), d)
            assert np.all(new <= m)
            assert int(new.sum()) == int(round(d * k))
            m = new


class TestDensityReport:
    def test_all_ones(self):
        assert masks.density(np.ones(100)) == 1.0

    def test_quarter(self):
        assert masks.density([1, 0, 0, 0]) == 0.25

    def test_lenet_global_001_reports_three_layers(self, caplog):
        p = nn.kaiming_init(nn.mlp_specs([784, 300, 100, 10]), 0)
        elig = p.weight_positions()
        m = masks.topk_mask(np.abs(p.values), 0.01, elig)
        with caplog.at_level(logging.WARNING):
            rows = masks.per_layer_report(m, p)
        assert len(rows) == 3
        assert sum(r.kept for r in rows) == round(0.01 * elig.sum())
        assert [r.total for r in rows] == [235200, 30000, 1000]
        assert ("fully pruned" in caplog.text) == any(r.collapsed for r in rows)

    def test_collapse_warns(self, caplog):
        p = nn.kaiming_init(nn.mlp_specs([4, 3, 2]), 0)
        m = np.ones(p.k, dtype=np.uint8)
        W, _ = nn.unpack(m, p.specs)[1]
        W[...] = 0
        with caplog.at_level(logging.WARNING):
            rows = masks.per_layer_report(m, p)
        assert rows[1].collapsed
        assert "layer 1 fully pruned" in caplog.text


def test_prune_mask_rejects_non_binary():
    with pytest.raises(ConfigError):
        masks.PruneMask(np.array([0, 2, 1]))
