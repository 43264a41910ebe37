import logging

import numpy as np
import pytest

from pailab import mask as masks, nn, scorer
from pailab.errors import ConfigError, InterfaceError
from pailab.irp import AutoSDataset


def _dataset(labels, theta, grad=None, columns=("theta0", "grad0")):
    grad = np.zeros_like(theta) if grad is None else grad
    feats = np.column_stack([theta, grad]) if len(columns) == 2 else theta[:, None]
    return AutoSDataset(feats, np.asarray(labels, dtype=np.float64), columns, {"sources": []})


@pytest.fixture(scope="module")
def records():
    r = np.random.default_rng(0)
    return r.normal(0, 0.05, 10_000), r.normal(0, 1e-3, 10_000)


class TestFeatures:
    def test_arity(self, records):
        t, g = records
        assert scorer.build_features(t, None, "param_only")[0].shape == (t.size, 1)
        X, _ = scorer.build_features(t, g, "param_and_grad")
        assert X.shape == (t.size, 2)
        # (θ, g) order
        assert np.corrcoef(X[:, 0], t)[0, 1] > 0.999 and np.corrcoef(X[:, 1], g)[0, 1] > 0.999

    def test_z_scored(self, records):
        X, stats = scorer.build_features(*records, "param_and_grad")
        np.testing.assert_allclose(X.mean(axis=0), 0, atol=1e-6)
        np.testing.assert_allclose(X.std(axis=0), 1, atol=1e-6)
        again, _ = scorer.build_features(*records, "param_and_grad", stats)
        assert np.array_equal(X, again)

    def test_zero_variance_floor(self, caplog):
        with caplog.at_level(logging.WARNING):
            X, stats = scorer.build_features(np.full(5, 0.3), None, "param_only")
        assert stats.std[0] == scorer.STD_FLOOR and np.all(np.isfinite(X))
        assert "zero-variance" in caplog.text

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            scorer.feature_columns("both")


# 10 epochs of 10 minibatches is only 100 Adam steps; the fit checks get more
LONG = scorer.ScorerHyper(epochs=50)


class TestTraining:
    def test_constant_labels(self, records):
        t, g = records
        model = scorer.train_scorer(_dataset(np.full(t.size, 0.35), t, g), hyper=LONG)
        assert model.header["train_mse"][-1] < 1e-4

    def test_clipped_affine_of_abs_theta(self, records):
        t, _ = records
        y = np.clip(20 * np.abs(t) - 0.2, 0, 1)
        model = scorer.train_scorer(_dataset(y, t), "param_only", LONG)
        assert model.header["train_mse"][-1] < 0.01

    def test_same_seed_bit_identical(self, records):
        t, g = records
        ds = _dataset(np.abs(t) > 0.05, t, g)
        hyper = scorer.ScorerHyper(epochs=2, seed=3)
        a = scorer.train_scorer(ds, hyper=hyper)
        b = scorer.train_scorer(ds, hyper=hyper)
        assert a.params.values.tobytes() == b.params.values.tobytes()

    def test_defaults_in_header(self, records):
        t, g = records
        h = scorer.train_scorer(_dataset(np.zeros(t.size), t, g), hyper=scorer.ScorerHyper(epochs=1)).header
        assert (h["learning_rate"], h["batch_size"], h["backbone"]) == (0.01, 1024, "mlp-2-64-64-1")

    def test_missing_column(self, records):
        t, _ = records
        with pytest.raises(InterfaceError):
            scorer.train_scorer(_dataset(np.zeros(t.size), t, columns=("theta0",)), "grad_only")


class TestScoring:
    @pytest.fixture
    def model(self, records):
        t, g = records
        return scorer.train_scorer(_dataset(np.abs(g) / np.abs(g).max(), t, g),
                                   hyper=scorer.ScorerHyper(epochs=2))

    def test_needs_gradient(self, model):
        with pytest.raises(InterfaceError):
            scorer.score(model, np.zeros(4))

    def test_repeatable_and_sentinel(self, model, rng):
        t, g = rng.normal(size=20), rng.normal(size=20)
        elig = np.arange(20) < 15
        a = scorer.score(model, t, g, elig).values
        assert np.array_equal(a, scorer.score(model, t, g, elig).values)
        assert np.all(a[15:] == -np.inf) and np.all(np.isfinite(a[:15]))

    def test_prune_at_init_identities(self, model, blobs, small_specs):
        m1, theta0 = scorer.prune_at_init(small_specs, blobs, model, 1.0, seed=2, score_batch_size=40)
        assert np.all(m1 == 1)
        m, theta0 = scorer.prune_at_init(small_specs, blobs, model, 0.3, seed=2, score_batch_size=40)
        elig = theta0.weight_positions()
        assert abs(int(m[elig].sum()) - 0.3 * elig.sum()) <= 1
        # decomposes into score() followed by topk_mask
        _, _, g0 = scorer.init_and_grad(small_specs, blobs, 2, 40)
        expect = masks.topk_mask(scorer.score(model, theta0.values, g0, elig).values, 0.3, elig)
        assert np.array_equal(m, expect)
        again, _ = scorer.prune_at_init(small_specs, blobs, model, 0.3, seed=2, score_batch_size=40)
        assert np.array_equal(m, again)
