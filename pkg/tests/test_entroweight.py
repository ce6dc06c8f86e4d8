import math

import numpy as np
import oracles
import pytest
from conftest import PROPERTY_CASES
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xmfuse.core import IGNORE, InvalidInput, Provenance, PseudoLabelSet, ShapeError, softmax
from xmfuse.entroweight import (
    ClassStats,
    HypothesisConfig,
    entropy_weights,
    ew_fuse,
    ew_labels,
    fit_class_stats,
    likelihood_ratio_recover,
    log_likelihood,
)


def pair_strategy(max_rows=10, max_classes=6):
    def build(shape):
        elems = st.floats(-20, 20, allow_nan=False)
        return st.tuples(arrays(np.float64, shape, elements=elems),
                         arrays(np.float64, shape, elements=elems))
    shape = st.tuples(st.integers(1, max_rows), st.integers(2, max_classes))
    return shape.flatmap(build)


def stats_from(means, stds):
    means = np.asarray(means, dtype=np.float64)
    return ClassStats(means, np.asarray(stds, dtype=np.float64), np.ones(means.shape[0], bool))


class TestEntropyWeights:
    def test_identical_rows(self):
        w2, w3 = entropy_weights([[1.0, 2.0, 0.5]], [[1.0, 2.0, 0.5]])
        np.testing.assert_allclose(w2, [0.5])
        np.testing.assert_allclose(w3, [0.5])

    def test_confident_against_uniform(self):
        z2 = np.zeros((1, 10))
        z2[0, 3] = 200.0
        w2, _ = entropy_weights(z2, np.zeros((1, 10)))
        assert w2[0] == pytest.approx(10 / 11, abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            entropy_weights(np.zeros((2, 3)), np.zeros((2, 4)))

    @settings(max_examples=PROPERTY_CASES, deadline=None)
    @given(pair_strategy())
    def test_weights_sum_to_one(self, pair):
        w2, w3 = entropy_weights(*pair)
        np.testing.assert_allclose(w2 + w3, 1.0, atol=1e-15)
        assert np.all((w2 > 0) & (w2 < 1))


class TestEWFuse:
    def test_identical_inputs(self, rng):
        z = rng.normal(size=(6, 4))
        fused, _ = ew_fuse(z, z)
        np.testing.assert_allclose(fused, softmax(z), atol=1e-15)

    def test_opposite_one_hots(self):
        z2 = np.array([[50.0, -50.0]])
        z3 = np.array([[-50.0, 50.0]])
        fused, _ = ew_fuse(z2, z3)
        np.testing.assert_allclose(fused, [[0.5, 0.5]], atol=1e-12)

    def test_labels_tagged(self, rng):
        _, labels = ew_fuse(rng.normal(size=(30, 3)), rng.normal(size=(30, 3)))
        assert set(labels.provenance.tolist()) <= {Provenance.EW_FUSED, Provenance.IGNORED}

    def test_matches_stepwise_oracle(self, rng):
        z2, z3 = rng.normal(size=(50, 3)) * 2, rng.normal(size=(50, 3)) * 2
        fused, labels = ew_fuse(z2, z3)
        for i in range(50):
            p2, p3 = oracles.softmax_row(list(z2[i])), oracles.softmax_row(list(z3[i]))
            e2 = math.exp(-oracles.entropy_row(p2))
            e3 = math.exp(-oracles.entropy_row(p3))
            w2 = e2 / (e2 + e3)
            np.testing.assert_allclose(fused[i], [w2 * a + (1 - w2) * b for a, b in zip(p2, p3)],
                                       atol=1e-10)
        assert labels.labels.tolist() == oracles.median_filter(fused.tolist())

    @settings(max_examples=PROPERTY_CASES, deadline=None)
    @given(pair_strategy())
    def test_rows_stochastic(self, pair):
        fused, labels = ew_fuse(*pair)
        np.testing.assert_allclose(fused.sum(axis=1), 1.0, atol=1e-9)
        assert len(labels) == fused.shape[0]


class TestClassStats:
    def test_two_samples(self):
        labels = PseudoLabelSet.from_labels([0, 0], Provenance.EW_FUSED)
        s = fit_class_stats([[1.0, 1.0], [3.0, 3.0]], labels, 2)
        np.testing.assert_allclose(s.mean[0], [2.0, 2.0])
        np.testing.assert_allclose(s.std[0], [1.0, 1.0])
        assert s.testable.tolist() == [True, False]

    def test_single_sample_untestable(self):
        labels = PseudoLabelSet.from_labels([0, 1, 1], Provenance.EW_FUSED)
        s = fit_class_stats([[0.0], [1.0], [2.0]], labels, 3)
        assert s.testable.tolist() == [False, True, False]

    def test_ignored_samples_skipped(self):
        labels = PseudoLabelSet.from_labels([0, IGNORE, 0], Provenance.EW_FUSED)
        s = fit_class_stats([[0.0], [100.0], [2.0]], labels, 1)
        np.testing.assert_allclose(s.mean[0], [1.0])

    def test_sigma_floor(self):
        labels = PseudoLabelSet.from_labels([0, 0], Provenance.EW_FUSED)
        s = fit_class_stats([[5.0], [5.0]], labels, 1)
        assert s.std[0, 0] == 1e-6

    def test_recovers_generator_means(self):
        rng = np.random.default_rng(3)
        mu = rng.normal(size=8) * 4
        x = mu + rng.normal(size=(500, 8))
        s = fit_class_stats(x, PseudoLabelSet.from_labels(np.zeros(500, int), Provenance.EW_FUSED), 1)
        assert np.all(np.abs(s.mean[0] - mu) < 3 / math.sqrt(500))

    def test_shape_checked(self):
        with pytest.raises(ShapeError):
            fit_class_stats(np.zeros((3, 2)), PseudoLabelSet.from_labels([0, 0], Provenance.EW_FUSED), 1)


class TestLogLikelihood:
    def test_at_mean(self):
        s = stats_from([[1.0, -2.0]], [[1.0, 1.0]])
        assert log_likelihood([1.0, -2.0], s, 0) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)

    def test_one_sigma_shift(self):
        s = stats_from([[0.0, 0.0, 0.0]], [[2.0, 3.0, 0.5]])
        base = log_likelihood([0.0, 0.0, 0.0], s, 0)
        assert base - log_likelihood([0.0, 3.0, 0.0], s, 0) == pytest.approx(0.5, abs=1e-12)

    def test_untestable_is_no_decision(self):
        s = ClassStats(np.zeros((2, 1)), np.ones((2, 1)), np.array([True, False]))
        assert log_likelihood([0.0], s, 1) is None

    def test_matches_linear_density(self, rng):
        for _ in range(50):
            d = int(rng.integers(1, 5))
            mu, sd = rng.normal(size=d), rng.uniform(0.3, 2.0, size=d)
            x = mu + rng.normal(size=d)
            s = stats_from([mu], [sd])
            dens = oracles.gaussian_density(list(x), list(mu), list(sd))
            assert math.exp(log_likelihood(x, s, 0)) == pytest.approx(dens, rel=1e-8)


class TestRecovery:
    def _setup(self):
        # class 0 near -3 and class 1 near +3 in both spaces
        stats = stats_from([[-3.0, -3.0], [3.0, 3.0]], [[1.0, 1.0], [1.0, 1.0]])
        return stats, stats

    def test_agreeing_argmax_stays_ignored(self):
        s2, s3 = self._setup()
        rej = PseudoLabelSet.from_labels([IGNORE], Provenance.EW_FUSED)
        out = likelihood_ratio_recover([[3.0, 3.0]], [[3.0, 3.0]], s2, s3,
                                       [[0.0, 1.0]], [[0.0, 1.0]], rej)
        assert out.labels.tolist() == [IGNORE]

    def test_recovers_3d_class(self):
        s2, s3 = self._setup()
        rej = PseudoLabelSet.from_labels([IGNORE], Provenance.EW_FUSED)
        # 2D predicts 0 but its feature sits at class 1; 3D predicts 1 and sits at class 1
        out = likelihood_ratio_recover([[3.0, 3.0]], [[3.0, 3.0]], s2, s3,
                                       [[1.0, 0.0]], [[0.0, 1.0]], rej)
        assert out.labels.tolist() == [1]
        assert out.provenance.tolist() == [Provenance.EW_RECOVERED_3D]

    def test_recovers_2d_class(self):
        s2, s3 = self._setup()
        rej = PseudoLabelSet.from_labels([IGNORE], Provenance.EW_FUSED)
        out = likelihood_ratio_recover([[-3.0, -3.0]], [[-3.0, -3.0]], s2, s3,
                                       [[1.0, 0.0]], [[0.0, 1.0]], rej)
        assert out.labels.tolist() == [0]
        assert out.provenance.tolist() == [Provenance.EW_RECOVERED_2D]

    def test_conflicting_evidence_stays_ignored(self):
        s2, s3 = self._setup()
        rej = PseudoLabelSet.from_labels([IGNORE], Provenance.EW_FUSED)
        # each feature supports its own modality's argmax: both ratios exceed 1
        out = likelihood_ratio_recover([[-3.0, -3.0]], [[3.0, 3.0]], s2, s3,
                                       [[1.0, 0.0]], [[0.0, 1.0]], rej)
        assert out.labels.tolist() == [IGNORE]

    def test_untestable_class_stays_ignored(self):
        s2, s3 = self._setup()
        s3 = ClassStats(s3.mean, s3.std, np.array([True, False]))
        rej = PseudoLabelSet.from_labels([IGNORE], Provenance.EW_FUSED)
        out = likelihood_ratio_recover([[3.0, 3.0]], [[3.0, 3.0]], s2, s3,
                                       [[1.0, 0.0]], [[0.0, 1.0]], rej)
        assert out.labels.tolist() == [IGNORE]

    def test_accepted_labels_untouched(self):
        s2, s3 = self._setup()
        rej = PseudoLabelSet.from_labels([0], Provenance.EW_FUSED)
        out = likelihood_ratio_recover([[3.0, 3.0]], [[3.0, 3.0]], s2, s3,
                                       [[1.0, 0.0]], [[0.0, 1.0]], rej)
        assert out.labels.tolist() == [0]
        assert out.provenance.tolist() == [Provenance.EW_FUSED]

    def test_tau_validated(self):
        with pytest.raises(InvalidInput):
            HypothesisConfig(0.0)

    def test_full_path_matches_double_loop_oracle(self):
        rng = np.random.default_rng(11)
        n, k = 200, 3
        y = rng.integers(0, k, n)
        centres = rng.normal(size=(k, 4)) * 3
        f2 = centres[y] + rng.normal(size=(n, 4))
        f3 = centres[y] + rng.normal(size=(n, 4))
        z2 = rng.normal(size=(n, k)) * 2
        z3 = rng.normal(size=(n, k)) * 2
        out = ew_labels(z2, z3, f2, f3, HypothesisConfig(1.0))
        assert out.labels.tolist() == oracles.ew_path(z2.tolist(), z3.tolist(), f2.tolist(),
                                                      f3.tolist(), 1.0)

    @settings(max_examples=PROPERTY_CASES, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 1.0, 2.0]))
    def test_recovery_accounting(self, seed, tau):
        rng = np.random.default_rng(seed)
        n, k, d = int(rng.integers(4, 40)), int(rng.integers(2, 5)), int(rng.integers(1, 4))
        z2, z3 = rng.normal(size=(n, k)) * 2, rng.normal(size=(n, k)) * 2
        f2, f3 = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        _, before = ew_fuse(z2, z3)
        s2 = fit_class_stats(f2, before, k)
        s3 = fit_class_stats(f3, before, k)
        after = likelihood_ratio_recover(f2, f3, s2, s3, z2, z3, before, HypothesisConfig(tau))
        kept = before.accepted
        np.testing.assert_array_equal(after.labels[kept], before.labels[kept])
        recovered = after.count(Provenance.EW_RECOVERED_2D) + after.count(Provenance.EW_RECOVERED_3D)
        assert recovered + int((~after.accepted).sum()) == int((~kept).sum())

    @settings(max_examples=PROPERTY_CASES, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
    def test_scale_invariance(self, seed, c):
        rng = np.random.default_rng(seed)
        n, k, d = int(rng.integers(4, 30)), int(rng.integers(2, 4)), int(rng.integers(1, 4))
        z2, z3 = rng.normal(size=(n, k)) * 2, rng.normal(size=(n, k)) * 2
        f2, f3 = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        _, rej = ew_fuse(z2, z3)
        s2, s3 = fit_class_stats(f2, rej, k), fit_class_stats(f3, rej, k)
        if np.any(s2.std[s2.testable] <= 1e-5) or np.any(s3.std[s3.testable] <= 1e-5):
            return  # the sigma floor does not scale with the data
        scaled = [ClassStats(s.mean * c, s.std * c, s.testable) for s in (s2, s3)]
        a = likelihood_ratio_recover(f2, f3, s2, s3, z2, z3, rej)
        b = likelihood_ratio_recover(f2 * c, f3 * c, *scaled, z2, z3, rej)
        # decisions match except where a log-ratio sits within rounding of zero
        mismatch = np.flatnonzero(a.labels != b.labels)
        for i in mismatch:
            k2, k3 = np.argmax(z2[i]), np.argmax(z3[i])
            r2 = log_likelihood(f2[i], s2, k2) - log_likelihood(f2[i], s2, k3)
            r3 = log_likelihood(f3[i], s3, k3) - log_likelihood(f3[i], s3, k2)
            assert min(abs(r2), abs(r3)) < 1e-9
