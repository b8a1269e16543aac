"""Noise model: canonical weights, Hilbert-Schmidt norm, increment laws,
pushforward onto the moving manifold."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evospde import noise
from evospde.geometry import (
    ConstantProfile,
    McfProfile,
    PullbackMap,
    ReferenceManifold,
    build_metric_family,
    norm_equivalence_constants,
)
from evospde.noise import (
    NoiseModel,
    canonical_embedding,
    hs_norm,
    increments_csv,
    pushforward_increment,
    replica_stream,
    sample_increment,
)


class TestCanonicalEmbedding:
    def test_single_mode(self):
        assert np.array_equal(canonical_embedding(1).sigma, [1.0])

    def test_partial_sum_exact_rational(self):
        # oracle: exact rational arithmetic for 1 + 1/4 + 1/9
        expected = Fraction(1) + Fraction(1, 4) + Fraction(1, 9)
        assert expected == Fraction(49, 36)
        nm = canonical_embedding(3)
        assert nm.hs_norm_sq == pytest.approx(float(expected), abs=1e-14)
        assert hs_norm(nm) == pytest.approx(7.0 / 6.0, abs=1e-14)

    def test_tail_bound_at_large_truncation(self):
        # oracle: integral tail bound sum_{j>J} 1/j^2 < 1/J
        nm = canonical_embedding(1000)
        limit = math.pi**2 / 6.0
        assert limit - 1.0 / 1000.0 < nm.hs_norm_sq < limit

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            canonical_embedding(0)

    @given(st.integers(min_value=1, max_value=400))
    @settings(max_examples=40, deadline=None)
    def test_hs_norm_monotone_bounded(self, J):
        a = hs_norm(canonical_embedding(J))
        b = hs_norm(canonical_embedding(J + 1))
        assert a < b < math.pi / math.sqrt(6.0)


class TestHsNorm:
    def test_unit(self):
        assert hs_norm(NoiseModel(sigma=np.array([1.0]))) == 1.0

    def test_pythagorean(self):
        assert hs_norm(NoiseModel(sigma=np.array([3.0, 4.0]))) == pytest.approx(5.0, abs=1e-15)

    def test_stored_scalar_consistent(self):
        nm = canonical_embedding(17)
        assert nm.hs_norm_sq == pytest.approx(float(nm.sigma @ nm.sigma), abs=1e-14)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            NoiseModel(sigma=np.array([1.0, 0.0]))


class TestSampleIncrement:
    def test_deterministic_from_stream_state(self):
        nm = canonical_embedding(4)
        a = sample_increment(nm, 0.01, replica_stream(7, 0))
        b = sample_increment(nm, 0.01, replica_stream(7, 0))
        assert np.array_equal(a.xi, b.xi)

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            sample_increment(canonical_embedding(2), 0.0, replica_stream(0, 0))

    def test_variance_and_independence(self):
        # oracle: xi_j ~ N(0, dt sigma_j^2) independent; 3-standard-error bands
        nm = canonical_embedding(2)
        dt, n = 0.01, 100_000
        rng = replica_stream(2024, 0)
        draws = rng.normal(size=(n, 2)) * (np.sqrt(dt) * nm.sigma)
        var = draws.var(axis=0, ddof=1)
        se1 = dt * 1.0 * math.sqrt(2.0 / (n - 1))
        se2 = dt * 0.25 * math.sqrt(2.0 / (n - 1))
        assert abs(var[0] - dt) <= 3 * se1
        assert abs(var[1] - dt * 0.25) <= 3 * se2
        cov = np.cov(draws.T)[0, 1]
        se_cov = math.sqrt(dt * dt * 0.25 / n)
        assert abs(cov) <= 3 * se_cov

    def test_path_quadratic_variation(self):
        # summed squared increments track t * sum sigma_j^2
        nm = canonical_embedding(8)
        dt, n = 1e-4, 10_000
        rng = replica_stream(11, 3)
        total = 0.0
        for _ in range(n):
            inc = sample_increment(nm, dt, rng)
            total += float(inc.xi @ inc.xi)
        expected = n * dt * nm.hs_norm_sq
        assert abs(total - expected) / expected < 0.05

    def test_replica_streams_independent_of_order(self):
        nm = canonical_embedding(3)
        a_first = sample_increment(nm, 0.1, replica_stream(5, 0)).xi
        b_first = sample_increment(nm, 0.1, replica_stream(5, 1)).xi
        b_again = sample_increment(nm, 0.1, replica_stream(5, 1)).xi
        assert np.array_equal(b_first, b_again)
        assert not np.array_equal(a_first, b_first)


class TestPushforward:
    def setup_method(self):
        m = ReferenceManifold("circle", ambient_n=2, mode_count=8)
        self.mf = build_metric_family(m, McfProfile(2), 0.2)
        self.pm = PullbackMap(self.mf)
        self.static_pm = PullbackMap(build_metric_family(m, ConstantProfile(), 1.0))
        self.nm = canonical_embedding(17)

    def test_identity_at_zero(self):
        inc = sample_increment(self.nm, 0.01, replica_stream(0, 0))
        out = pushforward_increment(self.pm, 0.0, inc)
        assert np.array_equal(out.xi, inc.xi)

    def test_norm_scaling_at_time(self):
        inc = sample_increment(self.nm, 0.01, replica_stream(0, 1))
        out = pushforward_increment(self.pm, 0.2, inc)
        h0 = float(inc.xi @ inc.xi)
        hgt = self.pm.h_t_norm_sq(out.xi, 0.2)
        assert hgt == pytest.approx(math.sqrt(1.0 - 0.8) * h0, rel=1e-12)

    def test_static_identity(self):
        inc = sample_increment(self.nm, 0.01, replica_stream(0, 2))
        for t in (0.0, 0.4, 1.0):
            out = pushforward_increment(self.static_pm, t, inc)
            assert np.array_equal(out.xi, inc.xi)

    def test_time_range_checked(self):
        inc = sample_increment(self.nm, 0.01, replica_stream(0, 3))
        with pytest.raises(ValueError):
            pushforward_increment(self.pm, 0.5, inc)

    def test_l2_pushforward_bound(self):
        # transported states obey ||G_t v||^2 <= (b1 b2 / a2) ||v||^2
        a2, b2 = norm_equivalence_constants(self.mf)
        bound = self.mf.b1 * b2 / a2
        rng = np.random.default_rng(12)
        for _ in range(100):
            v = rng.normal(size=17)
            t = rng.uniform(0.0, 0.2)
            moved = self.pm.h_t_norm_sq(self.pm.apply(v, t), t)
            assert moved <= bound * float(v @ v) * (1 + 1e-9)


def test_increments_csv(tmp_path):
    nm = canonical_embedding(2)
    rng = replica_stream(1, 0)
    incs = [sample_increment(nm, 0.1, rng) for _ in range(3)]
    path = tmp_path / "increments.csv"
    increments_csv(incs, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,j,xi"
    assert len(lines) == 1 + 3 * 2
    step, j, xi = lines[1].split(",")
    assert (step, j) == ("0", "1")
    assert float(xi) == incs[0].xi[0]
