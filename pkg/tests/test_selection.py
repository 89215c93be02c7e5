import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrregger.core import MRError, SummaryDataset
from mrregger.selection import (
    RaoBlackwellError,
    RbSelection,
    SelectionConfig,
    pvalue_to_lambda,
    rao_blackwell_gamma,
    rao_blackwell_variance,
    select_fixed,
    select_random,
    selection_noise,
    selection_probability,
)
from mrregger.numerics import normal_cdf, normal_sf


def _bisect_upper_quantile(p_two_sided):
    """Independent oracle: bisection on Phi at 50 digits."""
    mpmath.mp.dps = 50
    target = 1 - mpmath.mpf(p_two_sided) / 2
    lo, hi = mpmath.mpf(0), mpmath.mpf(40)
    for _ in range(200):
        mid = (lo + hi) / 2
        if mpmath.ncdf(mid) < target:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


class TestPvalueToLambda:
    def test_genome_wide(self):
        assert pvalue_to_lambda(5e-8) == pytest.approx(5.4513, abs=1e-3)

    def test_nominal(self):
        assert pvalue_to_lambda(0.05) == pytest.approx(1.9600, abs=1e-4)

    @pytest.mark.parametrize("p", [5e-5, 5e-8, 1e-12, 0.3])
    def test_matches_bisection_oracle(self, p):
        assert pvalue_to_lambda(p) == pytest.approx(_bisect_upper_quantile(p), rel=1e-13)

    def test_relaxed_threshold_value(self):
        assert pvalue_to_lambda(5e-5) == pytest.approx(4.0556, abs=1e-3)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 2.0])
    def test_out_of_range(self, p):
        with pytest.raises(ValueError):
            pvalue_to_lambda(p)


def test_config_validation():
    with pytest.raises(ValueError):
        SelectionConfig(-1.0)
    with pytest.raises(ValueError):
        SelectionConfig(1.0, eta=0.0)


class TestRaoBlackwell:
    def test_lambda_zero_identity(self):
        cfg = SelectionConfig(0.0, 0.5)
        g, ap, am = rao_blackwell_gamma(0.02, 0.01, cfg)
        assert g == 0.02 and ap == am
        assert rao_blackwell_variance(0.02, 0.01, cfg) == 0.01**2

    def test_symmetry_example(self):
        cfg = SelectionConfig(5.4513, 0.5)
        assert rao_blackwell_gamma(-0.03, 0.01, cfg)[0] == -rao_blackwell_gamma(0.03, 0.01, cfg)[0]
        assert rao_blackwell_variance(-0.03, 0.01, cfg) == pytest.approx(
            rao_blackwell_variance(0.03, 0.01, cfg), rel=1e-13)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(-0.1, 0.1), st.floats(1e-3, 0.05), st.floats(0, 6), st.floats(0.2, 1.0))
    def test_odd_even_symmetry(self, g, sx, lam, eta):
        cfg = SelectionConfig(lam, eta)
        try:
            gp = rao_blackwell_gamma(g, sx, cfg)[0]
            vp = rao_blackwell_variance(g, sx, cfg)
        except RaoBlackwellError:
            return
        gm = rao_blackwell_gamma(-g, sx, cfg)[0]
        vm = rao_blackwell_variance(-g, sx, cfg)
        assert gm == pytest.approx(-gp, rel=1e-9, abs=1e-12 * sx)
        assert vm == pytest.approx(vp, rel=1e-9)

    def test_underflow(self):
        with pytest.raises(RaoBlackwellError, match="underflow"):
            rao_blackwell_gamma(0.0, 0.01, SelectionConfig(40.0, 0.5))
        with pytest.raises(RaoBlackwellError, match="underflow"):
            rao_blackwell_variance(0.0, 0.01, SelectionConfig(40.0, 0.5))

    def test_tail_precision_of_selection_probability(self):
        # D at A+ = 12 must not collapse to 0 through 1 - Phi(A+)
        d = normal_sf(12.0) + normal_cdf(-13.0)
        assert d > 1e-33
        mpmath.mp.dps = 40
        exact = 1 - mpmath.ncdf(12) + mpmath.ncdf(-13)
        assert d == pytest.approx(float(exact), rel=1e-13)


@pytest.mark.slow
class TestRaoBlackwellMonteCarlo:
    """Conditional unbiasedness and variance calibration at gamma=0.03, sigma_x=0.01."""

    gamma, sx, eta, lam = 0.03, 0.01, 0.5, 5.4513

    @pytest.fixture(scope="class")
    @classmethod
    def draws(cls):
        rng = np.random.default_rng(11)
        n = 1_000_000
        g_hat = rng.normal(cls.gamma, cls.sx, n)
        z = rng.normal(0, cls.eta, n)
        keep = np.abs(g_hat / cls.sx + z) > cls.lam
        ds = SummaryDataset.from_arrays(g_hat[keep], cls.sx, 0.0, 1.0)
        from mrregger.selection import _rb_arrays
        g_rb, v_rb, _, _ = _rb_arrays(ds.gamma_hat, ds.sigma_x, cls.lam, cls.eta)
        return g_hat[keep], g_rb, v_rb

    def test_naive_estimate_is_biased(self, draws):
        g_sel, _, _ = draws
        assert g_sel.mean() > self.gamma + 10 * g_sel.std() / math.sqrt(g_sel.size)

    def test_conditional_unbiasedness(self, draws):
        _, g_rb, _ = draws
        assert abs(g_rb.mean() - self.gamma) < 3 * g_rb.std(ddof=1) / math.sqrt(g_rb.size)

    def test_variance_calibration(self, draws):
        _, g_rb, v_rb = draws
        assert v_rb.mean() == pytest.approx(g_rb.var(ddof=1), rel=0.05)


class TestSelectRandom:
    def _ds(self, rng, p=500):
        g = rng.normal(0, 0.03, p)
        return SummaryDataset.from_arrays(g, 0.005, rng.normal(0, 0.01, p), 0.005)

    def test_lambda_zero_selects_all(self, rng):
        ds = self._ds(rng)
        sel = select_random(ds, SelectionConfig(0.0, 0.5, 3))
        assert len(sel) == len(ds)
        np.testing.assert_array_equal(sel.gamma_rb, ds.gamma_hat)
        np.testing.assert_array_equal(sel.sigma_rb_sq, ds.sigma_x**2)

    def test_huge_lambda_selects_none(self, rng):
        sel = select_random(self._ds(rng), SelectionConfig(1e6, 0.5, 3))
        assert len(sel) == 0 and list(sel) == []

    def test_membership_and_positivity(self, rng):
        sel = select_random(self._ds(rng), SelectionConfig(3.0, 0.5, 9))
        assert len(sel) > 0
        for r in sel:
            assert abs(r.snp.gamma_hat / r.snp.sigma_x + r.z_noise) > 3.0
            assert r.sigma_rb_sq > 0

    def test_deterministic(self, rng):
        ds = self._ds(rng)
        cfg = SelectionConfig(3.0, 0.5, 42)
        a, b = select_random(ds, cfg), select_random(ds, cfg)
        assert a.gamma_rb.tobytes() == b.gamma_rb.tobytes()
        assert a.sigma_rb_sq.tobytes() == b.sigma_rb_sq.tobytes()
        assert list(a.data.snp_id) == list(b.data.snp_id)

    def test_noise_is_per_index(self):
        cfg = SelectionConfig(1.0, 0.5, 7)
        np.testing.assert_array_equal(selection_noise(10, cfg), selection_noise(1000, cfg)[:10])
        assert np.std(selection_noise(100000, cfg)) == pytest.approx(0.5, rel=0.01)

    def test_records_roundtrip(self, rng):
        sel = select_random(self._ds(rng), SelectionConfig(3.0, 0.5, 1))
        back = RbSelection.from_records(list(sel))
        np.testing.assert_array_equal(back.gamma_rb, sel.gamma_rb)
        assert sel[0:2] == list(sel)[0:2]

    def test_noise_selected_null_snp_is_flagged(self):
        # t = 0 survives lambda = 1.5 only through |Z| > 1.5; the unbiased
        # variance bracket is then negative and the SNP is reported
        ds = SummaryDataset.from_arrays([0.0] * 200, 0.01, 0.0, 1.0)
        with pytest.raises(RaoBlackwellError, match="degenerate RB variance") as info:
            select_random(ds, SelectionConfig(1.5, 0.5, 5))
        assert info.value.snp_ids and all(i.startswith("snp") for i in info.value.snp_ids)

    def test_requires_positive_sigma_x(self):
        ds = SummaryDataset.from_arrays([0.1, 0.2], [0.0, 0.1], [0.0, 0.0], 1.0)
        with pytest.raises(MRError):
            select_random(ds, SelectionConfig(1.0))

    @pytest.mark.slow
    def test_selection_frequency_matches_analytic(self):
        # gamma/sigma_x spread over a grid; 1e5 SNPs
        p = 100_000
        sx = 1 / math.sqrt(200_000)
        gamma = np.repeat([0.0, 0.005, 0.01, -0.012], p // 4)
        rng = np.random.default_rng(3)
        ds = SummaryDataset.from_arrays(gamma + rng.normal(0, sx, p), sx, 0.0, 1.0)
        lam = pvalue_to_lambda(5e-5)
        sel = select_random(ds, SelectionConfig(lam, 0.5, 2))
        for level in np.unique(gamma):
            block = gamma == level
            n_sel = np.isin(np.flatnonzero(block), sel.index).sum()
            freq = n_sel / block.sum()
            prob = float(selection_probability(level, sx, lam, 0.5))
            mc_se = math.sqrt(prob * (1 - prob) / block.sum())
            assert abs(freq - prob) < 4 * mc_se + 1e-6


def test_select_fixed():
    ds = SummaryDataset.from_arrays([0.1, 0.01, -0.2, 0.3], [0.01, 0.01, 0.01, 0.0], 0.0, 1.0)
    kept = select_fixed(ds, 5.45)
    assert list(kept.snp_id) == ["snp0", "snp2", "snp3"]
