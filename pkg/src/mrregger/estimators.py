"""Point estimators, variance estimators and diagnostics for the IVW and
Egger families.

All estimators work on four columns: an exposure effect ``g`` with its
measurement variance ``v``, the outcome effect ``G`` and the regression weight
``w = sigma_y**-2``. Without selection ``(g, v) = (gamma_hat, sigma_x**2)``;
after rerandomized selection they are the Rao-Blackwell pair
``(gamma_rb, sigma_rb_sq)`` restricted to the selected set.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .core import MRError, StrengthDiagnostics, SummaryDataset, strength_diagnostics
from .numerics import fsum, normal_sf
from .selection import RbRecord, RbSelection

ESS_GUIDANCE = 20.0
SMALL_SAMPLE_WARNING_P = 10


class Method(str, Enum):
    IVW = "IVW"
    DIVW = "dIVW"
    RIVW = "RIVW"
    EGGER = "Egger"
    DEGGER = "dEgger"
    REGGER = "REgger"

    @classmethod
    def parse(cls, name: Union[str, "Method"]) -> "Method":
        if isinstance(name, Method):
            return name
        for m in cls:
            if m.value.lower() == str(name).strip().lower():
                return m
        raise ValueError(f"unknown method {name!r}; choose from {[m.value for m in cls]}")

    @property
    def uses_random_selection(self) -> bool:
        return self in (Method.RIVW, Method.REGGER)

    @property
    def has_intercept(self) -> bool:
        return self in (Method.EGGER, Method.DEGGER, Method.REGGER)


@dataclass(frozen=True)
class Diagnostics:
    strength: Optional[StrengthDiagnostics] = None
    attenuation_ratio: Optional[float] = None
    i2_gx: Optional[float] = None
    kappa_lambda: Optional[float] = None
    psi_lambda: Optional[float] = None
    ess_rb: Optional[float] = None


@dataclass(frozen=True)
class EstimateReport:
    method: Method
    beta_hat: float
    se_beta: float
    n_snps_used: int
    mu_alpha_hat: Optional[float] = None
    se_mu_alpha: Optional[float] = None
    pleiotropy_z: Optional[float] = None
    pleiotropy_p: Optional[float] = None
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    warnings: tuple[str, ...] = ()

    @property
    def ci_95(self) -> tuple[float, float]:
        return (self.beta_hat - 1.96 * self.se_beta, self.beta_hat + 1.96 * self.se_beta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["method"] = self.method.value
        return d

    def to_text(self) -> str:
        """Line-oriented ``key=value`` block; nested diagnostics are flattened with dots."""
        lines = []

        def emit(prefix, obj):
            for k, v in obj.items():
                key = f"{prefix}{k}"
                if isinstance(v, dict):
                    emit(key + ".", v)
                elif isinstance(v, (list, tuple)):
                    lines.append(f"{key}={';'.join(map(str, v))}")
                else:
                    lines.append(f"{key}={'' if v is None else v!r}".replace("'", ""))

        emit("", self.to_dict())
        lo, hi = self.ci_95
        lines.append(f"ci_95_lower={lo!r}")
        lines.append(f"ci_95_upper={hi!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class EggerInternals:
    s0: float
    sg: float
    theta1: float
    theta2_hat: float
    delta: float
    theta2_adj: float


@dataclass(frozen=True, eq=False)
class ResidualTerms:
    xi: np.ndarray
    omega: np.ndarray


class PostSelectionDiagnostics(NamedTuple):
    kappa_lambda: float
    psi_lambda: float
    ess_rb: float


class _Cols(NamedTuple):
    g: np.ndarray
    v: np.ndarray
    G: np.ndarray
    w: np.ndarray


Records = Union[RbSelection, Sequence[RbRecord]]


def _dataset_cols(ds: SummaryDataset) -> _Cols:
    if np.any(~(ds.sigma_y > 0)):
        raise MRError("sigma_y must be positive for every SNP")
    return _Cols(ds.gamma_hat, ds.sigma_x**2, ds.big_gamma_hat, ds.sigma_y**-2.0)


def _rb_cols(records: Records) -> tuple[RbSelection, _Cols]:
    sel = RbSelection.from_records(records)
    if len(sel) and np.any(~(sel.data.sigma_y > 0)):
        raise MRError("sigma_y must be positive for every SNP")
    return sel, _Cols(sel.gamma_rb, sel.sigma_rb_sq, sel.data.big_gamma_hat,
                      sel.data.sigma_y**-2.0)


def _cols_of(data) -> _Cols:
    if isinstance(data, SummaryDataset):
        return _dataset_cols(data)
    return _rb_cols(data)[1]


# ---------------------------------------------------------------- Egger algebra

def egger_internals(g, v, G, w) -> EggerInternals:
    """Weighted covariance/variance terms shared by Egger, dEgger and REgger.

    ``theta1`` and ``theta2_hat`` are evaluated in centred form,
    ``S0 * sum w (g - gbar)(G - Gbar)``, which equals the raw
    ``S0 * S_gG - S_g * S_G`` but avoids subtracting two large products.
    """
    s0 = fsum(w)
    sg = fsum(w * g)
    gbar = sg / s0
    Gbar = fsum(w * G) / s0
    dg = g - gbar
    theta1 = s0 * fsum(w * dg * (G - Gbar))
    theta2 = s0 * fsum(w * dg * dg)
    # S0 * sum(w v) - sum(w^2 v), written as a sum of nonnegative terms
    delta = fsum(w * v * (s0 - w))
    return EggerInternals(s0, sg, theta1, theta2, delta, theta2 - delta)


def egger_residuals(data, beta_hat: float, mu_alpha_hat: float) -> ResidualTerms:
    """Plug-in residual terms ``xi_j`` and ``omega_j`` at the fitted ``(beta, mu)``."""
    c = _cols_of(data)
    xi = c.g * c.G - beta_hat * (c.g * c.g - c.v) - mu_alpha_hat * c.g
    omega = c.G - beta_hat * c.g - mu_alpha_hat
    return ResidualTerms(xi, omega)


def egger_variance(data, beta_hat: float, mu_alpha_hat: float,
                   internals: EggerInternals) -> tuple[float, float]:
    """Residual-based variances ``(V_beta, V_mu)`` for dEgger/REgger.

    ``V_beta = sum w^2 [xi S0 - omega Sg]^2 / theta_adj^2``. ``V_mu`` is the
    first-order influence expansion of the intercept
    ``mu = (S_G - beta Sg) / S0``, propagating the slope's own noise:
    ``sum w^2 [omega/S0 - (Sg/S0) u / theta_adj]^2`` with ``u = xi S0 - omega Sg``.
    """
    if not internals.theta2_adj > 0:
        raise MRError("weak-instrument denominator collapse")
    return _egger_variance_cols(_cols_of(data), beta_hat, mu_alpha_hat, internals)


def pleiotropy_test(mu_alpha_hat: float, v_mu: float) -> tuple[float, float]:
    """Wald test of a zero intercept; returns ``(z, two-sided p)``."""
    if not v_mu > 0:
        raise MRError("intercept variance must be positive")
    z = mu_alpha_hat / math.sqrt(v_mu)
    return z, float(min(1.0, 2.0 * normal_sf(abs(z))))


def _require_egger_size(n: int, msg: str = "Egger-type estimators need at least 3 SNPs"):
    if n < 3:
        raise MRError(msg)


def _small_sample(n: int) -> tuple[str, ...]:
    if n < SMALL_SAMPLE_WARNING_P:
        return (f"only {n} SNPs: residual-based variance is asymptotic in the SNP count",)
    return ()


def _plugin_strength(ds: SummaryDataset) -> Optional[StrengthDiagnostics]:
    if len(ds) == 0 or np.any(~(ds.sigma_x > 0)):
        return None
    return strength_diagnostics(ds.gamma_hat, ds.sigma_x)


def _debiased_egger_fit(c: _Cols, method: Method, n: int, diagnostics: Diagnostics,
                        warnings: tuple[str, ...], collapse_msg: str) -> EstimateReport:
    it = egger_internals(*c)
    if not it.theta2_adj > 0:
        raise MRError(collapse_msg)
    beta = it.theta1 / it.theta2_adj
    mu = (fsum(c.w * c.G) - beta * it.sg) / it.s0
    v_beta, v_mu = _egger_variance_cols(c, beta, mu, it)
    z, p = pleiotropy_test(mu, v_mu)
    return EstimateReport(method, beta, math.sqrt(v_beta), n, mu, math.sqrt(v_mu), z, p,
                          diagnostics, warnings)


def _egger_variance_cols(c: _Cols, beta, mu, it: EggerInternals):
    xi = c.g * c.G - beta * (c.g * c.g - c.v) - mu * c.g
    omega = c.G - beta * c.g - mu
    u = xi * it.s0 - omega * it.sg
    w2 = c.w * c.w
    th = it.theta2_adj
    infl_mu = omega / it.s0 - (it.sg / it.s0) * u / th
    return fsum(w2 * u * u) / (th * th), fsum(w2 * infl_mu * infl_mu)


# ---------------------------------------------------------------- IVW family

def ivw(ds: SummaryDataset) -> EstimateReport:
    """Fixed-effect IVW with a multiplicative random-effects SE (factor floored at 1)."""
    if len(ds) < 1:
        raise MRError("empty dataset")
    c = _dataset_cols(ds)
    den = fsum(c.w * c.g * c.g)
    if not den > 0:
        raise MRError("no instrument signal")
    beta = fsum(c.w * c.G * c.g) / den
    n = len(ds)
    phi = 1.0
    if n > 1:
        resid = c.G - beta * c.g
        phi = max(1.0, fsum(c.w * resid * resid) / (n - 1))
    se = math.sqrt(phi / den)
    return EstimateReport(Method.IVW, beta, se, n,
                          diagnostics=Diagnostics(strength=_plugin_strength(ds)))


def _debiased_ivw_fit(c: _Cols, method: Method, n: int, diagnostics: Diagnostics,
                      warnings: tuple[str, ...] = ()) -> EstimateReport:
    den = fsum(c.w * (c.g * c.g - c.v))
    if not den > 0:
        raise MRError("weak-instrument denominator collapse")
    beta = fsum(c.w * c.G * c.g) / den
    resid = c.g * c.G - beta * (c.g * c.g - c.v)
    var = fsum(c.w * c.w * resid * resid) / (den * den)
    if n < 2:
        # One SNP leaves no residual degrees of freedom; use the model-based
        # first-order variance of g*G - beta*(g^2 - v) instead.
        per = c.w * c.g * c.g + (beta * beta) * c.w * c.w * c.v * (c.g * c.g + c.v)
        var = fsum(per) / (den * den)
        warnings = warnings + ("single SNP: model-based variance used",)
    return EstimateReport(method, beta, math.sqrt(var), n, diagnostics=diagnostics,
                          warnings=warnings)


def divw(ds: SummaryDataset) -> EstimateReport:
    """Debiased IVW: ``sigma_x**2`` subtracted from ``gamma_hat**2`` in the denominator."""
    if len(ds) < 1:
        raise MRError("empty dataset")
    return _debiased_ivw_fit(_dataset_cols(ds), Method.DIVW, len(ds),
                             Diagnostics(strength=_plugin_strength(ds)))


def rivw(records: Records) -> EstimateReport:
    sel, c = _rb_cols(records)
    if len(sel) == 0:
        raise MRError("empty selection")
    diag, warns = _rb_diagnostics(sel, None)
    return _debiased_ivw_fit(c, Method.RIVW, len(sel), diag, warns)


# ---------------------------------------------------------------- Egger family

def egger(ds: SummaryDataset) -> EstimateReport:
    """Classical weighted Egger regression of ``Gamma_hat`` on ``gamma_hat``.

    Standard errors follow weighted least squares with the residual
    overdispersion factor floored at one.
    """
    n = len(ds)
    _require_egger_size(n)
    c = _dataset_cols(ds)
    it = egger_internals(*c)
    # relative test: rounding in the weighted mean leaves ~eps^2 residue for constant g
    if not it.theta2_hat > 1e-24 * it.s0 * fsum(c.w * c.g * c.g):
        raise MRError("degenerate regressor variance")
    beta = it.theta1 / it.theta2_hat
    mu = (fsum(c.w * c.G) - beta * it.sg) / it.s0
    resid = c.G - mu - beta * c.g
    phi = max(1.0, fsum(c.w * resid * resid) / (n - 2))
    sgg = fsum(c.w * c.g * c.g)
    v_beta = phi * it.s0 / it.theta2_hat
    v_mu = phi * sgg / it.theta2_hat
    z, p = pleiotropy_test(mu, v_mu)
    ratio = it.theta2_adj / it.theta2_hat if it.theta2_adj > 0 else None
    diag = Diagnostics(strength=_plugin_strength(ds), attenuation_ratio=ratio,
                       i2_gx=_i2_gx(ds))
    return EstimateReport(Method.EGGER, beta, math.sqrt(v_beta), n, mu, math.sqrt(v_mu), z, p,
                          diag, _small_sample(n))


def degger(ds: SummaryDataset) -> EstimateReport:
    """Debiased Egger: the measurement-error term ``Delta`` is removed from the slope denominator."""
    n = len(ds)
    _require_egger_size(n)
    c = _dataset_cols(ds)
    it = egger_internals(*c)
    ratio = it.theta2_adj / it.theta2_hat if it.theta2_adj > 0 else None
    diag = Diagnostics(strength=_plugin_strength(ds), attenuation_ratio=ratio,
                       i2_gx=_i2_gx(ds))
    return _debiased_egger_fit(c, Method.DEGGER, n, diag, _small_sample(n),
                               "weak-instrument denominator collapse")


def regger(records: Records, lam: Optional[float] = None) -> EstimateReport:
    """Rerandomized Egger on Rao-Blackwell corrected selected SNPs.

    ``lam`` only feeds the post-selection effective sample size; when omitted
    it is recovered from the records' ``A_{+/-}`` values.
    """
    sel, c = _rb_cols(records)
    n = len(sel)
    _require_egger_size(n, "insufficient selected instruments")
    diag, warns = _rb_diagnostics(sel, lam)
    it = egger_internals(*c)
    if not it.theta2_adj > 0:
        raise MRError(f"post-selection denominator collapse (psi_lambda={diag.psi_lambda:.4g})")
    ratio = it.theta2_adj / it.theta2_hat
    diag = Diagnostics(diag.strength, ratio, None, diag.kappa_lambda, diag.psi_lambda, diag.ess_rb)
    return _debiased_egger_fit(c, Method.REGGER, n, diag, warns + _small_sample(n),
                               "post-selection denominator collapse")


# ---------------------------------------------------------------- diagnostics

def _i2_gx(ds: SummaryDataset) -> float:
    sx = ds.sigma_x
    p = len(ds)
    if np.any(~(sx > 0)):
        return 1.0
    wx = sx**-2.0
    gbar = fsum(wx * ds.gamma_hat) / fsum(wx)
    d = ds.gamma_hat - gbar
    q = fsum(wx * d * d)
    if not q > 0:
        return 0.0
    return max(0.0, (q - (p - 1)) / q)


def attenuation_diagnostics(ds: SummaryDataset) -> tuple[float, float]:
    """``(ratio, i2_gx)``: plug-in ``theta2 / (theta2 + Delta)`` and the I^2_GX statistic.

    ``i2_gx = max(0, (Q - (p - 1)) / Q)`` with ``Q`` the Cochran statistic of
    ``gamma_hat`` around its inverse-``sigma_x**2`` weighted mean. It is set
    to 1 when any ``sigma_x`` is zero.
    """
    _require_egger_size(len(ds))
    it = egger_internals(*_dataset_cols(ds))
    if not it.theta2_adj > 0:
        raise MRError("weak-instrument denominator collapse")
    return it.theta2_adj / (it.theta2_adj + it.delta), _i2_gx(ds)


def post_selection_diagnostics(records: Records, lam: float) -> PostSelectionDiagnostics:
    """Post-selection strength with Rao-Blackwell plug-ins.

    ``kappa_lambda`` is the mean of ``gamma_rb**2 / sigma_rb_sq`` and
    ``psi_lambda = kappa_lambda * sqrt(p_lambda) / max(1, lam)``. The latter
    doubles as the RB-based effective sample size; values below about 20
    are flagged as too weak for reliable inference.
    """
    sel = RbSelection.from_records(records)
    if len(sel) == 0:
        raise MRError("empty selection")
    p = len(sel)
    kappa = fsum(sel.gamma_rb**2 / sel.sigma_rb_sq) / p
    psi = kappa * math.sqrt(p) / max(1.0, lam)
    return PostSelectionDiagnostics(kappa, psi, psi)


def _recover_lambda(sel: RbSelection) -> float:
    if sel.lam is not None:
        return sel.lam
    # A+ - A- = 2 lam / eta and A+ + A- = -2 t / eta, so lam = -t (A+ - A-) / (A+ + A-)
    t = sel.data.gamma_hat / sel.data.sigma_x
    s = sel.a_plus + sel.a_minus
    ok = np.abs(s) > 1e-12
    if not np.any(ok):
        return 0.0
    return float(np.median(-t[ok] * (sel.a_plus - sel.a_minus)[ok] / s[ok]))


def _rb_diagnostics(sel: RbSelection, lam: Optional[float]):
    if lam is None:
        lam = _recover_lambda(sel)
    ps = post_selection_diagnostics(sel, lam)
    strength = strength_diagnostics(sel.gamma_rb, np.sqrt(sel.sigma_rb_sq))
    warns = ()
    if ps.ess_rb < ESS_GUIDANCE:
        warns = (f"RB-based effective sample size {ps.ess_rb:.3g} is below {ESS_GUIDANCE:g}",)
    return Diagnostics(strength=strength, kappa_lambda=ps.kappa_lambda,
                       psi_lambda=ps.psi_lambda, ess_rb=ps.ess_rb), warns


# ---------------------------------------------------------------- dispatch

def estimate(method: Union[str, Method], ds: SummaryDataset, *, selection=None,
             fixed_lambda: Optional[float] = None) -> EstimateReport:
    """Run one method end to end.

    Random-selection methods need ``selection`` (a
    :class:`~mrregger.selection.SelectionConfig`); the classical baselines
    optionally screen ``|gamma_hat / sigma_x| > fixed_lambda`` first.
    """
    from .selection import select_fixed, select_random

    m = Method.parse(method)
    if m.uses_random_selection:
        if selection is None:
            raise ValueError(f"{m.value} requires a SelectionConfig")
        sel = select_random(ds, selection)
        return rivw(sel) if m is Method.RIVW else regger(sel, selection.lam)
    if fixed_lambda is not None:
        ds = select_fixed(ds, fixed_lambda)
    return {Method.IVW: ivw, Method.DIVW: divw, Method.EGGER: egger,
            Method.DEGGER: degger}[m](ds)
