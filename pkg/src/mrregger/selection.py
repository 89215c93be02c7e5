"""Rerandomized instrument selection and Rao-Blackwell corrected exposure effects.

Each SNP receives independent pseudo-noise ``Z_j ~ N(0, eta**2)`` and is kept
when ``|gamma_hat_j / sigma_xj + Z_j| > lambda``. Conditioning on that event
and on the noise being unobserved, the Rao-Blackwell estimate removes the
winner's curse from ``gamma_hat_j`` and comes with a plug-in variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence, overload

import numpy as np

from .core import MRError, SnpSummary, SummaryDataset
from .numerics import normal_cdf, normal_isf, normal_pdf, normal_sf, standard_normals

DEFAULT_ETA = 0.5
DEFAULT_PTHRESHOLD = 5e-5
CONVENTIONAL_PTHRESHOLD = 5e-8
_SELECTION_STREAM = 0x5E1EC7
_UNDERFLOW = 1e-300


class RaoBlackwellError(MRError):
    """Numerical breakdown of the Rao-Blackwell correction; ``snp_ids`` lists the offenders."""

    def __init__(self, message: str, snp_ids: Sequence[str] = ()):
        super().__init__(message)
        self.snp_ids = list(snp_ids)


@dataclass(frozen=True)
class SelectionConfig:
    """Threshold ``lam`` on the noisy z-score, noise SD ``eta`` and RNG ``seed``."""

    lam: float
    eta: float = DEFAULT_ETA
    seed: int = 0

    def __post_init__(self):
        if not (self.lam >= 0):
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if not (self.eta > 0):
            raise ValueError(f"eta must be positive, got {self.eta}")

    @classmethod
    def from_pvalue(cls, p_threshold: float = DEFAULT_PTHRESHOLD, eta: float = DEFAULT_ETA,
                    seed: int = 0) -> "SelectionConfig":
        return cls(pvalue_to_lambda(p_threshold), eta, seed)


@dataclass(frozen=True)
class RbRecord:
    snp: SnpSummary
    z_noise: float
    gamma_rb: float
    sigma_rb_sq: float
    a_plus: float
    a_minus: float


def pvalue_to_lambda(p_threshold: float) -> float:
    """Two-sided z threshold matching a p-value cutoff, ``Phi^-1(1 - p/2)``."""
    if not (0.0 < p_threshold < 1.0):
        raise ValueError(f"p-value threshold must lie in (0, 1), got {p_threshold}")
    return float(normal_isf(p_threshold / 2.0))


def _rb_terms(gamma_hat, sigma_x, lam, eta):
    """Vectorised A_{+/-}, selection probability D and the two correction ratios."""
    t = np.asarray(gamma_hat, dtype=float) / np.asarray(sigma_x, dtype=float)
    a_plus = (-t + lam) / eta
    a_minus = (-t - lam) / eta
    # 1 - Phi(A+) + Phi(A-) without the cancellation in 1 - Phi(A+)
    d = normal_sf(a_plus) + normal_cdf(a_minus)
    phi_p, phi_m = normal_pdf(a_plus), normal_pdf(a_minus)
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = (phi_p - phi_m) / d
        r2 = (a_plus * phi_p - a_minus * phi_m) / d
    return a_plus, a_minus, d, r1, r2


def _rb_arrays(gamma_hat, sigma_x, lam, eta, snp_ids=None):
    g = np.asarray(gamma_hat, dtype=float)
    sx = np.asarray(sigma_x, dtype=float)
    a_plus, a_minus, d, r1, r2 = _rb_terms(g, sx, lam, eta)
    ids = snp_ids if snp_ids is not None else [str(j) for j in range(g.size)]
    bad = np.flatnonzero(~(d >= _UNDERFLOW))
    if bad.size:
        raise RaoBlackwellError("selection probability underflow",
                                [ids[j] for j in np.atleast_1d(bad)])
    gamma_rb = g - (sx / eta) * r1
    bracket = 1.0 - r2 / eta**2 + (r1 / eta) ** 2
    bad = np.flatnonzero(~(bracket > 0))
    if bad.size:
        raise RaoBlackwellError("degenerate RB variance", [ids[j] for j in np.atleast_1d(bad)])
    return gamma_rb, sx * sx * bracket, a_plus, a_minus


def rao_blackwell_gamma(gamma_hat: float, sigma_x: float, cfg: SelectionConfig):
    """Rao-Blackwell estimate of the exposure effect of a selected SNP.

    Returns ``(gamma_rb, a_plus, a_minus)``. At ``lam = 0`` the correction
    vanishes and ``gamma_rb == gamma_hat`` exactly.
    """
    a_plus, a_minus, d, r1, _ = _rb_terms(gamma_hat, sigma_x, cfg.lam, cfg.eta)
    if not d >= _UNDERFLOW:
        raise RaoBlackwellError("selection probability underflow")
    return float(gamma_hat - (sigma_x / cfg.eta) * r1), float(a_plus), float(a_minus)


def rao_blackwell_variance(gamma_hat: float, sigma_x: float, cfg: SelectionConfig) -> float:
    _, _, d, r1, r2 = _rb_terms(gamma_hat, sigma_x, cfg.lam, cfg.eta)
    if not d >= _UNDERFLOW:
        raise RaoBlackwellError("selection probability underflow")
    bracket = 1.0 - r2 / cfg.eta**2 + (r1 / cfg.eta) ** 2
    if not bracket > 0:
        raise RaoBlackwellError("degenerate RB variance")
    return float(sigma_x * sigma_x * bracket)


def selection_noise(n: int, cfg: SelectionConfig) -> np.ndarray:
    """Pseudo-noise ``Z_j``; entry ``j`` depends only on ``(cfg.seed, j)``."""
    return cfg.eta * standard_normals((_SELECTION_STREAM, cfg.seed), n)[:, 0]


def selection_probability(gamma, sigma_x, lam: float, eta: float):
    """Probability that a SNP with true effect ``gamma`` passes random selection.

    ``gamma_hat / sigma_x + Z`` is ``N(gamma / sigma_x, 1 + eta**2)``.
    """
    mean = np.asarray(gamma, dtype=float) / np.asarray(sigma_x, dtype=float)
    s = math.sqrt(1.0 + eta * eta)
    return normal_sf((lam - mean) / s) + normal_cdf((-lam - mean) / s)


class RbSelection(Sequence[RbRecord]):
    """Selected SNPs with their Rao-Blackwell quantities, stored column-wise.

    Behaves as a read-only sequence of :class:`RbRecord`; estimators read the
    columns directly.
    """

    def __init__(self, data: SummaryDataset, z_noise, gamma_rb, sigma_rb_sq, a_plus, a_minus,
                 index=None, lam=None, eta=None):
        self.data = data
        self.lam = lam
        self.eta = eta
        cols = {}
        for name, col in (("z_noise", z_noise), ("gamma_rb", gamma_rb),
                          ("sigma_rb_sq", sigma_rb_sq), ("a_plus", a_plus), ("a_minus", a_minus)):
            arr = np.array(col, dtype=float)
            arr.setflags(write=False)
            cols[name] = arr
        self.z_noise = cols["z_noise"]
        self.gamma_rb = cols["gamma_rb"]
        self.sigma_rb_sq = cols["sigma_rb_sq"]
        self.a_plus = cols["a_plus"]
        self.a_minus = cols["a_minus"]
        self.index = None if index is None else np.asarray(index)

    @classmethod
    def from_records(cls, records: Sequence[RbRecord]) -> "RbSelection":
        if isinstance(records, RbSelection):
            return records
        records = list(records)
        data = SummaryDataset.from_snps([r.snp for r in records])
        return cls(data, [r.z_noise for r in records], [r.gamma_rb for r in records],
                   [r.sigma_rb_sq for r in records], [r.a_plus for r in records],
                   [r.a_minus for r in records])

    def __len__(self) -> int:
        return len(self.gamma_rb)

    @overload
    def __getitem__(self, i: int) -> RbRecord: ...
    @overload
    def __getitem__(self, i: slice) -> list[RbRecord]: ...

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        d = self.data
        snp = SnpSummary(str(d.snp_id[i]), float(d.gamma_hat[i]), float(d.sigma_x[i]),
                         float(d.big_gamma_hat[i]), float(d.sigma_y[i]))
        return RbRecord(snp, float(self.z_noise[i]), float(self.gamma_rb[i]),
                        float(self.sigma_rb_sq[i]), float(self.a_plus[i]), float(self.a_minus[i]))

    def __iter__(self) -> Iterator[RbRecord]:
        return (self[k] for k in range(len(self)))


def select_random(ds: SummaryDataset, cfg: SelectionConfig) -> RbSelection:
    """Rerandomized selection with Rao-Blackwell correction of the kept SNPs.

    Deterministic in ``(dataset order, cfg)``. An empty selection is a valid
    result; estimators reject it.
    """
    if np.any(~(ds.sigma_x > 0)):
        raise MRError("random selection requires positive sigma_x for every SNP")
    z = selection_noise(len(ds), cfg)
    keep = np.abs(ds.gamma_hat / ds.sigma_x + z) > cfg.lam
    idx = np.flatnonzero(keep)
    sub = ds.subset(idx)
    gamma_rb, var_rb, a_plus, a_minus = _rb_arrays(sub.gamma_hat, sub.sigma_x, cfg.lam, cfg.eta,
                                                    list(sub.snp_id))
    return RbSelection(sub, z[idx], gamma_rb, var_rb, a_plus, a_minus, index=idx,
                       lam=cfg.lam, eta=cfg.eta)


def select_fixed(ds: SummaryDataset, lam: float) -> SummaryDataset:
    """Deterministic screen ``|gamma_hat / sigma_x| > lam`` used by the classical baselines."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.abs(ds.gamma_hat / ds.sigma_x)
    # sigma_x == 0 with gamma_hat != 0 gives inf and is kept
    return ds.subset(np.flatnonzero(t > lam))
