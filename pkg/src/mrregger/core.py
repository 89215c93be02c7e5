"""Shared data model: per-SNP summary statistics, datasets, and
instrument-strength diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np


class MRError(ValueError):
    """Raised when an estimator or diagnostic cannot be evaluated on its input."""


@dataclass(frozen=True)
class SnpSummary:
    """One SNP's exposure and outcome association estimates."""

    snp_id: str
    gamma_hat: float
    sigma_x: float
    big_gamma_hat: float
    sigma_y: float


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    if arr.ndim != 1:
        raise ValueError("expected a 1-d column")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SummaryDataset:
    """Column-oriented, immutable collection of independent SNP summaries.

    Columns are read-only numpy arrays. ``eaf`` (exposure effect-allele
    frequency after orientation) and ``flipped`` are optional annotations
    filled in by harmonization.
    """

    snp_id: np.ndarray
    gamma_hat: np.ndarray
    sigma_x: np.ndarray
    big_gamma_hat: np.ndarray
    sigma_y: np.ndarray
    provenance: str = ""
    eaf: Optional[np.ndarray] = None
    flipped: Optional[np.ndarray] = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "snp_id", _frozen([str(s) for s in self.snp_id], dtype=object))
        for name in ("gamma_hat", "sigma_x", "big_gamma_hat", "sigma_y"):
            set_(self, name, _frozen(getattr(self, name)))
        if self.eaf is not None:
            set_(self, "eaf", _frozen(self.eaf))
        if self.flipped is not None:
            set_(self, "flipped", _frozen(self.flipped, dtype=bool))
        n = len(self.snp_id)
        for name in ("gamma_hat", "sigma_x", "big_gamma_hat", "sigma_y", "eaf", "flipped"):
            col = getattr(self, name)
            if col is not None and len(col) != n:
                raise ValueError(f"column {name} has length {len(col)}, expected {n}")

    @classmethod
    def from_snps(cls, snps: Iterable[SnpSummary], provenance: str = "") -> "SummaryDataset":
        snps = list(snps)
        return cls(
            snp_id=[s.snp_id for s in snps],
            gamma_hat=[s.gamma_hat for s in snps],
            sigma_x=[s.sigma_x for s in snps],
            big_gamma_hat=[s.big_gamma_hat for s in snps],
            sigma_y=[s.sigma_y for s in snps],
            provenance=provenance,
        )

    @classmethod
    def from_arrays(cls, gamma_hat, sigma_x, big_gamma_hat, sigma_y, snp_id=None,
                    provenance: str = "") -> "SummaryDataset":
        """Build a dataset from numeric columns; scalars broadcast, ids default to ``snp{j}``."""
        g = np.atleast_1d(np.asarray(gamma_hat, dtype=float))
        n = len(g)
        sx, G, sy = (np.broadcast_to(np.asarray(c, dtype=float), (n,))
                     for c in (sigma_x, big_gamma_hat, sigma_y))
        if snp_id is None:
            snp_id = [f"snp{j}" for j in range(n)]
        return cls(snp_id, g, sx, G, sy, provenance=provenance)

    def __len__(self) -> int:
        return len(self.snp_id)

    @property
    def snps(self) -> tuple[SnpSummary, ...]:
        return tuple(
            SnpSummary(str(i), float(g), float(sx), float(G), float(sy))
            for i, g, sx, G, sy in zip(self.snp_id, self.gamma_hat, self.sigma_x,
                                       self.big_gamma_hat, self.sigma_y)
        )

    def subset(self, index) -> "SummaryDataset":
        """Dataset restricted to a boolean mask or integer index array (order kept)."""
        idx = np.asarray(index)
        return SummaryDataset(
            self.snp_id[idx], self.gamma_hat[idx], self.sigma_x[idx],
            self.big_gamma_hat[idx], self.sigma_y[idx], provenance=self.provenance,
            eaf=None if self.eaf is None else self.eaf[idx],
            flipped=None if self.flipped is None else self.flipped[idx],
        )


@dataclass(frozen=True, eq=False)
class TrueEffects:
    """Simulation truth behind a synthetic dataset."""

    gamma: np.ndarray
    alpha: np.ndarray
    beta: float
    mu_alpha: float

    def __post_init__(self):
        object.__setattr__(self, "gamma", _frozen(self.gamma))
        object.__setattr__(self, "alpha", _frozen(self.alpha))
        if len(self.gamma) != len(self.alpha):
            raise ValueError("gamma and alpha must have equal length")


@dataclass(frozen=True)
class StrengthDiagnostics:
    kappa: float
    psi: float
    p: int


@dataclass(frozen=True)
class Finding:
    snp_id: str
    reason: str


def validate_dataset(ds: SummaryDataset) -> list[Finding]:
    """Check per-SNP invariants and id uniqueness; one finding per violation."""
    findings = []
    seen = set()
    for s in ds.snps:
        for name in ("gamma_hat", "sigma_x", "big_gamma_hat", "sigma_y"):
            if not math.isfinite(getattr(s, name)):
                findings.append(Finding(s.snp_id, f"nonfinite {name}"))
        if s.sigma_x <= 0:
            findings.append(Finding(s.snp_id, "nonpositive sigma_x"))
        if s.sigma_y <= 0:
            findings.append(Finding(s.snp_id, "nonpositive sigma_y"))
        if s.snp_id in seen:
            findings.append(Finding(s.snp_id, f"duplicate id {s.snp_id}"))
        seen.add(s.snp_id)
    return findings


def strength_diagnostics(gamma: Sequence[float], sigma_x: Sequence[float]) -> StrengthDiagnostics:
    """Average instrument strength ``kappa`` and effective sample size ``psi``.

    ``kappa`` is the mean of ``gamma_j**2 / sigma_xj**2`` and
    ``psi = kappa * sqrt(p)``. Fed with Rao-Blackwell estimates instead of
    true effects, the same numbers serve as a plug-in strength proxy.
    """
    g = np.asarray(gamma, dtype=float)
    sx = np.asarray(sigma_x, dtype=float)
    if g.size == 0:
        raise MRError("empty dataset")
    if g.shape != sx.shape:
        raise MRError(f"length mismatch: {g.size} effects vs {sx.size} standard errors")
    if np.any(sx <= 0):
        raise MRError("sigma_x must be positive")
    p = int(g.size)
    kappa = math.fsum(((g / sx) ** 2).tolist()) / p
    return StrengthDiagnostics(kappa=kappa, psi=kappa * math.sqrt(p), p=p)
