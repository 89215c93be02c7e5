"""Synthetic summary statistics under a four-component mixture and a seeded
Monte Carlo harness that scores estimators on bias, SD, SE, MSE and coverage.

Per SNP ``(gamma_j, alpha_j)`` comes from one of four components: valid
instrument (``pi1``), pleiotropic instrument (``pi2``), outcome-only
(``pi3``) or null. Estimates are then drawn around the truth with
``sigma_x = n_x**-0.5`` and ``sigma_y = n_y**-0.5``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy import special

from .core import MRError, SummaryDataset, TrueEffects
from .estimators import Method, degger, divw, egger, ivw, regger, rivw
from .numerics import fsum, uniform_stream
from .selection import (
    CONVENTIONAL_PTHRESHOLD,
    DEFAULT_ETA,
    DEFAULT_PTHRESHOLD,
    SelectionConfig,
    pvalue_to_lambda,
    select_fixed,
    select_random,
)

_GENERATOR_STREAM = 0x6E4E
FAILURE_FLAG_RATE = 0.10

Selection = Union[SelectionConfig, float, None]


@dataclass(frozen=True)
class SimConfig:
    p: int = 20_000
    n_x: int = 200_000
    n_y: int = 200_000
    beta: float = 0.2
    mu_gamma: float = 0.001
    mu_alpha: float = 0.005
    eps_x_sq: float = 1e-4
    eps_alpha_sq: float = 1e-4
    pi1: float = 0.01
    pi2: float = 0.01
    pi3: float = 0.01
    flip_fraction: float = 0.0
    seed: int = 1
    reps: int = 200

    def __post_init__(self):
        if self.p < 1 or self.n_x < 1 or self.n_y < 1 or self.reps < 1:
            raise ValueError("p, n_x, n_y and reps must be positive integers")
        weights = (self.pi1, self.pi2, self.pi3)
        if any(not (0.0 <= w <= 1.0) for w in weights) or sum(weights) > 1.0 + 1e-12:
            raise ValueError(f"invalid mixture weights {weights}: each in [0, 1], sum <= 1")
        if self.eps_x_sq < 0 or self.eps_alpha_sq < 0:
            raise ValueError("variances must be nonnegative")
        if not 0.0 <= self.flip_fraction <= 1.0:
            raise ValueError("flip_fraction must lie in [0, 1]")

    @property
    def sigma_x(self) -> float:
        return 1.0 / math.sqrt(self.n_x)

    @property
    def sigma_y(self) -> float:
        return 1.0 / math.sqrt(self.n_y)


def heritability(cfg: SimConfig) -> tuple[float, float]:
    """Expected exposure and outcome heritability of the mixture."""
    h2_x = cfg.p * (cfg.pi1 + cfg.pi2) * (cfg.mu_gamma**2 + cfg.eps_x_sq)
    h2_y = cfg.beta**2 * h2_x + cfg.p * (cfg.pi2 + cfg.pi3) * (cfg.mu_alpha**2 + cfg.eps_alpha_sq)
    return h2_x, h2_y


def generate(cfg: SimConfig, rep_index: int) -> tuple[SummaryDataset, TrueEffects]:
    """Draw one synthetic dataset; row ``j`` depends only on ``(seed, rep_index, j)``."""
    u = uniform_stream((_GENERATOR_STREAM, cfg.seed, rep_index), cfg.p, 6)
    z = special.ndtri(u[:, 1:5])
    comp = np.searchsorted(np.cumsum([cfg.pi1, cfg.pi2, cfg.pi3]), u[:, 0], side="right")
    has_gamma = comp <= 1
    has_alpha = (comp == 1) | (comp == 2)
    gamma = np.where(has_gamma, cfg.mu_gamma + math.sqrt(cfg.eps_x_sq) * z[:, 0], 0.0)
    alpha = np.where(has_alpha, cfg.mu_alpha + math.sqrt(cfg.eps_alpha_sq) * z[:, 1], 0.0)
    gamma_hat = gamma + cfg.sigma_x * z[:, 2]
    big_gamma_hat = cfg.beta * gamma + alpha + cfg.sigma_y * z[:, 3]
    flip = u[:, 5] < cfg.flip_fraction
    if flip.any():
        sign = np.where(flip, -1.0, 1.0)
        gamma, alpha = sign * gamma, sign * alpha
        gamma_hat, big_gamma_hat = sign * gamma_hat, sign * big_gamma_hat
    ds = SummaryDataset(
        snp_id=[f"snp{j}" for j in range(cfg.p)],
        gamma_hat=gamma_hat,
        sigma_x=np.full(cfg.p, cfg.sigma_x),
        big_gamma_hat=big_gamma_hat,
        sigma_y=np.full(cfg.p, cfg.sigma_y),
        provenance=f"simulated seed={cfg.seed} rep={rep_index}",
        flipped=flip,
    )
    return ds, TrueEffects(gamma, alpha, cfg.beta, cfg.mu_alpha)


def default_selection(p_random: float = DEFAULT_PTHRESHOLD, eta: float = DEFAULT_ETA,
                      p_fixed: Optional[float] = CONVENTIONAL_PTHRESHOLD,
                      seed: int = 0) -> dict[Method, Selection]:
    """Random selection for RIVW/REgger, a fixed genome-wide screen for the rest."""
    rand = SelectionConfig(pvalue_to_lambda(p_random), eta, seed)
    fixed = None if p_fixed is None else pvalue_to_lambda(p_fixed)
    return {m: (rand if m.uses_random_selection else fixed) for m in Method}


@dataclass(frozen=True)
class RepRecord:
    rep: int
    method: str
    beta_hat: float = math.nan
    se: float = math.nan
    covers: Optional[bool] = None
    mu_alpha_hat: Optional[float] = None
    reject: Optional[bool] = None
    ess_rb: Optional[float] = None
    n_selected: int = 0
    error: Optional[str] = None


@dataclass(frozen=True)
class MetricsReport:
    method: str
    n_reps: int
    n_ok: int
    n_failed: int
    flagged: bool
    mean_beta: Optional[float]
    bias: Optional[float]
    relative_bias: Optional[float]
    bias_is_absolute: bool
    sd: Optional[float]
    mean_se: Optional[float]
    mse: Optional[float]
    cp: Optional[float]
    rejection_rate: Optional[float]
    mean_ess_rb: Optional[float]
    mean_selected: Optional[float]


@dataclass
class StudyResult:
    config: SimConfig
    metrics: dict[str, MetricsReport]
    records: list[RepRecord] = field(default_factory=list)

    @property
    def heritability(self) -> tuple[float, float]:
        return heritability(self.config)


def _rep_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


_FITTERS = {Method.IVW: ivw, Method.DIVW: divw, Method.EGGER: egger, Method.DEGGER: degger}


def _run_one_rep(cfg: SimConfig, methods: Sequence[Method],
                 selection: Mapping[Method, Selection], rep: int) -> list[RepRecord]:
    ds, _ = generate(cfg, rep)
    cache: dict = {}
    out = []
    for m in methods:
        sel = selection.get(m)
        n_sel = 0
        try:
            if m.uses_random_selection:
                if not isinstance(sel, SelectionConfig):
                    raise ValueError(f"{m.value} needs a SelectionConfig")
                rep_cfg = replace(sel, seed=_rep_seed(sel.seed, cfg.seed, rep))
                key = ("rand", rep_cfg)
                if key not in cache:
                    cache[key] = select_random(ds, rep_cfg)
                chosen = cache[key]
                n_sel = len(chosen)
                rpt = rivw(chosen) if m is Method.RIVW else regger(chosen, sel.lam)
            else:
                key = ("fixed", sel)
                if key not in cache:
                    cache[key] = ds if sel is None else select_fixed(ds, float(sel))
                chosen = cache[key]
                n_sel = len(chosen)
                rpt = _FITTERS[m](chosen)
        except MRError as exc:
            out.append(RepRecord(rep, m.value, n_selected=n_sel, error=str(exc)))
            continue
        lo, hi = rpt.ci_95
        out.append(RepRecord(
            rep=rep, method=m.value, beta_hat=rpt.beta_hat, se=rpt.se_beta,
            covers=bool(lo <= cfg.beta <= hi), mu_alpha_hat=rpt.mu_alpha_hat,
            reject=None if rpt.pleiotropy_p is None else bool(rpt.pleiotropy_p < 0.05),
            ess_rb=rpt.diagnostics.ess_rb, n_selected=n_sel,
        ))
    return out


def _run_chunk(args) -> list[RepRecord]:
    cfg, methods, selection, reps = args
    out = []
    for r in reps:
        out.extend(_run_one_rep(cfg, methods, selection, r))
    return out


def _mean(values) -> Optional[float]:
    values = [v for v in values if v is not None]
    return fsum(values) / len(values) if values else None


def summarize(method: str, records: Sequence[RepRecord], beta: float, n_reps: int) -> MetricsReport:
    """Aggregate per-rep results; failed reps are counted, never imputed."""
    ok = [r for r in records if r.error is None]
    n_ok = len(ok)
    n_failed = n_reps - n_ok
    flagged = n_failed > FAILURE_FLAG_RATE * n_reps
    if n_ok == 0:
        return MetricsReport(method, n_reps, 0, n_failed, True, mean_beta=None, bias=None,
                             relative_bias=None, bias_is_absolute=(beta == 0), sd=None,
                             mean_se=None, mse=None, cp=None, rejection_rate=None,
                             mean_ess_rb=None, mean_selected=None)
    est = np.array([r.beta_hat for r in ok])
    mean_beta = fsum(est) / n_ok
    bias = mean_beta - beta
    dev = est - mean_beta
    sd = math.sqrt(fsum(dev * dev) / (n_ok - 1)) if n_ok > 1 else None
    err = est - beta
    mse = fsum(err * err) / n_ok
    rel = bias if beta == 0 else bias / beta
    rej = [r.reject for r in ok if r.reject is not None]
    return MetricsReport(
        method=method, n_reps=n_reps, n_ok=n_ok, n_failed=n_failed, flagged=flagged,
        mean_beta=mean_beta, bias=bias, relative_bias=rel, bias_is_absolute=(beta == 0),
        sd=sd, mean_se=_mean([r.se for r in ok]), mse=mse,
        cp=sum(bool(r.covers) for r in ok) / n_ok,
        rejection_rate=(sum(rej) / len(rej)) if rej else None,
        mean_ess_rb=_mean([r.ess_rb for r in ok]),
        mean_selected=_mean([float(r.n_selected) for r in ok]),
    )


def run_study(cfg: SimConfig, methods: Sequence[Union[str, Method]],
              selection: Optional[Mapping[Union[str, Method], Selection]] = None,
              threads: int = 1) -> StudyResult:
    """Monte Carlo study: ``cfg.reps`` paired reps, every method sees the same data.

    ``selection`` maps a method to a :class:`SelectionConfig` (random
    selection), a float (fixed ``|z| > lambda`` screen) or ``None`` (use all
    SNPs); by default :func:`default_selection`. Results are identical for
    any ``threads``.
    """
    ms = [Method.parse(m) for m in methods]
    sel = default_selection()
    if selection is not None:
        sel.update({Method.parse(k): v for k, v in selection.items()})
    reps = list(range(cfg.reps))
    if threads > 1 and cfg.reps > 1:
        n_chunks = min(cfg.reps, threads * 4)
        chunks = [reps[i::n_chunks] for i in range(n_chunks)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_chunk, [(cfg, ms, sel, c) for c in chunks]))
        records = sorted((r for part in parts for r in part),
                         key=lambda r: (r.rep, ms.index(Method.parse(r.method))))
    else:
        records = _run_chunk((cfg, ms, sel, reps))
    metrics = {m.value: summarize(m.value, [r for r in records if r.method == m.value],
                                  cfg.beta, cfg.reps) for m in ms}
    return StudyResult(cfg, metrics, records)


# ---------------------------------------------------------------- presets

ALL_METHODS = tuple(m.value for m in Method)
DESK_PI = tuple(round(0.01 * k, 3) for k in range(1, 11))
PAPER_PI = tuple(round(0.001 * k, 4) for k in range(1, 11))
ESS_EPS = tuple(round(1e-6 * k, 12) for k in range(5, 21))


@dataclass(frozen=True)
class Preset:
    base: SimConfig
    sweep: tuple[dict, ...]
    description: str

    def configs(self) -> list[SimConfig]:
        return [replace(self.base, **upd) for upd in self.sweep]


def _pi_sweep(values):
    return tuple({"pi1": v, "pi2": v, "pi3": v} for v in values)


PRESETS: dict[str, Preset] = {
    # p is 10x smaller than the paper, so the mixture weights are 10x larger
    # to keep the number of causal SNPs and the heritability unchanged.
    "figure3-desk": Preset(SimConfig(p=20_000, reps=200), _pi_sweep(DESK_PI),
                           "directional pleiotropy, beta=0.2, desk scale"),
    "figure3-paper": Preset(SimConfig(p=200_000, reps=1000), _pi_sweep(PAPER_PI),
                            "directional pleiotropy, beta=0.2, full scale"),
    "null-beta": Preset(SimConfig(p=20_000, reps=200, beta=0.0), _pi_sweep(DESK_PI),
                        "directional pleiotropy, beta=0, desk scale"),
    "balanced": Preset(SimConfig(p=20_000, reps=200, mu_alpha=0.0), _pi_sweep(DESK_PI),
                       "balanced pleiotropy, beta=0.2, desk scale"),
    "ess-sweep": Preset(SimConfig(p=20_000, reps=200, pi1=1 / 3, pi2=1 / 3, pi3=1 / 3),
                        tuple({"eps_x_sq": e} for e in ESS_EPS),
                        "all-weak instruments, eps_x^2 sweep"),
}
