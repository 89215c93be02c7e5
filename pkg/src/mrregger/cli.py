"""Command-line interface: ``mrregger {harmonize,estimate,simulate,diagnose}``.

Exit codes: 0 success, 1 method failures (every method failed in
``estimate``, or a method flagged for >10% failed reps in ``simulate``),
2 invalid input or configuration.
"""

from __future__ import annotations

import argparse
import os
import shlex
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .core import MRError, strength_diagnostics
from .estimators import Method, attenuation_diagnostics, estimate, post_selection_diagnostics
from .ingestion import (
    DEFAULT_EXCLUDE_REGIONS,
    DEFAULT_MAF_MIN,
    DEFAULT_PALINDROME_THRESHOLD,
    FormatSpec,
    filter_whitelist,
    harmonize_records,
    load_snp_whitelist,
    pairs_to_dataset,
    parse_gwas,
    qc_filter,
)
from .io import (
    read_harmonized,
    report_document,
    write_harmonized,
    write_json,
    write_manifest,
    write_metrics_tsv,
    write_plot_tsv,
    write_report_tsv,
    write_reps_tsv,
)
from .selection import (
    CONVENTIONAL_PTHRESHOLD,
    DEFAULT_ETA,
    DEFAULT_PTHRESHOLD,
    SelectionConfig,
    pvalue_to_lambda,
    select_random,
)
from .simulation import ALL_METHODS, PRESETS, SimConfig, run_study

EXIT_OK, EXIT_METHOD_FAILURE, EXIT_INVALID = 0, 1, 2
THREADS_ENV = "MRREGGER_THREADS"


class UsageError(Exception):
    """Invalid flags or configuration; maps to exit code 2."""


def _err(msg: str) -> None:
    print(f"mrregger: {msg}", file=sys.stderr)


def _methods(text: str) -> list[Method]:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            m = Method.parse(tok)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if m not in out:
            out.append(m)
    if not out:
        raise UsageError("no methods given")
    return out


def _threads(flag: Optional[int]) -> int:
    if flag is not None:
        n = flag
    elif os.environ.get(THREADS_ENV):
        try:
            n = int(os.environ[THREADS_ENV])
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise UsageError("thread count must be positive")
    return n


def _lambda(p: float, flag: str) -> float:
    try:
        return pvalue_to_lambda(p)
    except ValueError as exc:
        raise UsageError(f"{flag}: {exc}") from None


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _columns(text: Optional[str]) -> FormatSpec:
    """``field=HEADER,...`` overrides of the default column names."""
    if not text:
        return FormatSpec()
    kw = {}
    valid = set(FormatSpec().columns) | {"delimiter"}
    for item in text.split(","):
        key, sep, val = item.partition("=")
        key = key.strip()
        if not sep or key not in valid:
            raise UsageError(f"bad column mapping {item!r}; fields: {', '.join(sorted(valid))}")
        kw[key] = "\t" if val == "\\t" else val
    return FormatSpec(**kw)


def _region(text: str) -> tuple[str, int, int]:
    try:
        chrom, rng = text.split(":")
        start, end = rng.split("-")
        return chrom, int(start), int(end)
    except ValueError:
        raise argparse.ArgumentTypeError(f"region must look like 6:26000000-34000000, got {text!r}")


# ---------------------------------------------------------------- harmonize

def cmd_harmonize(args, command: str) -> int:
    out = _out_dir(args.out)
    spec_exp, spec_out = _columns(args.exposure_columns), _columns(args.outcome_columns)
    exposure, exp_errors = parse_gwas(args.exposure, spec_exp)
    outcome, out_errors = parse_gwas(args.outcome, spec_out)
    regions = [] if args.no_region_filter else (args.exclude_region or list(DEFAULT_EXCLUDE_REGIONS))
    n_exp_in = len(exposure)
    if args.whitelist:
        allowed = load_snp_whitelist(args.whitelist)
        exposure = filter_whitelist(exposure, allowed)
        outcome = filter_whitelist(outcome, allowed)
    n_whitelisted = n_exp_in - len(exposure)
    exposure, log_qc = qc_filter(exposure, args.maf_min, regions)
    outcome, _ = qc_filter(outcome, args.maf_min, regions)
    pairs, log_h = harmonize_records(exposure, outcome, args.palindrome_threshold)
    ds = pairs_to_dataset(pairs, provenance=f"{args.exposure} x {args.outcome}")
    log = log_qc + log_h
    write_harmonized(ds, out / "harmonized.tsv")
    write_json(out / "harmonization_log.json", {
        "schema": "mr-regger/1",
        "exposure_records": n_exp_in,
        "dropped_whitelist": n_whitelisted,
        **log.to_dict(),
        "parse_errors": {
            "exposure": [{"line": e.line, "message": e.message} for e in exp_errors],
            "outcome": [{"line": e.line, "message": e.message} for e in out_errors],
        },
    })
    write_manifest(out, command, {
        "maf_min": args.maf_min, "exclude_regions": [list(r) for r in regions],
        "palindrome_threshold": args.palindrome_threshold,
        "exposure_columns": spec_exp.columns, "outcome_columns": spec_out.columns,
        "whitelist": args.whitelist,
    }, None, __version__, [p for p in (args.exposure, args.outcome, args.whitelist) if p])
    for name, errs in (("exposure", exp_errors), ("outcome", out_errors)):
        if errs:
            _err(f"{len(errs)} malformed {name} rows skipped (see harmonization_log.json)")
    print(f"kept={log.kept} dropped_missing={log.dropped_missing} dropped_maf={log.dropped_maf} "
          f"dropped_region={log.dropped_region} dropped_ambiguous={log.dropped_ambiguous} "
          f"flipped={log.flipped}")
    return EXIT_OK


# ---------------------------------------------------------------- estimate

def _selection_settings(args) -> tuple[SelectionConfig, Optional[float]]:
    lam = _lambda(args.pthreshold, "--pthreshold")
    if not args.eta > 0:
        raise UsageError("--eta must be positive")
    no_select = getattr(args, "no_select", True)
    fixed = None if no_select else _lambda(args.fixed_pthreshold, "--fixed-pthreshold")
    return SelectionConfig(lam, args.eta, args.seed), fixed


def cmd_estimate(args, command: str) -> int:
    methods = _methods(args.methods)
    cfg, fixed = _selection_settings(args)
    ds = read_harmonized(args.harmonized)
    out = _out_dir(args.out)
    reports, failures = {}, {}
    for m in methods:
        try:
            reports[m.value] = estimate(m, ds, selection=cfg, fixed_lambda=fixed)
        except MRError as exc:
            failures[m.value] = str(exc)
    settings = {
        "methods": [m.value for m in methods], "pthreshold": args.pthreshold, "lambda": cfg.lam,
        "eta": cfg.eta, "seed": cfg.seed, "fixed_pthreshold": None if fixed is None else args.fixed_pthreshold,
        "fixed_lambda": fixed,
    }
    inputs = {"harmonized": os.fspath(args.harmonized), "n_snps": len(ds)}
    write_json(out / "report.json", report_document(reports, failures, settings, inputs))
    write_report_tsv(out / "report.tsv", reports, failures, settings["methods"])
    with open(out / "report.txt", "w", encoding="utf-8", newline="\n") as fh:
        for name in settings["methods"]:
            body = reports[name].to_text() if name in reports else f"error={failures[name]}\n"
            fh.write(f"[{name}]\n{body}\n")
    write_manifest(out, command, settings, cfg.seed, __version__, [args.harmonized])
    for name in [m.value for m in methods]:
        if name in reports:
            r = reports[name]
            lo, hi = r.ci_95
            print(f"{name}\tbeta={r.beta_hat:.6g}\tse={r.se_beta:.4g}\tci=[{lo:.6g}, {hi:.6g}]"
                  f"\tsnps={r.n_snps_used}")
            for w in r.warnings:
                _err(f"{name}: {w}")
        else:
            _err(f"{name} failed: {failures[name]}")
    return EXIT_OK if reports else EXIT_METHOD_FAILURE


# ---------------------------------------------------------------- simulate

_SIM_FLAGS = ("p", "n_x", "n_y", "beta", "mu_gamma", "mu_alpha", "eps_x_sq", "eps_alpha_sq",
              "pi1", "pi2", "pi3", "flip_fraction", "reps")


def _sim_configs(args) -> list[SimConfig]:
    overrides = {k: getattr(args, k) for k in _SIM_FLAGS if getattr(args, k) is not None}
    if args.pi is not None:
        overrides.update(pi1=args.pi, pi2=args.pi, pi3=args.pi)
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        if args.preset:
            configs = PRESETS[args.preset].configs()
            return [replace(c, **overrides) for c in configs]
        return [SimConfig(**overrides)]
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid simulation config: {exc}") from None


def cmd_simulate(args, command: str) -> int:
    methods = _methods(args.methods)
    configs = _sim_configs(args)
    lam = _lambda(args.pthreshold, "--pthreshold")
    if not args.eta > 0:
        raise UsageError("--eta must be positive")
    sel_seed = configs[0].seed
    selection = {m: (SelectionConfig(lam, args.eta, sel_seed) if m.uses_random_selection else
                     (None if args.no_select else _lambda(args.fixed_pthreshold, "--fixed-pthreshold")))
                 for m in methods}
    threads = _threads(args.threads)
    if configs[0].reps == 1:
        _err("warning: reps=1, standard deviations are undefined and left empty")
    out = _out_dir(args.out)
    studies = []
    for k, cfg in enumerate(configs):
        studies.append(run_study(cfg, methods, selection, threads=threads))
        if args.verbose:
            _err(f"point {k + 1}/{len(configs)} done")
    write_metrics_tsv(out / "metrics.tsv", studies)
    write_reps_tsv(out / "reps.tsv", studies)
    write_plot_tsv(out / "plot.tsv", studies)
    write_manifest(out, command, {
        "preset": args.preset, "methods": [m.value for m in methods],
        "pthreshold": args.pthreshold, "lambda": lam, "eta": args.eta,
        "fixed_pthreshold": None if args.no_select else args.fixed_pthreshold,
        "points": [asdict(c) for c in configs],
    }, configs[0].seed, __version__)
    flagged = [(k, m.method) for k, s in enumerate(studies) for m in s.metrics.values() if m.flagged]
    for k, name in flagged:
        _err(f"point {k}: {name} failed on more than 10% of reps")
    return EXIT_METHOD_FAILURE if flagged else EXIT_OK


# ---------------------------------------------------------------- diagnose

def cmd_diagnose(args, command: str) -> int:
    ds = read_harmonized(args.harmonized)
    cfg, _ = _selection_settings(args)
    values: dict = {"p": len(ds)}
    try:
        strength = strength_diagnostics(ds.gamma_hat, ds.sigma_x)
        values.update(kappa=strength.kappa, psi=strength.psi)
    except MRError as exc:
        values.update(kappa=None, psi=None)
        _err(f"strength: {exc}")
    try:
        ratio, i2 = attenuation_diagnostics(ds)
        values.update(i2_gx=i2, attenuation_ratio=ratio)
    except MRError as exc:
        values.update(i2_gx=None, attenuation_ratio=None)
        _err(f"attenuation: {exc}")
    values.update(lambda_=cfg.lam, eta=cfg.eta, seed=cfg.seed)
    try:
        sel = select_random(ds, cfg)
        values["p_lambda"] = len(sel)
        post = post_selection_diagnostics(sel, cfg.lam)
        values.update(kappa_lambda=post.kappa_lambda, psi_lambda=post.psi_lambda, ess_rb=post.ess_rb)
    except MRError as exc:
        values.setdefault("p_lambda", None)
        values.update(kappa_lambda=None, psi_lambda=None, ess_rb=None)
        _err(f"post-selection: {exc}")
    values = {k.rstrip("_"): v for k, v in values.items()}
    for k, v in values.items():
        print(f"{k}={'' if v is None else v!r}")
    if values.get("ess_rb") is not None and values["ess_rb"] < 20:
        _err("warning: RB-based effective sample size below 20; REgger inference is unreliable")
    if args.out:
        out = _out_dir(args.out)
        write_json(out / "diagnose.json", {"schema": "mr-regger/1", **values})
        write_manifest(out, command, {"pthreshold": args.pthreshold, "eta": args.eta},
                       cfg.seed, __version__, [args.harmonized])
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mrregger",
        description="Debiased and rerandomized Egger estimators for summary-data MR.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def selection_flags(p, with_fixed=True):
        p.add_argument("--pthreshold", type=float, default=DEFAULT_PTHRESHOLD,
                       help="p-value threshold for random selection (default 5e-5)")
        p.add_argument("--eta", type=float, default=DEFAULT_ETA,
                       help="pseudo-noise SD; 0.2 to 0.8 is a sensible range (default 0.5)")
        if with_fixed:
            p.add_argument("--fixed-pthreshold", type=float, default=CONVENTIONAL_PTHRESHOLD,
                           help="screen for IVW/dIVW/Egger/dEgger (default 5e-8)")
            p.add_argument("--no-select", action="store_true",
                           help="use every SNP for the fixed-threshold methods")

    h = sub.add_parser("harmonize", help="QC and align exposure/outcome GWAS files")
    h.add_argument("--exposure", required=True)
    h.add_argument("--outcome", required=True)
    h.add_argument("--out", required=True, help="output directory")
    h.add_argument("--exposure-columns", help="column mapping, e.g. snp_id=ID,beta=B,se=SE")
    h.add_argument("--outcome-columns", help="column mapping for the outcome file")
    h.add_argument("--maf-min", type=float, default=DEFAULT_MAF_MIN)
    h.add_argument("--exclude-region", type=_region, action="append",
                   help="CHR:START-END, repeatable (default 6:26000000-34000000)")
    h.add_argument("--no-region-filter", action="store_true")
    h.add_argument("--palindrome-threshold", type=float, default=DEFAULT_PALINDROME_THRESHOLD)
    h.add_argument("--whitelist", help="file of SNP ids to keep (e.g. clumped, HapMap3)")

    e = sub.add_parser("estimate", help="run estimators on a harmonized TSV")
    e.add_argument("harmonized")
    e.add_argument("--out", required=True)
    e.add_argument("--methods", default=",".join(ALL_METHODS))
    e.add_argument("--seed", type=int, default=0)
    selection_flags(e)

    s = sub.add_parser("simulate", help="Monte Carlo study under the mixture model")
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--out", required=True)
    s.add_argument("--methods", default=",".join(ALL_METHODS))
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, help=f"worker processes (default ${THREADS_ENV} or all cores)")
    s.add_argument("--pi", type=float, help="set pi1 = pi2 = pi3")
    for k in _SIM_FLAGS:
        typ = int if k in ("p", "n_x", "n_y", "reps") else float
        s.add_argument(f"--{k.replace('_', '-')}", dest=k, type=typ)
    s.add_argument("--verbose", action="store_true")
    selection_flags(s)

    d = sub.add_parser("diagnose", help="instrument-strength diagnostics for a harmonized TSV")
    d.add_argument("harmonized")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out")
    selection_flags(d, with_fixed=False)
    return ap


_COMMANDS = {"harmonize": cmd_harmonize, "estimate": cmd_estimate, "simulate": cmd_simulate,
             "diagnose": cmd_diagnose}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    command = " ".join(shlex.quote(a) for a in ["mrregger", *argv])
    try:
        return _COMMANDS[args.command](args, command)
    except (UsageError, MRError, OSError) as exc:
        _err(str(exc))
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
