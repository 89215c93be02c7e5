"""File formats: the canonical harmonized TSV, estimate reports, simulation
tables and run manifests. All outputs are deterministic byte for byte."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import asdict, fields
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import MRError, SummaryDataset, validate_dataset
from .estimators import EstimateReport
from .simulation import MetricsReport, RepRecord, StudyResult, heritability

SCHEMA = "mr-regger/1"
HARMONIZED_COLUMNS = ("snp_id", "gamma_hat", "sigma_x", "big_gamma_hat", "sigma_y",
                      "eaf_exposure", "flipped")
PLOT_METRICS = ("relative_bias", "sd", "mean_se", "mse", "cp")


def _cell(value) -> str:
    """TSV cell: ``repr`` for floats (round-trips exactly), empty for missing."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return "" if math.isnan(v) else repr(v)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _write_tsv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def jsonable(obj):
    """Convert numpy scalars, tuples and NaN into plain JSON values (NaN becomes null)."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return None if not math.isfinite(v) else v
    return obj


def write_json(path, doc: Mapping) -> None:
    text = json.dumps(jsonable(doc), indent=2, allow_nan=False, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


# ---------------------------------------------------------------- harmonized TSV

def write_harmonized(ds: SummaryDataset, path) -> None:
    eaf = ds.eaf if ds.eaf is not None else [None] * len(ds)
    flipped = ds.flipped if ds.flipped is not None else [False] * len(ds)
    _write_tsv(path, HARMONIZED_COLUMNS,
               zip(ds.snp_id, ds.gamma_hat, ds.sigma_x, ds.big_gamma_hat, ds.sigma_y, eaf, flipped))


def read_harmonized(path) -> SummaryDataset:
    """Read the canonical harmonized TSV and validate it.

    Raises :class:`MRError` on a wrong header, unparseable cells or any
    dataset-level finding (nonpositive or nonfinite values, duplicate ids),
    except that ``sigma_x == 0`` is accepted.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None or tuple(header[:5]) != HARMONIZED_COLUMNS[:5]:
            raise MRError(f"{path}: expected header starting with {', '.join(HARMONIZED_COLUMNS[:5])}")
        has_eaf = len(header) > 5 and header[5] == "eaf_exposure"
        has_flip = len(header) > 6 and header[6] == "flipped"
        ids, cols, eaf, flip = [], [[], [], [], []], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MRError(f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
            ids.append(row[0])
            try:
                for c, cell in zip(cols, row[1:5]):
                    c.append(float(cell))
                if has_eaf:
                    eaf.append(float(row[5]) if row[5] else math.nan)
                if has_flip:
                    flip.append(row[6] == "1")
            except ValueError as exc:
                raise MRError(f"{path}:{lineno}: {exc}") from None
    if not ids:
        raise MRError(f"{path}: no SNP rows")
    ds = SummaryDataset(ids, *cols, provenance=os.fspath(path),
                        eaf=eaf if has_eaf else None, flipped=flip if has_flip else None)
    # sigma_x = 0 (exposure known exactly) is legal for the fixed-threshold methods
    findings = [f for f in validate_dataset(ds)
                if not (f.reason == "nonpositive sigma_x" and _exact_zero_sx(ds, f.snp_id))]
    if findings:
        shown = "; ".join(f"{f.snp_id}: {f.reason}" for f in findings[:5])
        more = f" (+{len(findings) - 5} more)" if len(findings) > 5 else ""
        raise MRError(f"{path}: invalid dataset: {shown}{more}")
    return ds


def _exact_zero_sx(ds: SummaryDataset, snp_id: str) -> bool:
    return bool(np.all(ds.sigma_x[ds.snp_id == snp_id] == 0.0))


# ---------------------------------------------------------------- estimate reports

REPORT_COLUMNS = ("method", "status", "beta_hat", "se_beta", "ci_95_lower", "ci_95_upper",
                  "n_snps_used", "mu_alpha_hat", "se_mu_alpha", "pleiotropy_z", "pleiotropy_p",
                  "kappa", "psi", "i2_gx", "attenuation_ratio", "kappa_lambda", "psi_lambda",
                  "ess_rb", "message")


def report_document(reports: Mapping[str, EstimateReport], failures: Mapping[str, str],
                    settings: Mapping, inputs: Mapping) -> dict:
    """Structured estimate output, one result per method in ``settings["methods"]`` order."""
    results = []
    for method in _order(reports, failures, settings.get("methods")):
        if method in reports:
            r = reports[method]
            lo, hi = r.ci_95
            d = r.to_dict()
            d["ci_95"] = [lo, hi]
            results.append({"status": "ok", **d})
        else:
            results.append({"status": "error", "method": method, "error": failures[method]})
    return {"schema": SCHEMA, "inputs": dict(inputs), "settings": dict(settings),
            "results": results}


def _order(reports, failures, methods=None) -> list[str]:
    names = list(methods) if methods else list(reports) + list(failures)
    return [m for m in names if m in reports or m in failures]


def write_report_tsv(path, reports: Mapping[str, EstimateReport], failures: Mapping[str, str],
                     methods: Optional[Sequence[str]] = None) -> None:
    rows = []
    for method in _order(reports, failures, methods):
        if method in failures:
            rows.append([method, "error"] + [None] * (len(REPORT_COLUMNS) - 3) + [failures[method]])
            continue
        r = reports[method]
        lo, hi = r.ci_95
        dg = r.diagnostics
        st = dg.strength
        rows.append([method, "ok", r.beta_hat, r.se_beta, lo, hi, r.n_snps_used, r.mu_alpha_hat,
                     r.se_mu_alpha, r.pleiotropy_z, r.pleiotropy_p,
                     None if st is None else st.kappa, None if st is None else st.psi,
                     dg.i2_gx, dg.attenuation_ratio, dg.kappa_lambda, dg.psi_lambda, dg.ess_rb,
                     "; ".join(r.warnings)])
    _write_tsv(path, REPORT_COLUMNS, rows)


# ---------------------------------------------------------------- simulation tables

POINT_COLUMNS = ("point", "p", "pi1", "pi2", "pi3", "eps_x_sq", "beta", "mu_alpha", "h2_x", "h2_y")
METRIC_COLUMNS = tuple(f.name for f in fields(MetricsReport))
REP_COLUMNS = tuple(f.name for f in fields(RepRecord))


def _point_cells(k: int, study: StudyResult) -> list:
    c = study.config
    h2x, h2y = heritability(c)
    return [k, c.p, c.pi1, c.pi2, c.pi3, c.eps_x_sq, c.beta, c.mu_alpha, h2x, h2y]


def write_metrics_tsv(path, studies: Sequence[StudyResult]) -> None:
    """One row per (sweep point, method)."""
    rows = []
    for k, s in enumerate(studies):
        for m in s.metrics.values():
            rows.append(_point_cells(k, s) + [getattr(m, f) for f in METRIC_COLUMNS])
    _write_tsv(path, POINT_COLUMNS + METRIC_COLUMNS, rows)


def write_reps_tsv(path, studies: Sequence[StudyResult]) -> None:
    """Long per-rep table: one row per (sweep point, rep, method)."""
    rows = ([k] + [getattr(r, f) for f in REP_COLUMNS]
            for k, s in enumerate(studies) for r in s.records)
    _write_tsv(path, ("point",) + REP_COLUMNS, rows)


def write_plot_tsv(path, studies: Sequence[StudyResult]) -> None:
    """Tidy ``(point, heritability, method, metric, value)`` rows, the Figure-3 axes."""
    rows = []
    for k, s in enumerate(studies):
        h2x = heritability(s.config)[0]
        for m in s.metrics.values():
            for metric in PLOT_METRICS:
                rows.append([k, h2x, m.method, metric, getattr(m, metric)])
    _write_tsv(path, ("point", "heritability", "method", "metric", "value"), rows)


# ---------------------------------------------------------------- manifest

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, config: Mapping, seed: Optional[int], version: str,
                   inputs: Sequence = ()) -> dict:
    """Write ``manifest.json``; no timestamps, so identical runs give identical bytes."""
    doc = {
        "schema": SCHEMA,
        "command": command,
        "version": version,
        "seed": seed,
        "config": dict(config),
        "inputs": {os.fspath(p): sha256_file(p) for p in inputs},
    }
    write_json(Path(out_dir) / "manifest.json", doc)
    return doc


def config_dict(obj) -> dict:
    return asdict(obj)
