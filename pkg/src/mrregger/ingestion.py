"""GWAS summary-statistics parsing, QC filters and exposure/outcome allele
harmonization with minor-allele orientation."""

from __future__ import annotations

import csv
import gzip
import math
import os
from dataclasses import dataclass, fields, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import MRError, SummaryDataset

DEFAULT_MAF_MIN = 0.01
# MHC on chromosome 6, 26Mb to 34Mb
DEFAULT_EXCLUDE_REGIONS = (("6", 26_000_000, 34_000_000),)
DEFAULT_PALINDROME_THRESHOLD = 0.08

_BASES = frozenset("ACGT")
# explicit missing markers accepted in optional columns
_MISSING = frozenset({"", "NA", "NAN", "."})
_COMPLEMENT = {"A": "T", "T": "A", "C": "G", "G": "C"}


class GwasFormatError(MRError):
    """Fatal input problem: unreadable header, missing mapped column and the like."""


@dataclass(frozen=True)
class RawGwasRecord:
    """One row of a GWAS summary file. ``eaf``, ``pval``, ``chrom`` and ``pos`` may be absent."""

    snp_id: str
    effect_allele: str
    other_allele: str
    beta: float
    se: float
    eaf: Optional[float] = None
    pval: Optional[float] = None
    chrom: Optional[str] = None
    pos: Optional[int] = None


@dataclass(frozen=True)
class FormatSpec:
    """Maps record fields to header names. Columns listed in ``optional`` may be absent."""

    snp_id: str = "SNP"
    effect_allele: str = "A1"
    other_allele: str = "A2"
    eaf: str = "EAF"
    beta: str = "BETA"
    se: str = "SE"
    pval: str = "P"
    chrom: str = "CHR"
    pos: str = "POS"
    delimiter: Optional[str] = None
    optional: frozenset = frozenset({"eaf", "pval", "chrom", "pos"})

    @property
    def columns(self) -> dict[str, str]:
        return {f: getattr(self, f) for f in _RECORD_FIELDS}


_RECORD_FIELDS = tuple(f.name for f in fields(RawGwasRecord))


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


@dataclass(frozen=True)
class HarmonizationLog:
    """Counts of what QC and harmonization did. Logs from successive stages add up."""

    kept: int = 0
    dropped_missing: int = 0
    dropped_maf: int = 0
    dropped_region: int = 0
    dropped_ambiguous: int = 0
    flipped: int = 0

    def __add__(self, other: "HarmonizationLog") -> "HarmonizationLog":
        # `kept` is the survivor count of the later stage, not a sum
        return HarmonizationLog(
            kept=other.kept,
            dropped_missing=self.dropped_missing + other.dropped_missing,
            dropped_maf=self.dropped_maf + other.dropped_maf,
            dropped_region=self.dropped_region + other.dropped_region,
            dropped_ambiguous=self.dropped_ambiguous + other.dropped_ambiguous,
            flipped=self.flipped + other.flipped,
        )

    @property
    def dropped(self) -> int:
        return self.dropped_missing + self.dropped_maf + self.dropped_region + self.dropped_ambiguous

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# ---------------------------------------------------------------- parsing

def _open_text(path):
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rt", newline="")
    return open(path, "r", newline="")


def _float(raw: str, name: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ValueError(f"unparseable {name}: {raw!r}") from None
    if not math.isfinite(value):
        raise ValueError(f"nonfinite {name}: {raw!r}")
    return value


def _allele(raw: str, name: str) -> str:
    a = raw.strip().upper()
    if len(a) != 1 or a not in _BASES:
        raise ValueError(f"invalid {name}: {raw!r}")
    return a


def _parse_row(row: Sequence[str], idx: dict[str, int]) -> RawGwasRecord:
    get = {k: row[i].strip() for k, i in idx.items()}
    for k in ("eaf", "pval", "chrom", "pos"):
        if k in get and get[k].upper() in _MISSING:
            del get[k]
    snp = get["snp_id"]
    if not snp:
        raise ValueError("empty snp_id")
    ea = _allele(get["effect_allele"], "effect_allele")
    oa = _allele(get["other_allele"], "other_allele")
    if ea == oa:
        raise ValueError("effect_allele equals other_allele")
    beta = _float(get["beta"], "beta")
    se = _float(get["se"], "se")
    if se <= 0:
        raise ValueError("nonpositive se")
    eaf = pval = pos = None
    if "eaf" in get:
        eaf = _float(get["eaf"], "eaf")
        if not 0.0 <= eaf <= 1.0:
            raise ValueError(f"eaf outside [0, 1]: {get['eaf']!r}")
    if "pval" in get:
        pval = _float(get["pval"], "pval")
        if not 0.0 < pval <= 1.0:
            raise ValueError(f"pval outside (0, 1]: {get['pval']!r}")
    if "pos" in get:
        try:
            pos = int(get["pos"])
        except ValueError:
            raise ValueError(f"unparseable pos: {get['pos']!r}") from None
    chrom = get.get("chrom")
    return RawGwasRecord(snp, ea, oa, beta, se, eaf, pval, chrom or None, pos)


def parse_gwas(path, format_spec: FormatSpec = FormatSpec()
               ) -> tuple[list[RawGwasRecord], list[RowError]]:
    """Stream a delimited GWAS file into records.

    Returns ``(records, errors)``; malformed rows are reported with their
    1-based line number and never coerced. A mapped column absent from the
    header is fatal unless it is listed in ``format_spec.optional``.
    Gzip input is detected from the magic bytes.
    """
    records: list[RawGwasRecord] = []
    errors: list[RowError] = []
    with _open_text(path) as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise GwasFormatError(f"{path}: missing header row")
        delim = format_spec.delimiter or ("\t" if "\t" in header_line else ",")
        header = [h.strip() for h in next(csv.reader([header_line], delimiter=delim))]
        idx = {}
        for name, col in format_spec.columns.items():
            if col in header:
                idx[name] = header.index(col)
            elif name not in format_spec.optional:
                raise GwasFormatError(f"{path}: missing column {col!r} for {name}")
        width = len(header)
        for lineno, row in enumerate(csv.reader(fh, delimiter=delim), start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != width:
                errors.append(RowError(lineno, f"expected {width} fields, found {len(row)}"))
                continue
            try:
                records.append(_parse_row(row, idx))
            except ValueError as exc:
                errors.append(RowError(lineno, str(exc)))
    return records, errors


def _fmt(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_gwas(records: Iterable[RawGwasRecord], path, format_spec: FormatSpec = FormatSpec()):
    """Write records with ``format_spec`` headers; floats use ``repr`` so they round-trip."""
    cols = format_spec.columns
    opener = gzip.open if os.fspath(path).endswith(".gz") else open
    delim = format_spec.delimiter or "\t"
    with opener(path, "wt", newline="") as fh:
        w = csv.writer(fh, delimiter=delim, lineterminator="\n")
        w.writerow([cols[f] for f in _RECORD_FIELDS])
        for r in records:
            w.writerow([_fmt(getattr(r, f)) for f in _RECORD_FIELDS])


# ---------------------------------------------------------------- QC

def qc_filter(records: Iterable[RawGwasRecord], maf_min: float = DEFAULT_MAF_MIN,
              exclude_regions: Sequence[tuple[str, int, int]] = DEFAULT_EXCLUDE_REGIONS
              ) -> tuple[list[RawGwasRecord], HarmonizationLog]:
    """Drop rare variants (``min(eaf, 1 - eaf) < maf_min``) and excluded regions.

    Regions are inclusive ``(chrom, start, end)`` ranges; a leading ``chr`` is
    ignored when comparing chromosome names. Records without ``eaf`` or
    position pass the corresponding filter.
    """
    regions = [(_chrom_key(c), int(s), int(e)) for c, s, e in exclude_regions]
    kept, n_maf, n_region = [], 0, 0
    for r in records:
        if r.eaf is not None and min(r.eaf, 1.0 - r.eaf) < maf_min:
            n_maf += 1
            continue
        if r.chrom is not None and r.pos is not None:
            c = _chrom_key(r.chrom)
            if any(c == rc and s <= r.pos <= e for rc, s, e in regions):
                n_region += 1
                continue
        kept.append(r)
    return kept, HarmonizationLog(kept=len(kept), dropped_maf=n_maf, dropped_region=n_region)


def _chrom_key(chrom: str) -> str:
    c = str(chrom).strip()
    return c[3:] if c.lower().startswith("chr") else c


# ---------------------------------------------------------------- harmonization

def is_palindromic(a1: str, a2: str) -> bool:
    return _COMPLEMENT[a1] == a2


def _outcome_sign(exp: RawGwasRecord, out: RawGwasRecord, threshold: float) -> Optional[int]:
    """+1 or -1 to put the outcome effect on the exposure effect allele; None if ambiguous."""
    E, O = exp.effect_allele, exp.other_allele
    e, o = out.effect_allele, out.other_allele
    if is_palindromic(E, O):
        if {e, o} != {E, O}:
            return None
        if exp.eaf is None or out.eaf is None:
            return None
        if abs(exp.eaf - 0.5) <= threshold or abs(out.eaf - 0.5) <= threshold:
            return None
        sign = 1 if e == E else -1
        f_out = out.eaf if sign == 1 else 1.0 - out.eaf
        # opposite sides of 0.5 means the outcome was reported on the other strand
        if (f_out > 0.5) != (exp.eaf > 0.5):
            sign = -sign
        return sign
    if (e, o) == (E, O):
        return 1
    if (e, o) == (O, E):
        return -1
    ce, co = _COMPLEMENT[e], _COMPLEMENT[o]
    if (ce, co) == (E, O):
        return 1
    if (ce, co) == (O, E):
        return -1
    return None


@dataclass(frozen=True)
class HarmonizedPair:
    """Exposure and outcome records on a common, minor-allele coding."""

    exposure: RawGwasRecord
    outcome: RawGwasRecord
    flipped: bool


def harmonize_records(exposure: Iterable[RawGwasRecord], outcome: Iterable[RawGwasRecord],
                      palindrome_threshold: float = DEFAULT_PALINDROME_THRESHOLD
                      ) -> tuple[list[HarmonizedPair], HarmonizationLog]:
    """Align outcome alleles to the exposure, then orient both to the exposure minor allele.

    Inner join on ``snp_id`` in exposure order. Exposure SNPs without an
    outcome match count as ``dropped_missing``. Allele sets that cannot be
    matched (directly, swapped or via the complementary strand),
    unresolvable palindromes, SNPs lacking an exposure ``eaf`` and duplicated
    ids count as ``dropped_ambiguous``. Outcome-only SNPs are not counted.
    """
    exposure = list(exposure)
    out_by_id: dict[str, RawGwasRecord] = {}
    out_dups = set()
    for r in outcome:
        if r.snp_id in out_by_id:
            out_dups.add(r.snp_id)
        out_by_id[r.snp_id] = r
    exp_counts: dict[str, int] = {}
    for r in exposure:
        exp_counts[r.snp_id] = exp_counts.get(r.snp_id, 0) + 1

    pairs: list[HarmonizedPair] = []
    n_missing = n_ambiguous = n_flipped = 0
    for exp in exposure:
        out = out_by_id.get(exp.snp_id)
        if out is None:
            n_missing += 1
            continue
        if exp_counts[exp.snp_id] > 1 or exp.snp_id in out_dups or exp.eaf is None:
            n_ambiguous += 1
            continue
        sign = _outcome_sign(exp, out, palindrome_threshold)
        if sign is None:
            n_ambiguous += 1
            continue
        out_eaf = None if out.eaf is None else (out.eaf if sign == 1 else 1.0 - out.eaf)
        if sign == 1 and (out.effect_allele, out.other_allele) == (exp.effect_allele, exp.other_allele):
            aligned = out
        else:
            aligned = replace(out, effect_allele=exp.effect_allele, other_allele=exp.other_allele,
                              beta=sign * out.beta, eaf=out_eaf)
        flip = exp.eaf > 0.5
        if flip:
            n_flipped += 1
            exp = _swap(exp)
            aligned = _swap(aligned)
        pairs.append(HarmonizedPair(exp, aligned, flip))
    log = HarmonizationLog(kept=len(pairs), dropped_missing=n_missing,
                           dropped_ambiguous=n_ambiguous, flipped=n_flipped)
    if not pairs:
        raise MRError("no common instruments")
    return pairs, log


def _swap(r: RawGwasRecord) -> RawGwasRecord:
    return replace(r, effect_allele=r.other_allele, other_allele=r.effect_allele, beta=-r.beta,
                   eaf=None if r.eaf is None else 1.0 - r.eaf)


def pairs_to_dataset(pairs: Sequence[HarmonizedPair], provenance: str = "") -> SummaryDataset:
    return SummaryDataset(
        snp_id=[p.exposure.snp_id for p in pairs],
        gamma_hat=[p.exposure.beta for p in pairs],
        sigma_x=[p.exposure.se for p in pairs],
        big_gamma_hat=[p.outcome.beta for p in pairs],
        sigma_y=[p.outcome.se for p in pairs],
        provenance=provenance,
        eaf=np.array([p.exposure.eaf for p in pairs], dtype=float),
        flipped=[p.flipped for p in pairs],
    )


def harmonize(exposure: Iterable[RawGwasRecord], outcome: Iterable[RawGwasRecord],
              palindrome_threshold: float = DEFAULT_PALINDROME_THRESHOLD,
              provenance: str = "") -> tuple[SummaryDataset, HarmonizationLog]:
    """Harmonize and emit the estimator-ready dataset (exposure eaf <= 0.5 for every SNP)."""
    pairs, log = harmonize_records(exposure, outcome, palindrome_threshold)
    return pairs_to_dataset(pairs, provenance), log


# ---------------------------------------------------------------- whitelist

def load_snp_whitelist(path) -> frozenset[str]:
    """Read one SNP id per line; blank lines and ``#`` comments are skipped."""
    with _open_text(path) as fh:
        ids = frozenset(s for s in (line.strip() for line in fh) if s and not s.startswith("#"))
    if not ids:
        raise MRError("empty whitelist")
    return ids


def filter_whitelist(records: Iterable[RawGwasRecord], whitelist: Iterable[str]
                     ) -> list[RawGwasRecord]:
    """Keep records whose id is whitelisted, in their original order."""
    allowed = whitelist if isinstance(whitelist, (set, frozenset)) else frozenset(whitelist)
    return [r for r in records if r.snp_id in allowed]


__all__ = [
    "DEFAULT_EXCLUDE_REGIONS", "DEFAULT_MAF_MIN", "DEFAULT_PALINDROME_THRESHOLD", "FormatSpec",
    "GwasFormatError", "HarmonizationLog", "HarmonizedPair", "RawGwasRecord", "RowError",
    "filter_whitelist", "harmonize", "harmonize_records", "is_palindromic", "load_snp_whitelist",
    "pairs_to_dataset", "parse_gwas", "qc_filter", "write_gwas",
]
