import hashlib
import json
import math
import time

import numpy as np
import pytest

from mrregger.cli import _threads, main
from mrregger.core import SummaryDataset
from mrregger.io import read_harmonized, write_harmonized
from mrregger.ingestion import RawGwasRecord, write_gwas

HEADER = "SNP\tA1\tA2\tEAF\tBETA\tSE\tP\n"


def _toy(path, rows):
    path.write_text(HEADER + "".join("\t".join(map(str, r)) + "\n" for r in rows))
    return path


@pytest.fixture
def synthetic(tmp_path):
    """Harmonized file with 3000 SNPs, 300 of them strong, beta = 0.3."""
    rng = np.random.default_rng(8)
    p = 3000
    gamma = np.where(rng.uniform(size=p) < 0.1, rng.normal(0.02, 0.01, p), 0.0)
    sx, sy = 0.002, 0.002
    ds = SummaryDataset.from_arrays(gamma + sx * rng.standard_normal(p), sx,
                                    0.3 * gamma + sy * rng.standard_normal(p), sy,
                                    snp_id=[f"rs{j}" for j in range(p)])
    f = tmp_path / "h.tsv"
    write_harmonized(ds, f)
    return f


class TestHarmonize:
    def test_one_shared_snp(self, tmp_path, capsys):
        exp = _toy(tmp_path / "e.tsv", [("rs1", "A", "G", 0.3, 0.02, 0.01, 1e-3),
                                        ("rs2", "C", "T", 0.2, 0.01, 0.01, 1e-3),
                                        ("rs3", "A", "C", 0.4, 0.03, 0.01, 1e-3)])
        out = _toy(tmp_path / "o.tsv", [("rs1", "G", "A", 0.7, -0.01, 0.02, 0.5),
                                        ("rs8", "C", "T", 0.2, 0.01, 0.01, 0.5),
                                        ("rs9", "A", "C", 0.4, 0.03, 0.01, 0.5)])
        code = main(["harmonize", "--exposure", str(exp), "--outcome", str(out),
                     "--out", str(tmp_path / "h")])
        assert code == 0
        lines = (tmp_path / "h" / "harmonized.tsv").read_text().splitlines()
        assert lines[0] == "snp_id\tgamma_hat\tsigma_x\tbig_gamma_hat\tsigma_y\teaf_exposure\tflipped"
        assert lines[1:] == ["rs1\t0.02\t0.01\t0.01\t0.02\t0.3\t0"]
        log = json.loads((tmp_path / "h" / "harmonization_log.json").read_text())
        assert log["kept"] == 1 and log["dropped_missing"] == 2
        man = json.loads((tmp_path / "h" / "manifest.json").read_text())
        assert man["inputs"][str(exp)] == hashlib.sha256(exp.read_bytes()).hexdigest()

    def test_zero_overlap(self, tmp_path, capsys):
        exp = _toy(tmp_path / "e.tsv", [("rs1", "A", "G", 0.3, 0.02, 0.01, 1e-3)])
        out = _toy(tmp_path / "o.tsv", [("rs2", "A", "G", 0.3, 0.02, 0.01, 1e-3)])
        code = main(["harmonize", "--exposure", str(exp), "--outcome", str(out),
                     "--out", str(tmp_path / "h")])
        assert code == 2
        assert "no common instruments" in capsys.readouterr().err

    def test_missing_column_exit_2(self, tmp_path, capsys):
        exp = tmp_path / "e.tsv"
        exp.write_text("SNP\tBETA\nrs1\t0.1\n")
        assert main(["harmonize", "--exposure", str(exp), "--outcome", str(exp),
                     "--out", str(tmp_path / "h")]) == 2

    def test_large_pair_fast_and_reconciled(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        n = 100_000
        bases = np.array(list("ACGT"))
        a = rng.integers(0, 4, n)
        b = (a + rng.integers(1, 4, n)) % 4
        eaf = rng.uniform(0.001, 0.999, n)
        chrom = rng.integers(1, 23, n)
        pos = rng.integers(1, 50_000_000, n)
        exp = [RawGwasRecord(f"rs{k}", str(bases[a[k]]), str(bases[b[k]]), float(rng.normal(0, .01)),
                             0.01, float(eaf[k]), 0.5, str(chrom[k]), int(pos[k])) for k in range(n)]
        out = [RawGwasRecord(r.snp_id, r.other_allele, r.effect_allele, 0.1, 0.02, 1 - r.eaf,
                             0.5, r.chrom, r.pos) for r in exp[: n - 1000]]
        write_gwas(exp, tmp_path / "e.tsv")
        write_gwas(out, tmp_path / "o.tsv")
        t0 = time.perf_counter()
        code = main(["harmonize", "--exposure", str(tmp_path / "e.tsv"), "--outcome",
                     str(tmp_path / "o.tsv"), "--out", str(tmp_path / "h")])
        elapsed = time.perf_counter() - t0
        assert code == 0 and elapsed < 10
        log = json.loads((tmp_path / "h" / "harmonization_log.json").read_text())
        dropped = sum(log[k] for k in ("dropped_missing", "dropped_maf", "dropped_region",
                                       "dropped_ambiguous"))
        assert log["kept"] + dropped == n
        assert log["dropped_missing"] == 1000 - sum(
            1 for r in exp[n - 1000:] if min(r.eaf, 1 - r.eaf) < 0.01
            or (r.chrom == "6" and 26e6 <= r.pos <= 34e6))
        assert len(read_harmonized(tmp_path / "h" / "harmonized.tsv")) == log["kept"]


class TestEstimate:
    def test_byte_identical_reruns(self, synthetic, tmp_path, capsys):
        args = ["estimate", str(synthetic), "--methods", "regger", "--pthreshold", "5e-5",
                "--eta", "0.5", "--seed", "7"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        for name in ("report.json", "report.tsv", "report.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        doc = json.loads((tmp_path / "a" / "report.json").read_text())
        assert list(doc)[0] == "schema" and doc["schema"] == "mr-regger/1"
        assert doc["results"][0]["method"] == "REgger"
        assert doc["settings"]["lambda"] == pytest.approx(4.0556, abs=1e-3)

    def test_seed_changes_selection(self, synthetic, tmp_path, capsys):
        for seed in ("1", "2"):
            main(["estimate", str(synthetic), "--methods", "REgger", "--seed", seed,
                  "--out", str(tmp_path / seed)])
        a = json.loads((tmp_path / "1" / "report.json").read_text())["results"][0]["beta_hat"]
        b = json.loads((tmp_path / "2" / "report.json").read_text())["results"][0]["beta_hat"]
        assert a != b

    def test_egger_degger_equal_without_measurement_error(self, tmp_path, capsys):
        rng = np.random.default_rng(2)
        g = rng.normal(0.05, 0.02, 50)
        ds = SummaryDataset.from_arrays(g, 0.0, 0.2 * g + rng.normal(0, 0.01, 50), 0.01)
        f = tmp_path / "h.tsv"
        write_harmonized(ds, f)
        assert main(["estimate", str(f), "--methods", "egger,degger", "--no-select",
                     "--out", str(tmp_path / "o")]) == 0
        res = json.loads((tmp_path / "o" / "report.json").read_text())["results"]
        assert [r["method"] for r in res] == ["Egger", "dEgger"]
        assert res[0]["beta_hat"] == res[1]["beta_hat"]
        assert res[0]["mu_alpha_hat"] == res[1]["mu_alpha_hat"]

    def test_negative_sigma_rejected(self, tmp_path, capsys):
        f = tmp_path / "h.tsv"
        f.write_text("snp_id\tgamma_hat\tsigma_x\tbig_gamma_hat\tsigma_y\n"
                     "rs1\t0.1\t-0.01\t0.1\t0.01\n")
        assert main(["estimate", str(f), "--out", str(tmp_path / "o")]) == 2
        assert "nonpositive sigma_x" in capsys.readouterr().err

    def test_same_trait_covers_one(self, tmp_path, capsys):
        # outcome = exposure measured in an independent sample
        rng = np.random.default_rng(11)
        p = 20_000
        gamma = np.where(rng.uniform(size=p) < 0.03, rng.normal(0.001, 0.01, p), 0.0)
        s = 1 / math.sqrt(200_000)
        ds = SummaryDataset.from_arrays(gamma + s * rng.standard_normal(p), s,
                                        gamma + s * rng.standard_normal(p), s)
        f = tmp_path / "h.tsv"
        write_harmonized(ds, f)
        assert main(["estimate", str(f), "--methods", "REgger", "--seed", "3",
                     "--out", str(tmp_path / "o")]) == 0
        lo, hi = json.loads((tmp_path / "o" / "report.json").read_text())["results"][0]["ci_95"]
        assert lo <= 1.0 <= hi

    def test_all_methods_fail_exit_1(self, tmp_path, capsys):
        ds = SummaryDataset.from_arrays([0.001, 0.002], 0.01, [0.0, 0.1], 0.01)
        f = tmp_path / "h.tsv"
        write_harmonized(ds, f)
        code = main(["estimate", str(f), "--methods", "Egger,REgger", "--out", str(tmp_path / "o")])
        assert code == 1
        doc = json.loads((tmp_path / "o" / "report.json").read_text())
        assert [r["status"] for r in doc["results"]] == ["error", "error"]

    def test_partial_failure_exit_0(self, synthetic, tmp_path, capsys):
        # nothing passes the random-selection threshold, IVW still runs
        code = main(["estimate", str(synthetic), "--methods", "IVW,REgger", "--pthreshold",
                     "1e-300", "--out", str(tmp_path / "o")])
        assert code == 0
        rows = [r.split("\t") for r in (tmp_path / "o" / "report.tsv").read_text().splitlines()]
        assert [r[:2] for r in rows[1:]] == [["IVW", "ok"], ["REgger", "error"]]
        assert rows[2][-1] == "insufficient selected instruments"

    @pytest.mark.parametrize("bad", [["--methods", "median"], ["--pthreshold", "2"], ["--eta", "0"]])
    def test_invalid_flags(self, synthetic, tmp_path, capsys, bad):
        assert main(["estimate", str(synthetic), "--out", str(tmp_path / "o")] + bad) == 2

    def test_missing_file(self, tmp_path, capsys):
        assert main(["estimate", str(tmp_path / "nope.tsv"), "--out", str(tmp_path / "o")]) == 2


class TestSimulate:
    def test_single_rep_empty_sd(self, tmp_path, capsys):
        code = main(["simulate", "--p", "3000", "--pi", "0.05", "--reps", "1", "--threads", "1",
                     "--methods", "dEgger", "--out", str(tmp_path)])
        assert code == 0
        assert "reps=1" in capsys.readouterr().err
        header, row = (tmp_path / "metrics.tsv").read_text().splitlines()
        cells = dict(zip(header.split("\t"), row.split("\t")))
        assert cells["sd"] == "" and cells["method"] == "dEgger"

    def test_null_beta_preset_flags_absolute_bias(self, tmp_path, capsys):
        code = main(["simulate", "--preset", "null-beta", "--reps", "2", "--p", "3000",
                     "--methods", "IVW", "--threads", "1", "--out", str(tmp_path)])
        assert code == 0
        lines = (tmp_path / "metrics.tsv").read_text().splitlines()
        header = lines[0].split("\t")
        assert len(lines) == 11
        for line in lines[1:]:
            cells = dict(zip(header, line.split("\t")))
            assert cells["bias_is_absolute"] == "1" and cells["relative_bias"] == cells["bias"]

    def test_outputs_deterministic_across_threads(self, tmp_path, capsys):
        base = ["simulate", "--p", "3000", "--pi", "0.05", "--reps", "4", "--methods",
                "dIVW,REgger", "--seed", "9"]
        main(base + ["--threads", "1", "--out", str(tmp_path / "a")])
        main(base + ["--threads", "2", "--out", str(tmp_path / "b")])
        for name in ("metrics.tsv", "reps.tsv", "plot.tsv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        plot = (tmp_path / "a" / "plot.tsv").read_text().splitlines()
        assert plot[0] == "point\theritability\tmethod\tmetric\tvalue"
        reps = (tmp_path / "a" / "reps.tsv").read_text().splitlines()
        assert len(reps) == 1 + 4 * 2

    def test_invalid_config_exit_2(self, tmp_path, capsys):
        assert main(["simulate", "--pi", "0.5", "--out", str(tmp_path)]) == 2
        assert main(["simulate", "--reps", "0", "--out", str(tmp_path)]) == 2

    def test_flagged_method_exit_1(self, tmp_path, capsys):
        # all-null instruments: every Egger-type fit fails
        code = main(["simulate", "--p", "500", "--pi", "0", "--reps", "2", "--threads", "1",
                     "--methods", "dEgger", "--no-select", "--out", str(tmp_path)])
        assert code == 1

    def test_threads_env(self, monkeypatch):
        monkeypatch.setenv("MRREGGER_THREADS", "3")
        assert _threads(None) == 3
        assert _threads(2) == 2
        monkeypatch.delenv("MRREGGER_THREADS")
        assert _threads(None) >= 1


class TestDiagnose:
    def test_prints_diagnostics(self, synthetic, tmp_path, capsys):
        assert main(["diagnose", str(synthetic), "--out", str(tmp_path / "d")]) == 0
        out = capsys.readouterr().out
        keys = [line.split("=")[0] for line in out.splitlines()]
        for k in ("kappa", "psi", "i2_gx", "attenuation_ratio", "lambda", "ess_rb"):
            assert k in keys
        doc = json.loads((tmp_path / "d" / "diagnose.json").read_text())
        assert doc["p"] == 3000 and doc["ess_rb"] > 20
