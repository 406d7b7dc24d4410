"""Command-line behavior: exit codes, determinism, fixtures, sweeps."""
import csv
import json

import numpy as np
import pytest

from negtext.cli import main
from negtext.embeddings import load_embeddings
from negtext.metrics import load_records_csv


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def world_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("world")
    code = run_cli(
        "synth-world", "far", "-o", out,
        "--seed", 42, "--batches", 2, "--id-per-batch", 150, "--ood-per-batch", 150,
    )
    assert code == 0
    return out


class TestSynthWorld:
    def test_fixture_files_exist(self, world_dir):
        for name in (
            "manifest.json", "config.json", "labels.json", "labels.nspc",
            "corpus.nspc", "corpus_words.json", "truth.csv",
            "batch_000.nspc", "batch_001.nspc",
        ):
            assert (world_dir / name).exists(), name

    def test_batches_match_truth(self, world_dir):
        truth = {
            row["image_id"]: row["tag"]
            for row in csv.DictReader((world_dir / "truth.csv").open())
        }
        images = load_embeddings(world_dir / "batch_000.nspc")
        assert all(i in truth for i in images.ids)
        assert set(truth.values()) == {"ID", "OOD"}


class TestRun:
    def test_happy_path_writes_report(self, world_dir, tmp_path):
        out = tmp_path / "run"
        assert run_cli("run", world_dir / "manifest.json", "--out", out) == 0
        assert (out / "records.csv").exists()
        assert (out / "report.json").exists()
        assert (out / "checkpoint.nckp").exists()
        report = json.loads((out / "report.json").read_text())
        assert 0.0 <= report["auroc"] <= 1.0

    def test_missing_input_fails_before_output(self, world_dir, tmp_path):
        manifest = json.loads((world_dir / "manifest.json").read_text())
        manifest["client"] = {"mode": "replay", "fixtures": "fx_missing"}
        bad = tmp_path / "bad_manifest.json"
        bad.write_text(json.dumps(manifest))
        out = tmp_path / "never"
        assert run_cli("run", bad, "--out", out) == 1
        assert not out.exists()

    def test_rerun_is_byte_identical(self, world_dir, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run_cli("run", world_dir / "manifest.json", "--out", out1) == 0
        assert run_cli("run", world_dir / "manifest.json", "--out", out2) == 0
        for name in ("records.csv", "report.json", "histogram.csv", "checkpoint.nckp"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_set_overrides_config(self, world_dir, tmp_path):
        out = tmp_path / "run"
        code = run_cli(
            "run", world_dir / "manifest.json", "--out", out,
            "--set", "mode=vsnl-only",
        )
        assert code == 0
        records, _ = load_records_csv(out / "records.csv")
        assert all(r.s_ada == r.s_vsnl for r in records)


class TestFixtures:
    def test_record_then_replay_is_byte_identical(self, world_dir, tmp_path):
        fixtures = tmp_path / "fx"
        rec_out, rep_out = tmp_path / "rec", tmp_path / "rep"
        assert run_cli(
            "fixtures", "record", world_dir / "manifest.json",
            "--fixtures", fixtures, "--out", rec_out,
        ) == 0
        assert any(fixtures.iterdir())
        assert run_cli(
            "fixtures", "replay", world_dir / "manifest.json",
            "--fixtures", fixtures, "--out", rep_out,
        ) == 0
        for name in ("records.csv", "report.json", "checkpoint.nckp"):
            assert (rec_out / name).read_bytes() == (rep_out / name).read_bytes()

    def test_replay_without_fixtures_fails(self, world_dir, tmp_path):
        assert run_cli(
            "fixtures", "replay", world_dir / "manifest.json",
            "--fixtures", tmp_path / "nope", "--out", tmp_path / "o",
        ) == 1


class TestEval:
    def _run(self, world_dir, tmp_path):
        out = tmp_path / "run"
        assert run_cli("run", world_dir / "manifest.json", "--out", out) == 0
        return out

    def test_eval_matches_run_report(self, world_dir, tmp_path, capsys):
        out = self._run(world_dir, tmp_path)
        assert run_cli("eval", out / "records.csv") == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed == json.loads((out / "report.json").read_text())

    def test_single_sided_truth_fails(self, world_dir, tmp_path):
        out = self._run(world_dir, tmp_path)
        truth = tmp_path / "truth_id_only.csv"
        records, tags = load_records_csv(out / "records.csv")
        with truth.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_id", "tag"])
            for r in records:
                writer.writerow([r.image_id, "ID"])
        assert run_cli("eval", out / "records.csv", "--truth", truth) == 1

    def test_inverted_scores_complement_auroc(self, world_dir, tmp_path, capsys):
        out = self._run(world_dir, tmp_path)
        records, tags = load_records_csv(out / "records.csv")
        inverted = tmp_path / "inverted.csv"
        with (out / "records.csv").open(newline="") as src, inverted.open(
            "w", newline=""
        ) as dst:
            reader = csv.DictReader(src)
            writer = csv.DictWriter(dst, fieldnames=reader.fieldnames)
            writer.writeheader()
            for row in reader:
                row["s_ada"] = repr(1.0 - float(row["s_ada"]))
                writer.writerow(row)
        assert run_cli("eval", out / "records.csv") == 0
        direct = json.loads(capsys.readouterr().out)["auroc"]
        assert run_cli("eval", inverted) == 0
        flipped = json.loads(capsys.readouterr().out)["auroc"]
        assert direct + flipped == pytest.approx(1.0, abs=1e-9)


class TestSweep:
    def test_lambda_endpoints_match_single_space_modes(self, world_dir, tmp_path):
        sweep_csv = tmp_path / "sweep.csv"
        assert run_cli(
            "sweep", "lambda", world_dir / "manifest.json",
            "--values", "0,0.5,1", "-o", sweep_csv,
        ) == 0
        rows = list(csv.DictReader(sweep_csv.open()))
        assert len(rows) == 3

        for mode, row in (("vsnl-only", rows[0]), ("ens-only", rows[2])):
            out = tmp_path / f"mode_{mode}"
            assert run_cli(
                "run", world_dir / "manifest.json", "--out", out,
                "--set", f"mode={mode}",
            ) == 0
            report = json.loads((out / "report.json").read_text())
            assert float(row["auroc"]) == pytest.approx(report["auroc"], abs=1e-9)
            assert float(row["fpr95"]) == pytest.approx(report["fpr95"], abs=1e-9)

    def test_single_value_is_usage_error(self, world_dir, tmp_path):
        assert run_cli(
            "sweep", "delta", world_dir / "manifest.json",
            "--values", "0.3", "-o", tmp_path / "s.csv",
        ) == 1


class TestIngest:
    def test_csv_roundtrip(self, tmp_path):
        src = tmp_path / "v.csv"
        rng = np.random.default_rng(0)
        rows = rng.standard_normal((3, 5))
        with src.open("w", newline="") as fh:
            writer = csv.writer(fh)
            for i, row in enumerate(rows):
                writer.writerow([f"v{i}"] + [repr(float(x)) for x in row])
        out = tmp_path / "v.nspc"
        assert run_cli("ingest", src, "-o", out) == 0
        matrix = load_embeddings(out)
        assert matrix.ids == ("v0", "v1", "v2")
        expected = rows / np.linalg.norm(rows, axis=1, keepdims=True)
        assert np.allclose(matrix.data, expected, atol=1e-6)

    def test_npy_requires_ids(self, tmp_path):
        src = tmp_path / "v.npy"
        np.save(src, np.eye(3))
        assert run_cli("ingest", src, "-o", tmp_path / "v.nspc") == 1

    def test_unsupported_format_fails(self, tmp_path):
        src = tmp_path / "v.parquet"
        src.write_bytes(b"")
        assert run_cli("ingest", src, "-o", tmp_path / "v.nspc") == 1
