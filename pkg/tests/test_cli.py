import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from claprobe import evalkit
from claprobe.cli import (
    CORRECTION_REPORT_SCHEMA,
    ConfigError,
    RunConfig,
    apply_override,
    load_run_config,
    main,
    sample_codes,
)
from claprobe.netcore import forward_batch, save_model_file
from claprobe.reports import read_csv
from claprobe.scoring import ranking_auc
from conftest import random_gan

PROBE = ["--set", "probe.layer=2", "--set", "probe.search_bound=10", "--set", "probe.grid_divisions=10"]

GEOMETRY_SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["config_hash", "eq8_checked", "eq8_pass_rate", "partition_ok", "max_linearization_rel_error", "layers"],
    "properties": {
        "config_hash": {"type": "string"},
        "eq8_checked": {"type": "integer", "minimum": 0},
        "eq8_pass_rate": {"type": "number", "minimum": 0, "maximum": 1},
        "partition_ok": {"type": "boolean"},
        "max_linearization_rel_error": {"type": "number", "minimum": 0},
        "layers": {"type": "array", "items": {"type": "integer"}},
    },
}


def run(*argv):
    return main([str(a) for a in argv])


def load(p):
    return json.loads(Path(p).read_text())


def out_files(d):
    return sorted(p.relative_to(d).as_posix() for p in Path(d).rglob("*") if p.is_file())


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig.from_dict({})
        assert cfg["probe"]["search_bound"] == 30.0
        assert cfg["correction"]["maintain_ratio"] == 0.9
        assert cfg["eval"]["k"] == 3 and cfg["eval"]["epsilon"] == 1e-4

    def test_round_trip(self, tmp_path):
        cfg = load_run_config("detect", None, "x", ["probe.layer=2", "seed=5"])
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg.to_dict()))
        back = load_run_config("detect", p, "y")
        assert back.to_dict() == cfg.to_dict()
        assert back.digest() == cfg.digest()

    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"nope": 1})
        with pytest.raises(ConfigError):
            apply_override(RunConfig.from_dict({}).values, "probe.nope=1")
        with pytest.raises(ConfigError):
            apply_override(RunConfig.from_dict({}).values, "no_equals")

    def test_override_parses_json(self):
        v = RunConfig.from_dict({}).values
        apply_override(v, "sweep.layers=[1,2]")
        apply_override(v, "eval.interpolation=slerp")
        assert v["sweep"]["layers"] == [1, 2] and v["eval"]["interpolation"] == "slerp"

    def test_command_mismatch(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"command": "train"}))
        with pytest.raises(ConfigError):
            load_run_config("detect", p)

    def test_truncated_sampling(self):
        z = sample_codes(500, 3, 0, truncation=1.0)
        assert np.all(np.abs(z) <= 1.0)
        assert sample_codes(5, 2, 3).tobytes() == np.random.default_rng(3).standard_normal((5, 2)).tobytes()


class TestExitCodes:
    def test_missing_model(self, tmp_path):
        assert run("detect", "--out", tmp_path / "o", "--model", tmp_path / "absent.bin") == 2

    def test_bad_override(self, tmp_path, planted_files):
        _, paths = planted_files
        assert run("detect", "--out", tmp_path / "o", "--model", paths["planted"], "--set", "bogus=1") == 2

    def test_invalid_layer(self, tmp_path, planted_files):
        _, paths = planted_files
        assert run("detect", "--out", tmp_path / "o", "--model", paths["planted"], "--set", "probe.layer=9") == 2

    def test_unknown_command(self):
        assert run("explode") == 2

    def test_corrupt_model_is_runtime_error(self, tmp_path):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"garbage")
        assert run("detect", "--out", tmp_path / "o", "--model", bad) == 3

    def test_unreadable_config(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        assert run("eval", "--config", p) == 2


@pytest.fixture
def detect_dir(tmp_path, planted_files):
    _, paths = planted_files
    out = tmp_path / "detect"
    assert run("detect", "--out", out, "--model", paths["planted"], "--set", "n_codes=200", *PROBE) == 0
    return out


class TestDetect:
    def test_outputs(self, detect_dir):
        files = out_files(detect_dir)
        for name in ("latent_codes.csv", "scores.csv", "cla_records.csv", "groups.json",
                     "profiles.json", "profiles.svg", "summary.json", "manifest.json"):
            assert name in files
        manifest = load(detect_dir / "manifest.json")
        assert sorted(manifest["files"]) == sorted(f for f in files if f != "manifest.json")
        groups = {g["kind"]: g for g in load(detect_dir / "groups.json")["groups"]}
        assert len(groups["high_cla"]["members"]) == 20

    def test_every_file_carries_hash(self, detect_dir):
        h = load(detect_dir / "manifest.json")["config_hash"]
        for f in out_files(detect_dir):
            text = (detect_dir / f).read_text()
            assert h in text, f

    def test_planted_auc(self, detect_dir, planted_files):
        fx, _ = planted_files
        codes = np.array([[float(r["z_0"]), float(r["z_1"])] for r in read_csv(detect_dir / "latent_codes.csv")])
        scores = [float(r["score"]) for r in read_csv(detect_dir / "scores.csv")]
        inside = fx.in_bump(codes)
        assert inside.sum() >= 10
        assert ranking_auc(scores, inside) >= 0.9

    def test_deterministic(self, tmp_path, detect_dir, planted_files):
        _, paths = planted_files
        again = tmp_path / "again"
        assert run("detect", "--out", again, "--model", paths["planted"], "--set", "n_codes=200", *PROBE) == 0
        assert out_files(again) == out_files(detect_dir)
        for f in out_files(again):
            assert (again / f).read_bytes() == (detect_dir / f).read_bytes(), f

    def test_half_fraction_partitions(self, tmp_path, planted_files):
        _, paths = planted_files
        out = tmp_path / "half"
        assert run("detect", "--out", out, "--model", paths["planted"], "--set", "n_codes=40",
                   "--set", "fraction=0.5", *PROBE) == 0
        groups = {g["kind"]: set(g["members"]) for g in load(out / "groups.json")["groups"]}
        assert groups["high_cla"] | groups["low_cla"] == set(range(40))
        assert not groups["high_cla"] & groups["low_cla"]


class TestCorrect:
    def common(self, paths, out, *extra):
        return run("correct", "--out", out, "--model", paths["planted"], "--set", "n_codes=200",
                   "--set", f"reference_model=\"{paths['clean']}\"", "--set", "correction.stop_layer=2",
                   "--set", "correction.num_units=1", *PROBE, *extra)

    def test_schema_and_improvement(self, tmp_path, planted_files):
        fx, paths = planted_files
        out = tmp_path / "c"
        assert self.common(paths, out, "--set", "correction.maintain_ratio=0.0") == 0
        report = load(out / "correction_report.json")
        jsonschema.validate(report, CORRECTION_REPORT_SCHEMA)
        assert report["lambda_semantics"].startswith("h_u <- lambda")
        codes = np.array([[float(r["z_0"]), float(r["z_1"])]
                          for r in read_csv(out / "latent_codes.csv")]) if (out / "latent_codes.csv").exists() else None
        entries = report["codes"]
        assert len(entries) == 20
        for e in entries:
            assert (out / e["before"]).exists() and (out / e["after"]).exists()
        bump = [e for e in entries if fx.in_bump(sample_codes(200, 2, 0)[e["latent_id"]][None])[0]]
        assert bump
        better = sum(e["l2_reference_after"] < e["l2_reference_before"] for e in bump)
        assert better / len(bump) >= 0.9
        assert codes is None

    def test_lambda_one_noop(self, tmp_path, planted_files):
        _, paths = planted_files
        out = tmp_path / "c1"
        assert self.common(paths, out, "--set", "correction.maintain_ratio=1.0") == 0
        report = load(out / "correction_report.json")
        assert all(e["l2_original_corrected"] == 0.0 for e in report["codes"])
        for e in report["codes"]:
            a = [r["value"] for r in read_csv(out / e["before"])]
            b = [r["value"] for r in read_csv(out / e["after"])]
            assert a == b

    def test_image_outputs(self, tmp_path, planted_files):
        _, paths = planted_files
        out = tmp_path / "img"
        assert self.common(paths, out, "--set", "image_shape=[1,2,4]", "--set", "n_codes=20") == 0
        e = load(out / "correction_report.json")["codes"][0]
        assert e["before"].endswith(".ppm")
        text = (out / e["before"]).read_text().splitlines()
        assert text[0] == "P3" and text[1].startswith("# config_hash=") and text[2] == "4 2"

    def test_stop_layer_mismatch(self, tmp_path, planted_files):
        _, paths = planted_files
        assert run("correct", "--out", tmp_path / "x", "--model", paths["planted"], *PROBE) == 2

    def test_bad_ratio(self, tmp_path, planted_files):
        _, paths = planted_files
        assert self.common(paths, tmp_path / "x", "--set", "correction.maintain_ratio=2") == 2


TRAIN_SET = ["--set", "train.config.steps=20", "--set", "train.config.snapshot_every=10",
             "--set", "train.config.gen_hidden=[8,8]", "--set", "train.config.disc_hidden=[8]",
             "--set", "train.config.batch_size=16", "--set", "train.dataset.samples=200",
             "--set", "train.dynamics_probe.grid_divisions=6"]


class TestTrain:
    def test_outputs(self, tmp_path):
        out = tmp_path / "t"
        assert run("train", "--out", out, *TRAIN_SET) == 0
        files = out_files(out)
        for name in ("dataset.csv", "train_log.jsonl", "dynamics.csv", "dynamics.svg",
                     "snapshots/step_000000.gen.bin", "snapshots/step_000020.json"):
            assert name in files
        rows = read_csv(out / "dynamics.csv")
        assert len(rows) == 3 * 4
        assert len((out / "train_log.jsonl").read_text().splitlines()) == 3
        assert "modes_covered" in load(out / "summary.json")

    def test_zero_lr_constant_dynamics(self, tmp_path):
        out = tmp_path / "t0"
        assert run("train", "--out", out, *TRAIN_SET, "--set", "train.config.lr=0") == 0
        rows = read_csv(out / "dynamics.csv")
        for unit in {r["unit"] for r in rows}:
            vals = {r["cla_mean"] for r in rows if r["unit"] == unit}
            assert len(vals) == 1
        a = (out / "snapshots/step_000000.gen.bin").read_bytes()
        assert a == (out / "snapshots/step_000020.gen.bin").read_bytes()

    def test_bad_dataset(self, tmp_path):
        assert run("train", "--out", tmp_path / "x", "--set", "train.dataset.kind=\"moons\"") == 2


def ref_model(paths):
    return ["--set", f"reference_model=\"{paths['clean']}\""]


class TestSweep:
    def test_two_by_two(self, tmp_path, planted_files):
        _, paths = planted_files
        out = tmp_path / "s"
        assert run("sweep", "--out", out, "--model", paths["planted"], "--set", "n_codes=30", *ref_model(paths),
                   "--set", "sweep.search_bounds=[5,10]", "--set", "sweep.grid_divisions=[4,8]",
                   "--set", "sweep.layers=[2]") == 0
        rows = read_csv(out / "sweep.csv")
        assert len(rows) == 4
        assert [int(r["evaluations"]) for r in rows] == [30 * (2 * 2 * n + 1) for n in (4, 8, 4, 8)]
        assert "timing.csv" not in out_files(out)
        assert (out / "sweep.svg").read_text().count("<polyline") == 12

    def test_single_cell_matches_detect_plus_eval(self, tmp_path, planted_files):
        fx, paths = planted_files
        sw, det = tmp_path / "s1", tmp_path / "d1"
        common = ["--model", paths["planted"], "--set", "n_codes=30", *PROBE, *ref_model(paths)]
        assert run("sweep", "--out", sw, *common, "--set", "sweep.search_bounds=[10]",
                   "--set", "sweep.grid_divisions=[10]", "--set", "sweep.layers=[2]") == 0
        assert run("detect", "--out", det, *common) == 0
        row = read_csv(sw / "sweep.csv")[0]
        groups = {g["kind"]: g["members"] for g in load(det / "groups.json")["groups"]}
        codes = sample_codes(30, 2, 0)
        real = forward_batch(fx.clean, sample_codes(1000, 2, 0 + 7919))[-1]
        for kind, prefix in (("high_cla", "high"), ("low_cla", "low")):
            z = codes[groups[kind]]
            out = forward_batch(fx.planted, z)[-1]
            rs, _ = evalkit.realism_scores(real, out, 3)
            pl = evalkit.ppl_at(fx.planted, z, evalkit.PplConfig(1e-4, len(z)), 0)
            assert float(row[f"{prefix}_rs_mean"]) == float(np.mean(rs))
            assert float(row[f"{prefix}_rs_median"]) == float(np.median(rs))
            assert float(row[f"{prefix}_ppl"]) == float(np.mean(pl))

    def test_timing_flag(self, tmp_path, planted_files):
        _, paths = planted_files
        out = tmp_path / "st"
        assert run("sweep", "--out", out, "--model", paths["planted"], "--set", "n_codes=10", *ref_model(paths),
                   "--set", "sweep.layers=[2]", "--set", "sweep.grid_divisions=[4]",
                   "--set", "sweep.record_timing=true") == 0
        assert len(read_csv(out / "timing.csv")) == 1

    def test_empty_grid(self, tmp_path, planted_files):
        _, paths = planted_files
        assert run("sweep", "--out", tmp_path / "x", "--model", paths["planted"], "--set", "sweep.layers=[]") == 2

    def test_reference_dimension_mismatch(self, tmp_path, planted_files):
        _, paths = planted_files
        assert run("sweep", "--out", tmp_path / "x", "--model", paths["planted"], "--set", "n_codes=5",
                   "--set", "sweep.layers=[2]", "--set", "sweep.grid_divisions=[4]") == 2


class TestGeometry:
    def test_summary(self, tmp_path):
        gen, disc = random_gan(2, latent=3, hidden=(8, 8), data=4)
        save_model_file(gen, tmp_path / "g.bin")
        save_model_file(disc, tmp_path / "d.bin")
        out = tmp_path / "geo"
        assert run("geometry", "--out", out, "--model", tmp_path / "g.bin",
                   "--set", f"disc_model=\"{tmp_path / 'd.bin'}\"") == 0
        summary = load(out / "summary.json")
        jsonschema.validate(summary, GEOMETRY_SUMMARY_SCHEMA)
        assert summary["eq8_pass_rate"] == 1.0 and summary["partition_ok"]
        assert summary["max_linearization_rel_error"] <= 1e-9
        hist = load(out / "case_histogram.json")["by_layer"]
        assert sum(sum(v.values()) for v in hist.values()) == summary["eq8_checked"] == len(
            read_csv(out / "contributions.csv"))

    def test_missing_disc(self, tmp_path):
        gen, _ = random_gan(2)
        save_model_file(gen, tmp_path / "g.bin")
        assert run("geometry", "--out", tmp_path / "x", "--model", tmp_path / "g.bin") == 2


class TestEval:
    def test_metrics(self, tmp_path, planted_files):
        fx, paths = planted_files
        out = tmp_path / "e"
        assert run("eval", "--out", out, "--model", paths["planted"],
                   "--set", f"reference_model=\"{paths['planted']}\"", "--set", "eval.samples=200",
                   "--set", "eval.pairs=64") == 0
        metrics = {m["metric"]: m for m in load(out / "metrics.json")["metrics"]}
        assert set(metrics) == {"precision", "recall", "realism_score_mean", "realism_score_median", "ppl"}
        assert all(m["surrogate_distance"] for m in metrics.values())
        assert 0 < metrics["precision"]["value"] <= 1
        assert metrics["ppl"]["value"] == pytest.approx(
            evalkit.ppl(fx.planted, evalkit.PplConfig(1e-4, 64), 0), rel=1e-12)

    def test_reference_data_csv(self, tmp_path, planted_files):
        fx, paths = planted_files
        pts = forward_batch(fx.planted, sample_codes(50, 2, 1))[-1]
        ref = tmp_path / "ref.csv"
        ref.write_text("# config_hash=x\n" + ",".join(f"x{i}" for i in range(8)) + "\n"
                       + "\n".join(",".join(repr(float(v)) for v in row) for row in pts) + "\n")
        out = tmp_path / "e2"
        assert run("eval", "--out", out, "--model", paths["planted"],
                   "--set", f"reference_data=\"{ref}\"", "--set", "eval.samples=50", "--set", "eval.pairs=16") == 0
