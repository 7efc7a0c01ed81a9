"""Command-line front end: detect, correct, train, sweep, geometry, eval.

Configuration is one JSON file whose keys mirror :class:`RunConfig`;
``--set key.sub=value`` overrides single entries (values parsed as JSON
when possible). All artifacts land under ``--out`` together with a
``manifest.json`` index. Exit codes: 0 success, 2 config error, 3 runtime
error.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evalkit, gymkit, linan
from .correction import CorrectionConfig, correct, identify_artifact_units, unit_cla
from .netcore import NeuronSite, forward_batch, load_model_file
from .probe import ProbeConfig, ProbeStats, activation_profile, layer_cla
from .reports import (
    cla_header,
    cla_rows,
    heatmap_svg,
    line_panels_svg,
    read_csv,
    write_csv,
    write_json,
    write_ppm,
)
from .scoring import rank_and_select, sample_score

COMMANDS = ("detect", "correct", "train", "sweep", "geometry", "eval")

LAMBDA_SEMANTICS = "h_u <- lambda * h_u for every selected unit u at the stopping layer"


class ConfigError(ValueError):
    pass


def _defaults() -> dict:
    return {
        "model": None,
        "disc_model": None,
        "reference_model": None,
        "reference_data": None,
        "seed": 0,
        "n_codes": 1000,
        "fraction": 0.1,
        "truncation": None,
        "workers": 1,
        "image_shape": None,
        "probe": {"search_bound": 30.0, "grid_divisions": 20, "layer": 4, "zero_tol": 1e-9},
        "correction": {"stop_layer": 4, "num_units": 100, "maintain_ratio": 0.9, "signed": False},
        "eval": {"k": 3, "epsilon": 1e-4, "pairs": 1024, "interpolation": "lerp", "samples": 1000},
        "train": {
            "config": gymkit.TrainConfig().to_dict(),
            "dataset": {"kind": "gaussian_ring", "modes": 8, "sigma": 0.05, "samples": 2000, "seed": 0},
            "dynamics_sites": [[1, 0], [1, 1], [1, 2], [1, 3]],
            "dynamics_probe": {"search_bound": 30.0, "grid_divisions": 20},
        },
        "sweep": {"search_bounds": [30.0], "grid_divisions": [20], "layers": [4], "record_timing": False},
        "geometry": {"layers": None, "n_codes": 8, "eta": 1e-4},
    }


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if k not in out:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict) and k != "config":
            out[k] = _merge(out[k], v, path + k + ".")
        elif k == "config" and isinstance(v, dict):
            merged = dict(out[k])
            merged.update(v)
            out[k] = merged
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    command: str
    out: str
    values: dict = field(default_factory=_defaults)

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self) -> dict:
        return {"command": self.command, **self.values}

    @classmethod
    def from_dict(cls, d: dict, out: str = "out") -> "RunConfig":
        d = dict(d)
        command = d.pop("command", None)
        d.pop("out", None)
        return cls(command, out, _merge(_defaults(), d))

    def digest(self) -> str:
        """Hash of everything that determines the outputs (the output directory excluded)."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def probe_config(self, **over) -> ProbeConfig:
        p = self["probe"]
        return ProbeConfig(over.get("search_bound", p["search_bound"]),
                           over.get("grid_divisions", p["grid_divisions"]), p["zero_tol"])


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(values: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, raw = assignment.split("=", 1)
    parts = key.split(".")
    node = values
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[p]
    if parts[-1] not in node and not (len(parts) >= 2 and parts[-2] == "config"):
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = _parse_value(raw)


def load_run_config(command: str, path=None, out="out", overrides=(), **shortcuts) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    file_command = data.get("command")
    if file_command is not None and file_command != command:
        raise ConfigError(f"config file is for {file_command!r}, not {command!r}")
    cfg = RunConfig.from_dict({k: v for k, v in data.items() if k != "command"}, out)
    cfg.command = command
    for k, v in shortcuts.items():
        if v is not None:
            cfg.values[k] = v
    for o in overrides:
        apply_override(cfg.values, o)
    return cfg


# -- shared pieces -------------------------------------------------------------------

def _load(path, what):
    if path is None:
        raise ConfigError(f"{what} path is required")
    if not Path(path).exists():
        raise ConfigError(f"{what} file {path} does not exist")
    return load_model_file(path)


def sample_codes(n: int, dim: int, seed: int, truncation=None) -> np.ndarray:
    """Standard normal codes; with ``truncation`` entries beyond it are redrawn."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, dim))
    if truncation is not None:
        bad = np.abs(z) > truncation
        while bad.any():
            z[bad] = rng.standard_normal(int(bad.sum()))
            bad = np.abs(z) > truncation
    return z


class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.hash = cfg.digest()
        self.files = []

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return p

    def csv(self, name, header, rows):
        return write_csv(self.path(name), header, rows, self.hash)

    def json(self, name, obj):
        return write_json(self.path(name), obj, self.hash)

    def finish(self, summary: dict) -> dict:
        self.json("summary.json", summary)
        write_json(self.out / "manifest.json", {
            "command": self.cfg.command,
            "files": sorted(set(self.files)),
            "config": self.cfg.to_dict(),
        }, self.hash)
        return summary


def _detect_core(gen, cfg: RunConfig, probe_cfg: ProbeConfig, layer: int, codes, stats=None):
    records, scores = [], []
    for i, z in enumerate(codes):
        recs = layer_cla(gen, layer, z, probe_cfg, latent_id=i, workers=cfg["workers"], stats=stats)
        records.append(recs)
        scores.append(sample_score(recs))
    groups = rank_and_select(scores, cfg["fraction"], cfg["seed"])
    return records, scores, groups


def _emit_vector_or_image(run: Run, stem: str, vec, image_shape):
    if image_shape is not None and int(np.prod(image_shape)) == np.size(vec):
        write_ppm(run.path(stem + ".ppm"), np.reshape(vec, image_shape), run.hash)
        return stem + ".ppm"
    run.csv(stem + ".csv", ["index", "value"], enumerate(np.ravel(vec)))
    return stem + ".csv"


# -- commands --------------------------------------------------------------------------

def cmd_detect(cfg: RunConfig) -> dict:
    gen = _load(cfg["model"], "generator model")
    layer = cfg["probe"]["layer"]
    if not 1 <= layer <= gen.depth:
        raise ConfigError(f"probe layer {layer} outside 1..{gen.depth}")
    run = Run(cfg)
    probe_cfg = cfg.probe_config()
    codes = sample_codes(cfg["n_codes"], gen.latent_dim, cfg["seed"], cfg["truncation"])
    records, scores, groups = _detect_core(gen, cfg, probe_cfg, layer, codes)

    run.csv("latent_codes.csv", ["latent_id"] + [f"z_{d}" for d in range(gen.latent_dim)],
            ([i, *z.tolist()] for i, z in enumerate(codes)))
    run.csv("scores.csv", ["latent_id", "layer", "score"],
            ([s.latent_id, s.layer, s.score] for s in scores))
    run.csv("cla_records.csv", cla_header(gen.latent_dim),
            (row for recs in records for row in cla_rows(recs)))
    run.json("groups.json", {"groups": [
        {"kind": g.kind, "seed": cfg["seed"], "fraction": g.fraction, "members": list(g.members)}
        for g in groups.values()
    ]})

    top = groups["high_cla"].members[0]
    recs = records[top]
    site = recs[int(np.argmax([abs(r.mean) for r in recs]))].site
    profiles = []
    for d in range(gen.latent_dim):
        offsets, values = activation_profile(gen, site, codes[top], d, probe_cfg)
        profiles.append(values)
    run.json("profiles.json", {"latent_id": top, "site": [site.layer, site.unit, *site.spatial],
                               "offsets": offsets, "profiles": profiles})
    heatmap_svg(run.path("profiles.svg"), np.array(profiles),
                f"code {top}, layer {site.layer} unit {site.unit}: activation along each axis",
                run.hash)
    s = np.array([x.score for x in scores])
    return run.finish({
        "n_codes": len(codes), "layer": layer, "probe": probe_cfg.__dict__,
        "grid_layout": "2n+1 samples over [-R, R], n divisions per side",
        "score_mean": float(s.mean()), "score_max": float(s.max()),
        "group_sizes": {k: len(g.members) for k, g in groups.items()},
    })


CORRECTION_REPORT_SCHEMA = {
    "type": "object",
    "required": ["config_hash", "maintain_ratio", "lambda_semantics", "stop_layer", "codes"],
    "properties": {
        "config_hash": {"type": "string"},
        "maintain_ratio": {"type": "number", "minimum": 0, "maximum": 1},
        "lambda_semantics": {"type": "string"},
        "stop_layer": {"type": "integer", "minimum": 1},
        "codes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["latent_id", "units", "l2_original_corrected", "before", "after"],
                "properties": {
                    "latent_id": {"type": "integer"},
                    "units": {"type": "array", "items": {"type": "integer"}},
                    "l2_original_corrected": {"type": "number", "minimum": 0},
                    "l2_reference_before": {"type": ["number", "null"]},
                    "l2_reference_after": {"type": ["number", "null"]},
                    "before": {"type": "string"},
                    "after": {"type": "string"},
                },
            },
        },
    },
}


def cmd_correct(cfg: RunConfig) -> dict:
    gen = _load(cfg["model"], "generator model")
    ref = _load(cfg["reference_model"], "reference model") if cfg["reference_model"] else None
    c = cfg["correction"]
    layer = cfg["probe"]["layer"]
    if c["stop_layer"] != layer:
        raise ConfigError("correction.stop_layer must equal probe.layer (unit CLA is taken there)")
    if not 1 <= layer <= gen.depth:
        raise ConfigError(f"probe layer {layer} outside 1..{gen.depth}")
    n_units = gen.shape_of(layer)[0]
    try:
        corr = CorrectionConfig(c["stop_layer"], min(c["num_units"], n_units), c["maintain_ratio"], c["signed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    run = Run(cfg)
    probe_cfg = cfg.probe_config()
    codes = sample_codes(cfg["n_codes"], gen.latent_dim, cfg["seed"], cfg["truncation"])
    records, scores, groups = _detect_core(gen, cfg, probe_cfg, layer, codes)
    entries = []
    improved = 0
    for lid in groups["high_cla"].members:
        units = identify_artifact_units(unit_cla(records[lid], layer), corr.num_units, corr.signed)
        before, after = correct(gen, codes[lid], corr, units)
        entry = {
            "latent_id": int(lid), "units": units,
            "l2_original_corrected": float(np.linalg.norm(after - before)),
            "l2_reference_before": None, "l2_reference_after": None,
            "before": _emit_vector_or_image(run, f"outputs/{lid:05d}_before", before, cfg["image_shape"]),
            "after": _emit_vector_or_image(run, f"outputs/{lid:05d}_after", after, cfg["image_shape"]),
        }
        if ref is not None:
            clean = forward_batch(ref, codes[lid].reshape(ref.input_shape))[-1][0]
            entry["l2_reference_before"] = float(np.linalg.norm(before - clean))
            entry["l2_reference_after"] = float(np.linalg.norm(after - clean))
            improved += entry["l2_reference_after"] < entry["l2_reference_before"]
        entries.append(entry)
    run.json("correction_report.json", {
        "maintain_ratio": corr.maintain_ratio, "lambda_semantics": LAMBDA_SEMANTICS,
        "stop_layer": corr.stop_layer, "num_units": corr.num_units, "signed": corr.signed,
        "codes": entries,
    })
    return run.finish({
        "corrected": len(entries),
        "improved_vs_reference": improved if ref is not None else None,
        "improved_fraction": improved / len(entries) if ref is not None and entries else None,
    })


def cmd_train(cfg: RunConfig) -> dict:
    t = cfg["train"]
    try:
        ds = gymkit.ToyDatasetSpec(**t["dataset"])
        data = gymkit.make_toy_dataset(ds)
        tc = gymkit.TrainConfig.from_dict({**t["config"], "data_dim": data.shape[1]})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    run = Run(cfg)
    run.csv("dataset.csv", [f"x_{d}" for d in range(data.shape[1])], data.tolist())
    log_path = run.path("train_log.jsonl")
    lines = []
    snaps = gymkit.train_gan(tc, data, log=lambda rec: lines.append(json.dumps(
        {"config_hash": run.hash, **rec}, sort_keys=True)))
    log_path.write_text("\n".join(lines) + "\n")
    for s in snaps:
        stem = run.out / f"snapshots/step_{s.step:06d}"
        stem.parent.mkdir(exist_ok=True)
        gymkit.save_snapshot(s, stem, tc)
        run.files += [f"snapshots/step_{s.step:06d}{ext}" for ext in (".gen.bin", ".disc.bin", ".json")]

    sites = [NeuronSite(int(s[0]), int(s[1]), tuple(s[2:])) for s in t["dynamics_sites"]]
    dp = t["dynamics_probe"]
    z_fixed = sample_codes(1, tc.latent_dim, cfg["seed"])[0]
    series = gymkit.track_cla_dynamics(snaps, sites, z_fixed,
                                       ProbeConfig(dp["search_bound"], dp["grid_divisions"]))
    rows = []
    for site, recs in series.items():
        for snap, rec in zip(snaps, recs):
            rows.append([snap.step, site.layer, site.unit, rec.activation, rec.mean])
    run.csv("dynamics.csv", ["step", "layer", "unit", "activation", "cla_mean"], rows)
    steps = [s.step for s in snaps]
    line_panels_svg(run.path("dynamics.svg"), [{
        "title": f"layer {s.layer} unit {s.unit}", "x": steps,
        "curves": [[r.mean for r in series[s]]], "labels": ["CLA"], "xlabel": "step",
    } for s in sites], ncols=min(4, len(sites)) or 1, config_hash=run.hash)
    gen_final = snaps[-1].gen
    fake = forward_batch(gen_final, sample_codes(1000, tc.latent_dim, cfg["seed"] + 1))[-1]
    summary = {"snapshots": len(snaps), "final_losses": snaps[-1].losses, "train_config_hash": tc.digest()}
    if ds.kind != "synthetic_shapes_8x8":
        covered, _ = gymkit.mode_coverage(fake, gymkit.mode_centers(ds), ds.sigma)
        summary["modes_covered"] = covered
    return run.finish(summary)


def _reference_set(cfg: RunConfig, gen, n: int):
    real = _raw_reference_set(cfg, n)
    dim = int(np.prod(gen.shape_of(gen.depth)))
    if real.ndim != 2 or real.shape[1] != dim:
        raise ConfigError(f"reference set has shape {real.shape}, generator outputs {dim} values")
    return real


def _raw_reference_set(cfg: RunConfig, n: int):
    if cfg["reference_data"]:
        if not Path(cfg["reference_data"]).exists():
            raise ConfigError(f"reference data {cfg['reference_data']} does not exist")
        rows = read_csv(cfg["reference_data"])
        return np.array([[float(v) for v in r.values()] for r in rows])
    if cfg["reference_model"]:
        ref = _load(cfg["reference_model"], "reference model")
        z = sample_codes(n, ref.latent_dim, cfg["seed"] + 7919)
        out = forward_batch(ref, z)[-1]
        return out.reshape(n, -1)
    ds = gymkit.ToyDatasetSpec(**cfg["train"]["dataset"])
    return gymkit.make_toy_dataset(ds)


def _group_metrics(gen, codes, members, real, ev, seed):
    z = codes[list(members)]
    out = forward_batch(gen, z)[-1].reshape(len(z), -1)
    rs, _ = evalkit.realism_scores(real, out, ev["k"])
    pcfg = evalkit.PplConfig(ev["epsilon"], len(z), ev["interpolation"])
    pl = evalkit.ppl_at(gen, z, pcfg, seed)
    return float(np.mean(rs)), float(np.median(rs)), float(np.mean(pl))


def cmd_sweep(cfg: RunConfig) -> dict:
    gen = _load(cfg["model"], "generator model")
    sw = cfg["sweep"]
    grid = [(float(r), int(n), int(l)) for r in sw["search_bounds"]
            for n in sw["grid_divisions"] for l in sw["layers"]]
    if not grid:
        raise ConfigError("sweep grid is empty")
    for _, _, l in grid:
        if not 1 <= l <= gen.depth:
            raise ConfigError(f"sweep layer {l} outside 1..{gen.depth}")
    run = Run(cfg)
    codes = sample_codes(cfg["n_codes"], gen.latent_dim, cfg["seed"], cfg["truncation"])
    real = evalkit.FeatureSet(_reference_set(cfg, gen, 1000))
    ev = cfg["eval"]
    rows, timing = [], []
    for r, n, l in grid:
        stats = ProbeStats()
        t0 = time.perf_counter()
        _, _, groups = _detect_core(gen, cfg, cfg.probe_config(search_bound=r, grid_divisions=n), l, codes, stats)
        elapsed = time.perf_counter() - t0
        lo = _group_metrics(gen, codes, groups["low_cla"].members, real, ev, cfg["seed"])
        hi = _group_metrics(gen, codes, groups["high_cla"].members, real, ev, cfg["seed"])
        rows.append([r, n, l, *lo, *hi, stats.evaluations])
        timing.append([r, n, l, elapsed])
    header = ["search_bound", "grid_divisions", "layer",
              "low_rs_mean", "low_rs_median", "low_ppl", "high_rs_mean", "high_rs_median", "high_ppl",
              "evaluations"]
    run.csv("sweep.csv", header, rows)
    if sw["record_timing"]:
        run.csv("timing.csv", ["search_bound", "grid_divisions", "layer", "seconds"], timing)

    arr = np.array([row[:9] for row in rows], dtype=float)
    panels = []
    for metric, (lo_col, hi_col) in (("RS", (3, 6)), ("PPL", (5, 8))):
        for col, name in ((0, "search bound R"), (2, "layer"), (1, "divisions n")):
            xs = np.unique(arr[:, col])
            lo = [arr[arr[:, col] == x, lo_col].mean() for x in xs]
            hi = [arr[arr[:, col] == x, hi_col].mean() for x in xs]
            panels.append({"title": f"{metric} vs {name}", "x": xs, "curves": [lo, hi],
                           "labels": ["low CLA", "high CLA"], "xlabel": name})
    line_panels_svg(run.path("sweep.svg"), panels, ncols=3, config_hash=run.hash)
    return run.finish({"settings": len(rows), "surrogate_distance": True})


def cmd_geometry(cfg: RunConfig) -> dict:
    gen = _load(cfg["model"], "generator model")
    disc = _load(cfg["disc_model"], "discriminator model")
    g = cfg["geometry"]
    layers = g["layers"] or [i for i, ly in enumerate(gen.layers, start=1)
                             if ly.kind == "dense" and ly.activation.kind != "tanh"]
    for l in layers:
        if not 1 <= l <= gen.depth or gen.layers[l - 1].kind != "dense":
            raise ConfigError(f"geometry layer {l} is not a dense generator layer")
    run = Run(cfg)
    codes = sample_codes(g["n_codes"], gen.latent_dim, cfg["seed"])
    rows, hist = [], {}
    eq8_total = eq8_pass = 0
    partition_ok = True
    lin_err = 0.0
    for lid, z in enumerate(codes):
        for l in layers:
            lin = linan.linearize(gen, disc, z, l)
            lin_err = max(lin_err, abs(lin.linear_logit(lin.h_split) - lin.logit) / max(1.0, abs(lin.logit)))
            summary = linan.classify_update_cases(gen, disc, z, l, g["eta"])
            active = int(np.count_nonzero(lin.h_split))
            partition_ok &= sum(summary.counts.values()) == active
            bucket = hist.setdefault(str(l), {c: 0 for c in linan.CASES})
            for case, res in summary.results:
                bucket[case] += 1
                eq8_total += 1
                ok = abs(res.eq8_lhs - res.eq8_rhs) <= 1e-9 * max(1.0, abs(res.eq8_rhs))
                eq8_pass += ok
                contrib = lin.neuron_weights[res.neuron] * lin.h_split[res.neuron]
                rows.append([lid, l, res.neuron, contrib, case,
                             abs(res.activation_after) - abs(res.activation),
                             res.distance_after - res.distance])
    run.csv("contributions.csv",
            ["latent_id", "layer", "neuron", "contribution", "case", "delta_activation", "delta_distance"], rows)
    deltas = {}
    for case in linan.CASES:
        d = [r[6] for r in rows if r[4] == case]
        deltas[case] = float(np.mean(d)) if d else None
    run.json("case_histogram.json", {"eta": g["eta"], "by_layer": hist, "mean_distance_delta": deltas})
    return run.finish({
        "eq8_checked": eq8_total,
        "eq8_pass_rate": eq8_pass / eq8_total if eq8_total else 1.0,
        "partition_ok": bool(partition_ok),
        "max_linearization_rel_error": lin_err,
        "layers": layers,
    })


def cmd_eval(cfg: RunConfig) -> dict:
    gen = _load(cfg["model"], "generator model")
    ev = cfg["eval"]
    run = Run(cfg)
    n = ev["samples"]
    real = evalkit.FeatureSet(_reference_set(cfg, gen, n))
    z = sample_codes(n, gen.latent_dim, cfg["seed"], cfg["truncation"])
    fake = forward_batch(gen, z)[-1].reshape(n, -1)
    prec, rec = evalkit.precision_recall(real, fake, ev["k"])
    rs, capped = evalkit.realism_scores(real, fake, ev["k"])
    pcfg = evalkit.PplConfig(ev["epsilon"], ev["pairs"], ev["interpolation"])
    value = evalkit.ppl(gen, pcfg, cfg["seed"])
    common = {"surrogate_distance": True, "k": ev["k"], "epsilon": ev["epsilon"], "seed": cfg["seed"],
              "group": "all"}
    metrics = [
        {"metric": "precision", "value": prec, **common},
        {"metric": "recall", "value": rec, **common},
        {"metric": "realism_score_mean", "value": float(rs.mean()), "capped": int(capped.sum()), **common},
        {"metric": "realism_score_median", "value": float(np.median(rs)), "capped": int(capped.sum()), **common},
        {"metric": "ppl", "value": value, "interpolation": ev["interpolation"], **common},
    ]
    run.json("metrics.json", {"metrics": metrics})
    return run.finish({m["metric"]: m["value"] for m in metrics})


HANDLERS = {
    "detect": cmd_detect, "correct": cmd_correct, "train": cmd_train,
    "sweep": cmd_sweep, "geometry": cmd_geometry, "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="claprobe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--model", help="generator model container")
        p.add_argument("--seed", type=int)
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        cfg = load_run_config(args.command, args.config, args.out, args.overrides,
                              model=args.model, seed=args.seed)
        summary = HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any failure past validation is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(summary, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
