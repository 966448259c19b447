"""Command-line entry point: ``hyperribbon {gen,run,phase,spectrum,bounds-sweep}``."""

import argparse
import copy
import json
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io as hio
from ._backend import backend_name
from .bounds import random_bound_configs, verify_bounds
from .dynamics import SGD, GD, StepSizeWarning, TrainConfig, WeightDecay
from .errors import ConfigError, NumericalError
from .manifold import analytic_pca, empirical_pca_streamed, hyper_ribbon_dim, sgd_analytic_pca
from .phase import PhaseGridSpec, extract_isosurface, modal_dimension, sweep
from .specgen import DatasetSpec, estimate_slope, synthesize_dataset

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

SECTIONS = {
    "dataset": {"n", "d", "c", "sigma_star_sq", "sigma_w_sq", "seed"},
    "train": {"method", "alpha", "T", "N", "batch_size", "lambda_wd", "noise_model"},
    "pca": {"mode", "chunk_size", "threshold"},
    "bounds": {"enabled", "sweep"},
    "phase": set(PhaseGridSpec.__dataclass_fields__) | {"contour_levels"},
    "output": {"dir", "formats"},
}
FORMATS = {"csv", "json", "svg", "hrb1"}
PCA_MODES = {"empirical", "analytic", "both"}

REFERENCE_DATASET = {"n": 50, "d": 100, "c": 0.2, "sigma_star_sq": 2.0, "sigma_w_sq": 0.1, "seed": 1}

PRESETS = {
    "fig3": {
        "dataset": REFERENCE_DATASET,
        "train": {"method": "GD", "alpha": 1.0, "T": 50, "N": 2000},
        "pca": {"mode": "both"},
    },
    "fig4": {
        "dataset": {"n": 50, "d": 100, "c": 0.5, "sigma_star_sq": 1.0, "sigma_w_sq": 1.0, "seed": 0},
        "train": {"method": "GD", "alpha": 1.0, "T": [10, 100, 1000], "N": 1},
        "pca": {"mode": "analytic"},
    },
    "fig5": {
        "dataset": REFERENCE_DATASET,
        "train": {"method": "GD", "alpha": 1.0, "T": 50, "N": 1},
        "pca": {"mode": "analytic"},
    },
    "fig6": {
        "dataset": {"n": 50, "d": 100, "c": 0.1, "sigma_star_sq": 1.0, "sigma_w_sq": 1.0, "seed": 0},
        "train": {"method": "GD", "alpha": 1.0, "T": [5, 50, 500, 5000], "N": 5000},
        "pca": {"mode": "empirical"},
    },
    "fig7": {"phase": {"ratio_values": [0.33, 1.32, 4.38]}},
    "fig7a": {"phase": {"ratio_values": [4.38]}},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def validate_config(cfg):
    """Reject unknown sections/keys and build every typed object up front."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for name, section in cfg.items():
        if not isinstance(section, dict):
            raise ConfigError(f"section '{name}' must be an object")
        extra = set(section) - SECTIONS[name]
        if extra:
            raise ConfigError(f"unknown keys in '{name}': {sorted(extra)}")
    out = {}
    if "dataset" in cfg:
        missing = {"n", "d", "c"} - set(cfg["dataset"])
        if missing:
            raise ConfigError(f"dataset is missing {sorted(missing)}")
        out["dataset"] = DatasetSpec(**cfg["dataset"])
    if "train" in cfg:
        out["train"] = _train_configs(cfg["train"])
    pca = cfg.get("pca", {})
    mode = pca.get("mode", "analytic")
    if mode not in PCA_MODES:
        raise ConfigError(f"pca.mode must be one of {sorted(PCA_MODES)}, got {mode!r}")
    threshold = pca.get("threshold", 0.95)
    if not 0 < threshold <= 1:
        raise ConfigError("pca.threshold must lie in (0, 1]")
    out["pca"] = {"mode": mode, "chunk_size": int(pca.get("chunk_size", 256)), "threshold": threshold}
    out["bounds"] = {"enabled": bool(cfg.get("bounds", {}).get("enabled", True)),
                     "sweep": int(cfg.get("bounds", {}).get("sweep", 0))}
    if "phase" in cfg:
        ph = dict(cfg["phase"])
        levels = ph.pop("contour_levels", [3, 10, 30])
        if any(int(lv) < 1 for lv in levels):
            raise ConfigError("contour levels must be >= 1")
        out["phase"] = PhaseGridSpec.from_dict(ph)
        out["contour_levels"] = [int(lv) for lv in levels]
    formats = cfg.get("output", {}).get("formats", ["csv", "json", "svg"])
    bad = set(formats) - FORMATS
    if bad:
        raise ConfigError(f"unknown output formats: {sorted(bad)}")
    out["formats"] = set(formats)
    out["out_dir"] = cfg.get("output", {}).get("dir")
    return out


def _train_configs(train):
    method = train.get("method", "GD")
    if method == "GD":
        m = GD()
    elif method == "SGD":
        m = SGD(batch_size=int(train.get("batch_size", 1)),
                noise_model=train.get("noise_model", "kernel"))
    elif method == "WeightDecay":
        m = WeightDecay(float(train.get("lambda_wd", 0.0)))
    else:
        raise ConfigError(f"train.method must be GD, SGD or WeightDecay, got {method!r}")
    if "alpha" not in train or "T" not in train:
        raise ConfigError("train needs alpha and T")
    Ts = train["T"] if isinstance(train["T"], list) else [train["T"]]
    if not Ts:
        raise ConfigError("train.T must not be empty")
    return [TrainConfig(alpha=float(train["alpha"]), T=T, N=train.get("N", 1), method=m) for T in Ts]


def load_config(args):
    cfg = {}
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        cfg = copy.deepcopy(PRESETS[args.preset])
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as exc:
            raise hio.DataIOError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
        cfg = _merge(cfg, user)
    if args.seed is not None:
        for section in ("dataset", "phase"):
            if section in cfg:
                cfg[section]["seed"] = args.seed
    if getattr(args, "mode", None):
        cfg.setdefault("pca", {})["mode"] = args.mode
    return cfg


def _out_dir(args, parsed):
    d = args.out or parsed.get("out_dir") or os.environ.get("HRB_OUT") or "hrb_out"
    return Path(d)


def _log(msg):
    print(msg, file=sys.stderr)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_gen(args):
    cfg = load_config(args)
    parsed = validate_config(cfg)
    if "dataset" not in parsed:
        raise ConfigError("gen needs a 'dataset' section")
    ds = synthesize_dataset(parsed["dataset"])
    out = _out_dir(args, parsed)
    files = [
        hio.write_matrix_csv(out / "X.csv", ds.X),
        hio.write_matrix_csv(out / "y.csv", ds.y[:, None]),
        hio.write_matrix_csv(out / "w_star.csv", ds.w_star[:, None]),
        hio.write_csv(out / "spectrum.csv", ["index", "lambda_K"],
                      [(i + 1, float(v)) for i, v in enumerate(ds.eigvals)]),
    ]
    meta = {"dataset": asdict(parsed["dataset"]), "lambda_1": float(ds.eigvals[0]),
            "lambda_n": float(ds.eigvals[-1])}
    hio.write_json(out / "manifest.json", hio.manifest(out, files, meta))
    print(f"wrote dataset n={ds.n} d={ds.d} to {out}")
    return EXIT_OK


def _pca_for(ds, config, mode, chunk_size):
    """Returns ``(primary, analytic, empirical)``; the primary is what gets reported."""
    analytic = empirical = None
    if mode in ("analytic", "both"):
        analytic = sgd_analytic_pca(ds, config) if isinstance(config.method, SGD) else analytic_pca(ds, config)
    if mode in ("empirical", "both"):
        empirical = empirical_pca_streamed(ds, config, chunk_size)
    return (empirical if mode == "empirical" else analytic), analytic, empirical


def cmd_run(args):
    cfg = load_config(args)
    parsed = validate_config(cfg)
    for need in ("dataset", "train"):
        if need not in parsed:
            raise ConfigError(f"run needs a '{need}' section")
    ds = synthesize_dataset(parsed["dataset"])
    out = _out_dir(args, parsed)
    mode, formats = parsed["pca"]["mode"], parsed["formats"]
    summary = {"dataset": asdict(parsed["dataset"]), "mode": mode, "backend": backend_name(), "runs": []}
    files = []
    curves = {}
    for config in parsed["train"]:
        t0 = time.perf_counter()
        stage = "pca"
        try:
            primary, analytic, empirical = _pca_for(ds, config, mode, parsed["pca"]["chunk_size"])
            stage = "bounds"
            report = verify_bounds(ds, config) if parsed["bounds"]["enabled"] else None
        except (ConfigError, NumericalError) as exc:
            raise type(exc)(f"stage {stage} failed for T={config.T}: {exc}") from exc
        tag = f"T{config.T}"
        entry = {"train": config.summary(), "seconds": round(time.perf_counter() - t0, 3),
                 "hyper_ribbon_dim": int(hyper_ribbon_dim(primary.lambda_P, parsed["pca"]["threshold"]))}
        if analytic is not None and empirical is not None:
            gap = np.linalg.norm(empirical.matrix - analytic.matrix) / np.linalg.norm(analytic.matrix)
            entry["frobenius_gap"] = float(gap)
        if "csv" in formats:
            if analytic is not None:
                files.append(hio.write_eigenspectrum_csv(out / f"eigenspectrum_{tag}.csv", analytic))
            if empirical is not None:
                files.append(hio.write_csv(
                    out / f"empirical_spectrum_{tag}.csv", ["index", "lambda_P", "explained_variance"],
                    [(i + 1, float(a), float(b)) for i, (a, b) in
                     enumerate(zip(empirical.lambda_P, empirical.explained_variance))]))
            if report is not None:
                files.append(hio.write_csv(
                    out / f"bounds_{tag}.csv", ["family", "i", "numeric", "bound", "satisfied", "slack"],
                    [(r.family, r.i, r.numeric, r.bound, int(r.satisfied), r.slack) for r in report.per_index]))
        if report is not None:
            entry["bound_violations"] = len(report.violations)
            if "json" in formats:
                files.append(hio.write_json(out / f"bounds_{tag}.json", report.to_dict()))
        if "hrb1" in formats:
            from .dynamics import gd_ensemble, sgd_ensemble
            ens = sgd_ensemble(ds, config) if isinstance(config.method, SGD) else gd_ensemble(ds, config)
            files.append(hio.write_hrb1(out / f"residuals_{tag}.hrb1", ens.residuals))
        if analytic is not None and len(parsed["train"]) == 1:
            curves = {"P": analytic.lambda_P, "P1": analytic.lambda_P1,
                      "P1 init": analytic.lambda_sigma_w / config.T, "P1 targets": analytic.lambda_y / config.T}
        else:
            curves[f"T={config.T}"] = primary.lambda_P
        summary["runs"].append(entry)
        _log(f"T={config.T}: dim={entry['hyper_ribbon_dim']} ({entry['seconds']} s)")
    if "svg" in formats:
        files.append(hio.atomic_write_text(out / "spectrum.svg", hio.spectrum_svg(curves, "PCA eigenvalues")))
    if "json" in formats:
        files.append(hio.write_json(out / "summary.json", summary))
    hio.write_json(out / "manifest.json", hio.manifest(out, files, {"command": "run"}))
    print(json.dumps(summary["runs"], default=float))
    return EXIT_OK


def cmd_phase(args):
    cfg = load_config(args)
    cfg.setdefault("phase", {})
    if args.seed is not None:
        cfg["phase"]["seed"] = args.seed
    parsed = validate_config(cfg)
    spec = parsed["phase"]
    out = _out_dir(args, parsed)
    t0 = time.perf_counter()
    grid = sweep(spec, threads=args.threads)
    n_fail = len(grid.errors)
    total = int(np.prod(spec.shape))
    files = [hio.write_csv(out / "phase_grid.csv", ["T", "c", "ratio", "dim", "error"], grid.to_rows())]
    contours = {lv: extract_isosurface(grid, lv) for lv in parsed["contour_levels"]}
    contour_json = {str(lv): {repr(r): lines for r, lines in per.items()} for lv, per in contours.items()}
    files.append(hio.write_json(out / "contours.json", contour_json))
    if "svg" in parsed["formats"]:
        lx = np.log10(spec.T_values)
        for k, ratio in enumerate(spec.ratio_values):
            lines = [ln for lv in contours for ln in contours[lv][ratio]]
            svg = hio.heatmap_svg(
                grid.dims[:, :, k].T, [str(t) for t in spec.T_values], [f"{c:.2f}" for c in spec.c_values],
                title=f"hyper-ribbon dimension, sigma*/sigma_w = {ratio:g}", contours=lines,
                x_range=(lx[0], lx[-1]), y_range=(spec.c_values[0], spec.c_values[-1]))
            files.append(hio.atomic_write_text(out / f"heatmap_ratio_{ratio:g}.svg", svg))
    summary = {"grid": spec.to_dict(), "failed_cells": n_fail, "cells": total,
               "modal_dimension": {repr(r): (modal_dimension(grid.dims[:, :, k]) if n_fail < total else None)
                                   for k, r in enumerate(spec.ratio_values)},
               "seconds": round(time.perf_counter() - t0, 3)}
    files.append(hio.write_json(out / "phase_summary.json", summary))
    hio.write_json(out / "manifest.json", hio.manifest(out, files, {"command": "phase"}))
    print(json.dumps({k: summary[k] for k in ("cells", "failed_cells", "modal_dimension")}))
    if n_fail == total:
        _log("every cell failed")
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_spectrum(args):
    F = hio.read_feature_csv(args.path)
    est = estimate_slope(F, fit_floor=args.fit_floor, center=args.center)
    out = args.out or os.environ.get("HRB_OUT") or "hrb_out"
    out = Path(out)
    files = [hio.write_csv(out / "feature_spectrum.csv", ["index", "lambda"],
                           [(i + 1, float(v)) for i, v in enumerate(est.eigenvalues)])]
    files.append(hio.write_json(out / "slope.json", est.to_dict()))
    hio.write_json(out / "manifest.json", hio.manifest(out, files, {"command": "spectrum",
                                                                    "input": str(args.path)}))
    print(json.dumps(est.to_dict()))
    return EXIT_OK


def _one_sweep_config(pair):
    spec, config = pair
    return verify_bounds(synthesize_dataset(spec), config)


def cmd_bounds_sweep(args):
    seed = args.seed if args.seed is not None else 0
    pairs = random_bound_configs(args.count, seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StepSizeWarning)
        if args.threads > 1:
            with ThreadPoolExecutor(max_workers=args.threads) as pool:
                reports = list(pool.map(_one_sweep_config, pairs))
        else:
            reports = [_one_sweep_config(p) for p in pairs]
    counts = {}
    rows = []
    for k, rep in enumerate(reports):
        for r in rep.per_index:
            c = counts.setdefault(r.family, {"records": 0, "violations": 0, "configs_violated": 0,
                                             "min_slack": float("inf")})
            c["records"] += 1
            c["min_slack"] = min(c["min_slack"], r.slack)
            if not r.satisfied:
                c["violations"] += 1
                rows.append((k, r.family, r.i, r.numeric, r.bound, r.slack))
        for fam in {r.family for r in rep.violations}:
            counts[fam]["configs_violated"] += 1
    out = Path(args.out or os.environ.get("HRB_OUT") or "hrb_out")
    files = [hio.write_json(out / "bounds_sweep.json", {"hrb_schema": 1, "count": args.count, "seed": seed,
                                                         "families": counts,
                                                         "configs": [r.config_summary for r in reports]}),
             hio.write_csv(out / "bounds_sweep_violations.csv",
                           ["config", "family", "i", "numeric", "bound", "slack"], rows)]
    hio.write_json(out / "manifest.json", hio.manifest(out, files, {"command": "bounds-sweep"}))
    for fam in sorted(counts):
        c = counts[fam]
        print(f"{fam:24s} records={c['records']:6d} violations={c['violations']:4d} "
              f"configs={c['configs_violated']:3d} min_slack={c['min_slack']:.3e}")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="hyperribbon", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", type=Path, help="RunConfig JSON file")
            sp.add_argument("--preset", help=f"one of {', '.join(sorted(PRESETS))}")
        sp.add_argument("--out", type=Path, help="output directory (default $HRB_OUT or ./hrb_out)")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--seed", type=int, help="overrides the config seed")

    sp = sub.add_parser("gen", help="synthesize a dataset")
    common(sp)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("run", help="train, compute PCA spectra and check bounds")
    common(sp)
    sp.add_argument("--mode", choices=sorted(PCA_MODES), help="overrides pca.mode")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("phase", help="hyper-ribbon dimension phase diagram")
    common(sp)
    sp.set_defaults(func=cmd_phase)

    sp = sub.add_parser("spectrum", help="sloppy slope of a feature CSV")
    sp.add_argument("path", type=Path)
    sp.add_argument("--fit-floor", type=float, default=1e-12)
    sp.add_argument("--center", action=argparse.BooleanOptionalAction, default=True,
                    help="subtract the feature mean before the spectrum (default on)")
    common(sp, config=False)
    sp.set_defaults(func=cmd_spectrum)

    sp = sub.add_parser("bounds-sweep", help="randomized bound dominance sweep")
    sp.add_argument("--count", type=int, default=100)
    common(sp, config=False)
    sp.set_defaults(func=cmd_bounds_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with warnings.catch_warnings():
            # alpha = 1/lambda_1 is common in presets; say so once
            warnings.simplefilter("once", StepSizeWarning)
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (hio.DataIOError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
