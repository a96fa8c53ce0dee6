"""Command-line interface: gen-data, train, estimate, simulate, transform,
evaluate, experiment.

Exit codes: 0 success, 2 configuration/usage error, 3 numeric failure.
Every command prints the seed and config digest it ran with and drops a
manifest.json in its output directory sufficient to re-run it bit-identically.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import __version__, geo, metrics
from .config import ExperimentConfig, default_config_digest, load_config
from .core import (
    EnvelopeImage,
    Grid2D,
    NoiseModel,
    NumericError,
    ParameterMap,
    RfImage,
    ScattererMap,
    TrfMap,
    coarse_axial_grid,
    make_rng,
    rf_sample_spacing_mm,
)
from .estimators import WienerConfig, sample_env, scat_param, scat_rec, wiener_trf
from .experiment import build_bank, estimate_representations, run_experiment
from .forward import add_noise, bmode, convolve, envelope, sample_scatterers, DepthConvOperator
from .io import grid_of, load_tensor, save_pgm, save_tensor
from .metrics import HistogramConfig, RegionPair
from .neural.data import BatchGenerator, reference_envelope_mean
from .neural.network import load_weights, save_weights
from .neural.training import train
from .phantoms import ShapeGenConfig, generate_random_parameter_map

_GEN_DATA_STREAM = 20


def _write_manifest(out_dir: Path, command: str, seed: int, digest: str, extra=None):
    doc = {
        "command": command,
        "seed": seed,
        "config_digest": digest,
        "version": __version__,
    }
    if extra:
        doc.update(extra)
    (out_dir / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def _write_csv(path: Path, rows: list[dict], columns: list[str]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    return v


def _load_cfg(args) -> tuple[ExperimentConfig, str]:
    if args.config:
        cfg, digest = load_config(args.config)
    else:
        cfg = ExperimentConfig()
        digest = default_config_digest(cfg)
    if args.seed is not None:
        cfg = _override_seed(cfg, args.seed)
    return cfg, digest


def _override_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    from dataclasses import replace

    return replace(cfg, seed=seed)


def _announce(args, cfg, digest):
    print(f"seed={cfg.seed} config={digest}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args, cfg: ExperimentConfig, digest: str) -> int:
    out = _out_dir(args)
    d = rf_sample_spacing_mm(cfg.acquisition.fs_mhz, cfg.acquisition.c_m_per_s)
    g = cfg.gen_data
    coarse = Grid2D(g.n_lateral, g.n_coarse_axial, d, d * cfg.model.R)
    shape_cfg = ShapeGenConfig()
    files = []
    for i in range(g.count):
        rng = make_rng(cfg.seed, _GEN_DATA_STREAM, i)
        pm = generate_random_parameter_map(shape_cfg, coarse, rng)
        name = f"map_{i:05d}.tensor"
        save_tensor(out / name, pm.mu.astype(np.float32),
                    (coarse.spacing_axial, coarse.spacing_lateral), "parameter_map")
        files.append(name)
        if g.with_envelopes:
            fine = Grid2D(g.n_lateral, g.n_coarse_axial * cfg.model.R, d, d)
            bank = build_bank(cfg, fine)
            sc, rf, env = _simulate_pm(pm, cfg, fine, bank, rng)
            save_tensor(out / f"env_{i:05d}.tensor", env.values.astype(np.float32),
                        (d, d), "envelope")
    _write_manifest(out, "gen-data", cfg.seed, digest, {"count": g.count, "files": files})
    print(f"wrote {g.count} parameter maps to {out}")
    return 0


def _simulate_pm(pm, cfg, fine, bank, rng):
    sc = sample_scatterers(pm, cfg.model, fine, rng)
    rf = add_noise(convolve(sc, bank), cfg.noise, rng)
    return sc, rf, envelope(rf)


def cmd_train(args, cfg: ExperimentConfig, digest: str) -> int:
    out = _out_dir(args)
    if args.seed is not None:
        cfg.train.seed = cfg.seed
    gen = BatchGenerator(cfg.data, cfg.train.seed, cfg.train.batch_size)
    weights, history = train(
        cfg.train, gen, R=cfg.data.R, prefetch=not args.deterministic, log=print
    )
    weights.reference_mean = reference_envelope_mean(cfg.data, cfg.train.seed)
    save_weights(out / "weights.bin", weights)
    rows = [
        {"iteration": int(r[0]), "train_loss": float(r[1]), "val_loss": float(r[2])}
        for r in history
    ]
    _write_csv(out / "loss_history.csv", rows, ["iteration", "train_loss", "val_loss"])
    _write_manifest(out, "train", cfg.train.seed, digest,
                    {"iterations": cfg.train.iterations})
    print(f"weights -> {out / 'weights.bin'}")
    return 0


def _image_from_tensor(path):
    values, spacing, role = load_tensor(path)
    return values.astype(np.float64), grid_of(values, spacing), role


def cmd_estimate(args, cfg: ExperimentConfig, digest: str) -> int:
    out = _out_dir(args)
    values, grid, role = _image_from_tensor(args.image)
    spacing = (grid.spacing_axial, grid.spacing_lateral)
    method = args.method
    rng = make_rng(cfg.seed, 11, 0)
    if method == "sample-env":
        sc = sample_env(EnvelopeImage(grid, np.abs(values)), cfg.model, grid, rng)
        save_tensor(out / "estimate_sample-env.tensor", sc.amplitudes, spacing, "scatterer_map")
    elif method == "trf":
        bank = build_bank(cfg, grid)
        nsr = cfg.estimators.wiener_nsr
        if nsr is None:
            nsr = cfg.noise.level**2
        trf = wiener_trf(RfImage(grid, values), bank.entries[len(bank.entries) // 2][1],
                         WienerConfig(nsr))
        save_tensor(out / "estimate_trf.tensor", trf.values, spacing, "trf")
    elif method == "scat-rec":
        bank = build_bank(cfg, grid)
        result = scat_rec(RfImage(grid, values), bank, grid, cfg.estimators.rlad)
        save_tensor(out / "estimate_scat-rec.tensor", result.scatterers.amplitudes,
                    spacing, "scatterer_map")
        trace_rows = [
            {"iteration": i, "objective": float(v)}
            for i, v in enumerate(result.objective_trace)
        ]
        _write_csv(out / "objective_trace.csv", trace_rows, ["iteration", "objective"])
        if not result.converged:
            print("warning: RLAD did not reach its gap tolerance; best iterate returned")
    elif method == "scat-param":
        if not cfg.estimators.weights_file:
            raise ValueError("scat-param requires estimators.weights_file in the config")
        weights = load_weights(cfg.estimators.weights_file)
        pm, sc = scat_param(EnvelopeImage(grid, np.abs(values)), weights, cfg.model, rng)
        save_tensor(out / "estimate_scat-param.tensor", sc.amplitudes, spacing, "scatterer_map")
        save_tensor(out / "estimate_scat-param_pm.tensor", pm.mu,
                    (pm.grid.spacing_axial, pm.grid.spacing_lateral), "parameter_map")
    else:
        raise ValueError(f"unknown method {method!r}")
    _write_manifest(out, "estimate", cfg.seed, digest, {"method": method, "input_role": role})
    print(f"estimate ({method}) -> {out}")
    return 0


def cmd_simulate(args, cfg: ExperimentConfig, digest: str) -> int:
    out = _out_dir(args)
    values, grid, role = _image_from_tensor(args.map)
    rng = make_rng(cfg.seed, 12)
    if role == "parameter_map":
        fine_grid = Grid2D(
            grid.n_lateral, grid.n_axial * cfg.model.R,
            grid.spacing_lateral, grid.spacing_axial / cfg.model.R,
        )
        bank = build_bank(cfg, fine_grid)
        pm = ParameterMap(grid, np.clip(values, 0.0, 1.0))
        sc, rf, env = _simulate_pm(pm, cfg, fine_grid, bank, rng)
        save_tensor(out / "scatterers.tensor", sc.amplitudes,
                    (fine_grid.spacing_axial, fine_grid.spacing_lateral), "scatterer_map")
    else:
        bank = build_bank(cfg, grid)
        op = DepthConvOperator(bank, grid)
        rf = add_noise(RfImage(grid, op.apply(values)), cfg.noise, rng)
        env = envelope(rf)
        fine_grid = grid
    spacing = (fine_grid.spacing_axial, fine_grid.spacing_lateral)
    save_tensor(out / "rf.tensor", rf.values, spacing, "rf")
    save_tensor(out / "envelope.tensor", env.values, spacing, "envelope")
    save_pgm(out / "bmode.pgm", bmode(env))
    _write_manifest(out, "simulate", cfg.seed, digest, {"input_role": role})
    print(f"simulation -> {out}")
    return 0


def cmd_transform(args, cfg: ExperimentConfig, digest: str) -> int:
    out = _out_dir(args)
    values, grid, role = _image_from_tensor(args.map)
    if (args.rotate is None) == (args.compress is None):
        raise ValueError("specify exactly one of --rotate or --compress")
    center = grid.center()
    if args.rotate is not None:
        t = geo.rotation(args.rotate, center)
    else:
        t = geo.compression(args.compress, center)
    if role == "scatterer_map":
        moved = geo.transform_scatterers(ScattererMap(grid, values), t).amplitudes
    else:
        moved = geo.transform_trf(TrfMap(grid, values), t).values
    save_tensor(out / "transformed.tensor", moved,
                (grid.spacing_axial, grid.spacing_lateral), role)
    _write_manifest(out, "transform", cfg.seed, digest,
                    {"rotate": args.rotate, "compress": args.compress, "input_role": role})
    print(f"transform -> {out / 'transformed.tensor'}")
    return 0


def cmd_evaluate(args, cfg: ExperimentConfig, digest: str) -> int:
    out = _out_dir(args)
    truth, grid, _ = _image_from_tensor(args.truth)
    sim, _, _ = _image_from_tensor(args.sim)
    if truth.shape != sim.shape:
        raise ValueError("truth and sim images must share a shape")
    row = {"method": args.method or "sim"}
    row["delta_I"] = metrics.delta_intensity(truth, sim)
    sim_eq = metrics.brightness_equalize(sim, truth)
    row["delta_SNR"] = metrics.delta_snr(truth, sim_eq)
    if args.regions:
        labels, _, _ = _image_from_tensor(args.regions)
        regions = RegionPair(labels == 1, labels == 2)
        row["delta_CNR"] = metrics.delta_cnr(truth, sim_eq, regions)
    else:
        row["delta_CNR"] = float("nan")
    row["KL_mean"], _ = metrics.kl_patchwise(
        truth, sim_eq, cfg.patch_mm, (grid.spacing_axial, grid.spacing_lateral),
        HistogramConfig(bins=cfg.histogram_bins),
    )
    columns = ["method", "delta_I", "delta_SNR", "delta_CNR", "KL_mean"]
    _write_csv(out / "metrics.csv", [row], columns)
    _write_manifest(out, "evaluate", cfg.seed, digest)
    print(f"metrics -> {out / 'metrics.csv'}")
    return 0


def cmd_experiment(args, cfg: ExperimentConfig, digest: str) -> int:
    out = _out_dir(args)
    result = run_experiment(cfg, args.kind, log=print)
    columns = ["method", "transform_value", "delta_I", "delta_SNR", "delta_CNR", "KL_mean"]
    _write_csv(out / "metrics.csv", result.rows, columns)
    sum_cols = ["method"] + [
        f"{k}_{s}" for k in ("delta_I", "delta_SNR", "delta_CNR", "KL_mean")
        for s in ("mean", "med", "max")
    ]
    _write_csv(out / "summary.csv", result.summary, sum_cols)
    if result.aliasing:
        _write_csv(out / "aliasing.csv", result.aliasing,
                   ["method", "transform_value", "band_excess", "aliasing_flag"])
    _write_manifest(out, f"experiment-{args.kind}", cfg.seed, digest,
                    {"sweep": result.sweep_values})
    print(f"experiment ({args.kind}) -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="scatsim",
        description="Ultrasound speckle simulation and scatterer-representation estimation",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="YAML config file")
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        sp.add_argument("--deterministic", action="store_true",
                        help="single-threaded, serialized execution")
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("gen-data", help="generate random parameter maps")
    common(sp)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train the parameter-map regressor")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("estimate", help="estimate a scatterer representation")
    common(sp)
    sp.add_argument("--method", required=True,
                    choices=["sample-env", "trf", "scat-rec", "scat-param"])
    sp.add_argument("image", help="input image tensor file (envelope or rf)")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("simulate", help="simulate images from a map")
    common(sp)
    sp.add_argument("map", help="parameter/scatterer/trf tensor file")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("transform", help="rotate or compress a map")
    common(sp)
    sp.add_argument("--rotate", type=float, default=None, help="angle in degrees")
    sp.add_argument("--compress", type=float, default=None, help="axial strain in [0,0.9)")
    sp.add_argument("map", help="tensor file to transform")
    sp.set_defaults(func=cmd_transform)

    sp = sub.add_parser("evaluate", help="compare simulated vs truth envelopes")
    common(sp)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--sim", required=True)
    sp.add_argument("--regions", default=None,
                    help="label tensor (1 = region one, 2 = region two) for CNR")
    sp.add_argument("--method", default=None, help="method name recorded in the CSV")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("experiment", help="run a rotation/compression sweep")
    common(sp)
    sp.add_argument("--kind", required=True, choices=["rotation", "compression"])
    sp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg, digest = _load_cfg(args)
        _announce(args, cfg, digest)
        if args.deterministic:
            with threadpool_limits(limits=1):
                return args.func(args, cfg, digest)
        return args.func(args, cfg, digest)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
