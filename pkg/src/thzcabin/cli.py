"""Command-line front end for the tracing / extraction / planning pipeline.

Every randomized subcommand requires an explicit --seed; artifacts are CSV or
JSON with a version header and 6-significant-digit floats, so repeated runs
with the same inputs are byte-identical. --plot renders matplotlib figures
next to the delimited outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from ._version import __version__
from . import channel, hybrid, planning
from .optimize import OptProblem, stage1_screen, stage2_refine
from .raytrace import HumanBox, PathRecord, TraceConfig, four_sector_merge, trace
from .rf import fspl_db
from .scene import (
    Box,
    DegenerateFacetError,
    MissingMaterialError,
    SceneFormatError,
    load_material_db,
    load_scene,
)

_ERROR_CODES = [
    (FileNotFoundError, "ENOENT"),
    (MissingMaterialError, "EMAT"),
    (DegenerateFacetError, "EGEOM"),
    (SceneFormatError, "EPARSE"),
    (channel.LatticeError, "ELATTICE"),
    (planning.SamplingError, "ESAMPLE"),
    (planning.RateIntegralError, "ERATE"),
    (json.JSONDecodeError, "EPARSE"),
    (KeyError, "ENAME"),
    (ValueError, "EDATA"),
]


def _point(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected x,y,z")
    return tuple(parts)


def _band(text: str) -> tuple[float, float, int]:
    try:
        f0, f1, n = text.split(":")
        return float(f0), float(f1), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError("expected f_start:f_stop:n_points")


def _human_box(text: str) -> HumanBox:
    parts = [float(p) for p in text.split(",")]
    if len(parts) not in (6, 7):
        raise argparse.ArgumentTypeError(
            "expected xmin,ymin,zmin,xmax,ymax,zmax[,loss_db]"
        )
    loss = parts[6] if len(parts) == 7 else 10.0
    return HumanBox(Box(tuple(parts[0:3]), tuple(parts[3:6])), loss)


def _range_spec(text: str) -> np.ndarray:
    lo, hi, step = (float(p) for p in text.split(":"))
    return np.arange(lo, hi + 1e-9, step)


def _load_scene_arg(args):
    materials = load_material_db(args.materials) if args.materials else None
    return load_scene(args.scene, materials)


def _resolve_terminal(scene, text):
    try:
        return scene.terminal(text)
    except KeyError:
        if "," in text:
            return np.asarray(_point(text), dtype=float)
        raise


def _trace_config(args) -> TraceConfig:
    return TraceConfig(
        frequency_hz=args.f,
        max_order=args.max_order,
        molecular_absorption_db_per_m=args.absorption,
        human_boxes=tuple(args.human or ()),
        tx_power_dbm=args.tx_power,
        tx_gain_db=args.tx_gain,
        rx_gain_db=args.rx_gain,
    )


def _plan_config(args, human=()) -> planning.PlanConfig:
    return planning.PlanConfig(
        tx_power_dbm=args.tx_power,
        tx_gain_db=args.tx_gain,
        noise_psd_dbm_per_hz=args.noise_psd,
        bandwidth_hz=args.bandwidth,
        noise_figure_db=args.noise_figure,
        pathloss_model=args.pathloss,
        association=args.association,
        frequency_hz=args.f,
        max_order=args.max_order,
        molecular_absorption_db_per_m=args.absorption,
        human_boxes=tuple(human or ()),
    )


def _mpcs_as_anchor_records(mpcs: channel.MpcSet) -> list[PathRecord]:
    """Rebuild anchor path records from a traced CSV (facet ids synthesized)."""
    records = []
    for row, m in enumerate(mpcs):
        power = m.power_db
        chain = tuple((row * 8 + k, mat) for k, mat in enumerate(m.chain))
        records.append(
            PathRecord(
                tau=m.tau,
                azimuth_deg=m.azimuth_deg,
                zenith_deg=m.zenith_deg,
                power_db=power,
                complex_gain=complex(10.0 ** (power / 20.0), 0.0),
                bounce_chain=chain,
            )
        )
    return records


# ---------------------------------------------------------------------------
# subcommands

def _cmd_trace(args) -> int:
    scene = _load_scene_arg(args)
    tx = _resolve_terminal(scene, args.tx)
    rx = _resolve_terminal(scene, args.rx)
    cfg = _trace_config(args)
    if args.four_sector:
        paths = four_sector_merge(scene, tx, rx, cfg, args.radius)
    else:
        paths = trace(scene, tx, rx, cfg)
    channel.save_paths_csv(paths, args.out)
    if args.plot:
        from . import plots

        plots.save_pdp_figure(paths, Path(args.out).with_suffix(".png"))
    return 0


def _cmd_synth(args) -> int:
    mpcs = channel.load_mpc_csv(args.paths)
    f0, f1, n = args.band
    cfr = channel.synthesize_cfr(
        mpcs,
        f0,
        f1,
        n,
        azimuth_bins=channel.default_azimuth_bins(args.az_step),
        zenith_bins=channel.default_zenith_bins(args.zen_step, args.zen_min, args.zen_max),
    )
    channel.save_cfr_csv(cfr, args.out)
    return 0


def _cmd_extract(args) -> int:
    cfr = channel.load_cfr_csv(args.cfr)
    grid = channel.cfr_to_cir(cfr, window=args.window)
    mpcs = channel.extract_mpcs(
        grid,
        noise_floor_db=args.noise_floor_db,
        min_separation=args.min_sep,
        delay_only=args.delay_only,
    )
    channel.save_mpcset_csv(mpcs, args.out)
    if args.padp_out:
        channel.save_padp_csv(grid, args.padp_out)
    if args.plot:
        from . import plots

        plots.save_padp_figure(grid, Path(args.out).with_suffix(".png"), mpcs=mpcs)
    return 0


def _cmd_fit(args) -> int:
    measured = channel.load_mpc_csv(args.measured)
    traced = channel.load_mpc_csv(args.traced)
    anchors = _mpcs_as_anchor_records(traced)
    model = hybrid.cluster_mpcs(
        measured,
        anchors,
        gates=(args.gate_delay_ns * 1e-9, args.gate_az, args.gate_zen),
        carrier_hz=args.f,
    )
    hybrid.save_hybrid_model(model, args.out)
    return 0


def _cmd_identify(args) -> int:
    model = hybrid.load_hybrid_model(args.model)
    db = load_material_db(args.materials)
    labeled = hybrid.identify_clusters(model, db, args.tolerance)
    lines = [
        f"# version: thzcabin {__version__}",
        "cluster,kind,mean_delay_ns,mean_power_db,rl_db,material",
    ]
    for kind, clusters in (("rt", labeled.rt_clusters), ("non_rt", labeled.non_rt_clusters)):
        for i, c in enumerate(clusters, start=1):
            rl = -(c.mean_power_db + float(fspl_db(labeled.carrier_hz, c.mean_delay)))
            label = "+".join(c.identified_materials)
            lines.append(
                f"{i},{kind},{c.mean_delay * 1e9:.6g},{c.mean_power_db:.6g},"
                f"{rl:.6g},{label}"
            )
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.model_out:
        hybrid.save_hybrid_model(labeled, args.model_out)
    return 0


def _cmd_synthrel(args) -> int:
    model = hybrid.load_hybrid_model(args.model)
    real = hybrid.synthesize_realization(model, args.n_subpaths, args.seed)
    channel.save_mpcset_csv(real, args.out)
    return 0


def _cmd_covermap(args) -> int:
    scene = _load_scene_arg(args)
    txs = [_resolve_terminal(scene, t) for t in args.tx.split(",")]
    cfg = _plan_config(args, args.human)
    cmap = planning.coverage_map(scene, txs, cfg, args.z, args.res, workers=args.workers)
    planning.save_coverage_map_csv(cmap, args.out)
    if args.plot:
        from . import plots

        plots.save_coverage_map_figure(cmap, Path(args.out).with_suffix(".png"), txs)
    return 0


def _cmd_plan(args) -> int:
    scene = _load_scene_arg(args)
    txs = [_resolve_terminal(scene, t) for t in args.tx.split(",")]
    cfg = _plan_config(args, args.human)
    lo = np.asarray(scene.bounds.lo)
    hi = np.asarray(scene.bounds.hi)
    mean = np.asarray(args.rx_mean) if args.rx_mean else 0.5 * (lo + hi)
    std = np.asarray(args.rx_std) if args.rx_std else (hi - lo) / 6.0
    pop = planning.sample_rx_population(scene, args.rx_count, mean, std, args.rx_seed)
    sinr, assoc = planning.associated_sinr_db(scene, txs, pop.points, cfg, workers=args.workers)
    thresholds = args.thresholds
    probs = planning.coverage_curve(sinr, thresholds, pop.weights)
    planning.save_coverage_curve_csv(thresholds, probs, args.out_curve)
    rate = planning.average_rate_bps(
        planning.make_coverage_function(sinr, pop.weights), cfg.bandwidth_hz, len(txs)
    )
    summary = {
        "version": f"thzcabin {__version__}",
        "tx": args.tx.split(","),
        "rx_count": int(len(pop)),
        "rx_seed": args.rx_seed,
        "unreachable": int(np.sum(assoc < 0)),
        "average_rate_bps": rate,
        "coverage_at_10db": planning.coverage_probability(sinr, 10.0, pop.weights),
    }
    Path(args.out_summary).write_text(json.dumps(summary, indent=1), encoding="utf-8")
    if args.plot:
        from . import plots

        plots.save_coverage_curves_figure(
            {args.tx: (thresholds, probs)}, Path(args.out_curve).with_suffix(".png")
        )
    return 0


def _cmd_optimize(args) -> int:
    scene = _load_scene_arg(args)
    cfg = _plan_config(args, args.human)
    lo = np.asarray(scene.bounds.lo)
    hi = np.asarray(scene.bounds.hi)
    mean = np.asarray(args.rx_mean) if args.rx_mean else 0.5 * (lo + hi)
    std = np.asarray(args.rx_std) if args.rx_std else (hi - lo) / 6.0
    pop = planning.sample_rx_population(scene, args.rx_count, mean, std, args.seed)
    names = args.candidates.split(",")
    candidates = {n: tuple(scene.terminal(n)) for n in names}
    problem = OptProblem(
        scene=scene,
        cfg=cfg,
        rx_pop=pop,
        n_tx=args.n,
        bounds=scene.bounds,
        coverage_threshold_gamma_db=args.gamma,
        min_coverage_p_th=args.pth,
        candidates=candidates,
    )
    report = stage1_screen(problem)
    result = stage2_refine(problem, report.best.coords, tol=args.tol, max_iter=args.max_iter)
    doc = {
        "version": f"thzcabin {__version__}",
        "stage1": [
            {
                "names": list(e.names),
                "objective_bps": e.objective_bps,
                "rate_bps": e.rate_bps,
                "coverage_at_gamma": e.coverage_at_gamma,
                "feasible": e.feasible,
            }
            for e in report.entries
        ],
        "coords": [list(c) for c in result.coords],
        "objective_bps": result.objective_bps,
        "rate_bps": result.rate_bps,
        "feasible": result.feasible,
        "alternative_coords": None
        if result.alternative_coords is None
        else [list(c) for c in result.alternative_coords],
        "alternative_objective_bps": result.alternative_objective_bps,
        "evaluations": result.n_evaluations,
        "converged": result.converged,
    }
    Path(args.out).write_text(json.dumps(doc, indent=1), encoding="utf-8")
    if args.map_out:
        cmap = planning.coverage_map(
            scene, result.coords, cfg, args.z, args.map_res, workers=args.workers
        )
        planning.save_coverage_map_csv(cmap, args.map_out)
        if args.plot:
            from . import plots

            plots.save_coverage_map_figure(
                cmap, Path(args.map_out).with_suffix(".png"), result.coords
            )
    return 0


# ---------------------------------------------------------------------------
# parser assembly

def _add_scene_args(p):
    p.add_argument("--scene", required=True, help="scene JSON file")
    p.add_argument("--materials", help="material database CSV (scene file may embed one)")


def _add_rf_args(p):
    p.add_argument("--f", type=float, default=300e9, help="carrier frequency in Hz")
    p.add_argument("--max-order", type=int, default=2, help="maximum reflection order")
    p.add_argument("--absorption", type=float, default=0.005,
                   help="molecular absorption in dB/m")
    p.add_argument("--human", type=_human_box, action="append",
                   help="human blockage box xmin,ymin,zmin,xmax,ymax,zmax[,loss_db]")


def _add_budget_args(p, tx_power, tx_gain):
    p.add_argument("--tx-power", type=float, default=tx_power, help="Tx power in dBm")
    p.add_argument("--tx-gain", type=float, default=tx_gain, help="Tx gain in dB")


def _add_plan_args(p):
    _add_rf_args(p)
    _add_budget_args(p, 10.0, 25.0)
    p.add_argument("--bandwidth", type=float, default=20e9, help="bandwidth in Hz")
    p.add_argument("--noise-psd", type=float, default=-174.0,
                   help="noise PSD in dBm/Hz")
    p.add_argument("--noise-figure", type=float, default=0.0, help="noise figure in dB")
    p.add_argument("--pathloss", choices=["raytraced", "statistical"],
                   default="raytraced")
    p.add_argument("--association", choices=["max_power", "nearest"],
                   default="max_power")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thzcabin",
        description="THz in-cabin ray tracing, channel modeling, and wireless planning",
    )
    parser.add_argument("--version", action="version", version=f"thzcabin {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", help="ray-trace one Tx-Rx link to an MPC CSV")
    _add_scene_args(p)
    p.add_argument("--tx", required=True, help="Tx name or x,y,z")
    p.add_argument("--rx", required=True, help="Rx name or x,y,z")
    _add_rf_args(p)
    _add_budget_args(p, 0.0, 0.0)
    p.add_argument("--rx-gain", type=float, default=0.0, help="Rx gain in dB")
    p.add_argument("--four-sector", action="store_true",
                   help="merge four sector-filtered rotated Rx positions")
    p.add_argument("--radius", type=float, default=0.2,
                   help="azimuthal radius for --four-sector in m")
    p.add_argument("--out", default="mpc.csv")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=_cmd_trace)

    p = sub.add_parser("synth", help="synthesize a CFR sweep from an MPC CSV")
    p.add_argument("--paths", required=True, help="MPC CSV input")
    p.add_argument("--band", type=_band, default=(290e9, 310e9, 2001),
                   help="f_start:f_stop:n_points (default matches the 20 GHz sweep)")
    p.add_argument("--az-step", type=float, default=10.0)
    p.add_argument("--zen-step", type=float, default=10.0)
    p.add_argument("--zen-min", type=float, default=-90.0)
    p.add_argument("--zen-max", type=float, default=90.0)
    p.add_argument("--out", default="cfr.csv")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("extract", help="extract MPCs from a CFR sweep CSV")
    p.add_argument("--cfr", required=True, help="CFR CSV input")
    p.add_argument("--noise-floor-db", type=float, default=None)
    p.add_argument("--min-sep", type=int, default=3, help="peak separation in delay bins")
    p.add_argument("--window", choices=["rect", "hann"], default="rect")
    p.add_argument("--delay-only", action="store_true",
                   help="search each angle cell independently along delay")
    p.add_argument("--out", default="mpcs.csv")
    p.add_argument("--padp-out", help="also export the PADP matrix CSV")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("fit", help="cluster measured MPCs around traced anchors")
    p.add_argument("--measured", required=True, help="measured/extracted MPC CSV")
    p.add_argument("--traced", required=True, help="ray-traced MPC CSV")
    p.add_argument("--gate-delay-ns", type=float, default=0.5)
    p.add_argument("--gate-az", type=float, default=20.0)
    p.add_argument("--gate-zen", type=float, default=20.0)
    p.add_argument("--f", type=float, default=300e9)
    p.add_argument("--out", default="model.json")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("identify", help="identify bounce materials per cluster")
    p.add_argument("--model", required=True, help="hybrid model JSON")
    p.add_argument("--materials", required=True, help="material database CSV")
    p.add_argument("--tolerance", type=float, default=3.0, help="match tolerance in dB")
    p.add_argument("--out", default="materials_identified.csv")
    p.add_argument("--model-out", help="also write the labeled model JSON")
    p.set_defaults(func=_cmd_identify)

    p = sub.add_parser("realize", help="draw a stochastic realization from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--n-subpaths", type=int, default=10)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default="realization.csv")
    p.set_defaults(func=_cmd_synthrel)

    p = sub.add_parser("covermap", help="SINR/association map on a z plane")
    _add_scene_args(p)
    p.add_argument("--tx", required=True, help="comma-separated Tx names or points")
    p.add_argument("--z", type=float, default=1.0)
    p.add_argument("--res", type=float, default=0.05, help="cell size in m")
    _add_plan_args(p)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default="covermap.csv")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=_cmd_covermap)

    p = sub.add_parser("plan", help="coverage and rate over a sampled Rx population")
    _add_scene_args(p)
    p.add_argument("--tx", required=True)
    p.add_argument("--rx-seed", type=int, required=True, help="population seed")
    p.add_argument("--rx-count", type=int, default=80)
    p.add_argument("--rx-mean", type=_point, default=None)
    p.add_argument("--rx-std", type=_point, default=None)
    p.add_argument("--thresholds", type=_range_spec, default=np.arange(-10.0, 40.5, 1.0),
                   help="lo:hi:step in dB")
    _add_plan_args(p)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out-curve", default="coverage_curve.csv")
    p.add_argument("--out-summary", default="plan_summary.json")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("optimize", help="two-stage Tx placement optimization")
    _add_scene_args(p)
    p.add_argument("--candidates", required=True, help="comma-separated Tx names")
    p.add_argument("--n", type=int, default=1, help="number of transmitters")
    p.add_argument("--gamma", type=float, default=10.0,
                   help="coverage SINR threshold in dB")
    p.add_argument("--pth", type=float, default=0.9, help="required coverage probability")
    p.add_argument("--tol", type=float, default=1e-4, help="Powell tolerance")
    p.add_argument("--max-iter", type=int, default=30)
    p.add_argument("--seed", type=int, required=True, help="Rx population seed")
    p.add_argument("--rx-count", type=int, default=80)
    p.add_argument("--rx-mean", type=_point, default=None)
    p.add_argument("--rx-std", type=_point, default=None)
    _add_plan_args(p)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default="optimize_result.json")
    p.add_argument("--map-out", help="also write a coverage map CSV for the result")
    p.add_argument("--map-res", type=float, default=0.05)
    p.add_argument("--z", type=float, default=1.0)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=_cmd_optimize)

    return parser


def _apply_config_file(parser, argv):
    """JSON config values become parser defaults; explicit flags still win.

    Config keys use flag names with underscores and already-typed JSON values
    (numbers, strings, booleans).
    """
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return argv
    path = Path(known.config)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a JSON object")
    all_dests: set[str] = set()
    for sub_action in parser._subparsers._group_actions:
        for sp in sub_action.choices.values():
            dests = set()
            for action in sp._actions:
                dests.add(action.dest)
                if action.dest in doc:
                    action.required = False
            all_dests |= dests
            sp.set_defaults(**{k: v for k, v in doc.items() if k in dests})
    unknown = set(doc) - all_dests
    if unknown:
        raise ValueError(f"config keys match no flag: {sorted(unknown)}")
    out = []
    skip = False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == "--config":
            skip = True
            continue
        if tok.startswith("--config="):
            continue
        out.append(tok)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # argparse --help / usage errors
        return int(exc.code or 0)
    except tuple(t for t, _ in _ERROR_CODES) as exc:
        for typ, code in _ERROR_CODES:
            if isinstance(exc, typ):
                msg = str(exc).replace("\n", " ")
                print(f"ERR:{code}: {msg}", file=sys.stderr)
                return 1
        raise


if __name__ == "__main__":
    sys.exit(main())
