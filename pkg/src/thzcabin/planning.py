"""System-level evaluation: link budgets, SINR, coverage, and rate.

Per-link received power is the non-coherent power sum over all ray-traced
paths of the link (or a distance-based free-space expression in statistical
mode). Coverage counts the weighted fraction of receiver positions whose
SINR exceeds a threshold; unreachable receivers carry SINR = -inf and stay
uncovered at every threshold.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._version import __version__
from .raytrace import HumanBox, TraceConfig, trace_batch
from .rf import SPEED_OF_LIGHT, fspl_db
from .scene import Scene

RAYTRACED = "raytraced"
STATISTICAL = "statistical"
MAX_POWER = "max_power"
NEAREST = "nearest"


class UnreachableServingTx(RuntimeError):
    """The serving transmitter has no propagation path to the receiver."""


class RateIntegralError(RuntimeError):
    """The coverage curve does not decay; the rate integral cannot converge."""


class SamplingError(RuntimeError):
    """Rejection sampling could not place the requested points in bounds."""


@dataclass(frozen=True)
class PlanConfig:
    """Link budget and evaluation conventions for planning runs.

    The default budget (10 dBm transmit power, 25 dB antenna gain, thermal
    noise over the full 20 GHz sweep) is a fixture calibration that puts
    cabin-scale SINRs in the tens of dB; absolute rates depend on it.
    """

    tx_power_dbm: float = 10.0
    tx_gain_db: float = 25.0
    noise_psd_dbm_per_hz: float = -174.0
    bandwidth_hz: float = 20e9
    noise_figure_db: float = 0.0
    pathloss_model: str = RAYTRACED
    fading: str = "deterministic_unity"
    fading_sigma_db: float = 0.0
    association: str = MAX_POWER
    frequency_hz: float = 300e9
    max_order: int = 2
    molecular_absorption_db_per_m: float = 0.005
    human_boxes: tuple[HumanBox, ...] = ()

    def __post_init__(self):
        if self.bandwidth_hz <= 0.0:
            raise ValueError("bandwidth must be > 0")
        if self.fading_sigma_db < 0.0:
            raise ValueError("fading sigma must be >= 0")
        if self.pathloss_model not in (RAYTRACED, STATISTICAL):
            raise ValueError(f"unknown pathloss model {self.pathloss_model!r}")
        if self.association not in (MAX_POWER, NEAREST):
            raise ValueError(f"unknown association rule {self.association!r}")

    @property
    def noise_power_dbm(self) -> float:
        return (
            self.noise_psd_dbm_per_hz
            + 10.0 * math.log10(self.bandwidth_hz)
            + self.noise_figure_db
        )

    def trace_config(self) -> TraceConfig:
        return TraceConfig(
            frequency_hz=self.frequency_hz,
            max_order=self.max_order,
            molecular_absorption_db_per_m=self.molecular_absorption_db_per_m,
            human_boxes=self.human_boxes,
            tx_power_dbm=self.tx_power_dbm,
            tx_gain_db=self.tx_gain_db,
        )


@dataclass(frozen=True)
class RxPopulation:
    points: np.ndarray  # (n, 3) meters
    weights: np.ndarray | None = None  # probability masses summing to 1

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)
        if pts.shape[0] < 1:
            raise ValueError("population needs at least one point")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (pts.shape[0],) or abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
                raise ValueError("weights must be a probability vector over the points")
            object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return int(self.points.shape[0])


def sample_rx_population(
    scene: Scene, n: int, mean, stddev, seed: int, max_rejections: int = 1_000_000
) -> RxPopulation:
    """Truncated-normal receiver cloud inside the scene bounds (rejection)."""
    if n < 1:
        raise ValueError("need n >= 1")
    mean = np.asarray(mean, dtype=float)
    stddev = np.asarray(stddev, dtype=float)
    rng = np.random.default_rng(seed)
    if np.all(stddev == 0.0):
        if not scene.bounds.contains(mean):
            raise SamplingError("degenerate population mean lies outside bounds")
        return RxPopulation(np.tile(mean, (n, 1)))
    points: list[np.ndarray] = []
    drawn = 0
    while len(points) < n:
        batch = rng.normal(mean, stddev, size=(max(n, 64), 3))
        drawn += batch.shape[0]
        inside = batch[np.asarray(scene.bounds.contains(batch))]
        points.extend(inside[: n - len(points)])
        if drawn > max_rejections:
            raise SamplingError(
                f"could not place {n} points after {drawn} draws; bounds too tight"
            )
    return RxPopulation(np.asarray(points))


def _statistical_power_dbm(cfg: PlanConfig, dist_m: np.ndarray, rng=None) -> np.ndarray:
    k_u = fspl_db(cfg.frequency_hz, dist_m / SPEED_OF_LIGHT)
    k_u = k_u + cfg.molecular_absorption_db_per_m * dist_m
    g_db = 0.0
    if cfg.fading == "lognormal":
        if rng is None:
            raise ValueError("lognormal fading requires a seeded generator")
        g_db = rng.normal(0.0, cfg.fading_sigma_db, size=np.shape(dist_m))
    return cfg.tx_power_dbm + cfg.tx_gain_db - k_u - g_db


def link_power_dbm(
    scene: Scene,
    txs: Sequence,
    rx_points,
    cfg: PlanConfig,
    workers: int = 1,
    rng=None,
) -> np.ndarray:
    """Received power matrix, shape (n_tx, n_rx); -inf marks no-path links."""
    rx_points = np.atleast_2d(np.asarray(rx_points, dtype=float))
    n_rx = rx_points.shape[0]
    txs = [np.asarray(t, dtype=float) for t in txs]
    out = np.full((len(txs), n_rx), -np.inf)

    if cfg.pathloss_model == STATISTICAL:
        for i, tx in enumerate(txs):
            d = np.linalg.norm(rx_points - tx, axis=1)
            if np.any(d == 0.0):
                raise ValueError("rx coincides with tx")
            out[i] = _statistical_power_dbm(cfg, d, rng)
        return out

    tcfg = cfg.trace_config()
    chunk = 256
    tasks = [
        (i, lo, min(lo + chunk, n_rx))
        for i in range(len(txs))
        for lo in range(0, n_rx, chunk)
    ]

    def _run(task):
        i, lo, hi = task
        return task, trace_batch(scene, txs[i], rx_points[lo:hi], tcfg)

    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            computed = list(pool.map(_run, tasks))
    else:
        computed = [_run(t) for t in tasks]

    for (i, lo, _hi), per_rx in computed:
        for j, paths in enumerate(per_rx):
            if paths:
                out[i, lo + j] = 10.0 * math.log10(
                    sum(10.0 ** (p.power_db / 10.0) for p in paths)
                )
    return out


def received_power_db(scene: Scene, tx, rx, cfg: PlanConfig) -> float | None:
    """Power-sum link budget for a single Tx-Rx pair; None when no path exists."""
    p = link_power_dbm(scene, [tx], np.asarray(rx, dtype=float)[None, :], cfg)[0, 0]
    return None if p == -np.inf else float(p)


SINR_CAP_DB = 90.0  # receiver dynamic-range ceiling; keeps the rate integral finite


def sinr_from_powers(powers_dbm: np.ndarray, serving_index: int, noise_dbm: float):
    """SINR per rx column given the (n_tx, n_rx) received power matrix.

    Values saturate at SINR_CAP_DB: a probe position nearly on top of a
    receiver would otherwise report an SINR no physical front end delivers.
    """
    lin = 10.0 ** (powers_dbm / 10.0)  # -inf maps to 0
    s = lin[serving_index]
    interf = lin.sum(axis=0) - s
    noise = 10.0 ** (noise_dbm / 10.0)
    with np.errstate(divide="ignore"):
        return np.minimum(10.0 * np.log10(s / (interf + noise)), SINR_CAP_DB)


def sinr_db(scene: Scene, txs: Sequence, serving_index: int, rx, cfg: PlanConfig) -> float:
    """SINR at one receiver with a designated serving transmitter."""
    if not (0 <= serving_index < len(txs)):
        raise ValueError("serving index out of range")
    powers = link_power_dbm(scene, txs, np.asarray(rx, dtype=float)[None, :], cfg)
    if powers[serving_index, 0] == -np.inf:
        raise UnreachableServingTx(f"no path from tx {serving_index} to rx")
    return float(sinr_from_powers(powers, serving_index, cfg.noise_power_dbm)[0])


def _associate(powers_dbm: np.ndarray, txs, rx_points, rule: str) -> np.ndarray:
    if rule == NEAREST:
        d = np.linalg.norm(
            np.asarray(rx_points)[None, :, :] - np.asarray(txs)[:, None, :], axis=2
        )
        assoc = d.argmin(axis=0)
    else:
        assoc = powers_dbm.argmax(axis=0)
    assoc = assoc.astype(int)
    assoc[np.all(powers_dbm == -np.inf, axis=0)] = -1
    return assoc


def associated_sinr_db(
    scene: Scene, txs: Sequence, rx_points, cfg: PlanConfig, workers: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """(sinr_db, associated_tx) per rx point under the config's association rule.

    Unreachable points get SINR -inf and association -1.
    """
    powers = link_power_dbm(scene, txs, rx_points, cfg, workers=workers)
    assoc = _associate(powers, txs, rx_points, cfg.association)
    noise = cfg.noise_power_dbm
    sinr = np.full(powers.shape[1], -np.inf)
    for i in range(len(txs)):
        sel = assoc == i
        if sel.any():
            sinr[sel] = sinr_from_powers(powers[:, sel], i, noise)
    return sinr, assoc


def coverage_probability(sinrs_db, threshold_db: float, weights=None) -> float:
    """Weighted fraction of the population with SINR strictly above threshold."""
    sinrs_db = np.asarray(sinrs_db, dtype=float)
    if sinrs_db.size == 0:
        raise ValueError("need at least one SINR sample")
    covered = sinrs_db > threshold_db
    if weights is None:
        return float(covered.mean())
    return float(np.asarray(weights, dtype=float)[covered].sum())


def coverage_curve(sinrs_db, thresholds_db, weights=None) -> np.ndarray:
    return np.asarray(
        [coverage_probability(sinrs_db, t, weights) for t in np.asarray(thresholds_db)]
    )


def make_coverage_function(sinrs_db, weights=None) -> Callable:
    """Pc over the linear SINR axis, built from sample points."""
    sinrs_db = np.asarray(sinrs_db, dtype=float)
    n = sinrs_db.size
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    finite = np.isfinite(sinrs_db)
    lin = 10.0 ** (sinrs_db[finite] / 10.0)
    order = np.argsort(lin)
    lin = lin[order]
    cum = np.concatenate([[0.0], np.cumsum(w[finite][order])])
    total = float(w[finite].sum())

    def pc(t):
        idx = np.searchsorted(lin, np.asarray(t, dtype=float), side="right")
        return total - cum[idx]

    return pc


def average_rate_bps(
    coverage_fn: Callable, b: float, n_tx: int, n_grid: int = 20001
) -> float:
    """B/(N ln 2) * integral of Pc(t)/(1+t) dt over the linear SINR axis.

    Trapezoid rule on a log-spaced grid with an adaptive upper cutoff where
    the coverage falls below 1e-6.
    """
    cutoff = None
    for exp in range(0, 10):
        t = 10.0 ** exp
        if coverage_fn(t) < 1e-6:
            cutoff = t
            break
    if cutoff is None:
        raise RateIntegralError("coverage does not decay below 1e-6 by t = 1e9")
    grid = np.logspace(-12.0, math.log10(cutoff), n_grid)
    pc = np.asarray(coverage_fn(grid), dtype=float)
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    integral = float(trapezoid(pc / (1.0 + grid), grid))
    return b / (n_tx * math.log(2.0)) * integral


@dataclass(frozen=True)
class CoverageMap:
    x_m: np.ndarray
    y_m: np.ndarray
    z_m: float
    sinr_db: np.ndarray  # (ny, nx), NaN where unreachable
    assoc: np.ndarray  # (ny, nx) int, -1 where unreachable

    @property
    def covered_fraction(self) -> Callable:
        def frac(threshold_db: float) -> float:
            return float(np.nanmean(np.where(np.isnan(self.sinr_db), -np.inf, self.sinr_db) > threshold_db))

        return frac


def coverage_map(
    scene: Scene,
    txs: Sequence,
    cfg: PlanConfig,
    z_plane: float,
    resolution: float,
    workers: int = 1,
) -> CoverageMap:
    """SINR and Tx association over a horizontal grid of cell centers."""
    if resolution <= 0.0:
        raise ValueError("resolution must be > 0")
    lo, hi = np.asarray(scene.bounds.lo), np.asarray(scene.bounds.hi)
    if not (lo[2] <= z_plane <= hi[2]):
        raise ValueError("z plane outside scene bounds")
    x = np.arange(lo[0] + resolution / 2.0, hi[0], resolution)
    y = np.arange(lo[1] + resolution / 2.0, hi[1], resolution)
    gx, gy = np.meshgrid(x, y)
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z_plane)])
    sinr, assoc = associated_sinr_db(scene, txs, pts, cfg, workers=workers)
    sinr = sinr.reshape(gy.shape)
    return CoverageMap(
        x_m=x,
        y_m=y,
        z_m=float(z_plane),
        sinr_db=np.where(np.isneginf(sinr), np.nan, sinr),
        assoc=assoc.reshape(gy.shape),
    )


def save_coverage_map_csv(cmap: CoverageMap, path) -> None:
    lines = [f"# version: thzcabin {__version__}", "x_m,y_m,sinr_db,assoc_tx"]
    for yi, yv in enumerate(cmap.y_m):
        for xi, xv in enumerate(cmap.x_m):
            s = cmap.sinr_db[yi, xi]
            if np.isnan(s):
                lines.append(f"{xv:.6g},{yv:.6g},,")
            else:
                lines.append(f"{xv:.6g},{yv:.6g},{s:.6g},{int(cmap.assoc[yi, xi])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_coverage_curve_csv(thresholds_db, probs, path) -> None:
    lines = [f"# version: thzcabin {__version__}", "threshold_db,coverage_prob"]
    for t, p in zip(np.asarray(thresholds_db), np.asarray(probs)):
        lines.append(f"{t:.6g},{p:.6g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
