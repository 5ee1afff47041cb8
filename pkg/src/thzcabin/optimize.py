"""Two-stage transmitter placement optimization.

Stage 1 screens named candidate positions (and candidate counts) on expected
rate and coverage; the winner seeds stage 2, a bound-constrained Powell
refinement of all coordinates jointly. Constraints enter the objective as an
exterior penalty so derivative-free line searches always see a finite value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Mapping, Sequence

import numpy as np

from .planning import (
    PlanConfig,
    RxPopulation,
    associated_sinr_db,
    average_rate_bps,
    coverage_probability,
    coverage_curve,
    link_power_dbm,
    make_coverage_function,
    sinr_from_powers,
)
from .scene import Box, Scene


@dataclass(frozen=True)
class OptProblem:
    scene: Scene
    cfg: PlanConfig
    rx_pop: RxPopulation
    n_tx: int
    bounds: Box
    coverage_threshold_gamma_db: float
    min_coverage_p_th: float
    candidates: Mapping[str, tuple[float, float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_tx < 1:
            raise ValueError("need at least one transmitter")
        if not (0.0 <= self.min_coverage_p_th <= 1.0):
            raise ValueError("coverage requirement must be a probability")
        lo = np.asarray(self.bounds.lo) >= np.asarray(self.scene.bounds.lo)
        hi = np.asarray(self.bounds.hi) <= np.asarray(self.scene.bounds.hi)
        if not (lo.all() and hi.all()):
            raise ValueError("optimization box must lie inside the scene bounds")

    @property
    def penalty_scale(self) -> float:
        # 10x the full-coverage rate at the gamma threshold, floored at the
        # SINR-cap ceiling so the penalty dominates any attainable rate even
        # for small gamma
        from .planning import SINR_CAP_DB

        lin = max(
            10.0 ** (self.coverage_threshold_gamma_db / 10.0),
            10.0 ** (SINR_CAP_DB / 10.0),
        )
        return 10.0 * self.cfg.bandwidth_hz * math.log2(1.0 + lin)


def _per_tx_rates(problem: OptProblem, coords: np.ndarray):
    """Expected rate and coverage-at-gamma for each Tx serving the population."""
    powers = link_power_dbm(problem.scene, coords, problem.rx_pop.points, problem.cfg)
    noise = problem.cfg.noise_power_dbm
    weights = problem.rx_pop.weights
    n = coords.shape[0]
    rates = np.zeros(n)
    cov = np.zeros(n)
    for i in range(n):
        sinr = sinr_from_powers(powers, i, noise)
        cov[i] = coverage_probability(sinr, problem.coverage_threshold_gamma_db, weights)
        pc = make_coverage_function(sinr, weights)
        rates[i] = average_rate_bps(pc, problem.cfg.bandwidth_hz, n)
    return rates, cov


def _bounds_violation_m(coords: np.ndarray, box: Box) -> float:
    lo = np.asarray(box.lo)
    hi = np.asarray(box.hi)
    below = np.maximum(0.0, lo - coords)
    above = np.maximum(0.0, coords - hi)
    return float(below.sum() + above.sum())


def objective(problem: OptProblem, coords) -> float:
    """Penalized mean expected rate of an N-Tx placement (bits/s).

    Out-of-box coordinates are clipped before the physics runs and charged
    per meter of violation; a coverage shortfall at the gamma threshold is
    charged per unit of missing probability.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    violation = _bounds_violation_m(coords, problem.bounds)
    clipped = np.clip(coords, problem.bounds.lo, problem.bounds.hi)
    rates, cov = _per_tx_rates(problem, clipped)
    violation += float(np.maximum(0.0, problem.min_coverage_p_th - cov).sum())
    return float(rates.sum()) - problem.penalty_scale * violation


# ---------------------------------------------------------------------------
# Powell's conjugate-direction maximizer

@dataclass(frozen=True)
class PowellResult:
    x: np.ndarray
    fx: float
    converged: bool
    n_evaluations: int
    n_cycles: int


def _line_range(x, d, lo, hi):
    """Step interval [s_lo, s_hi] keeping x + s*d inside the box."""
    s_lo, s_hi = -math.inf, math.inf
    for j in range(x.size):
        if d[j] == 0.0:
            continue
        a = (lo[j] - x[j]) / d[j]
        b = (hi[j] - x[j]) / d[j]
        if a > b:
            a, b = b, a
        s_lo = max(s_lo, a)
        s_hi = min(s_hi, b)
    return s_lo, s_hi


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _bracket(geval, f0, s_lo, s_hi, step0):
    """Walk uphill from s=0 with doubling steps; return an interval holding a max."""
    a, b = max(s_lo, -step0), min(s_hi, step0)
    fa, fb = geval(a), geval(b)
    if fb >= f0 and fb >= fa:
        sign, edge, x1, f1 = 1.0, s_hi, b, fb
    elif fa >= f0:
        sign, edge, x1, f1 = -1.0, s_lo, a, fa
    else:
        return a, b  # maximum near the current point
    x0, step = 0.0, 2.0 * step0
    while True:
        if (sign > 0 and x1 >= edge) or (sign < 0 and x1 <= edge):
            return (x0, x1) if sign > 0 else (x1, x0)
        x2 = min(edge, x1 + step) if sign > 0 else max(edge, x1 - step)
        if geval(x2) < f1:
            return (x0, x2) if sign > 0 else (x2, x0)
        x0, x1, f1 = x1, x2, geval(x2)
        step *= 2.0


def _line_maximize(f, x, d, lo, hi, tol, initial_step=0.1):
    """Golden-section line maximization of f along d, clipped to the box.

    Brackets outward from s=0 with a doubling step, then shrinks to width
    tol; the interval and box endpoints compete with the interior result so
    boundary maxima are hit exactly.
    """
    s_lo, s_hi = _line_range(x, d, lo, hi)
    if s_hi - s_lo <= 0.0:
        return x, f(x)

    cache: dict = {}

    def geval(s):
        if s not in cache:
            cache[s] = f(np.clip(x + s * d, lo, hi))
        return cache[s]

    lo_s, hi_s = _bracket(geval, geval(0.0), s_lo, s_hi, initial_step)

    u = hi_s - _GOLDEN * (hi_s - lo_s)
    v = lo_s + _GOLDEN * (hi_s - lo_s)
    fu, fv = geval(u), geval(v)
    while hi_s - lo_s > tol:
        if fu >= fv:
            hi_s, v, fv = v, u, fu
            u = hi_s - _GOLDEN * (hi_s - lo_s)
            fu = geval(u)
        else:
            lo_s, u, fu = u, v, fv
            v = lo_s + _GOLDEN * (hi_s - lo_s)
            fv = geval(v)

    best_s = max([0.0, 0.5 * (lo_s + hi_s), lo_s, hi_s, s_lo, s_hi], key=geval)
    return np.clip(x + best_s * d, lo, hi), geval(best_s)


def powell_maximize(
    f: Callable,
    x0,
    bounds: Sequence[tuple[float, float]],
    tol: float = 1e-6,
    max_iter: int = 60,
    line_tol: float | None = None,
) -> PowellResult:
    """Powell's conjugate-direction method for bound-constrained maximization.

    Each cycle line-maximizes along every direction in the set, then applies
    the classic replacement test on the extrapolated point before swapping in
    the cycle displacement direction. Terminates when a full cycle improves
    the objective by less than a tol-sized fraction. Every probe stays inside
    the per-coordinate intervals.
    """
    if tol <= 0.0:
        raise ValueError("tol must be > 0")
    x = np.asarray(x0, dtype=float).copy()
    lo = np.asarray([b[0] for b in bounds], dtype=float)
    hi = np.asarray([b[1] for b in bounds], dtype=float)
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError("x0 must lie within bounds")
    line_tol = tol if line_tol is None else line_tol

    n_eval = 0

    def fc(p):
        nonlocal n_eval
        n_eval += 1
        return f(p)

    n = x.size
    dirs = [np.eye(n)[i] for i in range(n)]
    fx = fc(x)
    for cycle in range(1, max_iter + 1):
        x_start, f_start = x.copy(), fx
        biggest, ibig = 0.0, 0
        for i, d in enumerate(dirs):
            x_new, f_new = _line_maximize(fc, x, d, lo, hi, line_tol)
            gain = f_new - fx
            if gain > biggest:
                biggest, ibig = gain, i
            if f_new > fx:
                x, fx = x_new, f_new
        if 2.0 * (fx - f_start) <= tol * (abs(fx) + abs(f_start)) + 1e-300:
            return PowellResult(x, fx, True, n_eval, cycle)
        # classic direction replacement via the extrapolated point
        x_e = np.clip(2.0 * x - x_start, lo, hi)
        f_e = fc(x_e)
        if f_e > f_start:
            t = (
                2.0 * (-f_start + 2.0 * fx - f_e) * (fx - f_start - biggest) ** 2
                - biggest * (f_start - f_e) ** 2
            )
            if t < 0.0:
                d_new = x - x_start
                norm = np.linalg.norm(d_new)
                if norm > 0.0:
                    d_new = d_new / norm
                    x, fx = _line_maximize(fc, x, d_new, lo, hi, line_tol)
                    dirs[ibig] = dirs[-1]
                    dirs[-1] = d_new
    return PowellResult(x, fx, False, n_eval, max_iter)


# ---------------------------------------------------------------------------
# Stage 1: candidate screening

@dataclass(frozen=True)
class ScreenEntry:
    names: tuple[str, ...]
    n_tx: int
    coords: np.ndarray
    objective_bps: float
    rate_bps: float
    coverage_at_gamma: float
    feasible: bool


@dataclass(frozen=True)
class ScreenReport:
    entries: tuple[ScreenEntry, ...]

    @property
    def best(self) -> ScreenEntry:
        return self.entries[0]


def stage1_screen(problem: OptProblem, n_values: Sequence[int] | None = None) -> ScreenReport:
    """Rank every candidate combination (for every requested Tx count)."""
    if not problem.candidates:
        raise ValueError("no candidate positions to screen")
    n_values = (problem.n_tx,) if n_values is None else tuple(n_values)
    names = sorted(problem.candidates)
    entries = []
    for n in n_values:
        for combo in combinations(names, n):
            coords = np.asarray([problem.candidates[c] for c in combo], dtype=float)
            rates, cov = _per_tx_rates(problem, coords)
            feasible = bool(np.all(cov > problem.min_coverage_p_th))
            obj = objective(problem, coords)
            entries.append(
                ScreenEntry(
                    names=combo,
                    n_tx=n,
                    coords=coords,
                    objective_bps=obj,
                    rate_bps=float(rates.sum()),
                    coverage_at_gamma=float(cov.min()),
                    feasible=feasible,
                )
            )
    entries.sort(key=lambda e: (-e.objective_bps, e.names))
    return ScreenReport(tuple(entries))


# ---------------------------------------------------------------------------
# Stage 2: Powell refinement

def point_facet_distance(points, scene: Scene) -> np.ndarray:
    """Distance from each point to the nearest scene facet (exact, per triangle)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    arr = scene.arrays
    if arr is None:
        return np.full(pts.shape[0], np.inf)
    p = pts[:, None, :]
    a = arr.v0[None, :, :]
    e1 = arr.e1[None, :, :]
    e2 = arr.e2[None, :, :]
    # closest point on each triangle (Ericson, Real-Time Collision Detection)
    ap = p - a
    d1 = np.einsum("...k,...k->...", e1, ap)
    d2 = np.einsum("...k,...k->...", e2, ap)
    bp = p - (a + e1)
    d3 = np.einsum("...k,...k->...", e1, bp)
    d4 = np.einsum("...k,...k->...", e2, bp)
    cp = p - (a + e2)
    d5 = np.einsum("...k,...k->...", e1, cp)
    d6 = np.einsum("...k,...k->...", e2, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    v = np.where(denom != 0.0, vb / np.where(denom == 0.0, 1.0, denom), 0.0)
    w = np.where(denom != 0.0, vc / np.where(denom == 0.0, 1.0, denom), 0.0)
    # interior projection, then clamp to the three edges and pick the nearest
    cand = a + v[..., None] * e1 + w[..., None] * e2
    inside = (v >= 0.0) & (w >= 0.0) & (v + w <= 1.0)

    def _edge(origin, edge, dot_num, dot_den):
        t = np.clip(dot_num / np.where(dot_den == 0.0, 1.0, dot_den), 0.0, 1.0)
        return origin + t[..., None] * edge

    e3 = e2 - e1  # edge from b to c
    edge1 = _edge(a, e1, d1, np.einsum("...k,...k->...", e1, e1))
    edge2 = _edge(a, e2, d2, np.einsum("...k,...k->...", e2, e2))
    edge3 = _edge(a + e1, e3, np.einsum("...k,...k->...", e3, bp),
                  np.einsum("...k,...k->...", e3, e3))
    d_edges = np.stack(
        [np.linalg.norm(p - q, axis=-1) for q in (edge1, edge2, edge3)], axis=0
    ).min(axis=0)
    d_inside = np.linalg.norm(p - cand, axis=-1)
    dist = np.where(inside, d_inside, d_edges)
    return dist.min(axis=1)


@dataclass(frozen=True)
class OptResult:
    coords: np.ndarray
    objective_bps: float
    rate_bps: float
    coverage_thresholds_db: np.ndarray
    coverage_probs: np.ndarray
    feasible: bool
    alternative_coords: np.ndarray | None
    alternative_objective_bps: float | None
    n_evaluations: int
    converged: bool


def stage2_refine(
    problem: OptProblem,
    start_coords,
    tol: float = 1e-4,
    max_iter: int = 30,
    mount_distance_m: float = 0.05,
    report_thresholds_db=None,
) -> OptResult:
    """Powell-refine a placement from a screened start.

    Alongside the free optimum, the best probed placement whose every Tx sits
    within mount_distance_m of a facet is recorded as the deployable
    alternative.
    """
    start = np.atleast_2d(np.asarray(start_coords, dtype=float))
    n = start.shape[0]
    flat0 = start.ravel()
    bounds = [(problem.bounds.lo[j], problem.bounds.hi[j]) for _ in range(n) for j in range(3)]

    best_mounted: list = [None, -math.inf]

    def f(flat):
        coords = flat.reshape(n, 3)
        val = objective(problem, coords)
        if point_facet_distance(coords, problem.scene).max() <= mount_distance_m:
            if val > best_mounted[1]:
                best_mounted[0] = coords.copy()
                best_mounted[1] = val
        return val

    res = powell_maximize(f, flat0, bounds, tol=tol, max_iter=max_iter)
    coords = res.x.reshape(n, 3)
    rates, cov = _per_tx_rates(problem, coords)
    feasible = bool(
        np.all(cov > problem.min_coverage_p_th)
        and _bounds_violation_m(coords, problem.bounds) == 0.0
    )

    thresholds = (
        np.arange(-10.0, 40.5, 1.0)
        if report_thresholds_db is None
        else np.asarray(report_thresholds_db, dtype=float)
    )
    sinr, _ = associated_sinr_db(problem.scene, coords, problem.rx_pop.points, problem.cfg)
    probs = coverage_curve(sinr, thresholds, problem.rx_pop.weights)

    return OptResult(
        coords=coords,
        objective_bps=res.fx,
        rate_bps=float(rates.sum()),
        coverage_thresholds_db=thresholds,
        coverage_probs=probs,
        feasible=feasible,
        alternative_coords=best_mounted[0],
        alternative_objective_bps=None if best_mounted[0] is None else best_mounted[1],
        n_evaluations=res.n_evaluations,
        converged=res.converged,
    )
