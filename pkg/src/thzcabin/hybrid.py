"""Hybrid deterministic + stochastic cluster channel model.

Measured MPCs are grouped around ray-traced anchor paths (one cluster per
anchor); leftovers agglomerate into non-RT clusters. Each cluster carries
empirical delay and power CDFs of its members, from which stochastic
realizations are drawn by inverse-transform sampling. Subpath delay and power
are sampled independently; their joint structure is not modeled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from itertools import combinations_with_replacement
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import Mpc, MpcSet
from .raytrace import PathRecord
from .rf import circular_diff_deg, fspl_db
from .scene import MaterialDb

MODEL_VERSION = "hybrid_model_v1"
UNKNOWN = "unknown"


class EmpiricalCdf:
    """Right-continuous step CDF over a finite sample set."""

    def __init__(self, samples: Sequence[float]):
        arr = np.sort(np.asarray(samples, dtype=float))
        if arr.size == 0:
            raise ValueError("empirical CDF needs at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples must be finite")
        self.samples = arr

    def eval(self, x) -> float | np.ndarray:
        """P(X <= x); 0 below the smallest sample, 1 at and above the largest."""
        out = np.searchsorted(self.samples, np.asarray(x, dtype=float), side="right")
        out = out / self.samples.size
        return float(out) if out.ndim == 0 else out

    def quantile(self, u):
        """Inverse transform: the smallest sample s with F(s) >= u."""
        n = self.samples.size
        idx = np.clip(np.ceil(np.asarray(u, dtype=float) * n).astype(int) - 1, 0, n - 1)
        return self.samples[idx]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.quantile(rng.random(size))

    @property
    def mean(self) -> float:
        return float(self.samples.mean())


def cdf_eval(cdf: EmpiricalCdf, x) -> float:
    return cdf.eval(x)


def empirical_cdf(samples: Sequence[float]) -> EmpiricalCdf:
    return EmpiricalCdf(samples)


@dataclass(frozen=True)
class Cluster:
    """A deterministic anchor (or none) plus its stochastic subpath population."""

    anchor: PathRecord | None
    subpaths: tuple[Mpc, ...]
    delay_cdf: EmpiricalCdf = field(repr=False)
    power_cdf: EmpiricalCdf = field(repr=False)
    mean_delay: float
    mean_power_db: float
    identified_materials: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.subpaths:
            raise ValueError("cluster needs at least one subpath")
        mean = sum(p.tau for p in self.subpaths) / len(self.subpaths)
        if abs(mean - self.mean_delay) > 1e-12:
            raise ValueError("mean_delay inconsistent with subpaths")


@dataclass(frozen=True)
class HybridModel:
    rt_clusters: tuple[Cluster, ...]
    non_rt_clusters: tuple[Cluster, ...]
    carrier_hz: float

    def __post_init__(self):
        chains = [
            tuple(fid for fid, _ in c.anchor.bounce_chain)
            for c in self.rt_clusters
            if c.anchor is not None
        ]
        if len(chains) != len(set(chains)):
            raise ValueError("anchors must have distinct bounce chains")


def _make_cluster(anchor: PathRecord | None, members: list[Mpc]) -> Cluster:
    delays = [m.tau for m in members]
    powers = [m.power_db for m in members]
    return Cluster(
        anchor=anchor,
        subpaths=tuple(members),
        delay_cdf=EmpiricalCdf(delays),
        power_cdf=EmpiricalCdf(powers),
        mean_delay=sum(delays) / len(delays),
        mean_power_db=sum(powers) / len(powers),
    )


def _record_as_mpc(r: PathRecord) -> Mpc:
    return Mpc(
        tau=r.tau,
        zenith_deg=r.zenith_deg,
        azimuth_deg=r.azimuth_deg,
        power_db=r.power_db,
        order=r.order,
        chain=tuple(m for _, m in r.bounce_chain),
    )


def cluster_mpcs(
    measured: MpcSet,
    traced: Sequence[PathRecord],
    gates: tuple[float, float, float] = (0.5e-9, 20.0, 20.0),
    carrier_hz: float = 300e9,
) -> HybridModel:
    """Assign measured MPCs to their nearest traced anchor within the gates.

    The assignment metric is Euclidean in gate-normalized (delay, azimuth,
    zenith) coordinates; an MPC outside any gate of every anchor instead
    joins a non-RT cluster seeded greedily from the strongest leftover.
    Anchors that attract no member keep themselves as their lone subpath, so
    clustering stays one-to-one with the deterministic path set.
    """
    if not traced:
        raise ValueError("need at least one traced anchor")
    g_tau, g_az, g_zen = gates
    anchors = sorted(traced, key=lambda r: r.tau)  # ties resolve to smaller delay

    members: list[list[Mpc]] = [[] for _ in anchors]
    leftovers: list[Mpc] = []
    for m in measured:
        best_i, best_d = -1, math.inf
        for i, a in enumerate(anchors):
            d_tau = abs(m.tau - a.tau)
            d_az = float(circular_diff_deg(m.azimuth_deg, a.azimuth_deg))
            d_zen = abs(m.zenith_deg - a.zenith_deg)
            if d_tau > g_tau or d_az > g_az or d_zen > g_zen:
                continue
            dist = math.sqrt(
                (d_tau / g_tau) ** 2 + (d_az / g_az) ** 2 + (d_zen / g_zen) ** 2
            )
            if dist < best_d:
                best_i, best_d = i, dist
        if best_i >= 0:
            members[best_i].append(m)
        else:
            leftovers.append(m)

    rt_clusters = []
    for a, mem in zip(anchors, members):
        rt_clusters.append(_make_cluster(a, mem or [_record_as_mpc(a)]))

    non_rt = []
    leftovers.sort(key=lambda m: (-m.power_db, m.tau))
    while leftovers:
        seed = leftovers.pop(0)
        group = [seed]
        rest = []
        for m in leftovers:
            if (
                abs(m.tau - seed.tau) <= g_tau
                and circular_diff_deg(m.azimuth_deg, seed.azimuth_deg) <= g_az
                and abs(m.zenith_deg - seed.zenith_deg) <= g_zen
            ):
                group.append(m)
            else:
                rest.append(m)
        leftovers = rest
        non_rt.append(_make_cluster(None, group))

    return HybridModel(tuple(rt_clusters), tuple(non_rt), carrier_hz)


def identify_material(
    cluster_mean_power_db: float,
    tau: float,
    f: float,
    db: MaterialDb,
    tolerance_db: float = 3.0,
) -> str:
    """Label the bounce materials whose reference losses best explain a cluster.

    The cluster power must be referenced so that a pure free-space path sits
    at -FSPL; the measured reflection loss is then -(power + FSPL). Singles
    and two-bounce sums of the database reference losses compete; outside the
    tolerance the label is "unknown".
    """
    if tolerance_db <= 0.0:
        raise ValueError("tolerance must be > 0")
    refs = [(m.name, m.reference_rl_db) for m in db if m.reference_rl_db is not None]
    if not refs:
        raise ValueError("material database has no reference reflection losses")
    refs.sort(key=lambda nr: (nr[1], nr[0]))
    rl_meas = -(cluster_mean_power_db + float(fspl_db(f, tau)))

    candidates: list[tuple[float, str]] = [(rl, name) for name, rl in refs]
    for (n1, r1), (n2, r2) in combinations_with_replacement(refs, 2):
        candidates.append((r1 + r2, f"{n1}+{n2}"))
    candidates.sort(key=lambda c: (abs(c[0] - rl_meas), c[1]))
    best_rl, best_label = candidates[0]
    return best_label if abs(best_rl - rl_meas) <= tolerance_db else UNKNOWN


def identify_clusters(
    model: HybridModel, db: MaterialDb, tolerance_db: float = 3.0
) -> HybridModel:
    """Return a copy of the model with identified material labels filled in."""

    def _label(c: Cluster) -> Cluster:
        label = identify_material(
            c.mean_power_db, c.mean_delay, model.carrier_hz, db, tolerance_db
        )
        return replace(c, identified_materials=tuple(label.split("+")))

    return HybridModel(
        tuple(_label(c) for c in model.rt_clusters),
        tuple(_label(c) for c in model.non_rt_clusters),
        model.carrier_hz,
    )


def _angular_span_deg(values: np.ndarray, circular: bool) -> tuple[float, float]:
    if not circular:
        return float(values.min()), float(values.max())
    ref = math.degrees(
        math.atan2(
            np.sin(np.radians(values)).mean(), np.cos(np.radians(values)).mean()
        )
    )
    rel = (values - ref + 180.0) % 360.0 - 180.0
    return ref + float(rel.min()), ref + float(rel.max())


def synthesize_realization(
    model: HybridModel, n_subpaths_per_cluster: int, seed: int
) -> MpcSet:
    """Anchors verbatim plus per-cluster stochastic subpath draws.

    Delay and power are inverse-transform samples of the cluster CDFs drawn
    independently; angles are uniform over the cluster's observed span. The
    draw order is fixed (per cluster: delays, powers, azimuths, zeniths), so
    a seed fully determines the realization.
    """
    if not (model.rt_clusters or model.non_rt_clusters):
        raise ValueError("model has no clusters")
    rng = np.random.default_rng(seed)
    out: list[Mpc] = []
    for c in model.rt_clusters:
        if c.anchor is not None:
            out.append(_record_as_mpc(c.anchor))
    n = int(n_subpaths_per_cluster)
    for c in (*model.rt_clusters, *model.non_rt_clusters):
        if n == 0:
            continue
        delays = c.delay_cdf.sample(rng, n)
        powers = c.power_cdf.sample(rng, n)
        az = np.asarray([p.azimuth_deg for p in c.subpaths], dtype=float)
        zen = np.asarray([p.zenith_deg for p in c.subpaths], dtype=float)
        az_lo, az_hi = _angular_span_deg(az, circular=True)
        zen_lo, zen_hi = _angular_span_deg(zen, circular=False)
        azimuths = rng.uniform(az_lo, az_hi, n) % 360.0
        zeniths = rng.uniform(zen_lo, zen_hi, n)
        for tau, p, a, z in zip(delays, powers, azimuths, zeniths):
            out.append(Mpc(float(tau), float(z), float(a), float(p)))
    return MpcSet(tuple(out), source="synthetic")


# ---------------------------------------------------------------------------
# JSON persistence

def _anchor_to_json(a: PathRecord | None):
    if a is None:
        return None
    return {
        "tau": a.tau,
        "azimuth_deg": a.azimuth_deg,
        "zenith_deg": a.zenith_deg,
        "power_db": a.power_db,
        "gain_re": a.complex_gain.real,
        "gain_im": a.complex_gain.imag,
        "chain": [[fid, mat] for fid, mat in a.bounce_chain],
        "flags": sorted(a.blocked_flags),
    }


def _anchor_from_json(doc) -> PathRecord | None:
    if doc is None:
        return None
    return PathRecord(
        tau=doc["tau"],
        azimuth_deg=doc["azimuth_deg"],
        zenith_deg=doc["zenith_deg"],
        power_db=doc["power_db"],
        complex_gain=complex(doc["gain_re"], doc["gain_im"]),
        bounce_chain=tuple((int(f), str(m)) for f, m in doc["chain"]),
        blocked_flags=frozenset(doc["flags"]),
    )


def _cluster_to_json(c: Cluster):
    return {
        "anchor": _anchor_to_json(c.anchor),
        "subpaths": [
            [p.tau, p.zenith_deg, p.azimuth_deg, p.power_db] for p in c.subpaths
        ],
        "delay_cdf": list(c.delay_cdf.samples),
        "power_cdf": list(c.power_cdf.samples),
        "mean_delay": c.mean_delay,
        "mean_power_db": c.mean_power_db,
        "identified_materials": list(c.identified_materials),
    }


def _cluster_from_json(doc) -> Cluster:
    subpaths = tuple(Mpc(t, z, a, p) for t, z, a, p in doc["subpaths"])
    return Cluster(
        anchor=_anchor_from_json(doc["anchor"]),
        subpaths=subpaths,
        delay_cdf=EmpiricalCdf(doc["delay_cdf"]),
        power_cdf=EmpiricalCdf(doc["power_cdf"]),
        mean_delay=doc["mean_delay"],
        mean_power_db=doc["mean_power_db"],
        identified_materials=tuple(doc["identified_materials"]),
    )


def save_hybrid_model(model: HybridModel, path) -> None:
    doc = {
        "version": MODEL_VERSION,
        "carrier_hz": model.carrier_hz,
        "rt_clusters": [_cluster_to_json(c) for c in model.rt_clusters],
        "non_rt_clusters": [_cluster_to_json(c) for c in model.non_rt_clusters],
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load_hybrid_model(path) -> HybridModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {doc.get('version')!r}")
    return HybridModel(
        tuple(_cluster_from_json(c) for c in doc["rt_clusters"]),
        tuple(_cluster_from_json(c) for c in doc["non_rt_clusters"]),
        doc["carrier_hz"],
    )
