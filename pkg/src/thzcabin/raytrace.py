"""Deterministic image-method ray tracer for facet scenes.

Specular paths are built by mirroring the transmitter across facet planes
(order 1..max_order), solving the unfolded straight line backward from the
receiver, and validating every reflection point and sub-segment against the
scene. The line-of-sight record is dropped when a facet blocks it; human
blockage boxes instead attenuate any crossing segment by a fixed penetration
loss.

Angle convention: azimuth is the bearing of the incoming ray's reverse vector
at the Rx, degrees counterclockwise from +x; zenith is measured from the
horizontal plane, positive up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .materials import bounce_loss_db_array, bounce_phase_array
from .rf import SPEED_OF_LIGHT, fspl_db, in_circular_interval_deg, wavelength_m
from .scene import (
    HIT_EPS,
    Box,
    Scene,
    cross3,
    intersect_rays_facets,
    segment_crosses_box,
    segments_blocked,
)

HUMAN_PENETRATION = "human_penetration"


@dataclass(frozen=True)
class HumanBox:
    """Axis-aligned blockage volume applying a scalar penetration loss."""

    box: Box
    penetration_loss_db: float = 10.0


@dataclass(frozen=True)
class TraceConfig:
    frequency_hz: float = 300e9
    max_order: int = 2
    molecular_absorption_db_per_m: float = 0.005
    human_boxes: tuple[HumanBox, ...] = ()
    tx_power_dbm: float = 0.0
    tx_gain_db: float = 0.0
    rx_gain_db: float = 0.0
    polarization: str | None = None  # None = unpolarized power convention

    def __post_init__(self):
        if self.frequency_hz <= 0.0:
            raise ValueError("frequency must be > 0")
        if not (0 <= self.max_order <= 3):
            raise ValueError("max_order must be in 0..3")
        if self.molecular_absorption_db_per_m < 0.0:
            raise ValueError("molecular absorption must be >= 0")


@dataclass(frozen=True)
class PathRecord:
    """One multipath component between a Tx and an Rx."""

    tau: float
    azimuth_deg: float
    zenith_deg: float
    power_db: float
    complex_gain: complex
    bounce_chain: tuple[tuple[int, str], ...]
    blocked_flags: frozenset = frozenset()
    points: tuple = field(default=(), compare=False)

    @property
    def order(self) -> int:
        return len(self.bounce_chain)


def _mirror(points: np.ndarray, v0: np.ndarray, normal: np.ndarray) -> np.ndarray:
    dist = np.einsum("...k,...k->...", points - v0, normal)
    return points - 2.0 * dist[..., None] * normal


def _occlusion_ok(scene: Scene, starts, ends, ignore_a, ignore_b) -> np.ndarray:
    """Batched open-segment occlusion with per-segment ignored facet ids.

    Signed-distance products prescreen the (segment, facet) pairs; only
    plane-crossing pairs run the exact triangle test.
    """
    arrays = scene.arrays
    starts = np.asarray(starts, dtype=float)
    ends = np.asarray(ends, dtype=float)
    n = starts.shape[0]
    if arrays is None or n == 0:
        return np.ones(n, dtype=bool)
    cand = (arrays.signed_distance(starts) * arrays.signed_distance(ends)) < 0.0
    rows = np.arange(n)
    for ign in (ignore_a, ignore_b):
        if ign is not None:
            ign = np.asarray(ign)
            ok = ign >= 0
            cand[rows[ok], ign[ok]] = False
    seg_i, fac_i = np.nonzero(cand)
    if seg_i.size == 0:
        return np.ones(n, dtype=bool)
    seg = ends - starts
    length = np.sqrt(np.einsum("sk,sk->s", seg, seg))
    dirs = seg / length[:, None]
    t, hit = intersect_rays_facets(
        starts[seg_i],
        dirs[seg_i],
        (arrays.v0[fac_i], arrays.e1[fac_i], arrays.e2[fac_i]),
    )
    blocking = hit & (t < length[seg_i] - HIT_EPS)
    free = np.ones(n, dtype=bool)
    free[seg_i[blocking]] = False
    return free


def _emit_records(scene, pts, fids, cfg, eta_f, thick_f, results, rx_indices):
    """Vectorized budget for validated paths; records append into `results`.

    pts: (V, k+2, 3) path point chains; fids: (V, k) facet ids per bounce.
    Paths with a non-finite power (fully absorbing bounce) are dropped.
    """
    n_paths = pts.shape[0]
    if n_paths == 0:
        return
    segs = pts[:, 1:, :] - pts[:, :-1, :]
    lengths = np.sqrt(np.einsum("vki,vki->vk", segs, segs))
    total = lengths.sum(axis=1)
    tau = total / SPEED_OF_LIGHT
    loss = np.asarray(fspl_db(cfg.frequency_hz, tau))
    loss = loss + cfg.molecular_absorption_db_per_m * total

    k = fids.shape[1]
    bounce_phase = np.ones(n_paths, dtype=complex)
    if k:
        d_in = segs[:, :k, :] / lengths[:, :k, None]
        normals = scene.arrays.normal[fids]
        cos_inc = np.abs(np.einsum("vki,vki->vk", d_in, normals))
        theta0 = np.arccos(np.clip(cos_inc, 0.0, 1.0))
        lam = wavelength_m(cfg.frequency_hz)
        rl = bounce_loss_db_array(
            eta_f[fids], thick_f[fids], theta0, lam, cfg.polarization
        )
        loss = loss + rl.sum(axis=1)
        if cfg.polarization is not None:
            bounce_phase = bounce_phase_array(
                eta_f[fids], thick_f[fids], theta0, lam, cfg.polarization
            ).prod(axis=1)

    human = np.zeros(n_paths)
    if cfg.human_boxes:
        starts = pts[:, :-1, :].reshape(-1, 3)
        ends = pts[:, 1:, :].reshape(-1, 3)
        for hb in cfg.human_boxes:
            crossings = segment_crosses_box(starts, ends, hb.box).reshape(n_paths, -1)
            human += hb.penetration_loss_db * crossings.sum(axis=1)

    power = cfg.tx_power_dbm + cfg.tx_gain_db + cfg.rx_gain_db - loss - human
    rev = -segs[:, -1, :] / lengths[:, -1, None]
    azimuth = np.degrees(np.arctan2(rev[:, 1], rev[:, 0])) % 360.0
    zenith = np.degrees(np.arcsin(np.clip(rev[:, 2], -1.0, 1.0)))
    gain = 10.0 ** (power / 20.0) * np.exp(-2j * np.pi * cfg.frequency_hz * tau)
    gain = gain * bounce_phase

    for i in range(n_paths):
        if not np.isfinite(power[i]):
            continue
        chain = (
            tuple((int(f), scene.facets[int(f)].material_id) for f in fids[i]) if k else ()
        )
        flags = frozenset({HUMAN_PENETRATION}) if human[i] > 0.0 else frozenset()
        results[rx_indices[i]].append(
            PathRecord(
                tau=float(tau[i]),
                azimuth_deg=float(azimuth[i]),
                zenith_deg=float(zenith[i]),
                power_db=float(power[i]),
                complex_gain=complex(gain[i]),
                bounce_chain=chain,
                blocked_flags=flags,
                points=tuple(map(tuple, pts[i])),
            )
        )


_BEAM_EPS = 1e-6  # meters of slack so the exact triangle test stays the arbiter


def _beam_planes(arrays, seqs: np.ndarray, apex: np.ndarray):
    """Reflected-beam side planes of the final bounce of each sequence.

    A receiver can complete a sequence only if it sits inside the beam from
    the mirrored apex through the last facet and on the opposite side of the
    facet plane from the apex. Returns (planes (3,S,3), offsets (3,S),
    passthrough (S,), apex_side (S,)); degenerate beams pass through to the
    exact test.
    """
    f = seqs[:, -1]
    a = arrays.v0[f]
    b = a + arrays.e1[f]
    c = a + arrays.e2[f]
    apex_side = np.einsum("sk,sk->s", arrays.normal[f], apex - a)
    planes = np.empty((3, seqs.shape[0], 3))
    offs = np.empty((3, seqs.shape[0]))
    passthrough = np.zeros(seqs.shape[0], dtype=bool)
    for i, (p1, p2, opp) in enumerate(((a, b, c), (b, c, a), (c, a, b))):
        m = cross3(p1 - apex, p2 - apex)
        norm = np.sqrt(np.einsum("sk,sk->s", m, m))
        degenerate = norm < 1e-12
        m = m / np.where(degenerate, 1.0, norm)[:, None]
        orient = np.einsum("sk,sk->s", opp - apex, m)
        passthrough |= degenerate | (np.abs(orient) < 1e-9)
        m = m * np.sign(orient)[:, None]
        planes[i] = m
        offs[i] = np.einsum("sk,sk->s", m, apex)
    return planes, offs, passthrough, apex_side


def _sequences(n_facets: int, order: int) -> np.ndarray:
    """All facet-id sequences of the given order without immediate repeats."""
    seqs = np.arange(n_facets, dtype=np.intp)[:, None]
    for _ in range(order - 1):
        prev = seqs
        nxt = np.arange(n_facets, dtype=np.intp)
        left = np.repeat(prev, n_facets, axis=0)
        right = np.tile(nxt, prev.shape[0])[:, None]
        keep = left[:, -1] != right[:, 0]
        seqs = np.hstack([left[keep], right[keep]])
    return seqs


def trace_batch(scene: Scene, tx, rx_points, cfg: TraceConfig, chunk: int = 32):
    """trace() over many Rx points, reusing the per-Tx image set.

    Returns a list (one entry per Rx point) of PathRecord lists.
    """
    tx = np.asarray(tx, dtype=float)
    rx_points = np.atleast_2d(np.asarray(rx_points, dtype=float))
    if scene.materials is None and scene.facets:
        raise ValueError("scene has no material database attached; cannot trace")
    if not scene.bounds.contains(tx):
        raise ValueError("tx outside scene bounds")
    in_b = scene.bounds.contains(rx_points)
    if not (np.all(in_b) if isinstance(in_b, np.ndarray) else in_b):
        raise ValueError("rx outside scene bounds")
    if np.any(np.linalg.norm(rx_points - tx, axis=1) == 0.0):
        raise ValueError("tx and rx coincide")

    n_rx = rx_points.shape[0]
    results: list[list[PathRecord]] = [[] for _ in range(n_rx)]
    arrays = scene.arrays
    if scene.facets and scene.materials is not None:
        eta_f = np.asarray([scene.materials[f.material_id].eta for f in scene.facets])
        thick_f = np.asarray(
            [
                f.thickness_override or scene.materials[f.material_id].thickness_m
                for f in scene.facets
            ]
        )
    else:
        eta_f = thick_f = None

    # line of sight
    los_free = np.flatnonzero(
        ~segments_blocked(np.broadcast_to(tx, rx_points.shape), rx_points, scene)
    )
    los_pts = np.stack(
        [np.broadcast_to(tx, (los_free.size, 3)), rx_points[los_free]], axis=1
    )
    _emit_records(
        scene, los_pts, np.empty((los_free.size, 0), dtype=np.intp), cfg,
        eta_f, thick_f, results, los_free,
    )

    if arrays is None or cfg.max_order == 0:
        for recs in results:
            recs.sort(key=lambda r: r.tau)
        return results

    # Scene-side classification of every facet plane: a bounce at facet f can
    # only reach points inside the bounds if the mirrored image sits on the
    # far side of f's plane, so sequences whose image lands on the scene side
    # are culled before any per-rx work.
    lo_b = np.asarray(scene.bounds.lo)
    hi_b = np.asarray(scene.bounds.hi)
    corners = np.array(
        [[x, y, z] for x in (lo_b[0], hi_b[0]) for y in (lo_b[1], hi_b[1]) for z in (lo_b[2], hi_b[2])]
    )
    corner_d = np.einsum(
        "fk,fck->fc", arrays.normal, corners[None, :, :] - arrays.v0[:, None, :]
    )
    box_pos = np.all(corner_d >= -HIT_EPS, axis=1)
    box_neg = np.all(corner_d <= HIT_EPS, axis=1)

    # image sets per reflection order, shared by every rx: partial[j-1] = I_j
    per_order: list[tuple[np.ndarray, list[np.ndarray], tuple]] = []
    for order in range(1, cfg.max_order + 1):
        seqs = _sequences(arrays.count, order)
        partial: list[np.ndarray] = []
        keep = np.ones(seqs.shape[0], dtype=bool)
        imgs = np.broadcast_to(tx, (seqs.shape[0], 3)).copy()
        for j in range(order):
            f = seqs[:, j]
            imgs = _mirror(imgs, arrays.v0[f], arrays.normal[f])
            partial.append(imgs)
            d_img = np.einsum("sk,sk->s", arrays.normal[f], imgs - arrays.v0[f])
            keep &= ~(box_pos[f] & (d_img >= 0.0))
            keep &= ~(box_neg[f] & (d_img <= 0.0))
        if not keep.all():
            seqs = seqs[keep]
            partial = [p[keep] for p in partial]
        beam = _beam_planes(arrays, seqs, partial[-1])
        per_order.append((seqs, partial, beam))

    for lo in range(0, n_rx, chunk):
        rx_chunk = rx_points[lo : min(lo + chunk, n_rx)]
        for seqs, partial, beam in per_order:
            _trace_order(
                scene, tx, rx_chunk, seqs, partial, beam, cfg, eta_f, thick_f, results, lo
            )
    for recs in results:
        recs.sort(key=lambda r: r.tau)
    return results


def _trace_order(scene, tx, rx_chunk, seqs, partial, beam, cfg, eta_f, thick_f, results, offset):
    """Validate one reflection order for a chunk of rx points.

    The precomputed beam planes of the final bounce prescreen the (rx,
    sequence) pairs; the backward walk then compacts the survivor set after
    every reflection solve, so the exact tests and the occlusion pass only
    touch geometrically consistent candidates.
    """
    arrays = scene.arrays
    n_rx = rx_chunk.shape[0]
    n_seq, order = seqs.shape

    planes, offs, passthrough, apex_side = beam
    f_last = seqs[:, -1]
    d_rx = arrays.signed_distance(rx_chunk)[:, f_last]  # (R, S)
    ok = (d_rx * apex_side[None, :]) < 0.0
    for i in range(3):
        ok &= (rx_chunk @ planes[i].T - offs[i]) >= -_BEAM_EPS
    ok |= passthrough[None, :]
    r_idx, s_idx = np.nonzero(ok)
    if r_idx.size == 0:
        return
    target = rx_chunk[r_idx]
    hit_levels: list[np.ndarray] = []
    for j in range(order, 0, -1):
        f = seqs[s_idx, j - 1]
        img = partial[j - 1][s_idx]
        segvec = img - target
        length = np.sqrt(np.einsum("pk,pk->p", segvec, segvec))
        nonzero = length > HIT_EPS
        dirs = segvec / np.where(nonzero, length, 1.0)[:, None]
        t, hit = intersect_rays_facets(
            target, dirs, (arrays.v0[f], arrays.e1[f], arrays.e2[f])
        )
        ok = nonzero & hit & (t < length - HIT_EPS)
        if not ok.any():
            return
        r_idx, s_idx = r_idx[ok], s_idx[ok]
        h = target[ok] + t[ok, None] * dirs[ok]
        hit_levels = [lvl[ok] for lvl in hit_levels]
        hit_levels.append(h)
        target = h

    # hit_levels collected from the last bounce backward; restore path order
    hits = np.stack(hit_levels[::-1], axis=1)  # (V, order, 3)
    pts = np.concatenate(
        [
            np.broadcast_to(tx, (r_idx.size, 1, 3)),
            hits,
            rx_chunk[r_idx][:, None, :],
        ],
        axis=1,
    )  # (V, order+2, 3)
    # segment i of a path touches facet seq[i-1] at its start and seq[i] at its end
    fid = seqs[s_idx]  # (V, order)
    pad = -np.ones((r_idx.size, 1), dtype=np.intp)
    ign_start = np.hstack([pad, fid]).reshape(-1)
    ign_end = np.hstack([fid, pad]).reshape(-1)
    free = _occlusion_ok(
        scene, pts[:, :-1, :].reshape(-1, 3), pts[:, 1:, :].reshape(-1, 3),
        ign_start, ign_end,
    )
    keep = np.flatnonzero(free.reshape(-1, order + 1).all(axis=1))
    _emit_records(
        scene, pts[keep], fid[keep], cfg, eta_f, thick_f, results, offset + r_idx[keep]
    )


def trace(scene: Scene, tx, rx, cfg: TraceConfig | None = None) -> list[PathRecord]:
    """All specular paths (LoS plus reflections up to max_order) for one link."""
    cfg = cfg or TraceConfig()
    return trace_batch(scene, tx, np.asarray(rx, dtype=float)[None, :], cfg)[0]


def sector_filter(paths, sector_center_deg: float, half_width_deg: float):
    """Keep paths whose arrival azimuth lies within the circular sector."""
    if not (0.0 < half_width_deg <= 180.0):
        raise ValueError("half width must be in (0, 180]")
    return [
        p
        for p in paths
        if in_circular_interval_deg(p.azimuth_deg, sector_center_deg, half_width_deg)
    ]


def four_sector_merge(
    scene: Scene, tx, rx_center, cfg: TraceConfig | None = None, azimuthal_radius: float = 0.2
) -> list[PathRecord]:
    """Measurement-style merge of four sector-filtered Rx positions.

    Four virtual receivers sit on a horizontal circle around rx_center at
    azimuths 0/90/180/270 degrees; each keeps only arrivals within +/-45
    degrees of its own azimuth, and duplicates (same bounce chain) collapse
    to the strongest record.
    """
    if azimuthal_radius < 0.0:
        raise ValueError("azimuthal radius must be >= 0")
    cfg = cfg or TraceConfig()
    rx_center = np.asarray(rx_center, dtype=float)
    best: dict[tuple, PathRecord] = {}
    for az in (0.0, 90.0, 180.0, 270.0):
        rad = math.radians(az)
        rx = rx_center + azimuthal_radius * np.array(
            [math.cos(rad), math.sin(rad), 0.0]
        )
        for p in sector_filter(trace(scene, tx, rx, cfg), az, 45.0):
            key = tuple(fid for fid, _ in p.bounce_chain)
            if key not in best or p.power_db > best[key].power_db:
                best[key] = p
    return sorted(best.values(), key=lambda r: r.tau)
