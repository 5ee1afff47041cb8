"""Facet-level digital twin: scene geometry, material database, ray queries.

A scene is a set of triangular facets with material references, named Tx/Rx
placements, and an axis-aligned bounding box for the interior volume. Quads
in the input file are split into two triangles by the loader so that a single
exact ray-triangle routine serves all geometry queries.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

HIT_EPS = 1e-9  # self-intersection guard, far below the 1.5 cm range accuracy
AREA_EPS = 1e-12  # minimum triangle area in m^2


class SceneError(Exception):
    """Base class for scene/material input problems."""


class SceneFormatError(SceneError):
    """Malformed scene or material file (parse or schema problem)."""


class MissingMaterialError(SceneError):
    """A facet references a material absent from the database."""


class DegenerateFacetError(SceneError):
    """A facet with (near-)collinear vertices."""


@dataclass(frozen=True)
class Material:
    """One entry of the material database.

    `eta` is the complex relative permittivity under the e^{+j w t} time
    convention, so lossy materials carry a negative imaginary part. The CSV
    stores the loss column as a positive number and the loader negates it.
    """

    name: str
    eta: complex
    thickness_m: float
    reference_rl_db: float | None = None

    def __post_init__(self):
        if self.eta.real < 1.0:
            raise SceneFormatError(
                f"material {self.name!r}: Re(eta) must be >= 1, got {self.eta.real}"
            )
        if self.thickness_m <= 0.0:
            raise SceneFormatError(
                f"material {self.name!r}: thickness must be > 0, got {self.thickness_m}"
            )
        if self.reference_rl_db is not None and self.reference_rl_db < 0.0:
            raise SceneFormatError(
                f"material {self.name!r}: reference RL must be >= 0"
            )


class MaterialDb:
    """Name-indexed, immutable collection of materials."""

    def __init__(self, materials: Iterable[Material]):
        self._by_name = {m.name: m for m in materials}

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __getitem__(self, name: str) -> Material:
        try:
            return self._by_name[name]
        except KeyError:
            raise MissingMaterialError(f"material {name!r} not in database") from None

    def __iter__(self):
        return iter(self._by_name.values())

    def __len__(self) -> int:
        return len(self._by_name)

    def names(self) -> list[str]:
        return list(self._by_name)


def load_material_db(path) -> MaterialDb:
    """Read the material CSV (`name,eta_re,eta_im,thickness_m,reference_rl_db`).

    `eta_im` is the positive loss term eta''; `reference_rl_db` may be empty.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"material database not found: {path}")
    materials = []
    with path.open("r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise SceneFormatError(f"{path}: empty material database")
    header = [c.strip() for c in lines[0].split(",")]
    expected = ["name", "eta_re", "eta_im", "thickness_m", "reference_rl_db"]
    if header != expected:
        raise SceneFormatError(f"{path}: bad header {header!r}, expected {expected!r}")
    for lineno, line in enumerate(lines[1:], start=2):
        cols = [c.strip() for c in line.split(",")]
        if len(cols) != 5:
            raise SceneFormatError(f"{path}: line {lineno}: expected 5 columns")
        try:
            name = cols[0]
            eta = complex(float(cols[1]), -float(cols[2]))
            thickness = float(cols[3])
            ref = float(cols[4]) if cols[4] != "" else None
        except ValueError as exc:
            raise SceneFormatError(f"{path}: line {lineno}: {exc}") from None
        materials.append(Material(name, eta, thickness, ref))
    return MaterialDb(materials)


def save_material_db(db: MaterialDb, path) -> None:
    lines = ["name,eta_re,eta_im,thickness_m,reference_rl_db"]
    for m in db:
        ref = "" if m.reference_rl_db is None else repr(m.reference_rl_db)
        lines.append(f"{m.name},{m.eta.real!r},{-m.eta.imag!r},{m.thickness_m!r},{ref}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Facet:
    """Triangle facet with a material reference. Vertices in meters."""

    vertices: tuple[tuple[float, float, float], ...]
    material_id: str
    thickness_override: float | None = None

    def __post_init__(self):
        if len(self.vertices) != 3:
            raise SceneFormatError("facet must have exactly 3 vertices")
        v = np.asarray(self.vertices, dtype=float)
        if not np.all(np.isfinite(v)):
            raise SceneFormatError("facet vertices must be finite")
        area = 0.5 * np.linalg.norm(np.cross(v[1] - v[0], v[2] - v[0]))
        if area <= AREA_EPS:
            raise DegenerateFacetError(
                f"degenerate facet (area {area:.3e} m^2) at vertices {self.vertices}"
            )

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    @property
    def normal(self) -> np.ndarray:
        v = self.array
        n = np.cross(v[1] - v[0], v[2] - v[0])
        return n / np.linalg.norm(n)

    @property
    def area(self) -> float:
        v = self.array
        return 0.5 * float(np.linalg.norm(np.cross(v[1] - v[0], v[2] - v[0])))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, used for scene bounds and human blockage volumes."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        if not np.all(hi > lo):
            raise SceneFormatError(f"box must have positive volume: {self.lo}..{self.hi}")

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        ok = np.all((p >= lo) & (p <= hi), axis=1)
        return ok if ok.size > 1 else bool(ok[0])

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.hi, float) - np.asarray(self.lo, float)


class _FacetArrays:
    """Facet data flattened into numpy arrays for batched ray queries."""

    def __init__(self, facets: Sequence[Facet]):
        tri = np.asarray([f.array for f in facets], dtype=float)  # (F,3,3)
        self.v0 = tri[:, 0, :]
        self.e1 = tri[:, 1, :] - tri[:, 0, :]
        self.e2 = tri[:, 2, :] - tri[:, 0, :]
        n = np.cross(self.e1, self.e2)
        self.normal = n / np.linalg.norm(n, axis=1, keepdims=True)
        self.plane_offset = np.einsum("fk,fk->f", self.normal, self.v0)
        self.count = len(facets)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Signed distances of (..., 3) points to every facet plane: (..., F)."""
        return points @ self.normal.T - self.plane_offset


@dataclass(frozen=True)
class Scene:
    """Immutable digital-twin geometry; safe for concurrent reads."""

    facets: tuple[Facet, ...]
    tx: Mapping[str, tuple[float, float, float]]
    rx: Mapping[str, tuple[float, float, float]]
    bounds: Box
    materials: MaterialDb | None = None
    _arrays: _FacetArrays | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        for label, table in (("tx", self.tx), ("rx", self.rx)):
            for name, p in table.items():
                if not self.bounds.contains(np.asarray(p, float)):
                    raise SceneFormatError(
                        f"{label} position {name!r} {p} outside scene bounds"
                    )
        if self.materials is not None:
            for f in self.facets:
                if f.material_id not in self.materials:
                    raise MissingMaterialError(
                        f"facet references unknown material {f.material_id!r}"
                    )
        if self.facets:
            object.__setattr__(self, "_arrays", _FacetArrays(self.facets))

    @property
    def arrays(self) -> _FacetArrays | None:
        return self._arrays

    def terminal(self, name: str) -> np.ndarray:
        """Look up a named Tx or Rx position."""
        if name in self.tx:
            return np.asarray(self.tx[name], dtype=float)
        if name in self.rx:
            return np.asarray(self.rx[name], dtype=float)
        raise KeyError(f"no terminal named {name!r} in scene")


def _split_polygon(verts: list) -> list[tuple]:
    """Triangles from a 3- or 4-vertex facet (fan split for quads)."""
    if len(verts) == 3:
        return [tuple(tuple(float(c) for c in v) for v in verts)]
    if len(verts) == 4:
        v = [tuple(float(c) for c in p) for p in verts]
        return [(v[0], v[1], v[2]), (v[0], v[2], v[3])]
    raise SceneFormatError(f"facet must have 3 or 4 vertices, got {len(verts)}")


def load_scene(path, materials: MaterialDb | None = None) -> Scene:
    """Load and validate a scene JSON document.

    When the document carries a `materials` key (a CSV path relative to the
    scene file) or a database is passed in, every facet material reference is
    checked against it; a dangling reference raises MissingMaterialError.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"scene file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from None

    for key in ("facets", "tx", "rx", "bounds"):
        if key not in doc:
            raise SceneFormatError(f"{path}: missing required key {key!r}")

    if materials is None and "materials" in doc:
        materials = load_material_db(path.parent / doc["materials"])

    try:
        bounds = Box(tuple(doc["bounds"]["min"]), tuple(doc["bounds"]["max"]))
    except (KeyError, TypeError) as exc:
        raise SceneFormatError(f"{path}: bad bounds: {exc}") from None

    facets: list[Facet] = []
    for i, entry in enumerate(doc["facets"]):
        try:
            verts = entry["v"]
            material = entry["material"]
        except (KeyError, TypeError):
            raise SceneFormatError(
                f"{path}: facet {i}: expected keys 'v' and 'material'"
            ) from None
        override = entry.get("thickness_m")
        for tri in _split_polygon(verts):
            facets.append(Facet(tri, material, override))

    def _points(table) -> dict:
        out = {}
        for name, p in table.items():
            if len(p) != 3 or not all(math.isfinite(float(c)) for c in p):
                raise SceneFormatError(f"{path}: bad coordinates for {name!r}")
            out[name] = tuple(float(c) for c in p)
        return out

    return Scene(
        facets=tuple(facets),
        tx=_points(doc["tx"]),
        rx=_points(doc["rx"]),
        bounds=bounds,
        materials=materials,
    )


def save_scene(scene: Scene, path) -> None:
    """Write a scene back to JSON (triangles only; splits are not re-merged)."""
    doc = {
        "bounds": {"min": list(scene.bounds.lo), "max": list(scene.bounds.hi)},
        "tx": {k: list(v) for k, v in scene.tx.items()},
        "rx": {k: list(v) for k, v in scene.rx.items()},
        "facets": [
            {
                "v": [list(v) for v in f.vertices],
                "material": f.material_id,
                **({"thickness_m": f.thickness_override} if f.thickness_override else {}),
            }
            for f in scene.facets
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def cross3(a, b) -> np.ndarray:
    """Component-wise cross product over (..., 3) arrays (faster than np.cross)."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def intersect_rays_facets(origins, directions, tri):
    """Batched Moller-Trumbore over ray/facet pairs.

    origins, directions: (..., 3); tri is a (v0, e1, e2) triple of arrays
    broadcastable to the same leading shape. Returns (t, hit_mask) where t is
    the ray parameter (distance when directions are unit length). Edge and
    vertex hits count (closed-triangle convention).
    """
    v0, e1, e2 = tri
    pvec = cross3(directions, e2)
    det = np.einsum("...k,...k->...", e1, pvec)
    near_parallel = np.abs(det) < 1e-14
    safe_det = np.where(near_parallel, 1.0, det)
    inv_det = 1.0 / safe_det
    tvec = origins - v0
    u = np.einsum("...k,...k->...", tvec, pvec) * inv_det
    qvec = cross3(tvec, e1)
    v = np.einsum("...k,...k->...", directions, qvec) * inv_det
    t = np.einsum("...k,...k->...", e2, qvec) * inv_det
    bary_eps = 1e-12  # closed-triangle tolerance: boundary hits are hits
    hit = (
        ~near_parallel
        & (u >= -bary_eps)
        & (v >= -bary_eps)
        & (u + v <= 1.0 + bary_eps)
        & (t > HIT_EPS)
    )
    return t, hit


def ray_facet_intersect(origin, direction, facet: Facet):
    """Exact ray-triangle test; returns (distance, hit_point) or None.

    The direction must be unit length (checked to 1e-9). Distances at or
    below HIT_EPS are rejected as self-intersections; edge and vertex hits
    count as hits.
    """
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("direction must be normalized")
    v = facet.array
    tri = (v[0][None, :], (v[1] - v[0])[None, :], (v[2] - v[0])[None, :])
    t, hit = intersect_rays_facets(origin[None, :], direction[None, :], tri)
    if not hit[0]:
        return None
    return float(t[0]), origin + float(t[0]) * direction


def segments_blocked(starts, ends, scene: Scene, ignore: Iterable[int] = ()) -> np.ndarray:
    """True per segment when any facet (not in `ignore`) crosses its interior.

    Endpoints are excluded: a facet containing an endpoint does not block.
    A blocking crossing changes plane side strictly, so a cheap signed-
    distance product prescreens the (segment, facet) pairs before the exact
    triangle test runs.
    """
    arrays = scene.arrays
    n_seg = np.atleast_2d(starts).shape[0]
    if arrays is None:
        return np.zeros(n_seg, dtype=bool)
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    seg = ends - starts
    length = np.sqrt(np.einsum("sk,sk->s", seg, seg))
    if np.any(length == 0.0):
        raise ValueError("zero-length segment in occlusion query")

    cand = (arrays.signed_distance(starts) * arrays.signed_distance(ends)) < 0.0
    ignore = list(ignore)
    if ignore:
        cand[:, ignore] = False
    seg_i, fac_i = np.nonzero(cand)
    if seg_i.size == 0:
        return np.zeros(n_seg, dtype=bool)

    dirs = seg / length[:, None]
    t, hit = intersect_rays_facets(
        starts[seg_i],
        dirs[seg_i],
        (arrays.v0[fac_i], arrays.e1[fac_i], arrays.e2[fac_i]),
    )
    blocking = hit & (t < length[seg_i] - HIT_EPS)
    out = np.zeros(n_seg, dtype=bool)
    out[seg_i[blocking]] = True
    return out


def is_occluded(a, b, scene: Scene, ignore: Iterable[int] = ()) -> bool:
    """True iff some facet not in `ignore` intersects the open segment (a, b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.array_equal(a, b):
        raise ValueError("occlusion query needs two distinct points")
    return bool(segments_blocked(a[None, :], b[None, :], scene, ignore)[0])


def segment_crosses_box(starts, ends, box: Box) -> np.ndarray:
    """Slab test: True per segment when its open interior enters the box."""
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    d = ends - starts
    lo = np.asarray(box.lo, float)
    hi = np.asarray(box.hi, float)
    par = d == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - starts) / d
        t2 = (hi - starts) / d
    t_lo = np.where(par, -np.inf, np.minimum(t1, t2))
    t_hi = np.where(par, np.inf, np.maximum(t1, t2))
    tmin = t_lo.max(axis=1)
    tmax = t_hi.min(axis=1)
    # an axis-parallel segment outside that slab can never enter the box
    outside = (par & ((starts < lo) | (starts > hi))).any(axis=1)
    entry = np.maximum(tmin, 0.0)
    exit_ = np.minimum(tmax, 1.0)
    return ~outside & (entry < exit_)
