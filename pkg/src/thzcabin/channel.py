"""Channel synthesis and measurement-style multipath extraction.

The frequency sweep is sampled like a VNA capture: n_freq points spanning
[f_start, f_stop] inclusive, so the IDFT delay bin spacing is
1/(n_freq * df). Per angle bin the sweep is independent, which mirrors a
directional-scan measurement; extraction searches the power grid for local
maxima, refines delays below bin resolution from the two largest adjacent
bins, and compensates the window scalloping loss so off-bin peak powers are
recovered.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ._version import __version__
from .raytrace import PathRecord
from .rf import circular_diff_deg, fspl_db

RECT = "rect"
HANN = "hann"


class LatticeError(ValueError):
    """Measured CFR rows do not form a complete rectangular sweep."""


def default_azimuth_bins(step_deg: float = 10.0) -> np.ndarray:
    return np.arange(0.0, 360.0, step_deg)


def default_zenith_bins(step_deg: float = 10.0, lo: float = -90.0, hi: float = 90.0) -> np.ndarray:
    return np.arange(lo, hi + 1e-9, step_deg)


@dataclass(frozen=True)
class Mpc:
    """One extracted or planted multipath component."""

    tau: float
    zenith_deg: float
    azimuth_deg: float
    power_db: float
    order: int | None = None
    chain: tuple[str, ...] = ()


@dataclass(frozen=True)
class MpcSet:
    paths: tuple[Mpc, ...]
    source: str = "measured"

    def __post_init__(self):
        object.__setattr__(
            self, "paths", tuple(sorted(self.paths, key=lambda p: p.tau))
        )
        if any(not math.isfinite(p.power_db) for p in self.paths):
            raise ValueError("MPC powers must be finite")

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    @classmethod
    def from_records(cls, records: Iterable[PathRecord], source: str = "traced") -> "MpcSet":
        return cls(
            tuple(
                Mpc(
                    tau=r.tau,
                    zenith_deg=r.zenith_deg,
                    azimuth_deg=r.azimuth_deg,
                    power_db=r.power_db,
                    order=r.order,
                    chain=tuple(m for _, m in r.bounce_chain),
                )
                for r in records
            ),
            source,
        )


@dataclass(frozen=True)
class CfrGrid:
    """Complex channel frequency response per (freq, zenith, azimuth) cell."""

    freq_hz: np.ndarray
    zenith_deg: np.ndarray
    azimuth_deg: np.ndarray
    values: np.ndarray  # complex, shape (n_freq, n_zenith, n_azimuth)

    @property
    def f_start(self) -> float:
        return float(self.freq_hz[0])

    @property
    def f_stop(self) -> float:
        return float(self.freq_hz[-1])

    @property
    def n_freq(self) -> int:
        return int(self.freq_hz.size)


@dataclass(frozen=True)
class AngleDelayGrid:
    """Power (linear) per (delay, zenith, azimuth) cell plus the complex CIR."""

    delay_s: np.ndarray
    zenith_deg: np.ndarray
    azimuth_deg: np.ndarray
    power: np.ndarray
    f_start: float
    f_stop: float
    n_freq: int
    window: str = RECT
    cir: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if np.any(self.power < 0.0):
            raise ValueError("grid powers must be non-negative")

    @property
    def delay_resolution_s(self) -> float:
        return float(self.delay_s[1] - self.delay_s[0])


def _nearest_azimuth_bin(az_deg, bins: np.ndarray) -> int:
    return int(np.argmin(circular_diff_deg(bins, az_deg)))


def _nearest_zenith_bin(zen_deg, bins: np.ndarray) -> int:
    return int(np.argmin(np.abs(bins - zen_deg)))


def _amplitudes(paths) -> list[tuple[float, float, float, complex]]:
    out = []
    for p in paths:
        if isinstance(p, PathRecord):
            out.append((p.tau, p.zenith_deg, p.azimuth_deg, complex(p.complex_gain)))
        else:
            out.append((p.tau, p.zenith_deg, p.azimuth_deg, complex(10.0 ** (p.power_db / 20.0))))
    return out


def synthesize_cfr(
    paths,
    f_start: float,
    f_stop: float,
    n_freq: int,
    azimuth_bins: np.ndarray | None = None,
    zenith_bins: np.ndarray | None = None,
) -> CfrGrid:
    """Frequency response of a path set: each path adds a e^{-j2 pi f tau} tone
    into its nearest angle bin."""
    if n_freq < 2:
        raise ValueError("need at least 2 frequency points")
    if f_stop <= f_start:
        raise ValueError("f_stop must exceed f_start")
    az = default_azimuth_bins() if azimuth_bins is None else np.asarray(azimuth_bins, float)
    zen = default_zenith_bins() if zenith_bins is None else np.asarray(zenith_bins, float)
    freqs = np.linspace(f_start, f_stop, n_freq)
    values = np.zeros((n_freq, zen.size, az.size), dtype=complex)
    for tau, zenith, azimuth, alpha in _amplitudes(paths):
        zi = _nearest_zenith_bin(zenith, zen)
        ai = _nearest_azimuth_bin(azimuth, az)
        values[:, zi, ai] += alpha * np.exp(-2j * np.pi * freqs * tau)
    return CfrGrid(freqs, zen, az, values)


def _window_array(n: int, window: str) -> np.ndarray:
    if window == RECT:
        return np.ones(n)
    if window == HANN:
        w = np.hanning(n)
        return w / w.mean()  # unit coherent gain so on-bin peaks keep their power
    raise ValueError(f"unknown window {window!r}")


def cfr_to_cir(cfr: CfrGrid, window: str = RECT) -> AngleDelayGrid:
    """Per-angle-bin inverse DFT of the frequency sweep."""
    n = cfr.n_freq
    if n < 2:
        raise ValueError("need at least 2 frequency points")
    w = _window_array(n, window)
    cir = np.fft.ifft(cfr.values * w[:, None, None], axis=0)
    df = (cfr.f_stop - cfr.f_start) / (n - 1)
    delay = np.arange(n) / (n * df)
    return AngleDelayGrid(
        delay_s=delay,
        zenith_deg=cfr.zenith_deg.copy(),
        azimuth_deg=cfr.azimuth_deg.copy(),
        power=np.abs(cir) ** 2,
        f_start=cfr.f_start,
        f_stop=cfr.f_stop,
        n_freq=n,
        window=window,
        cir=cir,
    )


def padp(grid: AngleDelayGrid) -> np.ndarray:
    """Power-angle-delay profile: sum of the power grid over the zenith axis."""
    return grid.power.sum(axis=1)


def omni_pdp(grid: AngleDelayGrid) -> np.ndarray:
    """Omnidirectional PDP: per delay bin, the max power over both angle axes."""
    return grid.power.max(axis=(1, 2))


def reflection_loss_of_path(p_omni: np.ndarray, delay_s: np.ndarray, tau: float, f: float) -> float:
    """Reflection loss of the path at delay tau: path loss minus FSPL.

    The omni PDP holds |h|^2, so path loss in dB is -10*log10(P); the printed
    form of the defining relation mixes a power quantity into a 20*log term
    and is read here in amplitude terms.
    """
    idx = int(np.argmin(np.abs(delay_s - tau)))
    step = float(delay_s[1] - delay_s[0])
    if abs(delay_s[idx] - tau) > 0.5 * step + 1e-15:
        raise ValueError("tau is not on the delay grid")
    p = float(p_omni[idx])
    if p <= 0.0:
        raise ValueError(f"zero power at delay bin {idx}")
    path_loss_db = -10.0 * math.log10(p)
    return path_loss_db - float(fspl_db(f, tau))


def _dirichlet(x: float, n: int) -> float:
    if abs(x) < 1e-12:
        return 1.0
    return math.sin(math.pi * x) / (n * math.sin(math.pi * x / n))


def _kernel_mag(delta: float, n: int, window: str) -> float:
    """|interpolated window kernel| at a fractional bin offset (1 at delta=0)."""
    if window == RECT:
        return abs(_dirichlet(delta, n))
    # exact numeric kernel for any window shape
    w = _window_array(n, window)
    k = np.arange(n)
    return abs(np.sum(w * np.exp(-2j * np.pi * k * delta / n))) / n


def _refine_peak(pdp_cell: np.ndarray, idx: int, n: int, window: str) -> tuple[float, float]:
    """Sub-bin delay offset and scalloping-corrected power of one delay peak.

    Uses the two largest adjacent bins: for a rectangular window the amplitude
    ratio r of neighbor to peak gives offset r/(1+r); for Hann, (2r-1)/(1+r).
    """
    peak = pdp_cell[idx]
    left = pdp_cell[idx - 1] if idx > 0 else 0.0
    right = pdp_cell[idx + 1] if idx + 1 < pdp_cell.size else 0.0
    side = 1.0 if right >= left else -1.0
    nb = max(left, right)
    if nb <= 0.0 or peak <= 0.0:
        return 0.0, peak
    r = math.sqrt(nb / peak)
    if window == HANN:
        delta = max(0.0, (2.0 * r - 1.0) / (1.0 + r))
    else:
        delta = r / (1.0 + r)
    delta = side * min(delta, 0.5)
    corr = _kernel_mag(delta, n, window)
    return delta, peak / (corr * corr)


def _local_maxima(power: np.ndarray, delay_only: bool) -> np.ndarray:
    """Boolean mask of strict local maxima; azimuth axis is circular.

    The last delay bin is the IDFT wrap-ambiguity point where the alias tail
    of any early peak rises into the array edge, so it never qualifies.
    """
    def _pad_delay(arr, pads):
        out = np.pad(arr, pads, constant_values=-1.0)
        out[-1] = np.inf
        return out

    if delay_only:
        padded = _pad_delay(power, ((1, 1), (0, 0), (0, 0)))
        return (power > padded[:-2]) & (power > padded[2:])
    padded = _pad_delay(power, ((1, 1), (1, 1), (0, 0)))
    padded = np.concatenate(
        [padded[:, :, -1:], padded, padded[:, :, :1]], axis=2
    )
    center = padded[1:-1, 1:-1, 1:-1]
    mask = np.ones(power.shape, dtype=bool)
    for dn in (-1, 0, 1):
        for dz in (-1, 0, 1):
            for da in (-1, 0, 1):
                if dn == dz == da == 0:
                    continue
                nb = padded[1 + dn : padded.shape[0] - 1 + dn,
                            1 + dz : padded.shape[1] - 1 + dz,
                            1 + da : padded.shape[2] - 1 + da]
                mask &= center > nb
    return mask


def extract_mpcs(
    grid: AngleDelayGrid,
    noise_floor_db: float | None = None,
    min_separation: int = 3,
    delay_only: bool = False,
    source: str = "measured",
) -> MpcSet:
    """Local-maxima search over the power grid.

    Peaks must be strict local maxima in the 3x3x3 (delay, zenith, azimuth)
    neighborhood (circular in azimuth); `delay_only=True` instead searches
    each angle cell independently along delay, which matches a directional
    scan where adjacent pointings resolve their own paths. Kept peaks are
    greedily thinned so no two lie within `min_separation` delay bins while
    also within one bin in both angles.
    """
    power = grid.power
    pmax = power.max()
    if pmax <= 0.0:
        warnings.warn("grid is identically zero; no MPCs extracted")
        return MpcSet((), source)
    max_db = 10.0 * math.log10(pmax)
    floor_db = max_db - 40.0 if noise_floor_db is None else float(noise_floor_db)
    floor_lin = 10.0 ** (floor_db / 10.0)

    mask = _local_maxima(power, delay_only) & (power > floor_lin)
    idx = np.argwhere(mask)
    if idx.size == 0:
        warnings.warn("everything below the noise floor; no MPCs extracted")
        return MpcSet((), source)
    order = np.argsort(-power[mask])
    idx = idx[order]

    n_az = grid.azimuth_deg.size
    kept: list[np.ndarray] = []
    for cand in idx:
        ok = True
        for k in kept:
            d_az = min((cand[2] - k[2]) % n_az, (k[2] - cand[2]) % n_az)
            if delay_only:
                # per-pointing search: adjacent cells resolve their own paths
                angles_close = cand[1] == k[1] and d_az == 0
            else:
                angles_close = abs(cand[1] - k[1]) <= 1 and d_az <= 1
            if abs(cand[0] - k[0]) < min_separation and angles_close:
                ok = False
                break
        if ok:
            kept.append(cand)

    mpcs = []
    for n, zi, ai in kept:
        cell = grid.power[:, zi, ai]
        delta, p_corr = _refine_peak(cell, int(n), grid.n_freq, grid.window)
        tau = float((n + delta) * grid.delay_resolution_s)
        mpcs.append(
            Mpc(
                tau=tau,
                zenith_deg=float(grid.zenith_deg[zi]),
                azimuth_deg=float(grid.azimuth_deg[ai]),
                power_db=10.0 * math.log10(p_corr),
            )
        )
    return MpcSet(tuple(mpcs), source)


# ---------------------------------------------------------------------------
# CSV interchange

def _version_line() -> str:
    return f"# version: thzcabin {__version__}"


def _fmt(x) -> str:
    return f"{x:.6g}"


def save_paths_csv(records: Iterable[PathRecord], path) -> None:
    """Traced MPC list: tau_ns,azimuth_deg,zenith_deg,power_db,order,chain."""
    lines = [_version_line(), "tau_ns,azimuth_deg,zenith_deg,power_db,order,chain"]
    for r in records:
        chain = ";".join(m for _, m in r.bounce_chain)
        lines.append(
            f"{_fmt(r.tau * 1e9)},{_fmt(r.azimuth_deg)},{_fmt(r.zenith_deg)},"
            f"{_fmt(r.power_db)},{r.order},{chain}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_mpcset_csv(mpcs: MpcSet, path) -> None:
    """MpcSet CSV: the traced schema plus a source column."""
    lines = [
        _version_line(),
        "tau_ns,azimuth_deg,zenith_deg,power_db,order,chain,source",
    ]
    for m in mpcs:
        order = "" if m.order is None else str(m.order)
        lines.append(
            f"{_fmt(m.tau * 1e9)},{_fmt(m.azimuth_deg)},{_fmt(m.zenith_deg)},"
            f"{_fmt(m.power_db)},{order},{';'.join(m.chain)},{mpcs.source}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_csv_rows(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    with path.open("r", encoding="utf-8", newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and not row[0].startswith("#")]
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def load_mpc_csv(path) -> MpcSet:
    """Read either the traced or the MpcSet CSV flavor."""
    header, rows = _read_csv_rows(path)
    base = ["tau_ns", "azimuth_deg", "zenith_deg", "power_db", "order", "chain"]
    if header[:6] != base:
        raise ValueError(f"{path}: unexpected MPC CSV header {header!r}")
    has_source = len(header) > 6 and header[6] == "source"
    mpcs = []
    source = "traced"
    for row in rows:
        order = int(row[4]) if row[4] != "" else None
        chain = tuple(c for c in row[5].split(";") if c)
        mpcs.append(
            Mpc(
                tau=float(row[0]) * 1e-9,
                azimuth_deg=float(row[1]),
                zenith_deg=float(row[2]),
                power_db=float(row[3]),
                order=order,
                chain=chain,
            )
        )
        if has_source:
            source = row[6]
    return MpcSet(tuple(mpcs), source)


def save_padp_csv(grid: AngleDelayGrid, path) -> None:
    """Delay-azimuth power matrix for external plotting; zero cells skipped."""
    mat = padp(grid)
    lines = [_version_line(), "tau_ns,azimuth_deg,power_db"]
    for ni, ai in np.argwhere(mat > 0.0):
        lines.append(
            f"{_fmt(grid.delay_s[ni] * 1e9)},{_fmt(grid.azimuth_deg[ai])},"
            f"{_fmt(10.0 * math.log10(mat[ni, ai]))}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_cfr_csv(cfr: CfrGrid, path) -> None:
    """Measured-CFR interchange format: azimuth_deg,zenith_deg,freq_hz,re,im."""
    lines = [_version_line(), "azimuth_deg,zenith_deg,freq_hz,re,im"]
    for ai, az in enumerate(cfr.azimuth_deg):
        for zi, zen in enumerate(cfr.zenith_deg):
            col = cfr.values[:, zi, ai]
            for k, f in enumerate(cfr.freq_hz):
                lines.append(
                    f"{_fmt(az)},{_fmt(zen)},{f:.10g},{col[k].real:.6g},{col[k].imag:.6g}"
                )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_cfr_csv(path) -> CfrGrid:
    """Read a measured CFR sweep; the rows must fill a complete
    (azimuth x zenith x freq) lattice exactly once each.

    Back-to-back calibration is assumed to have been applied upstream; no
    system-response deconvolution happens here.
    """
    header, rows = _read_csv_rows(path)
    if header != ["azimuth_deg", "zenith_deg", "freq_hz", "re", "im"]:
        raise LatticeError(f"{path}: unexpected CFR header {header!r}")
    data = np.asarray([[float(c) for c in row] for row in rows])
    az = np.unique(data[:, 0])
    zen = np.unique(data[:, 1])
    freq = np.unique(data[:, 2])
    if az.size * zen.size * freq.size != data.shape[0]:
        raise LatticeError(
            f"{path}: {data.shape[0]} rows cannot fill a "
            f"{az.size}x{zen.size}x{freq.size} lattice"
        )
    values = np.full((freq.size, zen.size, az.size), np.nan + 0j, dtype=complex)
    ai = np.searchsorted(az, data[:, 0])
    zi = np.searchsorted(zen, data[:, 1])
    fi = np.searchsorted(freq, data[:, 2])
    values[fi, zi, ai] = data[:, 3] + 1j * data[:, 4]
    if np.isnan(values.real).any():
        raise LatticeError(f"{path}: duplicate rows leave lattice cells unfilled")
    return CfrGrid(freq, zen, az, values)
