"""Linear long-wave tsunami propagation and gauge observables.

An explicit forward-backward scheme on a staggered (Arakawa C) grid:
surface elevation at cell centres, volume fluxes on cell faces. Land
faces and the outer boundary are reflective walls. The flux form makes
the discrete volume integral of the surface elevation exactly conserved
up to round-off.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import KM_PER_DEG
from .okada import DeformationGrid, GridSpec

G = 9.81
NO_ARRIVAL = math.inf
MAX_ABS_ETA = 100.0
KINDS = ("height", "arrival", "inundation")


class InstabilityError(RuntimeError):
    def __init__(self, step: int, value: float):
        self.step = step
        super().__init__(f"surface elevation reached {value:.3g} m at time step {step}")


class ReflectionWarning(UserWarning):
    pass


@dataclass
class BathymetryGrid:
    spec: GridSpec
    depth: np.ndarray  # metres, positive = water

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=float)
        if self.depth.shape != (self.spec.nlat, self.spec.nlon):
            raise ValueError("bathymetry shape does not match its grid header")
        if not np.all(np.isfinite(self.depth)):
            raise ValueError("bathymetry contains non-finite values")
        if not np.any(self.depth > 0):
            raise ValueError("bathymetry has no wet cell")

    @property
    def wet(self) -> np.ndarray:
        return self.depth > 0


@dataclass(frozen=True)
class Gauge:
    name: str
    lat: float
    lon: float
    arrival_threshold: float = 0.05
    beach_slope: float = math.radians(45.0)

    def __post_init__(self):
        if not self.arrival_threshold > 0:
            raise ValueError(f"gauge {self.name}: arrival threshold must be positive")
        if not 0 < self.beach_slope < math.pi / 2:
            raise ValueError(f"gauge {self.name}: beach slope must lie in (0, pi/2)")


@dataclass(frozen=True)
class GaugeObservables:
    arrival: float  # minutes, NO_ARRIVAL if never exceeded
    max_height: float  # m
    inundation: float  # m


@dataclass
class ForwardOutput:
    gauges: dict[str, GaugeObservables]

    def value(self, gauge: str, kind: str) -> float:
        try:
            obs = self.gauges[gauge]
        except KeyError:
            raise KeyError(f"no forward output for gauge {gauge!r}") from None
        if kind == "height":
            return obs.max_height
        if kind == "arrival":
            return obs.arrival
        if kind == "inundation":
            return obs.inundation
        raise KeyError(f"unknown observable kind {kind!r}")

    def columns(self) -> dict[str, float]:
        out = {}
        for name, obs in self.gauges.items():
            out[f"{name}_height"] = obs.max_height
            out[f"{name}_arrival"] = obs.arrival
            out[f"{name}_inundation"] = obs.inundation
        return out


@dataclass
class GaugeSeries:
    t: np.ndarray  # seconds after rupture, first sample at one time step
    eta: np.ndarray  # (n_times, n_gauges)
    names: list[str]
    dt: float

    def __getitem__(self, name: str) -> np.ndarray:
        return self.eta[:, self.names.index(name)]


def cell_sizes(spec: GridSpec):
    """Metric cell size (dx, dy) from the grid's mid-latitude."""
    lat_mid = spec.lat0 + 0.5 * (spec.nlat - 1) * spec.dlat
    dx = spec.dlon * KM_PER_DEG * 1e3 * math.cos(math.radians(lat_mid))
    dy = spec.dlat * KM_PER_DEG * 1e3
    return dx, dy


def gauge_cell(gauge: Gauge, bathy: BathymetryGrid):
    """Grid cell sampled for a gauge: its own cell if wet, else the nearest wet neighbour."""
    ij = bathy.spec.index_of(gauge.lat, gauge.lon)
    if ij is None:
        raise ValueError(f"gauge {gauge.name} at ({gauge.lat}, {gauge.lon}) lies outside the grid")
    i, j = ij
    wet = bathy.wet
    if wet[i, j]:
        return i, j
    dx, dy = cell_sizes(bathy.spec)
    best = None
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            a, b = i + di, j + dj
            if 0 <= a < wet.shape[0] and 0 <= b < wet.shape[1] and wet[a, b]:
                d = math.hypot(di * dy, dj * dx)
                if best is None or d < best[0]:
                    best = (d, a, b)
    if best is None:
        raise ValueError(f"gauge {gauge.name} is not in or next to a wet cell")
    return best[1], best[2]


def _face_depths(depth):
    h = np.where(depth > 0, depth, 0.0)
    hx = np.zeros((depth.shape[0], depth.shape[1] + 1))
    hy = np.zeros((depth.shape[0] + 1, depth.shape[1]))
    hx[:, 1:-1] = np.minimum(h[:, 1:], h[:, :-1])
    hy[1:-1, :] = np.minimum(h[1:, :], h[:-1, :])
    return hx, hy


def stable_dt(bathy: BathymetryGrid, cfl: float) -> float:
    dx, dy = cell_sizes(bathy.spec)
    return cfl * min(dx, dy) / math.sqrt(G * float(bathy.depth.max()))


def _check_reflections(eta0, bathy, cells, duration_s):
    src = np.unravel_index(np.argmax(np.abs(eta0)), eta0.shape)
    dx, dy = cell_sizes(bathy.spec)
    ny, nx = eta0.shape
    c = math.sqrt(G * float(bathy.depth.max()))
    sy, sx = (src[0] + 0.5) * dy, (src[1] + 0.5) * dx
    for name, (i, j) in cells.items():
        gy, gx = (i + 0.5) * dy, (j + 0.5) * dx
        mirrors = ((-sx, sy), (2 * nx * dx - sx, sy), (sx, -sy), (sx, 2 * ny * dy - sy))
        shortest = min(math.hypot(gx - mx, gy - my) for mx, my in mirrors)
        if c * duration_s > shortest:
            warnings.warn(
                f"boundary reflections may reach gauge {name} within the simulated duration",
                ReflectionWarning,
                stacklevel=3,
            )


def simulate(
    dz: DeformationGrid,
    bathy: BathymetryGrid,
    gauges: list[Gauge],
    duration: float,
    cfl: float = 0.45,
    check_reflections: bool = True,
    monitor=None,
) -> GaugeSeries:
    """Propagate the sea-surface displacement and record it at the gauges.

    ``duration`` is in minutes. The time step is the largest value not
    exceeding ``cfl * min(dx, dy) / sqrt(g * max depth)`` that divides the
    duration evenly. ``monitor(step, eta)``, if given, is called after
    every step with the full elevation field (do not modify it).
    """
    if not dz.spec.same_registration(bathy.spec):
        raise ValueError("deformation and bathymetry grids are not identically registered")
    if not duration > 0:
        raise ValueError("duration must be positive")
    if not 0 < cfl < 1:
        raise ValueError("cfl must lie in (0, 1)")

    wet = bathy.wet
    eta = np.where(wet, dz.dz, 0.0)
    total = duration * 60.0
    nsteps = max(1, math.ceil(total / stable_dt(bathy, cfl)))
    dt = total / nsteps
    dx, dy = cell_sizes(bathy.spec)
    hx, hy = _face_depths(bathy.depth)
    ax = G * dt / dx * hx[:, 1:-1]
    ay = G * dt / dy * hy[1:-1, :]
    bx, by = dt / dx, dt / dy

    cells = {g.name: gauge_cell(g, bathy) for g in gauges}
    if check_reflections and gauges and np.any(eta):
        _check_reflections(eta, bathy, cells, total)
    gi = np.array([cells[g.name][0] for g in gauges], dtype=int)
    gj = np.array([cells[g.name][1] for g in gauges], dtype=int)

    mx = np.zeros(hx.shape)
    my = np.zeros(hy.shape)
    out = np.empty((nsteps, len(gauges)))
    tmp_x = np.empty(ax.shape)
    tmp_y = np.empty(ay.shape)
    div = np.empty(eta.shape)
    for n in range(nsteps):
        np.subtract(eta[:, 1:], eta[:, :-1], out=tmp_x)
        tmp_x *= ax
        mx[:, 1:-1] -= tmp_x
        np.subtract(eta[1:, :], eta[:-1, :], out=tmp_y)
        tmp_y *= ay
        my[1:-1, :] -= tmp_y
        np.subtract(mx[:, 1:], mx[:, :-1], out=div)
        div *= bx
        eta -= div
        np.subtract(my[1:, :], my[:-1, :], out=div)
        div *= by
        eta -= div
        out[n] = eta[gi, gj]
        if monitor is not None:
            monitor(n + 1, eta)
        peak = max(eta.max(), -eta.min())
        if not peak <= MAX_ABS_ETA:
            raise InstabilityError(n + 1, peak)
    t = dt * np.arange(1, nsteps + 1)
    return GaugeSeries(t, out, [g.name for g in gauges], dt)


def first_crossing(t, eta, threshold):
    """Time at which ``|eta|`` first reaches ``threshold``, linearly interpolated."""
    a = np.abs(eta)
    hit = np.flatnonzero(a >= threshold)
    if hit.size == 0:
        return NO_ARRIVAL
    k = hit[0]
    if k == 0:
        return float(t[0])
    frac = (threshold - a[k - 1]) / (a[k] - a[k - 1])
    return float(t[k - 1] + frac * (t[k] - t[k - 1]))


def extract_observables(series: GaugeSeries, gauges: list[Gauge]) -> ForwardOutput:
    out = {}
    for g in gauges:
        eta = series[g.name]
        arrival = first_crossing(series.t, eta, g.arrival_threshold)
        if arrival != NO_ARRIVAL:
            arrival /= 60.0
        hmax = max(0.0, float(eta.max())) if eta.size else 0.0
        out[g.name] = GaugeObservables(arrival, hmax, max(0.0, hmax / math.tan(g.beach_slope)))
    return ForwardOutput(out)


# -- file formats ----------------------------------------------------------

_ASC_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def read_ascii_grid(path):
    """Read an ESRI ASCII grid; returns ``(GridSpec, values, nodata_mask)``.

    Rows in the file run north to south; the returned array has latitude
    increasing with the first index.
    """
    path = Path(path)
    header = {}
    with path.open() as fh:
        lines = fh.read().splitlines()
    pos = 0
    while pos < len(lines):
        parts = lines[pos].split()
        if not parts:
            pos += 1
            continue
        key = parts[0].lower()
        if key in _ASC_KEYS or key in ("dx", "dy", "xllcenter", "yllcenter"):
            if len(parts) != 2:
                raise ValueError(f"{path}:{pos + 1}: malformed header line")
            header[key] = float(parts[1])
            pos += 1
        else:
            break
    for key in ("ncols", "nrows"):
        if key not in header:
            raise ValueError(f"{path}: missing header field {key}")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    dlon = header.get("dx", header.get("cellsize"))
    dlat = header.get("dy", header.get("cellsize"))
    if dlon is None or dlat is None:
        raise ValueError(f"{path}: missing header field cellsize")
    if "xllcenter" in header:
        lon0, lat0 = header["xllcenter"], header["yllcenter"]
    elif "xllcorner" in header and "yllcorner" in header:
        lon0, lat0 = header["xllcorner"] + 0.5 * dlon, header["yllcorner"] + 0.5 * dlat
    else:
        raise ValueError(f"{path}: missing header field xllcorner/yllcorner")
    values = []
    for lineno in range(pos, len(lines)):
        if lines[lineno].strip():
            try:
                values.extend(float(v) for v in lines[lineno].split())
            except ValueError:
                raise ValueError(f"{path}:{lineno + 1}: non-numeric grid value") from None
    if len(values) != ncols * nrows:
        raise ValueError(f"{path}: expected {ncols * nrows} values, found {len(values)}")
    arr = np.array(values).reshape(nrows, ncols)[::-1].copy()
    nodata = header.get("nodata_value")
    mask = np.zeros(arr.shape, dtype=bool) if nodata is None else arr == nodata
    return GridSpec(lat0, lon0, nrows, ncols, dlat, dlon), arr, mask


def write_ascii_grid(path, spec: GridSpec, values: np.ndarray, nodata: float = -9999.0) -> None:
    lines = [f"ncols {spec.nlon}", f"nrows {spec.nlat}"]
    lines.append(f"xllcorner {spec.lon0 - 0.5 * spec.dlon!r}")
    lines.append(f"yllcorner {spec.lat0 - 0.5 * spec.dlat!r}")
    if math.isclose(spec.dlat, spec.dlon, rel_tol=1e-12):
        lines.append(f"cellsize {spec.dlon!r}")
    else:
        lines.append(f"dx {spec.dlon!r}")
        lines.append(f"dy {spec.dlat!r}")
    lines.append(f"nodata_value {nodata!r}")
    for row in np.asarray(values)[::-1]:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_bathymetry(path) -> BathymetryGrid:
    spec, values, nodata = read_ascii_grid(path)
    return BathymetryGrid(spec, np.where(nodata, 0.0, values))


def write_bathymetry(path, bathy: BathymetryGrid) -> None:
    write_ascii_grid(path, bathy.spec, bathy.depth)


def read_gauges(path) -> list[Gauge]:
    """Read ``name, lat, lon, arrival_threshold_m, beach_slope_deg`` rows."""
    path = Path(path)
    gauges = []
    seen = set()
    with path.open(newline="") as fh:
        rows = [(i, line) for i, line in enumerate(fh, start=1) if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        raise ValueError(f"{path}: empty gauges file")
    header = [h.strip() for h in next(csv.reader([rows[0][1]]))]
    want = ["name", "lat", "lon", "arrival_threshold_m", "beach_slope_deg"]
    if header != want:
        raise ValueError(f"{path}:{rows[0][0]}: header must be {', '.join(want)}")
    for lineno, line in rows[1:]:
        rec = [f.strip() for f in next(csv.reader([line]))]
        if len(rec) != 5:
            raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(rec)}")
        name = rec[0]
        if name in seen:
            raise ValueError(f"{path}:{lineno}: duplicate gauge {name!r}")
        seen.add(name)
        try:
            lat, lon, thr, slope = (float(v) for v in rec[1:])
            gauges.append(Gauge(name, lat, lon, thr, math.radians(slope)))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return gauges


def write_gauges(path, gauges: list[Gauge]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "lat", "lon", "arrival_threshold_m", "beach_slope_deg"])
        for g in gauges:
            w.writerow([g.name, repr(g.lat), repr(g.lon), repr(g.arrival_threshold), repr(math.degrees(g.beach_slope))])
