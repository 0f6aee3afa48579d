"""Earthquake parameterization and rupture geometry.

Maps the six inferred source parameters onto one or more rectangular
dislocations, using a tabulated subduction-interface geometry for
depth/strike/dip and a magnitude scaling law for length/width/slip.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, astuple
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

EARTH_RADIUS_KM = 6371.0
KM_PER_DEG = EARTH_RADIUS_KM * math.pi / 180.0

PARAM_NAMES = ("lat", "lon", "depth_offset", "magnitude", "dlogl", "dlogw")


class GeometryDomainError(ValueError):
    """A query point falls outside the fault-geometry region."""

    def __init__(self, lat, lon, message=None):
        self.lat = lat
        self.lon = lon
        super().__init__(message or f"point ({lat:.6g}, {lon:.6g}) is outside the fault-geometry region")


class InvalidDepthError(ValueError):
    """A rupture rectangle would sit at or above the free surface."""


@dataclass(frozen=True)
class EarthquakeParams:
    lat: float
    lon: float
    depth_offset: float
    magnitude: float
    dlogl: float
    dlogw: float

    def __post_init__(self):
        vals = astuple(self)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite earthquake parameter in {vals}")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon < 360.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 360)")

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, x) -> "EarthquakeParams":
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class ScalingLaw:
    """log10(L[km]) = a_L + b_L*Mw, log10(W[km]) = a_W + b_W*Mw."""

    a_L: float = -2.440
    b_L: float = 0.59
    a_W: float = -1.010
    b_W: float = 0.32
    rigidity: float = 4.0e10

    def __post_init__(self):
        if not (self.b_L > 0 and self.b_W > 0 and self.rigidity > 0):
            raise ValueError("scaling law needs b_L > 0, b_W > 0 and rigidity > 0")


@dataclass(frozen=True)
class OkadaRect:
    centroid_lat: float
    centroid_lon: float
    depth: float  # km, centroid, positive down
    strike: float
    dip: float
    rake: float
    length: float  # km
    width: float  # km
    slip: float  # m

    def __post_init__(self):
        if not self.depth > 0:
            raise InvalidDepthError(f"rectangle centroid depth {self.depth} km is not below the surface")
        if not (self.length > 0 and self.width > 0 and self.slip >= 0):
            raise ValueError("rectangle length and width must be positive, slip non-negative")
        if not 0.0 <= self.rake < 360.0:
            raise ValueError(f"rake {self.rake} outside [0, 360)")

    def moment(self, rigidity: float) -> float:
        """Seismic moment in N m."""
        return rigidity * (self.length * 1e3) * (self.width * 1e3) * self.slip


def moment_from_magnitude(mw: float) -> float:
    return 10.0 ** (1.5 * mw + 9.05)


def magnitude_from_moment(m0: float) -> float:
    return (2.0 / 3.0) * (math.log10(m0) - 9.05)


def size_from_magnitude(mw: float, dlogl: float, dlogw: float, law: ScalingLaw = ScalingLaw()):
    """Rupture length [km], width [km] and slip [m] for a magnitude.

    The offsets ``dlogl``/``dlogw`` are log10 deviations from the
    regression values. Slip is whatever makes the moment match ``mw``.
    """
    if not math.isfinite(mw):
        raise ValueError(f"magnitude must be finite, got {mw}")
    length = 10.0 ** (law.a_L + law.b_L * mw + dlogl)
    width = 10.0 ** (law.a_W + law.b_W * mw + dlogw)
    slip = moment_from_magnitude(mw) / (law.rigidity * length * 1e3 * width * 1e3)
    return length, width, slip


def _unit_angle(strike_deg):
    rad = np.deg2rad(strike_deg)
    return np.sin(rad), np.cos(rad)


@dataclass
class FaultGeometry:
    """Tabulated interface geometry: depth [km], strike and dip [deg] by location.

    If the samples form a complete regular lat/lon lattice the geometry is
    interpolated bilinearly; otherwise inverse-distance weighting over the
    four nearest samples (power 2) is used. Strike is interpolated through
    its unit vector so that 359 and 1 degrees average to 0.
    """

    lat: np.ndarray
    lon: np.ndarray
    depth: np.ndarray
    strike: np.ndarray
    dip: np.ndarray
    bounds: tuple = field(init=False)
    gridded: bool = field(init=False)

    def __post_init__(self):
        self.lat = np.asarray(self.lat, dtype=float)
        self.lon = np.asarray(self.lon, dtype=float)
        self.depth = np.asarray(self.depth, dtype=float)
        self.strike = np.mod(np.asarray(self.strike, dtype=float), 360.0)
        self.dip = np.asarray(self.dip, dtype=float)
        n = self.lat.size
        if n == 0 or any(a.shape != (n,) for a in (self.lon, self.depth, self.strike, self.dip)):
            raise ValueError("geometry columns must be non-empty 1-D arrays of equal length")
        if np.any(self.depth <= 0):
            raise ValueError("geometry depths must be positive")
        if np.any((self.dip <= 0) | (self.dip > 90)):
            raise ValueError("geometry dips must lie in (0, 90]")
        self.bounds = (self.lat.min(), self.lat.max(), self.lon.min(), self.lon.max())
        self._setup_interpolator()

    def _setup_interpolator(self):
        ulat = np.unique(self.lat)
        ulon = np.unique(self.lon)
        self.gridded = False
        if ulat.size >= 2 and ulon.size >= 2 and ulat.size * ulon.size == self.lat.size:
            ilat = np.searchsorted(ulat, self.lat)
            ilon = np.searchsorted(ulon, self.lon)
            seen = np.zeros((ulat.size, ulon.size), dtype=bool)
            seen[ilat, ilon] = True
            if seen.all():
                self.gridded = True
                self._glat, self._glon = ulat, ulon
                shape = (ulat.size, ulon.size)
                s, c = _unit_angle(self.strike)
                self._grids = {}
                for name, vals in (("depth", self.depth), ("dip", self.dip), ("ssin", s), ("scos", c)):
                    g = np.empty(shape)
                    g[ilat, ilon] = vals
                    self._grids[name] = g
                self.spacing = (np.diff(ulat).min(), np.diff(ulon).min())
        if not self.gridded:
            self._lat_ref = float(np.mean(self.lat))
            self._tree = cKDTree(self._project(self.lat, self.lon))
            self._ssin, self._scos = _unit_angle(self.strike)

    def _project(self, lat, lon):
        lat = np.atleast_1d(lat)
        lon = np.atleast_1d(lon)
        return np.column_stack((lon * math.cos(math.radians(self._lat_ref)) * KM_PER_DEG, lat * KM_PER_DEG))

    def contains(self, lat: float, lon: float) -> bool:
        la0, la1, lo0, lo1 = self.bounds
        return la0 <= lat <= la1 and lo0 <= lon <= lo1

    def interp(self, lat: float, lon: float):
        """Interpolated ``(depth, strike, dip)`` at a point."""
        if not (math.isfinite(lat) and math.isfinite(lon)) or not self.contains(lat, lon):
            raise GeometryDomainError(lat, lon)
        if self.gridded:
            vals = self._bilinear(lat, lon)
        else:
            vals = self._idw(lat, lon)
        depth, ssin, scos, dip = vals
        strike = math.degrees(math.atan2(ssin, scos)) % 360.0
        return float(depth), strike, float(dip)

    def _bilinear(self, lat, lon):
        glat, glon = self._glat, self._glon
        i = min(max(np.searchsorted(glat, lat, side="right") - 1, 0), glat.size - 2)
        j = min(max(np.searchsorted(glon, lon, side="right") - 1, 0), glon.size - 2)
        ty = (lat - glat[i]) / (glat[i + 1] - glat[i])
        tx = (lon - glon[j]) / (glon[j + 1] - glon[j])
        out = []
        for name in ("depth", "ssin", "scos", "dip"):
            g = self._grids[name]
            out.append(
                (1 - ty) * ((1 - tx) * g[i, j] + tx * g[i, j + 1])
                + ty * ((1 - tx) * g[i + 1, j] + tx * g[i + 1, j + 1])
            )
        return out

    def _idw(self, lat, lon):
        k = min(4, self.lat.size)
        dist, idx = self._tree.query(self._project(lat, lon)[0], k=k)
        dist = np.atleast_1d(dist)
        idx = np.atleast_1d(idx)
        if dist[0] == 0.0:
            m = idx[0]
            return self.depth[m], self._ssin[m], self._scos[m], self.dip[m]
        w = 1.0 / dist**2
        w /= w.sum()
        return (
            w @ self.depth[idx],
            w @ self._ssin[idx],
            w @ self._scos[idx],
            w @ self.dip[idx],
        )


def interp_geometry(geom: FaultGeometry, lat: float, lon: float):
    return geom.interp(lat, lon)


def read_geometry(path) -> FaultGeometry:
    """Read a ``lat, lon, depth_km, strike_deg, dip_deg`` table with header."""
    path = Path(path)
    cols = {k: [] for k in ("lat", "lon", "depth_km", "strike_deg", "dip_deg")}
    with path.open(newline="") as fh:
        rows = (line for line in fh if line.strip() and not line.lstrip().startswith("#"))
        reader = csv.DictReader(rows, skipinitialspace=True)
        if reader.fieldnames is None or set(cols) - {f.strip() for f in reader.fieldnames}:
            raise ValueError(f"{path}: header must contain {', '.join(cols)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                for k in cols:
                    cols[k].append(float(row[k]))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad geometry row ({exc})") from None
    return FaultGeometry(
        np.array(cols["lat"]),
        np.array(cols["lon"]),
        np.array(cols["depth_km"]),
        np.array(cols["strike_deg"]),
        np.array(cols["dip_deg"]),
    )


def write_geometry(geom: FaultGeometry, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lat", "lon", "depth_km", "strike_deg", "dip_deg"])
        for row in zip(geom.lat, geom.lon, geom.depth, geom.strike, geom.dip):
            w.writerow([repr(float(v)) for v in row])


# Sub-rectangles are laid out in a tangent plane at the event centroid and
# mapped back with the same flat-earth projection the deformation uses.
def _to_latlon(x_km, y_km, lat0, lon0):
    lat = lat0 + y_km / KM_PER_DEG
    lon = lon0 + x_km / (KM_PER_DEG * math.cos(math.radians(lat0)))
    return lat, lon


def _walk_along_strike(geom, lat0, lon0, distances):
    """Positions reached by following the local strike from the centroid.

    ``distances`` are signed along-strike offsets (km), sorted by absolute
    value on each side. Each leg uses a midpoint rule on the strike field.
    """
    out = {}
    for sign in (1.0, -1.0):
        x = y = travelled = 0.0
        for t in sorted(abs(d) for d in distances if d * sign > 0):
            step = sign * (t - travelled)
            lat, lon = _to_latlon(x, y, lat0, lon0)
            _, strike, _ = geom.interp(lat, lon)
            sx, sy = math.sin(math.radians(strike)), math.cos(math.radians(strike))
            mlat, mlon = _to_latlon(x + 0.5 * step * sx, y + 0.5 * step * sy, lat0, lon0)
            _, strike, _ = geom.interp(mlat, mlon)
            x += step * math.sin(math.radians(strike))
            y += step * math.cos(math.radians(strike))
            travelled = t
            out[sign * t] = _to_latlon(x, y, lat0, lon0)
    if 0.0 in distances:
        out[0.0] = (lat0, lon0)
    return [out[d] for d in distances]


def n_subfaults(length_km: float, max_segment_km: float = 100.0) -> int:
    return max(1, math.ceil(length_km / max_segment_km))


def build_rupture(
    p: EarthquakeParams,
    geom: FaultGeometry,
    law: ScalingLaw = ScalingLaw(),
    max_segment_km: float = 100.0,
    rake: float = 90.0,
) -> list[OkadaRect]:
    """Split the event into rectangles that follow the interface strike.

    Raises
    ------
    GeometryDomainError
        A sub-rectangle centroid lies outside the geometry region.
    InvalidDepthError
        A rectangle would reach the free surface after the depth offset.
    """
    length, width, slip = size_from_magnitude(p.magnitude, p.dlogl, p.dlogw, law)
    n = n_subfaults(length, max_segment_km)
    seg = length / n
    offsets = [(i - 0.5 * (n - 1)) * seg for i in range(n)]
    if n == 1:
        centers = [(p.lat, p.lon)]
    else:
        geom.interp(p.lat, p.lon)
        centers = _walk_along_strike(geom, p.lat, p.lon, offsets)

    rects = []
    for lat, lon in centers:
        depth, strike, dip = geom.interp(lat, lon)
        depth += p.depth_offset
        top = depth - 0.5 * width * math.sin(math.radians(dip))
        if depth <= 0 or top < 0:
            raise InvalidDepthError(
                f"rectangle at ({lat:.4f}, {lon:.4f}) has centroid depth {depth:.3f} km "
                f"and top-edge depth {top:.3f} km"
            )
        rects.append(OkadaRect(lat, lon, depth, strike, dip, rake, seg, width, slip))
    return rects
