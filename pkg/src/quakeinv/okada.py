"""Vertical seafloor displacement from rectangular dislocations.

Okada (1985) closed-form surface displacement of a finite rectangular
source in an elastic half-space, evaluated on a lat/lon grid after a
flat-earth projection. Only the vertical component is produced.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import KM_PER_DEG, OkadaRect

# mu / (lambda + mu) for a Poisson solid (lambda = mu)
MU_RATIO = 0.5
MIN_DIP_DEG = 1e-3
_COS_TOL = 1e-10


@dataclass
class GridSpec:
    """Cell-centred lat/lon lattice; ``lat0``/``lon0`` is the first cell centre."""

    lat0: float
    lon0: float
    nlat: int
    nlon: int
    dlat: float
    dlon: float

    def __post_init__(self):
        if self.nlat < 1 or self.nlon < 1 or not (self.dlat > 0 and self.dlon > 0):
            raise ValueError("grid needs positive counts and spacings")

    @property
    def lats(self) -> np.ndarray:
        return self.lat0 + self.dlat * np.arange(self.nlat)

    @property
    def lons(self) -> np.ndarray:
        return self.lon0 + self.dlon * np.arange(self.nlon)

    def same_registration(self, other: "GridSpec", rtol: float = 1e-9) -> bool:
        return (
            self.nlat == other.nlat
            and self.nlon == other.nlon
            and all(
                math.isclose(a, b, rel_tol=rtol, abs_tol=rtol)
                for a, b in (
                    (self.lat0, other.lat0),
                    (self.lon0, other.lon0),
                    (self.dlat, other.dlat),
                    (self.dlon, other.dlon),
                )
            )
        )

    def index_of(self, lat: float, lon: float):
        """Nearest cell ``(i, j)`` to a point, or ``None`` if off the grid."""
        i = int(round((lat - self.lat0) / self.dlat))
        j = int(round((lon - self.lon0) / self.dlon))
        if 0 <= i < self.nlat and 0 <= j < self.nlon:
            return i, j
        return None


@dataclass
class DeformationGrid:
    spec: GridSpec
    dz: np.ndarray  # (nlat, nlon), metres

    def __post_init__(self):
        if self.dz.shape != (self.spec.nlat, self.spec.nlon):
            raise ValueError(f"dz shape {self.dz.shape} does not match grid {(self.spec.nlat, self.spec.nlon)}")
        if not np.all(np.isfinite(self.dz)):
            raise ValueError("non-finite displacement in deformation grid")


def _chinnery(f, xi, p, q, L, W, sd, cd):
    return f(xi, p, q, sd, cd) - f(xi, p - W, q, sd, cd) - f(xi - L, p, q, sd, cd) + f(xi - L, p - W, q, sd, cd)


def _uz_strike(xi, eta, q, sd, cd):
    R = np.sqrt(xi**2 + eta**2 + q**2)
    db = eta * sd - q * cd
    if cd > _COS_TOL:
        I4 = MU_RATIO / cd * (np.log(R + db) - sd * np.log(R + eta))
    else:
        I4 = -MU_RATIO * q / (R + db)
    return db * q / (R * (R + eta)) + q * sd / (R + eta) + I4 * sd


def _uz_dip(xi, eta, q, sd, cd):
    R = np.sqrt(xi**2 + eta**2 + q**2)
    db = eta * sd - q * cd
    if cd > _COS_TOL:
        X = np.sqrt(xi**2 + q**2)
        with np.errstate(divide="ignore", invalid="ignore"):
            I5 = MU_RATIO * 2.0 / cd * np.arctan((eta * (X + q * cd) + X * (R + X) * sd) / (xi * (R + X) * cd))
        I5 = np.where(xi == 0.0, 0.0, I5)
    else:
        I5 = -MU_RATIO * xi * sd / (R + db)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.arctan(xi * eta / (q * R))
    theta = np.where(q == 0.0, 0.0, theta)
    return db * q / (R * (R + xi)) + sd * theta - I5 * sd * cd


def okada_uz(x1, x2, depth_bottom, length, width, dip_deg, rake_deg, slip, nudge=0.0):
    """Vertical surface displacement for one rectangle in its own frame.

    ``x1`` is along strike from the centre of the bottom edge's surface
    projection, ``x2`` is horizontal and positive towards the up-dip side.
    All lengths in metres. Points on the singular lines (projected fault
    ends, or where the fault plane would intersect the surface) are moved
    by ``nudge`` metres before evaluation.
    """
    dip = math.radians(max(dip_deg, MIN_DIP_DEG))
    sd, cd = math.sin(dip), math.cos(dip)
    half = 0.5 * length
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if nudge > 0.0:
        edge_tol = 1e-9 * max(length, width)
        on_end = (np.abs(x1 - half) < edge_tol) | (np.abs(x1 + half) < edge_tol)
        x1 = np.where(on_end, x1 + nudge, x1)
        q = x2 * sd - depth_bottom * cd
        x2 = np.where(np.abs(q) < edge_tol, x2 + nudge, x2)
    p = x2 * cd + depth_bottom * sd
    q = x2 * sd - depth_bottom * cd
    rake = math.radians(rake_deg)
    u = np.zeros(np.broadcast(x1, x2).shape)
    ss = slip * math.cos(rake)
    ds = slip * math.sin(rake)
    if abs(ss) > 0.0:
        u -= ss / (2.0 * math.pi) * _chinnery(_uz_strike, x1 + half, p, q, length, width, sd, cd)
    if abs(ds) > 0.0:
        u -= ds / (2.0 * math.pi) * _chinnery(_uz_dip, x1 + half, p, q, length, width, sd, cd)
    return u


def project(lat, lon, lat_ref: float, lon_ref: float):
    """Flat-earth tangent-plane coordinates (east, north) in metres."""
    k = KM_PER_DEG * 1e3
    x = (np.asarray(lon) - lon_ref) * k * math.cos(math.radians(lat_ref))
    y = (np.asarray(lat) - lat_ref) * k
    return x, y


def rect_uz(rect: OkadaRect, x, y, ref, nudge=0.0):
    """Vertical displacement of ``rect`` at tangent-plane points ``(x, y)``."""
    cx, cy = project(rect.centroid_lat, rect.centroid_lon, *ref)
    L = rect.length * 1e3
    W = rect.width * 1e3
    dip = math.radians(max(rect.dip, MIN_DIP_DEG))
    strike = math.radians(rect.strike)
    sx, sy = math.sin(strike), math.cos(strike)  # along strike
    dx, dy = sy, -sx  # horizontal down-dip (right of strike)
    half_w = 0.5 * W * math.cos(dip)
    bx, by = cx + half_w * dx, cy + half_w * dy
    depth_bottom = rect.depth * 1e3 + 0.5 * W * math.sin(dip)
    rx, ry = x - bx, y - by
    x1 = rx * sx + ry * sy
    x2 = -(rx * dx + ry * dy)
    return okada_uz(x1, x2, depth_bottom, L, W, rect.dip, rect.rake, rect.slip, nudge=nudge)


def compute_deformation(rects: list[OkadaRect], spec: GridSpec) -> DeformationGrid:
    """Sum of Okada vertical displacements of ``rects`` on the grid cells."""
    dz = np.zeros((spec.nlat, spec.nlon))
    if not rects:
        return DeformationGrid(spec, dz)
    ref = (rects[0].centroid_lat, rects[0].centroid_lon)
    lon, lat = np.meshgrid(spec.lons, spec.lats)
    x, y = project(lat, lon, *ref)
    cell = min(spec.dlat, spec.dlon * math.cos(math.radians(ref[0]))) * KM_PER_DEG * 1e3
    for rect in rects:
        if rect.slip == 0.0:
            continue
        dz += rect_uz(rect, x, y, ref, nudge=1e-6 * cell)
    return DeformationGrid(spec, dz)
