"""Prior density over the six earthquake parameters."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .geometry import EarthquakeParams, FaultGeometry, GeometryDomainError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class PriorConfigError(RuntimeError):
    pass


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters; defaults are the 1852 Banda Arc values."""

    depth_mu: float = 30.0
    depth_sigma: float = 5.0
    depth_bounds: tuple[float, float] = (2.5, 50.0)
    depth_offset_sigma: float = 5.0
    mag_rate: float = 0.5
    mag_bounds: tuple[float, float] = (6.5, 9.5)
    dlogl_sigma: float = 0.188
    dlogw_sigma: float = 0.172

    def __post_init__(self):
        sigmas = (self.depth_sigma, self.depth_offset_sigma, self.dlogl_sigma, self.dlogw_sigma)
        if not all(s > 0 for s in sigmas):
            raise ValueError("prior standard deviations must be positive")
        for name in ("depth_bounds", "mag_bounds"):
            a, b = getattr(self, name)
            if not a < b:
                raise ValueError(f"{name} must satisfy a < b, got ({a}, {b})")
        if not self.mag_rate > 0:
            raise ValueError("magnitude rate must be positive")


def normal_logpdf(x, mu, sigma):
    z = (x - mu) / sigma
    return -0.5 * z * z - math.log(sigma) - _LOG_SQRT_2PI


def truncnorm_logpdf(x, mu, sigma, a, b):
    if not a < x < b:
        return -math.inf
    za, zb = (a - mu) / sigma, (b - mu) / sigma
    log_mass = float(log_ndtr(zb) + np.log1p(-np.exp(log_ndtr(za) - log_ndtr(zb))))
    return normal_logpdf(x, mu, sigma) - log_mass


def truncexp_logpdf(x, rate, a, b):
    """Density proportional to ``exp(-rate (x - a))`` on ``(a, b)``."""
    if not a < x < b:
        return -math.inf
    return math.log(rate) - rate * (x - a) - math.log(-math.expm1(-rate * (b - a)))


def truncexp_mean(rate, a, b):
    w = b - a
    return a + 1.0 / rate - w * math.exp(-rate * w) / (-math.expm1(-rate * w))


def log_prior(p: EarthquakeParams, spec: PriorSpec, geom: FaultGeometry) -> float:
    """Unnormalized log prior (lat/lon term has no surface-to-depth Jacobian)."""
    mag = truncexp_logpdf(p.magnitude, spec.mag_rate, *spec.mag_bounds)
    if mag == -math.inf:
        return -math.inf
    try:
        depth, _, _ = geom.interp(p.lat, p.lon)
    except GeometryDomainError:
        return -math.inf
    loc = truncnorm_logpdf(depth, spec.depth_mu, spec.depth_sigma, *spec.depth_bounds)
    if loc == -math.inf:
        return -math.inf
    return (
        loc
        + normal_logpdf(p.depth_offset, 0.0, spec.depth_offset_sigma)
        + mag
        + normal_logpdf(p.dlogl, 0.0, spec.dlogl_sigma)
        + normal_logpdf(p.dlogw, 0.0, spec.dlogw_sigma)
    )


def _sample_truncexp(rng, rate, a, b):
    u = rng.random()
    return a - math.log1p(u * math.expm1(-rate * (b - a))) / rate


def _sample_location(rng, spec, geom, max_tries):
    la0, la1, lo0, lo1 = geom.bounds
    a, b = spec.depth_bounds
    mode = min(max(spec.depth_mu, a), b)
    peak = math.exp(normal_logpdf(mode, spec.depth_mu, spec.depth_sigma))
    for _ in range(max_tries):
        lat = la0 + (la1 - la0) * rng.random()
        lon = lo0 + (lo1 - lo0) * rng.random()
        u = rng.random()
        depth, _, _ = geom.interp(lat, lon)
        if not a < depth < b:
            continue
        if u * peak < math.exp(normal_logpdf(depth, spec.depth_mu, spec.depth_sigma)):
            return lat, lon
    raise PriorConfigError(
        f"no admissible epicentre after {max_tries} proposals; "
        "the geometry region and the depth prior do not overlap"
    )


def sample_prior(spec: PriorSpec, geom: FaultGeometry, rng: np.random.Generator, max_tries: int = 10**6) -> EarthquakeParams:
    """Independent draw of every component; lat/lon by rejection on the depth density."""
    lat, lon = _sample_location(rng, spec, geom, max_tries)
    return EarthquakeParams(
        lat,
        lon,
        float(rng.normal(0.0, spec.depth_offset_sigma)),
        _sample_truncexp(rng, spec.mag_rate, *spec.mag_bounds),
        float(rng.normal(0.0, spec.dlogl_sigma)),
        float(rng.normal(0.0, spec.dlogw_sigma)),
    )


def truncnorm_ppf(u, mu, sigma, a, b):
    """Quantile function of a truncated normal (used by tests and synthetic draws)."""
    pa, pb = ndtr((a - mu) / sigma), ndtr((b - mu) / sigma)
    return mu + sigma * ndtri(pa + u * (pb - pa))
