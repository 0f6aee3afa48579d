"""End-to-end forward map and the posterior model used by the sampler."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import PARAM_NAMES, EarthquakeParams, FaultGeometry, GeometryDomainError, InvalidDepthError, ScalingLaw, build_rupture
from .obsmodel import Observation, total_log_likelihood
from .okada import compute_deformation
from .priors import PriorSpec, log_prior
from .wavesim import BathymetryGrid, ForwardOutput, Gauge, InstabilityError, ReflectionWarning, extract_observables, simulate

log = logging.getLogger(__name__)


class ForwardFailure(RuntimeError):
    """The forward map has no valid output for these parameters."""


@dataclass
class Scenario:
    geom: FaultGeometry
    bathy: BathymetryGrid
    gauges: list[Gauge]
    law: ScalingLaw = ScalingLaw()
    duration: float = 60.0  # minutes
    cfl: float = 0.45
    max_segment_km: float = 100.0

    def forward(self, p: EarthquakeParams) -> ForwardOutput:
        """Rupture, seafloor deformation, wave propagation, gauge extraction.

        Raises
        ------
        ForwardFailure
            The rupture leaves the geometry region or reaches the surface,
            or the wave solver blows up.
        """
        try:
            rects = build_rupture(p, self.geom, self.law, self.max_segment_km)
            dz = compute_deformation(rects, self.bathy.spec)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ReflectionWarning)
                series = simulate(dz, self.bathy, self.gauges, self.duration, self.cfl, check_reflections=False)
        except (GeometryDomainError, InvalidDepthError, InstabilityError) as exc:
            raise ForwardFailure(str(exc)) from exc
        return extract_observables(series, self.gauges)


@dataclass
class EarthquakeModel:
    """Posterior over the six earthquake parameters for one scenario."""

    scenario: Scenario
    prior: PriorSpec
    observations: list[Observation]
    param_names: tuple = PARAM_NAMES
    forward_calls: int = field(default=0, init=False)

    def log_prior(self, x) -> float:
        try:
            p = EarthquakeParams.from_array(x)
        except ValueError:
            return -math.inf
        return log_prior(p, self.prior, self.scenario.geom)

    def forward(self, x) -> ForwardOutput:
        self.forward_calls += 1
        return self.scenario.forward(EarthquakeParams.from_array(x))

    def log_likelihood(self, out: ForwardOutput) -> float:
        return total_log_likelihood(out, self.observations)

    def output_columns(self) -> list[str]:
        return [f"{g.name}_{k}" for g in self.scenario.gauges for k in ("height", "arrival", "inundation")]

    def output_values(self, out: ForwardOutput | None) -> list[float]:
        if out is None:
            return [math.nan] * (3 * len(self.scenario.gauges))
        cols = out.columns()
        return [cols[c] for c in self.output_columns()]


def as_array(p) -> np.ndarray:
    if isinstance(p, EarthquakeParams):
        return p.to_array()
    return np.asarray(p, dtype=float)
