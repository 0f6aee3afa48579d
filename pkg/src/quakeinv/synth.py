"""Synthetic scenarios with a known source, for validating the inversion."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .forward import Scenario
from .geometry import KM_PER_DEG, PARAM_NAMES, EarthquakeParams, FaultGeometry, write_geometry
from .obsmodel import ObsDist, Observation, write_observations
from .okada import GridSpec
from .priors import PriorSpec, log_prior
from .wavesim import NO_ARRIVAL, BathymetryGrid, Gauge, write_bathymetry, write_gauges


class SyntheticScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    """Widths of the generated observation distributions.

    Heights get ``height_rel * value`` (at least ``height_floor``),
    arrivals a fixed ``arrival_sigma`` in minutes. Inundation is observed
    only when ``inundation_rel`` is set.
    """

    height_rel: float = 0.10
    height_floor: float = 0.0
    arrival_sigma: float = 2.0
    inundation_rel: float | None = None
    observe_heights: bool = True
    observe_arrivals: bool = True


def synthetic_truth() -> EarthquakeParams:
    return EarthquakeParams(-5.0, 129.0, 0.0, 8.6, 0.0, 0.0)


def trench_geometry(trench_lon=128.0, lat_range=(-9.0, -1.0), lon_range=(128.0, 131.0), step=0.25, dip=15.0, top_depth=2.0) -> FaultGeometry:
    """Straight north-striking interface dipping east from a trench line."""
    lats = np.arange(lat_range[0], lat_range[1] + 0.5 * step, step)
    lons = np.arange(lon_range[0], lon_range[1] + 0.5 * step, step)
    lon, lat = np.meshgrid(lons, lats)
    dist = (lon - trench_lon) * KM_PER_DEG * np.cos(np.radians(lat))
    depth = top_depth + dist * math.tan(math.radians(dip))
    n = lat.size
    return FaultGeometry(lat.ravel(), lon.ravel(), depth.ravel(), np.zeros(n), np.full(n, dip))


def flat_basin(n=100, lat_sw=-10.0, lon_sw=125.0, cell=0.1, depth=4000.0) -> BathymetryGrid:
    spec = GridSpec(lat_sw + 0.5 * cell, lon_sw + 0.5 * cell, n, n, cell, cell)
    return BathymetryGrid(spec, np.full((n, n), depth))


def basin_gauges() -> list[Gauge]:
    # coarse-grid cell centres, kept away from the basin walls
    return [
        Gauge("east", -4.95, 131.55),
        Gauge("northeast", -2.05, 130.55),
        Gauge("southeast", -7.95, 130.55),
        Gauge("northwest", -1.45, 127.05),
        Gauge("southwest", -8.45, 127.05),
    ]


def synthetic_scenario(duration=45.0) -> Scenario:
    return Scenario(trench_geometry(), flat_basin(), basin_gauges(), duration=duration)


def make_observations(out, gauges, noise: NoiseSpec) -> list[Observation]:
    """Normal observations centred on the forward values ``out``."""
    obs = []
    for g in gauges:
        v = out.gauges[g.name]
        if noise.observe_arrivals:
            if v.arrival == NO_ARRIVAL:
                raise SyntheticScenarioError(f"the truth produces no arrival at gauge {g.name}")
            obs.append(Observation(g.name, "arrival", ObsDist("normal", (v.arrival, noise.arrival_sigma))))
        if noise.observe_heights:
            s = max(noise.height_rel * v.max_height, noise.height_floor)
            if not s > 0:
                raise SyntheticScenarioError(f"zero observation width for the height at gauge {g.name}")
            obs.append(Observation(g.name, "height", ObsDist("normal", (v.max_height, s))))
        if noise.inundation_rel is not None:
            s = noise.inundation_rel * v.inundation
            if not s > 0:
                raise SyntheticScenarioError(f"zero observation width for the inundation at gauge {g.name}")
            obs.append(Observation(g.name, "inundation", ObsDist("normal", (v.inundation, s))))
    return obs


def generate_synthetic_scenario(truth: EarthquakeParams, noise: NoiseSpec, out_dir, scenario: Scenario, prior: PriorSpec = PriorSpec()):
    """Run the forward model at ``truth`` and write observations centred on it.

    Writes ``observations.csv`` and ``truth.csv`` into ``out_dir`` and
    returns the observation list.
    """
    if log_prior(truth, prior, scenario.geom) == -math.inf:
        raise SyntheticScenarioError("the truth has zero prior density")
    out = scenario.forward(truth)
    obs = make_observations(out, scenario.gauges, noise)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_observations(out_dir / "observations.csv", obs)
    write_truth(out_dir / "truth.csv", truth, out)
    return obs


def write_truth(path, truth: EarthquakeParams, out) -> None:
    cols = out.columns()
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(PARAM_NAMES) + list(cols))
        w.writerow([repr(float(v)) for v in truth.to_array()] + [repr(float(v)) for v in cols.values()])


def read_truth(path) -> EarthquakeParams:
    with Path(path).open(newline="") as fh:
        row = next(csv.DictReader(fh))
    return EarthquakeParams(*(float(row[k]) for k in PARAM_NAMES))


def write_synthetic_basin(out_dir, scenario: Scenario) -> None:
    """Geometry, bathymetry and gauge files for ``scenario``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_geometry(scenario.geom, out_dir / "geometry.csv")
    write_bathymetry(out_dir / "bathymetry.asc", scenario.bathy)
    write_gauges(out_dir / "gauges.csv", scenario.gauges)
