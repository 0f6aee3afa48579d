"""Bayesian inversion of historical earthquake sources from tsunami accounts."""
from .geometry import EarthquakeParams, FaultGeometry, OkadaRect, ScalingLaw, build_rupture
from .mcmc import SamplerConfig, SampleStore, diagnostics, run_sampler
from .obsmodel import ObsDist, Observation, log_obs_density, total_log_likelihood
from .okada import GridSpec, compute_deformation
from .priors import PriorSpec, log_prior, sample_prior
from .wavesim import BathymetryGrid, ForwardOutput, Gauge, simulate

__version__ = "0.1.0"
