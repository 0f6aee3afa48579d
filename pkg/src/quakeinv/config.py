"""Scenario configuration: an INI file naming the input tables plus model settings."""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .forward import EarthquakeModel, Scenario
from .geometry import PARAM_NAMES, ScalingLaw, read_geometry
from .mcmc import SamplerConfig, evaluate
from .obsmodel import ObservationConfigError, check_gauges, read_observations
from .priors import PriorSpec, sample_prior
from .wavesim import read_bathymetry, read_gauges

DEFAULT_STDS = (0.065, 0.065, 2.8, 0.022, 0.035, 0.09)


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    geometry: Path
    bathymetry: Path
    gauges: Path
    observations: Path
    output_dir: Path
    prior: PriorSpec = PriorSpec()
    scaling: ScalingLaw = ScalingLaw()
    duration: float = 60.0
    cfl: float = 0.45
    max_segment_km: float = 100.0
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(4, 10000, DEFAULT_STDS, resample_period=2000))
    initial: tuple = ("prior",)  # "prior" or one parameter vector per chain
    rel_perturbation: float = 0.1
    fim_mode: str = "relative"
    seed: int = 0
    data: dict = field(default=None, compare=False, repr=False)

    def load_data(self) -> dict:
        """Parse every referenced file and check gauge cross-references."""
        if self.data is None:
            try:
                geom = read_geometry(self.geometry)
                bathy = read_bathymetry(self.bathymetry)
                gauges = read_gauges(self.gauges)
                obs = read_observations(self.observations)
            except (ValueError, KeyError) as exc:
                raise ConfigError(str(exc)) from exc
            try:
                check_gauges(obs, [g.name for g in gauges])
            except ObservationConfigError as exc:
                raise ConfigError(f"{self.observations}: {exc}") from None
            self.data = {"geometry": geom, "bathymetry": bathy, "gauges": gauges, "observations": obs}
        return self.data

    def scenario(self) -> Scenario:
        d = self.load_data()
        return Scenario(d["geometry"], d["bathymetry"], d["gauges"], self.scaling, self.duration, self.cfl, self.max_segment_km)

    def model(self) -> EarthquakeModel:
        return EarthquakeModel(self.scenario(), self.prior, self.load_data()["observations"])

    def initial_states(self) -> list[np.ndarray]:
        n = self.sampler.n_chains
        if self.initial == ("prior",):
            rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(2,)))
            return [draw_initial(self.model(), self.prior, rng) for _ in range(n)]
        vecs = [np.array(v, dtype=float) for v in self.initial]
        if len(vecs) == 1:
            vecs = vecs * n
        if len(vecs) != n:
            raise ConfigError(f"{len(vecs)} initial states given for {n} chains")
        return vecs

    def to_ini(self) -> str:
        return dump_config(self)


def draw_initial(model, prior: PriorSpec, rng, max_tries: int = 1000) -> np.ndarray:
    """Prior draw with non-zero likelihood, for starting a chain."""
    geom = model.scenario.geom
    for _ in range(max_tries):
        x = sample_prior(prior, geom, rng).to_array()
        lp, ll, _, _ = evaluate(model, x)
        if lp + ll > -math.inf:
            return x
    raise ConfigError(f"no prior draw with non-zero likelihood in {max_tries} attempts; give explicit initial states")


# -- parsing ------------------------------------------------------------------

_FILE_KEYS = ("geometry", "bathymetry", "gauges", "observations")


def _line_of(text: str, section: str, key: str) -> int | None:
    cur = None
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            cur = m.group(1).strip()
        elif cur == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return n
    return None


class _Reader:
    def __init__(self, cp, text, path):
        self.cp, self.text, self.path = cp, text, path

    def where(self, section, key):
        n = _line_of(self.text, section, key)
        return f"{self.path}:{n}" if n else str(self.path)

    def get(self, section, key, conv, default=None, required=False):
        if not self.cp.has_option(section, key):
            if required:
                raise ConfigError(f"{self.path}: missing required field [{section}] {key}")
            return default
        raw = self.cp.get(section, key).strip()
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{self.where(section, key)}: bad value for [{section}] {key} = {raw!r} ({exc})") from None


def _floats(raw: str) -> tuple:
    vals = tuple(float(v) for v in raw.replace(",", " ").split())
    if not vals:
        raise ValueError("empty list")
    return vals


def _ints(raw: str) -> tuple:
    return tuple(int(v) for v in raw.replace(",", " ").split())


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _pair(raw: str) -> tuple:
    vals = _floats(raw)
    if len(vals) != 2:
        raise ValueError("expected two numbers")
    return vals


def load_config(path, validate_files: bool = True) -> ScenarioConfig:
    """Read and validate a scenario file; omitted prior fields take the 1852 defaults."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        where = f"{path}:{line}" if line else str(path)
        raise ConfigError(f"{where}: {exc.message if hasattr(exc, 'message') else exc}") from None
    r = _Reader(cp, text, path)
    base = path.parent

    def resolve(raw):
        p = Path(raw).expanduser()
        return p if p.is_absolute() else (base / p).resolve()

    files = {k: r.get("files", k, resolve, required=True) for k in _FILE_KEYS}
    out_dir = r.get("files", "output_dir", resolve, default=(base / "output").resolve())

    d = PriorSpec()
    try:
        prior = PriorSpec(
            depth_mu=r.get("prior", "depth_mu", float, d.depth_mu),
            depth_sigma=r.get("prior", "depth_sigma", float, d.depth_sigma),
            depth_bounds=r.get("prior", "depth_bounds", _pair, d.depth_bounds),
            depth_offset_sigma=r.get("prior", "depth_offset_sigma", float, d.depth_offset_sigma),
            mag_rate=r.get("prior", "mag_rate", float, d.mag_rate),
            mag_bounds=r.get("prior", "mag_bounds", _pair, d.mag_bounds),
            dlogl_sigma=r.get("prior", "dlogl_sigma", float, d.dlogl_sigma),
            dlogw_sigma=r.get("prior", "dlogw_sigma", float, d.dlogw_sigma),
        )
        s = ScalingLaw()
        scaling = ScalingLaw(
            r.get("scaling", "a_L", float, s.a_L),
            r.get("scaling", "b_L", float, s.b_L),
            r.get("scaling", "a_W", float, s.a_W),
            r.get("scaling", "b_W", float, s.b_W),
            r.get("scaling", "rigidity", float, s.rigidity),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None

    seed = r.get("sampler", "seed", int, 0)
    stds = r.get("sampler", "proposal_stds", _floats, DEFAULT_STDS)
    if len(stds) != len(PARAM_NAMES):
        raise ConfigError(f"{r.where('sampler', 'proposal_stds')}: need {len(PARAM_NAMES)} proposal stds, got {len(stds)}")
    try:
        sampler = SamplerConfig(
            n_chains=r.get("sampler", "n_chains", int, 4),
            total_steps=r.get("sampler", "total_steps", int, 10000),
            proposal_stds=stds,
            resample_period=r.get("sampler", "resample_period", int, None),
            resample_steps=r.get("sampler", "resample_steps", _ints, None),
            burn_in=r.get("sampler", "burn_in", int, 0),
            seed=seed,
            resample_enabled=r.get("sampler", "resample", _bool, True),
            checkpoint_every=r.get("sampler", "checkpoint_every", int, 500),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: [sampler] {exc}") from None

    initial = ("prior",)
    if cp.has_option("sampler", "initial") and cp.get("sampler", "initial").strip().lower() != "prior":
        vecs = []
        for chunk in cp.get("sampler", "initial").split("|"):
            if chunk.strip():
                try:
                    v = _floats(chunk)
                except ValueError:
                    raise ConfigError(f"{r.where('sampler', 'initial')}: bad initial state {chunk.strip()!r}") from None
                if len(v) != len(PARAM_NAMES):
                    raise ConfigError(f"{r.where('sampler', 'initial')}: initial state needs {len(PARAM_NAMES)} values")
                vecs.append(v)
        initial = tuple(vecs)

    cfg = ScenarioConfig(
        files["geometry"],
        files["bathymetry"],
        files["gauges"],
        files["observations"],
        out_dir,
        prior,
        scaling,
        duration=r.get("simulation", "duration_min", float, 60.0),
        cfl=r.get("simulation", "cfl", float, 0.45),
        max_segment_km=r.get("simulation", "max_segment_km", float, 100.0),
        sampler=sampler,
        initial=initial,
        rel_perturbation=r.get("sensitivity", "relative_perturbation", float, 0.1),
        fim_mode=r.get("sensitivity", "fim_mode", str, "relative"),
        seed=seed,
    )
    if not cfg.duration > 0:
        raise ConfigError(f"{r.where('simulation', 'duration_min')}: duration must be positive")
    if not 0 < cfg.cfl < 1:
        raise ConfigError(f"{r.where('simulation', 'cfl')}: cfl must lie in (0, 1)")
    if cfg.fim_mode not in ("absolute", "relative"):
        raise ConfigError(f"{r.where('sensitivity', 'fim_mode')}: fim_mode must be absolute or relative")
    if len(initial) not in (1, sampler.n_chains):
        raise ConfigError(f"{r.where('sampler', 'initial')}: {len(initial)} initial states for {sampler.n_chains} chains")
    if validate_files:
        for k in _FILE_KEYS:
            if not files[k].is_file():
                raise ConfigError(f"{r.where('files', k)}: {k} file {files[k]} does not exist")
        cfg.load_data()
    return cfg


def _num(v) -> str:
    return repr(float(v))


def dump_config(cfg: ScenarioConfig) -> str:
    s = cfg.sampler
    lines = ["[files]"]
    for k in _FILE_KEYS + ("output_dir",):
        lines.append(f"{k} = {getattr(cfg, k)}")
    p = cfg.prior
    lines += [
        "",
        "[prior]",
        f"depth_mu = {_num(p.depth_mu)}",
        f"depth_sigma = {_num(p.depth_sigma)}",
        f"depth_bounds = {_num(p.depth_bounds[0])}, {_num(p.depth_bounds[1])}",
        f"depth_offset_sigma = {_num(p.depth_offset_sigma)}",
        f"mag_rate = {_num(p.mag_rate)}",
        f"mag_bounds = {_num(p.mag_bounds[0])}, {_num(p.mag_bounds[1])}",
        f"dlogl_sigma = {_num(p.dlogl_sigma)}",
        f"dlogw_sigma = {_num(p.dlogw_sigma)}",
        "",
        "[scaling]",
    ]
    for f in fields(ScalingLaw):
        lines.append(f"{f.name} = {_num(getattr(cfg.scaling, f.name))}")
    lines += [
        "",
        "[simulation]",
        f"duration_min = {_num(cfg.duration)}",
        f"cfl = {_num(cfg.cfl)}",
        f"max_segment_km = {_num(cfg.max_segment_km)}",
        "",
        "[sampler]",
        f"seed = {cfg.seed}",
        f"n_chains = {s.n_chains}",
        f"total_steps = {s.total_steps}",
        f"burn_in = {s.burn_in}",
        f"proposal_stds = {', '.join(_num(v) for v in s.proposal_stds)}",
        f"resample = {'true' if s.resample_enabled else 'false'}",
        f"checkpoint_every = {s.checkpoint_every}",
    ]
    if s.resample_period is not None:
        lines.append(f"resample_period = {s.resample_period}")
    if s.resample_steps is not None:
        lines.append(f"resample_steps = {', '.join(str(k) for k in s.resample_steps)}")
    if cfg.initial == ("prior",):
        lines.append("initial = prior")
    else:
        lines.append("initial = " + " | ".join(", ".join(_num(v) for v in vec) for vec in cfg.initial))
    lines += [
        "",
        "[sensitivity]",
        f"relative_perturbation = {_num(cfg.rel_perturbation)}",
        f"fim_mode = {cfg.fim_mode}",
    ]
    return "\n".join(lines) + "\n"

