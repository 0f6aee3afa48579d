"""Observation distributions and the total log-likelihood of a forward run.

Each historical account is encoded as a probability density over the
true value of one observable at one gauge. The likelihood of a forward
output is the product of these densities evaluated at the simulated
values.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from scipy.special import gammaln, log_ndtr

from .wavesim import KINDS, ForwardOutput

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_LN2 = math.log(2.0)

# parameter names per family, in file / vector order
FAMILY_PARAMS = {
    "normal": ("mean", "std"),
    "skewnorm": ("mean", "std", "a"),
    "chi": ("mu", "sigma", "dof"),
}


class ObservationConfigError(ValueError):
    """Malformed observation file, or an observation that cannot be matched to the forward output."""


@dataclass(frozen=True)
class ObsDist:
    """A parametric observation density.

    ``normal``: (mean, std). ``skewnorm``: (location, scale, skew a).
    ``chi``: (location, scale, degrees of freedom), i.e. ``loc + scale * X``
    with X standard chi.
    """

    family: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.family not in FAMILY_PARAMS:
            raise ValueError(f"unknown distribution family {self.family!r}")
        want = len(FAMILY_PARAMS[self.family])
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        if len(params) != want:
            raise ValueError(f"{self.family} takes {want} parameters, got {len(params)}")
        if not all(math.isfinite(p) for p in params):
            raise ValueError(f"non-finite {self.family} parameter in {params}")
        if not params[1] > 0:
            raise ValueError(f"{self.family} scale must be positive, got {params[1]}")
        if self.family == "chi" and not params[2] > 0:
            raise ValueError(f"chi degrees of freedom must be positive, got {params[2]}")

    @property
    def param_names(self) -> tuple[str, ...]:
        return FAMILY_PARAMS[self.family]

    def with_params(self, params) -> "ObsDist":
        return ObsDist(self.family, tuple(params))


@dataclass(frozen=True)
class Observation:
    gauge: str
    kind: str
    dist: ObsDist
    line: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"observation kind must be one of {KINDS}, got {self.kind!r}")

    @property
    def label(self) -> str:
        return f"{self.gauge}_{self.kind}"


def log_obs_density(d: ObsDist, value: float) -> float:
    """Log density of ``d`` at ``value``; ``-inf`` outside the support or for a missing arrival."""
    if not math.isfinite(value):
        return -math.inf
    if d.family == "normal":
        mu, sigma = d.params
        x = (value - mu) / sigma
        return -0.5 * x * x - math.log(sigma) - _LOG_SQRT_2PI
    if d.family == "skewnorm":
        mu, sigma, a = d.params
        x = (value - mu) / sigma
        # ln(1 + erf(a x / sqrt 2)) = ln 2 + ln Phi(a x)
        return -0.5 * x * x - math.log(sigma) - _LOG_SQRT_2PI + _LN2 + float(log_ndtr(a * x))
    mu, sigma, k = d.params
    x = (value - mu) / sigma
    if x <= 0.0:
        return -math.inf
    return -(0.5 * x * x + math.log(sigma) + (0.5 * k - 1.0) * _LN2 + float(gammaln(0.5 * k)) - (k - 1.0) * math.log(x))


def observed_value(out: ForwardOutput, ob: Observation) -> float:
    try:
        return out.value(ob.gauge, ob.kind)
    except KeyError as exc:
        where = f" (line {ob.line})" if ob.line else ""
        raise ObservationConfigError(f"observation {ob.label}{where}: {exc.args[0]}") from None


def total_log_likelihood(out: ForwardOutput, obs: list[Observation]) -> float:
    """Sum of per-observation log densities (correctly rounded, so order-independent)."""
    terms = []
    for ob in obs:
        lp = log_obs_density(ob.dist, observed_value(out, ob))
        if lp == -math.inf:
            return -math.inf
        terms.append(lp)
    return math.fsum(terms)


def check_gauges(obs: list[Observation], gauge_names) -> None:
    """Raise if an observation names a gauge that is not configured."""
    known = set(gauge_names)
    for ob in obs:
        if ob.gauge not in known:
            where = f"line {ob.line}: " if ob.line else ""
            raise ObservationConfigError(f"{where}observation refers to unknown gauge {ob.gauge!r}")


_HEADER = """\
# Observation distributions, one per (gauge, kind).
# kind: height [m] | arrival [min] | inundation [m]
# normal:   p1 = mean, p2 = std
# skewnorm: p1 = location, p2 = scale, p3 = skew a
# chi:      p1 = location, p2 = scale, p3 = degrees of freedom
"""


def read_observations(path) -> list[Observation]:
    path = Path(path)
    return _parse_observations(path.read_text().splitlines(), str(path))


def _parse_observations(lines, source) -> list[Observation]:
    obs = []
    seen = set()
    header_seen = False
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        rec = [f.strip() for f in next(csv.reader([line]))]
        if not header_seen:
            header_seen = True
            if rec[:3] == ["gauge", "kind", "family"]:
                continue
        if len(rec) < 5:
            raise ObservationConfigError(f"{source}:{lineno}: expected gauge, kind, family, p1, p2[, p3]")
        gauge, kind, family = rec[:3]
        if (gauge, kind) in seen:
            raise ObservationConfigError(f"{source}:{lineno}: duplicate observation {gauge}/{kind}")
        try:
            params = tuple(float(v) for v in rec[3:] if v != "")
            obs.append(Observation(gauge, kind, ObsDist(family, params), line=lineno))
        except ValueError as exc:
            raise ObservationConfigError(f"{source}:{lineno}: {exc}") from None
        seen.add((gauge, kind))
    if not obs:
        raise ObservationConfigError(f"{source}: no observations")
    return obs


def write_observations(path, obs: list[Observation]) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(_HEADER)
        w = csv.writer(fh)
        w.writerow(["gauge", "kind", "family", "p1", "p2", "p3"])
        for ob in obs:
            vals = [repr(p) for p in ob.dist.params]
            w.writerow([ob.gauge, ob.kind, ob.dist.family] + vals + [""] * (3 - len(vals)))


def banda_1852_observations() -> list[Observation]:
    """The 13 elicited observations for the 1852 Banda Arc event."""
    text = resources.files("quakeinv").joinpath("data/observations_1852.csv").read_text()
    return _parse_observations(text.splitlines(), "observations_1852.csv")


def banda_1852_gauges_path():
    return resources.files("quakeinv").joinpath("data/gauges_1852.csv")
