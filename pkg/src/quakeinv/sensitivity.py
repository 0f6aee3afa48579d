"""Sensitivity of the posterior to the observation-distribution parameters.

Scores are derivatives of the negative log observation density
``Phi = -log p(value; theta)`` with respect to the distribution
parameters. Their covariance over posterior samples is the Fisher
information ``I``, which gives the quadratic relative-entropy estimate
``R(P^{theta+v} || P^theta) ~ v'Iv / 2``. Goal-oriented bounds on
``E_Q[f] - E_P[f]`` follow from the variational (Donsker-Varadhan)
representation of relative entropy.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import erfcx

from .obsmodel import Observation

log = logging.getLogger(__name__)

_SQRT_2_PI = math.sqrt(2.0 / math.pi)
_TWO_SQRT_PI = 2.0 / math.sqrt(math.pi)
_HALF_LN2 = 0.5 * math.log(2.0)


class ScoreDomainError(ValueError):
    """The value is outside the interior of the distribution's support."""


def digamma(x: float) -> float:
    """psi(x) for x > 0: recurrence up past 10, then the asymptotic series.

    Seven series terms leave a truncation error below 1e-16 for x > 10.
    """
    if not x > 0:
        raise ValueError(f"digamma implemented for x > 0 only, got {x}")
    acc = 0.0
    while x <= 10.0:
        acc -= 1.0 / x
        x += 1.0
    f = 1.0 / (x * x)
    series = f * (1 / 12 - f * (1 / 120 - f * (1 / 252 - f * (1 / 240 - f * (1 / 132 - f * (691 / 32760 - f / 12))))))
    return acc + math.log(x) - 0.5 / x - series


def score(ob: Observation, value: float) -> np.ndarray:
    """Gradient of the negative log density of ``ob`` at ``value``.

    Components follow ``ob.dist.param_names``: (mean, std) for normal,
    (mean, std, a) for skewnorm, (mu, sigma, dof) for chi.
    """
    if not math.isfinite(value):
        raise ScoreDomainError(f"{ob.label}: non-finite value {value}")
    d = ob.dist
    if d.family == "normal":
        mu, s = d.params
        r = value - mu
        return np.array([-r / s**2, -(r * r) / s**3 + 1.0 / s])
    if d.family == "skewnorm":
        mu, s, a = d.params
        x = (value - mu) / s
        z = a * x / math.sqrt(2.0)
        # exp(-z^2) / (1 + erf z) without overflow
        ratio = 1.0 / float(erfcx(-z))
        return np.array(
            [
                -(x - _SQRT_2_PI * a * ratio) / s,
                (1.0 - x * x + _TWO_SQRT_PI * z * ratio) / s,
                -_SQRT_2_PI * x * ratio,
            ]
        )
    mu, s, k = d.params
    x = (value - mu) / s
    if not x > 0:
        raise ScoreDomainError(f"{ob.label}: chi value {value} not above location {mu}")
    return np.array(
        [
            -(x - (k - 1.0) / x) / s,
            -(x * x - k) / s,
            _HALF_LN2 + 0.5 * digamma(0.5 * k) - math.log(x),
        ]
    )


@dataclass(frozen=True)
class ObsParamVector:
    """Flattened observation parameters; one entry per (observation, parameter)."""

    entries: tuple  # (obs index, gauge, kind, family, param name, value)

    @classmethod
    def from_observations(cls, obs: list[Observation]) -> "ObsParamVector":
        ents = []
        for i, ob in enumerate(obs):
            for name, val in zip(ob.dist.param_names, ob.dist.params):
                ents.append((i, ob.gauge, ob.kind, ob.dist.family, name, val))
        return cls(tuple(ents))

    @property
    def values(self) -> np.ndarray:
        return np.array([e[5] for e in self.entries])

    @property
    def labels(self) -> list[str]:
        return [f"{e[1]}/{e[2]}/{e[4]}" for e in self.entries]

    def __len__(self):
        return len(self.entries)


@dataclass
class FIMatrix:
    matrix: np.ndarray
    mode: str  # "absolute" | "relative"
    theta: ObsParamVector
    n_used: int = 0
    n_excluded: int = 0

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] != len(self.theta):
            raise ValueError("FIM shape does not match the parameter vector")
        scale = max(1.0, float(np.abs(m).max())) if m.size else 1.0
        if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * scale):
            raise ValueError("FIM is not symmetric")
        if m.size and np.linalg.eigvalsh(m).min() < -1e-10 * scale:
            raise ValueError("FIM is not positive semidefinite")


def score_matrix(values: np.ndarray, obs: list[Observation]):
    """Concatenated score vectors for each sample row; returns ``(S, ok_mask)``.

    ``values[n, j]`` is the forward value of observation ``j`` in sample ``n``.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[1] != len(obs):
        raise ValueError(f"{values.shape[1]} value columns for {len(obs)} observations")
    d = sum(len(ob.dist.params) for ob in obs)
    S = np.zeros((values.shape[0], d))
    ok = np.ones(values.shape[0], dtype=bool)
    for n, row in enumerate(values):
        col = 0
        for ob, v in zip(obs, row):
            k = len(ob.dist.params)
            try:
                S[n, col : col + k] = score(ob, v)
            except ScoreDomainError:
                ok[n] = False
                break
            col += k
    return S, ok


def fim(values, obs: list[Observation], mode: str = "absolute", weights=None) -> FIMatrix:
    """Covariance of the score vectors over posterior samples.

    ``weights`` (optional, non-negative) turns the sample average into a
    weighted one, e.g. for quadrature nodes. Samples outside an
    observation's support are dropped and counted.
    """
    if mode not in ("absolute", "relative"):
        raise ValueError(f"mode must be 'absolute' or 'relative', got {mode!r}")
    theta = ObsParamVector.from_observations(obs)
    S, ok = score_matrix(values, obs)
    n_bad = int(np.count_nonzero(~ok))
    if n_bad:
        log.warning("%d posterior samples outside an observation's support excluded from the FIM", n_bad)
    S = S[ok]
    if S.shape[0] == 0:
        raise ValueError("no usable posterior samples for the FIM")
    if mode == "relative":
        S = S * theta.values
    if weights is None:
        w = np.full(S.shape[0], 1.0 / S.shape[0])
    else:
        w = np.asarray(weights, dtype=float)[ok]
        if np.any(w < 0) or not w.sum() > 0:
            raise ValueError("weights must be non-negative with positive sum")
        w = w / w.sum()
    # shift by a sample first so constant columns centre to exact zeros
    S = S - S[0]
    centred = S - w @ S
    m = (centred * w[:, None]).T @ centred
    m = 0.5 * (m + m.T)
    return FIMatrix(m, mode, theta, S.shape[0], n_bad)


def fim_from_store(store, obs: list[Observation], posterior_start: int, mode: str = "relative") -> FIMatrix:
    post = store.subset(store.posterior_mask(posterior_start))
    cols = []
    for ob in obs:
        if ob.label not in post.columns:
            raise KeyError(f"sample store has no column {ob.label!r}")
        cols.append(post.columns[ob.label])
    return fim(np.column_stack(cols), obs, mode)


def kl_quadratic(I, v) -> float:
    m = I.matrix if isinstance(I, FIMatrix) else np.asarray(I, dtype=float)
    v = np.asarray(v, dtype=float)
    if v.shape != (m.shape[0],):
        raise ValueError(f"direction of length {v.size} for a {m.shape[0]}x{m.shape[0]} FIM")
    return 0.5 * float(v @ m @ v)


def _power(m, v, tol, max_iter):
    rho = 0.0
    for _ in range(max_iter):
        w = m @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return v, 0.0, True
        rho = float(v @ w)
        if np.linalg.norm(w - rho * v) <= tol:
            return v, rho, True
        v = w / nw
    return v, rho, False


def worst_direction(I, tol: float = 1e-10, gap_tol: float = 1e-8, max_iter: int = 200_000):
    """Leading unit eigenvector of the FIM by power iteration.

    Returns ``(v, degenerate)``. ``v`` has its largest-magnitude component
    positive. ``degenerate`` is set when the top eigenvalue is repeated
    (within ``gap_tol`` relative), in which case ``v`` is one of several
    maximizers.
    """
    m = I.matrix if isinstance(I, FIMatrix) else np.asarray(I, dtype=float)
    d = m.shape[0]
    scale = max(float(np.abs(m).max()), np.finfo(float).tiny)
    start = np.linspace(1.0, 2.0, d)
    start /= np.linalg.norm(start)
    v, rho, converged = _power(m, start, tol * scale, max_iter)
    if rho == 0.0 and not np.any(m):
        v, degenerate = np.eye(d)[0], True
    else:
        v = v / np.linalg.norm(v)
        rho = float(v @ m @ v)
        deflated = m - rho * np.outer(v, v)
        seed = start - (start @ v) * v
        if np.linalg.norm(seed) < 1e-12:
            seed = np.roll(start, 1) - (np.roll(start, 1) @ v) * v
        seed /= np.linalg.norm(seed)
        _, rho2, _ = _power(deflated, seed, tol * scale, max_iter)
        degenerate = rho2 >= rho * (1.0 - gap_tol) or not converged
    k = int(np.argmax(np.abs(v)))
    if v[k] < 0:
        v = -v
    return v, bool(degenerate)


@dataclass
class BoundCurve:
    R: np.ndarray
    lower: np.ndarray  # bounds on E_Q[f] - E_P[f]
    upper: np.ndarray
    uniform_lower: float
    uniform_upper: float
    mean: float
    degenerate: bool = False


def default_r_grid() -> np.ndarray:
    return np.concatenate(([0.0], np.geomspace(1e-4, 10.0, 100)))


def _log_mgf(ft, c):
    """``log E[exp(c f~)]`` per tilt, in shifted form."""
    cf = np.outer(c, ft)
    shift = cf.max(axis=1)
    e = np.exp(cf - shift[:, None])
    return np.log(e.mean(axis=1)) + shift, e


def _tilt(ft, c):
    """``(R, bound)`` of the tilted measure for each tilt ``c`` (either sign)."""
    lam, e = _log_mgf(ft, c)
    b = (e * ft).sum(axis=1) / e.sum(axis=1)
    return np.maximum(c * b - lam, 0.0), b


def expectation_bounds(f, r_grid=None, n_c: int = 200) -> BoundCurve:
    """Bounds on ``E_Q[f] - E_P[f]`` over ``Q`` with ``R(Q||P) <= R``.

    Each tilt ``c`` on a log grid gives a point ``(R(c), bound(c))`` of the
    optimal curve. Between those points the curve is filled in with the
    tangent lines ``(R + log E[exp(c f~)]) / c``, so every reported value
    is a valid bound (never below the optimum). Values are capped by the
    sample extremes, which bound ``E_Q[f]`` for any ``Q << P``.
    """
    f = np.asarray(f, dtype=float).ravel()
    R = default_r_grid() if r_grid is None else np.asarray(r_grid, dtype=float)
    if np.any(R < 0):
        raise ValueError("relative entropy grid must be non-negative")
    if f.size and not np.all(np.isfinite(f)):
        raise ValueError("observable samples must be finite")
    if f.size == 0:
        z = np.zeros_like(R)
        return BoundCurve(R, z, z.copy(), 0.0, 0.0, math.nan, True)
    mean = float(f.mean())
    ft = f - mean
    lo_u, hi_u = float(ft.min()), float(ft.max())
    std = float(ft.std())
    if std == 0.0 or hi_u == lo_u:
        z = np.zeros_like(R)
        return BoundCurve(R, z, z.copy(), 0.0, 0.0, mean, True)

    c = np.geomspace(1e-3, 1e3, n_c) / std
    need = R.max() if R.size else 0.0
    low = R[R > 0].min() if np.any(R > 0) else need
    step = 10.0 ** (6.0 / n_c)
    for _ in range(20):
        r0, _ = _tilt(ft, c[:1])
        if r0[0] <= low:
            break
        c = np.concatenate((c[0] * np.geomspace(0.1, 1.0 / step, max(n_c // 6, 2)), c))
    for _ in range(20):
        ru, _ = _tilt(ft, c[-1:])
        rl, _ = _tilt(ft, -c[-1:])
        if min(ru[0], rl[0]) >= need:
            break
        ext = c[-1] * np.geomspace(step, 10.0, max(n_c // 6, 2))
        c = np.concatenate((c, ext))
    upper = _envelope(R, c, _log_mgf(ft, c)[0], hi_u)
    lower = 0.0 - _envelope(R, c, _log_mgf(ft, -c)[0], -lo_u)  # no negative zeros
    return BoundCurve(R, lower, upper, lo_u, hi_u, mean, False)


def _envelope(R, c, lam, cap):
    """``min_c (R + lam(c)) / c`` for each ``R``, in ``[0, cap]``; zero at ``R = 0``."""
    lam = np.maximum(lam, 0.0)  # Jensen; removes round-off below zero
    out = np.min((R[:, None] + lam[None, :]) / c[None, :], axis=1) if R.size else np.zeros(0)
    out = np.minimum(out, cap)
    out[R == 0.0] = 0.0
    return out


def sensitivity_bound(f, v, I) -> float:
    """``sqrt(Var f) * sqrt(v'Iv)``, a bound on the derivative of ``E[f]`` along ``v``."""
    f = np.asarray(f, dtype=float)
    quad = 2.0 * kl_quadratic(I, v)
    return math.sqrt(float(f.var())) * math.sqrt(max(quad, 0.0))


# -- reports -----------------------------------------------------------------


def perturbation_table(I: FIMatrix, rel: float = 0.1):
    """Rows of name, observation, distribution, parameter, value, FI, RE_10pct, sing_vec."""
    v, _ = worst_direction(I)
    diag = np.diag(I.matrix)
    scale = np.ones(len(I.theta)) if I.mode == "relative" else I.theta.values
    rows = []
    for k, e in enumerate(I.theta.entries):
        re = 0.5 * (rel * scale[k]) ** 2 * diag[k]
        rows.append((e[1], e[2], e[3], e[4], e[5], float(diag[k]), float(re), float(v[k])))
    return rows


def sensitivity_table(samples: dict, I: FIMatrix, rel: float = 0.1):
    """Rows of parameter, variance, bound for a ``rel`` perturbation along the worst direction."""
    v, _ = worst_direction(I)
    if I.mode == "absolute":
        v = v * I.theta.values
    v = rel * v
    return [(name, float(np.var(f)), sensitivity_bound(f, v, I)) for name, f in samples.items()]


def _write_rows(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([x if isinstance(x, str) else repr(float(x)) for x in r])


def write_fim(path, I: FIMatrix):
    labels = I.theta.labels
    _write_rows(path, ["parameter"] + labels, [[lab] + list(row) for lab, row in zip(labels, I.matrix)])


def write_perturbation_table(path, rows):
    _write_rows(path, ["name", "observation", "distribution", "parameter", "value", "FI", "RE_10pct", "sing_vec"], rows)


def write_sensitivity_table(path, rows):
    _write_rows(path, ["parameter", "variance", "sensitivity_bound"], rows)


def write_bounds(path, curves: dict):
    rows = []
    for name, c in curves.items():
        for r, lo, hi in zip(c.R, c.lower, c.upper):
            rows.append((name, r, lo, hi))
    _write_rows(path, ["observable", "R", "lower", "upper"], rows)
