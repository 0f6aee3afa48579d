"""Multi-chain random-walk Metropolis-Hastings with importance resampling.

Chains advance independently between resampling barriers. At a barrier
every chain's current state is redrawn from the pool of all current
states with weights proportional to the unnormalized posterior, which
lets chains stuck in poor regions jump to better ones. Each chain owns
its random stream, derived from ``(seed, chain id)``, so results do not
depend on how chains are scheduled across worker processes.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

BASE_COLUMNS = ("chain", "step")
SCORE_COLUMNS = ("log_prior", "log_lik", "log_post", "accepted")
_FAILURES = (ArithmeticError, ValueError, RuntimeError)


class SamplerInitError(ValueError):
    pass


class ResampleError(RuntimeError):
    pass


class SamplerIOError(OSError):
    pass


@dataclass
class SamplerConfig:
    n_chains: int
    total_steps: int
    proposal_stds: tuple
    resample_period: int | None = None
    resample_steps: tuple | None = None  # explicit schedule, overrides the period
    burn_in: int = 0
    seed: int = 0
    resample_enabled: bool = True
    checkpoint_every: int = 500

    def __post_init__(self):
        self.proposal_stds = tuple(float(s) for s in self.proposal_stds)
        if self.resample_steps is not None:
            self.resample_steps = tuple(sorted({int(s) for s in self.resample_steps}))
        if self.n_chains < 1:
            raise ValueError("need at least one chain")
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if not self.proposal_stds or not all(s > 0 and math.isfinite(s) for s in self.proposal_stds):
            raise ValueError("proposal standard deviations must be positive and finite")
        if self.resample_period is not None and self.resample_period < 1:
            raise ValueError("resample period must be at least 1")
        if self.resample_steps and not all(0 < s < self.total_steps for s in self.resample_steps):
            raise ValueError("explicit resample steps must lie strictly inside (0, total_steps)")
        if not 0 <= self.burn_in < self.total_steps:
            raise ValueError("burn-in must satisfy 0 <= burn_in < total_steps")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint interval must be positive")

    def schedule(self) -> tuple:
        """Steps after which the chains are resampled."""
        if not self.resample_enabled or self.n_chains < 2:
            return ()
        if self.resample_steps is not None:
            return self.resample_steps
        if self.resample_period is None:
            return ()
        return tuple(range(self.resample_period, self.total_steps, self.resample_period))

    @property
    def posterior_start(self) -> int:
        """First step of the posterior set."""
        sched = self.schedule()
        last = sched[-1] if sched else 0
        return last + self.burn_in + 1


@dataclass
class SampleRecord:
    chain: int
    step: int
    x: np.ndarray
    log_prior: float
    log_lik: float
    log_post: float
    outputs: tuple
    accepted: bool


@dataclass
class ChainState:
    chain: int
    current: SampleRecord
    rng: np.random.Generator
    n_accepted: int = 0
    n_steps: int = 0
    n_failed: int = 0


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0, chain))))


def resample_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(1,))))


def evaluate(model, x):
    """``(log_prior, log_lik, outputs, failed)``; the forward map is skipped outside the prior support."""
    lp = float(model.log_prior(x))
    if lp == -math.inf or math.isnan(lp):
        return -math.inf, -math.inf, tuple(model.output_values(None)), False
    try:
        out = model.forward(x)
        ll = float(model.log_likelihood(out))
    except _FAILURES as exc:
        log.debug("forward model failed at %s: %s", np.array2string(np.asarray(x), precision=6), exc)
        return lp, -math.inf, tuple(model.output_values(None)), True
    if math.isnan(ll):
        ll = -math.inf
    return lp, ll, tuple(model.output_values(out)), False


def init_chain(model, chain: int, x0, seed: int) -> ChainState:
    x0 = np.array(x0, dtype=float)
    lp, ll, outs, _ = evaluate(model, x0)
    post = lp + ll
    if post == -math.inf:
        raise SamplerInitError(f"chain {chain}: initial parameters have zero posterior density")
    rec = SampleRecord(chain, 0, x0, lp, ll, post, outs, True)
    return ChainState(chain, rec, chain_rng(seed, chain))


def mh_step(state: ChainState, stds, model) -> SampleRecord:
    """One random-walk Metropolis step; mutates ``state`` and returns the new record.

    Every step consumes one normal per parameter and one uniform from the
    chain's stream, whether or not the forward model runs.
    """
    cur = state.current
    eta = state.rng.normal(0.0, stds)
    u = state.rng.random()
    prop = cur.x + eta
    step = cur.step + 1
    state.n_steps += 1
    lp, ll, outs, failed = evaluate(model, prop)
    state.n_failed += failed
    post = lp + ll
    if post == -math.inf:
        accepted = False
    else:
        accepted = u == 0.0 or math.log(u) < post - cur.log_post
    if accepted:
        state.n_accepted += 1
        rec = SampleRecord(state.chain, step, prop, lp, ll, post, outs, True)
    else:
        rec = SampleRecord(state.chain, step, cur.x, cur.log_prior, cur.log_lik, cur.log_post, cur.outputs, False)
    state.current = rec
    return rec


def resample_weights(log_posts) -> np.ndarray:
    lp = np.asarray(log_posts, dtype=float)
    top = lp.max()
    if not top > -math.inf:
        raise ResampleError("every chain has zero posterior density; cannot resample")
    w = np.exp(lp - top)
    return w / w.sum()


def resample_chains(states: list[ChainState], rng: np.random.Generator) -> list[ChainState]:
    """Redraw each chain's current record from all current records; rng streams stay put."""
    w = resample_weights([s.current.log_post for s in states])
    picks = rng.choice(len(states), size=len(states), p=w)
    pool = [s.current for s in states]
    for s, j in zip(states, picks):
        src = pool[j]
        s.current = SampleRecord(s.chain, src.step, src.x.copy(), src.log_prior, src.log_lik, src.log_post, src.outputs, src.accepted)
    return states


def _advance(state: ChainState, stds, model, n: int):
    recs = [mh_step(state, stds, model) for _ in range(n)]
    return state, recs


# -- persistence -------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def store_header(model) -> list[str]:
    return list(BASE_COLUMNS) + list(model.param_names) + list(SCORE_COLUMNS) + list(model.output_columns())


def format_records(recs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in recs:
        w.writerow(
            [_fmt(r.chain), _fmt(r.step)]
            + [_fmt(v) for v in r.x]
            + [_fmt(r.log_prior), _fmt(r.log_lik), _fmt(r.log_post), _fmt(r.accepted)]
            + [_fmt(v) for v in r.outputs]
        )
    return buf.getvalue()


def _record_to_json(r: SampleRecord) -> dict:
    return {
        "chain": r.chain,
        "step": r.step,
        "x": [float(v) for v in r.x],
        "log_prior": r.log_prior,
        "log_lik": r.log_lik,
        "log_post": r.log_post,
        "outputs": [float(v) for v in r.outputs],
        "accepted": bool(r.accepted),
    }


def _record_from_json(d) -> SampleRecord:
    return SampleRecord(d["chain"], d["step"], np.array(d["x"]), d["log_prior"], d["log_lik"], d["log_post"], tuple(d["outputs"]), d["accepted"])


def _config_json(cfg: SamplerConfig) -> dict:
    d = asdict(cfg)
    d["proposal_stds"] = list(cfg.proposal_stds)
    d["resample_steps"] = None if cfg.resample_steps is None else list(cfg.resample_steps)
    d.pop("checkpoint_every")
    return d


def write_checkpoint(path, cfg, states, rrng, step, nbytes):
    payload = {
        "config": _config_json(cfg),
        "step": step,
        "samples_bytes": nbytes,
        "resample_rng": rrng.bit_generator.state,
        "chains": [
            {
                "current": _record_to_json(s.current),
                "rng": s.rng.bit_generator.state,
                "n_accepted": s.n_accepted,
                "n_steps": s.n_steps,
                "n_failed": s.n_failed,
            }
            for s in states
        ],
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=1))
    os.replace(tmp, path)


def read_checkpoint(path, cfg: SamplerConfig):
    payload = json.loads(Path(path).read_text())
    if payload["config"] != _config_json(cfg):
        raise SamplerInitError(f"checkpoint {path} was written with a different sampler configuration")
    states = []
    for i, c in enumerate(payload["chains"]):
        rng = chain_rng(cfg.seed, i)
        rng.bit_generator.state = c["rng"]
        states.append(ChainState(i, _record_from_json(c["current"]), rng, c["n_accepted"], c["n_steps"], c["n_failed"]))
    rrng = resample_rng(cfg.seed)
    rrng.bit_generator.state = payload["resample_rng"]
    return states, rrng, payload["step"], payload["samples_bytes"]


@dataclass
class RunResult:
    samples_path: Path
    checkpoint_path: Path
    states: list[ChainState]
    posterior_start: int
    acceptance: list[float] = field(default_factory=list)


def _segments(cfg: SamplerConfig, start: int):
    """Step boundaries ``(a, b]`` and whether to resample after ``b``."""
    sched = set(cfg.schedule())
    cuts = sorted(sched | set(range(cfg.checkpoint_every, cfg.total_steps, cfg.checkpoint_every)) | {cfg.total_steps})
    a = start
    for b in cuts:
        if b <= a:
            continue
        yield a, b, b in sched
        a = b


def run_sampler(
    cfg: SamplerConfig,
    model,
    initial,
    out_dir,
    workers: int = 1,
    resume: str | os.PathLike | None = None,
    samples_name: str = "samples.csv",
    checkpoint_name: str = "checkpoint.json",
) -> RunResult:
    """Run ``cfg.n_chains`` chains and persist every record to ``out_dir``.

    Parameters
    ----------
    initial : sequence of parameter vectors, one per chain
    workers : processes used to advance chains between barriers; the
        output does not depend on it
    resume : checkpoint to continue from; the samples file is truncated
        to the state recorded there
    """
    out_dir = Path(out_dir)
    samples_path = out_dir / samples_name
    ckpt_path = out_dir / checkpoint_name
    stds = np.array(cfg.proposal_stds)
    if stds.size != len(model.param_names):
        raise ValueError(f"{stds.size} proposal stds for {len(model.param_names)} parameters")

    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if resume is not None:
            states, rrng, done, nbytes = read_checkpoint(resume, cfg)
            with samples_path.open("r+b") as fh:
                fh.truncate(nbytes)
        else:
            if len(initial) != cfg.n_chains:
                raise SamplerInitError(f"{len(initial)} initial states for {cfg.n_chains} chains")
            states = [init_chain(model, i, x0, cfg.seed) for i, x0 in enumerate(initial)]
            rrng = resample_rng(cfg.seed)
            done = 0
            buf = io.StringIO()
            csv.writer(buf, lineterminator="\n").writerow(store_header(model))
            samples_path.write_bytes(buf.getvalue().encode())
            write_checkpoint(ckpt_path, cfg, states, rrng, 0, samples_path.stat().st_size)
    except OSError as exc:
        raise SamplerIOError(f"cannot initialise sampler output in {out_dir}: {exc}") from exc

    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 and cfg.n_chains > 1 else None
    try:
        for a, b, do_resample in _segments(cfg, done):
            n = b - a
            if pool is None:
                results = [_advance(s, stds, model, n) for s in states]
            else:
                futs = [pool.submit(_advance, s, stds, model, n) for s in states]
                results = [f.result() for f in futs]
            states = [r[0] for r in results]
            text = "".join(format_records(r[1]) for r in results)
            if do_resample:
                resample_chains(states, rrng)
            try:
                with samples_path.open("ab") as fh:
                    fh.write(text.encode())
                nbytes = samples_path.stat().st_size
                write_checkpoint(ckpt_path, cfg, states, rrng, b, nbytes)
            except OSError as exc:
                raise SamplerIOError(
                    f"writing samples failed after step {a} ({exc}); resume from {ckpt_path}"
                ) from exc
    finally:
        if pool is not None:
            pool.shutdown()

    failed = sum(s.n_failed for s in states)
    if failed:
        log.warning("forward model failed on %d proposals (treated as zero likelihood)", failed)
    return RunResult(
        samples_path,
        ckpt_path,
        states,
        cfg.posterior_start,
        [s.n_accepted / s.n_steps if s.n_steps else 0.0 for s in states],
    )


# -- reading and diagnostics ---------------------------------------------------


@dataclass
class SampleStore:
    columns: dict  # name -> ndarray
    param_names: tuple
    output_names: tuple

    @classmethod
    def read(cls, path, n_params: int | None = None) -> "SampleStore":
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        if "log_prior" not in header:
            raise ValueError(f"{path}: not a sample store (no log_prior column)")
        i0 = len(BASE_COLUMNS)
        i1 = header.index("log_prior")
        data = np.array(rows, dtype=float).reshape(len(rows), len(header))
        cols = {h: data[:, k] for k, h in enumerate(header)}
        for k in ("chain", "step"):
            cols[k] = cols[k].astype(int)
        cols["accepted"] = cols["accepted"].astype(bool)
        return cls(cols, tuple(header[i0:i1]), tuple(header[i1 + len(SCORE_COLUMNS):]))

    def __len__(self):
        return self.columns["step"].size

    def params(self) -> np.ndarray:
        return np.column_stack([self.columns[p] for p in self.param_names])

    def posterior_mask(self, start: int) -> np.ndarray:
        return self.columns["step"] >= start

    def subset(self, mask) -> "SampleStore":
        return SampleStore({k: v[mask] for k, v in self.columns.items()}, self.param_names, self.output_names)


@dataclass
class Diagnostics:
    steps: np.ndarray
    rolling_mean: dict
    rolling_std: dict
    acceptance: dict  # chain -> rate
    summary: dict  # param -> dict(mean, std, q05..q95)
    map_record: dict
    mle_record: dict
    n_posterior: int


QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def _rolling(store: SampleStore, name: str, window: int):
    """Mean and std over the last ``window`` steps pooled across chains."""
    step = store.columns["step"]
    vals = store.columns[name]
    steps = np.unique(step)
    order = np.searchsorted(steps, step)
    s1 = np.bincount(order, weights=vals, minlength=steps.size)
    s2 = np.bincount(order, weights=vals * vals, minlength=steps.size)
    cnt = np.bincount(order, minlength=steps.size).astype(float)
    c1, c2, cn = (np.concatenate(([0.0], np.cumsum(a))) for a in (s1, s2, cnt))
    hi = np.arange(1, steps.size + 1)
    lo = np.maximum(hi - window, 0)
    n = cn[hi] - cn[lo]
    mean = (c1[hi] - c1[lo]) / n
    var = np.maximum((c2[hi] - c2[lo]) / n - mean * mean, 0.0)
    # tiny negative/positive round-off on constant input
    const = np.isclose(var, 0.0, atol=1e-14 * np.maximum(1.0, mean * mean))
    var[const] = 0.0
    return steps, mean, np.sqrt(var)


def _record_at(store: SampleStore, k: int) -> dict:
    return {name: (v[k].item() if hasattr(v[k], "item") else v[k]) for name, v in store.columns.items()}


def diagnostics(store: SampleStore, posterior_start: int = 1, window: int = 100) -> Diagnostics:
    if len(store) == 0:
        raise ValueError("empty sample store")
    rm, rs = {}, {}
    steps = None
    for p in store.param_names:
        steps, rm[p], rs[p] = _rolling(store, p, window)
    chain = store.columns["chain"]
    acc = {}
    for c in np.unique(chain):
        m = chain == c
        acc[int(c)] = float(np.count_nonzero(store.columns["accepted"][m]) / np.count_nonzero(m))
    post = store.subset(store.posterior_mask(posterior_start))
    summary = {}
    map_rec = mle_rec = {}
    if len(post):
        for p in store.param_names:
            v = post.columns[p]
            q = np.quantile(v, QUANTILES)
            std = 0.0 if v.min() == v.max() else float(v.std())
            summary[p] = {"mean": float(v.mean()), "std": std, **{f"q{int(round(100 * a)):02d}": float(x) for a, x in zip(QUANTILES, q)}}
        map_rec = _record_at(post, int(np.argmax(post.columns["log_post"])))
        mle_rec = _record_at(post, int(np.argmax(post.columns["log_lik"])))
    return Diagnostics(steps, rm, rs, acc, summary, map_rec, mle_rec, len(post))
