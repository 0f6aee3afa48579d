import math

import mpmath
import numpy as np
import pytest

from quakeinv.mcmc import (
    ChainState,
    ResampleError,
    SampleRecord,
    SamplerConfig,
    SamplerInitError,
    SampleStore,
    chain_rng,
    diagnostics,
    evaluate,
    init_chain,
    mh_step,
    resample_chains,
    resample_weights,
    run_sampler,
)
from toy_models import BoxModel, GaussianModel, Interrupted, StepModel


def batch_se(x, n_batches=50):
    """Standard error of the mean of a correlated series by batch means."""
    m = x.size // n_batches
    b = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return b.std(ddof=1) / math.sqrt(n_batches)


def run(tmp_path, cfg, model, initial, name="s", **kw):
    res = run_sampler(cfg, model, initial, tmp_path / name, **kw)
    return res, res.samples_path.read_bytes()


# -- configuration -------------------------------------------------------------


def test_config_validation_and_schedule():
    with pytest.raises(ValueError):
        SamplerConfig(0, 10, (1.0,))
    with pytest.raises(ValueError):
        SamplerConfig(2, 10, (0.0,))
    with pytest.raises(ValueError):
        SamplerConfig(2, 10, (1.0,), burn_in=10)
    with pytest.raises(ValueError):
        SamplerConfig(2, 10, (1.0,), resample_steps=(10,))
    cfg = SamplerConfig(3, 100, (1.0,), resample_period=30, burn_in=5)
    assert cfg.schedule() == (30, 60, 90)
    assert cfg.posterior_start == 96
    cfg = SamplerConfig(3, 100, (1.0,), resample_period=30, resample_steps=(40,))
    assert cfg.schedule() == (40,)
    assert SamplerConfig(3, 100, (1.0,), resample_period=30, resample_enabled=False).schedule() == ()
    assert SamplerConfig(1, 100, (1.0,), resample_period=30).schedule() == ()
    assert SamplerConfig(1, 100, (1.0,)).posterior_start == 1


# -- the transition kernel -------------------------------------------------------


def test_conjugate_gaussian_posterior(tmp_path):
    model = GaussianModel()
    cfg = SamplerConfig(1, 50_000, (2.0,), seed=7, checkpoint_every=50_000)
    res, _ = run(tmp_path, cfg, model, [[0.0]])
    x = SampleStore.read(res.samples_path).columns["x"]
    mean, var = model.posterior
    assert abs(x.mean() - mean) < 3 * batch_se(x)
    sq = (x - mean) ** 2
    assert abs(sq.mean() - var) < 3 * batch_se(sq)


def test_discrete_balance():
    model = StepModel()
    state = init_chain(model, 0, [0.5], seed=3)
    cells = np.empty(60_000, dtype=int)
    for k in range(cells.size):
        cells[k] = int(mh_step(state, np.array([1.5]), model).x[0])
    w = np.array(model.weights) / sum(model.weights)
    for k in range(3):
        ind = (cells == k).astype(float)
        assert abs(ind.mean() - w[k]) < 3 * batch_se(ind), k


def test_equal_posterior_always_accepts():
    model = BoxModel(d=1, half_width=1e9)
    model.log_likelihood = lambda y: 0.0
    state = init_chain(model, 0, [0.0], seed=1)
    recs = [mh_step(state, np.array([1.0]), model) for _ in range(2000)]
    assert all(r.accepted for r in recs)
    assert state.n_accepted == 2000


def test_out_of_support_skips_forward_model():
    model = BoxModel(d=2)
    state = init_chain(model, 0, [0.9, 0.0], seed=2)
    calls_in_support = 0
    for _ in range(500):
        before = model.forward_calls
        rec = mh_step(state, np.array([0.5, 0.5]), model)
        if model.forward_calls == before:
            assert not rec.accepted
        else:
            calls_in_support += 1
    assert model.forward_calls == calls_in_support + 1  # plus the initial evaluation
    assert calls_in_support < 500


def test_out_of_support_proposal_not_evaluated():
    model = BoxModel(d=1, half_width=1.0)
    lp, ll, outs, failed = evaluate(model, np.array([5.0]))
    assert lp == -math.inf and ll == -math.inf and not failed
    assert model.forward_calls == 0
    assert all(math.isnan(v) for v in outs)


def test_forward_failure_is_rejection_not_crash():
    model = BoxModel(d=1, fail_above=0.2)
    state = init_chain(model, 0, [0.0], seed=4)
    recs = [mh_step(state, np.array([0.5]), model) for _ in range(400)]
    assert state.n_failed > 0
    assert all(r.x[0] <= 0.2 for r in recs)


def test_init_error_names_chain(tmp_path):
    cfg = SamplerConfig(3, 10, (0.1, 0.1))
    with pytest.raises(SamplerInitError, match="chain 2"):
        run_sampler(cfg, BoxModel(), [[0, 0], [0.1, 0], [3.0, 0]], tmp_path)


# -- resampling ------------------------------------------------------------------


def _states(log_posts):
    return [
        ChainState(i, SampleRecord(i, 5, np.array([float(i)]), 0.0, lp, lp, (float(i),), True), chain_rng(0, i))
        for i, lp in enumerate(log_posts)
    ]


def test_equal_weights_resample_uniformly():
    m, trials = 4, 4000
    rng = np.random.default_rng(0)
    counts = np.zeros((m, m))
    for _ in range(trials):
        for s in resample_chains(_states([-3.0] * m), rng):
            counts[s.chain, int(s.current.x[0])] += 1
    p = 1.0 / m
    se = math.sqrt(p * (1 - p) / trials)
    assert np.all(np.abs(counts / trials - p) < 4 * se)


def test_dominant_record_takes_over():
    rng = np.random.default_rng(1)
    for _ in range(200):
        states = resample_chains(_states([-50.0, 0.0, -50.0, -50.0, -50.0]), rng)
        assert all(s.current.x[0] == 1.0 for s in states)


def test_weights_match_extended_precision():
    rng = np.random.default_rng(5)
    for _ in range(10):
        m = int(rng.integers(2, 30))
        lp = rng.uniform(-800, 50, m)
        lp[rng.random(m) < 0.1] = -math.inf
        lp[0] = rng.uniform(-800, 50)
        with mpmath.workdps(50):
            raw = [mpmath.exp(mpmath.mpf(v)) if v > -math.inf else mpmath.mpf(0) for v in lp]
            tot = mpmath.fsum(raw)
            ref = np.array([float(r / tot) for r in raw])
        np.testing.assert_allclose(resample_weights(lp), ref, rtol=0, atol=1e-12)


def test_all_zero_weights_error():
    with pytest.raises(ResampleError):
        resample_weights([-math.inf, -math.inf])


def test_resampling_creates_no_new_records():
    rng = np.random.default_rng(9)
    for _ in range(100):
        lps = rng.normal(0, 2, 6)
        before = _states(lps)
        pool = {(float(s.current.x[0]), s.current.log_post) for s in before}
        after = resample_chains(_states(lps), rng)
        for s in after:
            assert (float(s.current.x[0]), s.current.log_post) in pool
        # streams are untouched
        for s in after:
            ref = chain_rng(0, s.chain)
            assert s.rng.bit_generator.state == ref.bit_generator.state


# -- full runs -------------------------------------------------------------------


def plain_mh_reference(model, x0, stds, steps, seed):
    """Textbook single-chain random-walk Metropolis written out by hand."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0, 0))))
    x = np.array(x0, float)
    lp = model.log_prior(x)
    ll = model.log_likelihood(model.forward(x))
    outs = model.output_values(model.forward(x))
    lines = []
    for k in range(1, steps + 1):
        prop = x + rng.normal(0.0, stds)
        u = rng.random()
        plp = model.log_prior(prop)
        acc = False
        if plp > -math.inf:
            y = model.forward(prop)
            pll = model.log_likelihood(y)
            if math.log(u) < (plp + pll) - (lp + ll):
                acc = True
                x, lp, ll, outs = prop, plp, pll, model.output_values(y)
        fields = [0, k] + [repr(float(v)) for v in x] + [repr(float(lp)), repr(float(ll)), repr(float(lp + ll)), int(acc)]
        fields += [repr(float(v)) for v in outs]
        lines.append(",".join(str(f) for f in fields))
    return "\n".join(lines) + "\n"


def test_single_chain_matches_plain_reference(tmp_path):
    model = BoxModel(d=3, half_width=2.0)
    stds = (0.7, 0.4, 1.1)
    cfg = SamplerConfig(1, 1500, stds, resample_period=100, resample_enabled=False, seed=42, checkpoint_every=333)
    _, data = run(tmp_path, cfg, model, [[0.1, -0.2, 0.3]])
    header, body = data.decode().split("\n", 1)
    assert header == "chain,step,p0,p1,p2,log_prior,log_lik,log_post,accepted,a_height,a_arrival"
    assert body == plain_mh_reference(BoxModel(d=3, half_width=2.0), [0.1, -0.2, 0.3], np.array(stds), 1500, 42)


def _multi_cfg(seed=11, **kw):
    base = dict(resample_period=70, burn_in=10, seed=seed, checkpoint_every=45)
    base.update(kw)
    return SamplerConfig(3, 300, (0.3, 0.3), **base)


INIT3 = [[0.0, 0.0], [0.5, -0.5], [-0.3, 0.2]]


def test_same_seed_is_byte_identical(tmp_path):
    _, a = run(tmp_path, _multi_cfg(), BoxModel(), INIT3, "a")
    _, b = run(tmp_path, _multi_cfg(), BoxModel(), INIT3, "b")
    _, c = run(tmp_path, _multi_cfg(seed=12), BoxModel(), INIT3, "c")
    assert a == b
    assert a != c


def test_workers_do_not_change_output(tmp_path):
    _, a = run(tmp_path, _multi_cfg(), BoxModel(), INIT3, "serial", workers=1)
    _, b = run(tmp_path, _multi_cfg(), BoxModel(), INIT3, "parallel", workers=3)
    assert a == b


def test_store_contents(tmp_path):
    cfg = _multi_cfg()
    res, _ = run(tmp_path, cfg, BoxModel(fail_above=0.6), INIT3)
    st = SampleStore.read(res.samples_path)
    assert len(st) == 3 * 300
    c = st.columns
    assert np.array_equal(c["log_post"], c["log_prior"] + c["log_lik"])
    for ch in range(3):
        assert np.array_equal(c["step"][c["chain"] == ch], np.arange(1, 301))
    assert res.posterior_start == 291
    # a rejection right after a resample repeats a record from the resample step
    for s in cfg.schedule():
        nxt = st.subset((c["step"] == s + 1) & ~c["accepted"])
        prev = st.subset(c["step"] == s)
        prev_keys = {tuple(x) for x in prev.params()}
        for x in nxt.params():
            assert tuple(x) in prev_keys


def test_resume_is_exact(tmp_path):
    cfg = _multi_cfg()
    _, full = run(tmp_path, cfg, BoxModel(), INIT3, "full")
    out = tmp_path / "crash"
    with pytest.raises(Interrupted):
        run_sampler(cfg, BoxModel(interrupt_after=500), INIT3, out)
    partial = (out / "samples.csv").read_bytes()
    assert 0 < len(partial) < len(full)
    # a half-written tail is discarded on resume
    with (out / "samples.csv").open("ab") as fh:
        fh.write(b"0,999,garbage\n")
    run_sampler(cfg, BoxModel(), None, out, resume=out / "checkpoint.json")
    assert (out / "samples.csv").read_bytes() == full


def test_resume_rejects_other_config(tmp_path):
    run(tmp_path, _multi_cfg(), BoxModel(), INIT3, "x")
    with pytest.raises(SamplerInitError, match="different"):
        run_sampler(_multi_cfg(seed=99), BoxModel(), None, tmp_path / "x", resume=tmp_path / "x" / "checkpoint.json")


# -- diagnostics -----------------------------------------------------------------


def test_diagnostics_recount_and_map(tmp_path):
    res, _ = run(tmp_path, _multi_cfg(), BoxModel(), INIT3)
    st = SampleStore.read(res.samples_path)
    rep = diagnostics(st, res.posterior_start, window=25)
    c = st.columns
    for ch in range(3):
        rows = [a for a, cc in zip(c["accepted"], c["chain"]) if cc == ch]
        assert rep.acceptance[ch] == sum(1 for a in rows if a) / len(rows)
        assert rep.acceptance[ch] == pytest.approx(res.acceptance[ch], abs=0)
    post = [k for k in range(len(st)) if c["step"][k] >= res.posterior_start]
    best = max(post, key=lambda k: c["log_post"][k])
    assert rep.map_record["log_post"] == c["log_post"][best]
    assert rep.mle_record["log_lik"] == max(c["log_lik"][k] for k in post)
    assert rep.n_posterior == len(post)
    # rolling window against a direct computation at a few steps
    for k in (0, 10, 100, 299):
        step = rep.steps[k]
        m = (c["step"] > step - 25) & (c["step"] <= step)
        assert rep.rolling_mean["p0"][k] == pytest.approx(c["p0"][m].mean(), abs=1e-12)
        assert rep.rolling_std["p0"][k] == pytest.approx(c["p0"][m].std(), abs=1e-9)
    q = rep.summary["p1"]
    v = c["p1"][post]
    assert q["q50"] == pytest.approx(np.median(v), abs=1e-15)
    assert q["q05"] <= q["q25"] <= q["q50"] <= q["q75"] <= q["q95"]


def test_constant_chain_diagnostics(tmp_path):
    # proposals always leave the tiny box, so the chain never moves
    cfg = SamplerConfig(1, 200, (100.0, 100.0), seed=3)
    res, _ = run(tmp_path, cfg, BoxModel(half_width=0.01), [[0.005, -0.002]])
    rep = diagnostics(SampleStore.read(res.samples_path))
    assert rep.acceptance == {0: 0.0}
    for p in ("p0", "p1"):
        assert np.all(rep.rolling_std[p] == 0.0)
        assert rep.summary[p]["std"] == 0.0
