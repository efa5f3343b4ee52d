"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test records a ``criterion N: PASS|FAIL`` line (printed in the pytest
terminal summary, or directly when run as a script). Criteria that cannot
hold for the stated constants are kept at full strength and marked as
strict expected failures, so the suite stays green while still reporting
FAIL.
"""

import math
import time
from statistics import median

import numpy as np
import pytest

from fdcheck import check
from scorecdm import data, grad as G, pipeline
from scorecdm.cli import fft_bench
from scorecdm.denoiser import DenoiserConfig, epsilon_theta, init_params, score_weighted_mix
from scorecdm.diffusion import TrainConfig, forward_sample, impute, quadratic_schedule, train
from scorecdm.fourier import circular_convolve_direct, circular_convolve_fft, dft, fft, ifft

RESULTS: list[str] = []

# desk-scale training budget for the synthetic end-to-end runs
E2E_EPOCHS = 20
E2E_D = 16
ABLATION_SEEDS = (0, 1, 2)


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)


# -- 1 ---------------------------------------------------------------------------------

def test_criterion_01_convolution_theorem():
    rng = np.random.default_rng(101)
    lengths = [24] * 50 + list(rng.integers(3, 129, size=950))
    t0 = time.perf_counter()
    worst = 0.0
    for n in lengths:
        a, b = rng.normal(size=(2, int(n)))
        worst = max(worst, float(np.max(np.abs(circular_convolve_fft(a, b) - circular_convolve_direct(a, b)))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 10 and len(lengths) >= 1000
    record(1, ok, f"{len(lengths)} pairs, max err {worst:.2e} (<= 1e-9), {elapsed:.1f}s (< 10s)")
    assert ok


# -- 2 ---------------------------------------------------------------------------------

def test_criterion_02_fft_matches_dft():
    rng = np.random.default_rng(102)
    t0 = time.perf_counter()
    err_dft = err_rt = 0.0
    for n in (3, 24, 64, 100, 128):
        x = rng.normal(size=n) + 1j * rng.normal(size=n)
        X = fft(x)
        err_dft = max(err_dft, float(np.max(np.abs(X - dft(x)))))
        err_rt = max(err_rt, float(np.max(np.abs(ifft(X) - x))))
    elapsed = time.perf_counter() - t0
    ok = err_dft <= 1e-9 and err_rt <= 1e-9 and elapsed < 5
    record(2, ok, f"fft-dft {err_dft:.2e}, round trip {err_rt:.2e} (<= 1e-9), {elapsed:.2f}s (< 5s)")
    assert ok


# -- 3 ---------------------------------------------------------------------------------

def test_criterion_03_gradient_suite():
    cfg = DenoiserConfig(length=8, channels=1, d=4, n_layers=1)
    t0 = time.perf_counter()
    worst = 0.0
    failures = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        params = init_params(cfg, rng)
        # move the zero-initialised shift off its starting point
        params.tensors["layers.0.shift"] = rng.normal(0, 0.1, (4, 8))
        x, c, eps = rng.normal(size=(3, 2, 1, 8))
        t = int(rng.integers(1, cfg.n_steps + 1))

        def build(leaves):
            d = G.sub(epsilon_theta(x, c, t, params, leaves=leaves), eps)
            return G.total(G.mul(d, d))

        try:
            errs = check(build, {k: v.copy() for k, v in params.tensors.items()})
            worst = max(worst, max(errs.values()))
        except AssertionError as exc:
            failures.append((seed, str(exc)))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 60
    record(3, ok, f"20 seeds x {len(params.tensors)} tensors, worst rel err {worst:.1e} (<= 1e-4), "
                  f"{elapsed:.1f}s (< 60s)")
    assert ok, failures


# -- 4 ---------------------------------------------------------------------------------

def _mix_scalar_loop(q, k, m, w, kern):
    C, L = len(q), len(q[0])
    out = [[0.0] * L for _ in range(C)]
    for c in range(C):
        denom = sum(math.exp(q[c][t] * k[c][t]) for t in range(L))
        inner = [(math.exp(q[c][t] * k[c][t]) + w[c][t]) * m[c][t] for t in range(L)]
        for t in range(L):
            out[c][t] = sum(kern[j] * inner[(t - j) % L] for j in range(L)) / denom
    return out


def test_criterion_04_score_weighted_mix_oracle():
    rng = np.random.default_rng(104)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        C, L = int(rng.integers(1, 5)), int(rng.integers(2, 17))
        q, k, m, w = rng.normal(size=(4, C, L))
        kern = rng.normal(size=L)
        got = score_weighted_mix(q, k, m, w, kern).data
        want = np.array(_mix_scalar_loop(q.tolist(), k.tolist(), m.tolist(), w.tolist(), kern.tolist()))
        worst = max(worst, float(np.max(np.abs(got - want))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 5
    record(4, ok, f"100 instances, max err {worst:.2e} (<= 1e-10), {elapsed:.2f}s (< 5s)")
    assert ok


# -- 5 ---------------------------------------------------------------------------------

@pytest.mark.xfail(strict=True, reason="alpha_bar_50 = 0.0253 for (1e-4, 0.2, 50); see decisions ledger")
def test_criterion_05_schedule_constants():
    s = quadratic_schedule(1e-4, 0.2, 50)
    # closed form evaluated independently: ((25/49)*0.01 + (24/49)*sqrt(0.2))^2
    beta25 = 0.0502411758209077
    parts = {
        "beta_1 == 1e-4": s.beta[0] == 0.0001,
        "beta_50 == 0.2": s.beta[-1] == 0.2,
        "|beta_25 - closed form| <= 1e-6": abs(s.beta[24] - beta25) <= 1e-6,
        "alpha_bar strictly decreasing": bool(np.all(np.diff(s.alpha_bar) < 0)),
        "alpha_bar_50 < 0.01": s.alpha_bar[-1] < 0.01,
    }
    ok = all(parts.values())
    failed = [k for k, v in parts.items() if not v]
    record(5, ok, f"beta_25={s.beta[24]:.6f}, alpha_bar_50={s.alpha_bar[-1]:.4f}; "
                  + ("all clauses hold" if ok else f"failed: {', '.join(failed)}"))
    assert ok


# -- 6 ---------------------------------------------------------------------------------

def _terminal_moments(beta_T, draws=10_000, dim=64, seed=106):
    s = quadratic_schedule(1e-4, beta_T, 50)
    rng = np.random.default_rng(seed)
    x0 = np.ones((draws, dim))
    xT = forward_sample(x0, 50, rng.standard_normal(x0.shape), s)
    mean, var = xT.mean(axis=0), xT.var(axis=0)
    return float(np.max(np.abs(mean))), float(np.max(np.abs(var - 1)))


@pytest.mark.xfail(strict=True, reason="sqrt(alpha_bar_50) = 0.159 > 0.05 at beta_T = 0.2; see decisions ledger")
def test_criterion_06_forward_normality():
    detail, ok = [], True
    for beta_T in (0.2, 0.5):
        dm, dv = _terminal_moments(beta_T)
        good = dm <= 0.05 and dv <= 0.05
        ok &= good
        detail.append(f"beta_T={beta_T}: max|mean|={dm:.3f}, max|var-1|={dv:.3f} "
                      f"{'ok' if good else 'out of tolerance'}")
    record(6, ok, "; ".join(detail))
    assert ok


# -- 7 and 8 -----------------------------------------------------------------------------

_RUNS: dict = {}


def _prepared():
    if "prep" not in _RUNS:
        truth = data.synth_generate(data.SynthConfig(), seed=0)
        masked = data.apply_point_mask(truth, data.MaskSpec(kind="point", p=0.25, seed=1))
        _RUNS["prep"] = pipeline.prepare(masked, truth, 24)
    return _RUNS["prep"]


def _run(variant: str, seed: int):
    key = (variant, seed)
    if key not in _RUNS:
        flags = {"full": {}, "no_s2twb": {"use_s2twb": False}, "no_scm": {"use_scm": False}}[variant]
        model = DenoiserConfig(d=E2E_D, **flags)
        cfg = TrainConfig(epochs=E2E_EPOCHS, seed=seed)
        _RUNS[key] = pipeline.run(_prepared(), model, cfg, n_samples=10, sample_seed=seed).report
    return _RUNS[key]


def test_criterion_07_end_to_end_imputation():
    t0 = time.perf_counter()
    rep = _run("full", 0)
    elapsed = time.perf_counter() - t0
    lin = rep.baselines["linear_interp"]["mae"]
    mean_fill = rep.baselines["mean_fill"]["mae"]
    gain_lin, gain_mean = 1 - rep.mae / lin, 1 - rep.mae / mean_fill
    ok = gain_lin >= 0.10 and gain_mean >= 0.30
    record(7, ok, f"MAE {rep.mae:.4f} vs linear {lin:.4f} ({gain_lin:.0%} better, >= 10%) and "
                  f"mean-fill {mean_fill:.4f} ({gain_mean:.0%} better, >= 30%); "
                  f"{E2E_EPOCHS} epochs, d={E2E_D}, {elapsed:.0f}s")
    assert ok


def test_criterion_08_ablation_direction():
    maes = {v: [_run(v, s).mae for s in ABLATION_SEEDS] for v in ("full", "no_s2twb", "no_scm")}
    med = {v: median(m) for v, m in maes.items()}
    ok = med["full"] <= med["no_s2twb"] and med["full"] <= med["no_scm"]
    record(8, ok, "median MAE over seeds " + ", ".join(f"{v}={m:.4f}" for v, m in med.items()))
    assert ok


# -- 9 ---------------------------------------------------------------------------------

def test_criterion_09_complexity_scaling():
    rows = fft_bench(512, 4096, reps=50, channels=64)
    mix = [r["mix_ratio"] for r in rows[1:]]
    quad = [r["quad_ratio"] for r in rows[1:]]
    ok = max(mix) <= 2.7 and min(quad) >= 3.5
    record(9, ok, "doubling ratios L=1024..4096: mix " + "/".join(f"{r:.2f}" for r in mix)
                  + " (<= 2.7), quadratic " + "/".join(f"{r:.2f}" for r in quad) + " (>= 3.5)")
    assert ok


# -- 10 --------------------------------------------------------------------------------

def test_criterion_10_determinism():
    truth = data.synth_generate(data.SynthConfig(n_windows=100), seed=3)
    masked = data.apply_point_mask(truth, data.MaskSpec(kind="point", p=0.25, seed=3))
    prep = pipeline.prepare(masked, truth, 24)
    model = DenoiserConfig(d=8)
    cfg = TrainConfig(epochs=2, seed=7)
    sched = quadratic_schedule(cfg.beta_1, cfg.beta_T, cfg.n_steps)
    outs = []
    for _ in range(2):
        st = train(prep.train[0], prep.train[1], model, cfg)
        res = impute(prep.test[0], prep.test[1], st.params, sched, n_samples=3, seed=7)
        outs.append((np.array(st.losses).tobytes(), res.samples.tobytes(), res.median.tobytes()))
    ok = outs[0] == outs[1]
    record(10, ok, f"{len(st.losses)} loss values and {res.samples.size} imputed values "
                   f"{'byte-identical' if ok else 'differ'} across two runs")
    assert ok


# -- 11 --------------------------------------------------------------------------------

def _binomial_interval(n, p, level=0.99):
    def pmf(k):
        return math.exp(math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
                        + k * math.log(p) + (n - k) * math.log1p(-p))

    tail = (1 - level) / 2
    acc, lo = 0.0, 0
    while acc + pmf(lo) <= tail:
        acc += pmf(lo)
        lo += 1
    acc, hi = 0.0, n
    while acc + pmf(hi) <= tail:
        acc += pmf(hi)
        hi -= 1
    return lo, hi


def test_criterion_11_masking_protocols():
    rng = np.random.default_rng(111)
    exact = disjoint = True
    for seed in range(50):
        v = rng.normal(size=(6, 1, 120))
        obs = rng.random(v.shape) < rng.uniform(0.5, 1.0)
        b = data.TimeSeriesBatch(v, obs, np.zeros(v.shape, bool))
        p = float(rng.uniform())
        pm = data.apply_point_mask(b, data.MaskSpec("point", p=p, seed=seed))
        bm = data.apply_block_mask(b, data.MaskSpec("block", q=float(rng.uniform()), seed=seed))
        exact &= int(pm.eval_mask.sum()) == math.floor(p * obs.sum() + 1e-9)
        for m in (pm, bm):
            disjoint &= not (m.obs_mask & m.eval_mask).any() and bool(((m.obs_mask | m.eval_mask) == obs).all())

    full = data.TimeSeriesBatch(np.zeros((200, 1, 288)), np.ones((200, 1, 288), bool),
                                np.zeros((200, 1, 288), bool), 5.0)
    lo, hi = _binomial_interval(200, 0.05)
    counts = [len(data.apply_block_mask(full, data.MaskSpec("block", q=0.05, seed=s)).notes["block_report"])
              for s in range(100)]
    inside = sum(lo <= c <= hi for c in counts)
    tlo, thi = _binomial_interval(200 * 100, 0.05)
    binom_ok = inside >= 97 and tlo <= sum(counts) <= thi
    ok = exact and disjoint and binom_ok
    record(11, ok, f"point counts exact: {exact}; disjoint: {disjoint}; block failures in "
                   f"[{lo}, {hi}] for {inside}/100 seeds, total {sum(counts)} in [{tlo}, {thi}]")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
