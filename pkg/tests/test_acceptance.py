"""Acceptance suite: one test per numbered criterion.

Each test carries a ``criterion`` marker; ``conftest.py`` turns the outcomes
into one PASS/FAIL line per criterion in the terminal summary. Run alone with
``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
The end-to-end criteria (10, 11) drive the CLI twice over the full default
synthetic corpus and take several minutes.
"""

import itertools
import math
import sys
import time

import mpmath
import numpy as np
import pytest

from antispoof import cli
from antispoof.cqcc import build_cqt_spec, cqt
from antispoof.audio import Waveform
from antispoof.fusion import dlfs_select, fuse_all
from antispoof.gmm import GmmModel, em_fit, gmm_score
from antispoof.metrics import LabeledScores, TDcfParams, eer, min_tdcf
from antispoof.scores import ScoreSet, TrialScore
from antispoof.xvector import (
    PARAM_NAMES,
    FocalLossParams,
    TrainConfig,
    XVectorModel,
    focal_loss,
    forward,
    stats_pooling,
    train,
    xvector_score,
)
from antispoof.features import FeatureMatrix

E2E_BUDGET_S = 600.0
# the x-vector is trained for fewer epochs than the CLI default to keep each
# end-to-end run inside the budget; its validation loss has flattened by then
E2E_XVECTOR_EPOCHS = 10


def random_gmm(rng, k, d):
    w = rng.uniform(0.1, 1.0, k)
    return GmmModel(w / w.sum(), rng.normal(0, 3, (k, d)), rng.uniform(0.2, 2.0, (k, d)))


def sample_gmm(model, n, rng):
    comp = rng.choice(model.num_components, size=n, p=model.weights)
    return model.means[comp] + np.sqrt(model.variances[comp]) * rng.standard_normal((n, model.dim))


# ---------------------------------------------------------------- criterion 1


def _finite_difference(model, x, y, h=1e-5):
    grads = {}
    for name in PARAM_NAMES:
        p = model.params[name]
        g = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = model.loss_and_grads(x, y)[0]
            p[idx] = old - h
            down = model.loss_and_grads(x, y)[0]
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads[name] = g
    return grads


@pytest.mark.criterion(1, "x-vector gradients match central differences (20 seeds, < 10 s)")
def test_gradient_oracle():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        m = XVectorModel.create(4, 6, 6, 4, seed=seed)
        # non-zero biases so every bias gradient is exercised away from the init
        for name in PARAM_NAMES:
            if name.startswith("b"):
                m.params[name] = 0.1 * rng.standard_normal(m.params[name].shape)
        x = rng.standard_normal((2, 12, 4))
        y = np.array([1, 0])
        _, g = m.loss_and_grads(x, y)
        fd = _finite_difference(m, x, y)
        for name in PARAM_NAMES:
            scale = np.maximum(np.maximum(np.abs(g[name]), np.abs(fd[name])), 1e-8)
            worst = max(worst, float(np.max(np.abs(g[name] - fd[name]) / scale)))
    elapsed = time.perf_counter() - start
    assert worst < 1e-4, f"max relative error {worst:.3e}"
    assert elapsed < 10.0, f"took {elapsed:.1f} s"


# ---------------------------------------------------------------- criterion 2


@pytest.mark.criterion(2, "focal loss with gamma=0, alpha=1 equals cross-entropy (1e4 pairs)")
def test_focal_reduces_to_cross_entropy():
    rng = np.random.default_rng(2)
    # stay inside the probability clamp, where the loss is defined unmodified
    p = rng.uniform(1e-7, 1.0 - 1e-7, 10_000)
    y = rng.integers(0, 2, 10_000)
    got = focal_loss(p, y, FocalLossParams(alpha=1.0, gamma=0.0))
    with mpmath.workdps(40):
        ref = np.array([float(-mpmath.log(mpmath.mpf(pi)) if yi else -mpmath.log(1 - mpmath.mpf(pi)))
                        for pi, yi in zip(p, y)])
    assert np.max(np.abs(got - ref)) <= 1e-12


# ---------------------------------------------------------------- criterion 3


@pytest.mark.criterion(3, "EM average log-likelihood never drops by more than 1e-8 (100 datasets)")
def test_em_monotone():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        k = int(rng.integers(1, 9))
        d = int(rng.integers(1, 11))
        truth = random_gmm(rng, int(rng.integers(1, 9)), d)
        x = sample_gmm(truth, int(rng.integers(40, 100)) * k, rng)
        trace = np.asarray(em_fit(x, k, max_iters=50, tol=0.0, seed=seed).trace)
        worst = min(worst, float(np.min(np.diff(trace), initial=0.0)))
    assert worst >= -1e-8, f"largest drop {-worst:.3e}"


# ---------------------------------------------------------------- criterion 4


@pytest.mark.criterion(4, "GMM fit recovers separated means within 3 standard errors")
def test_gmm_recovery():
    truth = GmmModel([0.3, 0.3, 0.4], [[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]],
                     [[1.0, 0.5], [0.7, 1.2], [1.5, 1.0]])
    for seed in range(3):
        rng = np.random.default_rng(40 + seed)
        x = sample_gmm(truth, 3000, rng)
        m = em_fit(x, 3, max_iters=200, tol=1e-10, seed=seed).model
        se = np.sqrt(truth.variances / (truth.weights[:, None] * len(x)))
        best = min(itertools.permutations(range(3)),
                   key=lambda p: np.sum((m.means[list(p)] - truth.means) ** 2))
        z = np.abs(m.means[list(best)] - truth.means) / se
        assert np.all(z <= 3.0), f"seed {seed}: z-scores {z.round(2).tolist()}"


# ---------------------------------------------------------------- criterion 5


def sweep_oracle(bona, spoof, c1, c2):
    """Every distinct score (and +inf) as threshold; rates counted by direct comparison."""
    thresholds = np.append(np.unique(np.concatenate([bona, spoof])), np.inf)
    p_miss = (bona[None, :] < thresholds[:, None]).mean(axis=1)
    p_fa = (spoof[None, :] >= thresholds[:, None]).mean(axis=1)
    tdcf = float(np.min((c1 * p_miss + c2 * p_fa) / min(c1, c2)))
    diff = p_miss - p_fa
    i = int(np.flatnonzero(diff >= 0)[0])
    if diff[i] == 0 or i == 0:
        return float(p_miss[i]), tdcf
    lam = -diff[i - 1] / (diff[i] - diff[i - 1])
    return float(p_miss[i - 1] + lam * (p_miss[i] - p_miss[i - 1])), tdcf


def tandem_coefficients(p: TDcfParams):
    c1 = p.pi_tar * (p.c_miss_cm - p.c_miss_asv * p.p_miss_asv) - p.pi_non * p.c_fa_asv * p.p_fa_asv
    c2 = p.c_fa_cm * p.pi_spoof * (1.0 - p.p_miss_spoof_asv)
    return c1, c2


@pytest.mark.criterion(5, "EER and min t-DCF match an exhaustive sweep; 1.0 and 0.0 anchors")
def test_metric_oracles():
    params = TDcfParams()
    c1, c2 = tandem_coefficients(params)
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(200):
        n_b = int(rng.integers(1, 1000))
        n_s = int(rng.integers(1, 2001 - n_b))
        b = rng.normal(rng.uniform(-1, 3), 1.0, n_b)
        s = rng.normal(0.0, rng.uniform(0.5, 2), n_s)
        if i % 2:
            # coarse rounding makes tied scores across and within classes
            b, s = np.round(b, 1), np.round(s, 1)
        ref_eer, ref_tdcf = sweep_oracle(b, s, c1, c2)
        scores = LabeledScores.from_arrays(b, s)
        worst = max(worst, abs(eer(scores) - ref_eer), abs(min_tdcf(scores, params) - ref_tdcf))
    assert worst <= 1e-12, f"max deviation {worst:.3e}"
    for n_b, n_s in ((10, 90), (1, 1), (500, 37)):
        assert min_tdcf(LabeledScores.from_arrays(np.full(n_b, 0.25), np.full(n_s, 0.25)), params) == 1.0
    for _ in range(20):
        b = rng.uniform(1.0, 2.0, int(rng.integers(1, 200)))
        s = rng.uniform(-2.0, 0.999, int(rng.integers(1, 200)))
        assert min_tdcf(LabeledScores.from_arrays(b, s), params) == 0.0


# ---------------------------------------------------------------- criterion 6


@pytest.mark.criterion(6, "GMM score is exactly antisymmetric in the model pair")
def test_score_antisymmetry():
    rng = np.random.default_rng(6)
    for _ in range(200):
        d = int(rng.integers(1, 40))
        bona = random_gmm(rng, int(rng.integers(1, 16)), d)
        spoof = random_gmm(rng, int(rng.integers(1, 16)), d)
        f = FeatureMatrix(rng.normal(0, 3, (int(rng.integers(1, 300)), d)), "MFCC")
        assert gmm_score(bona, spoof, f).score == -gmm_score(spoof, bona, f).score


# ---------------------------------------------------------------- criterion 7


@pytest.mark.criterion(7, "statistics pooling: permutation invariance and 1e-5 std floor (1000 cases)")
def test_pooling_invariances():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        t = int(rng.integers(1, 200))
        d = int(rng.integers(1, 64))
        x = rng.normal(rng.uniform(-5, 5), rng.uniform(0.01, 10), (t, d))
        np.testing.assert_allclose(stats_pooling(x[rng.permutation(t)]), stats_pooling(x),
                                   rtol=1e-12, atol=1e-14)
        const = np.tile(rng.uniform(-100, 100, d), (t, 1))
        pooled = stats_pooling(const)
        np.testing.assert_array_equal(pooled[d:], 1e-5)
        np.testing.assert_allclose(pooled[:d], const[0], rtol=1e-14)


# ---------------------------------------------------------------- criterion 8


@pytest.mark.criterion(8, "one x-vector model scores 9, 150 and 1000 frames; posteriors sum to 1")
def test_variable_length_scoring():
    rng = np.random.default_rng(8)
    data = []
    for i in range(40):
        y = int(i % 4 == 0)
        x = rng.standard_normal((30 + int(rng.integers(0, 10)), 4)) + (1.5 if y else -1.5)
        data.append((FeatureMatrix(x, "MFCC"), y))
    cfg = TrainConfig(epochs=3, batch=8, crop_frames=20, hidden1=16, hidden2=16, embed=8)
    model = train(data, cfg).model
    for t in (9, 150, 1000):
        x = rng.standard_normal((t, 4))
        p_b, p_s = forward(model, x)
        assert abs(p_b + p_s - 1.0) <= 1e-9
        assert math.isfinite(xvector_score(model, FeatureMatrix(x, "MFCC")).score)


# ---------------------------------------------------------------- criterion 9


def score_set(name, values):
    s = ScoreSet(name)
    for i, v in enumerate(values):
        s.add(f"t{i:03d}", float(v))
    return s


@pytest.mark.criterion(9, "DLFS: verbatim constituent score, self-fusion identity, first-wins ties")
def test_dlfs_mechanics():
    rng = np.random.default_rng(9)
    for _ in range(500):
        n_sys = int(rng.integers(1, 6))
        n_trials = int(rng.integers(1, 80))
        # half-integer values so equal magnitudes with either sign are common
        table = rng.integers(-4, 5, (n_sys, n_trials)) / 2.0
        sets = [score_set(f"S{j}", table[j]) for j in range(n_sys)]
        fused = fuse_all(sets)
        assert sum(fused.counts.values()) == n_trials
        for i, tid in enumerate(fused.scores.ids()):
            j = int(fused.scores.chosen[tid][1:])
            assert fused.scores[tid] == table[j, i]
            mags = np.abs(table[:, i])
            assert j == int(np.flatnonzero(mags == mags.max())[0])
        one = sets[0]
        twin = score_set("S0-copy", table[0])
        for combo in ([one], [one, twin], [twin, one]):
            out = fuse_all(combo)
            assert out.scores.scores == one.scores
            assert set(out.scores.chosen.values()) == {combo[0].system}
    # exhaustive over every ordering of a tie between opposite signs
    for order in itertools.permutations([("A", 0.5), ("B", -0.5), ("C", 0.25)]):
        out = dlfs_select([(tag, TrialScore("t", v)) for tag, v in order])
        first = next(tag for tag, v in order if abs(v) == 0.5)
        assert out.system == first and out.score == dict(order)[first]


# ------------------------------------------------------------ criteria 10, 11


def run_pipeline(root):
    """Full default corpus through every stage; returns (kv metrics, seconds)."""
    paths = [f"--paths-{k}={root / k}" for k in ("corpus", "features", "models", "scores")]
    steps = [
        ["synth-corpus", "--synth-subsets", "train,dev"],
        ["extract", "--feature-kind", "MFCC"],
        ["extract", "--feature-kind", "LFCC"],
        ["train-gmm", "--feature-kind", "MFCC", "--gmm-components", "32"],
        ["train-gmm", "--feature-kind", "LFCC", "--gmm-components", "32"],
        ["train-xvector", "--feature-kind", "MFCC", "--xvector-epochs", str(E2E_XVECTOR_EPOCHS)],
        ["score", "--score-systems", "G-MFCC,G-LFCC,x-MFCC"],
        ["fuse", "--fuse-systems", "G-MFCC,G-LFCC,x-MFCC", "--fuse-name", "DLFS"],
    ]
    start = time.perf_counter()
    for step in steps:
        assert cli.main(step[:1] + paths + step[1:]) == 0, step
    elapsed = time.perf_counter() - start
    return paths, elapsed


@pytest.fixture(scope="module")
def first_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e_a")
    paths, elapsed = run_pipeline(root)
    return root, paths, elapsed


@pytest.mark.slow
@pytest.mark.criterion(10, "end-to-end synthetic experiment meets EER and min t-DCF targets")
def test_end_to_end(first_run, capsys):
    root, paths, elapsed = first_run
    capsys.readouterr()
    assert cli.main(["evaluate", *paths, "--evaluate-format", "kv"]) == 0
    out = capsys.readouterr().out
    kv = dict(line.split("=", 1) for line in out.strip().splitlines())
    with capsys.disabled():
        print(f"\n  pipeline {elapsed:.0f} s; " + ", ".join(
            f"{s} EER {float(kv[f'{s}.eer_percent']):.2f}% min-t-DCF {float(kv[f'{s}.min_tdcf']):.4f}"
            for s in ("G-MFCC", "G-LFCC", "x-MFCC", "DLFS")))
    assert elapsed < E2E_BUDGET_S, f"pipeline took {elapsed:.0f} s"
    assert float(kv["G-MFCC.eer_percent"]) < 5.0
    assert float(kv["G-LFCC.eer_percent"]) < 5.0
    assert float(kv["x-MFCC.eer_percent"]) < 10.0
    assert float(kv["DLFS.min_tdcf"]) <= 1.0
    picked = {k: int(v) for k, v in kv.items() if k.startswith("DLFS.selected.")}
    assert sum(picked.values()) == int(kv["DLFS.trials"])


@pytest.mark.slow
@pytest.mark.criterion(11, "repeating the end-to-end run reproduces every score file byte for byte")
def test_end_to_end_deterministic(first_run, tmp_path):
    root_a = first_run[0]
    run_pipeline(tmp_path)
    a = {p.name: p.read_bytes() for p in sorted((root_a / "scores").iterdir())}
    b = {p.name: p.read_bytes() for p in sorted((tmp_path / "scores").iterdir())}
    assert len(a) == 4 and a.keys() == b.keys()
    for name in a:
        assert a[name] == b[name], name


# ---------------------------------------------------------------- criterion 12


def bandwidth_over_centre(spec, k, points=81):
    """-3 dB width of bin ``k`` from a swept-tone probe, divided by its centre."""
    fs = spec.sample_rate_hz
    n = int(spec.window_lengths[0])
    fk = spec.center_freqs[k]
    probe = fk * 2.0 ** (np.linspace(-2.0, 2.0, points) / spec.bins_per_octave)
    t = np.arange(n) / fs
    resp = np.array([cqt(Waveform(0.5 * np.cos(2 * np.pi * f * t), fs), spec)[0, k] for f in probe])
    resp /= resp.max()
    peak = int(np.argmax(resp))
    target = 1 / math.sqrt(2)
    lo = np.flatnonzero(resp[:peak] < target)[-1]
    hi = peak + np.flatnonzero(resp[peak:] < target)[0]
    f_lo = np.interp(target, [resp[lo], resp[lo + 1]], [probe[lo], probe[lo + 1]])
    f_hi = np.interp(target, [resp[hi], resp[hi - 1]], [probe[hi], probe[hi - 1]])
    return (f_hi - f_lo) / fk


@pytest.mark.criterion(12, "constant-Q: bandwidth over centre frequency varies by at most 15%")
def test_constant_q():
    spec = build_cqt_spec(16000)
    # the probe sweeps two bins either side, so keep the top bins clear of Nyquist
    top = spec.num_bins - 1 - 4
    bins = np.unique(np.linspace(0, top, 8).astype(int))
    ratios = np.array([bandwidth_over_centre(spec, k) for k in bins])
    spread = np.max(np.abs(ratios / ratios.mean() - 1.0))
    assert spread <= 0.15, f"ratios {ratios.round(5).tolist()}"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
