"""End-to-end acceptance criteria at their stated tolerances.

Each test records one PASS/FAIL line; the lines are printed as they are
produced and repeated in the terminal summary. MNIST variants run only when
``RMTSSL_MNIST_DIR`` points at a directory holding the four IDX files.
"""

import math
import os
import time
from functools import partial
from pathlib import Path

import mpmath
import numpy as np
import pytest

from rmtssl.asymptotics import predict_two_class, std_normal_cdf
from rmtssl.dataset import ClassLayout, LabelledSplit, estimate_tau, read_idx
from rmtssl.experiments import accuracy_trial, idx_source, model_source, run_trials, sweep_alpha, tune_trial
from rmtssl.gmm import MixtureModel, builtin_model, population_stats, sample
from rmtssl.kernel import degree_vector, gaussian_kernel, parse_kernel, weight_matrix
from rmtssl.propagation import classify, metrics, normalize, solve_closed_form, solve_fixed_point
from rmtssl.rmt_expansion import expansion_terms, residual_decay
from rmtssl.seeding import trial_seed
from rmtssl.tuning import beta0_exact, estimate_beta0

pytestmark = pytest.mark.acceptance

REPORT = []
P = 784
GAUSS = parse_kernel("gaussian{1}")
WORKERS = os.cpu_count() or 1


def _record(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    REPORT.append(line)
    print(line, flush=True)
    return passed


def _mnist_files():
    root = os.environ.get("RMTSSL_MNIST_DIR")
    if not root:
        return None
    root = Path(root)
    for stem in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"):
        if not any((root / (stem + ext)).exists() for ext in ("", ".gz")):
            return None
    pick = lambda stem: next(root / (stem + ext) for ext in ("", ".gz") if (root / (stem + ext)).exists())
    return pick("train-images-idx3-ubyte"), pick("train-labels-idx1-ubyte")


def _mnist_model(images_path, labels_path, classes, ridge=1e-4):
    """Gaussian surrogate with the empirical class means and covariances; the ridge keeps constant pixels full rank."""
    images = read_idx(images_path).reshape(-1, P).astype(float) / 255.0
    labels = read_idx(labels_path)
    means, covs = [], []
    for c in classes:
        X = images[labels == c]
        means.append(X.mean(axis=0))
        covs.append(np.cov(X, rowvar=False) + ridge * np.eye(P))
    return MixtureModel.from_covariances(np.array(means), np.array(covs), name="mnist")


# ---------------------------------------------------------------------------


def _instance(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 4))
    n_l = tuple(int(v) for v in rng.integers(1, 11, K))
    n_u = tuple(int(v) for v in rng.integers(5, (200 - sum(n_l)) // K + 1, K))
    lay = ClassLayout(n_l, n_u)
    if seed % 2:
        A = rng.uniform(0.05, 1.0, size=(lay.n, lay.n))
        W = (A + A.T) / 2
    else:
        model = builtin_model(["two_means", "concentric", "three_class"][K - 1 if K == 3 else seed % 4 // 2], 64)
        split = sample(model, lay, seed)
        W = weight_matrix(split, gaussian_kernel(float(rng.uniform(0.5, 2.0))))
    return W, lay, float(rng.uniform(-1.5, -0.5))


def test_criterion_01_solver_equivalence():
    start = time.perf_counter()
    worst = 0.0
    for i in range(50):
        W, lay, a = _instance(trial_seed(1, i))
        d = degree_vector(W)
        F1 = solve_closed_form(W, d, lay, a).F
        F2 = solve_fixed_point(W, d, lay, a, tol=1e-10).F
        worst = max(worst, float(np.max(np.abs(F1 - F2))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 60
    assert _record(1, ok, f"max |closed - fixed point| = {worst:.2e} over 50 instances (<= 1e-8), {elapsed:.1f}s (< 60s)")


def _bias_trial(seed):
    lay = ClassLayout.imbalanced(1024, 1 / 16, 0.75)
    split = sample(builtin_model("two_means", P), lay, seed)
    spec = GAUSS(estimate_tau(split))
    W = weight_matrix(split, spec)
    scores = solve_closed_form(W, degree_vector(W), lay, -1.0)
    truth = lay.truth_unlabelled()
    to_one = float(np.mean(classify(scores.unlabelled) == 0))
    per_class = metrics(classify(normalize(scores)), truth, 2).per_class_accuracy
    return to_one, per_class


def test_criterion_02_labelled_imbalance_bias():
    res = run_trials(_bias_trial, 5, 2, WORKERS)
    passes = [f1 >= 0.90 and min(pc) >= 0.55 for f1, pc in res]
    detail = "; ".join(f"raw->C1 {f1:.3f}, normalized per-class [{pc[0]:.3f}, {pc[1]:.3f}]" for f1, pc in res)
    ok = sum(passes) >= 3
    assert _record(2, ok, f"{sum(passes)}/5 seeds pass (need 3): {detail}")


def _sweep_check(source, model, layout, label):
    alphas = list(np.linspace(-1.5, -0.5, 11))
    rows = sweep_alpha(source, GAUSS, alphas, 50, 3, model=model, layout=layout, workers=WORKERS)
    gaps = [abs(r.empirical - r.theory) for r in rows]
    detail = ", ".join(f"{r.alpha:+.2f}: {r.empirical:.3f}/{r.theory:.3f}" for r in rows)
    return max(gaps), f"{label} max gap {max(gaps):.4f} (<= 0.04); alpha: empirical/theory {detail}"


@pytest.mark.slow
def test_criterion_03_theory_vs_empirical():
    model = builtin_model("two_means", P)
    lay = ClassLayout.balanced(1024, 2, 1 / 16)
    worst, detail = _sweep_check(model_source(model, lay), model, lay, "two_means")
    # the stated grid has one point inside the O(1/sqrt(p)) window around -1; a finer grid is reported, not gated
    fine = [-1.0 + b / math.sqrt(P) for b in (-1.0, -0.5, 0.5, 1.0)]
    rows = sweep_alpha(model_source(model, lay), GAUSS, fine, 50, 3, model=model, layout=lay, workers=WORKERS)
    detail += " | info, beta in {-1,-0.5,0.5,1}: " + ", ".join(f"{r.empirical:.3f}/{r.theory:.3f}" for r in rows)
    files = _mnist_files()
    if files is not None:
        mnist = _mnist_model(*files, (8, 9))
        w2, d2 = _sweep_check(idx_source(*files, (8, 9), lay), mnist, lay, "MNIST(8,9)")
        worst, detail = max(worst, w2), detail + " | " + d2
    else:
        detail += " | MNIST(8,9) skipped: files absent"
    assert _record(3, worst <= 0.04, detail)


def _mean_accuracy(model, layout, kernel, seeds, master):
    src = model_source(model, layout)
    res = run_trials(partial(accuracy_trial, src, kernel, [-1.0]), seeds, master, WORKERS)
    acc = np.array([r[0][0] for r in res])
    per_class = np.array([r[1][0] for r in res])
    return float(np.nanmean(acc)), np.nanmean(per_class, axis=0)


@pytest.mark.slow
def test_criterion_04_heat_kernel_fails_on_concentric():
    model = builtin_model("concentric", P)
    lay = ClassLayout.balanced(1024, 2, 1 / 16)
    accs = {}
    for k in range(-5, 6):
        accs[k] = _mean_accuracy(model, lay, parse_kernel(f"gaussian{{{2.0 ** k!r}}}"), 3, trial_seed(4, k + 5))[0]
    ok = all(0.45 <= a <= 0.55 for a in accs.values())
    detail = ", ".join(f"2^{k}: {a:.3f}" for k, a in accs.items())
    assert _record(4, ok, f"accuracy in [0.45, 0.55] at every sigma^2 (3 seeds each): {detail}")


@pytest.mark.slow
def test_criterion_05_quadratic_kernel_succeeds():
    model = builtin_model("concentric", P)
    lay = ClassLayout.balanced(1024, 2, 1 / 16)
    good = _mean_accuracy(model, lay, parse_kernel("quad{1,0,1}"), 10, 5)[0]
    bad = _mean_accuracy(model, lay, parse_kernel("quad{1,-1.5,1}"), 10, 6)[0]
    ok = good >= 0.80 and bad <= 0.50
    assert _record(5, ok, f"f'=0: {good:.4f} (>= 0.80), f'=-1.5: {bad:.4f} (<= 0.50), 10 seeds each")


def _beta_hat(layout, seed):
    split = sample(builtin_model("two_means", P), layout, seed)
    return estimate_beta0(split, GAUSS).beta


@pytest.mark.slow
def test_criterion_06_beta_hat_consistency():
    lay = ClassLayout.imbalanced(4096, 1 / 16, 0.75)
    stats = population_stats(builtin_model("two_means", P), lay)
    b0 = beta0_exact(stats, lay, GAUSS(stats.tau).values(stats.tau))
    hats = np.array(run_trials(partial(_beta_hat, lay), 20, 6, WORKERS))
    rel = np.abs(hats - b0) / abs(b0)
    med = float(np.median(rel))
    detail = (f"beta0 = {b0:.4f}; median rel. error {med:.4f} (<= 0.25); "
              f"beta_hat range [{hats.min():.3f}, {hats.max():.3f}], {np.mean(rel <= 0.2):.0%} of seeds within 20%")
    assert _record(6, med <= 0.25, detail)


def _precision_sweep(make_source, shares, trials):
    out = {}
    for i, share in enumerate(shares):
        lay = ClassLayout.imbalanced(4096, 1 / 16, share)
        res = run_trials(partial(tune_trial, make_source(lay), GAUSS, []), trials, trial_seed(7, i), WORKERS)
        out[share] = (float(np.nanmean([r["ap_pagerank"] for r in res])), float(np.nanmean([r["ap_alpha_hat"] for r in res])))
    return out


@pytest.mark.slow
def test_criterion_07_tuned_alpha_precision_gain():
    shares = [1 / 2, 1 / 4, 1 / 8, 1 / 16]
    model = builtin_model("two_means", P)
    curves = {"two_means": _precision_sweep(lambda lay: model_source(model, lay), shares, 4)}
    files = _mnist_files()
    if files is not None:
        curves["MNIST(8,9)"] = _precision_sweep(lambda lay: idx_source(*files, (8, 9), lay), shares, 4)
    gains = {name: c[1 / 16][1] - c[1 / 16][0] for name, c in curves.items()}
    ok = all(g >= 0.05 for g in gains.values())
    parts = []
    for name, c in curves.items():
        pts = ", ".join(f"1/{round(1 / s)}: {c[s][0]:.3f}->{c[s][1]:.3f}" for s in shares)
        parts.append(f"{name} gain at 1/16 {gains[name]:+.4f} (>= 0.05); AP alpha=-1 -> alpha_hat: {pts}")
    if files is None:
        parts.append("MNIST(8,9) skipped: files absent")
    assert _record(7, ok, " | ".join(parts))


@pytest.mark.slow
def test_criterion_08_three_class_impossibility():
    model = builtin_model("three_class", P)
    lay = ClassLayout.balanced(960, 3, 1 / 16)
    results = {}
    for j, f1 in enumerate((-0.5, 0.5)):
        _, per_class = _mean_accuracy(model, lay, parse_kernel(f"quad{{1,{f1},1}}"), 10, trial_seed(8, j))
        results[f1] = per_class
    ok = all(min(pc[1], pc[2]) <= 0.52 for pc in results.values())
    detail = "; ".join(f"f'={f1:+}: per-class {np.round(pc, 3).tolist()}, min(C2, C3) {min(pc[1], pc[2]):.3f}"
                       for f1, pc in results.items())
    assert _record(8, ok, f"min(C2, C3) <= 0.52 in both cases, 10 seeds, n=960: {detail}")


@pytest.mark.slow
def test_criterion_09_expansion_hierarchy():
    kernel = gaussian_kernel(1.0)
    n_list = [256, 512, 1024]
    table = residual_decay(lambda p: builtin_model("two_means", p), kernel, n_list, seeds=(9,))
    recon = 0.0
    for n in n_list:
        p = int(round(784 / 1024 * n))
        model = builtin_model("two_means", p)
        ex = expansion_terms(sample(model, ClassLayout.balanced(n, 2, 1 / 16), trial_seed(9, n)), model, kernel)
        recon = max(recon, float(np.max(np.abs(ex.W_n + ex.W_sqrt + ex.W_one + ex.residual - ex.W))))
    ok = table.slope <= -0.4 and recon <= 1e-12
    norms = ", ".join(f"n={r.n}: {r.norm_residual:.4f}" for r in table.rows)
    assert _record(9, ok, f"slope {table.slope:.3f} (<= -0.4), reconstruction {recon:.1e} (<= 1e-12); residual norms {norms}")


def test_criterion_10_property_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(10)
    checks = {}

    F = rng.standard_normal((200, 3))
    pred = classify(F)
    checks["argmax invariance"] = (np.array_equal(classify(F * 3.7), pred)
                                   and np.array_equal(classify(F + rng.standard_normal((200, 1))), pred)
                                   and classify(np.zeros((1, 3)))[0] == 0)

    lay = ClassLayout((4, 3), (20, 25))
    split = sample(builtin_model("two_means", 40), lay, 0)
    spec = gaussian_kernel(1.0)
    W = weight_matrix(split, spec)
    perm = rng.permutation(lay.n)
    Wp = weight_matrix(LabelledSplit(split.X[perm], lay), spec)
    shifted = weight_matrix(LabelledSplit(split.X + rng.standard_normal(40) * 5, lay), spec)
    checks["kernel symmetry"] = np.array_equal(W, W.T)
    checks["permutation invariance"] = np.allclose(Wp, W[np.ix_(perm, perm)], atol=1e-12)
    checks["translation invariance"] = np.allclose(shifted, W, atol=1e-12)

    grid = np.linspace(-8, 8, 161)
    phi_err = max(abs(std_normal_cdf(u) - float(mpmath.ncdf(u))) for u in grid)
    checks["Phi accuracy"] = phi_err <= 1e-7

    model = builtin_model("two_means", P)
    lay = ClassLayout.imbalanced(1024, 1 / 16, 0.75)
    for a in (-1.0, -0.8):
        x = predict_two_class(model, lay, GAUSS, a).acc
        y = predict_two_class(model.relabel([1, 0]), lay.swapped(), GAUSS, a).acc
        checks[f"class swap alpha={a}"] = np.allclose(x, y[::-1], atol=1e-12)

    W, lay2 = rng.uniform(0.1, 1.0, (30, 30)), ClassLayout((2, 3), (12, 13))
    W = (W + W.T) / 2
    d = degree_vector(W)
    F = solve_closed_form(W, d, lay2, -0.7).F
    # at alpha = 0 the propagation is a random walk absorbed on labelled nodes
    checks["row sums one at alpha=0"] = np.allclose(solve_closed_form(W, d, lay2, 0.0).F.sum(axis=1), 1.0, atol=1e-10)
    checks["scale invariance"] = np.allclose(solve_closed_form(4 * W, 4 * d, lay2, -0.7).F, F, atol=1e-12)

    elapsed = time.perf_counter() - start
    ok = all(checks.values()) and elapsed < 120
    failed = [k for k, v in checks.items() if not v]
    detail = f"{len(checks)} properties, failed: {failed or 'none'}, Phi max error {phi_err:.1e}, {elapsed:.1f}s"
    assert _record(10, ok, detail + "; per-module suites in the other test files")
