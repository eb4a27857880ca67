"""Seeded Monte Carlo trials shared by the command line and the acceptance suite.

A data source is any picklable callable ``seed -> LabelledSplit``. Trial ``t``
of a run with master seed ``s`` draws its data with ``trial_seed(s, t)``, so
results do not depend on how trials are distributed over workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np

from .asymptotics import predict_two_class
from .dataset import ingest_idx, estimate_tau
from .errors import RmtSslError
from .gmm import sample
from .kernel import degree_vector, resolve_kernel, weight_matrix
from .propagation import classify, metrics, normalize, solve_closed_form
from .seeding import trial_seed
from .tuning import estimate_beta0


def model_source(model, layout):
    return partial(sample, model, layout)


def _idx_split(images_path, labels_path, classes, layout, seed):
    return ingest_idx(images_path, labels_path, classes, layout, seed)


def idx_source(images_path, labels_path, classes, layout):
    return partial(_idx_split, str(images_path), str(labels_path), list(classes), layout)


def run_trials(fn, trials, seed, workers=1):
    """``[fn(trial_seed(seed, t)) for t in range(trials)]``, optionally on a process pool, in trial order."""
    seeds = [trial_seed(seed, t) for t in range(trials)]
    if workers <= 1 or trials <= 1:
        return [fn(s) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


def mean_and_stderr(values):
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return math.nan, math.nan, 0
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
    return float(v.mean()), se, int(v.size)


def _graph(split, kernel):
    spec = resolve_kernel(kernel, estimate_tau(split))
    W = weight_matrix(split, spec)
    return spec, W, degree_vector(W)


def _alpha_metrics(split, W, d, alpha, normalized=True):
    scores = solve_closed_form(W, d, split.layout, alpha)
    F = normalize(scores) if normalized else scores.unlabelled
    return metrics(classify(F), split.layout.truth_unlabelled(), split.layout.K)


def accuracy_trial(source, kernel, alphas, seed, normalized=True):
    """Per-alpha (accuracy, per-class accuracy) on one drawn dataset; NaN where the solver fails."""
    split = source(seed)
    _, W, d = _graph(split, kernel)
    K = split.layout.K
    acc = np.full(len(alphas), np.nan)
    per_class = np.full((len(alphas), K), np.nan)
    for i, a in enumerate(alphas):
        try:
            m = _alpha_metrics(split, W, d, a, normalized)
        except RmtSslError:
            continue
        acc[i] = m.accuracy
        per_class[i] = m.per_class_accuracy
    return acc, per_class


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    empirical: float
    stderr: float
    trials: int
    theory: float


def sweep_alpha(source, kernel, alphas, trials, seed, model=None, layout=None, workers=1):
    """Empirical mean accuracy per alpha; theory column from the unconditional law when ``model`` is given."""
    alphas = [float(a) for a in alphas]
    res = run_trials(partial(accuracy_trial, source, kernel, alphas), trials, seed, workers)
    A = np.array([r[0] for r in res])
    rows = []
    for i, a in enumerate(alphas):
        mean, se, cnt = mean_and_stderr(A[:, i])
        th = math.nan
        if model is not None:
            try:
                th = predict_two_class(model, layout, kernel, a).mean
            except RmtSslError:
                pass
        rows.append(SweepRow(a, mean, se, cnt, th))
    return rows


def tune_trial(source, kernel, alpha_grid, seed):
    """One dataset: beta_hat_0 and average precision at alpha = -1, at alpha_hat_0 and over ``alpha_grid``."""
    split = source(seed)
    spec, W, d = _graph(split, kernel)

    def ap(a):
        try:
            return _alpha_metrics(split, W, d, a).average_precision
        except RmtSslError:
            return math.nan

    try:
        res = estimate_beta0(split, spec, W=W)
        beta, alpha_hat = res.beta, res.alpha
    except RmtSslError:
        beta = alpha_hat = math.nan
    return {
        "beta_hat": beta,
        "alpha_hat": alpha_hat,
        "ap_pagerank": ap(-1.0),
        "ap_alpha_hat": ap(alpha_hat) if math.isfinite(alpha_hat) else math.nan,
        "ap_grid": np.array([ap(a) for a in alpha_grid]),
    }


@dataclass(frozen=True)
class TuneSummary:
    beta_hat: float
    alpha_hat: float
    alpha_star: float
    ap_pagerank: tuple  # (mean, stderr, count)
    ap_alpha_hat: tuple
    ap_alpha_star: tuple
    grid_alphas: np.ndarray
    grid_mean: np.ndarray
    grid_stderr: np.ndarray
    grid_count: np.ndarray


def tune_compare(source, kernel, alpha_grid, trials, seed, workers=1):
    """Average precision at alpha = -1, at the per-trial alpha_hat_0, and at the oracle alpha* of the mean grid curve."""
    grid = np.sort(np.asarray(list(alpha_grid), dtype=float))
    res = run_trials(partial(tune_trial, source, kernel, list(grid)), trials, seed, workers)
    G = np.array([r["ap_grid"] for r in res])
    cols = [mean_and_stderr(G[:, i]) for i in range(grid.size)] if G.ndim == 2 else []
    grid_mean = np.array([c[0] for c in cols])
    if grid_mean.size == 0 or np.all(np.isnan(grid_mean)):
        best = 0
    else:
        best = int(np.nanargmax(grid_mean))
    return TuneSummary(
        beta_hat=float(np.nanmedian([r["beta_hat"] for r in res])),
        alpha_hat=float(np.nanmedian([r["alpha_hat"] for r in res])),
        alpha_star=float(grid[best]) if grid.size else math.nan,
        ap_pagerank=mean_and_stderr([r["ap_pagerank"] for r in res]),
        ap_alpha_hat=mean_and_stderr([r["ap_alpha_hat"] for r in res]),
        ap_alpha_star=cols[best] if cols else (math.nan, math.nan, 0),
        grid_alphas=grid,
        grid_mean=grid_mean,
        grid_stderr=np.array([c[1] for c in cols]),
        grid_count=np.array([c[2] for c in cols], dtype=int),
    )
