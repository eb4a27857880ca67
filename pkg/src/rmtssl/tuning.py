"""Choice of alpha for two-class problems: exact balance point, its data-driven estimate, and an oracle grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .asymptotics import TheoryInputs, law_theorem_main
from .dataset import ClassLayout, estimate_delta_t, estimate_tau
from .errors import ArgumentError, IllConditionedError, NumericError, RmtSslError, UnsupportedError
from .kernel import degree_vector, resolve_kernel, weight_matrix
from .gmm import MixtureModel, sample
from .propagation import classify, metrics, normalize, solve_closed_form
from .seeding import trial_seed


@dataclass(frozen=True)
class TuningResult:
    beta: float
    p: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def alpha(self):
        return -1.0 + self.beta / math.sqrt(self.p)


def mean_gap_spread(stats, f0, f1, f2):
    """Delta m: the separation shared by both class gaps at alpha = -1."""
    g1, g2 = f1 / f0, f2 / f0
    dmu = stats.mu_circ[0] - stats.mu_circ[1]
    dt = stats.t[0] - stats.t[1]
    dT = stats.T[0, 0] + stats.T[1, 1] - 2.0 * stats.T[0, 1]
    return -2.0 * g1 * float(dmu @ dmu) + (g2 - g1 * g1) * dt * dt + 2.0 * g2 * dT


def beta0_exact(stats, layout, kernel_values, check=True):
    """beta at which [m_1]_1 - [m_1]_2 = [m_2]_2 - [m_2]_1.

    The class gaps move with slope +-(f'/(f c_l)) (t_1 - t_2) in beta, which
    gives beta_0 = (f / 2f') (c_l1 - c_l2) / (t_1 - t_2) * Delta m.
    """
    if layout.K != 2:
        raise UnsupportedError("beta0 is defined for two classes")
    f0, f1, f2 = kernel_values
    dt = float(stats.t[0] - stats.t[1])
    if dt == 0.0:
        raise IllConditionedError("t_1 = t_2: the class gaps do not depend on beta")
    if f1 == 0.0:
        raise ArgumentError("f'(tau) = 0: the class gaps do not depend on beta")
    if f0 == 0.0:
        raise ArgumentError("f(tau) must be non-zero")
    c_l1, c_l2 = layout.c_lk
    beta = f0 / (2.0 * f1) * (c_l1 - c_l2) / dt * mean_gap_spread(stats, f0, f1, f2)
    if check:
        inputs = TheoryInputs(stats, layout, f0, f1, f2, -1.0 + beta / math.sqrt(stats.p))
        m1, m2 = law_theorem_main(inputs, 0).m, law_theorem_main(inputs, 1).m
        g1, g2 = m1[0] - m1[1], m2[1] - m2[0]
        if abs(g1 - g2) > 1e-8 * max(1.0, abs(g1), abs(g2)):
            raise NumericError(f"balance check failed: gaps {g1!r} vs {g2!r}")
    return float(beta)


def _pagerank_gap_sum(W, layout, unlabelled_rows, p):
    """p * sum over the given unlabelled rows of (F_hat_1 - F_hat_2) at alpha = -1."""
    d = degree_vector(W)
    F_hat = normalize(solve_closed_form(W, d, layout, -1.0))
    rows = np.asarray(unlabelled_rows) - layout.n_labelled
    return p * float(np.sum(F_hat[rows, 0] - F_hat[rows, 1]))


def truncated_problem(layout, n_keep, dropped_as_unlabelled=False):
    """Row selection and layout after keeping the first ``n_keep`` labelled rows of each class.

    By default the surplus labelled rows leave the problem; with
    ``dropped_as_unlabelled`` they join the unlabelled block of their class.
    """
    lab, unl = [], []
    for k in range(layout.K):
        lb, ub = layout.labelled_block(k), layout.unlabelled_block(k)
        lab.append(np.arange(lb.start, lb.start + n_keep))
        blk = np.arange(ub.start, ub.stop)
        if dropped_as_unlabelled:
            blk = np.concatenate([np.arange(lb.start + n_keep, lb.stop), blk])
        unl.append(blk)
    rows = np.concatenate(lab + unl)
    return rows, ClassLayout((n_keep,) * layout.K, tuple(b.size for b in unl))


def estimate_beta0(split, kernel, dropped_as_unlabelled=False, W=None):
    """Data-driven balance point from two PageRank (alpha = -1) runs.

    J sums p (F_hat_1 - F_hat_2) over the unlabelled rows of the full problem;
    J' repeats this after reducing both labelled classes to the size of the
    smaller one, keeping the first rows of each class. Then
    beta_hat = c_l f(tau_hat) / (f'(tau_hat) Delta_t_hat) * (J' - J) / n_u.
    """
    lay = split.layout
    if lay.K != 2:
        raise UnsupportedError("estimate_beta0 is defined for two classes")
    if min(lay.n_l) < 2:
        raise ArgumentError("each labelled class needs at least two samples")
    p = split.p
    tau_hat = estimate_tau(split)
    delta_t = estimate_delta_t(split)
    if abs(delta_t) < 1e-6 * tau_hat:
        raise IllConditionedError(f"|Delta t_hat| = {abs(delta_t):.3g} is too small relative to tau_hat")
    spec = resolve_kernel(kernel, tau_hat)
    f0, f1, _ = spec.values(tau_hat)
    if f1 == 0.0:
        raise ArgumentError("f'(tau_hat) = 0")
    if W is None:
        W = weight_matrix(split, spec)

    unl_rows = np.arange(lay.n_labelled, lay.n)
    J = _pagerank_gap_sum(W, lay, unl_rows, p)

    n_keep = min(lay.n_l)
    rows, sub_layout = truncated_problem(lay, n_keep, dropped_as_unlabelled)
    W_sub = W[np.ix_(rows, rows)]
    if dropped_as_unlabelled:
        sum_rows = np.arange(sub_layout.n_labelled, sub_layout.n)
    else:
        sum_rows = np.flatnonzero(rows >= lay.n_labelled)
    J_prime = _pagerank_gap_sum(W_sub, sub_layout, sum_rows, p)

    beta = lay.c_l * f0 / (f1 * delta_t) * (J_prime - J) / lay.n_unlabelled
    diag = {
        "J": J,
        "J_prime": J_prime,
        "delta_t_hat": float(delta_t),
        "tau_hat": float(tau_hat),
        "n_kept_per_class": int(n_keep),
        "dropped_as_unlabelled": bool(dropped_as_unlabelled),
    }
    return TuningResult(float(beta), p, diag)


@dataclass(frozen=True)
class GridResult:
    alpha_star: float
    alphas: np.ndarray
    mean_precision: np.ndarray
    stderr: np.ndarray
    trials: np.ndarray
    failures: list


def evaluate_alphas(split, kernel, alphas, W=None):
    """Average precision of the normalised decision at each alpha for one dataset.

    Solver failures give NaN for that alpha.
    """
    spec = resolve_kernel(kernel, estimate_tau(split))
    W = weight_matrix(split, spec) if W is None else W
    d = degree_vector(W)
    truth = split.layout.truth_unlabelled()
    out = np.full(len(alphas), np.nan)
    for i, a in enumerate(alphas):
        try:
            F_hat = normalize(solve_closed_form(W, d, split.layout, a))
        except RmtSslError:
            continue
        out[i] = metrics(classify(F_hat), truth, split.layout.K).average_precision
    return out


def alpha_star_grid(source, kernel, alpha_grid, trials=1, seed=0, layout=None):
    """Oracle alpha maximising mean average precision over ``alpha_grid``.

    ``source`` is either a :class:`LabelledSplit` (evaluated once) or a
    mixture model sampled ``trials`` times with ``layout``. Every alpha sees
    the same datasets; ties go to the smaller alpha.
    """
    alphas = np.asarray(list(alpha_grid), dtype=float)
    if alphas.size == 0:
        raise ArgumentError("alpha grid is empty")
    order = np.argsort(alphas, kind="stable")
    alphas = alphas[order]
    if isinstance(source, MixtureModel):
        if layout is None:
            raise ArgumentError("sampling from a model needs a layout")
        runs = [evaluate_alphas(sample(source, layout, trial_seed(seed, t)), kernel, alphas) for t in range(trials)]
    else:
        runs = [evaluate_alphas(source, kernel, alphas)]
    R = np.array(runs)
    ok = np.isfinite(R)
    count = ok.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, np.nansum(R, axis=0) / np.maximum(count, 1), np.nan)
        sq = np.nansum((R - mean) ** 2, axis=0)
        stderr = np.where(count > 1, np.sqrt(sq / np.maximum(count - 1, 1) / np.maximum(count, 1)), np.nan)
    failures = [float(a) for a, c in zip(alphas, count) if c < len(runs)]
    if not np.any(count > 0):
        raise NumericError("every grid point failed")
    best = int(np.nanargmax(mean))  # first maximum, i.e. smallest alpha among ties
    return GridResult(float(alphas[best]), alphas, mean, stderr, count, failures)
