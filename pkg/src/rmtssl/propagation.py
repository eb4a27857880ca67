"""Alpha-parametrised label propagation: solvers, score normalisation, decisions, metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ArgumentError, ConvergenceError, DegeneracyError, SolverError


@dataclass(frozen=True)
class ScoreMatrix:
    """Full n x K score matrix; the labelled block is one-hot."""

    F: np.ndarray
    layout: object
    alpha: float
    n_iter: int | None = None

    @property
    def labelled(self):
        return self.F[: self.layout.n_labelled]

    @property
    def unlabelled(self):
        return self.F[self.layout.n_labelled:]


def labelled_scores(layout):
    """One-hot F_[l] for the labelled block."""
    F_l = np.zeros((layout.n_labelled, layout.K))
    for k in range(layout.K):
        F_l[layout.labelled_block(k), k] = 1.0
    return F_l


def _powers(d, alpha):
    if np.any(~(d > 0)):
        i = int(np.flatnonzero(~(d > 0))[0])
        raise DegeneracyError(f"node {i} has non-positive degree {d[i]}")
    logd = np.log(d)
    return np.exp((-1.0 - alpha) * logd), np.exp(alpha * logd)


def propagation_system(W, d, layout, alpha):
    """Return (P, R) with P = D_u^{-1-a} W_uu D_u^a and R = D_u^{-1-a} W_ul D_l^a F_l."""
    W = np.asarray(W, dtype=float)
    d = np.asarray(d, dtype=float)
    if W.shape != (layout.n, layout.n) or d.shape != (layout.n,):
        raise ArgumentError(f"W/d shapes {W.shape}/{d.shape} do not match n={layout.n}")
    nl = layout.n_labelled
    left, right = _powers(d, alpha)
    P = left[nl:, None] * W[nl:, nl:] * right[None, nl:]
    R = (left[nl:, None] * W[nl:, :nl] * right[None, :nl]) @ labelled_scores(layout)
    return P, R


def _assemble(layout, F_u, alpha, n_iter=None):
    return ScoreMatrix(np.vstack([labelled_scores(layout), F_u]), layout, float(alpha), n_iter)


def solve_closed_form(W, d, layout, alpha):
    """F_u = (I - P)^{-1} R by LU factorisation."""
    P, R = propagation_system(W, d, layout, alpha)
    A = np.eye(P.shape[0]) - P
    anorm = np.linalg.norm(A, 1)
    lu, piv, info = sla.lapack.dgetrf(A)
    if info > 0:
        raise SolverError(f"I - P is exactly singular (zero pivot at {info - 1})")
    rcond, _ = sla.lapack.dgecon(lu, anorm, norm="1")
    if not rcond > np.finfo(float).eps:
        raise SolverError(f"I - P is singular to working precision (condition estimate {1 / max(rcond, 1e-300):.3g})")
    F_u, info = sla.lapack.dgetrs(lu, piv, R)
    return _assemble(layout, F_u, alpha)


def solve_fixed_point(W, d, layout, alpha, tol=1e-10, max_iter=100_000):
    """Iterate F_u <- P F_u + R from F_u = 0 until the max-abs change is <= tol."""
    P, R = propagation_system(W, d, layout, alpha)
    F_u = np.zeros_like(R)
    change = np.inf
    for it in range(1, max_iter + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            new = P @ F_u + R
            change = float(np.max(np.abs(new - F_u))) if new.size else 0.0
        F_u = new
        if not np.isfinite(change):
            raise ConvergenceError(f"iterates diverged at iteration {it}", residual=change)
        if change <= tol:
            return _assemble(layout, F_u, alpha, it)
    raise ConvergenceError(f"no convergence after {max_iter} iterations (last change {change:.3g})", residual=change)


def normalize(scores):
    """F_hat[i, k] = (n / n_l[k]) F[i, k] over the unlabelled rows."""
    lay = scores.layout
    return scores.unlabelled * (lay.n / np.array(lay.n_l, dtype=float))


def center(F_block):
    """Subtract each row's mean over classes."""
    F_block = np.asarray(F_block, dtype=float)
    return F_block - F_block.mean(axis=1, keepdims=True)


def classify(F_hat):
    """Row-wise argmax; ties go to the smallest class index."""
    return np.argmax(np.asarray(F_hat), axis=1)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray

    @property
    def average_precision(self):
        """Unweighted mean of per-class precisions."""
        return float(np.mean(self.precision))

    @property
    def per_class_accuracy(self):
        return self.recall


def metrics(predicted, truth, K=None):
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ArgumentError("predicted and truth must have equal length")
    K = int(max(predicted.max(initial=-1), truth.max(initial=-1)) + 1) if K is None else K
    precision = np.zeros(K)
    recall = np.zeros(K)
    for k in range(K):
        hit = np.sum((predicted == k) & (truth == k))
        n_pred = np.sum(predicted == k)
        n_true = np.sum(truth == k)
        precision[k] = hit / n_pred if n_pred else 0.0
        recall[k] = hit / n_true if n_true else 0.0
    accuracy = float(np.mean(predicted == truth)) if truth.size else 0.0
    return Metrics(accuracy, precision, recall)


def write_scores_csv(path, F, header_lines=()):
    """CSV with header ``node_index,class_1,...,class_K``; comment lines prefixed by '#'."""
    F = np.asarray(F)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_index"] + [f"class_{k + 1}" for k in range(F.shape[1])])
        for i, row in enumerate(F):
            w.writerow([i] + [repr(float(v)) for v in row])
