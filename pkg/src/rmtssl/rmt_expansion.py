"""Operator-norm expansion of the kernel matrix around f(tau) 1 1^T, and of powers of the degrees.

With omega_i = (x_i - mu_k)/sqrt(p) for x_i in class k and
psi_i = ||omega_i||^2 - tr(C_k)/p, the kernel matrix splits as

    W = W_n + W_sqrt + W_one + residual

with operator norms of order n, sqrt(n), 1 and n^{-1/2}. ``W_one`` is kept as
a dictionary of named summands so a reconstruction failure points at the
faulty piece.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .dataset import ClassLayout
from .errors import ArgumentError
from .gmm import population_stats, sample
from .kernel import degree_vector, resolve_kernel, weight_matrix
from .seeding import trial_seed

# names of the O(1) summands, in assembly order
W_ONE_TERMS = (
    "d1_mean_sqdist",
    "d1_omega_mu_left",
    "d1_diag_omega_mu",
    "d1_mu_omega_right",
    "d1_mu_omega_diag",
    "d1_gram",
    "d2_psi_sq_left",
    "d2_psi_sq_right",
    "d2_t_sq_left",
    "d2_t_sq_right",
    "d2_t_outer",
    "d2_diag_t_psi",
    "d2_t_psi",
    "d2_psi_diag_t",
    "d2_psi_t",
    "d2_T",
    "d2_psi_outer",
    "diagonal",
)


@dataclass(frozen=True)
class ExpansionTerms:
    W: np.ndarray
    W_n: np.ndarray
    W_sqrt: np.ndarray
    W_one_terms: dict
    psi: np.ndarray
    Omega: np.ndarray
    j: np.ndarray  # n x K class indicators
    f_values: tuple  # f(tau), f'(tau), f''(tau), f(0)
    tau: float

    @property
    def W_one(self):
        return sum(self.W_one_terms[k] for k in W_ONE_TERMS)

    @property
    def residual(self):
        return self.W - (self.W_n + self.W_sqrt + self.W_one)

    @property
    def n(self):
        return self.W.shape[0]


def build_terms(W, Omega, psi, labels, stats, f_values):
    """Assemble the expansion from its ingredients.

    ``stats`` supplies p, tau, t, T and mu_circ; ``f_values`` is
    (f(tau), f'(tau), f''(tau), f(0)). Exposed separately so degenerate
    ingredients (for instance Omega = 0) can be fed in directly.
    """
    W = np.asarray(W, dtype=float)
    Omega = np.asarray(Omega, dtype=float)
    psi = np.asarray(psi, dtype=float)
    labels = np.asarray(labels)
    n = W.shape[0]
    p = stats.p
    K = stats.t.size
    if Omega.shape[0] != n or psi.shape != (n,) or labels.shape != (n,):
        raise ArgumentError("expansion ingredients do not match W")
    f0, f1, f2, fz = f_values
    sp = math.sqrt(p)
    one = np.ones(n)
    j = (labels[:, None] == np.arange(K)[None, :]).astype(float)

    tv = j @ stats.t / sp  # t_{k(i)} / sqrt(p)
    mu = stats.mu_circ  # K x p
    Om_mu = Omega @ mu.T  # omega_i^T mu_a
    own = Om_mu[np.arange(n), labels]  # omega_i^T mu_{k(i)}
    sqd = stats.mu_circ_sqdist / p
    psi2 = psi * psi
    t2 = j @ (stats.t**2) / p

    W_n = f0 * np.outer(one, one)
    W_sqrt = f1 * (np.outer(psi, one) + np.outer(one, psi) + np.outer(tv, one) + np.outer(one, tv))

    c = 2.0 / sp
    terms = {
        "d1_mean_sqdist": f1 * (j @ sqd @ j.T),
        "d1_omega_mu_left": -f1 * c * (Om_mu @ j.T),
        "d1_diag_omega_mu": f1 * c * np.outer(own, one),
        "d1_mu_omega_right": -f1 * c * (j @ Om_mu.T),
        "d1_mu_omega_diag": f1 * c * np.outer(one, own),
        "d1_gram": -2.0 * f1 * (Omega @ Omega.T),
        "d2_psi_sq_left": 0.5 * f2 * np.outer(psi2, one),
        "d2_psi_sq_right": 0.5 * f2 * np.outer(one, psi2),
        "d2_t_sq_left": 0.5 * f2 * np.outer(t2, one),
        "d2_t_sq_right": 0.5 * f2 * np.outer(one, t2),
        "d2_t_outer": f2 * np.outer(tv, tv),
        "d2_diag_t_psi": f2 * np.outer(tv * psi, one),
        "d2_t_psi": f2 * np.outer(tv, psi),
        "d2_psi_diag_t": f2 * np.outer(one, psi * tv),
        "d2_psi_t": f2 * np.outer(psi, tv),
        "d2_T": 2.0 * f2 * (j @ (stats.T / p) @ j.T),
        "d2_psi_outer": f2 * np.outer(psi, psi),
        "diagonal": (fz - f0 + stats.tau * f1) * np.eye(n),
    }
    return ExpansionTerms(W, W_n, W_sqrt, terms, psi, Omega, j, (f0, f1, f2, fz), float(stats.tau))


def expansion_terms(split, model, kernel, W=None):
    """Expansion of the kernel matrix of ``split``, using the true class means and covariances of ``model``."""
    lay = split.layout
    if model.K != lay.K or model.p != split.p:
        raise ArgumentError(f"model (K={model.K}, p={model.p}) does not match split (K={lay.K}, p={split.p})")
    stats = population_stats(model, lay)
    spec = resolve_kernel(kernel, stats.tau)
    f0, f1, f2 = spec.values(stats.tau)
    fz = float(spec.f(0.0))
    labels = lay.truth()
    Omega = (split.X - model.means[labels]) / math.sqrt(split.p)
    traces = np.trace(model.covariances, axis1=1, axis2=2)
    psi = np.einsum("ij,ij->i", Omega, Omega) - traces[labels] / split.p
    if W is None:
        W = weight_matrix(split, spec)
    return build_terms(W, Omega, psi, labels, stats, (f0, f1, f2, fz))


def operator_norm(A, tol=1e-6, max_iter=5000, seed=0):
    """Largest singular value by power iteration on A^T A from a seeded start vector.

    Stops when the relative change of the estimate is below ``tol``.
    """
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    v = np.random.default_rng(seed).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        u = A @ v
        s = np.linalg.norm(u)
        if s == 0.0:
            return 0.0
        w = A.T @ u
        nw = np.linalg.norm(w)
        new = math.sqrt(nw)  # ||A^T A v|| -> sigma_max^2
        v = w / nw
        if abs(new - est) <= tol * new:
            return new
        est = new
    return est


@dataclass(frozen=True)
class DecayRow:
    n: int
    norm_Wn: float
    norm_Wsqrt: float
    norm_Wone: float
    norm_residual: float


@dataclass(frozen=True)
class DecayTable:
    rows: list
    slope: float  # least-squares slope of log ||residual|| against log n

    def write_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "norm_Wn", "norm_Wsqrt", "norm_Wone", "norm_residual"])
            for r in self.rows:
                w.writerow([r.n, repr(r.norm_Wn), repr(r.norm_Wsqrt), repr(r.norm_Wone), repr(r.norm_residual)])
            fh.write(f"# slope_log_residual_vs_log_n={self.slope!r}\n")


def residual_decay(model_factory, kernel, n_list, seeds=(0,), c0=784 / 1024, labelled_fraction=1 / 16):
    """Operator norms of the expansion pieces at several sizes with p/n held at ``c0``.

    ``model_factory(p)`` builds the model at each dimension. Norms are
    averaged over the seeds; each seed is a master seed for
    :func:`trial_seed` keyed by n.
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ArgumentError("n_list must be strictly increasing")
    rows = []
    for n in n_list:
        p = max(2, int(round(c0 * n)))
        model = model_factory(p)
        layout = ClassLayout.balanced(n, model.K, labelled_fraction)
        acc = np.zeros(4)
        for s in seeds:
            ex = expansion_terms(sample(model, layout, trial_seed(s, n)), model, kernel)
            acc += [operator_norm(M) for M in (ex.W_n, ex.W_sqrt, ex.W_one, ex.residual)]
        acc /= len(seeds)
        rows.append(DecayRow(n, *map(float, acc)))
    if len(rows) >= 2:
        slope = float(np.polyfit(np.log([r.n for r in rows]), np.log([r.norm_residual for r in rows]), 1)[0])
    else:
        slope = float("nan")
    return DecayTable(rows, slope)


@dataclass(frozen=True)
class DegreeCheck:
    sigma: float
    max_abs_deviation: float  # exact (d/n)^sigma against its second-order expansion
    luu_norm: float  # ||D_u^{-1-a} W_uu D_u^a - (1/n) 1 1^T||
    luu_norm_scaled: float  # the same divided by sqrt(n)


def degree_expansion_check(split, model, kernel, sigma, alpha=-1.0, terms=None):
    ex = expansion_terms(split, model, kernel) if terms is None else terms
    d = degree_vector(ex.W)
    n = ex.n
    f0 = ex.f_values[0]
    a1 = (ex.W_sqrt + ex.W_one) @ np.ones(n)
    a2 = ex.W_sqrt @ np.ones(n)
    approx = f0**sigma * (1.0 + sigma / (n * f0) * a1 + sigma * (sigma - 1.0) / (2.0 * n * n * f0 * f0) * a2 * a2)
    exact = np.exp(sigma * np.log(d / n))
    dev = float(np.max(np.abs(exact - approx)))

    nl = split.layout.n_labelled
    du = d[nl:]
    L = np.exp((-1.0 - alpha) * np.log(du))[:, None] * ex.W[nl:, nl:] * np.exp(alpha * np.log(du))[None, :]
    diff = L - 1.0 / n
    norm = operator_norm(diff)
    return DegreeCheck(float(sigma), dev, norm, norm / math.sqrt(n))
