"""Large-(n, p) Gaussian laws of normalised scores and the accuracies they predict.

For an unlabelled point of true class ``b``, ``p * F_hat[i]`` is, up to a
common offset shared by all classes, Gaussian with mean ``m_b`` and covariance
``Sigma_b``. Two families of formulas are provided:

* :func:`law_theorem_main` for alpha = -1 + beta/sqrt(p);
* :func:`law_general` for any alpha = O(1), conditional on the labelled data
  (needs the realised labelled spreads) or unconditional.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, NumericError, UnsupportedError
from .gmm import population_stats
from .kernel import resolve_kernel

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class GaussianScoreLaw:
    b: int
    m: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        S = np.asarray(self.Sigma, dtype=float)
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(S))):
            raise NumericError("law has non-finite entries")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "Sigma", S)

    @property
    def K(self):
        return self.m.size

    def centred(self):
        """Law of G - mean(G) 1, which is what row-centred scores see."""
        P = np.eye(self.K) - 1.0 / self.K
        return GaussianScoreLaw(self.b, P @ self.m, P @ self.Sigma @ P)

    def is_psd(self, rtol=1e-10):
        S = (self.Sigma + self.Sigma.T) / 2
        ev = np.linalg.eigvalsh(S)
        return bool(np.allclose(S, self.Sigma, atol=1e-12 * max(1.0, np.abs(ev).max()))) and ev[0] >= -rtol * max(
            ev[-1], 0.0
        )


@dataclass(frozen=True)
class TheoryInputs:
    """Everything the asymptotic formulas consume.

    ``f0, f1, f2`` are f(tau), f'(tau), f''(tau). ``s[a]`` is the realised sum
    over labelled points of class ``a`` of ||omega_i||^2 - E||omega_i||^2.
    """

    stats: object
    layout: object
    f0: float
    f1: float
    f2: float
    alpha: float
    s: np.ndarray | None = None

    def __post_init__(self):
        if not all(np.isfinite((self.f0, self.f1, self.f2))):
            raise ArgumentError("kernel values must be finite")
        if self.f0 == 0:
            raise ArgumentError("f(tau) must be non-zero")

    @property
    def p(self):
        return self.stats.p

    @property
    def beta(self):
        return (1.0 + self.alpha) * math.sqrt(self.p)

    def with_alpha(self, alpha):
        return TheoryInputs(self.stats, self.layout, self.f0, self.f1, self.f2, float(alpha), self.s)


def theory_inputs(model, layout, kernel, alpha=None, beta=None, tau=None, s=None):
    """Assemble :class:`TheoryInputs` from a mixture model.

    ``kernel`` may be a KernelSpec or a factory evaluated at ``tau`` (the
    population value unless given).
    """
    if (alpha is None) == (beta is None):
        raise ArgumentError("give exactly one of alpha, beta")
    stats = population_stats(model, layout)
    tau = stats.tau if tau is None else tau
    spec = resolve_kernel(kernel, tau)
    f0, f1, f2 = spec.values(tau)
    if alpha is None:
        alpha = -1.0 + beta / math.sqrt(model.p)
    return TheoryInputs(stats, layout, f0, f1, f2, float(alpha), None if s is None else np.asarray(s, float))


def labelled_spreads(split, model):
    """s[a] = sum over labelled class-a rows of ||omega_i||^2 - tr(C_a)/p."""
    C = model.covariances
    lay = split.layout
    s = np.empty(lay.K)
    for a in range(lay.K):
        om = (split.labelled_rows(a) - model.means[a]) / math.sqrt(model.p)
        s[a] = float(np.sum(np.einsum("ij,ij->i", om, om) - np.trace(C[a]) / model.p))
    return s


def law_theorem_main(inputs, b):
    """Mean and covariance for alpha = -1 + beta/sqrt(p) in labelled-centred statistics."""
    st, lay = inputs.stats, inputs.layout
    g1 = inputs.f1 / inputs.f0
    g2 = inputs.f2 / inputs.f0
    curv = g2 - g1 * g1
    m = (
        -2.0 * g1 * (st.mu_tilde @ st.mu_tilde[b])
        + curv * st.t_tilde * st.t_tilde[b]
        + 2.0 * g2 * st.T_tilde[:, b]
        + inputs.beta / lay.c_l * g1 * st.t
    )
    c0 = lay.c0(st.p)
    Sigma = 2.0 * curv**2 * st.T[b, b] * np.outer(st.t, st.t) + 4.0 * g1 * g1 * (
        st.mu_cov_mu[b] + np.diag(c0 * st.T[b] / (lay.c_l * lay.c_lk))
    )
    return GaussianScoreLaw(b, m, Sigma)


def general_H(inputs):
    """H[a, b] for all class pairs."""
    st = inputs.stats
    g1 = inputs.f1 / inputs.f0
    g2 = inputs.f2 / inputs.f0
    return g1 * st.mu_circ_sqdist + (g2 - g1 * g1) * np.outer(st.t, st.t) + 2.0 * g2 * st.T


def general_Delta(inputs):
    st, lay, a = inputs.stats, inputs.layout, inputs.alpha
    f0, f1, f2 = inputs.f0, inputs.f1, inputs.f2
    g1 = f1 / f0
    return (
        math.sqrt(st.p) * g1 * st.t
        + (a * f1 * f1 + f0 * f2) / (2.0 * f0 * f0) * (2.0 * np.diag(st.T) + st.t**2)
        + g1 * g1 * float(np.dot(lay.n_u, st.t)) * st.t / lay.n_labelled
    )


def law_general(inputs, b, variant="unconditional", psi_factor=2.0):
    """Law of the scores for arbitrary alpha.

    ``psi_factor`` multiplies the rank-one ``T_bb t t^T`` covariance term. It
    is the variance factor of a centred Gaussian quadratic form,
    Var(||omega||^2) = 2 tr(C^2)/p^2; pass 1.0 for the alternative without it.
    """
    if variant not in ("conditional", "unconditional"):
        raise ArgumentError(f"unknown variant {variant!r}")
    if variant == "conditional" and inputs.s is None:
        raise ArgumentError("conditional law needs the labelled spreads s")
    st, lay, alpha = inputs.stats, inputs.layout, inputs.alpha
    n, n_lab = lay.n, lay.n_labelled
    g1 = inputs.f1 / inputs.f0
    g2 = inputs.f2 / inputs.f0
    H = general_H(inputs)
    weights = alpha * lay.n_k + np.array(lay.n_u)
    bracket = general_Delta(inputs) - alpha * g1 * g1 * st.t * st.t[b]
    if variant == "conditional":
        bracket = bracket + st.p / np.array(lay.n_l, dtype=float) * g1 * inputs.s
    m = H[:, b] + H @ weights / n_lab + (1.0 + alpha) * n / n_lab * bracket

    c0 = lay.c0(st.p)
    coef = ((-alpha * alpha - alpha) * n - n_lab) / n_lab * g1 * g1 + g2
    diag = g1 * g1 * 4.0 * c0 * st.T[b] / lay.c_lk
    if variant == "unconditional":
        diag = diag + g1 * g1 * (1.0 + alpha) ** 2 / lay.c_l**2 * 2.0 * c0 * np.diag(st.T) / lay.c_lk
    Sigma = psi_factor * coef**2 * st.T[b, b] * np.outer(st.t, st.t) + np.diag(diag) + 4.0 * g1 * g1 * st.mu_cov_mu[b]
    return GaussianScoreLaw(b, m, Sigma)


def theta(law, a, atol=1e-10):
    """Standardised gap ([m_b]_b - [m_b]_a) / sd([G]_b - [G]_a).

    A variance within ``atol`` (relative to the diagonal scale) of zero counts
    as exactly zero and gives +-inf; clearly negative ones are an error.
    """
    b = law.b
    gap = law.m[b] - law.m[a]
    S = law.Sigma
    var = S[b, b] + S[a, a] - 2.0 * S[a, b]
    scale = max(1.0, abs(S[b, b]), abs(S[a, a]))
    if var < -atol * scale:
        raise NumericError(f"negative variance combination {var:.3g}")
    if var <= atol * scale:
        return math.copysign(math.inf, gap) if gap != 0 else 0.0
    return gap / math.sqrt(var)


def std_normal_cdf(u):
    """Standard normal distribution function, saturating at +-inf."""
    return 0.5 * math.erfc(-float(u) / SQRT2)


@dataclass(frozen=True)
class TwoClassAccuracy:
    acc: np.ndarray
    theta: np.ndarray
    mean: float


def accuracy_two_class(laws, layout=None):
    """Per-class Phi(theta) and their mean weighted by the unlabelled class shares."""
    if len(laws) != 2:
        raise UnsupportedError("accuracy_two_class needs exactly two laws")
    th = np.array([theta(laws[0], 1), theta(laws[1], 0)])
    acc = np.array([std_normal_cdf(v) for v in th])
    w = np.array([0.5, 0.5]) if layout is None else layout.c_uk / layout.c_u
    return TwoClassAccuracy(acc, th, float(w @ acc))


def accuracy_multiclass(laws, trials=100_000, seed=0, rtol=1e-10):
    """Monte Carlo P([G]_b is the largest entry) for each law; returns (probabilities, standard errors)."""
    rng = np.random.default_rng(seed)
    probs = np.empty(len(laws))
    for idx, law in enumerate(laws):
        S = (law.Sigma + law.Sigma.T) / 2
        ev, V = np.linalg.eigh(S)
        if ev[0] < -rtol * max(ev[-1], 1.0):
            raise NumericError(f"covariance of class {law.b} is not PSD (min eigenvalue {ev[0]:.3g})")
        root = V * np.sqrt(np.clip(ev, 0.0, None))
        G = law.m + rng.standard_normal((trials, law.K)) @ root.T
        probs[idx] = np.mean(np.argmax(G, axis=1) == law.b)
    return probs, np.sqrt(probs * (1 - probs) / trials)


def predict_two_class(model, layout, kernel, alpha, variant="unconditional", tau=None, s=None, psi_factor=2.0):
    """Predicted per-class and mean accuracy for a two-class model."""
    inputs = theory_inputs(model, layout, kernel, alpha=alpha, tau=tau, s=s)
    laws = [law_general(inputs, b, variant, psi_factor) for b in range(2)]
    return accuracy_two_class(laws, layout)


def write_laws_csv(path, laws, accuracies=None, header_lines=()):
    """One row per class: b, m entries, Sigma entries (row-major), theta vs. every other class, accuracy."""
    K = laws[0].K
    cols = ["class"] + [f"m_{a + 1}" for a in range(K)]
    cols += [f"Sigma_{i + 1}{j + 1}" for i in range(K) for j in range(K)]
    cols += [f"theta_vs_{a + 1}" for a in range(K)] + ["predicted_accuracy"]
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i, law in enumerate(laws):
            th = [repr(float(theta(law, a))) if a != law.b else "" for a in range(K)]
            acc = "" if accuracies is None else repr(float(accuracies[i]))
            w.writerow([law.b + 1] + [repr(float(v)) for v in law.m] + [repr(float(v)) for v in law.Sigma.ravel()] + th + [acc])
