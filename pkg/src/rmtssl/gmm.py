"""Gaussian mixture models, sampling, and population trace statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from .dataset import LabelledSplit
from .errors import ArgumentError

BUILTIN_MODELS = ("two_means", "concentric", "three_class")


@dataclass(frozen=True)
class MixtureModel:
    """K Gaussian classes N(mu_k, L_k L_k^T) in dimension p."""

    means: np.ndarray  # K x p
    cov_factors: np.ndarray  # K x p x p
    name: str = "custom"

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        factors = np.asarray(self.cov_factors, dtype=float)
        K, p = means.shape
        if factors.shape != (K, p, p):
            raise ArgumentError(f"cov_factors must have shape {(K, p, p)}, got {factors.shape}")
        for k, L in enumerate(factors):
            s = np.linalg.svd(L, compute_uv=False)
            if s[-1] <= 1e-12 * max(s[0], 1e-300):
                raise ArgumentError(f"covariance factor of class {k} is rank deficient")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "cov_factors", factors)

    @classmethod
    def from_covariances(cls, means, covariances, name="custom"):
        return cls(means, [sqrtm_psd(C) for C in covariances], name)

    @property
    def K(self):
        return self.means.shape[0]

    @property
    def p(self):
        return self.means.shape[1]

    @property
    def covariances(self):
        return np.einsum("kij,klj->kil", self.cov_factors, self.cov_factors)

    def relabel(self, perm):
        perm = list(perm)
        return MixtureModel(self.means[perm], self.cov_factors[perm], self.name)

    def to_dict(self):
        if self.name in BUILTIN_MODELS:
            return {"name": self.name, "p": self.p}
        return {"name": "custom", "means": self.means.tolist(), "covariances": self.covariances.tolist()}

    @classmethod
    def from_dict(cls, doc):
        name = doc.get("name")
        if name in BUILTIN_MODELS:
            return builtin_model(name, int(doc["p"]))
        if name == "custom":
            return cls.from_covariances(np.array(doc["means"]), np.array(doc["covariances"]))
        raise ArgumentError(f"unknown model name {name!r}")


def sqrtm_psd(C):
    """Symmetric square root of a symmetric positive semi-definite matrix."""
    C = np.asarray(C, dtype=float)
    vals, vecs = np.linalg.eigh((C + C.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def sample(model, layout, seed):
    """Draw a :class:`LabelledSplit` with rows ``mu_k + L_k g``, g standard normal."""
    if model.K != layout.K:
        raise ArgumentError(f"model has {model.K} classes, layout {layout.K}")
    rng = np.random.default_rng(seed)
    blocks = []
    for counts in (layout.n_l, layout.n_u):
        for k, m in enumerate(counts):
            G = rng.standard_normal((m, model.p))
            blocks.append(model.means[k] + G @ model.cov_factors[k].T)
    return LabelledSplit(np.vstack(blocks), layout)


@dataclass(frozen=True)
class PopulationStats:
    """Trace and mean statistics of a model under a given layout.

    ``mu_cov_mu[b, a1, a2]`` holds mu_circ[a1]^T C_b mu_circ[a2].
    """

    p: int
    tau: float
    t: np.ndarray
    T: np.ndarray
    mu_circ: np.ndarray
    mu_tilde: np.ndarray
    t_tilde: np.ndarray
    T_tilde: np.ndarray
    mu_cov_mu: np.ndarray

    @property
    def mu_circ_sqdist(self):
        """||mu_circ[a] - mu_circ[b]||^2 (equal to ||mu_a - mu_b||^2)."""
        diff = self.mu_circ[:, None, :] - self.mu_circ[None, :, :]
        return np.einsum("abi,abi->ab", diff, diff)


def population_stats(model, layout):
    if model.K != layout.K:
        raise ArgumentError(f"model has {model.K} classes, layout {layout.K}")
    p = model.p
    C = model.covariances
    w_pop = layout.n_k / layout.n
    w_lab = np.array(layout.n_l, dtype=float) / layout.n_labelled
    traces = np.trace(C, axis1=1, axis2=2)
    # tr(C_a C_b) for symmetric C is the Frobenius inner product
    TrCC = np.einsum("aij,bij->ab", C, C)

    tau = 2.0 * float(w_pop @ traces) / p
    t = (traces - w_pop @ traces) / np.sqrt(p)
    T = TrCC / p

    mu_circ = model.means - w_pop @ model.means
    mu_tilde = model.means - w_lab @ model.means
    t_tilde = (traces - w_lab @ traces) / np.sqrt(p)
    # tr(C~_a C~_b) expanded bilinearly around the labelled-weighted mean covariance
    M = np.eye(model.K) - w_lab[None, :]
    T_tilde = M @ TrCC @ M.T / p

    mu_cov_mu = np.einsum("ai,bij,cj->bac", mu_circ, C, mu_circ)
    return PopulationStats(p, tau, t, T, mu_circ, mu_tilde, t_tilde, T_tilde, mu_cov_mu)


def builtin_model(name, p):
    """Reference mixtures: ``two_means``, ``concentric`` and ``three_class``."""
    if p < 2:
        raise ArgumentError("builtin models need p >= 2")
    eye = np.eye(p)
    scale = 1.0 + 3.0 / np.sqrt(p)
    if name == "two_means":
        means = np.zeros((2, p))
        means[0, 0] = 4.0
        means[1, 1] = 4.0
        C2 = toeplitz(0.4 ** np.arange(p)) * scale
        return MixtureModel(means, np.stack([eye, sqrtm_psd(C2)]), name)
    if name == "concentric":
        return MixtureModel(np.zeros((2, p)), np.stack([eye, np.sqrt(scale) * eye]), name)
    if name == "three_class":
        # only the ratios mu_3 = 3 mu_2 = 6 mu_1 are prescribed; direction and scale are a choice
        means = np.zeros((3, p))
        means[:, 0] = (1.0, 2.0, 6.0)
        return MixtureModel(means, np.stack([eye, eye, eye]), name)
    raise ArgumentError(f"unknown builtin model {name!r}; choose from {BUILTIN_MODELS}")


@dataclass(frozen=True)
class GrowthRateReport:
    mean_norms: np.ndarray  # ||mu_circ_k||
    trace_ratios: np.ndarray  # tr C_k_circ / sqrt(p)
    tau: float
    c0: float
    threshold: float
    flags: dict

    @property
    def flagged(self):
        return any(self.flags.values())


def growth_rate_report(model, layout, threshold=5.0):
    """Compare the model's scale statistics with the O(1) regime; advisory only."""
    stats = population_stats(model, layout)
    norms = np.linalg.norm(stats.mu_circ, axis=1)
    c0 = layout.c0(model.p)
    flags = {}
    for k in range(model.K):
        flags[f"mean_norm_{k + 1}"] = bool(norms[k] > threshold)
        flags[f"trace_ratio_{k + 1}"] = bool(abs(stats.t[k]) > threshold)
    flags["tau"] = bool(not (1.0 / threshold <= stats.tau <= threshold))
    flags["c0"] = bool(not (1.0 / threshold <= c0 <= threshold))
    return GrowthRateReport(norms, stats.t.copy(), stats.tau, c0, threshold, flags)
