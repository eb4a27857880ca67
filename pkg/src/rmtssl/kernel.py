"""Radial kernels f(||x_i - x_j||^2 / p) with closed-form derivatives."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ArgumentError, DegeneracyError, NumericError


@dataclass(frozen=True)
class KernelSpec:
    """A kernel ``f`` together with its first two derivatives."""

    f: Callable
    df: Callable
    d2f: Callable
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)
    # closed-form f''f - f'^2 when available; avoids rounding noise around 0
    curvature: Callable | None = field(default=None, compare=False)

    def values(self, t):
        """(f(t), f'(t), f''(t)) as floats."""
        return float(self.f(t)), float(self.df(t)), float(self.d2f(t))

    def __str__(self):
        args = ",".join(f"{v:g}" for v in self.params.values())
        return f"{self.name}{{{args}}}"


@dataclass(frozen=True)
class _ScaledExp:
    """t -> c exp(-a t); module level so kernels can cross process boundaries."""

    a: float
    c: float = 1.0

    def __call__(self, t):
        return self.c * np.exp(-self.a * np.asarray(t, dtype=float))


def _zero(t):
    return np.zeros_like(np.asarray(t, dtype=float))


def gaussian_kernel(sigma2=1.0):
    """Heat kernel f(t) = exp(-t / (2 sigma^2))."""
    if not sigma2 > 0:
        raise ArgumentError(f"sigma2 must be positive, got {sigma2}")
    a = 1.0 / (2.0 * sigma2)
    return KernelSpec(
        f=_ScaledExp(a),
        df=_ScaledExp(a, -a),
        d2f=_ScaledExp(a, a * a),
        name="gaussian",
        params={"sigma2": float(sigma2)},
        curvature=_zero,
    )


@dataclass(frozen=True)
class _QuadPart:
    """Derivative of order ``order`` of f0 + f1 (t - tau) + f2 (t - tau)^2 / 2."""

    tau: float
    f0: float
    f1: float
    f2: float
    order: int

    def __call__(self, t):
        h = np.asarray(t, dtype=float) - self.tau
        if self.order == 0:
            return self.f0 + self.f1 * h + 0.5 * self.f2 * h * h
        if self.order == 1:
            return self.f1 + self.f2 * h
        return np.full_like(h, self.f2)


def quadratic_kernel(tau, f0, f1, f2):
    """Degree-2 polynomial with f(tau)=f0, f'(tau)=f1, f''(tau)=f2."""
    tau, f0, f1, f2 = (float(v) for v in (tau, f0, f1, f2))
    if not all(np.isfinite((tau, f0, f1, f2))):
        raise ArgumentError("quadratic kernel parameters must be finite")
    parts = [_QuadPart(tau, f0, f1, f2, k) for k in range(3)]
    return KernelSpec(*parts, name="quad", params={"f0": f0, "f1": f1, "f2": f2, "tau": tau})


@dataclass(frozen=True)
class KernelFactory:
    """``tau -> KernelSpec`` for a parsed kernel description."""

    name: str
    args: tuple

    def __call__(self, tau):
        if self.name == "gaussian":
            return gaussian_kernel(*self.args)
        return quadratic_kernel(tau, *self.args)

    def __str__(self):
        return f"{self.name}{{{','.join(f'{v:g}' for v in self.args)}}}"


def parse_kernel(text):
    """Parse ``gaussian{sigma2}`` or ``quad{f0,f1,f2}`` into a factory ``tau -> KernelSpec``.

    The quadratic kernel is anchored at the dataset's estimated tau, which is
    only known at run time, hence the factory.
    """
    m = re.fullmatch(r"\s*(gaussian|quad)\s*\{([^}]*)\}\s*", text)
    if not m:
        raise ArgumentError(f"cannot parse kernel {text!r}; expected gaussian{{s2}} or quad{{f0,f1,f2}}")
    try:
        args = [float(v) for v in m.group(2).split(",") if v.strip()]
    except ValueError as exc:
        raise ArgumentError(f"non-numeric kernel parameter in {text!r}") from exc
    if m.group(1) == "gaussian":
        if len(args) != 1:
            raise ArgumentError("gaussian kernel takes one parameter")
        gaussian_kernel(args[0])  # validates sigma2
        return KernelFactory("gaussian", tuple(args))
    if len(args) != 3:
        raise ArgumentError("quad kernel takes three parameters f0,f1,f2")
    return KernelFactory("quad", tuple(args))


def resolve_kernel(kernel, tau_hat):
    """Accept either a :class:`KernelSpec` or a factory of one."""
    return kernel if isinstance(kernel, KernelSpec) else kernel(tau_hat)


def check_finite_differences(kernel, t, h=1e-4):
    """Relative mismatch of f' and f'' against central differences at ``t``."""
    f, df, d2f = kernel.f, kernel.df, kernel.d2f
    fd1 = (f(t + h) - f(t - h)) / (2 * h)
    fd2 = (f(t + h) - 2 * f(t) + f(t - h)) / (h * h)
    rel = lambda a, b: abs(a - b) / max(abs(b), 1e-12)  # noqa: E731
    return rel(float(fd1), float(df(t))), rel(float(fd2), float(d2f(t)))


def pairwise_sq_distances(X):
    """Squared Euclidean distances, exactly symmetric with zero diagonal."""
    X = np.asarray(X, dtype=float)
    Xc = X - X.mean(axis=0)
    sq = np.einsum("ij,ij->i", Xc, Xc)
    D2 = sq[:, None] + sq[None, :] - 2.0 * (Xc @ Xc.T)
    np.maximum(D2, 0.0, out=D2)
    D2 = np.triu(D2, 1)
    D2 += D2.T
    return D2


def weight_matrix(split, kernel):
    """W_ij = f(||x_i - x_j||^2 / p), diagonal included as f(0).

    The distance matrix is mirrored from its upper triangle, so applying ``f``
    elementwise yields an exactly symmetric W.
    """
    D2 = pairwise_sq_distances(split.X)
    D2 /= split.p
    W = np.asarray(kernel.f(D2), dtype=float)
    if W.shape != D2.shape:
        W = np.broadcast_to(W, D2.shape).copy()
    if not np.all(np.isfinite(W)):
        i, j = np.argwhere(~np.isfinite(W))[0]
        raise NumericError(f"kernel returned {W[i, j]} for pair ({i}, {j})")
    return W


def degree_vector(W):
    """Row sums of W; every degree must be strictly positive."""
    W = np.asarray(W)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ArgumentError("W must be square")
    d = W.sum(axis=1)
    bad = np.flatnonzero(~(d > 0))
    if bad.size:
        raise DegeneracyError(f"node {bad[0]} has non-positive degree {d[bad[0]]}")
    return d


@dataclass(frozen=True)
class KernelConditions:
    f: float
    df: float
    d2f: float
    f_prime_neg: bool
    f_second_pos: bool
    product: bool

    @property
    def all_pass(self):
        return self.f_prime_neg and self.f_second_pos and self.product


def check_conditions(kernel, tau):
    """Evaluate f'(tau) < 0, f''(tau) > 0 and f''(tau) f(tau) > f'(tau)^2 (strict, no tolerance)."""
    if tau < 0:
        raise ArgumentError("tau must be non-negative")
    f, df, d2f = kernel.values(tau)
    curv = float(kernel.curvature(tau)) if kernel.curvature is not None else d2f * f - df * df
    return KernelConditions(f, df, d2f, df < 0, d2f > 0, curv > 0)
