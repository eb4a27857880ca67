"""Datasets in labelled-first block ordering, IDX ingestion and empirical statistics.

Rows of a :class:`LabelledSplit` are ordered as

    labelled class 1 | labelled class 2 | ... | unlabelled class 1 | unlabelled class 2 | ...

so every block boundary follows from the :class:`ClassLayout` alone. Classes are
indexed from 0 internally.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ArgumentError,
    CapacityError,
    ConsistencyError,
    FormatError,
    UnsupportedError,
)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class ClassLayout:
    """Per-class labelled and unlabelled counts."""

    n_l: tuple[int, ...]
    n_u: tuple[int, ...]

    def __post_init__(self):
        n_l = tuple(int(v) for v in self.n_l)
        n_u = tuple(int(v) for v in self.n_u)
        if len(n_l) != len(n_u) or not n_l:
            raise ArgumentError("n_l and n_u must be non-empty and of equal length")
        if min(n_l) < 1 or min(n_u) < 1:
            raise ArgumentError(f"every class needs >= 1 labelled and unlabelled sample, got {n_l}, {n_u}")
        object.__setattr__(self, "n_l", n_l)
        object.__setattr__(self, "n_u", n_u)

    @classmethod
    def balanced(cls, n, K=2, labelled_fraction=1 / 16):
        """Equal class sizes with ``round(labelled_fraction * n)`` labelled points spread evenly."""
        n_lab = int(round(labelled_fraction * n))
        if n_lab % K or (n - n_lab) % K:
            raise ArgumentError(f"n={n}, n_l={n_lab} not divisible into {K} equal classes")
        return cls((n_lab // K,) * K, ((n - n_lab) // K,) * K)

    @classmethod
    def imbalanced(cls, n, labelled_fraction, class1_share):
        """Two classes, balanced unlabelled data, class 1 receiving ``class1_share`` of the labels."""
        n_lab = int(round(labelled_fraction * n))
        n_l1 = int(round(class1_share * n_lab))
        n_unl = n - n_lab
        if n_unl % 2:
            raise ArgumentError("unlabelled count must be even for a balanced split")
        return cls((n_l1, n_lab - n_l1), (n_unl // 2, n_unl // 2))

    @property
    def K(self):
        return len(self.n_l)

    @property
    def n_labelled(self):
        return sum(self.n_l)

    @property
    def n_unlabelled(self):
        return sum(self.n_u)

    @property
    def n(self):
        return self.n_labelled + self.n_unlabelled

    @property
    def n_k(self):
        return np.array(self.n_l) + np.array(self.n_u)

    # ratios to n
    @property
    def c_l(self):
        return self.n_labelled / self.n

    @property
    def c_u(self):
        return self.n_unlabelled / self.n

    @property
    def c_lk(self):
        return np.array(self.n_l, dtype=float) / self.n

    @property
    def c_uk(self):
        return np.array(self.n_u, dtype=float) / self.n

    def c0(self, p):
        return p / self.n

    def truth(self):
        """True class of every row, in block order."""
        return np.concatenate([np.repeat(np.arange(self.K), self.n_l), np.repeat(np.arange(self.K), self.n_u)])

    def truth_unlabelled(self):
        return np.repeat(np.arange(self.K), self.n_u)

    def labelled_block(self, k):
        start = sum(self.n_l[:k])
        return slice(start, start + self.n_l[k])

    def unlabelled_block(self, k):
        start = self.n_labelled + sum(self.n_u[:k])
        return slice(start, start + self.n_u[k])

    def indicator(self, k, part="all"):
        """Canonical vector of class ``k`` over all ``n`` rows (``part`` in all/labelled/unlabelled)."""
        j = np.zeros(self.n)
        if part in ("all", "labelled"):
            j[self.labelled_block(k)] = 1.0
        if part in ("all", "unlabelled"):
            j[self.unlabelled_block(k)] = 1.0
        return j

    def swapped(self, perm=None):
        """Layout with classes reordered by ``perm`` (default: reversed)."""
        perm = list(range(self.K))[::-1] if perm is None else list(perm)
        return ClassLayout(tuple(self.n_l[k] for k in perm), tuple(self.n_u[k] for k in perm))

    def to_dict(self):
        return {"n_labelled": list(self.n_l), "n_unlabelled": list(self.n_u)}


@dataclass(frozen=True)
class LabelledSplit:
    """Data matrix ``X`` (n x p) in block order, plus its layout.

    ``source_indices`` optionally records where each row came from (e.g. the
    MNIST row index) for manifests.
    """

    X: np.ndarray
    layout: ClassLayout
    source_indices: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim != 2:
            raise ArgumentError("X must be a 2-d array")
        if X.shape[0] != self.layout.n:
            raise ArgumentError(f"X has {X.shape[0]} rows, layout expects {self.layout.n}")
        if not np.all(np.isfinite(X)):
            raise ArgumentError("X contains non-finite entries")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def truth(self):
        return self.layout.truth()

    def labelled_rows(self, k):
        return self.X[self.layout.labelled_block(k)]

    def unlabelled_rows(self, k):
        return self.X[self.layout.unlabelled_block(k)]

    def take_rows(self, rows, layout):
        """New split made of ``X[rows]`` with the given layout."""
        src = None if self.source_indices is None else self.source_indices[rows]
        return LabelledSplit(self.X[rows], layout, src)


# ---------------------------------------------------------------------------
# IDX ingestion


def _open(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, expected_magic=None):
    """Read an IDX file of unsigned bytes into an array of shape ``dims``."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise FormatError(f"{path}: bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if magic >> 8 != 0x08:
        raise FormatError(f"{path}: unsupported IDX data type 0x{magic >> 8:02x} (only unsigned byte)")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims)) if dims else 0
    if len(raw) - header != size:
        raise FormatError(f"{path}: payload has {len(raw) - header} bytes, header announces {size}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path, array):
    """Write an unsigned-byte array as IDX (used for fixtures and round trips)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = (0x08 << 8) | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def ingest_idx(images_path, labels_path, classes, layout, seed):
    """Build a :class:`LabelledSplit` from IDX image/label files.

    For each requested class, ``n_l[k] + n_u[k]`` images are drawn uniformly
    without replacement; the first ``n_l[k]`` drawn become labelled. Pixels are
    scaled to [0, 1].
    """
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: labels must be one-dimensional")
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if len(classes) != layout.K:
        raise ArgumentError(f"{len(classes)} classes requested for a {layout.K}-class layout")

    rng = np.random.default_rng(seed)
    lab_idx, unl_idx = [], []
    for k, value in enumerate(classes):
        pool = np.flatnonzero(labels == value)
        need = layout.n_l[k] + layout.n_u[k]
        if pool.size < need:
            raise CapacityError(f"class {value}: {pool.size} samples available, {need} requested")
        chosen = rng.choice(pool, size=need, replace=False)
        lab_idx.append(chosen[: layout.n_l[k]])
        unl_idx.append(chosen[layout.n_l[k]:])
    rows = np.concatenate(lab_idx + unl_idx)
    X = images[rows].reshape(rows.size, -1).astype(float) / 255.0
    return LabelledSplit(X, layout, rows)


def write_manifest(path, seed, split, extra=None):
    """Record the seed, layout and selected source rows as JSON."""
    doc = {
        "seed": int(seed),
        "layout": split.layout.to_dict(),
        "p": split.p,
        "selected_indices": None if split.source_indices is None else [int(i) for i in split.source_indices],
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# empirical statistics


def _sum_sq_dev(Y):
    """sum_i ||y_i - ybar||^2, so that sum_{i,j} ||y_i - y_j||^2 = 2 m * this."""
    Yc = Y - Y.mean(axis=0)
    return float(np.einsum("ij,ij->", Yc, Yc))


def mean_pairwise_sq_distance(Y):
    """Average of ||y_i - y_j||^2 over ordered pairs i != j."""
    m = Y.shape[0]
    if m < 2:
        raise ArgumentError("need at least two rows")
    return 2.0 * _sum_sq_dev(Y) / (m - 1)


def estimate_tau(split):
    """Average normalised squared distance (1/p)||x_i - x_j||^2 over distinct pairs."""
    if split.n < 2:
        raise ArgumentError("estimate_tau needs n >= 2")
    return mean_pairwise_sq_distance(split.X) / split.p


def estimate_delta_t(split):
    """Labelled-data estimate of t_1 - t_2 from within-class mean squared distances."""
    lay = split.layout
    if lay.K != 2:
        raise UnsupportedError("estimate_delta_t is defined for two classes only")
    if min(lay.n_l) < 2:
        raise ArgumentError("each labelled class needs at least two samples")
    d1 = mean_pairwise_sq_distance(split.labelled_rows(0))
    d2 = mean_pairwise_sq_distance(split.labelled_rows(1))
    return (d1 - d2) / (2.0 * np.sqrt(split.p))


@dataclass(frozen=True)
class EmpiricalStats:
    means: np.ndarray  # K x p
    t: np.ndarray  # K
    T: np.ndarray  # K x K


def class_empirical_stats(split, centering="labelled"):
    """Per-class labelled means and trace statistics.

    ``t[a] = tr(C_a - sum_k w_k C_k) / sqrt(p)`` with ``w_k = n_l[k]/n_l`` for
    ``centering="labelled"`` or ``w_k = n_k/n`` for ``"population"``.
    ``T[a, b] = tr(C_a C_b) / p``. Covariances are unbiased per labelled class.
    """
    lay = split.layout
    if min(lay.n_l) < 2:
        raise ArgumentError("each labelled class needs at least two samples")
    if centering == "labelled":
        w = np.array(lay.n_l, dtype=float) / lay.n_labelled
    elif centering == "population":
        w = lay.n_k / lay.n
    else:
        raise ArgumentError(f"unknown centering {centering!r}")
    p = split.p
    blocks = [split.labelled_rows(k) for k in range(lay.K)]
    means = np.array([B.mean(axis=0) for B in blocks])
    centred = [(B - B.mean(axis=0)) / np.sqrt(B.shape[0] - 1) for B in blocks]
    traces = np.array([np.einsum("ij,ij->", Y, Y) for Y in centred])
    K = lay.K
    T = np.empty((K, K))
    for a in range(K):
        for b in range(a, K):
            # tr(Y_a^T Y_a Y_b^T Y_b) = ||Y_a Y_b^T||_F^2
            T[a, b] = T[b, a] = np.sum((centred[a] @ centred[b].T) ** 2) / p
    t = (traces - w @ traces) / np.sqrt(p)
    return EmpiricalStats(means, t, T)
