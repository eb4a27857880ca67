import math

import numpy as np
import pytest

from rmtssl.dataset import ClassLayout
from rmtssl.errors import ArgumentError
from rmtssl.gmm import builtin_model, population_stats, sample
from rmtssl.kernel import gaussian_kernel, parse_kernel
from rmtssl.rmt_expansion import (
    W_ONE_TERMS,
    build_terms,
    degree_expansion_check,
    expansion_terms,
    operator_norm,
    residual_decay,
)

GAUSS = gaussian_kernel(1.0)


def _terms(name, n=None, seed=0, kernel=GAUSS):
    if n is None:
        n = 384 if name == "three_class" else 256
    p = int(round(784 / 1024 * n))
    model = builtin_model(name, p)
    lay = ClassLayout.balanced(n, model.K, 1 / 16)
    split = sample(model, lay, seed)
    return split, model, expansion_terms(split, model, kernel)


@pytest.mark.parametrize("name", ["two_means", "concentric", "three_class"])
def test_reconstruction_and_symmetry(name):
    _, _, ex = _terms(name)
    assert set(ex.W_one_terms) == set(W_ONE_TERMS)
    total = ex.W_n + ex.W_sqrt + ex.W_one + ex.residual
    assert np.max(np.abs(total - ex.W)) <= 1e-12
    for M in (ex.W_n, ex.W_sqrt, ex.W_one, ex.residual):
        assert np.allclose(M, M.T, atol=1e-12)
    # symmetric pairs of summands are transposes of each other
    for a, b in [("d1_omega_mu_left", "d1_mu_omega_right"), ("d2_t_psi", "d2_psi_t"), ("d2_psi_sq_left", "d2_psi_sq_right")]:
        assert np.allclose(ex.W_one_terms[a], ex.W_one_terms[b].T)
    assert operator_norm(ex.W_n) == pytest.approx(ex.n * ex.f_values[0], rel=1e-9)


def test_residual_entries_small_on_average():
    _, _, ex = _terms("two_means", n=512)
    off = ex.residual - np.diag(np.diag(ex.residual))
    rms = math.sqrt(np.sum(off**2) / (ex.n * (ex.n - 1)))
    assert rms < 0.01 * ex.f_values[0]


def test_degenerate_ingredients():
    """Omega = 0 and psi = 0: only mean and trace terms survive."""
    model = builtin_model("two_means", 16)
    lay = ClassLayout((1, 1), (1, 1))
    stats = population_stats(model, lay)
    labels = lay.truth()
    n = labels.size
    fv = (1.0, -0.5, 0.25, 2.0)
    ex = build_terms(np.zeros((n, n)), np.zeros((n, 16)), np.zeros(n), labels, stats, fv)
    for k in ("d1_omega_mu_left", "d1_gram", "d2_psi_sq_left", "d2_psi_outer", "d2_t_psi"):
        assert not ex.W_one_terms[k].any()
    assert np.allclose(np.diag(ex.W_one_terms["diagonal"]), 2.0 - 1.0 + stats.tau * -0.5)
    with pytest.raises(ArgumentError):
        build_terms(np.zeros((n, n)), np.zeros((n + 1, 16)), np.zeros(n), labels, stats, fv)


def test_model_mismatch():
    split, _, _ = _terms("two_means", n=64)
    with pytest.raises(ArgumentError):
        expansion_terms(split, builtin_model("two_means", split.p + 1), GAUSS)


def test_operator_norm_against_svd(rng):
    for shape in [(5, 5), (40, 30), (1, 7)]:
        A = rng.standard_normal(shape)
        assert operator_norm(A, tol=1e-12) == pytest.approx(np.linalg.norm(A, 2), rel=1e-6)
    assert operator_norm(np.zeros((3, 3))) == 0.0


@pytest.mark.parametrize("name", ["two_means", "concentric", "three_class"])
def test_norm_hierarchy(name):
    norms = []
    for seed in range(5):
        _, _, ex = _terms(name, seed=seed)
        norms.append([operator_norm(M) for M in (ex.W_n, ex.W_sqrt, ex.W_one, ex.residual)])
    med = np.median(norms, axis=0)
    assert med[0] > med[1] > med[2] > med[3]


def test_degree_check_identities():
    split, model, ex = _terms("two_means")
    zero = degree_expansion_check(split, model, GAUSS, 0.0, terms=ex)
    assert zero.max_abs_deviation == 0.0
    one = degree_expansion_check(split, model, GAUSS, 1.0, terms=ex)
    expected = np.max(np.abs(ex.residual.sum(axis=1))) / ex.n
    assert one.max_abs_deviation == pytest.approx(expected, rel=1e-8)
    assert one.luu_norm_scaled == pytest.approx(one.luu_norm / math.sqrt(ex.n))


def test_degree_check_shrinks_with_n():
    devs = []
    for n in (256, 1024):
        split, model, ex = _terms("two_means", n=n)
        devs.append(degree_expansion_check(split, model, GAUSS, -1.0, terms=ex).max_abs_deviation)
    assert devs[1] < devs[0]


def test_quadratic_kernel_reconstructs():
    split, model, ex = _terms("two_means", n=128, kernel=parse_kernel("quad{1,-0.5,0.25}"))
    assert np.max(np.abs(ex.W_n + ex.W_sqrt + ex.W_one + ex.residual - ex.W)) <= 1e-12


def test_decay_table(tmp_path):
    tab = residual_decay(lambda p: builtin_model("two_means", p), GAUSS, [128, 256], seeds=(0,))
    assert [r.n for r in tab.rows] == [128, 256] and math.isfinite(tab.slope)
    out = tmp_path / "d.csv"
    tab.write_csv(out, ["command=test"])
    lines = out.read_text().splitlines()
    assert lines[0] == "# command=test"
    assert lines[1] == "n,norm_Wn,norm_Wsqrt,norm_Wone,norm_residual"
    assert len(lines) == 5 and lines[-1].startswith("# slope_log_residual_vs_log_n=")
    with pytest.raises(ArgumentError):
        residual_decay(lambda p: builtin_model("two_means", p), GAUSS, [256, 128])
