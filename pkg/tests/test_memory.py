import numpy as np
import pytest

from gopforge.errors import ValidationError
from gopforge.memory import LdaFitSpec, PcaFitSpec, energy_dim, fit_lda, fit_pca, scatter_matrices


def test_energy_dim_minimal():
    assert energy_dim([5, 3, 1, 1], 0.5) == 1
    assert energy_dim([5, 3, 1, 1], 0.8) == 2
    assert energy_dim([5, 3, 1, 1], 0.81) == 3
    assert energy_dim([5, 3, 1, 1], 1.0) == 4


def test_pca_matches_eigh_oracle(rng):
    X = rng.normal(size=(200, 6)) @ rng.normal(size=(6, 6))
    proj = fit_pca(X, PcaFitSpec(0.98, 0.01))
    cov = np.cov(X, rowvar=False) + 0.01 * np.eye(6)
    vals, vecs = np.linalg.eigh(cov)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    frac = np.cumsum(vals) / vals.sum()
    k = int(np.argmax(frac >= 0.98)) + 1
    assert proj.out_dim == k
    assert proj.meta["retained_energy"] >= 0.98
    if k > 1:
        assert frac[k - 2] < 0.98  # minimal
    # same subspace, column by column up to sign
    assert np.allclose(np.abs(proj.basis.T @ vecs[:, :k]), np.eye(k), atol=1e-8)
    assert np.allclose(proj.mean, X.mean(0))


def test_pca_isotropic_three_dims_keeps_all():
    X = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    proj = fit_pca(X)
    assert proj.out_dim == 3


def test_pca_max_dim_cap_and_errors(rng):
    X = rng.normal(size=(50, 5))
    assert fit_pca(X, PcaFitSpec(max_dim=0)).out_dim == 0
    assert fit_pca(X, PcaFitSpec(max_dim=2)).out_dim == 2
    with pytest.raises(ValidationError):
        fit_pca(X[:1])
    with pytest.raises(ValidationError):
        PcaFitSpec(energy_threshold=0.0)


def test_lda_two_class_direction_matches_fisher_oracle(rng):
    X0 = rng.normal(size=(80, 4)) @ np.diag([1, 2, 0.5, 1]) + [1, 0, 0, 0]
    X1 = rng.normal(size=(70, 4)) @ np.diag([1, 2, 0.5, 1]) + [0, 1, 1, 0]
    X = np.vstack([X0, X1])
    y = np.r_[np.zeros(80, int), np.ones(70, int)]
    proj = fit_lda(X, y, LdaFitSpec(2, ridge=0.01))
    assert proj.out_dim == 1
    # within-class scatter as normalised in the implementation: sum of class scatters / n
    sw = ((X0 - X0.mean(0)).T @ (X0 - X0.mean(0)) + (X1 - X1.mean(0)).T @ (X1 - X1.mean(0))) / len(X)
    fisher = np.linalg.solve(sw + 0.01 * np.eye(4), X1.mean(0) - X0.mean(0))
    d = proj.basis[:, 0]
    cos = abs(d @ fisher) / (np.linalg.norm(d) * np.linalg.norm(fisher))
    assert cos == pytest.approx(1.0, abs=1e-10)


def test_lda_output_dim_is_c_minus_one_and_whitened(rng):
    C = 4
    y = np.repeat(np.arange(C), 30)
    X = rng.normal(size=(120, 6)) + np.eye(C, 6)[y] * 3
    proj = fit_lda(X, y, LdaFitSpec(C))
    assert proj.out_dim == C - 1
    _, sw, _ = scatter_matrices(X, y, C)
    # basis whitens the ridged within-class scatter
    assert np.allclose(proj.basis.T @ (sw + 0.01 * np.eye(6)) @ proj.basis, np.eye(C - 1), atol=1e-9)
    assert all(a >= b for a, b in zip(proj.meta["eigenvalues"], proj.meta["eigenvalues"][1:]))


def test_lda_errors(rng):
    X = rng.normal(size=(10, 2))
    with pytest.raises(ValidationError, match="classes without samples"):
        fit_lda(X, np.zeros(10, int), LdaFitSpec(2))
    with pytest.raises(ValidationError, match="exceeds"):
        fit_lda(X, np.arange(10) % 4, LdaFitSpec(4))
    with pytest.raises(ValidationError):
        LdaFitSpec(1)


def test_scatter_decomposition(rng):
    # total scatter = within + between (all normalised by n)
    y = np.arange(60) % 3
    X = rng.normal(size=(60, 3)) + y[:, None]
    mean, sw, sb = scatter_matrices(X, y, 3)
    st = (X - mean).T @ (X - mean) / 60
    assert np.allclose(st, sw + sb, atol=1e-12)


def test_conditional_ridge_only_applies_to_singular_scatter(rng):
    full = rng.normal(size=(50, 4))
    a = fit_pca(full, PcaFitSpec(0.98, 0.01, ridge_when="singular"))
    assert a.meta["ridge"] == 0.0
    xc = full - full.mean(axis=0)
    oracle = np.linalg.eigvalsh(xc.T @ xc / 49)[::-1]
    assert np.allclose(a.meta["eigenvalues"], oracle[: a.out_dim], rtol=1e-10)
    # rank 2 in 4 dimensions: singular, so the ridge is added
    flat = full[:, :2] @ rng.normal(size=(2, 4))
    b = fit_pca(flat, PcaFitSpec(0.98, 0.01, ridge_when="singular"))
    assert b.meta["ridge"] == 0.01
    assert fit_pca(full).meta["ridge"] == 0.01


def test_conditional_ridge_lda(rng):
    labels = np.arange(6) % 3
    wide = rng.normal(size=(6, 8)) + labels[:, None]  # within-class scatter rank <= 3 < 8
    assert fit_lda(wide, labels, LdaFitSpec(3, ridge_when="singular")).meta["ridge"] == 0.01
    tall = rng.normal(size=(90, 3)) + (np.arange(90) % 3)[:, None]
    got = fit_lda(tall, np.arange(90) % 3, LdaFitSpec(3, ridge_when="singular"))
    assert got.meta["ridge"] == 0.0 and got.out_dim == 2
    with pytest.raises(ValidationError):
        LdaFitSpec(3, ridge_when="sometimes")
