import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, special, stats

from bmef.distributions import (
    FisherBinghamParams,
    RejectionTelemetry,
    gig_mode,
    half_laplace_logpdf,
    half_laplace_pdf,
    orthonormal_complement,
    sample_fisher_bingham,
    sample_inverse_gamma,
    sample_uniform_sphere,
    sample_uniform_stiefel,
)
from bmef.errors import DomainError, SamplerDegenerateError, ShapeError


def fb_draws(g, S, n, seed=0, telemetry=None):
    rng = np.random.default_rng(seed)
    params = FisherBinghamParams(g, S)
    return np.array([sample_fisher_bingham(params, rng, telemetry) for _ in range(n)])


def sphere_moments(g, S, n_theta=200, n_phi=400):
    """E[x] and E[x x'] under exp(g'x - x'Sx/2) on S^2 by product quadrature."""
    z, wz = np.polynomial.legendre.leggauss(n_theta)
    phi = np.arange(n_phi) * 2 * np.pi / n_phi
    zz, pp = np.meshgrid(z, phi, indexing="ij")
    r = np.sqrt(1 - zz**2)
    x = np.stack([zz, r * np.cos(pp), r * np.sin(pp)], axis=-1)
    logf = x @ g - 0.5 * np.einsum("...i,ij,...j->...", x, S, x)
    w = np.exp(logf - logf.max()) * wz[:, None]
    w /= w.sum()
    m1 = np.einsum("ab,abi->i", w, x)
    m2 = np.einsum("ab,abi,abj->ij", w, x, x)
    return m1, m2


def test_uniform_when_parameters_vanish():
    x = fb_draws(np.zeros(4), np.zeros((4, 4)), 10_000)
    np.testing.assert_allclose(np.linalg.norm(x, axis=1), 1.0, atol=1e-12)
    assert np.linalg.norm(x.mean(axis=0)) < 0.05


def test_concentrates_on_linear_direction():
    x = fb_draws(np.array([100.0, 0, 0, 0]), np.zeros((4, 4)), 2000)
    m = x.mean(axis=0)
    angle = np.arccos(m[0] / np.linalg.norm(m))
    assert angle < 0.1


def test_first_moment_matches_quadrature():
    g = np.array([1.0, 0, 0])
    S = np.diag([0.0, 2.0, 4.0])
    n = 20_000
    x = fb_draws(g, S, n, seed=11)
    m1, m2 = sphere_moments(g, S)
    se = np.sqrt(np.diag(m2) - m1**2) / np.sqrt(n)
    assert np.all(np.abs(x.mean(axis=0) - m1) < 3 * se)
    # second moments too (diagonal), with empirical SE
    emp2 = x**2
    se2 = emp2.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(emp2.mean(axis=0) - np.diag(m2)) < 3 * se2 + 1e-12)


def test_general_direction_matches_quadrature():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((3, 3))
    S = A @ A.T
    g = np.array([0.5, -1.5, 2.0])
    n = 20_000
    x = fb_draws(g, S, n, seed=12)
    m1, m2 = sphere_moments(g, S)
    se = np.sqrt(np.diag(m2) - m1**2) / np.sqrt(n)
    assert np.all(np.abs(x.mean(axis=0) - m1) < 3 * se)


def test_tilt_invariance_ks():
    g = np.array([1.0, 0.5, -0.3])
    S = np.diag([0.0, 2.0, 4.0])
    a = fb_draws(g, S, 10_000, seed=1)
    b = fb_draws(g, S + 5 * np.eye(3), 10_000, seed=2)
    for k in range(3):
        assert stats.ks_2samp(a[:, k], b[:, k]).statistic < 0.03


def test_high_concentration_anisotropic_acceptance():
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    S = Q @ np.diag([1e3, 5e3, 1e4, 3e4, 6e4]) @ Q.T
    g = 1e3 * rng.standard_normal(5)
    tel = RejectionTelemetry()
    x = fb_draws(g, S, 200, telemetry=tel)
    assert tel.calls == 200 and tel.accepted == 200
    assert tel.acceptance_rate > 0.01
    np.testing.assert_allclose(np.linalg.norm(x, axis=1), 1.0, atol=1e-12)


def test_one_dimensional_sphere():
    x = fb_draws(np.array([0.7]), np.zeros((1, 1)), 20_000, seed=3)
    p = 1 / (1 + np.exp(-1.4))
    assert set(np.unique(x)) <= {-1.0, 1.0}
    assert abs((x == 1).mean() - p) < 3 * np.sqrt(p * (1 - p) / 20_000)


def test_attempt_budget_raises_with_parameters():
    params = FisherBinghamParams(np.array([50.0, 0, 0]), np.diag([0.0, 200.0, 900.0]))
    raised = None
    for seed in range(200):
        try:
            sample_fisher_bingham(params, np.random.default_rng(seed), max_attempts=1, context={"r": 0})
        except SamplerDegenerateError as exc:
            raised = exc
            break
    assert raised is not None
    assert raised.params is params
    assert raised.attempts == 1
    assert raised.context == {"r": 0}


def test_params_validation():
    with pytest.raises(DomainError):
        FisherBinghamParams(np.zeros(2), np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ShapeError):
        FisherBinghamParams(np.zeros(3), np.zeros((2, 2)))


def test_seed_reproducibility():
    a = fb_draws(np.ones(3), np.eye(3), 50, seed=9)
    b = fb_draws(np.ones(3), np.eye(3), 50, seed=9)
    np.testing.assert_array_equal(a, b)


def test_gig_mode_examples():
    assert gig_mode(2, 0, 2) == 1.0
    assert gig_mode(2, 4, 1) == pytest.approx(np.sqrt(2), abs=1e-12)


def test_gig_mode_matches_formula_exactly():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a = rng.uniform(1e-3, 100)
        b = rng.uniform(0, 100)
        c = rng.uniform(-20, 20)
        expected = (c - 1 + np.sqrt((c - 1) ** 2 + a * b)) / a
        assert gig_mode(a, b, c) == max(expected, 1e-12)


def test_gig_mode_is_a_mode():
    a, b, c = 1.0, 3.0, -0.5
    x = gig_mode(a, b, c)

    def logdens(v):
        return (c - 1) * np.log(v) - 0.5 * (a * v + b / v)

    assert logdens(x) >= logdens(x * (1 + 1e-3))
    assert logdens(x) >= logdens(x * (1 - 1e-3))


def test_gig_mode_floor_and_domain():
    assert gig_mode(2.0, 0.0, -3.0) == 1e-12
    with pytest.raises(DomainError):
        gig_mode(0.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        gig_mode(1.0, -1.0, 1.0)


def test_inverse_gamma_mean():
    rng = np.random.default_rng(0)
    x = sample_inverse_gamma(3.0, 0.5, rng, size=100_000)
    se = x.std() / np.sqrt(len(x))
    assert abs(x.mean() - 0.25) < 3 * se


def test_inverse_gamma_variance():
    rng = np.random.default_rng(1)
    x = sample_inverse_gamma(7.0, 2.0, rng, size=100_000)
    dev2 = (x - x.mean()) ** 2
    se = dev2.std() / np.sqrt(len(x))
    assert abs(x.var() - 4 / 180) < 3 * se


def test_inverse_gamma_quantiles_against_numeric_cdf():
    shape, scale = 3.0, 0.5
    x = sample_inverse_gamma(shape, scale, np.random.default_rng(2), size=200_000)
    for p in (0.1, 0.5, 0.9):
        q = optimize.brentq(lambda v: special.gammaincc(shape, scale / v) - p, 1e-6, 100)
        assert abs(np.quantile(x, p) / q - 1) < 0.01


def test_inverse_gamma_domain():
    with pytest.raises(DomainError):
        sample_inverse_gamma(0.0, 1.0, np.random.default_rng(0))
    with pytest.raises(DomainError):
        sample_inverse_gamma(1.0, -1.0, np.random.default_rng(0))


def test_half_laplace_integrates_to_one():
    for h in (0.01, 1.0):
        total, _ = integrate.quad(lambda t: half_laplace_pdf(t, h), 0, np.inf, epsabs=1e-12)
        assert abs(total - 1) < 1e-8
    assert half_laplace_logpdf(0.3, 0.5) == pytest.approx(np.log(np.exp(-0.6) / 0.5))


def test_stiefel_shapes_and_orthogonality():
    rng = np.random.default_rng(0)
    M = sample_uniform_stiefel(6, 2, rng)
    assert M.shape == (6, 2)
    np.testing.assert_allclose(M.T @ M, np.eye(2), atol=1e-10)
    Q = sample_uniform_stiefel(5, 5, rng)
    assert abs(abs(np.linalg.det(Q)) - 1) < 1e-8
    with pytest.raises(ShapeError):
        sample_uniform_stiefel(3, 4, rng)


def test_stiefel_first_column_uniform_and_rotation_invariant():
    rng = np.random.default_rng(1)
    draws = np.array([sample_uniform_stiefel(4, 2, rng) for _ in range(5000)])
    first = draws[:, :, 0]
    np.testing.assert_allclose(np.linalg.norm(first, axis=1), 1.0, atol=1e-12)
    assert np.abs(first.mean(axis=0)).max() < 4 / np.sqrt(5000)
    # E[x_k^2] = 1/4 on S^3; rotated draws share this law coordinatewise
    Q, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((4, 4)))
    rotated = np.einsum("ij,njr->nir", Q, draws)
    for k in range(4):
        assert stats.ks_2samp(draws[:, k, 1], rotated[:, k, 1]).pvalue > 1e-3
    assert np.abs((first**2).mean(axis=0) - 0.25).max() < 0.02


def test_uniform_sphere_unit_norm():
    x = sample_uniform_sphere(5, np.random.default_rng(0))
    assert abs(np.linalg.norm(x) - 1) < 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), dim=st.integers(2, 7), m=st.integers(0, 6))
def test_orthonormal_complement_property(seed, dim, m):
    m = min(m, dim)
    cols = sample_uniform_stiefel(dim, m, np.random.default_rng(seed)) if m else np.zeros((dim, 0))
    B = orthonormal_complement(cols, dim)
    assert B.shape == (dim, dim - m)
    np.testing.assert_allclose(B.T @ B, np.eye(dim - m), atol=1e-10)
    if 0 < m < dim:
        assert np.abs(cols.T @ B).max() < 1e-10
