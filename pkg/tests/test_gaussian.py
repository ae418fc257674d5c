import numpy as np
import pytest

from ncf.cost import CostModel
from ncf.gaussian import (GaussianPair, load_pair_csv, monge_matrix, optimal_map, optimal_potential,
                          optimal_theta, optimal_velocity, random_gaussian_pair, random_spd, save_pair_csv,
                          spd_sqrt, sym_eig, uvp)
from ncf.losses import CollocationBatch, hj_residuals_backward, hj_residuals_forward


def test_spd_sqrt_examples():
    np.testing.assert_allclose(spd_sqrt(np.eye(3)), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(spd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)
    r3 = np.sqrt(3.0)
    expected = np.array([[r3 + 1, r3 - 1], [r3 - 1, r3 + 1]]) / 2
    np.testing.assert_allclose(spd_sqrt(np.array([[2.0, 1.0], [1.0, 2.0]])), expected, atol=1e-14)


def test_spd_sqrt_errors():
    with pytest.raises(ValueError):
        spd_sqrt(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        spd_sqrt(np.diag([1.0, -1.0]))


def test_sym_eig_reconstructs():
    s = random_spd(10, np.random.default_rng(0))
    lam, q = sym_eig(s)
    np.testing.assert_allclose((q * lam) @ q.T, s, atol=1e-12)
    np.testing.assert_allclose(q.T @ q, np.eye(10), atol=1e-12)


def test_optimal_map_examples():
    gp = GaussianPair(np.zeros(2), np.eye(2), np.zeros(2), np.eye(2))
    x = np.random.default_rng(0).standard_normal((5, 2))
    np.testing.assert_allclose(optimal_map(gp, x), x)
    np.testing.assert_allclose(optimal_velocity(gp, x, 0.3), 0.0, atol=1e-15)

    gp = GaussianPair(np.zeros(1), np.eye(1), np.array([3.0]), np.array([[4.0]]))
    x = np.linspace(-2, 2, 5).reshape(-1, 1)
    np.testing.assert_allclose(optimal_map(gp, x), 2 * x + 3)
    np.testing.assert_allclose(optimal_velocity(gp, x, 0.0), x + 3)

    a = monge_matrix(np.diag([1.0, 4.0]), np.diag([9.0, 1.0]))
    np.testing.assert_allclose(a, np.diag([3.0, 0.5]), atol=1e-14)


def test_optimal_theta_examples():
    gp = GaussianPair(np.zeros(2), np.eye(2), np.zeros(2), np.eye(2))
    for t in (0.0, 0.4, 1.0):
        th2, th1, th0 = optimal_theta(gp, t)
        assert np.abs(th2).max() < 1e-15 and np.abs(th1).max() < 1e-15 and th0 == 0.0
    gp = GaussianPair(np.zeros(1), np.eye(1), np.zeros(1), np.array([[4.0]]))
    for t in (0.0, 0.5, 1.0):
        assert optimal_theta(gp, t)[0][0, 0] == pytest.approx(-1 / (1 + t))


def test_optimal_theta_one_dimensional_with_shift():
    # mu = N(0,1), nu = N(3,4): A = 2, so theta2(t) = -1/(1+t), theta1(t) = -3/(1+t)
    gp = GaussianPair(np.zeros(1), np.eye(1), np.array([3.0]), np.array([[4.0]]))
    th2, th1, th0 = optimal_theta(gp, 0.0)
    assert (th2[0, 0], th1[0], th0) == pytest.approx((-1.0, -3.0, 0.0))
    th2, th1, th0 = optimal_theta(gp, 1.0)
    assert (th2[0, 0], th1[0], th0) == pytest.approx((-0.5, -1.5, 2.25))


@pytest.mark.parametrize("d", [1, 2, 4, 8])
def test_potential_gradient_is_velocity(d):
    gp = random_gaussian_pair(d, seed=d)
    gp = GaussianPair(np.arange(d) * 0.3, gp.sigma_mu, -np.ones(d), gp.sigma_nu)
    q = optimal_potential(gp)
    x = np.random.default_rng(d).standard_normal((20, d))
    for t in (0.0, 0.37, 1.0):
        _, g, _ = q.evaluate(x, np.full(20, t), grad=True)
        np.testing.assert_allclose(g.value, optimal_velocity(gp, x, t), atol=1e-10, rtol=1e-10)


def test_time_derivative_matches_fd():
    gp = random_gaussian_pair(3, seed=5)
    q = optimal_potential(gp, t_f=2.0)
    x = np.random.default_rng(0).standard_normal((4, 3))
    t = np.full(4, 0.8)
    _, _, gt = q.evaluate(x, t, grad=True)
    h = 1e-6
    fd = (q(x, t + h) - q(x, t - h)) / (2 * h)
    np.testing.assert_allclose(gt.value, fd, rtol=1e-7, atol=1e-9)


@pytest.mark.parametrize("t_f", [0.5, 1.0, 3.0])
def test_theta_star_residuals_vanish(t_f):
    gp = random_gaussian_pair(2, seed=1)
    gp = GaussianPair(np.array([0.5, -0.2]), gp.sigma_mu, np.array([1.0, 2.0]), gp.sigma_nu)
    q = optimal_potential(gp, t_f)
    rng = np.random.default_rng(0)
    batch = CollocationBatch(rng.uniform(-3, 3, (1000, 2)), rng.uniform(0, t_f, 1000), t_f)
    assert np.abs(hj_residuals_forward(q, CostModel(), batch)).max() < 1e-8
    assert np.abs(hj_residuals_backward(q, CostModel(), batch)).max() < 1e-8


def test_random_pair_properties():
    gp = random_gaussian_pair(6, seed=3)
    for s in (gp.sigma_mu, gp.sigma_nu):
        lam = np.linalg.eigvalsh(s)
        assert lam.min() >= np.exp(-2) - 1e-12 and lam.max() <= np.exp(2) + 1e-12
        assert np.abs(s - s.T).max() <= 1e-14
    again = random_gaussian_pair(6, seed=3)
    np.testing.assert_array_equal(gp.sigma_mu, again.sigma_mu)
    np.testing.assert_array_equal(gp.sigma_nu, again.sigma_nu)
    np.testing.assert_allclose(gp.A @ gp.sigma_mu @ gp.A, gp.sigma_nu, atol=1e-8)


def test_uvp_examples():
    gp = GaussianPair(np.zeros(1), np.eye(1), np.zeros(1), np.array([[4.0]]))
    assert uvp(lambda x: optimal_map(gp, x), gp, 10_000) == 0.0
    assert uvp(lambda x: x, gp, 100_000) == pytest.approx(25.0, abs=1.0)
    with pytest.raises(ValueError):
        uvp(lambda x: x, gp, 999)


def test_uvp_order_invariant():
    gp = random_gaussian_pair(3, seed=0)
    lin = np.diag([1.1, 0.9, 1.0])
    a = uvp(lambda x: x @ lin, gp, 5000, seed=1)
    b = uvp(lambda x: (x[::-1] @ lin)[::-1], gp, 5000, seed=1)
    assert a == pytest.approx(b, rel=1e-12)


def test_pushforward_covariance():
    gp = random_gaussian_pair(2, seed=4)
    y = optimal_map(gp, gp.sample_mu(200_000, np.random.default_rng(0)))
    assert np.linalg.norm(np.cov(y.T) - gp.sigma_nu) < 0.1


def test_pair_csv_round_trip(tmp_path):
    gp = random_gaussian_pair(3, seed=9)
    save_pair_csv(gp, tmp_path / "pair.csv")
    back = load_pair_csv(tmp_path / "pair.csv")
    np.testing.assert_array_equal(back.sigma_mu, gp.sigma_mu)
    np.testing.assert_array_equal(back.sigma_nu, gp.sigma_nu)
    assert back.seed == 9


def test_rejects_non_spd():
    with pytest.raises(ValueError):
        GaussianPair(np.zeros(2), np.diag([1.0, 0.0]), np.zeros(2), np.eye(2))
