"""Objective terms, tape gradients against finite differences, training."""

import math

import numpy as np
import pytest

from sparseica.flows import CouplingFlow, GaussianPrior
from sparseica.metrics import mcc
from sparseica.training import (
    TrainConfig,
    gradients,
    l1_jacobian_reg,
    log_likelihood,
    objective,
    ortho_reg,
    train,
)


def random_rotation(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


class TestLogLikelihood:
    def test_identity_flow_standard_prior_at_origin(self):
        flow = CouplingFlow.create(2, 4, 8, init="zero")
        prior = GaussianPrior.standard(2)
        got = log_likelihood(flow, prior, np.zeros(2))
        assert got == pytest.approx(-math.log(2 * math.pi), abs=1e-12)

    def test_identity_flow_scaled_prior(self):
        flow = CouplingFlow.create(2, 4, 8, init="zero")
        prior = GaussianPrior.from_moments(np.zeros(2), np.array([1.0, 4.0]))
        got = log_likelihood(flow, prior, np.zeros(2))
        expected = -math.log(2 * math.pi) - 0.5 * math.log(4.0)
        assert got == pytest.approx(expected, abs=1e-12)

    def test_density_normalizes_by_quadrature(self):
        # exp(log-likelihood) must integrate to one over the plane
        flow = CouplingFlow.create(2, 6, 8, mode="general", init="random",
                                   seed=1, weight_scale=0.6)
        prior = GaussianPrior.from_moments(np.array([0.2, -0.1]),
                                           np.array([0.8, 1.3]))
        grid = np.linspace(-9.0, 9.0, 301)
        xx, yy = np.meshgrid(grid, grid)
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        dens = np.exp(log_likelihood(flow, prior, pts))
        mass = dens.sum() * (grid[1] - grid[0]) ** 2
        assert mass == pytest.approx(1.0, abs=1e-2)


class TestL1JacobianReg:
    def test_identity_flow(self):
        flow = CouplingFlow.create(3, 4, 8, init="zero")
        assert l1_jacobian_reg(flow, np.zeros(3)) == pytest.approx(3.0)

    def test_diagonal_scaling_flow(self):
        # input map with slopes (2, 3): unmixing Jacobian is diag(1/2, 1/3)
        flow = CouplingFlow.create(2, 2, 4, init="zero")
        flow.set_input_map(np.zeros(2), np.log(np.array([2.0, 3.0])))
        got = l1_jacobian_reg(flow, np.array([0.7, -0.2]))
        assert got == pytest.approx(0.5 + 1.0 / 3.0, abs=1e-12)

    def test_matches_jacobian_entry_sum(self):
        flow = CouplingFlow.create(3, 8, 8, init="random", seed=2)
        x = np.random.default_rng(3).standard_normal(3)
        expected = np.abs(flow.jacobian(x, "inverse")).sum()
        assert l1_jacobian_reg(flow, x) == pytest.approx(expected, rel=1e-12)


class TestOrthoReg:
    def test_identity(self):
        assert ortho_reg(np.eye(3)) == pytest.approx(0.0, abs=1e-14)

    def test_scaled_rotation_is_equality_case(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            J = 2.0 * random_rotation(3, rng)
            assert ortho_reg(J) == pytest.approx(0.0, abs=1e-12)

    def test_diagonal_value(self):
        got = ortho_reg(np.diag([1.0, 2.0]))
        assert got == pytest.approx(2 * math.log(1.5) - math.log(2.0),
                                    abs=1e-12)

    def test_nonnegative_on_random_matrices(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            J = rng.standard_normal((4, 4))
            if abs(np.linalg.det(J)) < 1e-9:
                continue
            assert ortho_reg(J) >= -1e-12

    def test_singular_rejected(self):
        with pytest.raises(ValueError, match="singular"):
            ortho_reg(np.zeros((2, 2)))


class TestObjective:
    def test_lambda_zero_is_mean_loglik(self):
        flow = CouplingFlow.create(3, 6, 8, init="random", seed=6)
        prior = GaussianPrior.standard(3)
        batch = np.random.default_rng(7).standard_normal((40, 3))
        cfg = TrainConfig(lam=0.0, regularizer="none")
        got = objective(flow, prior, batch, cfg)
        assert got == pytest.approx(
            float(np.mean(log_likelihood(flow, prior, batch))), rel=1e-12)

    def test_identity_flow_l1_closed_form(self):
        flow = CouplingFlow.create(2, 4, 8, init="zero")
        prior = GaussianPrior.standard(2)
        batch = np.zeros((5, 2))
        cfg = TrainConfig(lam=1.0, regularizer="l1")
        got = objective(flow, prior, batch, cfg)
        assert got == pytest.approx(-math.log(2 * math.pi) - 2.0, abs=1e-12)

    def test_monotone_in_lambda(self):
        flow = CouplingFlow.create(3, 6, 8, init="random", seed=8)
        prior = GaussianPrior.standard(3)
        batch = np.random.default_rng(9).standard_normal((20, 3))
        values = [objective(flow, prior, batch,
                            TrainConfig(lam=lam, regularizer="l1"))
                  for lam in (0.0, 0.1, 0.5, 2.0)]
        assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))

    def test_empty_batch_rejected(self):
        flow = CouplingFlow.create(2, 2, 4, init="zero")
        with pytest.raises(ValueError, match="empty"):
            objective(flow, GaussianPrior.standard(2), np.zeros((0, 2)),
                      TrainConfig())


def relative_gradient_error(flow, prior, batch, config, h=1e-5, sample=60):
    """Max |analytic - central difference| over the gradient inf-norm."""
    flow_grads, g1, g2, _ = gradients(flow, prior, batch, config)
    params = flow.param_arrays()
    rng = np.random.default_rng(0)
    analytic, numeric = [], []

    def fd_on(arr, grad_arr):
        flat = arr.reshape(-1)
        gf = grad_arr.reshape(-1)
        idx = rng.choice(flat.size, size=min(4, flat.size), replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            fp = objective(flow, prior, batch, config)
            flat[i] = old - h
            fm = objective(flow, prior, batch, config)
            flat[i] = old
            numeric.append((fp - fm) / (2 * h))
            analytic.append(gf[i])

    chosen = rng.choice(len(params), size=min(sample // 4, len(params)),
                        replace=False)
    for j in chosen:
        fd_on(params[j], flow_grads[j])
    fd_on(prior.theta1, g1)
    fd_on(prior.theta2, g2)
    analytic = np.array(analytic)
    numeric = np.array(numeric)
    scale = max(np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


class TestGradients:
    @pytest.mark.parametrize("reg,mode", [
        ("l1", "general"), ("l1", "volume-preserving"),
        ("ortho", "volume-preserving"), ("none", "general"),
    ])
    def test_matches_finite_differences(self, reg, mode):
        rng = np.random.default_rng(10)
        flow = CouplingFlow.create(3, 6, 6, mode=mode, init="random", seed=11)
        prior = GaussianPrior(rng.normal(0, 0.2, 3), rng.uniform(0.3, 0.8, 3))
        batch = rng.standard_normal((6, 3))
        cfg = TrainConfig(lam=0.4, regularizer=reg)
        assert relative_gradient_error(flow, prior, batch, cfg) < 1e-4

    def test_near_identity_l1_gradient_fd(self):
        # entrywise-L1 at the identity: off-diagonal subgradients are zero
        # and finite differences agree by symmetry
        flow = CouplingFlow.create(2, 4, 6, init="identity", seed=12)
        prior = GaussianPrior.standard(2)
        batch = np.random.default_rng(13).standard_normal((4, 2))
        cfg = TrainConfig(lam=0.7, regularizer="l1")
        assert relative_gradient_error(flow, prior, batch, cfg) < 1e-4

    def test_symmetric_zero_data_keeps_split_symmetry(self):
        flow = CouplingFlow.create(2, 2, 4, init="zero")
        prior = GaussianPrior.standard(2)
        batch = np.zeros((8, 2))
        cfg = TrainConfig(lam=0.0, regularizer="none", standardize=False)
        flow_grads, g1, g2, _ = gradients(flow, prior, batch, cfg)
        # zero data at zero weights: only the scale output biases feel the
        # objective (through the log-determinant), identically in both
        # layers of the alternating split; everything else stays zero
        per_layer = [flow_grads[i:i + 8] for i in (0, 8)]
        for layer_grads in per_layer:
            for idx, g in enumerate(layer_grads):
                if idx == 3:  # scale net output bias
                    assert np.allclose(g, -0.5)
                else:
                    assert np.allclose(g, 0.0)
        assert np.allclose(g1, 0.0)
        assert np.allclose(g2, 1.0)


class TestTrain:
    def test_objective_non_decreasing_early(self):
        rng = np.random.default_rng(14)
        gen = CouplingFlow.create(3, 8, 8, mode="general", init="random",
                                  seed=15, weight_scale=0.7)
        X = gen.forward(rng.standard_normal((3000, 3)))
        flow = CouplingFlow.create(3, 8, 8, mode="general", init="identity",
                                   seed=16)
        prior = GaussianPrior.standard(3)
        cfg = TrainConfig(epochs=10, lam=0.0, regularizer="none", seed=17,
                          batch_size=500)
        _, _, hist = train(flow, prior, X, cfg)
        assert hist.objective[-1] > hist.objective[0] - 0.05

    @pytest.mark.slow
    def test_two_source_rotation_recovery(self):
        # the small end-to-end oracle: unmix a plane rotation of Gaussian
        # sources with well-separated variances. At 20 degrees the exact
        # optimum of the penalized objective scores 0.989, so reaching 0.95
        # requires the trainer to essentially find it.
        rng = np.random.default_rng(18)
        S = rng.standard_normal((10000, 2)) * np.sqrt([0.5, 3.0])
        theta = np.radians(20.0)
        R = np.array([[np.cos(theta), -np.sin(theta)],
                      [np.sin(theta), np.cos(theta)]])
        X = S @ R.T
        flow = CouplingFlow.create(2, 16, 16, mode="volume-preserving",
                                   init="identity", seed=19)
        prior = GaussianPrior.standard(2)
        cfg = TrainConfig(epochs=200, lam=0.1, regularizer="l1", seed=20)
        flow, prior, hist = train(flow, prior, X, cfg)
        report = mcc(S, flow.inverse(X))
        assert report.mcc >= 0.95
        assert not hist.aborted

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(21)
        X = rng.standard_normal((600, 3))
        histories = []
        for _ in range(2):
            flow = CouplingFlow.create(3, 4, 6, init="identity", seed=22)
            prior = GaussianPrior.standard(3)
            cfg = TrainConfig(epochs=4, batch_size=200, lam=0.05,
                              regularizer="l1", seed=23)
            _, _, hist = train(flow, prior, X, cfg)
            histories.append(hist.to_csv())
        assert histories[0] == histories[1]

    def test_vp_mode_logdet_stays_zero(self):
        rng = np.random.default_rng(24)
        X = rng.standard_normal((500, 3)) * np.array([1.0, 2.0, 0.5])
        flow = CouplingFlow.create(3, 6, 6, mode="volume-preserving",
                                   init="identity", seed=25)
        prior = GaussianPrior.standard(3)
        cfg = TrainConfig(epochs=3, batch_size=250, lam=0.1,
                          regularizer="l1", seed=26)
        flow, _, _ = train(flow, prior, X, cfg)
        assert np.all(flow.log_det_jacobian(X[:50], "inverse") == 0.0)

    def test_batch_size_validated(self):
        flow = CouplingFlow.create(2, 2, 4, init="zero")
        with pytest.raises(ValueError, match="batch"):
            train(flow, GaussianPrior.standard(2), np.zeros((10, 2)),
                  TrainConfig(batch_size=100))

    def test_history_csv_shape(self):
        rng = np.random.default_rng(27)
        X = rng.standard_normal((400, 2))
        flow = CouplingFlow.create(2, 2, 4, init="identity", seed=28)
        _, _, hist = train(flow, GaussianPrior.standard(2), X,
                           TrainConfig(epochs=5, batch_size=100, seed=29,
                                       regularizer="none", lam=0.0))
        lines = hist.to_csv().strip().splitlines()
        assert lines[0] == "epoch,loglik,reg,objective"
        assert len(lines) == 6
