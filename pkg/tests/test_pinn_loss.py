import numpy as np
import pytest

from daepinn import autodiff as ad
from daepinn.dae_model import consistent_z
from daepinn.pinn_loss import (
    EpochRecord,
    PinnProblem,
    dynamic_residual_targets,
    loss_f,
    loss_g,
    read_training_log,
    total_loss,
    write_training_log,
)
from daepinn.reference_solver import SolverConfig, irk_step
from daepinn.tableau import backward_euler_tableau


def zero_rhs(y, z):
    return 0.0 * y


class TestResidualTargets:
    def test_zero_rhs_returns_the_predictions(self, gauss3):
        rng = np.random.default_rng(0)
        Y = rng.normal(size=(2, 4, 3))
        Z = rng.normal(size=(2, 4, 1))
        out = dynamic_residual_targets(rng.normal(size=(2, 3)), Y, Z, gauss3, 0.1, zero_rhs)
        np.testing.assert_array_equal(out.value, Y)

    def test_backward_euler_by_hand(self):
        Y = np.array([[[0.5], [0.7]]])
        Z = np.zeros((1, 2, 1))
        out = dynamic_residual_targets(np.array([[1.0]]), Y, Z, backward_euler_tableau(), 0.1, lambda y, z: -y)
        np.testing.assert_allclose(out.value.reshape(-1), [0.55, 0.75], rtol=0, atol=1e-15)

    def test_dense_oracle_for_a_linear_rhs(self, gauss2):
        rng = np.random.default_rng(1)
        L = rng.normal(size=(3, 3))
        Y = rng.normal(size=(4, 3, 3))
        Z = rng.normal(size=(4, 3, 1))
        h = 0.1
        out = dynamic_residual_targets(np.zeros((4, 3)), Y, Z, gauss2, h, lambda y, z: ad.matmul(y, L.T))
        for b in range(4):
            F = Y[b, :2] @ L.T
            np.testing.assert_allclose(out.value[b, :2], Y[b, :2] - h * gauss2.a @ F, rtol=0, atol=1e-14)
            np.testing.assert_allclose(out.value[b, 2], Y[b, 2] - h * gauss2.b @ F, rtol=0, atol=1e-14)

    def test_shape_mismatch(self, gauss3):
        with pytest.raises(ValueError) as e:
            dynamic_residual_targets(np.zeros((1, 2)), np.zeros((1, 3, 2)), np.zeros((1, 3, 1)), gauss3, 0.1, zero_rhs)
        assert str(e.value) == "Stage predictions (1, 3, 2) and (1, 3, 1) do not match a 3-stage tableau"


class TestLossTerms:
    def test_loss_f_by_hand(self):
        value = loss_f(np.array([[1.0]]), np.array([[[0.5], [2.0]]]))
        assert value.item() == 0.625

    def test_loss_f_is_quadratic(self):
        rng = np.random.default_rng(2)
        y_n = rng.normal(size=(3, 2))
        dev = rng.normal(size=(3, 4, 2))
        base = loss_f(y_n, y_n[:, None, :] + dev).item()
        doubled = loss_f(y_n, y_n[:, None, :] + 2 * dev).item()
        assert doubled == pytest.approx(4 * base, rel=1e-14)

    def test_loss_f_vanishes_on_matching_targets(self):
        y_n = np.array([[0.3, -0.2]])
        assert loss_f(y_n, np.repeat(y_n[:, None, :], 3, axis=1)).item() == 0.0

    def test_loss_g_by_hand(self):
        Y = np.zeros((1, 2, 1))
        Z = np.array([[[0.3], [0.1]]])
        assert loss_g(Y, Z, lambda y, z: z).item() == pytest.approx(0.05, abs=1e-17)

    def test_loss_g_is_a_batch_mean(self):
        rng = np.random.default_rng(3)
        Y, Z = rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 3, 1))
        g = lambda y, z: z - y[:, 0:1]  # noqa: E731
        once = loss_g(Y, Z, g).item()
        twice = loss_g(np.concatenate([Y, Y]), np.concatenate([Z, Z]), g).item()
        assert twice == pytest.approx(once, rel=1e-14)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        y_n, T = rng.normal(size=(5, 2)), rng.normal(size=(5, 3, 2))
        perm = rng.permutation(5)
        assert loss_f(y_n[perm], T[perm]).item() == pytest.approx(loss_f(y_n, T).item(), rel=1e-14)

    def test_empty_batch(self):
        with pytest.raises(ValueError) as e:
            loss_f(np.zeros((0, 2)), np.zeros((0, 3, 2)))
        assert str(e.value) == "Loss terms need a nonempty batch"
        with pytest.raises(ValueError):
            loss_g(np.zeros((0, 3, 2)), np.zeros((0, 3, 1)), lambda y, z: z)


class TestTotalLoss:
    def test_weighted_sum(self):
        out = total_loss(1.5, 0.5, 1.0, 2.0)
        assert out.total == 2.5
        assert (out.L_f, out.L_g, out.w_f, out.w_g) == (1.5, 0.5, 1.0, 2.0)
        assert total_loss(0.0, 0.0, 1.0, 1.0).total == 0.0

    def test_weights_scale_linearly(self):
        assert total_loss(0.3, 0.7, 8.0, 8.0).total == pytest.approx(8.0 * total_loss(0.3, 0.7, 1.0, 1.0).total)

    @pytest.mark.parametrize("w_f, w_g", [(0.0, 1.0), (1.0, -2.0)])
    def test_rejects_non_positive_weights(self, w_f, w_g):
        with pytest.raises(ValueError) as e:
            total_loss(1.0, 1.0, w_f, w_g)
        assert str(e.value) == f"Penalty weights must be positive, found w_f={w_f}, w_g={w_g}"


class TestPinnProblem:
    # the load angle of the three-bus model runs at several hundred rad/s from rest and crosses the voltage fold
    # near d3=1.3 within a few milliseconds, so its steps stay at 1e-4
    BUS_STEP = 1e-4

    @pytest.mark.parametrize(
        "y_n",
        [
            [0.0, 0.0, 0.0, 0.0],
            [0.1, -0.1, 0.05, -0.05],
            [-0.4, 0.3, -0.08, 0.02],
            [0.45, 0.45, 0.1, 0.1],
            [-0.2, -0.5, 0.01, -0.1],
        ],
    )
    def test_exact_stages_minimize_the_loss(self, bus, gauss3, y_n):
        y_n = np.array(y_n)
        h = self.BUS_STEP
        z_n = consistent_z(bus, y_n, bus.z_guess, tol=1e-13)
        step = irk_step(bus, y_n, z_n, SolverConfig(tableau=gauss3, h_ref=h))
        Y = np.concatenate([step.Y_stages, step.y[None, :]])[None]
        Z = np.concatenate([step.Z_stages, step.z[None, :]])[None]
        targets = dynamic_residual_targets(y_n[None, :], Y, Z, gauss3, h, bus.f)
        assert loss_f(y_n[None, :], targets).item() <= 1e-12
        assert loss_g(Y, Z, bus.g).item() <= 1e-12

    def test_dimension_mismatch(self, small_assembly, linear):
        with pytest.raises(ValueError) as e:
            PinnProblem(small_assembly, linear)
        assert str(e.value) == "Assembly dimensions (n=4, m=1) do not match `linear` (n=1, m=1)"

    def test_loss_and_grad_agree_with_loss(self, small_problem, small_assembly, ic_batch):
        params = small_assembly.init_params(0)
        breakdown, grads = small_problem.loss_and_grad(params, ic_batch, 2.0, 4.0)
        plain = small_problem.loss(params, ic_batch, 2.0, 4.0)
        assert breakdown.total == pytest.approx(plain.total, rel=1e-14)
        assert breakdown.total == pytest.approx(2.0 * breakdown.L_f + 4.0 * breakdown.L_g, rel=1e-14)
        assert set(grads) == set(params)
        assert all(grads[k].shape == params[k].shape for k in params)

    def test_gradient_matches_central_differences(self, small_problem, small_assembly, ic_batch):
        params = small_assembly.init_params(11)
        rng = np.random.default_rng(5)
        for name in params:
            if name.split(".")[1].startswith("b"):
                params[name] = rng.uniform(-0.5, 0.5, size=params[name].shape)
        _, grads = small_problem.loss_and_grad(params, ic_batch, 1.0, 1.0)
        # coordinates far below the largest gradient are compared on its scale
        floor = 1e-3 * max(float(np.abs(g).max()) for g in grads.values())
        fn = small_problem.loss_fn(ic_batch, 1.0, 1.0)
        assert ad.grad_check(fn, params, step=1e-5, eps=floor) <= 1e-5


class TestTrainingLog:
    def test_round_trip(self, tmp_path):
        records = [
            EpochRecord(1, 0, w_f=1.0, w_g=1.0, L_f=0.1, L_g=0.2, total=0.30000000000000004, learning_rate=1e-3),
            EpochRecord(2, 1, w_f=2.0, w_g=2.0, L_f=1e-7, L_g=3e-9, total=2.06e-7, learning_rate=5e-4),
        ]
        path = write_training_log(records, tmp_path / "logs" / "training_log.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,outer_iter,w_f,w_g,L_f,L_g,total,learning_rate"
        assert read_training_log(path) == records
