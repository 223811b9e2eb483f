import numpy as np
import pytest

from daepinn.errors import TrainingDivergence
from daepinn.network import build_assembly
from daepinn.pinn_loss import LossBreakdown, PinnProblem, total_loss
from daepinn.trainer import (
    AdamState,
    PlateauConfig,
    TrainConfig,
    adam_step,
    make_datasets,
    penalty_train,
    reduce_lr_on_plateau,
    sample_initial_conditions,
    train_inner,
)


class QuadraticProblem:
    """`L_f = mean((x - target)^2)`, `L_g = L_f / 2`, independent of the dataset"""

    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)
        self.calls = 0

    def loss(self, params, dataset, w_f, w_g) -> LossBreakdown:
        d = params["x"] - self.target
        lf = float(np.mean(d * d))
        return total_loss(lf, 0.5 * lf, w_f, w_g)

    def loss_and_grad(self, params, dataset, w_f, w_g):
        self.calls += 1
        d = params["x"] - self.target
        return self.loss(params, dataset, w_f, w_g), {"x": (w_f + 0.5 * w_g) * 2.0 * d / d.size}


class NaNProblem(QuadraticProblem):
    def loss_and_grad(self, params, dataset, w_f, w_g):
        nan = LossBreakdown(L_f=float("nan"), L_g=0.0, total=float("nan"), w_f=w_f, w_g=w_g)
        return nan, {"x": np.zeros_like(params["x"])}


class FlatProblem(QuadraticProblem):
    """A constant loss with a nonzero gradient, so the optimizer moves without improving"""

    def loss(self, params, dataset, w_f, w_g) -> LossBreakdown:
        return total_loss(1.0, 0.0, w_f, w_g)

    def loss_and_grad(self, params, dataset, w_f, w_g):
        self.calls += 1
        return self.loss(params, dataset, w_f, w_g), {"x": np.ones_like(params["x"])}


DATA = np.zeros((4, 2))


class TestAdam:
    def test_first_step_moves_by_the_learning_rate(self):
        params = {"w": np.array([1.0, -2.0, 3.0])}
        grads = {"w": np.array([0.5, -4.0, 1e-3])}
        state = AdamState.zeros_like(params)
        updated, state = adam_step(params, grads, state, 1e-3)
        assert state.t == 1
        np.testing.assert_allclose(params["w"] - updated["w"], 1e-3 * np.sign(grads["w"]), rtol=1e-4)

    def test_input_parameters_are_not_modified(self):
        params = {"w": np.ones(2)}
        adam_step(params, {"w": np.ones(2)}, AdamState.zeros_like(params), 0.1)
        np.testing.assert_array_equal(params["w"], np.ones(2))

    def test_non_finite_gradient(self):
        params = {"w": np.ones(2)}
        with pytest.raises(TrainingDivergence) as e:
            adam_step(params, {"w": np.array([1.0, np.inf])}, AdamState.zeros_like(params), 0.1, epoch=17)
        assert str(e.value) == "Non-finite gradient of `w`"
        assert e.value.epoch == 17

    def test_gradient_shape_mismatch(self):
        params = {"w": np.ones(2)}
        with pytest.raises(ValueError) as e:
            adam_step(params, {"w": np.ones(3)}, AdamState.zeros_like(params), 0.1)
        assert str(e.value) == "Gradient of `w` has shape (3,), parameter has (2,)"


class TestPlateau:
    def test_short_history_keeps_the_rate(self):
        assert reduce_lr_on_plateau([1.0] * 9, PlateauConfig(window=10), 1e-3) == 1e-3

    def test_flat_history_halves_the_rate(self):
        assert reduce_lr_on_plateau([1.0] * 10, PlateauConfig(window=10), 1e-3) == 5e-4

    def test_improving_history_keeps_the_rate(self):
        history = list(np.linspace(1.0, 0.5, 10))
        assert reduce_lr_on_plateau(history, PlateauConfig(window=10), 1e-3) == 1e-3

    def test_slowly_falling_history_keeps_the_rate(self):
        history = list(np.linspace(1.0, 0.985, 2000))
        assert reduce_lr_on_plateau(history, PlateauConfig(), 1e-3) == 1e-3

    def test_barely_falling_history_keeps_the_rate(self):
        history = list(np.linspace(1.0, 0.9999, 10))
        assert reduce_lr_on_plateau(history, PlateauConfig(window=10), 1e-3) == 1e-3

    def test_rising_history_halves_the_rate(self):
        history = list(np.linspace(1.0, 1.2, 10))
        assert reduce_lr_on_plateau(history, PlateauConfig(window=10), 1e-3) == 5e-4

    @pytest.mark.parametrize(
        "history,expected",
        [
            ([1.0, 0.995, 0.998, 0.994, 0.996], 5e-4),
            ([1.0, 0.9, 0.95, 0.8, 0.85], 1e-3),
        ],
    )
    def test_noisy_history_is_judged_by_its_end_points(self, history, expected):
        assert reduce_lr_on_plateau(history, PlateauConfig(window=5), 1e-3) == expected

    def test_only_the_last_window_counts(self):
        history = [5.0, 4.0, 3.0] + [1.0] * 4
        assert reduce_lr_on_plateau(history, PlateauConfig(window=4), 1e-3) == 5e-4

    def test_rate_is_clamped(self):
        assert reduce_lr_on_plateau([1.0] * 4, PlateauConfig(window=4, min_lr=1e-5), 1.5e-5) == 1e-5

    def test_validation(self):
        with pytest.raises(ValueError) as e:
            PlateauConfig(window=0)
        assert str(e.value) == "`window` must be a positive integer, found: 0"
        with pytest.raises(ValueError) as e:
            PlateauConfig(factor=1.0)
        assert str(e.value) == "`factor` must lie in (0, 1), found: 1.0"
        with pytest.raises(ValueError) as e:
            PlateauConfig(threshold=1.0)
        assert str(e.value) == "`threshold` must lie in [0, 1), found: 1.0"


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.epochs_per_outer, cfg.K, cfg.beta, cfg.convergence_tol) == (50000, 5, 2.0, 1e-5)
        assert (cfg.train_size, cfg.test_size, cfg.lr0) == (2000, 1500, 1e-3)
        assert cfg.plateau == PlateauConfig()

    def test_weights(self):
        cfg = TrainConfig(w_f0=1.0, w_g0=3.0)
        assert cfg.weights(0) == (1.0, 3.0)
        assert cfg.weights(5) == (32.0, 96.0)

    def test_plateau_from_mapping(self):
        assert TrainConfig(plateau={"window": 10}).plateau.window == 10

    def test_validation(self):
        with pytest.raises(ValueError) as e:
            TrainConfig(beta=1.0)
        assert str(e.value) == "`beta` must exceed 1, found: 1.0"
        with pytest.raises(ValueError) as e:
            TrainConfig(K=-1)
        assert str(e.value) == "`K` must be a non-negative integer, found: -1"
        with pytest.raises(ValueError) as e:
            TrainConfig(train_size=0)
        assert str(e.value) == "`train_size` must be a positive integer, found: 0"
        with pytest.raises(ValueError) as e:
            TrainConfig(lr0=float("inf"))
        assert str(e.value) == "`lr0` must be a finite positive number, found: inf"

    def test_dict_form(self):
        d = TrainConfig(ic_ranges=[(-1, 1), (0, 2)]).to_dict()
        assert d["ic_ranges"] == [[-1.0, 1.0], [0.0, 2.0]]
        assert d["plateau"]["window"] == 2000


class TestDatasets:
    def test_sampling_is_deterministic_and_bounded(self, desk_ic_ranges):
        a = sample_initial_conditions(50, desk_ic_ranges, 3)
        b = sample_initial_conditions(50, desk_ic_ranges, 3)
        np.testing.assert_array_equal(a, b)
        lo, hi = np.array(desk_ic_ranges).T
        assert np.all(a >= lo) and np.all(a <= hi)

    def test_degenerate_range(self):
        out = sample_initial_conditions(5, [(0.25, 0.25), (-1.0, 1.0)], 0)
        assert np.all(out[:, 0] == 0.25)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError) as e:
            sample_initial_conditions(0, [(0.0, 1.0)], 0)
        assert str(e.value) == "`count` must be a positive integer, found: 0"
        with pytest.raises(ValueError):
            sample_initial_conditions(3, [(1.0, 0.0)], 0)

    def test_train_and_test_are_disjoint(self, desk_ic_ranges):
        train, test = make_datasets(64, 32, desk_ic_ranges, 1)
        assert train.shape == (64, 4) and test.shape == (32, 4)
        assert not {r.tobytes() for r in train} & {r.tobytes() for r in test}
        again, _ = make_datasets(64, 32, desk_ic_ranges, 1)
        np.testing.assert_array_equal(train, again)
        other, _ = make_datasets(64, 32, desk_ic_ranges, 2)
        assert not np.array_equal(train, other)

    def test_overlap_is_rejected(self):
        with pytest.raises(ValueError) as e:
            make_datasets(2, 2, [(0.5, 0.5)], 0)
        assert str(e.value) == "Training and test initial conditions overlap"


class TestTrainInner:
    def test_converges_on_a_quadratic(self):
        problem = QuadraticProblem([1.0, -0.5])
        cfg = TrainConfig(epochs_per_outer=5000, lr0=0.05, convergence_tol=1e-6)
        result = train_inner(problem, DATA, 1.0, 1.0, cfg, {"x": np.zeros(2)})
        assert result.converged
        assert result.best.total <= 1e-6
        assert len(result.history) == result.epochs == len(result.records)
        np.testing.assert_allclose(result.params["x"], [1.0, -0.5], atol=2e-3)

    def test_converged_start_takes_no_step(self):
        problem = QuadraticProblem([1.0])
        result = train_inner(problem, DATA, 1.0, 1.0, TrainConfig(), {"x": np.ones(1)})
        assert result.converged and result.epochs == 0 and result.history == []
        assert problem.calls == 1

    def test_epoch_cap_returns_the_best_parameters(self, caplog):
        problem = QuadraticProblem([1.0])
        cfg = TrainConfig(epochs_per_outer=3, lr0=1e-3)
        result = train_inner(problem, DATA, 1.0, 1.0, cfg, {"x": np.zeros(1)})
        assert not result.converged
        assert result.epochs == 3
        assert result.best.total < result.history[0]
        assert result.best.total == problem.loss(result.params, DATA, 1.0, 1.0).total
        assert "hit the 3-epoch cap" in caplog.text

    def test_records_carry_the_weights_and_rate(self):
        cfg = TrainConfig(epochs_per_outer=4, lr0=1e-2)
        result = train_inner(QuadraticProblem([1.0]), DATA, 4.0, 8.0, cfg, {"x": np.zeros(1)}, outer_iter=2)
        assert [r.epoch for r in result.records] == [1, 2, 3, 4]
        assert all((r.outer_iter, r.w_f, r.w_g, r.learning_rate) == (2, 4.0, 8.0, 1e-2) for r in result.records)
        assert [r.total for r in result.records] == result.history

    def test_test_loss_is_sampled(self):
        cfg = TrainConfig(epochs_per_outer=6, eval_every=2, lr0=1e-3)
        result = train_inner(QuadraticProblem([1.0]), DATA, 1.0, 1.0, cfg, {"x": np.zeros(1)}, test_set=DATA)
        assert [epoch for epoch, _ in result.test_history] == [2, 4, 6]

    def test_plateau_reduces_the_rate(self):
        cfg = TrainConfig(epochs_per_outer=12, lr0=1e-3, plateau={"window": 5})
        result = train_inner(FlatProblem([1.0]), DATA, 1.0, 1.0, cfg, {"x": np.zeros(1)})
        assert [r.lr for r in result.records] == [1e-3] * 5 + [5e-4] * 5 + [2.5e-4] * 2
        assert result.lr == 2.5e-4

    def test_steady_descent_keeps_the_rate(self):
        cfg = TrainConfig(epochs_per_outer=30, lr0=1e-3, plateau={"window": 5, "threshold": 0.5})
        result = train_inner(QuadraticProblem([1.0]), DATA, 1.0, 1.0, cfg, {"x": np.zeros(1)})
        assert all(b < a for a, b in zip(result.history, result.history[1:]))
        assert result.lr == 1e-3

    def test_non_finite_loss(self):
        with pytest.raises(TrainingDivergence) as e:
            train_inner(NaNProblem([1.0]), DATA, 1.0, 1.0, TrainConfig(), {"x": np.zeros(1)}, outer_iter=3)
        assert str(e.value) == "Non-finite loss in outer iteration 3"


class TestPenaltyTrain:
    def test_weights_double_every_outer_iteration(self):
        cfg = TrainConfig(epochs_per_outer=20, K=5, lr0=1e-2)
        _, state = penalty_train(QuadraticProblem([1.0, 2.0]), DATA, cfg, {"x": np.zeros(2)})
        assert state.k == 5
        assert (state.w_f, state.w_g) == (32.0, 32.0)
        assert [o.w_f for o in state.outer] == [1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
        assert state.records[-1].w_g == 32.0

    def test_warm_start_and_convergence(self):
        cfg = TrainConfig(epochs_per_outer=5000, K=2, lr0=0.05, convergence_tol=1e-6)
        params, state = penalty_train(QuadraticProblem([0.5]), DATA, cfg, {"x": np.zeros(1)}, test_set=DATA)
        assert state.converged
        assert all(o.converged for o in state.outer)
        assert state.outer[-1].test_total is not None
        assert params["x"][0] == pytest.approx(0.5, abs=1e-3)
        assert len(state.history) == sum(o.epochs for o in state.outer)

    def test_pinn_loss_decreases(self, small_problem, small_assembly, ic_batch):
        init = small_assembly.init_params(0)
        initial = small_problem.loss(init, ic_batch, 1.0, 1.0).total
        cfg = TrainConfig(epochs_per_outer=40, K=0, lr0=1e-3)
        params, state = penalty_train(small_problem, ic_batch, cfg, init)
        assert state.outer[0].total < initial
        assert small_problem.loss(params, ic_batch, 1.0, 1.0).total == pytest.approx(state.outer[0].total)

    def test_constraint_residual_does_not_grow_on_the_linear_dae(self, linear, gauss2):
        assembly = build_assembly(
            1, 1, gauss2, 0.1, y_width=8, y_depth=2, z_width=8, z_depth=2, ic_ranges=linear.ic_ranges
        )
        problem = PinnProblem(assembly, linear)
        dataset = sample_initial_conditions(16, linear.ic_ranges, 3)
        cfg = TrainConfig(epochs_per_outer=200, K=3, lr0=1e-3)
        _, state = penalty_train(problem, dataset, cfg, assembly.init_params(0))
        assert [o.k for o in state.outer] == [0, 1, 2, 3]
        unweighted = [o.total / o.w_f for o in state.outer]
        assert all(b <= a for a, b in zip(unweighted, unweighted[1:]))
        L_g = [o.L_g for o in state.outer]
        assert all(b <= a for a, b in zip(L_g, L_g[1:])), L_g
