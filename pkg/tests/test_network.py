import numpy as np
import pytest

from daepinn import autodiff as ad
from daepinn.network import (
    AssemblyMode,
    InputScaler,
    NetworkConfig,
    OutputFeature,
    PinnAssembly,
    build_assembly,
    flatten_params,
    forward,
    init_glorot_normal,
    unflatten_params,
)


def assert_gradients_match(fn, params, step=1e-6, rtol=1e-5, atol=1e-9):
    with ad.Tape() as tape:
        out = fn({k: tape.variable(v, name=k) for k, v in params.items()})
        grads = tape.backward(out)
    for name, value in params.items():
        fd = np.zeros_like(value)
        for i in range(value.size):
            shifted = {k: v.copy() for k, v in params.items()}
            shifted[name].flat[i] += step
            f_plus = fn(shifted).item()
            shifted[name].flat[i] -= 2 * step
            f_minus = fn(shifted).item()
            fd.flat[i] = (f_plus - f_minus) / (2 * step)
        np.testing.assert_allclose(grads[name], fd, rtol=rtol, atol=atol, err_msg=name)


class TestNetworkConfig:
    def test_param_shapes(self):
        cfg = NetworkConfig(in_dim=4, out_dim=12, width=8, depth=2)
        assert cfg.param_shapes() == {
            "W1": (4, 8),
            "b1": (8,),
            "W2": (4, 8),
            "b2": (8,),
            "Wz1": (4, 8),
            "bz1": (8,),
            "Wz2": (8, 8),
            "bz2": (8,),
            "W": (8, 12),
            "b": (12,),
        }

    def test_rejects_non_positive_sizes(self):
        with pytest.raises(ValueError) as e:
            NetworkConfig(in_dim=4, out_dim=12, width=0, depth=2)
        assert str(e.value) == "`width` must be a positive integer, found: 0"

    def test_enum_coercion(self):
        cfg = NetworkConfig(4, 4, 2, 1, output_feature="softplus")
        assert cfg.output_feature == OutputFeature.Softplus
        assert str(cfg.activation) == "sin"


class TestInit:
    def test_is_deterministic(self):
        cfg = NetworkConfig(4, 12, 8, 3)
        a, b = init_glorot_normal(cfg, 5), init_glorot_normal(cfg, 5)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])
        assert not np.array_equal(a["W1"], init_glorot_normal(cfg, 6)["W1"])

    def test_biases_start_at_zero(self):
        params = init_glorot_normal(NetworkConfig(4, 12, 8, 3), 0)
        for name in ["b1", "b2", "bz1", "bz2", "bz3", "b"]:
            assert not params[name].any()

    def test_weight_spread(self):
        params = init_glorot_normal(NetworkConfig(200, 200, 200, 1), 0)
        assert params["W1"].std() == pytest.approx(np.sqrt(2.0 / 400), rel=0.05)
        assert abs(params["W1"].mean()) < 0.005


class TestForward:
    def test_single_gate_by_hand(self):
        cfg = NetworkConfig(1, 1, 1, 1)
        params = {
            "W1": np.array([[0.5]]),
            "b1": np.array([0.1]),
            "W2": np.array([[-0.3]]),
            "b2": np.array([0.2]),
            "Wz1": np.array([[0.7]]),
            "bz1": np.array([0.0]),
            "W": np.array([[2.0]]),
            "b": np.array([-1.0]),
        }
        x = 0.4
        u, v, z = np.sin(0.5 * x + 0.1), np.sin(-0.3 * x + 0.2), np.sin(0.7 * x)
        expected = 2.0 * ((1 - z) * u + z * v) - 1.0
        out = forward(cfg, params, np.array([[x]]))
        assert out.shape == (1, 1)
        assert out.item() == pytest.approx(expected, abs=1e-15)

    def test_softplus_output_is_positive(self):
        cfg = NetworkConfig(4, 6, 8, 2, output_feature=OutputFeature.Softplus)
        params = init_glorot_normal(cfg, 1)
        params["b"] = np.full(6, -30.0)
        out = forward(cfg, params, np.random.default_rng(0).normal(size=(10, 4))).value
        assert out.shape == (10, 6)
        assert np.all(out > 0)

    def test_wrong_input_width(self):
        cfg = NetworkConfig(4, 6, 8, 2)
        with pytest.raises(ValueError) as e:
            forward(cfg, init_glorot_normal(cfg, 0), np.ones((3, 5)))
        assert str(e.value) == "Network input must have shape (batch, 4), found (3, 5)"

    def test_wrong_parameter_shape(self):
        cfg = NetworkConfig(4, 6, 8, 2)
        params = init_glorot_normal(cfg, 0)
        params["Wz2"] = np.ones((4, 8))
        with pytest.raises(ValueError) as e:
            forward(cfg, params, np.ones((3, 4)))
        assert str(e.value) == "Parameter `Wz2` must have shape (8, 8), found (4, 8)"

    def test_gradients(self):
        cfg = NetworkConfig(2, 3, 4, 2, output_feature=OutputFeature.Softplus)
        params = init_glorot_normal(cfg, 3)
        params["b1"] = np.array([0.1, -0.2, 0.3, 0.05])
        x = np.array([[0.3, -0.8], [0.9, 0.1]])
        assert_gradients_match(lambda p: ad.square(forward(cfg, p, x)).mean(), params)


class TestInputScaler:
    def test_maps_ranges_to_unit_box(self):
        scaler = InputScaler.from_ranges([(-0.5, 0.5), (0.0, 2.0), (1.0, 1.0)])
        out = scaler(np.array([[-0.5, 0.0, 1.0], [0.5, 2.0, 1.0]])).value
        np.testing.assert_allclose(out, [[-1.0, -1.0, 0.0], [1.0, 1.0, 0.0]])

    def test_rejects_non_positive_scale(self):
        with pytest.raises(ValueError) as e:
            InputScaler(center=[0.0], scale=[0.0])
        assert str(e.value) == "Scaler scales must be positive"

    def test_dict_form(self):
        scaler = InputScaler.from_ranges([(-1.0, 3.0)])
        assert scaler.to_dict() == {"center": [1.0], "scale": [2.0]}
        back = InputScaler.from_dict(scaler.to_dict())
        np.testing.assert_array_equal(back.center, scaler.center)


class TestAssembly:
    def test_unstacked_shapes(self, small_assembly, ic_batch):
        params = small_assembly.init_params(0)
        y, z = small_assembly.predict_stages(params, ic_batch)
        assert y.shape == (4, 3, 4)
        assert z.shape == (4, 3, 2)
        assert np.all(z.value > 0)
        assert small_assembly.y_names == ["y"] and small_assembly.z_names == ["z"]

    def test_unstacked_defaults(self, gauss2):
        assembly = build_assembly(4, 2, gauss2, 0.1)
        assert (assembly.networks["y"].width, assembly.networks["y"].depth) == (100, 4)
        assert (assembly.networks["z"].width, assembly.networks["z"].depth) == (40, 4)
        assert assembly.networks["y"].out_dim == 12
        assert assembly.networks["z"].out_dim == 6

    def test_stacked_uses_one_network_per_state(self, gauss2, ic_batch):
        assembly = build_assembly(4, 2, gauss2, 0.1, mode="stacked")
        assert sorted(assembly.networks) == ["y0", "y1", "y2", "y3", "z0", "z1"]
        assert all(cfg.width == 25 and cfg.depth == 4 and cfg.out_dim == 3 for cfg in assembly.networks.values())
        params = assembly.init_params(1)
        y, z = assembly.predict_stages(params, ic_batch)
        assert y.shape == (4, 3, 4) and z.shape == (4, 3, 2)

    def test_stacked_slot_layout(self, gauss2, ic_batch):
        assembly = build_assembly(4, 2, gauss2, 0.1, mode=AssemblyMode.Stacked, y_width=3, y_depth=1)
        params = assembly.init_params(2)
        y, _ = assembly.predict_stages(params, ic_batch)
        single = forward(
            assembly.networks["y2"],
            {key: params[f"y2.{key}"] for key in assembly.networks["y2"].param_shapes()},
            assembly.scaler(ic_batch),
        )
        np.testing.assert_array_equal(y.value[:, :, 2], single.value)

    def test_init_is_per_network(self, small_assembly):
        params = small_assembly.init_params(0)
        assert set(params) == set(small_assembly.param_shapes())
        assert not np.array_equal(params["y.W1"], params["z.W1"])
        again = small_assembly.init_params(0)
        np.testing.assert_array_equal(params["z.Wz2"], again["z.Wz2"])

    def test_rejects_wrong_output_feature(self, gauss2):
        slots = gauss2.nu + 1
        networks = {
            "y": NetworkConfig(4, 4 * slots, 4, 1),
            "z": NetworkConfig(4, 2 * slots, 4, 1),
        }
        with pytest.raises(ValueError) as e:
            PinnAssembly(AssemblyMode.Unstacked, networks, gauss2, 0.1, 4, 2)
        assert str(e.value) == "Network `z` must use the `softplus` output feature"

    def test_rejects_missing_network(self, gauss2):
        with pytest.raises(ValueError) as e:
            PinnAssembly(AssemblyMode.Unstacked, {"y": NetworkConfig(4, 12, 4, 1)}, gauss2, 0.1, 4, 2)
        assert str(e.value) == "Assembly is missing network `z`"

    def test_rejects_wrong_output_count(self, gauss2):
        networks = {
            "y": NetworkConfig(4, 8, 4, 1),
            "z": NetworkConfig(4, 6, 4, 1, output_feature=OutputFeature.Softplus),
        }
        with pytest.raises(ValueError) as e:
            PinnAssembly(AssemblyMode.Unstacked, networks, gauss2, 0.1, 4, 2)
        assert str(e.value) == "Network `y` must have 12 outputs, found 8"

    def test_rejects_wrong_batch(self, small_assembly):
        with pytest.raises(ValueError) as e:
            small_assembly.predict_stages(small_assembly.init_params(0), np.ones((2, 3)))
        assert str(e.value) == "Input batch must have shape (batch, 4), found (2, 3)"


class TestFlatten:
    def test_round_trip(self, small_assembly):
        params = small_assembly.init_params(4)
        vector, layout = flatten_params(params)
        assert vector.size == sum(v.size for v in params.values())
        back = unflatten_params(vector, layout)
        for name in params:
            np.testing.assert_array_equal(back[name], params[name])

    def test_length_mismatch(self):
        _, layout = flatten_params({"a": np.ones((2, 2))})
        with pytest.raises(ValueError) as e:
            unflatten_params(np.ones(3), layout)
        assert str(e.value) == "Parameter vector has 3 entries, layout expects 4"
