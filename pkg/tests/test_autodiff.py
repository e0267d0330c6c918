"""Tests for the reverse-mode tape, layers, Adam and parameter storage."""

import numpy as np
import pytest

from hybrid_ode.autodiff import (
    MECHANISTIC_VARIANCE,
    AdamState,
    AdjointTape,
    InitScheme,
    LstmSpec,
    MlpSpec,
    ParamLayout,
    ParamVector,
    SeededRng,
    adam_step,
    finite_diff_grad,
    init_params,
    lstm_forward,
    mlp_forward,
    ops,
    relative_errors,
    reverse_grad,
)
from hybrid_ode.core import ConfigError, ContractError, InputError, NumericError, ShapeError


def _vector(values: list[float], name: str = "w") -> ParamVector:
    return ParamVector(np.array(values, dtype=float), {name: (0, len(values))})


def _grad(fn, params: ParamVector) -> np.ndarray:
    with AdjointTape() as tape:
        theta = tape.watch(params)
        tape.set_root(fn(theta))
    return reverse_grad(tape)


def _value(fn, params: ParamVector) -> float:
    return fn(ops.Tensor(params.values)).item()


class TestReverseGrad:
    """Reverse-mode gradients against hand values and finite differences."""

    def test_quadratic(self) -> None:
        """Sum of squares at (1, 2) has gradient (2, 4)."""
        grad = _grad(lambda w: (w * w).sum(), _vector([1.0, 2.0]))
        np.testing.assert_allclose(grad, [2.0, 4.0])

    def test_unused_segment_has_zero_gradient(self) -> None:
        """A loss that ignores a segment leaves that segment's gradient at zero."""
        params = ParamVector(np.array([1.0, 2.0, 3.0]), {"a": (0, 1), "b": (1, 2)})
        grad = _grad(lambda w: ops.exp(w[0:1]).sum(), params)
        assert np.all(grad[params.span("b")] == 0.0)
        assert grad[0] == pytest.approx(np.e)

    def test_non_scalar_root_rejected(self) -> None:
        """A vector-valued root is a contract violation."""
        params = _vector([1.0, 2.0])
        with AdjointTape() as tape:
            theta = tape.watch(params)
            tape.set_root(theta * 2.0)
        with pytest.raises(ContractError, match="scalar"):
            reverse_grad(tape)

    def test_linearity(self) -> None:
        """Scaling the loss scales the gradient."""
        rng = SeededRng(3)
        params = _vector(list(rng.normal(1.0, 6)))

        def loss(w):
            return (ops.tanh(w) * ops.sigmoid(w[::-1])).sum()

        base = _grad(loss, params)
        scaled = _grad(lambda w: 3.5 * loss(w), params)
        np.testing.assert_allclose(scaled, 3.5 * base, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("seed", range(20))
    def test_two_layer_mlp_matches_finite_differences(self, seed: int) -> None:
        """Random two-layer MLP loss gradients agree with central differences."""
        rng = SeededRng(seed)
        spec = MlpSpec(in_dim=3, hidden_layers=2, hidden_units=5, out_dim=2)
        layout = ParamLayout()
        layout.add("mlp", spec.weight_count, InitScheme.FAN_IN_UNIFORM, spec.init_bounds())
        params = init_params(layout, rng)
        x = rng.derive("x").normal(1.0, (4, 3))
        target = rng.derive("y").normal(1.0, (4, 2))

        def loss(w):
            out = mlp_forward(spec, w, x)
            return ops.square(out - target).mean()

        analytic = _grad(loss, params)
        numeric = finite_diff_grad(lambda p: _value(loss, p), params)
        assert np.mean(relative_errors(analytic, numeric) <= 1e-4) >= 0.95

    def test_composite_ops_match_finite_differences(self) -> None:
        """Structure ops (concat, stack, where, max, min, matmul) differentiate correctly."""
        rng = SeededRng(11)
        params = _vector(list(rng.normal(1.0, 8)))
        mask = np.array([True, False, True, False])

        def loss(w):
            a = ops.reshape(w[0:4], (2, 2))
            b = ops.stack([w[4:6], w[6:8]], axis=0)
            m = ops.matmul(a, ops.transpose(b))
            c = ops.concat([m, ops.reshape(w[0:2], (2, 1))], axis=1)
            sel = ops.where(mask, w[0:4], ops.log(ops.exp(w[4:8]) + 1.0))
            return (
                ops.tmax(c, axis=1).sum()
                + ops.tmin(c, axis=0).sum()
                + (sel / (1.0 + ops.square(w[4:8]))).sum()
                + ops.power(ops.exp(w[0:2]), 1.5).sum()
                + ops.logsumexp(w[2:6])
            )

        analytic = _grad(loss, params)
        numeric = finite_diff_grad(lambda p: _value(loss, p), params)
        assert np.all(relative_errors(analytic, numeric) <= 1e-4)

    def test_relu_subgradient_at_zero(self) -> None:
        """ReLU passes no gradient at exactly zero."""
        grad = _grad(lambda w: ops.relu(w).sum(), _vector([0.0, 1.0, -1.0]))
        np.testing.assert_array_equal(grad, [0.0, 1.0, 0.0])

    def test_broadcast_gradient_is_summed(self) -> None:
        """A bias broadcast over a batch receives the summed adjoint."""
        x = np.ones((5, 2))
        grad = _grad(lambda w: (x + w).sum(), _vector([0.0, 0.0]))
        np.testing.assert_array_equal(grad, [5.0, 5.0])

    def test_no_tape_means_untracked(self) -> None:
        """Operations outside a tape produce plain tensors."""
        out = ops.exp(np.array([0.0]))
        assert out.tape is None
        assert out.item() == 1.0

    def test_watch_twice_rejected(self) -> None:
        """A tape watches a single parameter vector."""
        params = _vector([1.0])
        with AdjointTape() as tape:
            tape.watch(params)
            with pytest.raises(ContractError):
                tape.watch(params)


class TestFiniteDiff:
    """Finite-difference oracle."""

    def test_square(self) -> None:
        """Derivative of w^2 at 3 is 6."""
        grad = finite_diff_grad(lambda p: p.values[0] ** 2, _vector([3.0]), h=1e-5)
        assert grad[0] == pytest.approx(6.0, abs=1e-8)

    def test_constant(self) -> None:
        """A constant function has zero gradient."""
        grad = finite_diff_grad(lambda p: 4.2, _vector([1.0, 2.0]))
        np.testing.assert_array_equal(grad, [0.0, 0.0])

    def test_sine(self) -> None:
        """Derivative of sin at 0 is 1."""
        grad = finite_diff_grad(lambda p: float(np.sin(p.values[0])), _vector([0.0]))
        assert grad[0] == pytest.approx(1.0, abs=1e-9)

    def test_non_finite_evaluation(self) -> None:
        """Non-finite evaluations raise a numeric error."""
        with pytest.raises(NumericError):
            finite_diff_grad(lambda p: float("inf"), _vector([0.0]))

    def test_step_must_be_positive(self) -> None:
        """Non-positive step sizes are rejected."""
        with pytest.raises(ConfigError):
            finite_diff_grad(lambda p: 0.0, _vector([0.0]), h=0.0)


class TestMlp:
    """MLP forward pass."""

    def test_zero_weights(self) -> None:
        """All-zero weights map any input to zero."""
        spec = MlpSpec(in_dim=3, hidden_layers=2, hidden_units=4, out_dim=2)
        out = mlp_forward(spec, np.zeros(spec.weight_count), np.array([1.0, -2.0, 3.0]))
        np.testing.assert_array_equal(out.value, [0.0, 0.0])

    def test_identity_linear_layer(self) -> None:
        """A single affine layer with identity weights returns its input."""
        spec = MlpSpec(in_dim=2, hidden_layers=0, out_dim=2)
        weights = np.concatenate([np.eye(2).reshape(-1), np.zeros(2)])
        out = mlp_forward(spec, weights, np.array([1.5, -2.0]))
        np.testing.assert_array_equal(out.value, [1.5, -2.0])

    def test_relu_pair_reconstructs_input(self) -> None:
        """relu(x) - relu(-x) equals x."""
        spec = MlpSpec(in_dim=1, hidden_layers=1, hidden_units=2, out_dim=1)
        weights = np.array([1.0, -1.0, 0.0, 0.0, 1.0, -1.0, 0.0])
        assert mlp_forward(spec, weights, np.array([0.7])).value[0] == pytest.approx(0.7)
        assert mlp_forward(spec, weights, np.array([-0.7])).value[0] == pytest.approx(-0.7)

    def test_weight_count(self) -> None:
        """A 3-16-16-1 network has 353 parameters."""
        spec = MlpSpec(in_dim=3, hidden_layers=2, hidden_units=16, out_dim=1)
        assert spec.weight_count == 353

    def test_dimension_mismatch(self) -> None:
        """Wrong input width raises a shape error."""
        spec = MlpSpec(in_dim=3, hidden_layers=1, hidden_units=4, out_dim=1)
        with pytest.raises(ShapeError):
            mlp_forward(spec, np.zeros(spec.weight_count), np.zeros(2))
        with pytest.raises(ShapeError):
            mlp_forward(spec, np.zeros(spec.weight_count + 1), np.zeros(3))

    def test_non_finite_input(self) -> None:
        """Non-finite inputs raise a numeric error."""
        spec = MlpSpec(in_dim=1, hidden_layers=1, hidden_units=2, out_dim=1)
        with pytest.raises(NumericError):
            mlp_forward(spec, np.zeros(spec.weight_count), np.array([np.nan]))

    def test_dropout_zero_is_identity(self) -> None:
        """Training with p = 0 matches evaluation exactly."""
        rng = SeededRng(5)
        spec = MlpSpec(in_dim=3, hidden_layers=2, hidden_units=8, out_dim=2, dropout=0.0)
        w = rng.normal(1.0, spec.weight_count)
        x = rng.normal(1.0, (4, 3))
        train = mlp_forward(spec, w, x, training=True, rng=rng.derive(1))
        evaluate = mlp_forward(spec, w, x)
        np.testing.assert_array_equal(train.value, evaluate.value)

    def test_dropout_deterministic_per_seed(self) -> None:
        """Dropout masks are reproducible from the random stream."""
        spec = MlpSpec(in_dim=2, hidden_layers=1, hidden_units=32, out_dim=1, dropout=0.5)
        w = SeededRng(1).normal(1.0, spec.weight_count)
        x = np.ones((3, 2))
        a = mlp_forward(spec, w, x, training=True, rng=SeededRng(9))
        b = mlp_forward(spec, w, x, training=True, rng=SeededRng(9))
        np.testing.assert_array_equal(a.value, b.value)


class TestLstm:
    """LSTM forward pass."""

    def test_zero_weights(self) -> None:
        """Zero weights keep h and c at zero."""
        spec = LstmSpec(layers=2, in_dim=3, hidden_dim=4)
        out = lstm_forward(spec, np.zeros(spec.weight_count), np.ones((5, 3)))
        for h, c in zip(out.h, out.c):
            np.testing.assert_array_equal(h.value, np.zeros(4))
            np.testing.assert_array_equal(c.value, np.zeros(4))

    def test_single_step_equals_cell(self) -> None:
        """A length-1 sequence equals a hand-written cell application."""
        rng = SeededRng(2)
        spec = LstmSpec(layers=1, in_dim=2, hidden_dim=3)
        w = rng.normal(0.5, spec.weight_count)
        x = np.array([0.3, -0.8])
        out = lstm_forward(spec, w, x[None, :])

        W_ih = w[: 2 * 12].reshape(2, 12)
        W_hh = w[24 : 24 + 36].reshape(3, 12)
        b = w[60:72]
        z = x @ W_ih + np.zeros(3) @ W_hh + b

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        c = sig(z[:3]) * np.tanh(z[6:9])
        h = sig(z[9:12]) * np.tanh(c)
        np.testing.assert_allclose(out.top_c.value, c, atol=1e-12)
        np.testing.assert_allclose(out.top_h.value, h, atol=1e-12)

    def test_order_matters(self) -> None:
        """Swapping two distinct inputs changes the final state."""
        rng = SeededRng(4)
        spec = LstmSpec(layers=1, in_dim=2, hidden_dim=3)
        w = rng.normal(1.0, spec.weight_count)
        seq = np.array([[1.0, 0.0], [0.0, 1.0]])
        a = lstm_forward(spec, w, seq)
        b = lstm_forward(spec, w, seq[::-1])
        assert not np.allclose(a.top_h.value, b.top_h.value)
        assert not np.allclose(a.top_c.value, b.top_c.value)

    def test_empty_sequence(self) -> None:
        """An empty sequence is an input error."""
        spec = LstmSpec(layers=1, in_dim=2, hidden_dim=3)
        with pytest.raises(InputError):
            lstm_forward(spec, np.zeros(spec.weight_count), np.zeros((0, 2)))

    def test_batched_matches_unbatched(self) -> None:
        """Running a batch equals running each sequence alone."""
        rng = SeededRng(8)
        spec = LstmSpec(layers=2, in_dim=2, hidden_dim=3)
        w = rng.normal(0.5, spec.weight_count)
        seqs = rng.normal(1.0, (4, 2, 2))
        batched = lstm_forward(spec, w, seqs)
        for k in range(2):
            single = lstm_forward(spec, w, seqs[:, k, :])
            np.testing.assert_allclose(batched.top_h.value[k], single.top_h.value, atol=1e-14)


class TestAdam:
    """Adam update rule."""

    def test_zero_gradient_fixed_point(self) -> None:
        """Zero gradients leave parameters and moments unchanged."""
        params = _vector([1.0, -2.0])
        state = AdamState.create(2, lr=0.1)
        updated = adam_step(state, params, np.zeros(2))
        np.testing.assert_array_equal(updated.values, params.values)
        assert np.all(state.first_moment == 0.0)
        assert state.step == 1

    def test_first_step_is_signed_lr(self) -> None:
        """The first update is -lr * sign(g) up to eps."""
        params = _vector([0.0, 0.0, 0.0])
        state = AdamState.create(3, lr=0.01)
        updated = adam_step(state, params, np.array([3.0, -0.2, 1e-3]))
        np.testing.assert_allclose(updated.values, [-0.01, 0.01, -0.01], rtol=1e-4)

    def test_linear_loss_monotone(self) -> None:
        """Two steps on a linear loss move further along -g."""
        params = _vector([0.0])
        state = AdamState.create(1, lr=0.05)
        first = adam_step(state, params, np.array([2.0]))
        second = adam_step(state, first, np.array([2.0]))
        assert second.values[0] < first.values[0] < 0.0

    def test_length_mismatch(self) -> None:
        """Gradient length must match the parameters."""
        state = AdamState.create(2, lr=0.1)
        with pytest.raises(ShapeError):
            adam_step(state, _vector([1.0, 2.0]), np.zeros(3))

    def test_frozen_entries_do_not_move(self) -> None:
        """Masked entries stay put and keep zero moments."""
        params = _vector([1.0, 1.0])
        state = AdamState.create(2, lr=0.1)
        updated = adam_step(state, params, np.array([1.0, 1.0]), frozen=np.array([True, False]))
        assert updated.values[0] == 1.0
        assert updated.values[1] < 1.0
        assert state.second_moment[0] == 0.0


class TestParams:
    """Parameter vector storage and initialization."""

    @pytest.fixture
    def layout(self) -> ParamLayout:
        """Layout with one segment per scheme."""
        spec = MlpSpec(in_dim=4, hidden_layers=1, hidden_units=6, out_dim=2)
        layout = ParamLayout()
        layout.add("mech", 10_000, InitScheme.MECHANISTIC)
        layout.add("custom", 50, InitScheme.STANDARD_NORMAL)
        layout.add("mlp", spec.weight_count, InitScheme.FAN_IN_UNIFORM, spec.init_bounds())
        return layout

    def test_deterministic(self, layout: ParamLayout) -> None:
        """Same seed, same vector."""
        a = init_params(layout, SeededRng(2024))
        b = init_params(layout, SeededRng(2024))
        np.testing.assert_array_equal(a.values, b.values)

    def test_mechanistic_variance(self, layout: ParamLayout) -> None:
        """Mechanistic draws have variance 1/400 within 10%."""
        params = init_params(layout, SeededRng(7))
        variance = float(np.var(params.segment("mech")))
        assert abs(variance - MECHANISTIC_VARIANCE) <= 0.1 * MECHANISTIC_VARIANCE

    def test_fan_in_support(self, layout: ParamLayout) -> None:
        """First-layer entries lie within 1/sqrt(fan_in)."""
        params = init_params(layout, SeededRng(7))
        first_layer = params.segment("mlp")[: 4 * 6 + 6]
        assert np.all(np.abs(first_layer) <= 1.0 / np.sqrt(4))

    def test_scheme_override(self, layout: ParamLayout) -> None:
        """An explicit scheme applies to every segment."""
        params = init_params(layout, SeededRng(7), scheme="standard_normal")
        assert np.std(params.segment("mech")) > 0.5

    def test_unknown_scheme(self, layout: ParamLayout) -> None:
        """Unknown scheme names raise a config error."""
        with pytest.raises(ConfigError, match="Unknown init scheme"):
            init_params(layout, SeededRng(7), scheme="xavier")

    def test_segments_must_tile(self) -> None:
        """Overlapping segments are rejected."""
        with pytest.raises(ShapeError):
            ParamVector(np.zeros(3), {"a": (0, 2), "b": (1, 2)})

    def test_non_finite_rejected(self) -> None:
        """Non-finite values are rejected."""
        with pytest.raises(NumericError):
            ParamVector(np.array([np.inf]), {"a": (0, 1)})

    def test_unknown_segment(self) -> None:
        """Looking up an unregistered segment raises a config error."""
        with pytest.raises(ConfigError):
            _vector([1.0]).segment("nope")

    def test_json_is_bit_exact(self) -> None:
        """Values survive JSON serialization bit for bit."""
        values = SeededRng(1).normal(1.0, 20) / 3.0
        params = ParamVector(values, {"a": (0, 7), "b": (7, 13)})
        restored = ParamVector.from_json(params.to_json())
        assert restored.values.tobytes() == params.values.tobytes()
        assert restored.segments == params.segments

    def test_rng_child_streams_independent_of_order(self) -> None:
        """Derived streams do not depend on draws from other streams."""
        base = SeededRng(2024)
        first = base.derive("x").normal(1.0, 3)
        base.derive("y").normal(1.0, 100)
        again = SeededRng(2024).derive("x").normal(1.0, 3)
        np.testing.assert_array_equal(first, again)

    def test_string_keys_sharing_a_prefix_give_distinct_streams(self) -> None:
        """Keys that differ only after their first bytes still select different streams."""
        base = SeededRng(1)
        a = base.derive("syn-00001").normal(1.0, 8)
        b = base.derive("syn-00007").normal(1.0, 8)
        c = base.derive("patient-0001-visit").normal(1.0, 8)
        d = base.derive("patient-0001-visit2").normal(1.0, 8)
        assert not np.array_equal(a, b)
        assert not np.array_equal(c, d)

    def test_derived_streams_are_distinct_across_many_keys(self) -> None:
        """A hundred sequential ids yield a hundred different first draws."""
        base = SeededRng(7)
        firsts = {float(base.derive(f"syn-{i:05d}").uniform(0.0, 1.0)) for i in range(100)}
        assert len(firsts) == 100
