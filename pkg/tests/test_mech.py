"""Tests for the mechanistic vector fields, parameter sets and causal graphs."""

import logging

import numpy as np
import pytest
from pydantic import ValidationError

from hybrid_ode.autodiff import SeededRng, ops
from hybrid_ode.core import ConfigError, DataError, DomainError, NumericError, ShapeError
from hybrid_ode.mech import (
    FULL_STATES,
    REDUCED_STATES,
    T1DEXI_INPUTS,
    CausalGraph,
    MealTracker,
    SyntheticParams,
    UvaFullParams,
    UvaReducedParams,
    default_full_params,
    default_reduced_params,
    get_mech,
    k_empt,
    meal_sizes,
    resting_full_state,
    resting_reduced_state,
    risk_factor,
    simulate,
    synthetic_field,
    uva_full_field,
    uva_graphs,
    uva_reduced_field,
)

G_P = REDUCED_STATES.index("G_p")


@pytest.fixture
def reduced() -> dict[str, float]:
    """Illustrative reduced parameters as a mapping."""
    return default_reduced_params().model_dump()


@pytest.fixture
def full() -> dict[str, float]:
    """Illustrative full parameters as a mapping."""
    return default_full_params().model_dump()


def _no_inputs() -> dict[str, float]:
    return {"carbs": 0.0, "insulin": 0.0}


class TestGastricEmptying:
    """k_empt values and range."""

    def test_degenerate_range(self, reduced: dict[str, float]) -> None:
        """Equal k_min and k_max give a constant rate."""
        p = {**reduced, "k_min": 0.02, "k_max": 0.02}
        rate = k_empt(np.array([0.0, 500.0, 5000.0]), np.array([0.0, 10.0, 80.0]), p)
        np.testing.assert_allclose(rate.value, 0.02, rtol=1e-12)

    def test_empty_stomach_is_k_max(self, reduced: dict[str, float]) -> None:
        """With no stomach content and no meal both tanh terms vanish."""
        assert k_empt(0.0, 0.0, reduced).item() == pytest.approx(reduced["k_max"], rel=1e-12)

    def test_bounded_by_analytic_range(self, reduced: dict[str, float]) -> None:
        """1,000 random inputs stay within [k_min, k_min + 2 (k_max - k_min)]."""
        rng = SeededRng(11)
        Q = rng.uniform(0.0, 1e5, 1000)
        D = rng.uniform(0.0, 200.0, 1000)
        rate = k_empt(Q, D, reduced).value
        low = reduced["k_min"]
        high = low + 2.0 * (reduced["k_max"] - reduced["k_min"])
        assert np.all(rate >= low)
        assert np.all(rate <= high)


class TestRiskFactor:
    """Hypoglycemia risk piecewise behavior."""

    def test_zero_at_basal(self, full: dict[str, float]) -> None:
        """Risk vanishes at G_b and above."""
        assert risk_factor(full["G_b"], full).item() == 0.0
        assert risk_factor(full["G_b"] * 1.5, full).item() == 0.0

    def test_plateau_below_threshold(self, full: dict[str, float]) -> None:
        """Risk is constant below G_th."""
        half = risk_factor(full["G_th"] / 2.0, full).item()
        quarter = risk_factor(full["G_th"] / 4.0, full).item()
        assert half == quarter
        assert half > 0.0

    def test_matches_formula_between_thresholds(self, full: dict[str, float]) -> None:
        """Between G_th and G_b the risk is 10 |log G - log G_b|^(2 r2)."""
        G = 0.5 * (full["G_th"] + full["G_b"])
        expected = 10.0 * abs(np.log(G) - np.log(full["G_b"])) ** (2.0 * full["r2"])
        assert risk_factor(G, full).item() == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("name", ["G_b", "G_th"])
    def test_continuous_at_breakpoints(self, full: dict[str, float], name: str) -> None:
        """Values just below and above each breakpoint agree."""
        point = full[name]
        below = risk_factor(point - 1e-9, full).item()
        above = risk_factor(point + 1e-9, full).item()
        assert abs(below - above) < 1e-6

    def test_accepts_parameter_model(self) -> None:
        """A UvaFullParams instance works as well as a mapping."""
        params = default_full_params()
        assert risk_factor(params.G_b, params).item() == 0.0

    def test_non_positive_glucose_rejected(self, full: dict[str, float]) -> None:
        """G <= 0 is outside the domain."""
        with pytest.raises(DomainError, match="G > 0"):
            risk_factor(0.0, full)

    def test_inverted_thresholds_rejected(self, full: dict[str, float]) -> None:
        """G_th must lie below G_b."""
        with pytest.raises(DomainError, match="G_th < G_b"):
            risk_factor(100.0, {**full, "G_th": full["G_b"] + 1.0})


class TestFullField:
    """Full glucose-insulin-glucagon field."""

    def test_zero_state_glucose_derivative(self, full: dict[str, float]) -> None:
        """At the zero state dG_p/dt is exactly k_p1 - F_cns."""
        result = uva_full_field(np.zeros(len(FULL_STATES)), _no_inputs(), 0.0, full)
        assert result.derivative.value[0] == full["k_p1"] - full["F_cns"]

    def test_carbs_enter_only_stomach(self, full: dict[str, float]) -> None:
        """A carbohydrate input changes only the Q_sto1 derivative, by D times the rate."""
        state = resting_full_state(default_full_params())
        base = uva_full_field(state, {"carbs": 0.0, "insulin": 1.0}, 0.0, full).derivative.value
        fed = uva_full_field(state, {"carbs": 20.0, "insulin": 1.0}, 20.0, full).derivative.value
        diff = fed - base
        q = FULL_STATES.index("Q_sto1")
        assert diff[q] == pytest.approx(400.0)
        assert np.all(np.delete(diff, q) == 0.0)

    def test_renal_excretion_diagnostic(self, full: dict[str, float]) -> None:
        """E is zero while G_p <= k_e2 and linear above."""
        state = resting_full_state(default_full_params())
        low = uva_full_field(state, _no_inputs(), 0.0, full).diagnostics["E"].item()
        assert low == 0.0
        state[0] = full["k_e2"] + 10.0
        high = uva_full_field(state, _no_inputs(), 0.0, full).diagnostics["E"].item()
        assert high == pytest.approx(full["k_e1"] * 10.0)

    def test_resting_state_is_fixed_point(self) -> None:
        """The illustrative parameters hold the resting state under basal insulin."""
        params = default_full_params()
        state = resting_full_state(params)
        result = uva_full_field(state, {"carbs": 0.0, "insulin": 1.0}, 0.0, params.model_dump())
        np.testing.assert_allclose(result.derivative.value, 0.0, atol=1e-9)

    def test_algebraic_srd_keeps_state_constant(self, full: dict[str, float]) -> None:
        """Without dynamic SR_d its derivative is zero."""
        state = resting_full_state(default_full_params())
        state[0] = 150.0
        result = uva_full_field(state, _no_inputs(), 0.0, full, dynamic_srd=False)
        assert result.derivative.value[FULL_STATES.index("SR_d")] == 0.0

    def test_batched_matches_single(self, full: dict[str, float]) -> None:
        """Rows of a batch are independent trajectories."""
        rng = SeededRng(5)
        states = rng.uniform(1.0, 100.0, (3, len(FULL_STATES)))
        inputs = {"carbs": np.array([0.0, 5.0, 0.0]), "insulin": np.array([1.0, 0.0, 2.0])}
        meal = np.array([0.0, 5.0, 0.0])
        batched = uva_full_field(states, inputs, meal, full).derivative.value
        for b in range(3):
            single = uva_full_field(
                states[b],
                {k: v[b] for k, v in inputs.items()},
                meal[b],
                full,
            ).derivative.value
            np.testing.assert_allclose(batched[b], single, rtol=1e-14)

    def test_wrong_width_rejected(self, full: dict[str, float]) -> None:
        """A reduced-size state is a shape error for the full field."""
        with pytest.raises(ShapeError, match="20 columns"):
            uva_full_field(np.zeros(9), _no_inputs(), 0.0, full)

    def test_non_finite_state_rejected(self, full: dict[str, float]) -> None:
        """A NaN state is a numeric error."""
        state = np.zeros(len(FULL_STATES))
        state[3] = np.nan
        with pytest.raises(NumericError):
            uva_full_field(state, _no_inputs(), 0.0, full)


class TestReducedField:
    """Reduced glucose-insulin field and simulation properties."""

    def test_zero_state_glucose_derivative(self, reduced: dict[str, float]) -> None:
        """At the zero state dG_p/dt is exactly k_p1 - F_cns."""
        ds = uva_reduced_field(np.zeros(len(REDUCED_STATES)), _no_inputs(), 0.0, reduced)
        assert ds.value[G_P] == reduced["k_p1"] - reduced["F_cns"]

    def test_insulin_enters_only_plasma_insulin(self, reduced: dict[str, float]) -> None:
        """The infusion rate appears once, in dI_p/dt."""
        state = resting_reduced_state(default_reduced_params())
        base = uva_reduced_field(state, {"carbs": 0.0, "insulin": 0.0}, 0.0, reduced).value
        dosed = uva_reduced_field(state, {"carbs": 0.0, "insulin": 3.0}, 0.0, reduced).value
        diff = dosed - base
        i = REDUCED_STATES.index("I_p")
        assert diff[i] == pytest.approx(3.0)
        assert np.all(np.delete(diff, i) == 0.0)

    def test_resting_state_is_fixed_point(self) -> None:
        """The resting state balances under basal insulin."""
        params = default_reduced_params()
        state = resting_reduced_state(params)
        ds = uva_reduced_field(state, {"carbs": 0.0, "insulin": 1.0}, 0.0, params.model_dump())
        np.testing.assert_allclose(ds.value, 0.0, atol=1e-9)

    def test_sparsity_matches_graph(self, reduced: dict[str, float]) -> None:
        """Perturbing each state and input moves exactly the derivatives the graph lists."""
        graph = uva_graphs()["reduced"]
        rng = SeededRng(21)
        state = rng.uniform(50.0, 500.0, len(REDUCED_STATES))
        inputs = {"carbs": 2.0, "insulin": 1.5}
        meal = 30.0
        base = uva_reduced_field(state, inputs, meal, reduced).value

        for j in range(len(REDUCED_STATES)):
            moved = state.copy()
            moved[j] += 1.0
            changed = uva_reduced_field(moved, inputs, meal, reduced).value != base
            np.testing.assert_array_equal(changed, graph.state_matrix[:, j], err_msg=REDUCED_STATES[j])

        for k, role in enumerate(T1DEXI_INPUTS):
            shifted = {**inputs}
            if role in shifted:
                shifted[role] += 1.0
            changed = uva_reduced_field(state, shifted, meal, reduced).value != base
            np.testing.assert_array_equal(changed, graph.input_matrix[:, k], err_msg=role)

    def _glucose(self, carbs: np.ndarray, insulin: np.ndarray) -> np.ndarray:
        params = default_reduced_params()
        trajectory = simulate(
            uva_reduced_field,
            REDUCED_STATES,
            resting_reduced_state(params),
            {"carbs": carbs, "insulin": insulin},
            params.model_dump(),
        )
        return trajectory[:, G_P]

    def test_carb_bolus_raises_glucose(self) -> None:
        """A carbohydrate bolus keeps glucose at or above baseline for 90 steps."""
        carbs = np.zeros(90)
        insulin = np.ones(90)
        baseline = self._glucose(carbs, insulin)
        carbs[0] = 50.0
        fed = self._glucose(carbs, insulin)
        assert np.all(fed >= baseline - 1e-9)
        assert fed[-1] > baseline[-1]

    def test_insulin_bolus_lowers_glucose(self) -> None:
        """An insulin bolus keeps glucose at or below baseline for 90 steps."""
        carbs = np.zeros(90)
        insulin = np.ones(90)
        baseline = self._glucose(carbs, insulin)
        insulin[0] += 5.0
        dosed = self._glucose(carbs, insulin)
        assert np.all(dosed <= baseline + 1e-9)
        assert dosed[-1] < baseline[-1]

    def test_meal_reaches_gut_after_two_transfers(self) -> None:
        """Carbs pass Q_sto1 then Q_sto2 before Q_gut, so Ra turns positive on the third state."""
        params = default_reduced_params()
        carbs = np.zeros(5)
        carbs[0] = 10.0
        trajectory = simulate(
            uva_reduced_field,
            REDUCED_STATES,
            np.zeros(len(REDUCED_STATES)),
            {"carbs": carbs, "insulin": np.zeros(5)},
            params.model_dump(),
        )
        q_gut = trajectory[:, REDUCED_STATES.index("Q_gut")]
        assert np.all(q_gut[:3] == 0.0)
        ra = params.f_frac * params.k_abs * q_gut[3] / params.BW
        assert ra > 0.0

    def test_simulate_rejects_ragged_inputs(self) -> None:
        """Input series must share one length."""
        params = default_reduced_params()
        with pytest.raises(ShapeError, match="different lengths"):
            simulate(
                uva_reduced_field,
                REDUCED_STATES,
                np.zeros(len(REDUCED_STATES)),
                {"carbs": np.zeros(4), "insulin": np.zeros(5)},
                params.model_dump(),
            )

    def test_simulate_reports_divergence(self) -> None:
        """A blow-up during simulation surfaces as a numeric error."""
        params = default_reduced_params().model_dump()
        params["k1"] = -1e200
        with pytest.raises(NumericError, match="non-finite"):
            simulate(
                uva_reduced_field,
                REDUCED_STATES,
                resting_reduced_state(default_reduced_params()),
                {"carbs": np.zeros(20), "insulin": np.ones(20)},
                params,
            )

    def test_simulate_clamps_mass_states_only(self) -> None:
        """With clamping, masses stop at zero while other states keep falling."""

        def draining(state, _inputs, _meal, _params):
            return ops.as_tensor(np.full_like(state, -5.0))

        names = ("G_p", "X")
        free = simulate(draining, names, np.ones(2), {"carbs": np.zeros(3)}, {})
        clamped = simulate(draining, names, np.ones(2), {"carbs": np.zeros(3)}, {}, clamp=True)
        np.testing.assert_allclose(free[-1], [-14.0, -14.0])
        np.testing.assert_allclose(clamped[:, 0], [1.0, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(clamped[:, 1], free[:, 1])


class TestMealTracker:
    """Meal size bookkeeping."""

    def test_contiguous_event_accumulates(self) -> None:
        """D grows during a run of carbs and resets to zero afterwards."""
        tracker = MealTracker()
        sizes = [tracker.update(c)[0] for c in [0.0, 20.0, 30.0, 0.0, 10.0]]
        assert sizes == [0.0, 20.0, 50.0, 0.0, 10.0]

    def test_future_continues_history(self) -> None:
        """A meal that started in the history keeps growing in the future window."""
        history = np.array([[0.0, 15.0], [0.0, 0.0]])
        future = np.array([[5.0, 0.0], [0.0, 8.0]])
        np.testing.assert_array_equal(meal_sizes(history, future), [[20.0, 0.0], [0.0, 8.0]])


class TestParameterSets:
    """Parameter files and array conversion."""

    def test_array_order_matches_names(self) -> None:
        """as_array follows declaration order."""
        params = default_reduced_params()
        values = params.as_array()
        assert values[UvaReducedParams.names().index("k_p1")] == params.k_p1
        assert len(values) == 25
        assert len(UvaFullParams.names()) == 50

    def test_from_array_length_checked(self) -> None:
        """A wrong number of values is a config error."""
        with pytest.raises(ConfigError, match="expects 3"):
            SyntheticParams.from_array([0.0, 1.0])

    def test_save_and_load(self, tmp_path) -> None:
        """Parameter files are keyed by field name."""
        path = tmp_path / "full.json"
        params = default_full_params()
        params.save(path)
        assert UvaFullParams.load(path) == params

    def test_invalid_file_is_data_error(self, tmp_path) -> None:
        """Unknown keys are rejected."""
        path = tmp_path / "bad.json"
        path.write_text('{"log_k_y": 0, "surprise": 1}', encoding="utf-8")
        with pytest.raises(DataError, match="SyntheticParams"):
            SyntheticParams.load(path)


class TestSyntheticField:
    """Single-state synthetic field."""

    def test_unit_rates_give_true_drift(self) -> None:
        """Zero log rates give -y + x1 - x2."""
        p = SyntheticParams().model_dump()
        ds = synthetic_field(np.array([[0.5], [2.0]]), {"x1": np.array([1.0, 0.0]), "x2": np.array([0.0, 3.0])}, 0.0, p)
        np.testing.assert_allclose(ds.value, [[0.5], [-5.0]])

    def test_wrong_width_rejected(self) -> None:
        """The synthetic state has one column."""
        with pytest.raises(ShapeError):
            synthetic_field(np.zeros((2, 3)), {"x1": 0.0, "x2": 0.0}, 0.0, SyntheticParams().model_dump())


class TestCausalGraphs:
    """Exported graphs and graph validation."""

    def test_reduced_insulin_action_row(self) -> None:
        """X depends only on itself and I_p."""
        graph = uva_graphs()["reduced"]
        row = graph.state_matrix[REDUCED_STATES.index("X")]
        assert {REDUCED_STATES[j] for j in np.flatnonzero(row)} == {"X", "I_p"}
        assert not graph.input_matrix[REDUCED_STATES.index("X")].any()

    def test_reduced_carbs_touch_only_stomach(self) -> None:
        """The carbohydrate column has a single entry at Q_sto1."""
        graph = uva_graphs()["reduced"]
        column = graph.input_matrix[:, T1DEXI_INPUTS.index("carbs")]
        assert [REDUCED_STATES[i] for i in np.flatnonzero(column)] == ["Q_sto1"]

    def test_reduced_meal_chain(self) -> None:
        """Q_sto1 -> Q_sto2 -> Q_gut -> G_p is a directed path."""
        A = uva_graphs()["reduced"].state_matrix
        idx = REDUCED_STATES.index
        assert A[idx("Q_sto2"), idx("Q_sto1")]
        assert A[idx("Q_gut"), idx("Q_sto2")]
        assert A[idx("G_p"), idx("Q_gut")]

    def test_full_graph_marks_reconstructed_activity_edges(self) -> None:
        """Heart rate and steps reach the output only through reconstructed edges."""
        graph = uva_graphs()["full"]
        assert "heart_rate->G_t" in graph.metadata["reconstructed_edges"]
        assert graph.unreachable_inputs() == []
        assert graph.n_states == 20

    def test_unreachable_input_warns(self, caplog: pytest.LogCaptureFixture) -> None:
        """An input with no path to the output is logged, not rejected."""
        with caplog.at_level(logging.WARNING, logger="hybrid_ode.mech.graphs"):
            graph = uva_graphs()["reduced"]
        assert set(graph.unreachable_inputs()) == {"heart_rate", "steps"}
        assert "no directed path" in caplog.text

    def test_output_state_out_of_range(self) -> None:
        """output_state must index a state."""
        with pytest.raises(ValidationError, match="out of range"):
            CausalGraph(state_names=["y"], input_names=[], A_s=[[True]], A_x=[[]], output_state=1)

    def test_shape_mismatch(self) -> None:
        """A_x must have one column per input."""
        with pytest.raises(ValidationError, match="A_x must be"):
            CausalGraph(state_names=["y"], input_names=["x"], A_s=[[True]], A_x=[[True, False]])

    def test_unknown_dependency(self) -> None:
        """Dependencies must name declared nodes."""
        with pytest.raises(ConfigError, match="Unknown node"):
            CausalGraph.from_dependencies(("y",), ("x",), {"y": ("z",)})

    def test_require_drivers(self) -> None:
        """A state without any permitted driver is a config error."""
        graph = CausalGraph(state_names=["a", "b"], input_names=["x"], A_s=[[True, False], [False, False]], A_x=[[True], [False]])
        with pytest.raises(ConfigError, match="State b"):
            graph.require_drivers()

    def test_dense_graph(self) -> None:
        """The dense graph permits every state and input."""
        graph = CausalGraph.dense(3, ["x1", "x2"])
        assert graph.permitted(1) == ([0, 1, 2], [0, 1])


class TestRegistry:
    """Mechanistic component lookup."""

    def test_reduced_unused_inputs(self) -> None:
        """The reduced model leaves heart rate and steps to the latent dynamics."""
        spec = get_mech("reduced")
        assert spec.unused_inputs == ("heart_rate", "steps")
        assert spec.n_params == 25
        assert len(spec.defaults()) == 25

    def test_synthetic_has_no_unused_inputs(self) -> None:
        """Both synthetic inputs enter the field."""
        assert get_mech("synthetic").unused_inputs == ()

    @pytest.mark.parametrize("kind", ["none", "bogus"])
    def test_missing_kind(self, kind: str) -> None:
        """Unknown kinds and the empty kind have no field."""
        with pytest.raises(ConfigError):
            get_mech(kind)
