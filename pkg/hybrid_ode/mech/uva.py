"""
Glucose-insulin vector fields.

Every function accepts numpy arrays or tape tensors for states, inputs and
parameters, so the same code serves ground-truth simulation and gradient-based
training. States are (batch, n_states) arrays; parameters are scalars or
per-trajectory (batch,) columns.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, Mapping

import numpy as np

from hybrid_ode.autodiff import Tensor, ops
from hybrid_ode.autodiff.tape import ArrayLike
from hybrid_ode.core.exceptions import DomainError, NumericError, ShapeError

from .models import FULL_STATES, MASS_STATES, REDUCED_STATES, MealTracker, UvaFullParams

logger = logging.getLogger(__name__)

Params = Mapping[str, ArrayLike]


@dataclass(frozen=True)
class FieldResult:
    """Derivative of the state plus named algebraic quantities."""

    derivative: Tensor
    diagnostics: dict[str, Tensor]


def k_empt(Q_sto: ArrayLike, D: ArrayLike, p: Params) -> Tensor:
    """
    Gastric emptying rate.

    Args:
        Q_sto: Stomach content (mg)
        D: Size of the current meal (g)
        p: Parameters with k_min, k_max, kappa_a, kappa_b, shape_b, shape_c

    Returns:
        Rate in 1/min, within [k_min, k_min + 2 (k_max - k_min)]

    """
    a, b = p["kappa_a"], p["kappa_b"]
    upper = ops.tanh(a * ops.as_tensor(Q_sto) - a * p["shape_b"] * D)
    lower = ops.tanh(b * ops.as_tensor(Q_sto) - b * p["shape_c"] * D)
    return p["k_min"] + (ops.as_tensor(p["k_max"]) - p["k_min"]) * (upper - lower + 2.0) / 2.0


def _risk(G: ArrayLike, p: Params) -> Tensor:
    G_b, G_th = ops.constant(p["G_b"]), ops.constant(p["G_th"])
    g = ops.as_tensor(G)
    floored = ops.where(g.value < G_th, p["G_th"], g)
    clipped = ops.where(floored.value > G_b, p["G_b"], floored)
    d = ops.log(clipped) - ops.log(p["G_b"])
    d2 = d * d
    positive = d2.value > 0.0
    # |d|^(2 r2) written through d^2 so fractional exponents stay real; the inner
    # where keeps the log argument away from zero.
    safe = ops.where(positive, d2, 1.0)
    return 10.0 * ops.where(positive, ops.exp(ops.as_tensor(p["r2"]) * ops.log(safe)), 0.0)


def risk_factor(G: ArrayLike, p: Params | UvaFullParams) -> Tensor:
    """
    Hypoglycemia risk.

    Zero at or above G_b, 10 |log G - log G_b|^(2 r2) between G_th and G_b, and
    constant below G_th.

    Args:
        G: Plasma glucose concentration (mg/dL)
        p: Parameters with G_b, G_th and r2

    Returns:
        Dimensionless risk

    Raises:
        DomainError: If G <= 0 or G_th >= G_b

    """
    params = p.model_dump() if isinstance(p, UvaFullParams) else p
    if np.any(ops.constant(G) <= 0.0):
        msg = "risk_factor needs G > 0"
        raise DomainError(msg)
    if np.any(ops.constant(params["G_th"]) >= ops.constant(params["G_b"])):
        msg = "risk_factor needs G_th < G_b"
        raise DomainError(msg)
    return _risk(G, params)


def _columns(state: ArrayLike, names: tuple[str, ...]) -> tuple[Tensor, dict[str, Tensor], bool]:
    s = ops.as_tensor(state)
    single = s.ndim == 1
    if single:
        s = ops.reshape(s, (1, s.shape[0]))
    if s.ndim != 2 or s.shape[1] != len(names):
        msg = f"Expected state with {len(names)} columns, got shape {s.shape}"
        raise ShapeError(msg)
    if not np.all(np.isfinite(s.value)):
        msg = "State contains non-finite values"
        raise NumericError(msg)
    return s, {name: s[:, j] for j, name in enumerate(names)}, single


def _assemble(columns: list[Tensor], single: bool) -> Tensor:
    ds = ops.stack(columns, axis=1)
    if single:
        return ops.reshape(ds, (ds.shape[1],))
    return ds


def uva_reduced_field(
    state: ArrayLike,
    inputs: Mapping[str, ArrayLike],
    meal: ArrayLike,
    p: Params,
) -> Tensor:
    """
    Reduced glucose-insulin dynamics.

    Args:
        state: (batch, 9) or (9,) state in REDUCED_STATES order
        inputs: ``carbs`` (carbohydrate rate) and ``insulin`` (infusion rate)
        meal: Meal size D per trajectory
        p: Reduced parameters by name

    Returns:
        Time derivative of the state

    Raises:
        ShapeError: If the state has the wrong width
        NumericError: If the state is non-finite

    """
    _, s, single = _columns(state, REDUCED_STATES)
    delta, iir = inputs["carbs"], inputs["insulin"]

    Q_sto = s["Q_sto1"] + s["Q_sto2"]
    emptying = k_empt(Q_sto, meal, p)
    Ra = p["f_frac"] * ops.as_tensor(p["k_abs"]) * s["Q_gut"] / p["BW"]
    EGP = p["k_p1"] - ops.as_tensor(p["k_p2"]) * s["G_p"] - ops.as_tensor(p["k_p3"]) * s["X_L"]
    U_id = (p["V_m0"] + ops.as_tensor(p["V_mx"]) * s["X"]) * s["G_t"] / (s["G_t"] + p["K_m0"])

    dG_p = EGP + Ra - p["F_cns"] - ops.as_tensor(p["k1"]) * s["G_p"] + ops.as_tensor(p["k2"]) * s["G_t"]
    dG_t = -U_id + ops.as_tensor(p["k1"]) * s["G_p"] - ops.as_tensor(p["k2"]) * s["G_t"]
    dI_p = -(ops.as_tensor(p["m2"]) + p["m4"]) * s["I_p"] + ops.as_tensor(p["m1"]) * s["I_l"] + iir
    dI_l = -(ops.as_tensor(p["m1"]) + p["m3"]) * s["I_l"] + ops.as_tensor(p["m2"]) * s["I_p"]
    dQ_sto1 = -ops.as_tensor(p["k_gri"]) * s["Q_sto1"] + ops.as_tensor(meal) * delta
    dQ_sto2 = -emptying * s["Q_sto2"] + ops.as_tensor(p["k_gri"]) * s["Q_sto1"]
    dQ_gut = -ops.as_tensor(p["k_abs"]) * s["Q_gut"] + emptying * s["Q_sto2"]
    dX_L = -ops.as_tensor(p["k_i"]) * (s["X_L"] - s["I_p"])
    dX = -ops.as_tensor(p["p_2U"]) * s["X"] + ops.as_tensor(p["p_2U"]) * s["I_p"]

    return _assemble([dG_p, dG_t, dI_p, dI_l, dQ_sto1, dQ_sto2, dQ_gut, dX_L, dX], single)


def uva_full_field(
    state: ArrayLike,
    inputs: Mapping[str, ArrayLike],
    meal: ArrayLike,
    p: Params,
    dynamic_srd: bool = True,
) -> FieldResult:
    """
    Full glucose-insulin-glucagon dynamics.

    Renal excretion E is algebraic; the E_acc state only accumulates it. With
    ``dynamic_srd`` False the second glucagon secretion compartment is algebraic
    and its state stays constant.

    Args:
        state: (batch, 20) or (20,) state in FULL_STATES order
        inputs: ``carbs``, ``insulin`` and optionally ``glucagon`` infusion rates
        meal: Meal size D per trajectory
        p: Full parameters by name
        dynamic_srd: Integrate SR_d as a state

    Returns:
        Derivative and diagnostics EGP, Ra, U_id, E, G, I, Ra_H

    Raises:
        ShapeError: If the state has the wrong width
        NumericError: If the state is non-finite

    """
    _, s, single = _columns(state, FULL_STATES)
    delta, iir = inputs["carbs"], inputs["insulin"]
    h_inf = inputs.get("glucagon", 0.0)

    def c(name: str) -> Tensor:
        return ops.as_tensor(p[name])

    G = s["G_p"] / p["V_G"]
    I = s["I_p"] / p["V_I"]

    Q_sto = s["Q_sto1"] + s["Q_sto2"]
    emptying = k_empt(Q_sto, meal, p)
    Ra = c("f_frac") * p["k_abs"] * s["Q_gut"] / p["BW"]
    EGP = p["k_p1"] - c("k_p2") * s["G_p"] - c("k_p3") * s["X_L"] + c("xi") * s["X_H"]
    risk = _risk(G, p)
    U_id = (p["V_m0"] + c("V_mx") * s["X"] * (1.0 + c("r1") * risk)) * s["G_t"] / (s["G_t"] + p["K_m0"])
    E = c("k_e1") * ops.relu(s["G_p"] - p["k_e2"])
    Rai = c("k_a1") * s["I_sc1"] + c("k_a2") * s["I_sc2"]
    Ra_H = c("k_h3") * s["H_sc2"]

    dG_p = EGP + Ra - p["F_cns"] - E - c("k1") * s["G_p"] + c("k2") * s["G_t"]
    dG_t = -U_id + c("k1") * s["G_p"] - c("k2") * s["G_t"]
    dI_p = -(c("m2") + p["m4"]) * s["I_p"] + c("m1") * s["I_l"] + Rai
    dI_l = -(c("m1") + p["m3"]) * s["I_l"] + c("m2") * s["I_p"]
    dQ_sto1 = -c("k_gri") * s["Q_sto1"] + ops.as_tensor(meal) * delta
    dQ_sto2 = -emptying * s["Q_sto2"] + c("k_gri") * s["Q_sto1"]
    dQ_gut = -c("k_abs") * s["Q_gut"] + emptying * s["Q_sto2"]
    dX_L = -c("k_i") * (s["X_L"] - s["I_r"])
    dI_r = -c("k_i") * (s["I_r"] - I)
    dX_H = -c("k_H_act") * s["X_H"] + c("k_H_act") * ops.relu(s["Hg"] - p["H_b"])
    dX = -c("p_2U") * s["X"] + c("p_2U") * (I - p["I_b"])
    dE_acc = E
    dI_sc1 = -(c("k_d") + p["k_a1"]) * s["I_sc1"] + iir
    dI_sc2 = c("k_d") * s["I_sc1"] - c("k_a2") * s["I_sc2"]
    dG_s = -c("T_s") * s["G_s"] + c("T_s") * G

    falling = ops.relu(-(dG_p / p["V_G"])) * p["eta_g"]
    high = ops.relu(c("sigma2_g") * (ops.as_tensor(p["G_th"]) - G) + p["SR_b"])
    low = ops.relu(c("sigma_g") * (ops.as_tensor(p["G_th"]) - G) / (I + 1.0) + p["SR_b"])
    target = ops.where(G.value >= ops.constant(p["G_b"]), high, low)
    dSR_s = -c("rho_g") * (s["SR_s"] - target)
    if dynamic_srd:
        SR_H = s["SR_s"] + s["SR_d"]
        dSR_d = falling
    else:
        SR_H = s["SR_s"] + falling
        dSR_d = 0.0 * s["SR_d"]
    dHg = -c("n_clr") * s["Hg"] + SR_H + Ra_H
    dH_sc1 = -(c("k_h1") + p["k_h2"]) * s["H_sc1"] + h_inf
    dH_sc2 = c("k_h1") * s["H_sc1"] - c("k_h3") * s["H_sc2"]

    derivative = _assemble(
        [
            dG_p,
            dG_t,
            dI_p,
            dI_l,
            dQ_sto1,
            dQ_sto2,
            dQ_gut,
            dX_L,
            dI_r,
            dX_H,
            dX,
            dE_acc,
            dI_sc1,
            dI_sc2,
            dG_s,
            dHg,
            dSR_s,
            dSR_d,
            dH_sc1,
            dH_sc2,
        ],
        single,
    )
    diagnostics = {"EGP": EGP, "Ra": Ra, "U_id": U_id, "E": E, "G": G, "I": I, "Ra_H": Ra_H}
    return FieldResult(derivative=derivative, diagnostics=diagnostics)


FieldFn = Callable[[ArrayLike, Mapping[str, ArrayLike], ArrayLike, Params], Tensor]


def simulate(
    field: FieldFn,
    state_names: tuple[str, ...],
    s0: np.ndarray,
    inputs: Mapping[str, np.ndarray],
    params: Mapping[str, Any],
    dt: float = 1.0,
    clamp: bool = False,
) -> np.ndarray:
    """
    Forward-Euler simulation of a single trajectory.

    Args:
        field: Vector field such as :func:`uva_reduced_field`
        state_names: State layout of the field
        s0: Initial state
        inputs: Input series by role, each of length T; ``carbs`` drives the meal tracker
        params: Parameters by name
        dt: Step size
        clamp: Clamp mass-like states at zero after every step

    Returns:
        Array of shape (T + 1, n_states) starting with s0

    Raises:
        NumericError: If the trajectory becomes non-finite

    """
    lengths = {len(v) for v in inputs.values()}
    if len(lengths) != 1:
        msg = f"Input series have different lengths: {sorted(lengths)}"
        raise ShapeError(msg)
    steps = lengths.pop()
    mass = np.array([name in MASS_STATES for name in state_names])
    tracker = MealTracker(1)
    trajectory = np.zeros((steps + 1, len(state_names)))
    trajectory[0] = s0
    state = np.asarray(s0, dtype=np.float64)
    carbs = inputs.get("carbs")
    for t in range(steps):
        D = tracker.update(carbs[t] if carbs is not None else 0.0)
        now = {role: np.array([series[t]]) for role, series in inputs.items()}
        with np.errstate(over="ignore", invalid="ignore"):
            ds = field(state[None, :], now, D, params).value[0]
            state = state + dt * ds
        if clamp:
            state = np.where(mass, np.maximum(state, 0.0), state)
        if not np.all(np.isfinite(state)):
            msg = f"Simulation became non-finite at step {t}"
            raise NumericError(msg)
        trajectory[t + 1] = state
    return trajectory


def full_field_derivative(state: ArrayLike, inputs: Mapping[str, ArrayLike], meal: ArrayLike, p: Params) -> Tensor:
    """Derivative of :func:`uva_full_field` with the printed SR_d dynamics."""
    return uva_full_field(state, inputs, meal, p).derivative
