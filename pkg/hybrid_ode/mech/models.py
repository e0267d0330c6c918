"""State layouts, parameter sets and meal bookkeeping for the mechanistic models."""

from __future__ import annotations

import json
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from hybrid_ode.core.exceptions import ConfigError, DataError


class MechKind(str, Enum):
    """Mechanistic component of a hybrid model."""

    NONE = "none"
    SYNTHETIC = "synthetic"
    REDUCED = "reduced"
    FULL = "full"


FULL_STATES: tuple[str, ...] = (
    "G_p",
    "G_t",
    "I_p",
    "I_l",
    "Q_sto1",
    "Q_sto2",
    "Q_gut",
    "X_L",
    "I_r",
    "X_H",
    "X",
    "E_acc",
    "I_sc1",
    "I_sc2",
    "G_s",
    "Hg",
    "SR_s",
    "SR_d",
    "H_sc1",
    "H_sc2",
)

REDUCED_STATES: tuple[str, ...] = (
    "G_p",
    "G_t",
    "I_p",
    "I_l",
    "Q_sto1",
    "Q_sto2",
    "Q_gut",
    "X_L",
    "X",
)

# States that hold a mass or concentration and may be clamped at zero in simulation.
MASS_STATES: frozenset[str] = frozenset(
    {
        "G_p",
        "G_t",
        "I_p",
        "I_l",
        "Q_sto1",
        "Q_sto2",
        "Q_gut",
        "I_sc1",
        "I_sc2",
        "Hg",
        "H_sc1",
        "H_sc2",
    },
)

# Symbol table: the printed model reuses alpha, beta, sigma, rho, H and n for
# other quantities, so these parameters carry explicit names.
#   kappa_a = alpha, kappa_b = beta (gastric emptying), shape_b = b, shape_c = c,
#   f_frac = f, k_H_act = k_H, sigma_g = sigma, sigma2_g = sigma_2, rho_g = rho,
#   eta_g = eta, n_clr = n, SR_b = SR_H^b.


class _ParamSet(BaseModel):
    model_config = {"extra": "forbid"}

    @classmethod
    def names(cls) -> tuple[str, ...]:
        """Parameter names in declaration order."""
        return tuple(cls.model_fields)

    def as_array(self) -> np.ndarray:
        """Values in declaration order."""
        return np.array([getattr(self, n) for n in self.names()], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Any) -> Any:
        """Build a parameter set from values in declaration order."""
        arr = np.asarray(values, dtype=np.float64).reshape(-1)
        names = cls.names()
        if len(arr) != len(names):
            msg = f"{cls.__name__} expects {len(names)} values, got {len(arr)}"
            raise ConfigError(msg)
        return cls(**{n: float(v) for n, v in zip(names, arr)})

    def save(self, path: str | Path) -> None:
        """Write the parameters as JSON keyed by field name."""
        Path(path).write_text(json.dumps(self.model_dump(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Any:
        """Read parameters written by :meth:`save`."""
        try:
            return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except ValidationError as e:
            msg = f"Invalid {cls.__name__} file {path}: {e}"
            raise DataError(msg)


class UvaReducedParams(_ParamSet):
    """Parameters of the reduced glucose-insulin model."""

    k1: float
    k2: float
    m1: float
    m2: float
    m3: float
    m4: float
    k_gri: float
    k_abs: float
    k_min: float
    k_max: float
    kappa_a: float
    kappa_b: float
    shape_b: float
    shape_c: float
    f_frac: float
    BW: float
    k_p1: float
    k_p2: float
    k_p3: float
    k_i: float
    F_cns: float
    V_m0: float
    V_mx: float
    K_m0: float
    p_2U: float


class UvaFullParams(_ParamSet):
    """Parameters of the full glucose-insulin-glucagon model."""

    k1: float
    k2: float
    V_G: float
    m1: float
    m2: float
    m3: float
    m4: float
    V_I: float
    k_gri: float
    k_abs: float
    k_min: float
    k_max: float
    kappa_a: float
    kappa_b: float
    shape_b: float
    shape_c: float
    f_frac: float
    BW: float
    k_p1: float
    k_p2: float
    k_p3: float
    xi: float
    k_i: float
    k_H_act: float
    H_b: float
    F_cns: float
    V_m0: float
    V_mx: float
    K_m0: float
    p_2U: float
    I_b: float
    r1: float
    r2: float
    G_b: float
    G_th: float
    k_e1: float
    k_e2: float
    k_a1: float
    k_a2: float
    k_d: float
    T_s: float
    n_clr: float
    rho_g: float
    sigma_g: float
    sigma2_g: float
    SR_b: float
    eta_g: float
    k_h1: float
    k_h2: float
    k_h3: float


class SyntheticParams(_ParamSet):
    """Log rate constants of the single-state synthetic model."""

    log_k_y: float = Field(0.0, description="Log decay rate of y")
    log_k_1: float = Field(0.0, description="Log gain of x1")
    log_k_2: float = Field(0.0, description="Log loss rate driven by x2")


# Illustrative rate constants used by the property tests. They are not fitted to
# any subject; the resting balance solves k_p1 and V_m0 (and, for the full
# model, I_b, G_b and H_b) so that the chosen resting state is a fixed point.
_BASE_RATES: dict[str, float] = {
    "k1": 0.065,
    "k2": 0.079,
    "m1": 0.190,
    "m2": 0.484,
    "m3": 0.285,
    "m4": 0.194,
    "k_gri": 0.0558,
    "k_abs": 0.057,
    "k_min": 0.008,
    "k_max": 0.0558,
    "kappa_a": 0.00013,
    "kappa_b": 0.00036,
    "shape_b": 0.82,
    "shape_c": 0.01,
    "f_frac": 0.9,
    "BW": 78.0,
    "k_p2": 0.0021,
    "k_p3": 0.009,
    "k_i": 0.0079,
    "F_cns": 1.0,
    "V_mx": 0.047,
    "K_m0": 225.59,
    "p_2U": 0.0331,
}

_FULL_EXTRAS: dict[str, float] = {
    "V_G": 1.88,
    "V_I": 0.05,
    "xi": 0.0197,
    "k_H_act": 0.093,
    "r1": 1.44,
    "r2": 0.81,
    "G_th": 60.0,
    "k_e1": 0.0005,
    "k_e2": 339.0,
    "k_a1": 0.0018,
    "k_a2": 0.0182,
    "k_d": 0.0164,
    "T_s": 0.1,
    "n_clr": 0.22,
    "rho_g": 0.39,
    "sigma_g": 0.41,
    "sigma2_g": 0.01,
    "SR_b": 2.0,
    "eta_g": 0.05,
    "k_h1": 0.0164,
    "k_h2": 0.0018,
    "k_h3": 0.0182,
}

RESTING_G_P = 250.0
RESTING_G_T = 170.0
BASAL_INSULIN = 1.0


def _plasma_insulin(rates: dict[str, float], basal: float) -> float:
    m1, m2, m3, m4 = rates["m1"], rates["m2"], rates["m3"], rates["m4"]
    return basal / (m2 + m4 - m1 * m2 / (m1 + m3))


def default_reduced_params(basal_insulin: float = BASAL_INSULIN) -> UvaReducedParams:
    """
    Illustrative reduced-model parameters with a resting fixed point.

    The resting state has G_p = 250, G_t = 170, empty gut and constant insulin
    infusion ``basal_insulin``.

    Raises:
        ConfigError: If the balance has no positive solution

    """
    r = dict(_BASE_RATES)
    I_p = _plasma_insulin(r, basal_insulin)
    transfer = r["k1"] * RESTING_G_P - r["k2"] * RESTING_G_T
    V_m0 = transfer * (r["K_m0"] + RESTING_G_T) / RESTING_G_T - r["V_mx"] * I_p
    k_p1 = r["F_cns"] + transfer + r["k_p2"] * RESTING_G_P + r["k_p3"] * I_p
    if V_m0 <= 0 or k_p1 <= 0:
        msg = "Resting balance requires positive V_m0 and k_p1"
        raise ConfigError(msg)
    return UvaReducedParams(**r, V_m0=V_m0, k_p1=k_p1)


def resting_reduced_state(params: UvaReducedParams, basal_insulin: float = BASAL_INSULIN) -> np.ndarray:
    """Resting state of the reduced model under constant basal insulin."""
    rates = params.model_dump()
    I_p = _plasma_insulin(rates, basal_insulin)
    I_l = params.m2 * I_p / (params.m1 + params.m3)
    values = {
        "G_p": RESTING_G_P,
        "G_t": RESTING_G_T,
        "I_p": I_p,
        "I_l": I_l,
        "X_L": I_p,
        "X": I_p,
    }
    return np.array([values.get(name, 0.0) for name in REDUCED_STATES])


def default_full_params(basal_insulin: float = BASAL_INSULIN) -> UvaFullParams:
    """
    Illustrative full-model parameters with a resting fixed point.

    Basal glucose, insulin and glucagon are set to their resting values, so the
    risk term, insulin action and glucagon action are all zero at rest.

    Raises:
        ConfigError: If the balance has no positive solution

    """
    r = {**_BASE_RATES, **_FULL_EXTRAS}
    I_p = _plasma_insulin(r, basal_insulin)
    I = I_p / r["V_I"]
    G = RESTING_G_P / r["V_G"]
    transfer = r["k1"] * RESTING_G_P - r["k2"] * RESTING_G_T
    V_m0 = transfer * (r["K_m0"] + RESTING_G_T) / RESTING_G_T
    k_p1 = r["F_cns"] + transfer + r["k_p2"] * RESTING_G_P + r["k_p3"] * I
    SR_s = max(r["sigma2_g"] * (r["G_th"] - G) + r["SR_b"], 0.0)
    H_b = SR_s / r["n_clr"]
    if V_m0 <= 0 or k_p1 <= 0 or RESTING_G_P >= r["k_e2"]:
        msg = "Resting balance requires positive V_m0, k_p1 and no renal excretion"
        raise ConfigError(msg)
    return UvaFullParams(**r, V_m0=V_m0, k_p1=k_p1, I_b=I, G_b=G, H_b=H_b)


def resting_full_state(params: UvaFullParams, basal_insulin: float = BASAL_INSULIN) -> np.ndarray:
    """Resting state of the full model under constant basal insulin."""
    I_p = _plasma_insulin(params.model_dump(), basal_insulin)
    I = I_p / params.V_I
    G = RESTING_G_P / params.V_G
    SR_s = max(params.sigma2_g * (params.G_th - G) + params.SR_b, 0.0)
    I_sc1 = basal_insulin / (params.k_d + params.k_a1)
    values = {
        "G_p": RESTING_G_P,
        "G_t": RESTING_G_T,
        "I_p": I_p,
        "I_l": params.m2 * I_p / (params.m1 + params.m3),
        "X_L": I,
        "I_r": I,
        "I_sc1": I_sc1,
        "I_sc2": params.k_d * I_sc1 / params.k_a2,
        "G_s": G,
        "Hg": SR_s / params.n_clr,
        "SR_s": SR_s,
    }
    return np.array([values.get(name, 0.0) for name in FULL_STATES])


class MealTracker:
    """
    Size of the current carbohydrate event for each trajectory in a batch.

    A meal is a run of consecutive steps with positive carbohydrate input; its
    size D is the grams eaten so far in that run. D is 0 outside meals.
    """

    def __init__(self, batch: int = 1) -> None:
        """Start outside any meal."""
        self.D_active = np.zeros(batch)
        self.in_meal = np.zeros(batch, dtype=bool)

    def update(self, carbs: Any) -> np.ndarray:
        """
        Advance one step.

        Args:
            carbs: Carbohydrate input at this step, scalar or per trajectory

        Returns:
            Meal size D for this step

        """
        grams = np.broadcast_to(np.asarray(carbs, dtype=np.float64), self.D_active.shape)
        eating = grams > 0.0
        grown = np.where(self.in_meal, self.D_active + grams, grams)
        self.D_active = np.where(eating, grown, 0.0)
        self.in_meal = eating
        return self.D_active.copy()


def meal_sizes(carbs_history: np.ndarray, carbs_future: np.ndarray) -> np.ndarray:
    """
    Meal size D at each future step, continuing events that began in the history.

    Args:
        carbs_history: Past carbohydrate inputs, shape (batch, T)
        carbs_future: Future carbohydrate inputs, shape (batch, q)

    Returns:
        Array of shape (batch, q)

    """
    history = np.atleast_2d(carbs_history)
    future = np.atleast_2d(carbs_future)
    tracker = MealTracker(future.shape[0])
    for t in range(history.shape[1]):
        tracker.update(history[:, t])
    return np.stack([tracker.update(future[:, t]) for t in range(future.shape[1])], axis=1)
