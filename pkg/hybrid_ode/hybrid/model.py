"""Hybrid sequence models, the LSTM baseline and trained-model files."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from hybrid_ode.autodiff import (
    InitScheme,
    LstmSpec,
    MlpSpec,
    ParamLayout,
    ParamVector,
    ParamVectorRecord,
    SeededRng,
    Tensor,
    init_params,
    lstm_forward,
    mlp_forward,
    ops,
)
from hybrid_ode.autodiff.params import fan_in_bounds
from hybrid_ode.core.config import PARAM_CAP
from hybrid_ode.core.exceptions import ConfigError, DataError, ShapeError
from hybrid_ode.datakit import Episode, EpisodeBatch, Standardizer, StandardizerRecord, stack_episodes
from hybrid_ode.losses import InterventionSet
from hybrid_ode.mech import MechKind, get_mech, meal_sizes

from .config import LATENT_VARIANTS, HybridConfig, Variant
from .fields import euler_rollout, latent_step, masked_nn_field, masked_specs

logger = logging.getLogger(__name__)

MODEL_SCHEMA = "h2ncm-model/1"


@dataclass(frozen=True)
class Encoded:
    """Context encoding: initial state and latent, or LSTM (h, c) per layer."""

    s0: Optional[Tensor] = None
    z0: Optional[Tensor] = None
    hs: list[Tensor] = field(default_factory=list)
    cs: list[Tensor] = field(default_factory=list)
    carbs: Optional[np.ndarray] = None

    def repeat(self, k: int) -> Encoded:
        """Repeat every row k times, keeping rows of one episode adjacent."""
        size = self.s0.shape[0] if self.s0 is not None else self.hs[0].shape[0]
        idx = np.repeat(np.arange(size), k)
        return Encoded(
            s0=None if self.s0 is None else self.s0[idx],
            z0=None if self.z0 is None else self.z0[idx],
            hs=[h[idx] for h in self.hs],
            cs=[c[idx] for c in self.cs],
            carbs=None if self.carbs is None else np.repeat(self.carbs, k, axis=0),
        )


def check_param_cap(count: int, cap: int = PARAM_CAP) -> None:
    """
    Reject models with ``count >= cap`` trainable parameters.

    Raises:
        ConfigError: With the count in the message

    """
    if count >= cap:
        msg = f"Model has {count} parameters; the cap is {cap}"
        raise ConfigError(msg)


class SequenceModel:
    """
    Shared machinery of every model: parameter layout, standardization and the
    encode/decode split that lets counterfactual variants reuse one encoding.
    """

    def __init__(self, cfg: HybridConfig, standardizer: Standardizer) -> None:
        """
        Initialize the model.

        Raises:
            ConfigError: If the standardizer's inputs differ from the config's

        """
        if standardizer.input_names != cfg.input_names:
            msg = f"Standardizer inputs {standardizer.input_names} differ from model inputs {cfg.input_names}"
            raise ConfigError(msg)
        self.cfg = cfg
        self.standardizer = standardizer
        self.layout = ParamLayout()
        self._spans: dict[str, slice] = {}

    def _finish_layout(self) -> None:
        self._spans = {name: slice(off, off + n) for name, (off, n) in self.layout.offsets().items()}

    @property
    def param_count(self) -> int:
        """Number of trainable scalars."""
        return self.layout.total

    @property
    def segment_names(self) -> list[str]:
        """Parameter segments in layout order."""
        return [s.name for s in self.layout.segments]

    def seg(self, theta: Tensor, name: str) -> Tensor:
        """Slice one segment out of the flat parameter tensor."""
        return theta[self._spans[name]]

    def init_params(self, rng: SeededRng) -> ParamVector:
        """Draw initial parameters."""
        return init_params(self.layout, rng)

    def _standardize(self, batch: EpisodeBatch) -> tuple[np.ndarray, np.ndarray]:
        std = self.standardizer
        return (batch.context - std.mean) / std.std, std.apply_y(batch.y0)

    def encode(self, theta: Tensor, batch: EpisodeBatch, training: bool = False, rng: SeededRng | None = None) -> Encoded:
        """Encode the context windows."""
        raise NotImplementedError

    def decode(
        self,
        theta: Tensor,
        enc: Encoded,
        future_x: np.ndarray,
        training: bool = False,
        rng: SeededRng | None = None,
    ) -> Tensor:
        """Standardized predictions (batch, q) for raw future inputs (batch, q, n)."""
        raise NotImplementedError

    def forward(self, theta: Tensor, batch: EpisodeBatch, training: bool = False, rng: SeededRng | None = None) -> Tensor:
        """Standardized predictions for a batch of raw episodes."""
        return self.decode(theta, self.encode(theta, batch, training, rng), batch.future_x, training, rng)

    def counterfactual(
        self,
        theta: Tensor,
        batch: EpisodeBatch,
        variants: np.ndarray,
        training: bool = False,
        rng: SeededRng | None = None,
    ) -> Tensor:
        """
        Standardized predictions (batch, K, q) under K future-input variants.

        Each context is encoded once and shared by its K variants.

        Raises:
            ShapeError: If variants are not (batch, K, q, n)

        """
        v = np.asarray(variants, dtype=np.float64)
        B = batch.size
        if v.ndim != 4 or v.shape[0] != B or v.shape[3] != self.cfg.n_inputs:
            msg = f"Variants must be ({B}, K, q, {self.cfg.n_inputs}), got {v.shape}"
            raise ShapeError(msg)
        K, q = v.shape[1], v.shape[2]
        enc = self.encode(theta, batch, training, rng).repeat(K)
        y = self.decode(theta, enc, v.reshape(B * K, q, v.shape[3]), training, rng)
        return ops.reshape(y, (B, K, q))


class HybridModel(SequenceModel):
    """
    Mechanistic, latent-parameter, closure and neural ODE models.

    The rollout state keeps the observed coordinate in standardized units; the
    mechanistic field sees it (and the inputs) in original units, and its
    derivative is scaled back.
    """

    def __init__(self, cfg: HybridConfig, standardizer: Standardizer) -> None:
        """
        Build the networks and parameter layout for a config.

        Raises:
            ConfigError: If the encoder or state sizes are inconsistent

        """
        super().__init__(cfg, standardizer)
        c1, c2, c3, c4 = cfg.switches
        n_in, n_s = cfg.n_inputs, cfg.state_dim
        self.mech = get_mech(cfg.mech) if c1 else None
        self.out = cfg.output_state
        self.latent = cfg.variant in LATENT_VARIANTS
        self.bypass = cfg.synthetic_init and cfg.variant is not Variant.BNODE
        if self.bypass and n_s != 1:
            msg = f"s0 = y0 needs a single state, {cfg.variant.value} has {n_s}"
            raise ConfigError(msg)

        width = cfg.latent_dim if self.latent else n_s
        if cfg.encoder_hidden is not None and cfg.encoder_hidden != width:
            msg = f"Encoder hidden size {cfg.encoder_hidden} must equal the required state size {width}"
            raise ConfigError(msg)
        self.encoder: Optional[LstmSpec] = None
        if self.latent or not self.bypass:
            self.encoder = LstmSpec(layers=cfg.encoder_layers, in_dim=1 + n_in, hidden_dim=width, dropout=cfg.dropout)
            self.layout.add("encoder", self.encoder.weight_count, InitScheme.FAN_IN_UNIFORM, self.encoder.init_bounds())

        self.init_mlp: Optional[MlpSpec] = None
        if self.latent and not self.bypass:
            self.init_mlp = self._mlp(cfg.latent_dim, n_s - 1)
            self.layout.add("init_mlp", self.init_mlp.weight_count, InitScheme.FAN_IN_UNIFORM, self.init_mlp.init_bounds())

        if self.mech is not None:
            self.mech_cols = {role: cfg.input_names.index(role) for role in self.mech.input_roles}
            self.layout.add("decoder_mech", self.mech.n_params, InitScheme.MECHANISTIC)
            self.carbs_col = (
                cfg.input_names.index("carbs")
                if cfg.mech in (MechKind.REDUCED, MechKind.FULL) and "carbs" in cfg.input_names
                else None
            )
        else:
            self.carbs_col = None

        self.beta_net: Optional[MlpSpec] = None
        self.sub_cols: list[int] = []
        if c4:
            assert self.mech is not None
            extra = n_in if cfg.beta_uses_inputs else 0
            self.beta_net = self._mlp(cfg.latent_dim + extra, self.mech.n_params)
            self.layout.add("beta_net", self.beta_net.weight_count, InitScheme.FAN_IN_UNIFORM, self.beta_net.init_bounds())
            d = cfg.latent_dim
            self.sub_cols = [cfg.input_names.index(name) for name in self.mech.unused_inputs if name in cfg.input_names]
            self.layout.add("latent_A", d * d, InitScheme.FAN_IN_UNIFORM, fan_in_bounds(d, d * d))
            if self.sub_cols:
                k = len(self.sub_cols)
                self.layout.add("latent_B", d * k, InitScheme.FAN_IN_UNIFORM, fan_in_bounds(d, d * k))

        self.nn_specs: list[MlpSpec] = []
        self.nn_segment = "closure" if cfg.variant is Variant.LPSC else "decoder_nn"
        if c2:
            assert cfg.graph is not None
            layers = cfg.closure_layers if cfg.variant is Variant.LPSC else cfg.hidden_layers
            self.nn_specs = masked_specs(cfg.graph, layers, cfg.hidden_units, cfg.dropout, cfg.latent_dim if c3 else 0)
            bounds = np.concatenate([spec.init_bounds() for spec in self.nn_specs])
            self.layout.add(self.nn_segment, len(bounds), InitScheme.FAN_IN_UNIFORM, bounds)
        self._finish_layout()

    def _mlp(self, in_dim: int, out_dim: int) -> MlpSpec:
        return MlpSpec(
            in_dim=in_dim,
            hidden_layers=self.cfg.hidden_layers,
            hidden_units=self.cfg.hidden_units,
            out_dim=out_dim,
            dropout=self.cfg.dropout,
        )

    def init_params(self, rng: SeededRng) -> ParamVector:
        """Draw initial parameters; closure outputs start at zero."""
        params = super().init_params(rng)
        if self.mech is not None and self.cfg.mech_init == "default":
            params.segment("decoder_mech")[:] = self.mech.defaults()
        if self.cfg.variant is Variant.LPSC:
            self.zero_closure_outputs(params)
        return params

    def zero_closure_outputs(self, params: ParamVector) -> None:
        """Zero the output layer of every closure network, in place."""
        seg = params.segment(self.nn_segment)
        offset = 0
        for spec in self.nn_specs:
            fan_in = spec.layer_dims()[-1][0]
            end = offset + spec.weight_count
            seg[end - (fan_in + 1) : end] = 0.0
            offset = end

    def encode(self, theta: Tensor, batch: EpisodeBatch, training: bool = False, rng: SeededRng | None = None) -> Encoded:
        """
        Initial state and latent from the context window.

        The observed coordinate of s0 is always y0.
        """
        ctx, y0 = self._standardize(batch)
        y0_col = y0.reshape(-1, 1)
        carbs = batch.context[:, :, 1 + self.carbs_col] if self.carbs_col is not None else None
        if self.encoder is None:
            return Encoded(s0=ops.as_tensor(y0_col), carbs=carbs)
        enc = lstm_forward(
            self.encoder,
            self.seg(theta, "encoder"),
            np.transpose(ctx, (1, 0, 2)),
            training=training,
            rng=rng,
        )
        if not self.latent:
            return Encoded(s0=ops.replace_column(enc.top_h, self.out, y0), carbs=carbs)
        if self.bypass:
            return Encoded(s0=ops.as_tensor(y0_col), z0=enc.top_c, carbs=carbs)
        assert self.init_mlp is not None
        rest = mlp_forward(self.init_mlp, self.seg(theta, "init_mlp"), enc.top_h, training, rng)
        parts: list[Any] = []
        if self.out > 0:
            parts.append(rest[:, : self.out])
        parts.append(y0_col)
        if self.out < rest.shape[1]:
            parts.append(rest[:, self.out :])
        return Encoded(s0=ops.concat(parts, axis=1), z0=enc.top_c, carbs=carbs)

    def hybrid_field(
        self,
        theta: Tensor,
        s: Tensor,
        z: Optional[Tensor],
        xs: np.ndarray,
        xo: np.ndarray,
        meal: np.ndarray,
        training: bool = False,
        rng: SeededRng | None = None,
    ) -> tuple[Tensor, Optional[Tensor]]:
        """
        ds = c1 m(s, x; beta(t)) + c2 f1(s, x, c3 z), with beta(t) = beta + c4 f3(z).

        Args:
            theta: Flat parameters
            s: (batch, n_states) states
            z: (batch, d) latents or None
            xs: Standardized inputs (batch, n)
            xo: Original-unit inputs (batch, n)
            meal: Meal size per trajectory
            training: Enable dropout
            rng: Stream for dropout masks

        Returns:
            Derivative and the mechanistic parameters used (None without a mechanistic term)

        Raises:
            ShapeError: If the state width does not match the config

        """
        if s.ndim != 2 or s.shape[1] != self.cfg.state_dim:
            msg = f"State must be (batch, {self.cfg.state_dim}), got {s.shape}"
            raise ShapeError(msg)
        c1, c2, c3, c4 = self.cfg.switches
        ds: Optional[Tensor] = None
        beta_t: Optional[Tensor] = None
        if c1:
            assert self.mech is not None
            beta = self.seg(theta, "decoder_mech")
            if c4:
                assert self.beta_net is not None and z is not None
                f3_in = ops.concat([z, xs], axis=1) if self.cfg.beta_uses_inputs else z
                beta_t = beta + mlp_forward(self.beta_net, self.seg(theta, "beta_net"), f3_in, training, rng)
                p = {name: beta_t[:, j] for j, name in enumerate(self.mech.param_names)}
            else:
                beta_t = beta
                p = {name: beta[j] for j, name in enumerate(self.mech.param_names)}
            y_mean, y_std = float(self.standardizer.mean[0]), float(self.standardizer.std[0])
            mech_state = ops.replace_column(s, self.out, s[:, self.out] * y_std + y_mean)
            inputs = {role: xo[:, col] for role, col in self.mech_cols.items()}
            d_mech = self.mech.field(mech_state, inputs, meal, p)
            ds = ops.replace_column(d_mech, self.out, d_mech[:, self.out] / y_std)
        if c2 and (self.cfg.variant is not Variant.LPSC or self.cfg.w == 1):
            assert self.cfg.graph is not None
            d_nn = masked_nn_field(
                self.cfg.graph,
                self.nn_specs,
                self.seg(theta, self.nn_segment),
                s,
                xs,
                z if c3 else None,
                training,
                rng,
            )
            ds = d_nn if ds is None else ds + d_nn
        if ds is None:
            ds = ops.as_tensor(np.zeros(s.shape))
        return ds, beta_t

    def latent_next(self, theta: Tensor, z: Tensor, xs: np.ndarray) -> Tensor:
        """One step of the latent dynamics driven by the inputs the mechanistic model ignores."""
        d = self.cfg.latent_dim
        A = ops.reshape(self.seg(theta, "latent_A"), (d, d))
        if not self.sub_cols:
            return latent_step(A, None, z)
        B = ops.reshape(self.seg(theta, "latent_B"), (d, len(self.sub_cols)))
        return latent_step(A, B, z, xs[:, self.sub_cols])

    def decode(
        self,
        theta: Tensor,
        enc: Encoded,
        future_x: np.ndarray,
        training: bool = False,
        rng: SeededRng | None = None,
    ) -> Tensor:
        """Forward-Euler rollout over the future inputs."""
        fut = np.asarray(future_x, dtype=np.float64)
        fut_std = self.standardizer.apply_x(fut)
        B, q = fut.shape[0], fut.shape[1]
        if enc.carbs is not None and self.carbs_col is not None:
            meal = meal_sizes(enc.carbs, fut[:, :, self.carbs_col])
        else:
            meal = np.zeros((B, q))

        def step(t: int, s: Tensor, z: Optional[Tensor]) -> tuple[Tensor, Optional[Tensor]]:
            ds, _ = self.hybrid_field(theta, s, z, fut_std[:, t], fut[:, t], meal[:, t], training, rng)
            return ds, None if z is None else self.latent_next(theta, z, fut_std[:, t])

        assert enc.s0 is not None
        return euler_rollout(step, enc.s0, enc.z0, q, self.cfg.dt, self.out)


class LstmBaseline(SequenceModel):
    """
    Sequence-to-sequence LSTM: an encoder over the context hands its (h, c) to a
    decoder over the future inputs, followed by a linear read-out.
    """

    def __init__(self, cfg: HybridConfig, standardizer: Standardizer) -> None:
        """Build the encoder, decoder and read-out."""
        super().__init__(cfg, standardizer)
        n, m = cfg.hidden_layers, cfg.hidden_units
        self.encoder = LstmSpec(layers=n, in_dim=1 + cfg.n_inputs, hidden_dim=m, dropout=cfg.dropout)
        self.decoder = LstmSpec(layers=n, in_dim=cfg.n_inputs, hidden_dim=m, dropout=cfg.dropout)
        self.head = MlpSpec(in_dim=m, hidden_layers=0, out_dim=1)
        for name, spec in (("encoder", self.encoder), ("decoder_lstm", self.decoder), ("head", self.head)):
            self.layout.add(name, spec.weight_count, InitScheme.FAN_IN_UNIFORM, spec.init_bounds())
        self._finish_layout()

    def encode(self, theta: Tensor, batch: EpisodeBatch, training: bool = False, rng: SeededRng | None = None) -> Encoded:
        """Final (h, c) of every encoder layer."""
        ctx, _ = self._standardize(batch)
        out = lstm_forward(self.encoder, self.seg(theta, "encoder"), np.transpose(ctx, (1, 0, 2)), training=training, rng=rng)
        return Encoded(hs=out.h, cs=out.c)

    def decode(
        self,
        theta: Tensor,
        enc: Encoded,
        future_x: np.ndarray,
        training: bool = False,
        rng: SeededRng | None = None,
    ) -> Tensor:
        """Decoder pass over the standardized future inputs."""
        fut = self.standardizer.apply_x(np.asarray(future_x, dtype=np.float64))
        out = lstm_forward(
            self.decoder,
            self.seg(theta, "decoder_lstm"),
            np.transpose(fut, (1, 0, 2)),
            initial=(enc.hs, enc.cs),
            training=training,
            rng=rng,
        )
        head = self.seg(theta, "head")
        return ops.concat([mlp_forward(self.head, head, o) for o in out.outputs], axis=1)


def build_model(cfg: HybridConfig, standardizer: Standardizer, cap: int | None = PARAM_CAP) -> SequenceModel:
    """
    Construct the model for a config.

    Raises:
        ConfigError: If the model reaches the parameter cap

    """
    model: SequenceModel
    if cfg.variant is Variant.LSTM:
        model = LstmBaseline(cfg, standardizer)
    else:
        model = HybridModel(cfg, standardizer)
    if cap is not None:
        check_param_cap(model.param_count, cap)
    return model


def param_count(model: SequenceModel | TrainedModel) -> int:
    """Exact number of trainable scalars."""
    if isinstance(model, TrainedModel):
        return model.model.param_count
    return model.param_count


class ModelRecord(BaseModel):
    """JSON form of a trained model."""

    schema_: Literal["h2ncm-model/1"] = Field(MODEL_SCHEMA, alias="schema")
    variant: Variant = Field(..., description="Model variant")
    config: HybridConfig = Field(..., description="Model configuration")
    params: ParamVectorRecord = Field(..., description="Trained parameters")
    standardizer: StandardizerRecord = Field(..., description="Training-split statistics")
    info: dict[str, Any] = Field(default_factory=dict, description="Training provenance")

    model_config = {"extra": "forbid", "populate_by_name": True}


@dataclass(frozen=True)
class TrainedModel:
    """A model with fitted parameters; immutable and safe to share across threads."""

    model: SequenceModel
    params: ParamVector
    info: dict[str, Any] = field(default_factory=dict)

    @property
    def cfg(self) -> HybridConfig:
        """Model configuration."""
        return self.model.cfg

    @property
    def variant(self) -> Variant:
        """Model variant."""
        return self.model.cfg.variant

    def _theta(self) -> Tensor:
        return Tensor(self.params.values)

    def predict_batch(self, batch: EpisodeBatch) -> np.ndarray:
        """Predictions in original units, (batch, q)."""
        y = self.model.forward(self._theta(), batch).value
        return self.model.standardizer.invert_y(y)

    def predict(self, episode: Episode) -> np.ndarray:
        """Predicted observations at the q target times."""
        return self.predict_batch(stack_episodes([episode]))[0]

    def counterfactual_simulate(self, episode: Episode, iv_set: InterventionSet) -> np.ndarray:
        """
        Predicted trajectories (K, q) under each intervention variant.

        Raises:
            ShapeError: If the variants do not match the episode's future inputs

        """
        variants = np.asarray(iv_set.variants, dtype=np.float64)
        if variants.shape[1:] != episode.future_x.shape:
            msg = f"Variants {variants.shape} do not match future inputs {episode.future_x.shape}"
            raise ShapeError(msg)
        y = self.model.counterfactual(self._theta(), stack_episodes([episode]), variants[None]).value
        return self.model.standardizer.invert_y(y[0])

    def to_record(self) -> ModelRecord:
        """Convert to the JSON record."""
        return ModelRecord(
            variant=self.variant,
            config=self.cfg,
            params=self.params.to_record(),
            standardizer=self.model.standardizer.to_record(),
            info=self.info,
        )

    def save(self, path: str | Path) -> None:
        """Write the model as JSON."""
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(self.to_record().model_dump(mode="json", by_alias=True)), encoding="utf-8")
        logger.debug("Saved %s model to %s", self.variant.value, target)

    @classmethod
    def load(cls, path: str | Path) -> TrainedModel:
        """
        Read a model file.

        Raises:
            DataError: If the file is malformed or its parameters do not fit the config

        """
        try:
            record = ModelRecord.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except ValidationError as e:
            msg = f"Invalid model file {path}: {e.errors()[0]['msg']}"
            raise DataError(msg) from e
        model = build_model(record.config, Standardizer.from_record(record.standardizer), cap=None)
        params = ParamVector.from_record(record.params)
        if params.segments != model.layout.offsets():
            msg = f"Parameter segments in {path} do not match the {record.variant.value} layout"
            raise DataError(msg, field="params")
        return cls(model, params, record.info)
