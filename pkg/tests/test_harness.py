"""Tests for training, grid search, nested cross-validation and error summaries."""

import json
from unittest.mock import patch

import numpy as np
import pytest
from pydantic import ValidationError

from hybrid_ode.autodiff import InitScheme, SeededRng
from hybrid_ode.core import ConfigError, DataError, DivergenceError, InputError, TrainingError
from hybrid_ode.datakit import Episode, Standardizer, SyntheticConfig, gen_synthetic, make_intervention_sets
from hybrid_ode.harness import (
    CvConfig,
    GridSpec,
    RunReport,
    TrainConfig,
    classification_error,
    corruption_sweep,
    default_grid,
    default_train_config,
    evaluate,
    evaluate_loss,
    fold_plan,
    grid_search,
    mean_stderr,
    nested_cv,
    percentiles,
    rmse,
    summarize,
    temperature_sweep,
    train,
    train_lpsc,
    train_variant,
)
from hybrid_ode.harness.training import TrainResult, index_sets
from hybrid_ode.hybrid import Encoded, SequenceModel, TrainedModel, Variant, build_model, variant_config
from hybrid_ode.mech import SYNTHETIC_INPUTS, T1DEXI_INPUTS, MechKind

IDENTITY = Standardizer(["y", "x1", "x2"], np.zeros(3), np.ones(3))
FAST = TrainConfig(lr=0.05, epochs=2, batch_size=None)


class LinearToy(SequenceModel):
    """y_t = slope * x1_t."""

    def __init__(self, standardizer: Standardizer = IDENTITY) -> None:
        super().__init__(variant_config("lstm", SYNTHETIC_INPUTS, 4), standardizer)
        self.layout.add("slope", 1, InitScheme.STANDARD_NORMAL)
        self._finish_layout()

    def encode(self, theta, batch, training=False, rng=None):
        if "bad" in batch.ids:
            raise DivergenceError("toy model diverged", step=0)
        return Encoded()

    def decode(self, theta, enc, future_x, training=False, rng=None):
        return self.seg(theta, "slope") * np.asarray(future_x)[:, :, 0]


def _linear_episodes(n: int, seed: int, prefix: str = "lin") -> list[Episode]:
    rng = SeededRng(seed)
    episodes = []
    for i in range(n):
        x = rng.normal(1.0, (4, 2))
        episodes.append(Episode(f"{prefix}-{i}", np.zeros((3, 3)), 0.0, x, 3.0 * x[:, 0], SYNTHETIC_INPUTS))
    return episodes


@pytest.fixture(scope="module")
def data():
    """Small synthetic dataset with oracle labels."""
    return gen_synthetic(SyntheticConfig(n_train=16, n_val=4, n_test=4))


@pytest.fixture(scope="module")
def episodes(data) -> list[Episode]:
    """All splits of the small dataset."""
    return data.train + data.val + data.test


@pytest.fixture(scope="module")
def iv_sets(data, episodes):
    """One oracle-labelled intervention set per episode."""
    return make_intervention_sets(episodes, data.truth)


UVA_GRID = GridSpec(variant=Variant.UVA, points=[{"mech_init": "default"}])


class TestConfigs:
    """Training and cross-validation settings."""

    def test_published_learning_rates(self) -> None:
        """Mechanistic and latent-parameter models use their own rates."""
        assert default_train_config("uva", T1DEXI_INPUTS).lr == 1e-1
        assert default_train_config("uva", SYNTHETIC_INPUTS).lr == 5e-1
        assert default_train_config("lp", SYNTHETIC_INPUTS).lr == 1e-2
        assert default_train_config("lp", T1DEXI_INPUTS).lr == 2e-3
        assert default_train_config("bnode", T1DEXI_INPUTS).epochs == 100
        assert default_train_config("bnode", SYNTHETIC_INPUTS).epochs == 50

    def test_invalid_values(self) -> None:
        """Non-positive rates and single folds are rejected."""
        with pytest.raises(ValidationError):
            TrainConfig(lr=0.0)
        with pytest.raises(ValidationError):
            TrainConfig(epochs=0)
        with pytest.raises(ValidationError):
            CvConfig(outer_folds=1)

    def test_repeat_seeds(self) -> None:
        """Repeat r uses s + r - 2."""
        cv = CvConfig(seed=2024)
        assert [cv.repeat_seed(r) for r in (1, 2, 3)] == [2023, 2024, 2025]


class TestGrids:
    """Default grids and the parameter cap."""

    @pytest.mark.parametrize("variant", list(Variant))
    @pytest.mark.parametrize("names", [T1DEXI_INPUTS, SYNTHETIC_INPUTS])
    def test_default_grids_under_cap(self, variant, names) -> None:
        """Every shipped grid point stays below 25,000 parameters."""
        grid = default_grid(variant, names, 6)
        assert grid.points
        assert max(grid.param_counts(names, 6)) < 25_000

    @pytest.mark.parametrize("variant", ["lp", "mnode"])
    def test_full_model_grids(self, variant) -> None:
        """Full-model grids exist for LP and MNODE."""
        grid = default_grid(variant, T1DEXI_INPUTS, 6, mech=MechKind.FULL)
        assert grid.mech is MechKind.FULL
        assert max(grid.param_counts(T1DEXI_INPUTS, 6)) < 25_000

    def test_large_bnode_points_dropped(self) -> None:
        """Wide BNODE points over the cap do not ship."""
        grid = default_grid("bnode", T1DEXI_INPUTS, 6)
        assert len(grid.points) < 54

    def test_axes_product(self) -> None:
        """Grids expand the Cartesian product of their axes."""
        grid = GridSpec.from_axes("lstm", {"hidden_layers": [2, 3], "hidden_units": [8, 12, 16]})
        assert len(grid.points) == 6
        assert {tuple(p.values()) for p in grid.points} == {(n, m) for n in (2, 3) for m in (8, 12, 16)}

    def test_over_cap_file_rejected(self, tmp_path) -> None:
        """Loading a grid with an oversized point fails with its count."""
        path = tmp_path / "grid.json"
        GridSpec(variant=Variant.LSTM, points=[{"hidden_units": 8}, {"hidden_units": 200}]).save(path)
        with pytest.raises(ConfigError, match="parameters; the cap is 25000"):
            GridSpec.load(path, SYNTHETIC_INPUTS, 10)

    def test_unknown_field_rejected(self) -> None:
        """Grid points may only override model fields."""
        with pytest.raises(ValidationError):
            GridSpec(variant=Variant.LSTM, points=[{"learning_rate": 0.1}])


class TestTrain:
    """The training loop."""

    def test_linear_slope(self) -> None:
        """A one-parameter model on y = 3 x recovers the slope."""
        cfg = TrainConfig(lr=0.05, epochs=500, batch_size=None, seed=1)
        result = train(LinearToy(), _linear_episodes(8, 0), _linear_episodes(4, 1, "val"), cfg)
        assert result.model.params.values[0] == pytest.approx(3.0, abs=1e-2)

    def test_history_and_snapshot(self) -> None:
        """History has one record per epoch and the returned model is the argmin epoch."""
        cfg = TrainConfig(lr=0.05, epochs=15, batch_size=4, seed=2)
        val = _linear_episodes(4, 1, "val")
        model = LinearToy()
        result = train(model, _linear_episodes(8, 0), val, cfg)
        assert len(result.history) == 15
        losses = [r.val_loss for r in result.history]
        assert result.best_epoch == int(np.argmin(losses)) + 1
        assert evaluate_loss(model, result.model.params, val, cfg, {}, 0.0) == pytest.approx(min(losses), rel=1e-12)
        assert result.best_val <= losses[0]
        assert all(r.grad_norm >= 0.0 for r in result.history)

    def test_alpha_zero_skips_causal_terms(self, data, iv_sets) -> None:
        """With alpha = 0 neither counterfactuals nor the causal loss are computed."""
        model = build_model(variant_config("uva", SYNTHETIC_INPUTS, 10), Standardizer.fit(data.train))
        with patch.object(model, "counterfactual") as cf, patch("hybrid_ode.harness.training.causal_loss_batch") as cl:
            train(model, data.train, data.val, FAST, iv_sets)
        cf.assert_not_called()
        cl.assert_not_called()

    def test_causal_training_runs(self, data, iv_sets) -> None:
        """A mixed objective trains end to end."""
        cfg = FAST.model_copy(update={"alpha": 0.5})
        result = train_variant(variant_config("uva", SYNTHETIC_INPUTS, 10), data.train, data.val, cfg, iv_sets)
        assert all(np.isfinite(r.train_loss) for r in result.history)

    def test_alpha_needs_sets(self, data) -> None:
        """A causal objective without intervention sets is a config error."""
        model = build_model(variant_config("uva", SYNTHETIC_INPUTS, 10), Standardizer.fit(data.train))
        with pytest.raises(ConfigError, match="intervention sets"):
            train(model, data.train, data.val, FAST.model_copy(update={"alpha": 0.1}))

    def test_all_batches_divergent(self) -> None:
        """An epoch without a finite batch is a training failure."""
        bad = [Episode("bad", np.zeros((3, 3)), 0.0, np.ones((4, 2)), np.ones(4), SYNTHETIC_INPUTS)]
        with pytest.raises(TrainingError) as exc:
            train(LinearToy(), bad, _linear_episodes(2, 1), FAST)
        assert exc.value.diagnostics["epoch"] == 1

    def test_learning_rate_halved(self) -> None:
        """Three epochs in a row with a divergent batch halve the learning rate."""
        bad = Episode("bad", np.zeros((3, 3)), 0.0, np.ones((4, 2)), np.ones(4), SYNTHETIC_INPUTS)
        cfg = TrainConfig(lr=0.04, epochs=4, batch_size=1)
        result = train(LinearToy(), [*_linear_episodes(3, 0), bad], _linear_episodes(2, 1, "val"), cfg)
        assert [r.lr for r in result.history] == [0.04, 0.04, 0.02, 0.02]
        assert all(r.divergent_batches == 1 for r in result.history)

    def test_empty_split(self) -> None:
        """Training needs data."""
        with pytest.raises(InputError):
            train(LinearToy(), [], _linear_episodes(2, 1), FAST)


class TestTrainLpsc:
    """Two-phase closure training."""

    @pytest.fixture(scope="class")
    def setup(self, data):
        cfg = variant_config("lpsc", SYNTHETIC_INPUTS, 10, hidden_units=8)
        std = Standardizer.fit(data.train)
        tcfg = TrainConfig(lr=0.01, epochs=2, closure_epochs=2, batch_size=None)
        phase1 = train(build_model(cfg.model_copy(update={"w": 0}), std), data.train, data.val, tcfg)
        result = train_lpsc(cfg, std, data.train, data.val, tcfg)
        return cfg, std, phase1, result

    def test_phase_two_freezes_latent_model(self, setup) -> None:
        """Only the closure networks move in phase 2."""
        _, _, phase1, result = setup
        keep = ~result.model.params.mask(["closure"])
        np.testing.assert_array_equal(result.model.params.values[keep], phase1.model.params.values[keep])
        assert result.model.cfg.w == 1

    def test_continuity_at_gate(self, setup, data) -> None:
        """Opening the gate with zero closure outputs leaves the loss unchanged."""
        cfg, std, phase1, _ = setup
        opened = build_model(cfg.model_copy(update={"w": 1}), std)
        start = phase1.model.params.copy()
        opened.zero_closure_outputs(start)
        assert evaluate_loss(opened, start, data.val, TrainConfig(), {}, 0.0) == phase1.best_val

    def test_never_worse_than_phase_one(self, setup) -> None:
        """Epoch selection keeps the phase-1 solution unless the closure helps."""
        _, _, phase1, result = setup
        assert result.best_val <= phase1.best_val + 1e-9
        assert len(result.history) == 4

    def test_requires_lpsc(self, data) -> None:
        """Other variants are rejected."""
        with pytest.raises(ConfigError, match="LPSC"):
            train_lpsc(variant_config("lp", SYNTHETIC_INPUTS, 10), IDENTITY, data.train, data.val, FAST)


def _fake_result(best_val: float) -> TrainResult:
    return TrainResult(model=None, history=[], best_epoch=1, best_val=best_val)  # type: ignore[arg-type]


class TestGridSearch:
    """Inner-loop hyperparameter selection."""

    def test_single_point(self, episodes) -> None:
        """A one-point grid returns that point."""
        configs = UVA_GRID.configs(SYNTHETIC_INPUTS, 10)
        with patch("hybrid_ode.harness.cv.train_variant", return_value=_fake_result(1.0)):
            best, scores = grid_search(configs, episodes, FAST, 4)
        assert best == 0
        assert scores == [3.0]

    def test_each_point_trained_on_m_minus_one_folds(self, episodes) -> None:
        """Every point is scored on exactly M - 1 inner folds."""
        grid = GridSpec(variant=Variant.UVA, points=[{"dt": 1.0}, {"dt": 0.5}])
        configs = grid.configs(SYNTHETIC_INPUTS, 10)
        with patch("hybrid_ode.harness.cv.train_variant", return_value=_fake_result(1.0)) as fit:
            grid_search(configs, episodes, FAST, 4)
        assert fit.call_count == 6
        assert [c.args[0].dt for c in fit.call_args_list].count(0.5) == 3

    def test_divergent_point_never_wins(self, episodes) -> None:
        """A point failing on every fold scores +inf and loses to any finite point."""
        grid = GridSpec(variant=Variant.UVA, points=[{"dt": 1.0}, {"dt": 0.5}])

        def fit(model_cfg, *args, **kwargs):
            if model_cfg.dt == 1.0:
                raise TrainingError("diverged")
            return _fake_result(50.0)

        with patch("hybrid_ode.harness.cv.train_variant", side_effect=fit):
            best, scores = grid_search(grid.configs(SYNTHETIC_INPUTS, 10), episodes, FAST, 3)
        assert best == 1
        assert scores[0] == float("inf")

    def test_ties_go_to_first(self, episodes) -> None:
        """Equal scores select the earlier point."""
        grid = GridSpec(variant=Variant.UVA, points=[{"dt": 1.0}, {"dt": 0.5}])
        with patch("hybrid_ode.harness.cv.train_variant", return_value=_fake_result(2.0)):
            best, _ = grid_search(grid.configs(SYNTHETIC_INPUTS, 10), episodes, FAST, 3)
        assert best == 0

    def test_empty_grid(self, episodes) -> None:
        """An empty grid is an input error."""
        with pytest.raises(InputError):
            grid_search([], episodes, FAST, 4)


class TestNestedCv:
    """Repeated nested cross-validation."""

    CV = CvConfig(repeats=3, outer_folds=6, inner_folds=2, seed=7)
    CFG = TrainConfig(lr=0.05, epochs=1, batch_size=None)

    @pytest.fixture(scope="class")
    def report(self, episodes, iv_sets) -> RunReport:
        return nested_cv(episodes, UVA_GRID, self.CV, self.CFG, iv_sets, name="uva")

    def test_eighteen_evaluations(self, report) -> None:
        """R = 3 and N = 6 give 18 outer evaluations."""
        assert len(report.folds) == 18
        assert len(report.rmses) == 18
        assert len(report.class_errors) == 18
        assert [(f.repeat, f.fold) for f in report.folds] == [(r, i) for r in (1, 2, 3) for i in range(1, 7)]

    def test_no_leakage(self, report, episodes) -> None:
        """Test episodes never train or select their own fold's model."""
        for f in report.folds:
            assert not set(f.test_ids) & (set(f.train_ids) | set(f.val_ids))
        for r in (1, 2, 3):
            tested = [i for f in report.folds if f.repeat == r for i in f.test_ids]
            assert sorted(tested) == sorted(ep.id for ep in episodes)

    def test_repeats_permute_differently(self, report) -> None:
        """Each repeat draws its own permutation."""
        firsts = [tuple(f.test_ids) for f in report.folds if f.fold == 1]
        assert len(set(firsts)) == 3
        assert [f.seed for f in report.folds if f.fold == 1] == [6, 7, 8]

    def test_deterministic(self, report, episodes, iv_sets) -> None:
        """A rerun produces an identical report."""
        again = nested_cv(episodes, UVA_GRID, self.CV, self.CFG, iv_sets, name="uva")
        assert again.to_json() == report.to_json()

    def test_summary(self, report) -> None:
        """Aggregates come from the per-fold values."""
        assert report.summary.rmse_mean == pytest.approx(np.mean(report.rmses))
        assert set(report.summary.class_error_percentiles) == {"10", "50", "90"}

    def test_run_directory(self, episodes, iv_sets, tmp_path) -> None:
        """Runs write per-fold artifacts and a report that reloads."""
        cv = CvConfig(repeats=1, outer_folds=3, inner_folds=2, seed=7)
        report = nested_cv(episodes, UVA_GRID, cv, self.CFG, iv_sets, run_dir=tmp_path)
        assert (tmp_path / "folds" / "1_1" / "model.json").exists()
        assert (tmp_path / "folds" / "1_3" / "history.csv").exists()
        assert len((tmp_path / "report.csv").read_text().splitlines()) == 4
        assert RunReport.load(tmp_path / "report.json").to_json() == report.to_json()
        assert json.loads((tmp_path / "report.json").read_text())["schema"] == "h2ncm-report/1"

    def test_cached_cells_reused(self, episodes, iv_sets, tmp_path) -> None:
        """A resumed run reads finished grid cells instead of retraining them."""
        cv = CvConfig(repeats=1, outer_folds=3, inner_folds=2, seed=7)
        first = nested_cv(episodes, UVA_GRID, cv, self.CFG, iv_sets, run_dir=tmp_path)
        with patch("hybrid_ode.harness.cv._score_point") as score:
            second = nested_cv(episodes, UVA_GRID, cv, self.CFG, iv_sets, run_dir=tmp_path)
        score.assert_not_called()
        assert second.to_json() == first.to_json()

    @pytest.mark.slow
    def test_parallel_matches_serial(self, episodes, iv_sets) -> None:
        """Worker processes give the same report as a serial run."""
        cv = CvConfig(repeats=1, outer_folds=3, inner_folds=2, seed=3)
        serial = nested_cv(episodes, UVA_GRID, cv, self.CFG, iv_sets)
        parallel = nested_cv(episodes, UVA_GRID, cv, self.CFG, iv_sets, jobs=2)
        assert parallel.to_json() == serial.to_json()

    def test_too_few_episodes(self, episodes) -> None:
        """Fewer episodes than outer folds is an input error."""
        with pytest.raises(InputError):
            nested_cv(episodes[:5], UVA_GRID, self.CV, self.CFG)

    def test_fold_too_small(self, episodes) -> None:
        """Outer folds must leave enough episodes for the inner split."""
        with pytest.raises(DataError, match="training episodes"):
            fold_plan(episodes[:8], CvConfig(outer_folds=4, inner_folds=4))

    def test_test_labels_kept_clean(self, episodes, iv_sets) -> None:
        """Separate test sets are the ones scored on held-out folds."""
        clean = index_sets(iv_sets)
        flipped = {k: s.with_label((s.true_label + 1) % s.K) for k, s in clean.items()}
        cv = CvConfig(repeats=1, outer_folds=3, inner_folds=2, seed=7)
        with patch("hybrid_ode.harness.cv.evaluate", wraps=evaluate) as ev:
            nested_cv(episodes, UVA_GRID, cv, self.CFG, flipped, test_iv_sets=clean)
        expected = {k: s.true_label for k, s in clean.items()}
        assert ev.call_count == 3
        for call in ev.call_args_list:
            assert {k: s.true_label for k, s in call.args[3].items()} == expected


class TestMetrics:
    """Error summaries."""

    def test_constant_percentiles(self) -> None:
        """A constant list has that value at every percentile."""
        assert percentiles([0.25] * 7) == {"10": 0.25, "50": 0.25, "90": 0.25}

    def test_linear_interpolation(self) -> None:
        """Percentiles interpolate between order statistics."""
        assert percentiles([0.0, 1.0, 2.0, 3.0, 4.0])["10"] == pytest.approx(0.4)

    def test_perfect_classifier(self) -> None:
        """Always-correct decisions have zero error."""
        err = classification_error([0, 2, 1], [0, 2, 1])
        assert percentiles([err] * 18)["90"] == 0.0

    def test_random_guessing(self) -> None:
        """Uniform guesses on K = 3 sets are wrong about two thirds of the time."""
        rng = SeededRng(5)
        errors = [
            classification_error(rng.integers(3, size=60), rng.integers(3, size=60))
            for _ in range(18)
        ]
        assert percentiles(errors)["50"] == pytest.approx(2 / 3, abs=0.1)

    def test_mean_stderr(self) -> None:
        """Standard error uses the sample deviation."""
        mean, stderr = mean_stderr([1.0, 2.0, 3.0])
        assert mean == 2.0
        assert stderr == pytest.approx(1.0 / np.sqrt(3.0))
        assert mean_stderr([4.0]) == (4.0, 0.0)

    def test_rmse(self) -> None:
        """Errors of 3 and 4 give sqrt(12.5)."""
        assert rmse(np.array([[3.0, 4.0]]), np.zeros((1, 2))) == pytest.approx(np.sqrt(12.5))

    def test_empty_inputs(self) -> None:
        """Empty lists have no summary."""
        with pytest.raises(InputError):
            summarize([])
        with pytest.raises(InputError):
            percentiles([])

    def test_summary_without_sets(self) -> None:
        """Runs without intervention sets report only RMSE."""
        summary = summarize([1.0, 3.0])
        assert summary.rmse_mean == 2.0
        assert summary.class_error_percentiles is None


class TestEvaluate:
    """Held-out metrics."""

    def test_ground_truth_model(self, data) -> None:
        """The data-generating drift has zero RMSE and scores every set."""
        cfg = variant_config("uva", SYNTHETIC_INPUTS, 10, dt=SyntheticConfig().dt, mech_init="default")
        model = build_model(cfg, Standardizer.fit(data.train))
        trained = TrainedModel(model, model.init_params(SeededRng(0)))
        sets = make_intervention_sets(data.test, data.truth)
        metrics = evaluate(trained, data.test, TrainConfig(), sets)
        assert metrics.rmse < 1e-6
        assert metrics.n_sets == len(data.test)
        assert 0.0 <= metrics.class_error <= 1.0
        assert metrics.causal_loss > 0.0

    def test_without_sets(self, data) -> None:
        """Episodes without intervention sets get predictive metrics only."""
        model = build_model(variant_config("lstm", SYNTHETIC_INPUTS, 10), Standardizer.fit(data.train))
        metrics = evaluate(TrainedModel(model, model.init_params(SeededRng(0))), data.test, TrainConfig())
        assert metrics.class_error is None
        assert metrics.n_sets == 0

    def test_empty_split(self) -> None:
        """Evaluation needs episodes."""
        model = LinearToy()
        with pytest.raises(InputError):
            evaluate(TrainedModel(model, model.init_params(SeededRng(0))), [], TrainConfig())


class TestSweeps:
    """Temperature and corruption experiments."""

    def test_temperature_sweep(self, data, iv_sets) -> None:
        """One point per temperature."""
        cfg = FAST.model_copy(update={"alpha": 0.5, "epochs": 1})
        points = temperature_sweep(variant_config("uva", SYNTHETIC_INPUTS, 10), data.train, data.val, iv_sets, [0.5, 2.0], cfg)
        assert [p.phi for p in points] == [0.5, 2.0]
        assert all(np.isfinite(p.final_loss) for p in points)

    def test_temperature_needs_alpha(self, data, iv_sets) -> None:
        """The temperature only matters with a causal term."""
        with pytest.raises(ConfigError):
            temperature_sweep(variant_config("uva", SYNTHETIC_INPUTS, 10), data.train, data.val, iv_sets, [1.0], FAST)

    def test_corruption_sweep_grid(self, episodes, iv_sets) -> None:
        """Every (rate, alpha) pair runs once with clean test labels."""
        with patch("hybrid_ode.harness.sweeps.nested_cv") as run:
            reports = corruption_sweep(episodes, iv_sets, UVA_GRID, CvConfig(), FAST, rates=(0.0, 1.0), alphas=(0.0, 0.1))
        assert set(reports) == {(0.0, 0.0), (0.0, 0.1), (1.0, 0.0), (1.0, 0.1)}
        assert run.call_count == 4
        full = [c for c in run.call_args_list if c.kwargs["name"].startswith("rho1_")]
        for call in full:
            assert call.kwargs["test_iv_sets"] is iv_sets
            assert all(a.true_label != b.true_label for a, b in zip(call.kwargs["iv_sets"], iv_sets))
