"""
Command-line entry point.

Every command resolves its options (flags over ``--config`` file over
environment over defaults), writes a manifest before any work starts and
updates it with the outcome. Exit codes: 0 success, 1 usage error, 2 data or
schema error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, NoReturn, Optional, Sequence

from pydantic import ValidationError

from hybrid_ode import __version__
from hybrid_ode.core.config import HybridSettings, load_settings
from hybrid_ode.core.exceptions import ConfigError, DataError, HybridError, InputError, NumericError, TrainingError
from hybrid_ode.hybrid import Variant

from . import commands
from .manifest import MANIFEST_SUFFIX, RunManifest, digest_path

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DEFAULT_ALPHAS = (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)

Handler = Callable[[commands.Options, HybridSettings], list[Path]]


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        msg = f"must be a positive integer, got {text}"
        raise argparse.ArgumentTypeError(msg)
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        msg = f"must be zero or positive, got {text}"
        raise argparse.ArgumentTypeError(msg)
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0.0:
        msg = f"must be positive, got {text}"
        raise argparse.ArgumentTypeError(msg)
    return value


def _unit_float(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        msg = f"must lie in [0, 1], got {text}"
        raise argparse.ArgumentTypeError(msg)
    return value


def _alpha_list(text: str) -> list[float]:
    parts = [p for p in text.split(",") if p.strip()]
    if not parts:
        msg = "needs at least one alpha"
        raise argparse.ArgumentTypeError(msg)
    return [_unit_float(p.strip()) for p in parts]


@dataclass(frozen=True)
class OptionSpec:
    """One command option and where its value may come from."""

    flag: str
    text: str
    convert: Callable[[str], Any] = str
    default: Any = None
    choices: Optional[tuple[str, ...]] = None
    required: bool = False
    setting: Optional[str] = None

    @property
    def dest(self) -> str:
        """Option name in resolved option maps."""
        return self.flag.lstrip("-").replace("-", "_")

    def coerce(self, value: Any) -> Any:
        """
        Convert a config-file value the way argparse converts the flag.

        Raises:
            ConfigError: If the value is invalid

        """
        text = ",".join(str(v) for v in value) if isinstance(value, list) else str(value)
        try:
            converted = self.convert(text)
        except (argparse.ArgumentTypeError, ValueError) as e:
            msg = f"Config value for {self.flag} is invalid: {e}"
            raise ConfigError(msg) from e
        if self.choices is not None and converted not in self.choices:
            msg = f"Config value for {self.flag} must be one of {list(self.choices)}"
            raise ConfigError(msg)
        return converted


@dataclass(frozen=True)
class CommandSpec:
    """A subcommand: its options, handler, input paths and manifest location."""

    name: str
    summary: str
    handler: Handler
    options: tuple[OptionSpec, ...]
    manifest: Callable[[commands.Options], Path]
    inputs: tuple[str, ...] = field(default_factory=tuple)


def _next_to(key: str) -> Callable[[commands.Options], Path]:
    return lambda opts: Path(opts[key]).with_suffix(MANIFEST_SUFFIX)


def _inside(key: str, name: str = "manifest.json") -> Callable[[commands.Options], Path]:
    return lambda opts: Path(opts[key]) / name


_VARIANTS = tuple(v.value for v in Variant)
_SEED = OptionSpec("--seed", "Base seed", int, setting="seed")
_JOBS = OptionSpec("--jobs", "Worker processes", _positive_int, setting="jobs")
_EPOCHS = OptionSpec("--epochs", "Epoch budget; the variant's published budget when unset", _positive_int)
_TRAINING = (
    _SEED,
    OptionSpec("--phi", "Softmax temperature of the causal loss", _positive_float, 1.0),
    _EPOCHS,
    OptionSpec("--lr", "Learning rate; the variant's published rate when unset", _positive_float),
    OptionSpec("--batch-size", "Episodes per step; 0 for full batch", _non_negative_int),
    OptionSpec("--grid", "Grid file; the shipped grid when unset"),
)

COMMANDS: dict[str, CommandSpec] = {
    spec.name: spec
    for spec in (
        CommandSpec(
            "gen-synthetic",
            "Generate the synthetic dataset with labelled intervention sets",
            commands.gen_synthetic_cmd,
            (
                OptionSpec("--out", "Output directory", required=True),
                _SEED,
                OptionSpec("--train", "Training episodes", _positive_int, 600),
                OptionSpec("--val", "Validation episodes", _positive_int, 200),
                OptionSpec("--test", "Test episodes", _positive_int, 200),
            ),
            _inside("out"),
        ),
        CommandSpec(
            "train",
            "Train one model variant",
            commands.train_cmd,
            (
                OptionSpec("--model", "Model variant", choices=_VARIANTS, required=True),
                OptionSpec("--alpha", "Weight of the causal loss in [0, 1]", _unit_float, 0.0),
                OptionSpec("--data", "Data directory", required=True),
                OptionSpec("--out", "Model file", required=True),
                *_TRAINING,
            ),
            _next_to("out"),
            ("data", "grid"),
        ),
        CommandSpec(
            "cv",
            "Repeated nested cross-validation at several alphas",
            commands.cv_cmd,
            (
                OptionSpec("--model", "Model variant", choices=_VARIANTS, required=True),
                OptionSpec("--alphas", "Comma-separated alphas", _alpha_list, list(DEFAULT_ALPHAS)),
                OptionSpec("--data", "Data directory", required=True),
                OptionSpec("--out", "Runs directory", setting="runs_dir"),
                OptionSpec("--repeats", "Repeats R", _positive_int, 3),
                OptionSpec("--outer", "Outer folds N", _positive_int, 6),
                OptionSpec("--inner", "Inner folds M", _positive_int, 4),
                _JOBS,
                *_TRAINING,
            ),
            _inside("out"),
            ("data", "grid"),
        ),
        CommandSpec(
            "counterfactual",
            "Simulate an episode's intervention variants with a trained model",
            commands.counterfactual_cmd,
            (
                OptionSpec("--model", "Model file", required=True),
                OptionSpec("--episode", "Episode id", required=True),
                OptionSpec("--episodes", "Episode file holding the episode", required=True),
                OptionSpec("--interventions", "Intervention-set file", required=True),
                OptionSpec("--out", "Output JSON file", required=True),
                OptionSpec("--score", "Trajectory score", choices=("mean", "max", "min"), default="mean"),
            ),
            _next_to("out"),
            ("model", "episodes", "interventions"),
        ),
        CommandSpec(
            "reduce-graph",
            "Reduce a causal graph under the validation-loss rule",
            commands.reduce_graph_cmd,
            (
                OptionSpec("--graph", "Starting graph file", required=True),
                OptionSpec("--data", "Data directory with train and val splits", required=True),
                OptionSpec("--out", "Reduced graph file", required=True),
                OptionSpec("--audit", "Audit log; next to the output when unset"),
                OptionSpec("--tolerance", "Allowed relative loss increase", _positive_float, 0.10),
                OptionSpec("--epochs", "Epochs per candidate", _positive_int, 20),
                _SEED,
                _JOBS,
            ),
            _next_to("out"),
            ("graph", "data"),
        ),
        CommandSpec(
            "report",
            "Summarize cross-validation runs as CSV or SVG charts",
            commands.report_cmd,
            (
                OptionSpec("--runs", "Runs directory", setting="runs_dir"),
                OptionSpec("--format", "Output format", choices=("csv", "svg"), default="csv"),
                OptionSpec("--out", "Output directory; the runs directory when unset"),
            ),
            lambda opts: Path(opts["out"] or opts["runs"]) / "report.manifest.json",
            ("runs",),
        ),
        CommandSpec(
            "export-graph",
            "Write a shipped causal graph as a graph file",
            commands.export_graph_cmd,
            (
                OptionSpec("--kind", "Graph", choices=("full", "reduced", "synthetic"), required=True),
                OptionSpec("--out", "Graph file", required=True),
            ),
            _next_to("out"),
        ),
    )
}


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with status 1."""

    def error(self, message: str) -> NoReturn:
        """Print usage and exit with the usage status."""
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    """Parser with one subcommand per entry of COMMANDS plus replay."""
    parser = _Parser(prog="hybridkit", description="Hybrid mechanistic/neural ODE experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON file of option values")
    parser.add_argument("--env-file", help=".env file; searched upwards from the working directory when unset")
    parser.add_argument("--log-level", help="Logging level; H2NCM_LOG_LEVEL when unset")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for spec in COMMANDS.values():
        p = sub.add_parser(spec.name, help=spec.summary, description=spec.summary)
        for opt in spec.options:
            extra = f" (default: {opt.default})" if opt.default is not None else ""
            if opt.setting is not None:
                extra += f" (env: H2NCM_{opt.setting.upper()})"
            p.add_argument(opt.flag, type=opt.convert, choices=opt.choices, default=None, help=opt.text + extra)
    replay = sub.add_parser("replay", help="Re-run a command from its manifest", description="Re-run a command from its manifest")
    replay.add_argument("--manifest", required=True, help="Manifest file")
    replay.add_argument("--force", action="store_true", help="Replay even if an input changed")
    return parser


def _is_section(config: dict[str, Any], key: str) -> bool:
    # Option values are never JSON objects.
    return key in COMMANDS and isinstance(config.get(key), dict)


def load_config_file(path: str | Path | None) -> dict[str, Any]:
    """
    Read a ``--config`` file.

    Top-level keys apply to every command with that option; a key named after a
    command holds values for that command only.

    Raises:
        ConfigError: If the file is unreadable or names an unknown option

    """
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        msg = f"Cannot read config file {path}: {e}"
        raise ConfigError(msg) from e
    if not isinstance(raw, dict):
        msg = f"Config file {path} must hold a JSON object"
        raise ConfigError(msg)
    known = {opt.dest for spec in COMMANDS.values() for opt in spec.options}
    for key, value in raw.items():
        keys = value.keys() if _is_section(raw, key) else [key]
        unknown = sorted(set(keys) - known)
        if unknown:
            msg = f"Unknown options in config file {path}: {unknown}"
            raise ConfigError(msg)
    return raw


def resolve_options(
    spec: CommandSpec,
    flags: dict[str, Any],
    config: dict[str, Any],
    settings: HybridSettings,
) -> commands.Options:
    """
    Effective options of a command: flags, then config file, then settings, then defaults.

    Raises:
        ConfigError: If a required option has no value or a config value is invalid

    """
    scoped = config[spec.name] if _is_section(config, spec.name) else {}
    opts: commands.Options = {}
    for opt in spec.options:
        key = opt.dest
        if flags.get(key) is not None:
            value = flags[key]
        elif key in scoped:
            value = opt.coerce(scoped[key])
        elif key in config and not _is_section(config, key):
            value = opt.coerce(config[key])
        elif opt.setting is not None:
            value = getattr(settings, opt.setting)
        else:
            value = opt.default
        if isinstance(value, Path):
            value = str(value)
        if value is None and opt.required:
            msg = f"{spec.name} needs {opt.flag}"
            raise ConfigError(msg)
        opts[key] = value
    return opts


def exit_code(error: BaseException) -> int:
    """Exit status of a failed command."""
    if isinstance(error, (NumericError, TrainingError)):
        return EXIT_NUMERIC
    if isinstance(error, (ConfigError, InputError, ValidationError)):
        return EXIT_USAGE
    return EXIT_DATA


def run_command(
    spec: CommandSpec,
    opts: commands.Options,
    settings: HybridSettings,
    argv: Sequence[str],
    manifest_path: Path | None = None,
) -> list[Path]:
    """
    Write the manifest, run the handler and record the outcome.

    Raises:
        DataError: If an input path does not exist

    """
    commands.check_inputs(opts, spec.inputs)
    inputs = {k: digest_path(opts[k]) for k in spec.inputs if opts.get(k) is not None}
    seeds = {"seed": opts["seed"]} if opts.get("seed") is not None else {}
    manifest = RunManifest(command=spec.name, argv=list(argv), options=opts, seeds=seeds, inputs=inputs, version=__version__)
    path = manifest_path or spec.manifest(opts)
    manifest.save(path)
    logger.info("Running %s (manifest %s)", spec.name, path)
    try:
        written = spec.handler(opts, settings)
    except BaseException as e:
        manifest.finish(str(e)).save(path)
        raise
    manifest.finish().save(path)
    for item in written:
        logger.info("Wrote %s", item)
    return written


def replay(manifest_file: str | Path, settings: HybridSettings, force: bool = False) -> list[Path]:
    """
    Re-run the command recorded in a manifest with its effective options.

    The new manifest goes next to the old one with a ``replay.`` prefix, so the
    recorded run is left untouched.

    Raises:
        DataError: If an input changed since the recorded run and ``force`` is off
        ConfigError: If the manifest names an unknown command

    """
    manifest = RunManifest.load(manifest_file)
    spec = COMMANDS.get(manifest.command)
    if spec is None:
        msg = f"Manifest {manifest_file} records unknown command {manifest.command!r}"
        raise ConfigError(msg)
    commands.check_inputs(manifest.options, tuple(manifest.inputs))
    for key, digest in manifest.inputs.items():
        if digest_path(manifest.options[key]) != digest:
            if not force:
                msg = f"Input --{key} {manifest.options[key]} changed since the recorded run"
                raise DataError(msg, field=key)
            logger.warning("Input --%s changed since the recorded run", key)
    source = Path(manifest_file)
    target = source.with_name(f"replay.{source.name}")
    return run_command(spec, dict(manifest.options), settings, manifest.argv, target)


def _configure_logging(level: str) -> None:
    if not isinstance(logging.getLevelName(level), int):
        msg = f"Unknown log level: {level}"
        raise ConfigError(msg)
    logging.basicConfig(format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)


def main(argv: Sequence[str] | None = None) -> int:
    """Console entry point; returns the exit status."""
    args_list = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(args_list)
    except SystemExit as e:
        if e.code is None:
            return EXIT_OK
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    settings: HybridSettings | None = None
    try:
        settings = load_settings(args.env_file)
        level = args.log_level or ("DEBUG" if settings.debug else settings.log_level)
        _configure_logging(level.upper())
        if args.command == "replay":
            replay(args.manifest, settings, args.force)
        else:
            spec = COMMANDS[args.command]
            config = load_config_file(args.config)
            flags = {opt.dest: getattr(args, opt.dest) for opt in spec.options}
            run_command(spec, resolve_options(spec, flags, config, settings), settings, args_list)
    except (HybridError, ValidationError, OSError) as e:
        code = exit_code(e)
        if settings is not None and settings.debug:
            logger.exception("%s failed", args.command)
        else:
            logger.error("%s failed: %s", args.command, e)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
