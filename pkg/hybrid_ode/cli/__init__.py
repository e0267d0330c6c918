"""Command-line interface: data generation, training, cross-validation, graph reduction and reports."""

from .main import COMMANDS, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, build_parser, main, replay, resolve_options
from .manifest import MANIFEST_SCHEMA, RunManifest, digest_path
from .report import RANDOM_GUESS, ReportRow, bar_chart, collect_reports, write_charts, write_summary_csv

__all__ = [
    "COMMANDS",
    "EXIT_DATA",
    "EXIT_NUMERIC",
    "EXIT_OK",
    "EXIT_USAGE",
    "MANIFEST_SCHEMA",
    "RANDOM_GUESS",
    "ReportRow",
    "RunManifest",
    "bar_chart",
    "build_parser",
    "collect_reports",
    "digest_path",
    "main",
    "replay",
    "resolve_options",
    "write_charts",
    "write_summary_csv",
]
