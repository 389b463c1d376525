"""Command-line runner: ``fracsob run|list|version``.

Exit codes: 0 when every row passes, 1 when some inequality or tolerance row
fails, 2 for an invalid configuration (nothing is written), 3 when a
numerical failure aborted one or more tasks (a partial report is written
with failure rows).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import __version__
from .errors import FracSobError, InvalidParameter
from .experiments import GRID_KEYS, NAN, REGISTRY, Context, Row, list_experiments
from .manifold import ManifoldSpec, make_manifold

EXIT_OK, EXIT_FAILED_ROWS, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
CONFIG_KEYS = ("experiment", "manifold", "grid", "truncation", "order", "seed", "output", "format")
COLUMNS = ("experiment", "manifold", "s", "p", "q", "extra", "lhs", "rhs", "deficit", "err_est", "pass")
NORMALIZATION = {
    "c_s": "1/|Gamma(-s)|",
    "c_sp": "1/|Gamma(-sp/2)|",
    "dtn_c": "2^(2s-1) Gamma(s)/Gamma(1-s)",
    "bubble_C_ns": "1",
}
THREADS_ENV = "FRACSOB_THREADS"


class ConfigError(Exception):
    pass


@dataclass
class ExperimentConfig:
    name: str
    manifold: ManifoldSpec | None
    grid: dict = field(default_factory=dict)
    truncation: int | None = None
    order: int | None = None
    seed: int = 0
    output: str | None = None
    format: str = "csv"

    def echo(self) -> dict:
        return {
            "experiment": self.name,
            "manifold": self.manifold.to_dict() if self.manifold else None,
            "grid": self.grid,
            "truncation": self.truncation,
            "order": self.order,
            "seed": self.seed,
            "output": self.output,
            "format": self.format,
        }


def _number_list(key, value) -> list[float]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
        raise ConfigError(f"grid.{key} must be a number or a list of numbers")
    if any(not math.isfinite(v) for v in value):
        raise ConfigError(f"grid.{key} must be finite")
    return [float(v) for v in value]


def _opt_int(data, key, minimum):
    v = data.get(key)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{key} must be an integer >= {minimum}")
    return v


def parse_config(data, name: str) -> ExperimentConfig:
    """Strict parse of a JSON config document for the experiment ``name``."""
    if name not in REGISTRY:
        raise ConfigError(f"unknown experiment {name!r}; see 'fracsob list'")
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    if data.get("experiment", name) != name:
        raise ConfigError(f"config is for {data['experiment']!r}, not {name!r}")
    exp = REGISTRY[name]
    spec = exp.default_manifold
    if data.get("manifold") is not None:
        if not isinstance(data["manifold"], dict):
            raise ConfigError("manifold must be an object")
        try:
            spec = ManifoldSpec.from_dict(data["manifold"])
        except (InvalidParameter, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid manifold: {exc}") from exc
    if exp.manifolds and (spec is None or spec.kind not in exp.manifolds):
        raise ConfigError(f"{name} supports manifolds {list(exp.manifolds)}")
    grid_in = data.get("grid") or {}
    if not isinstance(grid_in, dict):
        raise ConfigError("grid must be an object")
    bad = sorted(set(grid_in) - set(GRID_KEYS))
    if bad:
        raise ConfigError(f"unknown grid keys {bad}")
    unused = sorted(set(grid_in) - set(exp.grid_keys))
    if unused:
        raise ConfigError(f"{name} does not use grid keys {unused}; it uses {list(exp.grid_keys)}")
    grid = {k: list(v) for k, v in exp.defaults.items()}
    for k, v in grid_in.items():
        grid[k] = _number_list(k, v)
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    fmt = data.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError("format must be 'csv' or 'json'")
    out = data.get("output")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output must be a string path")
    return ExperimentConfig(name, spec, grid, _opt_int(data, "truncation", 1), _opt_int(data, "order", 4), seed, out, fmt)


def make_context(cfg: ExperimentConfig) -> Context:
    try:
        m = make_manifold(cfg.manifold) if cfg.manifold is not None else None
    except InvalidParameter as exc:
        raise ConfigError(f"invalid manifold: {exc}") from exc
    ctx = Context(cfg.name, m, cfg.manifold, cfg.grid, cfg.truncation, cfg.order, cfg.seed)
    try:
        REGISTRY[cfg.name].validate(ctx)
    except InvalidParameter as exc:
        raise ConfigError(str(exc)) from exc
    return ctx


@dataclass
class RunReport:
    config: ExperimentConfig
    rows: list
    wall_time: float
    started: str
    version: str = __version__
    normalization: dict = field(default_factory=lambda: dict(NORMALIZATION))

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def numerical_failure(self) -> bool:
        return any(r.failure for r in self.rows)

    @property
    def exit_code(self) -> int:
        if self.numerical_failure:
            return EXIT_NUMERICAL
        return EXIT_OK if self.all_passed else EXIT_FAILED_ROWS

    def header(self) -> dict:
        return {
            "tool": "fracsob",
            "version": self.version,
            "started": self.started,
            "wall_time_s": round(self.wall_time, 3),
            "normalization": self.normalization,
            "config": self.config.echo(),
        }


def _failure_row(ctx: Context, index: int, exc: BaseException) -> Row:
    row = ctx.row("failure", NAN, NAN, passed=False, task=index, error=f"{type(exc).__name__}: {exc}".replace("\n", " "))
    row.failure = True
    return row


def _run_task(ctx: Context, index: int, task) -> list:
    try:
        return list(task())
    except (FracSobError, NotImplementedError, FloatingPointError, ArithmeticError) as exc:
        return [_failure_row(ctx, index, exc)]


def resolve_threads(requested: int | None) -> int:
    if requested is not None:
        return max(1, requested)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from None
    return 1


def run(cfg: ExperimentConfig, threads: int = 1) -> RunReport:
    """Execute the experiment; rows keep grid order whatever the completion order."""
    start = time.time()
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    ctx = make_context(cfg)
    exp = REGISTRY[cfg.name]
    try:
        tasks = exp.build(ctx)
    except InvalidParameter as exc:
        raise ConfigError(str(exc)) from exc
    except FracSobError as exc:
        return RunReport(cfg, [_failure_row(ctx, -1, exc)], time.time() - start, started)
    if threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda it: _run_task(ctx, *it), enumerate(tasks)))
    else:
        chunks = [_run_task(ctx, i, t) for i, t in enumerate(tasks)]
    rows = [r for chunk in chunks for r in chunk]
    if exp.finalize is not None and not any(r.failure for r in rows):
        rows += exp.finalize(ctx, rows)
    return RunReport(cfg, rows, time.time() - start, started)


def _fmt(v: float) -> str:
    return "%.17g" % v


def _json_float(v: float):
    return v if math.isfinite(v) else repr(v)


def render_body(report: RunReport, fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in report.rows:
            w.writerow([r.experiment, r.manifold, _fmt(r.s), _fmt(r.p), _fmt(r.q), r.extra_text(), _fmt(r.lhs), _fmt(r.rhs), _fmt(r.deficit), _fmt(r.err_est), "true" if r.passed else "false"])
        return buf.getvalue()
    rows = []
    for r in report.rows:
        rows.append({
            "experiment": r.experiment,
            "manifold": r.manifold,
            "s": _json_float(r.s),
            "p": _json_float(r.p),
            "q": _json_float(r.q),
            "extra": {k: (_json_float(v) if isinstance(v, float) else v) for k, v in sorted(r.extra.items())},
            "lhs": _json_float(r.lhs),
            "rhs": _json_float(r.rhs),
            "deficit": _json_float(r.deficit),
            "err_est": _json_float(r.err_est),
            "pass": r.passed,
        })
    return json.dumps(rows, indent=1, sort_keys=True)


def render(report: RunReport, fmt: str) -> str:
    """Full report text; the header carries all run-dependent fields (timestamp, wall time)."""
    body = render_body(report, fmt)
    if fmt == "csv":
        head = "".join(f"# {k}: {json.dumps(v, sort_keys=True)}\n" for k, v in report.header().items())
        return head + body
    return '{"header": ' + json.dumps(report.header(), sort_keys=True) + ',\n"rows": ' + body + "}\n"


def _load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def _cmd_run(args) -> int:
    try:
        if args.name not in REGISTRY:
            raise ConfigError(f"unknown experiment {args.name!r}; see 'fracsob list'")
        data = _load_config(args.config) if args.config else {}
        cfg = parse_config(data, args.name)
        if args.format:
            cfg.format = args.format
        if args.out:
            cfg.output = args.out
        threads = resolve_threads(args.threads)
        report = run(cfg, threads)
    except ConfigError as exc:
        print(f"fracsob: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = render(report, cfg.format)
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    failed = sum(not r.passed for r in report.rows)
    print(f"fracsob: {cfg.name}: {len(report.rows)} rows, {failed} failed, {report.wall_time:.1f}s", file=sys.stderr)
    return report.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracsob", description="Fractional Sobolev numerical experiment runner.")
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a named experiment")
    r.add_argument("name")
    r.add_argument("--config", help="JSON config path (defaults apply when omitted)")
    r.add_argument("--out", help="report path (stdout when omitted)")
    r.add_argument("--format", choices=("csv", "json"))
    r.add_argument("--threads", type=int, help=f"worker threads (overrides {THREADS_ENV})")
    sub.add_parser("list", help="list experiments")
    sub.add_parser("version", help="print the library version")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "list":
        for name, desc in list_experiments():
            print(f"{name}\t{desc}")
        return EXIT_OK
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    return _cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
