"""Command-line front end: run sweeps and write CSV/JSON result files.

Summary files always carry the columns in ``SUMMARY_COLUMNS``; floats are
written with ``repr`` so a summary row reproduces the in-memory result
exactly.  Every file is written to a temporary sibling first and renamed
into place only after the whole run has succeeded.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .electrical import ReadoutConfig
from .geometry import BendDirection, GeometryError, PileShape, SensorSpec, StrainAxis, YarnSpec
from .network import NumericalFailure
from .protocol import (PRESET_IDS, BendingSweep, CompressionSweep, HumidityTest, Protocol,
                       ProtocolResult, TensileSweep, paper_suite, preset, run_protocol,
                       with_density)

log = logging.getLogger("pilesim")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID_FILE = 2
EXIT_NUMERICAL = 3

SUMMARY_COLUMNS = ("condition", "label", "mean_response", "std_error", "snr_db", "n")
DETAIL_COLUMNS = ("trial", "condition", "label", "r_eq_ohm", "v_out", "delta_v_over_v0",
                  "capacitance_pf", "trial_seed", "flag")
SEED_ENV = "PILESIM_SEED"
DEFAULT_TRIALS = 50


class ConfigError(ValueError):
    """A spec or protocol document could not be turned into an object.

    ``field`` is a dotted path into the document (``"$"`` for the root).
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ParseError(ConfigError):
    """The file is not a well-formed JSON object."""


class SchemaError(ConfigError):
    """A key is unknown, missing, mistyped or out of range."""


class UsageError(Exception):
    pass


# -- spec documents -----------------------------------------------------------

_YARN_FIELDS = {f.name: f for f in dataclasses.fields(YarnSpec)}
_SPEC_FIELDS = {f.name: f for f in dataclasses.fields(SensorSpec) if f.name != "yarn"}
_ENUM_FIELDS = {"pile_shape": PileShape}


def _required(fields) -> set[str]:
    return {name for name, f in fields.items()
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING}


def _load_json(path: os.PathLike | str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError("$", f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError("$", f"malformed JSON at line {exc.lineno} column {exc.colno}: "
                              f"{exc.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError("$", "top level must be a JSON object")
    return doc


def _number(key: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(key, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise SchemaError(key, "must be finite")
    return float(value)


def spec_from_dict(doc: dict) -> SensorSpec:
    """Build a spec from a flat mapping of field names to values.

    Yarn fields (``diameter_mm`` and friends) sit at the top level next to
    the sensor fields.
    """
    unknown = sorted(set(doc) - set(_YARN_FIELDS) - set(_SPEC_FIELDS))
    if unknown:
        raise SchemaError(unknown[0], "unknown key")
    missing = sorted((_required(_YARN_FIELDS) | _required(_SPEC_FIELDS)) - set(doc))
    if missing:
        raise SchemaError(missing[0], "required key is missing")
    values: dict[str, Any] = {}
    for key, value in doc.items():
        if key in _ENUM_FIELDS:
            choices = [m.value for m in _ENUM_FIELDS[key]]
            if value not in choices:
                raise SchemaError(key, f"expected one of {choices}, got {value!r}")
            values[key] = _ENUM_FIELDS[key](value)
        else:
            values[key] = _number(key, value)
    try:
        yarn = YarnSpec(**{k: v for k, v in values.items() if k in _YARN_FIELDS})
        return SensorSpec(yarn=yarn, **{k: v for k, v in values.items() if k in _SPEC_FIELDS})
    except GeometryError as exc:
        field = (exc.field or "$").removeprefix("yarn.")
        raise SchemaError(field, str(exc).removeprefix("yarn.")) from None


def spec_to_dict(spec: SensorSpec) -> dict:
    out = {name: getattr(spec.yarn, name) for name in _YARN_FIELDS}
    for name in _SPEC_FIELDS:
        value = getattr(spec, name)
        out[name] = value.value if isinstance(value, PileShape) else value
    return out


def parse_spec_file(path: os.PathLike | str) -> SensorSpec:
    return spec_from_dict(_load_json(path))


def write_spec_file(spec: SensorSpec, path: os.PathLike | str) -> None:
    _atomic_write({Path(path): json.dumps(spec_to_dict(spec), indent=2) + "\n"})


# -- protocol documents -------------------------------------------------------

_KINDS = {"compression": CompressionSweep, "bending": BendingSweep,
          "tensile": TensileSweep, "humidity": HumidityTest}
_KIND_KEYS = {
    "compression": {"weights_g": "numbers", "indenter_cm": "number"},
    "bending": {"diameters_cm": "numbers", "directions": BendDirection},
    "tensile": {"axes": StrainAxis, "strain_percent": "number"},
    "humidity": {"sprayed_ml": "number"},
}


def protocol_from_dict(doc: dict, trials: Optional[int] = None,
                       seed: Optional[int] = None) -> Protocol:
    """Protocol from ``{"kind": ..., <sweep fields>, "trials", "master_seed"}``.

    Explicit ``trials``/``seed`` arguments override the document.
    """
    kind = doc.get("kind")
    if kind not in _KINDS:
        raise SchemaError("kind", f"expected one of {sorted(_KINDS)}, got {kind!r}")
    allowed = _KIND_KEYS[kind]
    unknown = sorted(set(doc) - set(allowed) - {"kind", "trials", "master_seed"})
    if unknown:
        raise SchemaError(unknown[0], "unknown key")
    args: dict[str, Any] = {}
    for key, rule in allowed.items():
        if key not in doc:
            continue
        value = doc[key]
        if rule == "number":
            args[key] = _number(key, value)
            continue
        if not isinstance(value, list) or not value:
            raise SchemaError(key, "expected a non-empty list")
        if rule == "numbers":
            args[key] = tuple(_number(f"{key}[{i}]", v) for i, v in enumerate(value))
        else:
            choices = [m.value for m in rule]
            for i, v in enumerate(value):
                if v not in choices:
                    raise SchemaError(f"{key}[{i}]", f"expected one of {choices}, got {v!r}")
            args[key] = tuple(rule(v) for v in value)
    for key in ("trials", "master_seed"):
        if key in doc and (isinstance(doc[key], bool) or not isinstance(doc[key], int)):
            raise SchemaError(key, f"expected an integer, got {doc[key]!r}")
    trials = trials if trials is not None else doc.get("trials", DEFAULT_TRIALS)
    seed = seed if seed is not None else doc.get("master_seed", 0)
    try:
        sweep = _KINDS[kind](**args)
    except (ValueError, TypeError) as exc:
        raise SchemaError(kind, str(exc)) from None
    if trials < 1:
        raise SchemaError("trials", "must be >= 1")
    return Protocol(sweep, trials=trials, master_seed=seed)


def protocol_to_dict(p: Protocol) -> dict:
    out: dict[str, Any] = {"kind": p.kind.name}
    for f in dataclasses.fields(p.kind):
        value = getattr(p.kind, f.name)
        if isinstance(value, tuple):
            value = [v.value if hasattr(v, "value") else v for v in value]
        out[f.name] = value
    out.update(trials=p.trials, master_seed=p.master_seed)
    return out


def parse_protocol_file(path, trials=None, seed=None) -> Protocol:
    return protocol_from_dict(_load_json(path), trials, seed)


# -- output -------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def summary_rows(result: ProtocolResult) -> list[dict]:
    return [{c: getattr(row, c) for c in SUMMARY_COLUMNS} for row in result.rows]


def detail_rows(result: ProtocolResult) -> list[dict]:
    out = []
    for tr in result.records:
        rec = dataclasses.asdict(tr.record)
        out.append({"trial": tr.trial, "condition": tr.condition, "label": tr.label,
                    **{k: rec[k] for k in DETAIL_COLUMNS[3:8]}, "flag": tr.flag})
    return out


def render(rows: list[dict], columns: Sequence[str], fmt: str) -> str:
    if fmt == "json":
        doc = [{c: _jsonable(r[c]) for c in columns} for r in rows]
        return json.dumps(doc, indent=2, allow_nan=False) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _atomic_write(files: dict[Path, str]) -> None:
    """Write all files to temporaries, then rename them into place."""
    staged = []
    try:
        for path, text in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, path))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)


def result_files(result: ProtocolResult, output_dir: Path, fmt: str) -> dict[Path, str]:
    stem = f"{result.sample}_{result.protocol}"
    return {
        output_dir / f"{stem}_detail.{fmt}": render(detail_rows(result), DETAIL_COLUMNS, fmt),
        output_dir / f"{stem}_summary.{fmt}": render(summary_rows(result), SUMMARY_COLUMNS, fmt),
    }


def format_table(result: ProtocolResult) -> str:
    head = f"{result.sample} {result.protocol}"
    lines = [head, f"{'label':>16} {'mean':>12} {'std_error':>12} {'snr_db':>8} {'n':>4}"]
    for r in result.rows:
        lines.append(f"{r.label:>16} {r.mean_response:>12.5g} {r.std_error:>12.3g} "
                     f"{r.snr_db:>8.2f} {r.n:>4d}")
    return "\n".join(lines)


# -- commands -----------------------------------------------------------------

def _resolve_spec(source: str) -> tuple[str, SensorSpec]:
    if source.upper() in PRESET_IDS:
        return source.upper(), preset(source)
    path = Path(source)
    if not path.is_file():
        raise UsageError(f"--spec {source!r} is neither a preset ({', '.join(PRESET_IDS)}) "
                         "nor an existing file")
    return path.stem, parse_spec_file(path)


def _resolve_protocol(source: str, trials, seed) -> Protocol:
    if source in _KINDS:
        return protocol_from_dict({"kind": source}, trials, seed)
    path = Path(source)
    if not path.is_file():
        raise UsageError(f"--protocol {source!r} is neither a built-in "
                         f"({', '.join(_KINDS)}) nor an existing file")
    return parse_protocol_file(path, trials, seed)


def _cmd_simulate(args) -> int:
    sample, spec = _resolve_spec(args.spec)
    spec = with_density(spec, args.piles_per_cm)
    proto = _resolve_protocol(args.protocol, args.trials, args.seed)
    result = run_protocol(spec, _readout(args), proto, sample=sample, workers=args.workers)
    _atomic_write(result_files(result, Path(args.output_dir), args.format))
    print(format_table(result))
    return EXIT_OK


def _cmd_paper_suite(args) -> int:
    trials = DEFAULT_TRIALS if args.trials is None else args.trials
    seed = 0 if args.seed is None else args.seed
    results = paper_suite(trials, seed, piles_per_cm=args.piles_per_cm, cfg=_readout(args),
                          workers=args.workers)
    files: dict[Path, str] = {}
    for result in results:
        files.update(result_files(result, Path(args.output_dir), args.format))
    _atomic_write(files)
    print("\n\n".join(format_table(r) for r in results))
    return EXIT_OK


def _cmd_presets(args) -> int:
    rows = []
    for pid in PRESET_IDS:
        s = preset(pid)
        rows.append({"id": pid, "shape": s.pile_shape.value,
                     "pile_height_cm": s.pile_height_cm,
                     "diameter_mm": s.yarn.diameter_mm,
                     "linear_resistance_ohm_per_cm": s.yarn.linear_resistance_ohm_per_cm,
                     "base_cm": f"{s.base_width_cm:g}x{s.base_depth_cm:g}",
                     "piles_per_cm": s.stitch_density_per_cm})
    cols = list(rows[0])
    if args.format == "json":
        sys.stdout.write(render(rows, cols, "json"))
    else:
        sys.stdout.write(render(rows, cols, "csv"))
    return EXIT_OK


def _cmd_validate(args) -> int:
    for name in args.files:
        doc = _load_json(name)
        if "kind" in doc:
            p = protocol_from_dict(doc)
            print(f"{name}: ok ({p.kind.name} protocol, {p.trials} trials)")
        else:
            s = spec_from_dict(doc)
            print(f"{name}: ok ({s.pile_shape.value} spec, {s.pile_count} piles)")
    return EXIT_OK


def _readout(args) -> ReadoutConfig:
    try:
        return ReadoutConfig(v_in=args.v_in, r2_ohm=args.r2_ohm, adc_bits=args.adc_bits)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# -- parser -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _default_seed() -> Optional[int]:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r} is not an integer") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pilesim", description="Tufted pile sensor simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_opts(p):
        p.add_argument("--trials", type=_positive_int, default=None)
        p.add_argument("--seed", type=int, default=None,
                       help=f"master seed (default: ${SEED_ENV} or 0)")
        p.add_argument("--output-dir", default=".")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--piles-per-cm", type=float, default=None,
                       help="override the stitch density of every sample")
        p.add_argument("--workers", type=_positive_int, default=1)
        p.add_argument("--v-in", type=float, default=3.3)
        p.add_argument("--r2-ohm", type=float, default=10_000.0)
        p.add_argument("--adc-bits", type=int, default=None)

    sim = sub.add_parser("simulate", help="run one spec against one protocol")
    sim.add_argument("--spec", required=True, help="preset id (S1-S7) or spec JSON file")
    sim.add_argument("--protocol", required=True,
                     help="compression, bending, tensile, humidity or a protocol JSON file")
    run_opts(sim)
    sim.set_defaults(func=_cmd_simulate)

    suite = sub.add_parser("paper-suite", help="run every published sample/protocol pair")
    run_opts(suite)
    suite.set_defaults(func=_cmd_paper_suite)

    pre = sub.add_parser("presets", help="list the S1-S7 presets")
    pre.add_argument("--format", choices=("csv", "json"), default="csv")
    pre.set_defaults(func=_cmd_presets)

    val = sub.add_parser("validate", help="check spec or protocol JSON files")
    val.add_argument("files", nargs="+")
    val.set_defaults(func=_cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "seed", 0) is None:
            args.seed = _default_seed()
        if getattr(args, "piles_per_cm", None) is not None and not args.piles_per_cm > 0:
            raise UsageError("--piles-per-cm must be > 0")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"invalid file: {exc}", file=sys.stderr)
        return EXIT_INVALID_FILE
    except GeometryError as exc:
        where = f"{exc.field}: " if exc.field else ""
        print(f"invalid spec: {where}{exc}", file=sys.stderr)
        return EXIT_INVALID_FILE
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
