"""Command-line surface: decode once, sweep grids, benchmark, verify.

Exit codes are part of the contract: 0 success, 1 configuration or schema
problem, 2 backend or transport failure, 3 verification failure. Every
command writes a reproducibility stanza (run.json: resolved configuration
hash, seed, backend digest) next to its outputs; rerunning the same command
line against the same backend reproduces deterministic outputs byte for
byte.

Backend descriptors are either a fixture path (literal file, or the name of
a packaged fixture such as `toy1.json`) or a `tcp://host:port` endpoint
speaking the NDJSON logit protocol. Dataset paths get the same packaged
fallback (`vote.jsonl` resolves to the shipped copy when the literal path
does not exist).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from .configs import (
    METHOD_NAMES,
    default_grid_path,
    load_grid_file,
    make_spec,
    parse_params,
)
from .harness import (
    ExactMatchScorer,
    anp_csv,
    latency_report,
    load_dataset_jsonl,
    measure_latency,
    report_csv,
    report_markdown,
    rdp_csv,
    resolve_prompt,
    run_generation,
    run_sweep,
)
from .lm import (
    Backend,
    BackendError,
    ConfigError,
    SchemaError,
    fixture_path,
    load_table_lm,
)
from .records import GenerationLimits
from .remote import remote_lm_session
from .verify import FAMILIES, run_verify

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BACKEND = 2
EXIT_VERIFY = 3

logger = logging.getLogger("decodex")


class _Parser(argparse.ArgumentParser):
    """Argparse that reports usage problems on the config exit code."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_CONFIG)


def _resolve_input(path: str, kind: str) -> Path:
    """A literal file path, or the packaged fixture of the same name."""
    literal = Path(path)
    if literal.is_file():
        return literal
    packaged = fixture_path(path) if kind == "backend" else fixture_path(
        f"datasets/{path}"
    )
    if packaged.is_file():
        return packaged
    raise ConfigError(f"no such {kind} file: {path}")


def _load_backend(descriptor: str) -> tuple[Backend, str]:
    """Build the backend and the digest recorded in the run stanza."""
    if descriptor.startswith("tcp://"):
        backend = remote_lm_session(descriptor)
        digest = "remote:" + descriptor
        return backend, digest
    path = _resolve_input(descriptor, "backend")
    data = path.read_bytes()
    return load_table_lm(path), hashlib.sha256(data).hexdigest()[:16]


def _out_dir(args: argparse.Namespace) -> Path:
    out = args.out or os.environ.get("DECODEX_OUT") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config_hash(doc: dict[str, Any]) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _write_stanza(
    out: Path, command: str, config: dict[str, Any], seed: int, backend_digest: str
) -> None:
    stanza = {
        "command": command,
        "config_hash": _config_hash(config),
        "seed": seed,
        "backend_digest": backend_digest,
    }
    (out / "run.json").write_text(json.dumps(stanza, indent=2, sort_keys=True) + "\n")


def _split_prompt(raw: str) -> list[Any]:
    entries: list[Any] = []
    for piece in raw.replace(",", " ").split():
        entries.append(int(piece) if piece.lstrip("-").isdigit() else piece)
    return entries


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_decode(args: argparse.Namespace) -> int:
    backend, digest = _load_backend(args.backend)
    amateur = None
    if args.amateur:
        amateur, _ = _load_backend(args.amateur)
    params = parse_params(args.param) if args.param else {}
    spec = make_spec(args.method, params)
    prompt = resolve_prompt(backend.vocab, _split_prompt(args.prompt))
    limits = GenerationLimits(max_new_tokens=args.max_new)
    record = run_generation(
        backend, spec, prompt, limits=limits, seed=args.seed, amateur=amateur
    )
    if record.error is not None:
        sys.stderr.write(f"error: {record.error}\n")
        return EXIT_CONFIG
    out = _out_dir(args)
    (out / "record.json").write_text(record.canonical_json() + "\n")
    _write_stanza(
        out,
        "decode",
        {
            "method": spec.method,
            "params": spec.param_dict,
            "prompt": list(prompt),
            "max_new": args.max_new,
        },
        args.seed,
        digest,
    )
    print(record.text(backend.vocab))
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    backend, digest = _load_backend(args.backend)
    amateur = None
    if args.amateur:
        amateur, _ = _load_backend(args.amateur)
    grid_path = Path(args.grids) if args.grids else default_grid_path()
    specs = load_grid_file(str(grid_path))
    datasets = [
        load_dataset_jsonl(str(_resolve_input(p, "dataset"))) for p in args.datasets
    ]
    out = _out_dir(args)
    limits = GenerationLimits(max_new_tokens=args.max_new)
    seeds = tuple(range(args.seed, args.seed + args.seeds))
    report = run_sweep(
        backend,
        specs,
        datasets,
        ExactMatchScorer(),
        seeds=seeds,
        limits=limits,
        jobs=args.jobs,
        checkpoint_path=str(out / "checkpoint.jsonl"),
        amateur=amateur,
    )
    (out / "report.csv").write_text(report_csv(report))
    (out / "anp.csv").write_text(anp_csv(report))
    (out / "rdp.csv").write_text(rdp_csv(report))
    (out / "report.md").write_text(report_markdown(report))
    _write_stanza(
        out,
        "sweep",
        {
            "grid": [s.key() for s in specs],
            "datasets": [d.name for d in datasets],
            "seeds": list(seeds),
            "max_new": args.max_new,
        },
        args.seed,
        digest,
    )
    failed = [c for c in report.cells if c.error is not None]
    if failed:
        logger.warning("%d of %d cells failed", len(failed), len(report.cells))
    print(f"wrote {out / 'report.csv'} ({len(report.cells)} cells)")
    return EXIT_OK


_BENCH_LENGTHS = (128, 256, 512, 1024)


def _bench_specs(args: argparse.Namespace) -> list:
    """One spec per requested method, parameters from its first grid entry."""
    grid_path = Path(args.grids) if args.grids else default_grid_path()
    grid_specs = load_grid_file(str(grid_path))
    first_by_method = {}
    for spec in grid_specs:
        first_by_method.setdefault(spec.method, spec)
    methods = [m.strip() for m in args.method.split(",") if m.strip()]
    if not methods:
        raise ConfigError("bench needs at least one method")
    if "greedy" not in methods:
        if args.no_auto_greedy:
            raise ConfigError("greedy baseline missing and auto-add disabled")
        methods.insert(0, "greedy")
    specs = []
    for m in methods:
        if m == "greedy":
            specs.append(make_spec("greedy"))
        elif m in first_by_method:
            specs.append(first_by_method[m])
        else:
            specs.append(make_spec(m, parse_params(args.param) if args.param else {}))
    return specs


def _cmd_bench(args: argparse.Namespace) -> int:
    backend, digest = _load_backend(args.backend)
    amateur = None
    if args.amateur:
        amateur, _ = _load_backend(args.amateur)
    specs = _bench_specs(args)
    lengths = [n for n in _BENCH_LENGTHS if args.max_new is None or n <= args.max_new]
    if not lengths:
        lengths = [args.max_new]
    prompt = (backend.vocab.bos,) * 32
    measurements = {}
    for spec in specs:
        if spec.method == "greedy" or spec.param_label() == "-":
            label = spec.method
        else:
            label = f"{spec.method}({spec.param_label()})"
        measurements[label] = measure_latency(
            backend,
            spec,
            prompt,
            lengths=lengths,
            repeats=args.repeats,
            warmup=args.warmup,
            seed=args.seed,
            amateur=amateur,
        )
    report = latency_report(measurements)
    out = _out_dir(args)
    (out / "latency.csv").write_text(report.to_csv())
    (out / "latency.md").write_text(report.to_markdown())
    _write_stanza(
        out,
        "bench",
        {
            "methods": sorted(measurements),
            "lengths": lengths,
            "repeats": args.repeats,
            "warmup": args.warmup,
        },
        args.seed,
        digest,
    )
    print(report.to_markdown(), end="")
    return EXIT_OK


def _cmd_verify(args: argparse.Namespace) -> int:
    from .deterministic import set_beam_tie_sabotage

    if args.sabotage_beam_ties:
        set_beam_tie_sabotage(True)
    try:
        report = run_verify(only=args.only, seed=args.seed)
    finally:
        if args.sabotage_beam_ties:
            set_beam_tie_sabotage(False)
    print(report.render(), end="")
    if args.out:
        out = _out_dir(args)
        (out / "verify.txt").write_text(report.render())
        _write_stanza(
            out,
            "verify",
            {"only": args.only},
            args.seed,
            "none",
        )
    return EXIT_OK if report.passed else EXIT_VERIFY


# ---------------------------------------------------------------------------
# Parser


def _add_common(p: argparse.ArgumentParser, backend: bool = True) -> None:
    if backend:
        p.add_argument(
            "--backend",
            required=True,
            help="fixture path, packaged fixture name, or tcp://host:port",
        )
        p.add_argument(
            "--amateur",
            default=None,
            help="second backend used as the contrastive-decoding amateur",
        )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output directory (or $DECODEX_OUT)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="decodex", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decode", help="run one generation and print the tokens")
    _add_common(p)
    p.add_argument("--method", required=True, choices=METHOD_NAMES)
    p.add_argument("--param", default=None, help="k=v,... method hyperparameters")
    p.add_argument("--prompt", default="bos", help="ids or token surfaces; 'bos'")
    p.add_argument("--max-new", type=int, default=16)
    p.set_defaults(fn=_cmd_decode)

    p = sub.add_parser("sweep", help="run a hyperparameter grid over datasets")
    _add_common(p)
    p.add_argument("datasets", nargs="+", help="dataset JSONL files")
    p.add_argument("--grids", default=None, help="grid JSON (default: paper grids)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seeds", type=int, default=3, help="seeds per stochastic cell")
    p.add_argument("--max-new", type=int, default=16)
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("bench", help="latency ratios against the greedy baseline")
    _add_common(p)
    p.add_argument("--method", default="greedy", help="comma-separated methods")
    p.add_argument("--param", default=None, help="params for methods not in the grid")
    p.add_argument("--grids", default=None, help="grid supplying per-method params")
    p.add_argument("--max-new", type=int, default=None, help="cap benched lengths")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--no-auto-greedy", action="store_true")
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("verify", help="run the oracle suites and print the matrix")
    _add_common(p, backend=False)
    p.add_argument("--only", default=None, choices=FAMILIES, help="single suite")
    p.add_argument("--sabotage-beam-ties", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(fn=_cmd_verify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ConfigError, SchemaError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except BackendError as exc:
        sys.stderr.write(f"backend error: {exc}\n")
        return EXIT_BACKEND


if __name__ == "__main__":
    raise SystemExit(main())
