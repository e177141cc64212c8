"""Command-line entry point ``tws``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.
Every subcommand accepts ``--config FILE`` (JSON whose keys are the flag
names); flags given on the command line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Optional, Sequence

from . import bench, theory
from .audio import load_wav, store_wav
from .engine import HttpBackend, OracleBackend, OraclePolicy, ScriptedBackend
from .errors import BackendError, ParameterRangeError, PolicyError, TwsError
from .operators import CATEGORIES, default_registry
from .perturbations import (
    CANONICAL_ORDER,
    DEFAULT_MASTER_SEED,
    DEFAULT_P_APPLY,
    Kind,
    apply_spec,
    build_hard_set,
    read_source_manifest,
    sample_spec,
    spec_from_cli,
    substream,
)
from .synth import covering_corpus, make_labeled_corpus

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3
DEFAULT_SCRIPT = ("[TOOL: analyze_spectrum()]", "Emotion: neutral")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in _csv_list(text)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in _csv_list(text)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _kv(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    try:
        value: Any = json.loads(v)
    except json.JSONDecodeError:
        value = v
    return k.strip(), value


def _kind_probs(text: str) -> dict[str, float]:
    out = {}
    for part in _csv_list(text):
        k, v = _kv(part)
        try:
            out[Kind.parse(k).short] = float(v)
        except (ValueError, TypeError) as exc:
            raise argparse.ArgumentTypeError(f"bad kind probability {part!r}") from exc
    return out


# --- backends ----------------------------------------------------------------

def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("scripted", "oracle", "http"), default="oracle")
    p.add_argument("--script", help="JSON list of assistant replies for the scripted backend")
    p.add_argument("--alpha", type=float, help="oracle tool-selection accuracy")
    p.add_argument("--oracle-seed", type=int, help="seed for the oracle's draws")
    p.add_argument("--policy", help="JSON file with oracle policy fields")
    p.add_argument("--parallelism", type=int, default=1)


def make_backend(args: argparse.Namespace):
    if args.backend == "scripted":
        replies: Sequence[str] = DEFAULT_SCRIPT
        if args.script:
            replies = json.loads(Path(args.script).read_text(encoding="utf-8"))
            if not isinstance(replies, list) or not all(isinstance(r, str) for r in replies):
                raise UsageError("--script must hold a JSON list of strings")
        return ScriptedBackend(list(replies))
    if args.backend == "oracle":
        fields: dict[str, Any] = {}
        if args.policy:
            fields.update(json.loads(Path(args.policy).read_text(encoding="utf-8")))
        if args.alpha is not None:
            fields["alpha"] = args.alpha
        if args.oracle_seed is not None:
            fields["seed"] = args.oracle_seed
        return OracleBackend(OraclePolicy.from_dict(fields))
    return HttpBackend.from_env()


def _items(args: argparse.Namespace) -> list[bench.EvalItem]:
    return bench.load_items(args.manifest)


# --- commands ----------------------------------------------------------------

def cmd_perturb(args: argparse.Namespace) -> int:
    x = load_wav(args.input)
    kind = Kind.parse(args.kind)
    seed_path = (args.seed, CANONICAL_ORDER.index(kind))
    spec = sample_spec(kind, substream(seed_path), seed_path)
    if args.param:
        # flags override individual fields; the rest keep their seeded draw
        values = {**asdict(spec.params), **dict(args.param)}
        try:
            spec = spec_from_cli(kind.value, values, seed_path)
        except ParameterRangeError as exc:
            raise UsageError(str(exc)) from exc
    store_wav(apply_spec(x, spec), args.output)
    print(json.dumps(spec.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_synth_corpus(args: argparse.Namespace) -> int:
    labels = make_labeled_corpus(args.out, args.count, args.seed, args.duration)
    records = bench.build_manifest(Path(args.out) / "audio", labels)
    bench.write_source_manifest(records, Path(args.out) / "sources.jsonl")
    print(Path(args.out) / "sources.jsonl")
    return EXIT_OK


def cmd_manifest(args: argparse.Namespace) -> int:
    records = bench.build_manifest(args.audio_dir, args.labels)
    bench.write_source_manifest(records, args.out)
    print(f"{len(records)} records -> {args.out}")
    return EXIT_OK


def cmd_build_hard(args: argparse.Namespace) -> int:
    sources = read_source_manifest(args.sources)
    m = build_hard_set(sources, args.out, args.seed, args.p, args.kind_probs or None, args.workers)
    print(f"{len(m.records)} records -> {Path(args.out) / 'manifest.jsonl'}")
    return EXIT_OK


def _write_eval(run: bench.EvalRun, out: Path, fmt: str) -> None:
    bench.export_report([run.summary], out / f"summary.{fmt}", fmt)
    bench.write_rows(bench.results_rows(run.results), out / f"records.{fmt}", fmt)


def cmd_eval(args: argparse.Namespace) -> int:
    items = _items(args)
    backend = make_backend(args)
    out = Path(args.out)
    run = bench.evaluate(
        items, args.mode, backend, default_registry(), args.k_max, args.exclude,
        args.parallelism, trace_dir=out / "traces",
    )
    _write_eval(run, out, args.format)
    print(f"{args.mode} accuracy {run.summary.overall_accuracy:.4f} over {run.summary.n_records} records")
    if run.summary.n_records and run.summary.backend_errors == run.summary.n_records:
        print("tws: backend error: every record failed", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    rows = bench.ablate_operators(_items(args), make_backend(args), default_registry(), args.k_max, args.parallelism)
    path = bench.write_rows(bench.ablation_rows(rows), Path(args.out) / f"ablation.{args.format}", args.format)
    for r in rows:
        print(f"{r.configuration:16s} {r.summary.overall_accuracy:.4f} {r.delta:+.4f}")
    print(path)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    rows = bench.sweep_kmax(_items(args), make_backend(args), default_registry(), args.values, args.parallelism)
    path = bench.write_rows(bench.sweep_rows(rows, args.with_time), Path(args.out) / f"sweep.{args.format}", args.format)
    for r in rows:
        print(f"k_max={r.k_max} accuracy={r.accuracy:.4f} mean_steps={r.mean_steps:.4f}")
    print(path)
    return EXIT_OK


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _checked(build):
    try:
        return build()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_contraction(args: argparse.Namespace) -> int:
    cfg = _checked(lambda: theory.SimConfig(args.alpha, args.rho, args.k, args.trials, args.initial_norm, args.seed, args.exact))
    _emit(theory.contraction_csv(theory.simulate_contraction(cfg)), args.out)
    return EXIT_OK


def cmd_bounds(args: argparse.Namespace) -> int:
    rows = []
    for a in args.alpha:
        for r in args.rho:
            for k in args.k:
                cfg = _checked(lambda: theory.SimConfig(a, r, k, initial_norm=args.initial_norm))
                bc = _checked(lambda: theory.BoundConfig(args.lipschitz, args.baseline_loss))
                rows.append((cfg, bc, theory.compare_bounds(cfg, bc)))
    _emit(theory.bounds_csv(rows), args.out)
    return EXIT_OK


def cmd_gain_ratio(args: argparse.Namespace) -> int:
    res = _checked(lambda: theory.gain_ratio_experiment(args.rho1, args.rho2, args.alpha, args.k, args.trials, args.seed))
    _emit(theory.gain_ratio_csv([(args.rho1, args.rho2, args.alpha, args.k, res)]), args.out)
    return EXIT_OK


def cmd_covering(args: argparse.Namespace) -> int:
    from .operators import calibration_registry

    registry = calibration_registry() if args.with_identity else default_registry()
    kinds = args.kinds or [k.short for k in CANONICAL_ORDER]
    matrix = theory.covering_study(
        registry, kinds, covering_corpus(args.corpus_seed, args.corpus_size), args.trials, args.seed
    )
    _emit(theory.covering_csv(matrix), args.out)
    verdict = ", ".join(f"{k.short}={'covered' if v else 'uncovered'}" for k, v in matrix.verdict.items())
    print(verdict, file=sys.stderr)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    from .perturbations import read_jsonl

    table = []
    for path in args.records:
        rows = []
        for r in read_jsonl(path) if str(path).endswith(".jsonl") else _read_csv(path):
            rows.append(bench.EvalRecordResult(
                utterance_id=str(r["utterance_id"]),
                true_label=str(r["true_label"]),
                predicted_label=str(r["predicted_label"]) or None,
                correct=bool(int(r["correct"])),
                steps_used=int(r["steps_used"]),
                operators_invoked=tuple(_plus_list(r["operators_invoked"])),
                perturbation_kinds=tuple(_plus_list(r["perturbation_kinds"])),
                terminated_by=str(r["terminated_by"]),
                wall_time_ms=0.0,
            ))
        run = Path(path).parent.name or str(path)
        for bucket, d in bench.breakdown_by_perturbation(rows).items():
            row: dict[str, Any] = {"run": run, "bucket": bucket, "n": d["n"], "accuracy": d["accuracy"]}
            row.update({f"usage_{k}": v for k, v in d["usage"].items()})
            table.append(row)
    fmt = "jsonl" if args.out and args.out.endswith(".jsonl") else "csv"
    if fmt == "jsonl":
        text = bench.render_jsonl(table)
    else:
        usage = sorted({k for r in table for k in r if k.startswith("usage_")})
        text = bench.render_csv(table, leading=("run", "bucket", "n", "accuracy", *usage))
    _emit(text, args.out)
    return EXIT_OK


def _plus_list(v: Any) -> list[str]:
    if isinstance(v, list):
        return [str(x) for x in v]
    return [t for t in str(v).split("+") if t]


def _read_csv(path: str) -> list[dict[str, str]]:
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tws", description="Audio perturbation, tool-augmented reasoning and evaluation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name: str, fn, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file with default values for this command's flags")
        p.set_defaults(func=fn)
        return p

    p = command("perturb", cmd_perturb, "apply one perturbation to one file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--kind", required=True, help="AN, RE, PS or TS (or the full name)")
    p.add_argument("--param", type=_kv, action="append", default=[], help="key=value; omit to sample")
    p.add_argument("--seed", type=int, default=0)

    p = command("synth-corpus", cmd_synth_corpus, "write a labeled synthetic corpus and its source manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=1.0)

    p = command("manifest", cmd_manifest, "validate labels against audio and write a source manifest")
    p.add_argument("--audio-dir", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)

    p = command("build-hard", cmd_build_hard, "build a perturbed hard set from a source manifest")
    p.add_argument("--sources", required=True, help="source manifest (JSONL)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_MASTER_SEED)
    p.add_argument("--p", type=float, default=DEFAULT_P_APPLY)
    p.add_argument("--kind-probs", type=_kind_probs, help="per-kind override, e.g. AN=1,RE=0.05")
    p.add_argument("--workers", type=int, default=1)

    def eval_like(name: str, fn, help_text: str) -> argparse.ArgumentParser:
        q = command(name, fn, help_text)
        q.add_argument("--manifest", required=True, help="source or hard-set manifest (JSONL)")
        q.add_argument("--out", required=True, help="output directory")
        q.add_argument("--format", choices=("csv", "jsonl"), default="csv")
        _add_backend_flags(q)
        return q

    p = eval_like("eval", cmd_eval, "evaluate baseline or tool-augmented mode")
    p.add_argument("--mode", choices=bench.MODES, default="tws")
    p.add_argument("--k-max", type=int, default=5)
    p.add_argument("--exclude", type=_csv_list, default=[], help=f"comma list from {','.join(CATEGORIES)}")

    p = eval_like("ablate", cmd_ablate, "leave-one-category-out ablation")
    p.add_argument("--k-max", type=int, default=5)

    p = eval_like("sweep-steps", cmd_sweep, "accuracy and steps across step caps")
    p.add_argument("--values", type=_int_list, default=[1, 2, 3, 5, 8])
    p.add_argument("--with-time", action="store_true", help="include wall time (not byte-stable)")

    p = command("simulate-theory", lambda a: EXIT_USAGE, "Monte-Carlo checks of the contraction analysis")
    tsub = p.add_subparsers(dest="theory_command", required=True, parser_class=_Parser)

    q = tsub.add_parser("contraction", help="mean residual against the closed form")
    q.add_argument("--alpha", type=float, required=True)
    q.add_argument("--rho", type=float, required=True)
    q.add_argument("--k", type=int, required=True)
    q.add_argument("--trials", type=int, default=10_000)
    q.add_argument("--initial-norm", type=float, default=1.0)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--exact", action="store_true", help="use rho exactly instead of drawing in [0.8 rho, rho]")
    q.add_argument("--out")
    q.set_defaults(func=cmd_contraction)

    q = tsub.add_parser("bounds", help="tool-augmented vs baseline error bounds over a grid")
    q.add_argument("--alpha", type=_float_list, required=True)
    q.add_argument("--rho", type=_float_list, required=True)
    q.add_argument("--k", type=_int_list, required=True)
    q.add_argument("--lipschitz", type=float, default=1.0)
    q.add_argument("--baseline-loss", type=float, default=0.0)
    q.add_argument("--initial-norm", type=float, default=1.0)
    q.add_argument("--out")
    q.set_defaults(func=cmd_bounds)

    q = tsub.add_parser("gain-ratio", help="empirical gain ratio of two operators")
    q.add_argument("--rho1", type=float, required=True)
    q.add_argument("--rho2", type=float, required=True)
    q.add_argument("--alpha", type=float, required=True)
    q.add_argument("--k", type=int, required=True)
    q.add_argument("--trials", type=int, default=20_000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out")
    q.set_defaults(func=cmd_gain_ratio)
    for q in (tsub.choices["contraction"], tsub.choices["bounds"], tsub.choices["gain-ratio"]):
        q.add_argument("--config")

    p = command("covering-study", cmd_covering, "measure operator adaptivity per perturbation kind")
    p.add_argument("--trials", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corpus-seed", type=int, default=0)
    p.add_argument("--corpus-size", type=int, default=12)
    p.add_argument("--kinds", type=_csv_list)
    p.add_argument("--with-identity", action="store_true", help="add the identity operator as a calibration row")
    p.add_argument("--out")

    p = command("report", cmd_report, "per-perturbation breakdown from saved per-record results")
    p.add_argument("records", nargs="+", help="records.csv or records.jsonl files from eval")
    p.add_argument("--out")
    return parser


def _leaf_parser(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.ArgumentParser:
    """The (sub)parser that owns the flags for this invocation."""
    node = parser
    while True:
        subs = [a for a in node._actions if isinstance(a, argparse._SubParsersAction)]
        if not subs:
            return node
        nxt = next((subs[0].choices[t] for t in argv if t in subs[0].choices), None)
        if nxt is None:
            return node
        node = nxt


def _config_path(argv: Sequence[str]) -> Optional[str]:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    path = _config_path(argv)
    if path is None:
        return
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    leaf = _leaf_parser(parser, argv)
    actions = {a.dest: a for a in leaf._actions}
    defaults = {}
    for key, value in data.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in actions or dest in ("help", "config"):
            raise UsageError(f"unknown config key {key!r}")
        act = actions[dest]
        if isinstance(value, list) and act.type in (_csv_list, _int_list, _float_list):
            value = ",".join(str(v) for v in value)
        if isinstance(value, str) and act.type is not None:
            value = act.type(value)
        elif isinstance(value, dict) and act.type is _kind_probs:
            value = _kind_probs(",".join(f"{k}={v}" for k, v in value.items()))
        if act.choices is not None and value not in act.choices:
            raise UsageError(f"config key {key!r}: {value!r} not in {list(act.choices)}")
        defaults[dest] = value
        act.required = False
    leaf.set_defaults(**defaults)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except (UsageError, argparse.ArgumentTypeError) as exc:
        print(f"tws: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, PolicyError) as exc:
        print(f"tws: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BackendError as exc:
        print(f"tws: backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (TwsError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"tws: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
