"""Evaluation harness: manifests, baseline vs TwS runs, ablations, sweeps, reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .audio import load_wav
from .engine import ModelBackend, RecordContext, run_baseline, run_tws, write_trace
from .errors import ManifestError, UnwritablePathError
from .operators import CATEGORIES, OperatorRegistry
from .perturbations import (
    CANONICAL_ORDER,
    HardSetManifest,
    PerturbationSpec,
    SourceRecord,
    read_hard_manifest,
    read_jsonl,
    unstretched_length,
    write_jsonl,
)
from .pitch import median_f0, track_pitch
from .synth import EMOTIONS

log = logging.getLogger(__name__)

MODES = ("baseline", "tws")
CLEAN_BUCKET = "clean"
BUCKETS = tuple(k.short for k in CANONICAL_ORDER) + (CLEAN_BUCKET,)


# --- manifests ---------------------------------------------------------------

def build_manifest(audio_dir: str | os.PathLike, labels_file: str | os.PathLike) -> list[SourceRecord]:
    """Validate a ``utterance_id,label`` CSV against the audio directory."""
    audio_dir = Path(audio_dir)
    try:
        fh = open(labels_file, newline="", encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read labels file {labels_file}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:2]] != ["utterance_id", "label"]:
            raise ManifestError(f"{labels_file}: header must be 'utterance_id,label'")
        records: list[SourceRecord] = []
        seen: set[str] = set()
        for row_no, row in enumerate(reader, start=2):
            uid = (row.get("utterance_id") or "").strip()
            label = (row.get("label") or "").strip().lower()
            if not uid:
                raise ManifestError(f"row {row_no}: empty utterance_id")
            if label not in EMOTIONS:
                raise ManifestError(f"row {row_no}: unknown label {row.get('label')!r} for {uid}")
            if uid in seen:
                raise ManifestError(f"row {row_no}: duplicate utterance_id {uid!r}")
            path = audio_dir / f"{uid}.wav"
            if not path.is_file():
                raise ManifestError(f"row {row_no}: missing audio {path}")
            seen.add(uid)
            records.append(SourceRecord(uid, str(path), label))
    return records


def write_source_manifest(records: Iterable[SourceRecord], path: str | os.PathLike) -> None:
    write_jsonl(path, (r.to_dict() for r in records))


@dataclass(frozen=True)
class EvalItem:
    utterance_id: str
    label: str
    audio_path: str
    clean_path: str
    specs: tuple[PerturbationSpec, ...] = ()

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(s.kind.short for s in self.specs)


def items_from_sources(records: Iterable[SourceRecord]) -> list[EvalItem]:
    return [EvalItem(r.utterance_id, r.label, r.source_path, r.source_path) for r in records]


def items_from_hard_set(manifest: HardSetManifest) -> list[EvalItem]:
    return [
        EvalItem(r.utterance_id, r.label, manifest.resolve(r.output_path), r.source_path, r.applied_specs)
        for r in manifest.records
    ]


def load_items(path: str | os.PathLike) -> list[EvalItem]:
    """Hard-set manifests carry ``output_path``; plain source manifests do not."""
    rows = read_jsonl(path)
    if rows and "output_path" in rows[0]:
        return items_from_hard_set(read_hard_manifest(path))
    try:
        return items_from_sources(SourceRecord(str(r["utterance_id"]), str(r["source_path"]), str(r["label"])) for r in rows)
    except KeyError as exc:
        raise ManifestError(f"{path}: record missing field {exc}") from exc


# --- evaluation --------------------------------------------------------------

@dataclass(frozen=True)
class EvalRecordResult:
    utterance_id: str
    true_label: str
    predicted_label: Optional[str]
    correct: bool
    steps_used: int
    operators_invoked: tuple[str, ...]
    perturbation_kinds: tuple[str, ...]
    terminated_by: str
    wall_time_ms: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class EvalSummary:
    mode: str
    overall_accuracy: float
    accuracy_by_kind: dict[str, float]
    operator_usage: dict[str, float]
    mean_steps: float
    n_records: int
    backend_errors: int
    config: dict[str, Any]


@dataclass
class EvalRun:
    summary: EvalSummary
    results: list[EvalRecordResult]

    @property
    def mean_wall_time_ms(self) -> float:
        return sum(r.wall_time_ms for r in self.results) / len(self.results) if self.results else 0.0


def record_context(item: EvalItem) -> tuple[RecordContext, Any]:
    audio = load_wav(item.audio_path)
    clean = audio if item.clean_path == item.audio_path else load_wav(item.clean_path)
    ref_len = unstretched_length(len(clean), item.specs, clean.sample_rate)
    ctx = RecordContext(
        item.utterance_id, item.label, item.specs,
        clean_duration_s=clean.duration_s,
        clean_f0_hz=median_f0(track_pitch(clean)),
        reference_duration_s=ref_len / clean.sample_rate,
    )
    return ctx, audio


def _buckets(kinds: Sequence[str]) -> tuple[str, ...]:
    return tuple(kinds) if kinds else (CLEAN_BUCKET,)


def summarize(results: Sequence[EvalRecordResult], mode: str, config: Mapping[str, Any]) -> EvalSummary:
    n = len(results)
    correct = sum(r.correct for r in results)
    by_kind: dict[str, float] = {}
    for bucket in BUCKETS:
        members = [r for r in results if bucket in _buckets(r.perturbation_kinds)]
        if members:
            by_kind[bucket] = sum(r.correct for r in members) / len(members)
    steps = sum(r.steps_used for r in results)
    usage = Counter(name for r in results for name in r.operators_invoked)
    return EvalSummary(
        mode=mode,
        overall_accuracy=correct / n if n else 0.0,
        accuracy_by_kind=by_kind,
        operator_usage={k: usage[k] / steps for k in sorted(usage)} if steps else {},
        mean_steps=steps / n if n else 0.0,
        n_records=n,
        backend_errors=sum(r.terminated_by == "backend_error" for r in results),
        config=dict(config),
    )


def evaluate(
    items: Sequence[EvalItem],
    mode: str,
    backend: ModelBackend,
    registry: OperatorRegistry,
    k_max: int = 5,
    exclusions: Iterable[str] = (),
    parallelism: int = 1,
    trace_dir: str | os.PathLike | None = None,
    instruction: Optional[str] = None,
) -> EvalRun:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    excluded = sorted(set(exclusions))
    bad = set(excluded) - set(CATEGORIES)
    if bad:
        raise ValueError(f"unknown operator categories {sorted(bad)}")
    active = registry.without_categories(excluded)

    def one(item: EvalItem) -> EvalRecordResult:
        ctx, audio = record_context(item)
        bound = backend.bind(ctx)
        t0 = time.perf_counter()
        if mode == "baseline":
            trace = run_baseline(audio, instruction, bound)
        else:
            trace = run_tws(audio, instruction, active, bound, k_max)
        wall = (time.perf_counter() - t0) * 1000.0
        if trace_dir is not None:
            write_trace(trace, Path(trace_dir) / f"{item.utterance_id}.json")
        return EvalRecordResult(
            utterance_id=item.utterance_id,
            true_label=item.label,
            predicted_label=trace.final_answer,
            correct=trace.final_answer == item.label,
            steps_used=trace.steps_used,
            operators_invoked=tuple(c.name for c in trace.calls),
            perturbation_kinds=item.kinds,
            terminated_by=trace.terminated_by,
            wall_time_ms=wall,
        )

    workers = max(1, min(parallelism, getattr(backend, "max_concurrency", 1)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(it) for it in items]
    config = {
        "k_max": k_max if mode == "tws" else 1,
        "backend": getattr(backend, "name", type(backend).__name__),
        "excluded_categories": excluded,
    }
    policy = getattr(backend, "policy", None)
    if policy is not None:
        config["policy"] = asdict(policy)
    return EvalRun(summarize(results, mode, config), results)


# --- protocols ---------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    configuration: str
    excluded: tuple[str, ...]
    summary: EvalSummary
    delta: float


def ablate_operators(
    items: Sequence[EvalItem],
    backend: ModelBackend,
    registry: OperatorRegistry,
    k_max: int = 5,
    parallelism: int = 1,
) -> list[AblationRow]:
    """Full registry, each category left out in turn, then baseline."""
    full = evaluate(items, "tws", backend, registry, k_max, parallelism=parallelism).summary
    rows = [AblationRow("full", (), full, 0.0)]
    for cat in CATEGORIES:
        s = evaluate(items, "tws", backend, registry, k_max, exclusions=[cat], parallelism=parallelism).summary
        rows.append(AblationRow(f"w/o {cat}", (cat,), s, s.overall_accuracy - full.overall_accuracy))
    base = evaluate(items, "baseline", backend, registry, k_max, parallelism=parallelism).summary
    rows.append(AblationRow("baseline", tuple(CATEGORIES), base, base.overall_accuracy - full.overall_accuracy))
    return rows


@dataclass(frozen=True)
class SweepRow:
    k_max: int
    accuracy: float
    mean_steps: float
    mean_wall_time_ms: float


def sweep_kmax(
    items: Sequence[EvalItem],
    backend: ModelBackend,
    registry: OperatorRegistry,
    values: Sequence[int],
    parallelism: int = 1,
) -> list[SweepRow]:
    if not values or any(int(v) < 1 for v in values):
        raise ValueError("k_max values must be a non-empty list of integers >= 1")
    rows = []
    for k in values:
        run = evaluate(items, "tws", backend, registry, int(k), parallelism=parallelism)
        rows.append(SweepRow(int(k), run.summary.overall_accuracy, run.summary.mean_steps, run.mean_wall_time_ms))
    return rows


def breakdown_by_perturbation(results: Sequence[EvalRecordResult]) -> dict[str, dict[str, Any]]:
    """Per-bucket accuracy and operator usage (fraction of steps in that bucket).

    Records with several kinds count toward every one of their buckets.
    """
    out: dict[str, dict[str, Any]] = {}
    for bucket in BUCKETS:
        members = [r for r in results if bucket in _buckets(r.perturbation_kinds)]
        if not members:
            continue
        steps = sum(r.steps_used for r in members)
        usage = Counter(name for r in members for name in r.operators_invoked)
        out[bucket] = {
            "n": len(members),
            "accuracy": sum(r.correct for r in members) / len(members),
            "usage": {k: usage[k] / steps for k in sorted(usage)} if steps else {},
        }
    return out


# --- reports -----------------------------------------------------------------

BASE_COLUMNS = ("mode", "configuration", "backend", "k_max", "excluded_categories",
                "n_records", "overall_accuracy", "delta", "mean_steps", "backend_errors")


def _r4(v: Any) -> Any:
    if isinstance(v, float):
        return round(v, 4)
    if isinstance(v, Mapping):
        return {k: _r4(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_r4(x) for x in v]
    return v


def summary_row(s: EvalSummary, configuration: str = "", delta: Optional[float] = None) -> dict[str, Any]:
    row: dict[str, Any] = {
        "mode": s.mode,
        "configuration": configuration or s.mode,
        "backend": s.config.get("backend", ""),
        "k_max": s.config.get("k_max", ""),
        "excluded_categories": "+".join(s.config.get("excluded_categories", [])),
        "n_records": s.n_records,
        "overall_accuracy": s.overall_accuracy,
        "delta": delta if delta is not None else "",
        "mean_steps": s.mean_steps,
        "backend_errors": s.backend_errors,
    }
    for b in BUCKETS:
        row[f"accuracy_{b}"] = s.accuracy_by_kind.get(b, "")
    for op, frac in s.operator_usage.items():
        row[f"usage_{op}"] = frac
    return row


def _cell(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def render_csv(rows: Sequence[Mapping[str, Any]], leading: Sequence[str] = ()) -> str:
    """``leading`` columns come first in the given order; the rest follow a fixed layout."""
    known = set(BASE_COLUMNS) | {f"accuracy_{b}" for b in BUCKETS} | set(leading)
    extra = sorted({k for r in rows for k in r} - known)
    columns = list(leading) + [c for c in BASE_COLUMNS if c not in leading and any(c in r for r in rows)]
    columns += [f"accuracy_{b}" for b in BUCKETS if f"accuracy_{b}" not in leading and any(f"accuracy_{b}" in r for r in rows)]
    columns += extra
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c, "")) for c in columns])
    return buf.getvalue()


def render_jsonl(rows: Sequence[Mapping[str, Any]]) -> str:
    return "".join(json.dumps(_r4(dict(r)), sort_keys=True) + "\n" for r in rows)


def export_report(
    summaries: Sequence[EvalSummary | tuple[str, EvalSummary, Optional[float]] | Mapping[str, Any]],
    path: str | os.PathLike,
    fmt: str = "csv",
) -> Path:
    """Write summaries (or ready-made rows) as CSV or JSONL with 4-decimal floats."""
    rows: list[Mapping[str, Any]] = []
    for s in summaries:
        if isinstance(s, EvalSummary):
            rows.append(summary_row(s))
        elif isinstance(s, tuple):
            rows.append(summary_row(s[1], s[0], s[2]))
        else:
            rows.append(s)
    if fmt == "csv":
        text = render_csv(rows)
    elif fmt == "jsonl":
        text = render_jsonl(rows)
    else:
        raise ValueError(f"format must be csv or jsonl, got {fmt!r}")
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise UnwritablePathError(f"cannot write report {p}: {exc}") from exc
    return p


def results_rows(results: Sequence[EvalRecordResult]) -> list[dict[str, Any]]:
    """Per-record rows without wall time (kept out so reports stay byte-stable)."""
    return [
        {
            "utterance_id": r.utterance_id,
            "true_label": r.true_label,
            "predicted_label": r.predicted_label or "",
            "correct": int(r.correct),
            "steps_used": r.steps_used,
            "operators_invoked": "+".join(r.operators_invoked),
            "perturbation_kinds": "+".join(r.perturbation_kinds),
            "terminated_by": r.terminated_by,
        }
        for r in results
    ]


def ablation_rows(rows: Sequence[AblationRow]) -> list[dict[str, Any]]:
    return [summary_row(r.summary, r.configuration, r.delta) for r in rows]


def sweep_rows(rows: Sequence[SweepRow], include_time: bool = True) -> list[dict[str, Any]]:
    out = []
    for r in rows:
        d: dict[str, Any] = {"k_max": r.k_max, "accuracy": r.accuracy, "mean_steps": r.mean_steps}
        if include_time:
            d["mean_wall_time_ms"] = r.mean_wall_time_ms
        out.append(d)
    return out


def write_rows(rows: Sequence[Mapping[str, Any]], path: str | os.PathLike, fmt: str = "csv") -> Path:
    return export_report(list(rows), path, fmt)


__all__ = [
    "AblationRow", "EvalItem", "EvalRecordResult", "EvalRun", "EvalSummary", "SweepRow",
    "ablate_operators", "breakdown_by_perturbation", "build_manifest", "evaluate", "export_report",
    "items_from_hard_set", "items_from_sources", "load_items", "sweep_kmax", "write_source_manifest",
]
