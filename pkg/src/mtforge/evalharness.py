"""Benchmark runner comparing thinking and non-thinking decoding modes.

A run generates hypotheses for every benchmark segment (optionally with
BM25-retrieved few-shot demonstrations), extracts final translations,
computes corpus BLEU and chrF++ under explicit signatures, and, when both
modes run, tests their difference with paired bootstrap resampling.
Reports persist segment-level outputs so every corpus metric can be
recomputed exactly on load.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from .core import (
    LangPair,
    ParallelRecord,
    build_fewshot_io_prompt,
    build_instruct_prompt,
    build_io_prompt,
)
from .gateway import (
    BackendUnavailable,
    GenerationParams,
    Gateway,
    extract_final_translation,
)
from .metrics import (
    BleuConfig,
    ChrfConfig,
    SignificanceConfig,
    bleu_signature,
    bootstrap_compare,
    chrfpp_signature,
    corpus_bleu,
    corpus_chrfpp,
)

logger = logging.getLogger(__name__)

BASE_KINDS = frozenset({"base", "finetuned-io", "finetuned-cot"})
INSTRUCT_KINDS = frozenset({"instruct", "thinking"})
MODEL_KINDS = BASE_KINDS | INSTRUCT_KINDS

FAILURE_RATE_LIMIT = 0.10

SEGMENT_FILE = "segments.jsonl"
SUMMARY_FILE = "summary.json"


class PartialFailure(RuntimeError):
    """More than the tolerated share of segments failed to generate."""

    def __init__(self, report: "EvalReport", rate: float) -> None:
        super().__init__(f"{rate:.1%} of segments failed (limit {FAILURE_RATE_LIMIT:.0%})")
        self.report = report
        self.rate = rate


class ReportInconsistent(ValueError):
    """Persisted corpus metrics do not match their stored segments."""


def _bm25_tokens(text: str) -> list[str]:
    return text.lower().split()


class BM25Index:
    """BM25 over tokenized documents (k1=1.5, b=0.75, Lucene-style IDF)."""

    def __init__(self, documents: Sequence[str], k1: float = 1.5, b: float = 0.75) -> None:
        if not documents:
            raise ValueError("empty document pool")
        self.k1 = k1
        self.b = b
        self._tfs = [Counter(_bm25_tokens(doc)) for doc in documents]
        self._lens = [sum(tf.values()) for tf in self._tfs]
        avgdl = sum(self._lens) / len(self._lens)
        self._avgdl = avgdl if avgdl > 0 else 1.0
        n = len(documents)
        df: Counter[str] = Counter()
        for tf in self._tfs:
            df.update(tf.keys())
        self._idf = {
            term: math.log(1.0 + (n - count + 0.5) / (count + 0.5)) for term, count in df.items()
        }

    def score(self, query: str, doc_index: int) -> float:
        tf = self._tfs[doc_index]
        norm = self.k1 * (1.0 - self.b + self.b * self._lens[doc_index] / self._avgdl)
        total = 0.0
        for term in _bm25_tokens(query):
            count = tf.get(term, 0)
            if count == 0 or term not in self._idf:
                continue
            total += self._idf[term] * count / (count + norm)
        return total

    def top_k(self, query: str, k: int) -> list[int]:
        """Indices of the k best documents, ties broken by pool index."""
        if k == 0:
            return []
        scored = sorted(
            range(len(self._tfs)), key=lambda i: (-self.score(query, i), i)
        )
        return scored[:k]


def bm25_retrieve(query: str, pool: Sequence[ParallelRecord], k: int) -> list[ParallelRecord]:
    """Top-k demonstration records by BM25 over the pool's source side."""
    if k > len(pool):
        raise ValueError(f"k={k} exceeds pool size {len(pool)}")
    if k == 0:
        return []
    index = BM25Index([r.source for r in pool])
    return [pool[i] for i in index.top_k(query, k)]


def _demo_block(demo: ParallelRecord) -> str:
    return build_io_prompt(demo) + demo.target


def build_eval_prompt(
    record: ParallelRecord,
    demos: Sequence[ParallelRecord] = (),
    model_kind: str = "instruct",
) -> str:
    """Benchmark prompt for one segment, styled per model family."""
    if model_kind in BASE_KINDS:
        return build_fewshot_io_prompt(record.source, record.pair, demos)
    if model_kind in INSTRUCT_KINDS:
        request = build_instruct_prompt(record)
        blocks = [_demo_block(d) for d in demos]
        return "\n\n".join([*blocks, request]) if blocks else request
    raise ValueError(f"unknown model kind {model_kind!r}")


@dataclass(frozen=True)
class EvalConfig:
    """One benchmark run: a named split, one direction, one model family."""

    benchmark: str
    direction: LangPair
    model_kind: str = "instruct"
    shots: int = 0
    thinking: str = "n/a"  # "on" | "off" | "both" | "n/a"
    params: GenerationParams = GenerationParams()
    significance: SignificanceConfig = SignificanceConfig()

    def __post_init__(self) -> None:
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if self.shots < 0:
            raise ValueError("shots must be >= 0")
        if self.thinking not in ("on", "off", "both", "n/a"):
            raise ValueError(f"unknown thinking setting {self.thinking!r}")
        if self.thinking in ("on", "off", "both") and self.model_kind != "thinking":
            raise ValueError("thinking modes apply only to the thinking model kind")
        if self.model_kind == "thinking" and self.thinking == "n/a":
            raise ValueError("thinking model kind requires a thinking setting")

    def to_dict(self) -> dict[str, Any]:
        return {
            "benchmark": self.benchmark,
            "direction": {
                "src": self.direction.src,
                "tgt": self.direction.tgt,
                "src_code": self.direction.src_code,
                "tgt_code": self.direction.tgt_code,
            },
            "model_kind": self.model_kind,
            "shots": self.shots,
            "thinking": self.thinking,
            "params": self.params.to_dict(),
            "significance": dataclasses.asdict(self.significance),
        }


@dataclass(frozen=True)
class SegmentResult:
    """One benchmark segment's outcome in one mode."""

    id: str
    source: str
    reference: str
    hypothesis: str
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "source": self.source,
            "reference": self.reference,
            "hypothesis": self.hypothesis,
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class MetricValue:
    name: str
    signature: str
    score: float

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "signature": self.signature, "score": self.score}


@dataclass(frozen=True)
class ModeResult:
    """All segments and corpus metrics for one decoding mode."""

    mode: str
    segments: tuple[SegmentResult, ...]
    metrics: tuple[MetricValue, ...]
    failure_rate: float


@dataclass(frozen=True)
class VerdictRow:
    """One significance comparison between two runs of a metric."""

    metric: str
    signature: str
    score_a: float
    score_b: float
    p_value: float
    significant: bool
    winner: str | None  # "a" | "b" | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric,
            "signature": self.signature,
            "score_a": self.score_a,
            "score_b": self.score_b,
            "p_value": self.p_value,
            "significant": self.significant,
            "winner": self.winner,
        }


@dataclass(frozen=True)
class EvalReport:
    """A persisted evaluation run."""

    config: EvalConfig
    modes: Mapping[str, ModeResult]
    significance: tuple[VerdictRow, ...] = ()

    def sole_mode(self) -> ModeResult:
        if len(self.modes) != 1:
            raise ValueError(f"report holds {len(self.modes)} modes; name one explicitly")
        return next(iter(self.modes.values()))


def _generate_all(
    gateway: Gateway, prompts: Sequence[str], params: GenerationParams
) -> list[tuple[Any, Exception | None]]:
    """Ordered (result, error) pairs; backend exhaustion is captured per segment."""

    def one(prompt: str):
        try:
            return gateway.generate(prompt, params), None
        except BackendUnavailable as exc:
            return None, exc

    if not prompts:
        return []
    workers = max(1, min(gateway.concurrency, len(prompts)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, prompts))


def _native_metrics(segments: Sequence[SegmentResult]) -> tuple[MetricValue, ...]:
    hyps = [s.hypothesis for s in segments]
    refs = [s.reference for s in segments]
    bleu_cfg = BleuConfig()
    chrf_cfg = ChrfConfig()
    return (
        MetricValue("bleu", bleu_signature(bleu_cfg), corpus_bleu(hyps, refs, bleu_cfg)),
        MetricValue("chrfpp", chrfpp_signature(chrf_cfg), corpus_chrfpp(hyps, refs, chrf_cfg)),
    )


def _mode_result(
    mode: str,
    records: Sequence[ParallelRecord],
    outcomes: Sequence[tuple[Any, Exception | None]],
    model_kind: str,
) -> ModeResult:
    segments: list[SegmentResult] = []
    failures = 0
    for record, (result, error) in zip(records, outcomes):
        flags: list[str] = []
        hypothesis = ""
        if error is not None:
            failures += 1
            flags.append("failed")
            logger.warning("segment %s failed: %s", record.id, error)
        else:
            if result.truncated_thinking:
                flags.append("truncated_thinking")
            hypothesis = extract_final_translation(result, model_kind)
        if not hypothesis:
            flags.append("empty")
        segments.append(
            SegmentResult(
                id=record.id,
                source=record.source,
                reference=record.target,
                hypothesis=hypothesis,
                flags=tuple(flags),
            )
        )
    rate = failures / len(records) if records else 0.0
    return ModeResult(mode, tuple(segments), _native_metrics(segments), rate)


def _compare_modes(
    result_a: ModeResult, result_b: ModeResult, cfg: SignificanceConfig, label_a: str, label_b: str
) -> tuple[VerdictRow, ...]:
    refs = [s.reference for s in result_a.segments]
    hyps_a = [s.hypothesis for s in result_a.segments]
    hyps_b = [s.hypothesis for s in result_b.segments]
    rows: list[VerdictRow] = []
    for metric_a, metric_b in zip(result_a.metrics, result_b.metrics):
        name = metric_a.name
        # orient the test so B is the apparent winner; p = P(B fails to beat A)
        if metric_b.score >= metric_a.score:
            worse, better = hyps_a, hyps_b
            better_label = label_b
        else:
            worse, better = hyps_b, hyps_a
            better_label = label_a
        outcome = bootstrap_compare(worse, better, refs, metric=name, cfg=cfg)
        tied = metric_a.score == metric_b.score
        significant = outcome.significant and not tied
        rows.append(
            VerdictRow(
                metric=name,
                signature=metric_a.signature,
                score_a=metric_a.score,
                score_b=metric_b.score,
                p_value=outcome.p_value,
                significant=significant,
                winner=better_label if significant else None,
            )
        )
    return tuple(rows)


def run_eval(
    records: Sequence[ParallelRecord],
    config: EvalConfig,
    gateway: Gateway,
    pool: Sequence[ParallelRecord] = (),
) -> EvalReport:
    """Execute a benchmark run; raises PartialFailure above the failure limit."""
    if not records:
        raise ValueError("empty benchmark")
    if config.shots > 0 and not pool:
        raise ValueError("few-shot runs need a demonstration pool")

    if config.shots > 0:
        index = BM25Index([r.source for r in pool])
        demo_sets = [
            [pool[i] for i in index.top_k(r.source, config.shots)] for r in records
        ]
    else:
        demo_sets = [[] for _ in records]
    prompts = [
        build_eval_prompt(record, demos, config.model_kind)
        for record, demos in zip(records, demo_sets)
    ]

    if config.thinking == "both":
        mode_plan = [("thinking", "on"), ("nothink", "off")]
    elif config.thinking == "on":
        mode_plan = [("thinking", "on")]
    elif config.thinking == "off":
        mode_plan = [("nothink", "off")]
    else:
        mode_plan = [("main", "n/a")]

    modes: dict[str, ModeResult] = {}
    for label, thinking in mode_plan:
        params = dataclasses.replace(config.params, thinking=thinking)
        outcomes = _generate_all(gateway, prompts, params)
        modes[label] = _mode_result(label, records, outcomes, config.model_kind)

    significance: tuple[VerdictRow, ...] = ()
    if config.thinking == "both":
        significance = _compare_modes(
            modes["nothink"], modes["thinking"], config.significance, "nothink", "thinking"
        )

    report = EvalReport(config=config, modes=modes, significance=significance)
    worst = max(result.failure_rate for result in modes.values())
    if worst > FAILURE_RATE_LIMIT:
        raise PartialFailure(report, worst)
    return report


def compare_runs(
    report_a: EvalReport,
    report_b: EvalReport,
    cfg: SignificanceConfig | None = None,
    mode_a: str | None = None,
    mode_b: str | None = None,
) -> tuple[VerdictRow, ...]:
    """Significance verdicts between two runs on the same benchmark segments."""
    cfg = cfg or SignificanceConfig()
    result_a = report_a.modes[mode_a] if mode_a else report_a.sole_mode()
    result_b = report_b.modes[mode_b] if mode_b else report_b.sole_mode()
    if report_a.config.benchmark != report_b.config.benchmark:
        raise ValueError("reports cover different benchmarks")
    if report_a.config.direction != report_b.config.direction:
        raise ValueError("reports cover different directions")
    ids_a = [s.id for s in result_a.segments]
    ids_b = [s.id for s in result_b.segments]
    if ids_a != ids_b:
        raise ValueError("reports cover different segment sets")
    return _compare_modes(result_a, result_b, cfg, "a", "b")


def format_verdict_table(rows: Sequence[VerdictRow]) -> str:
    """Plain-text verdict table; the winning score is starred when significant."""
    lines = [f"{'metric':<8} {'score_a':>9} {'score_b':>9} {'p':>7}  verdict"]
    for row in rows:
        mark_a = "*" if row.winner == "a" else " "
        mark_b = "*" if row.winner == "b" else " "
        verdict = f"{row.winner} better" if row.significant else "ns"
        lines.append(
            f"{row.metric:<8} {row.score_a:>8.2f}{mark_a} {row.score_b:>8.2f}{mark_b} "
            f"{row.p_value:>7.4f}  {verdict}"
        )
    return "\n".join(lines)


def load_parallel_text(
    src_path: str | Path,
    tgt_path: str | Path,
    pair: LangPair,
    id_prefix: str = "seg",
) -> list[ParallelRecord]:
    """Aligned one-sentence-per-line files into parallel records."""
    src_lines = Path(src_path).read_text(encoding="utf-8").splitlines()
    tgt_lines = Path(tgt_path).read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        raise ValueError(
            f"unaligned files: {len(src_lines)} source vs {len(tgt_lines)} target lines"
        )
    return [
        ParallelRecord(id=f"{id_prefix}-{i:06d}", source=s, target=t, pair=pair)
        for i, (s, t) in enumerate(zip(src_lines, tgt_lines))
    ]


def save_report(report: EvalReport, out_dir: str | Path) -> None:
    """Persist segments and summary; output is stable across reruns."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / SEGMENT_FILE, "w", encoding="utf-8") as fh:
        for mode in sorted(report.modes):
            for segment in report.modes[mode].segments:
                row = {"mode": mode, **segment.to_dict()}
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    summary = {
        "config": report.config.to_dict(),
        "metrics": {
            mode: [m.to_dict() for m in result.metrics]
            for mode, result in report.modes.items()
        },
        "failure_rates": {mode: r.failure_rate for mode, r in report.modes.items()},
        "significance": [row.to_dict() for row in report.significance],
    }
    with open(out / SUMMARY_FILE, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(in_dir: str | Path) -> EvalReport:
    """Load a persisted report, recomputing native metrics as a consistency check."""
    path = Path(in_dir)
    summary = json.loads((path / SUMMARY_FILE).read_text(encoding="utf-8"))
    by_mode: dict[str, list[SegmentResult]] = {}
    with open(path / SEGMENT_FILE, encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            by_mode.setdefault(row["mode"], []).append(
                SegmentResult(
                    id=row["id"],
                    source=row["source"],
                    reference=row["reference"],
                    hypothesis=row["hypothesis"],
                    flags=tuple(row["flags"]),
                )
            )
    cfg_dict = summary["config"]
    config = EvalConfig(
        benchmark=cfg_dict["benchmark"],
        direction=LangPair(**cfg_dict["direction"]),
        model_kind=cfg_dict["model_kind"],
        shots=cfg_dict["shots"],
        thinking=cfg_dict["thinking"],
        params=GenerationParams(
            temperature=cfg_dict["params"]["temperature"],
            max_new_tokens=cfg_dict["params"]["max_new_tokens"],
            max_thinking_tokens=cfg_dict["params"]["max_thinking_tokens"],
            thinking=cfg_dict["params"]["thinking"],
            stop_sequences=tuple(cfg_dict["params"]["stop_sequences"]),
            seed=cfg_dict["params"]["seed"],
        ),
        significance=SignificanceConfig(**cfg_dict["significance"]),
    )
    modes: dict[str, ModeResult] = {}
    for mode, segments in by_mode.items():
        stored = {m["name"]: m for m in summary["metrics"][mode]}
        recomputed = _native_metrics(segments)
        for metric in recomputed:
            stored_metric = stored.get(metric.name)
            if stored_metric is None:
                raise ReportInconsistent(f"metric {metric.name} missing from summary")
            if abs(stored_metric["score"] - metric.score) > 1e-9:
                raise ReportInconsistent(
                    f"{metric.name} mismatch in mode {mode}: "
                    f"stored {stored_metric['score']} vs recomputed {metric.score}"
                )
        modes[mode] = ModeResult(
            mode, tuple(segments), recomputed, summary["failure_rates"][mode]
        )
    significance = tuple(
        VerdictRow(
            metric=row["metric"],
            signature=row["signature"],
            score_a=row["score_a"],
            score_b=row["score_b"],
            p_value=row["p_value"],
            significant=row["significant"],
            winner=row["winner"],
        )
        for row in summary["significance"]
    )
    return EvalReport(config=config, modes=modes, significance=significance)
