"""Dataset builders for every fine-tuning condition.

Six conditions share one parallel corpus: direct input-output pairs, CoT
targets wrapping a reasoning trace around the ground truth, the -Max
variants that swap the target for the QE-best candidate among the ground
truth and the strategy's embedded attempts, the best-of-all variant that
pools attempts across strategies, and the extended variant that adds the
auxiliary decomposition pairs as extra rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import Dataset, ParallelRecord, TrainingExample, build_io_prompt, format_cot_target
from .decompose import DECOMP_KINDS, AuxPair
from .scorer import (
    GROUND_TRUTH,
    RemoteUnavailable,
    SelectionProvenance,
    select_best,
)
from .strategies import STRATEGY_KINDS, TraceRecord

logger = logging.getLogger(__name__)

CONDITIONS = ("ioft", "cotft", "ioft_max", "cotft_max", "ioft_boa", "ioft_ext")


@dataclass(frozen=True)
class BuildPlan:
    """What to build and from which trace/selection inputs."""

    condition: str
    trace_source: str | None = None
    selection_metric: str | None = None
    strategy_set: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}")
        if self.condition in ("cotft", "cotft_max") and not self.trace_source:
            raise ValueError(f"{self.condition} requires a trace source")
        if self.condition == "ioft_max" and self.trace_source not in STRATEGY_KINDS:
            raise ValueError("ioft_max requires a strategy trace source")
        if self.condition == "ioft_boa" and len(self.strategy_set) < 1:
            raise ValueError("ioft_boa requires a strategy set")
        if self.condition == "ioft_ext" and self.trace_source not in DECOMP_KINDS:
            raise ValueError("ioft_ext requires a decomposition kind")


def build_ioft(records: Sequence[ParallelRecord]) -> Dataset:
    """One direct prompt/target row per record."""
    rows = [
        TrainingExample(
            id=r.id,
            prompt=build_io_prompt(r),
            completion=r.target,
            mode="io",
            meta={"provenance": GROUND_TRUTH},
        )
        for r in records
    ]
    return Dataset(list(rows), kind="training", manifest={"condition": "ioft", "rows": len(rows)})


def build_cotft(
    records: Sequence[ParallelRecord],
    traces: Mapping[str, str],
    trace_source: str,
) -> Dataset:
    """CoT rows wrapping each record's trace around the unchanged target."""
    rows: list[TrainingExample] = []
    dropped = 0
    for r in records:
        trace = traces.get(r.id)
        if trace is None:
            logger.warning("no trace for record %s; dropping", r.id)
            dropped += 1
            continue
        rows.append(
            TrainingExample(
                id=r.id,
                prompt=build_io_prompt(r),
                completion=format_cot_target(trace, r.target),
                mode="cot",
                meta={"provenance": GROUND_TRUTH, "trace_source": trace_source},
            )
        )
    return Dataset(
        list(rows),
        kind="training",
        manifest={
            "condition": "cotft",
            "trace_source": trace_source,
            "rows": len(rows),
            "dropped_missing_trace": dropped,
        },
    )


def _select_target(
    record: ParallelRecord,
    attempts: Sequence[str],
    metric: str,
    scorer,
) -> tuple[str, SelectionProvenance]:
    try:
        return select_best(record.target, attempts, record.source, metric, scorer)
    except RemoteUnavailable as exc:
        logger.warning("scorer failed for record %s (%s); keeping ground truth", record.id, exc)
        return record.target, SelectionProvenance(GROUND_TRUTH)


def _attempts_for(
    record_id: str, trace_records: Mapping[str, TraceRecord]
) -> TraceRecord | None:
    return trace_records.get(record_id)


def build_ioft_max(
    records: Sequence[ParallelRecord],
    trace_records: Mapping[str, TraceRecord],
    metric: str,
    scorer,
) -> Dataset:
    """IOFT with the target swapped for the QE-best of {ground truth} and attempts."""
    rows: list[TrainingExample] = []
    for r in records:
        tr = _attempts_for(r.id, trace_records)
        attempts = tr.attempts if tr else ()
        target, prov = _select_target(r, attempts, metric, scorer)
        rows.append(
            TrainingExample(
                id=r.id,
                prompt=build_io_prompt(r),
                completion=target,
                mode="io",
                meta={"provenance": prov.label(), "selection_metric": metric},
            )
        )
    return Dataset(
        list(rows),
        kind="training",
        manifest={"condition": "ioft_max", "selection_metric": metric, "rows": len(rows)},
    )


def build_cotft_max(
    records: Sequence[ParallelRecord],
    trace_records: Mapping[str, TraceRecord],
    metric: str,
    scorer,
    trace_source: str,
) -> Dataset:
    """CoTFT with the wrapped target swapped for the QE-best candidate."""
    rows: list[TrainingExample] = []
    dropped = 0
    for r in records:
        tr = _attempts_for(r.id, trace_records)
        if tr is None:
            logger.warning("no trace for record %s; dropping", r.id)
            dropped += 1
            continue
        target, prov = _select_target(r, tr.attempts, metric, scorer)
        rows.append(
            TrainingExample(
                id=r.id,
                prompt=build_io_prompt(r),
                completion=format_cot_target(tr.trace, target),
                mode="cot",
                meta={
                    "provenance": prov.label(),
                    "selection_metric": metric,
                    "trace_source": trace_source,
                },
            )
        )
    return Dataset(
        list(rows),
        kind="training",
        manifest={
            "condition": "cotft_max",
            "trace_source": trace_source,
            "selection_metric": metric,
            "rows": len(rows),
            "dropped_missing_trace": dropped,
        },
    )


def build_ioft_boa(
    records: Sequence[ParallelRecord],
    trace_records_by_strategy: Mapping[str, Mapping[str, TraceRecord]],
    metric: str,
    scorer,
) -> Dataset:
    """IOFT-Max over the union of attempts across every supplied strategy.

    The union is scored jointly in one candidate set per record; attempts
    are pooled in strategy-name order, then attempt order.
    """
    if not trace_records_by_strategy:
        raise ValueError("ioft_boa needs at least one strategy's trace records")
    strategies = sorted(trace_records_by_strategy)
    rows: list[TrainingExample] = []
    for r in records:
        pooled: list[str] = []
        for strat in strategies:
            tr = trace_records_by_strategy[strat].get(r.id)
            if tr:
                pooled.extend(tr.attempts)
        target, prov = _select_target(r, pooled, metric, scorer)
        rows.append(
            TrainingExample(
                id=r.id,
                prompt=build_io_prompt(r),
                completion=target,
                mode="io",
                meta={
                    "provenance": prov.label(),
                    "selection_metric": metric,
                    "strategy_set": ",".join(strategies),
                },
            )
        )
    return Dataset(
        list(rows),
        kind="training",
        manifest={
            "condition": "ioft_boa",
            "strategy_set": strategies,
            "selection_metric": metric,
            "joint_scoring": True,
            "rows": len(rows),
        },
    )


def build_ioft_ext(
    records: Sequence[ParallelRecord],
    aux_pairs: Sequence[AuxPair],
    decomp_kind: str,
) -> Dataset:
    """IOFT rows plus one extra row per auxiliary decomposition pair."""
    if decomp_kind not in DECOMP_KINDS:
        raise ValueError(f"unknown decomposition kind {decomp_kind!r}")
    by_id = {r.id: r for r in records}
    rows = list(build_ioft(records).records)
    counters: dict[str, int] = {}
    for pair in aux_pairs:
        parent = by_id.get(pair.parent_id)
        if parent is None:
            logger.warning("aux pair references unknown record %s; skipping", pair.parent_id)
            continue
        idx = counters.get(pair.parent_id, 0)
        counters[pair.parent_id] = idx + 1
        aux_record = ParallelRecord(
            id=f"{pair.parent_id}:aux:{pair.origin}:{idx}",
            source=pair.text,
            target=pair.translation,
            pair=parent.pair,
        )
        rows.append(
            TrainingExample(
                id=aux_record.id,
                prompt=build_io_prompt(aux_record),
                completion=pair.translation,
                mode="io",
                meta={"provenance": GROUND_TRUTH, "aux_kind": pair.origin, "parent_id": pair.parent_id},
            )
        )
    return Dataset(
        list(rows),
        kind="training",
        manifest={
            "condition": "ioft_ext",
            "decomp_kind": decomp_kind,
            "rows": len(rows),
            "parent_rows": len(records),
            "aux_rows": len(rows) - len(records),
        },
    )
