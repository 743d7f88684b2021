from __future__ import annotations

import itertools
import random

import pytest

from conftest import ScriptedScorer

from mtforge.core import build_io_prompt, parse_cot_target
from mtforge.forge import (
    CONDITIONS,
    BuildPlan,
    build_cotft,
    build_cotft_max,
    build_ioft,
    build_ioft_boa,
    build_ioft_ext,
    build_ioft_max,
)
from mtforge.decompose import KIND_P, AuxPair
from mtforge.scorer import RemoteUnavailable
from mtforge.strategies import StepOutput, TraceRecord

_ATTEMPTS_PER = {"maps": 4, "sbys": 3, "tear": 2, "self_refine": 3, "comptra": 0}


def make_tr(rid: str, strategy: str, attempts: list[str]) -> TraceRecord:
    trace = (
        "Working through the sentence.\n" + "\n".join(attempts)
        if attempts
        else "1. English Sentence\npart\nFrench Translation\npartie"
    )
    steps = (StepOutput("step", "prompt", "raw", attempts[0] if attempts else "part"),)
    return TraceRecord(
        record_id=rid,
        strategy=strategy,
        steps=steps,
        trace=trace,
        attempts=tuple(attempts),
        final_translation=attempts[0] if attempts else "",
    )


def trace_records_for(records, strategy: str) -> dict[str, TraceRecord]:
    n = _ATTEMPTS_PER[strategy]
    return {
        r.id: make_tr(r.id, strategy, [f"{r.id}/{strategy}/att{i}" for i in range(n)])
        for r in records
    }


class FailingScorer:
    def score_batch(self, requests):
        raise RemoteUnavailable("service down")


class TestBuildPlan:
    def test_conditions_closed_set(self):
        assert CONDITIONS == ("ioft", "cotft", "ioft_max", "cotft_max", "ioft_boa", "ioft_ext")

    def test_plain_conditions_need_nothing(self):
        BuildPlan("ioft")

    def test_cot_conditions_need_trace_source(self):
        with pytest.raises(ValueError):
            BuildPlan("cotft")
        BuildPlan("cotft", trace_source="t1")

    def test_ioft_max_needs_strategy_source(self):
        with pytest.raises(ValueError):
            BuildPlan("ioft_max", trace_source="t1")
        BuildPlan("ioft_max", trace_source="maps")

    def test_boa_needs_strategies(self):
        with pytest.raises(ValueError):
            BuildPlan("ioft_boa")
        BuildPlan("ioft_boa", strategy_set=("maps", "tear"))

    def test_ext_needs_decomp_kind(self):
        with pytest.raises(ValueError):
            BuildPlan("ioft_ext", trace_source="maps")
        BuildPlan("ioft_ext", trace_source="p")

    def test_unknown_condition_rejected(self):
        with pytest.raises(ValueError):
            BuildPlan("dpo")


class TestIoft:
    def test_one_row_per_record(self, records):
        ds = build_ioft(records)
        assert ds.kind == "training"
        assert len(ds.records) == len(records)
        assert ds.manifest == {"condition": "ioft", "rows": len(records)}
        for row, rec in zip(ds.records, records):
            assert row.id == rec.id
            assert row.prompt == build_io_prompt(rec)
            assert row.completion == rec.target
            assert row.mode == "io"
            assert row.meta["provenance"] == "ground_truth"


class TestCotft:
    def test_trace_wraps_unchanged_target(self, records):
        traces = {r.id: f"I think about {r.id}." for r in records}
        ds = build_cotft(records, traces, trace_source="t3")
        assert len(ds.records) == len(records)
        for row, rec in zip(ds.records, records):
            trace, target = parse_cot_target(row.completion)
            assert trace == traces[rec.id]
            assert target == rec.target
            assert row.mode == "cot"
            assert row.meta["trace_source"] == "t3"

    def test_missing_trace_drops_row(self, records, caplog):
        traces = {r.id: "trace" for r in records[1:]}
        with caplog.at_level("WARNING", logger="mtforge.forge"):
            ds = build_cotft(records, traces, trace_source="t1")
        assert len(ds.records) == len(records) - 1
        assert ds.manifest["dropped_missing_trace"] == 1
        assert records[0].id not in [r.id for r in ds.records]
        assert records[0].id in caplog.text


class TestIoftMax:
    def test_best_attempt_replaces_target(self, records):
        trs = trace_records_for(records, "tear")
        table = {r.target: 0.5 for r in records}
        for r in records:
            table[f"{r.id}/tear/att0"] = 0.4
            table[f"{r.id}/tear/att1"] = 0.9
        ds = build_ioft_max(records, trs, "blaser_qe", ScriptedScorer(table))
        for row, rec in zip(ds.records, records):
            assert row.completion == f"{rec.id}/tear/att1"
            assert row.meta["provenance"] == "attempt(1)"
            assert row.meta["selection_metric"] == "blaser_qe"
        assert ds.manifest["condition"] == "ioft_max"

    def test_gt_kept_on_tie(self, records):
        trs = trace_records_for(records, "tear")
        table: dict[str, float] = {}
        for r in records:
            table[r.target] = 0.7
            table[f"{r.id}/tear/att0"] = 0.7
            table[f"{r.id}/tear/att1"] = 0.2
        ds = build_ioft_max(records, trs, "blaser_qe", ScriptedScorer(table))
        for row, rec in zip(ds.records, records):
            assert row.completion == rec.target
            assert row.meta["provenance"] == "ground_truth"

    def test_missing_trace_record_keeps_row_with_gt(self, records):
        trs = trace_records_for(records[1:], "maps")
        table = {r.target: 0.1 for r in records}
        for r in records[1:]:
            for i in range(4):
                table[f"{r.id}/maps/att{i}"] = 0.9
        ds = build_ioft_max(records, trs, "cometkiwi", ScriptedScorer(table))
        assert len(ds.records) == len(records)
        assert ds.records[0].completion == records[0].target
        assert ds.records[0].meta["provenance"] == "ground_truth"
        assert ds.records[1].meta["provenance"].startswith("attempt(")

    def test_comptra_reduces_to_ioft(self, records):
        """Zero attempts per record: the -Max build is the identity condition."""
        trs = trace_records_for(records, "comptra")
        ds_max = build_ioft_max(records, trs, "blaser_qe", ScriptedScorer({}))
        ds_plain = build_ioft(records)
        assert [(r.id, r.prompt, r.completion) for r in ds_max.records] == [
            (r.id, r.prompt, r.completion) for r in ds_plain.records
        ]
        assert all(r.meta["provenance"] == "ground_truth" for r in ds_max.records)

    def test_scorer_outage_falls_back_to_gt(self, records, caplog):
        trs = trace_records_for(records, "sbys")
        with caplog.at_level("WARNING", logger="mtforge.forge"):
            ds = build_ioft_max(records, trs, "blaser_qe", FailingScorer())
        assert len(ds.records) == len(records)
        for row, rec in zip(ds.records, records):
            assert row.completion == rec.target
            assert row.meta["provenance"] == "ground_truth"
        assert "keeping ground truth" in caplog.text


class TestCotftMax:
    def test_trace_kept_target_swapped(self, records):
        trs = trace_records_for(records, "tear")
        table = {r.target: 0.1 for r in records}
        for r in records:
            table[f"{r.id}/tear/att0"] = 0.8
            table[f"{r.id}/tear/att1"] = 0.3
        ds = build_cotft_max(records, trs, "blaser_qe", ScriptedScorer(table), "tear")
        for row, rec in zip(ds.records, records):
            trace, target = parse_cot_target(row.completion)
            assert trace == trs[rec.id].trace
            assert target == f"{rec.id}/tear/att0"
            assert row.meta["provenance"] == "attempt(0)"

    def test_missing_trace_drops_row(self, records):
        trs = trace_records_for(records[:-1], "tear")
        table: dict[str, float] = {}
        for r in records:
            table[r.target] = 0.9
        for r in records[:-1]:
            table[f"{r.id}/tear/att0"] = 0.1
            table[f"{r.id}/tear/att1"] = 0.1
        ds = build_cotft_max(records, trs, "blaser_qe", ScriptedScorer(table), "tear")
        assert len(ds.records) == len(records) - 1
        assert ds.manifest["dropped_missing_trace"] == 1


class TestIoftBoa:
    STRATS = ("maps", "sbys", "tear")

    def _tables(self, records, seed=7):
        rng = random.Random(seed)
        table: dict[str, float] = {}
        for r in records:
            table[r.target] = rng.random()
            for strat in self.STRATS:
                for i in range(_ATTEMPTS_PER[strat]):
                    table[f"{r.id}/{strat}/att{i}"] = rng.random()
        return table

    def test_candidates_pooled_in_strategy_then_attempt_order(self, records):
        by_strategy = {s: trace_records_for(records, s) for s in ("tear", "maps")}
        table = self._tables(records)
        scorer = ScriptedScorer(table)
        build_ioft_boa(records[:1], by_strategy, "blaser_qe", scorer)
        rec = records[0]
        hyps = [r.hypothesis for r in scorer.calls[0]]
        assert hyps == (
            [rec.target]
            + [f"{rec.id}/maps/att{i}" for i in range(4)]
            + [f"{rec.id}/tear/att{i}" for i in range(2)]
        )

    def test_full_pool_dominates_every_subset(self, records):
        """The jointly scored union can never select worse than any sub-pool."""
        table = self._tables(records, seed=20260814)
        by_strategy = {s: trace_records_for(records, s) for s in self.STRATS}
        full = build_ioft_boa(records, by_strategy, "blaser_qe", ScriptedScorer(table))
        full_scores = {r.id: table[r.completion] for r in full.records}
        for k in (1, 2, 3):
            for subset in itertools.combinations(self.STRATS, k):
                sub = build_ioft_boa(
                    records,
                    {s: by_strategy[s] for s in subset},
                    "blaser_qe",
                    ScriptedScorer(table),
                )
                for row in sub.records:
                    assert full_scores[row.id] >= table[row.completion], (
                        f"subset {subset} beat the full pool on {row.id}"
                    )

    def test_manifest_declares_joint_scoring(self, records):
        by_strategy = {s: trace_records_for(records, s) for s in ("maps", "tear")}
        ds = build_ioft_boa(records, by_strategy, "blaser_qe", ScriptedScorer(self._tables(records)))
        assert ds.manifest["joint_scoring"] is True
        assert ds.manifest["strategy_set"] == ["maps", "tear"]
        assert all(r.meta["strategy_set"] == "maps,tear" for r in ds.records)

    def test_empty_mapping_rejected(self, records):
        with pytest.raises(ValueError):
            build_ioft_boa(records, {}, "blaser_qe", ScriptedScorer({}))


class TestIoftExt:
    def _aux(self, records, per_parent=5):
        out = []
        for r in records:
            for i in range(per_parent):
                out.append(
                    AuxPair(
                        text=f"{r.id} segment {i}",
                        translation=f"{r.id} segment {i} traduit",
                        origin=KIND_P,
                        parent_id=r.id,
                    )
                )
        return out

    def test_row_count_is_parents_plus_aux(self, records):
        aux = self._aux(records, per_parent=5)
        ds = build_ioft_ext(records, aux, KIND_P)
        assert len(ds.records) == 6 * len(records)
        assert ds.manifest["parent_rows"] == len(records)
        assert ds.manifest["aux_rows"] == 5 * len(records)

    def test_parent_rows_come_first_and_match_ioft(self, records):
        ds = build_ioft_ext(records, self._aux(records), KIND_P)
        plain = build_ioft(records)
        head = ds.records[: len(records)]
        assert [(r.id, r.prompt, r.completion) for r in head] == [
            (r.id, r.prompt, r.completion) for r in plain.records
        ]

    def test_aux_rows_reuse_parent_language_pair(self, records):
        ds = build_ioft_ext(records[:1], self._aux(records[:1], per_parent=1), KIND_P)
        aux_row = ds.records[-1]
        assert aux_row.id == f"{records[0].id}:aux:p:0"
        assert aux_row.prompt.startswith("Translate this from English to French:")
        assert aux_row.meta["parent_id"] == records[0].id
        assert aux_row.meta["aux_kind"] == "p"

    def test_unknown_parent_skipped(self, records, caplog):
        stray = AuxPair(text="t", translation="u", origin=KIND_P, parent_id="ghost")
        with caplog.at_level("WARNING", logger="mtforge.forge"):
            ds = build_ioft_ext(records, [stray], KIND_P)
        assert len(ds.records) == len(records)
        assert "ghost" in caplog.text

    def test_unknown_kind_rejected(self, records):
        with pytest.raises(ValueError):
            build_ioft_ext(records, [], "bogus")

    def test_aux_ids_counted_per_parent(self, records):
        aux = self._aux(records[:2], per_parent=2)
        ds = build_ioft_ext(records[:2], aux, KIND_P)
        ids = [r.id for r in ds.records[2:]]
        assert ids == [
            "rec-0:aux:p:0",
            "rec-0:aux:p:1",
            "rec-1:aux:p:0",
            "rec-1:aux:p:1",
        ]
