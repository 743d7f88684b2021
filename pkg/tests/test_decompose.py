from __future__ import annotations

import pytest

from conftest import make_gateway

from mtforge.decompose import (
    DECOMP_KINDS,
    KIND_COMPTRA,
    KIND_H,
    KIND_P,
    KIND_SP,
    AuxPair,
    ListParseError,
    decompose,
    pairs_to_trace,
    parse_numbered_list,
    parse_trace_pairs,
    translate_aux,
)


FIVE = "1. one\n2. two\n3. three\n4. four\n5. five"


class TestParseNumberedList:
    def test_dot_numbering(self):
        assert parse_numbered_list("1. alpha\n2. beta") == ["alpha", "beta"]

    def test_paren_numbering(self):
        assert parse_numbered_list("1) alpha\n2) beta") == ["alpha", "beta"]

    def test_dash_bullets(self):
        assert parse_numbered_list("- alpha\n- beta") == ["alpha", "beta"]

    def test_chatter_lines_ignored(self):
        reply = "Sure, here you go:\n1. alpha\nHope this helps!"
        assert parse_numbered_list(reply) == ["alpha"]

    def test_wrapping_quotes_stripped_per_item(self):
        assert parse_numbered_list('1. "alpha"\n2. beta') == ["alpha", "beta"]

    def test_no_items_raises(self):
        with pytest.raises(ListParseError):
            parse_numbered_list("no enumeration at all")


class TestDecompose:
    def test_paraphrases_need_five(self, record, params):
        gw = make_gateway([{"default": True, "reply": FIVE}])
        assert decompose(record, KIND_P, gw, params) == ["one", "two", "three", "four", "five"]

    def test_extra_paraphrases_trimmed(self, record, params):
        gw = make_gateway([{"default": True, "reply": FIVE + "\n6. six"}])
        assert len(decompose(record, KIND_SP, gw, params)) == 5

    def test_too_few_paraphrases_fail_after_reprompt(self, record, params):
        gw = make_gateway([{"default": True, "reply": "1. only"}])
        with pytest.raises(ListParseError):
            decompose(record, KIND_P, gw, params)

    def test_reprompt_recovers_once(self, record, params):
        calls = {"n": 0}

        def script(prompt: str) -> str:
            calls["n"] += 1
            return "none today" if calls["n"] == 1 else FIVE

        gw = make_gateway(script)
        assert len(decompose(record, KIND_P, gw, params)) == 5
        assert calls["n"] == 2

    def test_reprompt_carries_failed_reply(self, record, params):
        prompts: list[str] = []

        def script(prompt: str) -> str:
            prompts.append(prompt)
            return "nothing useful here" if len(prompts) == 1 else FIVE

        decompose(record, KIND_SP, make_gateway(script), params)
        assert "nothing useful here" in prompts[1]
        assert "numbered list only" in prompts[1]

    def test_hard_expressions_capped(self, record, params):
        reply = "\n".join(f"{i}. expr {i}" for i in range(1, 9))
        gw = make_gateway([{"default": True, "reply": reply}])
        assert len(decompose(record, KIND_H, gw, params, cap=5)) == 5

    def test_segments_longer_than_source_dropped(self, record, params):
        long_seg = "x" * (len(record.source) + 10)
        gw = make_gateway([{"default": True, "reply": f"1. {long_seg}\n2. short"}])
        assert decompose(record, KIND_H, gw, params) == ["short"]

    def test_phrases_capped_at_n_phrases(self, record, params):
        gw = make_gateway([{"default": True, "reply": "1. a\n2. b\n3. c\n4. d"}])
        assert decompose(record, KIND_COMPTRA, gw, params, n_phrases=2) == ["a", "b"]

    def test_single_word_source_skips_teacher(self, pair, params):
        from mtforge.core import ParallelRecord

        single = ParallelRecord(id="w", source="Bonjour", target="Hello", pair=pair)
        calls = {"n": 0}

        def script(prompt: str) -> str:
            calls["n"] += 1
            return "1. Bonjour"

        assert decompose(single, KIND_COMPTRA, make_gateway(script), params) == ["Bonjour"]
        assert calls["n"] == 0

    def test_unknown_kind_rejected(self, record, params):
        gw = make_gateway([{"default": True, "reply": FIVE}])
        with pytest.raises(ValueError):
            decompose(record, "bogus", gw, params)

    def test_prompts_differ_by_kind(self, record, params):
        seen: list[str] = []

        def script(prompt: str) -> str:
            seen.append(prompt)
            return FIVE

        gw = make_gateway(script)
        for kind in (KIND_P, KIND_SP, KIND_H, KIND_COMPTRA):
            decompose(record, kind, gw, params)
        assert len({s.split("\n")[0] for s in seen}) == 4
        assert record.source in seen[0]


class TestTranslateAux:
    def test_pairs_carry_origin_and_parent(self, record, params):
        gw = make_gateway([{"default": True, "reply": "Une version."}])
        pairs = translate_aux(["part one", "part two"], record, gw, params, KIND_P)
        assert [p.text for p in pairs] == ["part one", "part two"]
        assert all(p.origin == KIND_P and p.parent_id == record.id for p in pairs)
        assert all(p.translation == "Une version." for p in pairs)

    def test_demos_shape_the_prompt(self, record, records, params):
        prompts: list[str] = []

        def script(prompt: str) -> str:
            prompts.append(prompt)
            return "Une version."

        translate_aux(["seg"], record, make_gateway(script), params, KIND_H, demos=records[:2])
        assert records[0].source in prompts[0]
        assert records[1].target in prompts[0]
        assert prompts[0].rstrip().endswith(f"{record.pair.tgt}:")

    def test_first_line_taken_and_quotes_stripped(self, record, params):
        gw = make_gateway([{"default": True, "reply": '"Une version."\nExplanation: ...'}])
        pairs = translate_aux(["seg"], record, gw, params, KIND_SP)
        assert pairs[0].translation == "Une version."

    def test_empty_reply_drops_segment(self, record, params, caplog):
        gw = make_gateway([{"default": True, "reply": "   "}])
        with caplog.at_level("WARNING", logger="mtforge.decompose"):
            pairs = translate_aux(["seg"], record, gw, params, KIND_P)
        assert pairs == []
        assert "dropped" in caplog.text

    def test_blank_segments_skipped_without_call(self, record, params):
        calls = {"n": 0}

        def script(prompt: str) -> str:
            calls["n"] += 1
            return "ok"

        pairs = translate_aux(["", "  "], record, make_gateway(script), params, KIND_P)
        assert pairs == [] and calls["n"] == 0


class TestAuxPair:
    def test_round_trip(self):
        ap = AuxPair(text="t", translation="u", origin=KIND_H, parent_id="r1")
        assert AuxPair.from_dict(ap.to_dict()) == ap

    def test_rejects_blank_parts(self):
        with pytest.raises(ValueError):
            AuxPair(text=" ", translation="u", origin=KIND_P, parent_id="r1")
        with pytest.raises(ValueError):
            AuxPair(text="t", translation="", origin=KIND_P, parent_id="r1")

    def test_rejects_unknown_origin(self):
        with pytest.raises(ValueError):
            AuxPair(text="t", translation="u", origin="x", parent_id="r1")

    def test_known_kinds_closed_set(self):
        assert DECOMP_KINDS == ("p", "sp", "h", "comptra_phrases")


class TestTraceBlocks:
    def _pairs(self):
        return [
            AuxPair(text="first part", translation="première partie", origin=KIND_COMPTRA, parent_id="r"),
            AuxPair(text="second part", translation="seconde partie", origin=KIND_COMPTRA, parent_id="r"),
        ]

    def test_block_layout(self, pair):
        trace = pairs_to_trace(self._pairs(), pair)
        assert trace == (
            "1. English Sentence\nfirst part\nFrench Translation\npremière partie"
            "\n\n"
            "2. English Sentence\nsecond part\nFrench Translation\nseconde partie"
        )

    def test_round_trip(self, pair):
        trace = pairs_to_trace(self._pairs(), pair)
        assert parse_trace_pairs(trace, pair) == [
            ("first part", "première partie"),
            ("second part", "seconde partie"),
        ]

    def test_empty_pairs_rejected(self, pair):
        with pytest.raises(ValueError):
            pairs_to_trace([], pair)

    def test_malformed_trace_rejected(self, pair):
        with pytest.raises(ValueError):
            parse_trace_pairs("1. Wrong Header\nabc", pair)
