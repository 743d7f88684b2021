from __future__ import annotations

import threading

import pytest

from mtforge.core import format_cot_target
from mtforge.gateway import (
    NOTHINK_PRIMER,
    BackendReply,
    BackendUnavailable,
    GenerationParams,
    GenerationResult,
    Gateway,
    MockBackend,
    MockScriptError,
    ResponseCache,
    TransientBackendError,
    Usage,
    apply_nothink,
    extract_final_translation,
    is_nothink_applied,
    normalize_messages,
    strip_wrapping_quotes,
)


class TestNothinkPriming:
    def test_primer_is_the_exact_literal(self):
        assert NOTHINK_PRIMER == "<think>\n\n</think>"
        assert len(NOTHINK_PRIMER) == 17

    def test_priming_appends_assistant_message(self):
        messages = [{"role": "user", "content": "translate this"}]
        primed = apply_nothink(messages)
        assert primed[-1] == {"role": "assistant", "content": NOTHINK_PRIMER}
        assert primed[:-1] == messages
        assert messages == [{"role": "user", "content": "translate this"}]  # input untouched

    def test_raw_append_fallback_extends_user_message(self):
        messages = [{"role": "user", "content": "translate this"}]
        primed = apply_nothink(messages, raw_append=True)
        assert len(primed) == 1
        assert primed[0]["content"] == "translate this" + NOTHINK_PRIMER

    def test_double_priming_rejected(self):
        primed = apply_nothink([{"role": "user", "content": "x"}])
        assert is_nothink_applied(primed)
        with pytest.raises(ValueError):
            apply_nothink(primed)

    def test_gateway_applies_priming_only_when_thinking_off(self):
        seen: list[list[dict]] = []

        class Recorder:
            backend_id = "rec"

            def complete(self, messages, params):
                seen.append([dict(m) for m in messages])
                return BackendReply("ok", 1, 1)

        gw = Gateway(backend=Recorder())
        gw.generate("hello", GenerationParams(thinking="on"))
        gw.generate("hello", GenerationParams(thinking="off"))
        assert seen[0] == [{"role": "user", "content": "hello"}]
        assert seen[1] == [
            {"role": "user", "content": "hello"},
            {"role": "assistant", "content": NOTHINK_PRIMER},
        ]


class TestPostprocess:
    def _result(self, text: str, thinking: str, completion_tokens: int = 5) -> GenerationResult:
        backend = MockBackend([{"default": True, "reply": text}])

        class FixedTokens:
            backend_id = "fixed"

            def complete(self, messages, params):
                return BackendReply(text, 1, completion_tokens)

        gw = Gateway(backend=FixedTokens())
        return gw.generate("p", GenerationParams(thinking=thinking, max_thinking_tokens=10))

    def test_thinking_reply_split_at_close_tag(self):
        result = self._result("<think>\nreasoning here\n</think>\n\nLa réponse.", "on")
        assert result.thinking_part == "reasoning here"
        assert result.answer == "La réponse."
        assert not result.truncated_thinking

    def test_truncated_thinking_flagged_as_empty_answer(self):
        result = self._result("<think>\nendless reasoning without a close", "on", completion_tokens=10)
        assert result.truncated_thinking
        assert result.answer == ""
        assert result.thinking_part == "<think>\nendless reasoning without a close"

    def test_short_untagged_reply_is_plain_answer(self):
        result = self._result("just an answer", "on", completion_tokens=3)
        assert not result.truncated_thinking
        assert result.answer == "just an answer"

    def test_nonthinking_mode_keeps_raw(self):
        result = self._result("plain reply", "n/a")
        assert result.thinking_part is None
        assert result.answer == "plain reply"


class TestMockBackend:
    def test_rule_order_first_match_wins(self):
        backend = MockBackend(
            [
                {"contains": "alpha", "reply": "first"},
                {"contains": "alpha beta", "reply": "second"},
                {"default": True, "reply": "fallback"},
            ]
        )
        gw = Gateway(backend=backend)
        assert gw.generate("alpha beta", GenerationParams()).answer == "first"
        assert gw.generate("nothing", GenerationParams()).answer == "fallback"

    def test_regex_and_equals_rules(self):
        backend = MockBackend(
            [
                {"equals": "user: exact", "reply": "eq"},
                {"regex": r"number \d+", "reply": "re"},
            ]
        )
        gw = Gateway(backend=backend)
        assert gw.generate("exact", GenerationParams()).answer == "eq"
        assert gw.generate("number 42", GenerationParams()).answer == "re"

    def test_unmatched_prompt_raises(self):
        backend = MockBackend([{"contains": "x", "reply": "y"}])
        with pytest.raises(MockScriptError):
            Gateway(backend=backend).generate("zzz", GenerationParams())

    def test_script_file_round_trip(self, tmp_path):
        path = tmp_path / "script.jsonl"
        path.write_text('{"contains": "bonjour", "reply": "hello"}\n{"default": true, "reply": "?"}\n')
        backend = MockBackend.from_script_file(path)
        gw = Gateway(backend=backend)
        assert gw.generate("bonjour le monde", GenerationParams()).answer == "hello"

    def test_script_file_accepts_json_array(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(
            '[{"contains": "bonjour", "reply": "hello"}, {"default": true, "reply": "?"}]'
        )
        backend = MockBackend.from_script_file(path)
        gw = Gateway(backend=backend)
        assert gw.generate("bonjour le monde", GenerationParams()).answer == "hello"
        assert gw.generate("zzz", GenerationParams()).answer == "?"

    def test_rule_without_reply_rejected(self):
        with pytest.raises(ValueError, match="bad mock rule"):
            MockBackend([{"default": True}])

    def test_rule_without_matcher_rejected(self):
        with pytest.raises(ValueError, match="bad mock rule"):
            MockBackend([{"reply": "orphan"}])

    def test_non_dict_rule_rejected(self):
        with pytest.raises(ValueError, match="bad mock rule"):
            MockBackend([["contains", "reply"]])

    def test_token_accounting_is_whitespace_count(self):
        backend = MockBackend([{"default": True, "reply": "three word reply"}])
        result = Gateway(backend=backend).generate("two words", GenerationParams())
        assert result.usage.completion_tokens == 3


class TestCacheAndRetries:
    def test_cache_round_trip_and_hit_flag(self, tmp_path):
        calls = []

        class Counting:
            backend_id = "counting"

            def complete(self, messages, params):
                calls.append(1)
                return BackendReply("réponse", 2, 1)

        gw = Gateway(backend=Counting(), cache=ResponseCache(tmp_path))
        first = gw.generate("prompt", GenerationParams())
        second = gw.generate("prompt", GenerationParams())
        assert len(calls) == 1
        assert not first.cache_hit and second.cache_hit
        assert first.answer == second.answer == "réponse"

    def test_cache_key_depends_on_params_and_backend(self):
        msgs = normalize_messages("p")
        k1 = ResponseCache.key("b1", msgs, GenerationParams())
        k2 = ResponseCache.key("b1", msgs, GenerationParams(temperature=0.7))
        k3 = ResponseCache.key("b2", msgs, GenerationParams())
        assert len({k1, k2, k3}) == 3

    def test_transient_errors_retried_then_raised(self):
        attempts = []
        delays = []

        class Flaky:
            backend_id = "flaky"

            def complete(self, messages, params):
                attempts.append(1)
                raise TransientBackendError("429")

        gw = Gateway(backend=Flaky(), max_retries=3, backoff_base=1.0, sleeper=delays.append)
        with pytest.raises(BackendUnavailable):
            gw.generate("p", GenerationParams())
        assert len(attempts) == 4  # initial try + 3 retries
        assert len(delays) == 3
        for i, delay in enumerate(delays):
            low, high = 1.0 * 2**i * 0.5, 1.0 * 2**i * 1.5
            assert low <= delay <= high

    def test_recovery_after_transient_failure(self):
        state = {"n": 0}

        class Recovering:
            backend_id = "recovering"

            def complete(self, messages, params):
                state["n"] += 1
                if state["n"] < 3:
                    raise TransientBackendError("503")
                return BackendReply("ok", 1, 1)

        gw = Gateway(backend=Recovering(), max_retries=5, sleeper=lambda d: None)
        assert gw.generate("p", GenerationParams()).answer == "ok"

    def test_generate_many_preserves_order_and_parallelizes(self):
        barrier = threading.Barrier(4, timeout=5)

        class Slow:
            backend_id = "slow"

            def complete(self, messages, params):
                barrier.wait()  # deadlocks unless 4 calls run concurrently
                return BackendReply(messages[-1]["content"].upper(), 1, 1)

        gw = Gateway(backend=Slow(), concurrency=4)
        results = gw.generate_many(["a", "b", "c", "d"], GenerationParams())
        assert [r.answer for r in results] == ["A", "B", "C", "D"]


class TestExtraction:
    def _res(self, raw: str, answer: str | None = None) -> GenerationResult:
        return GenerationResult(
            raw=raw,
            thinking_part=None,
            answer=raw.strip() if answer is None else answer,
            truncated_thinking=False,
            usage=Usage(1, 1),
        )

    def test_strip_wrapping_quotes_variants(self):
        assert strip_wrapping_quotes('"texte"') == "texte"
        assert strip_wrapping_quotes("«texte»") == "texte"
        assert strip_wrapping_quotes('no "inner" change') == 'no "inner" change'
        assert strip_wrapping_quotes('"') == '"'

    def test_thinking_kind_uses_answer(self):
        assert extract_final_translation(self._res(" text "), "thinking") == "text"

    def test_instruct_kind_strips_quotes(self):
        assert extract_final_translation(self._res('"La cible."'), "instruct") == "La cible."

    def test_finetuned_cot_parses_grammar(self):
        raw = format_cot_target("steps", "La cible finale.")
        assert extract_final_translation(self._res(raw), "finetuned-cot") == "La cible finale."

    def test_finetuned_cot_falls_back_to_last_line(self):
        raw = "broken output\nwithout tags\nLa dernière ligne."
        assert extract_final_translation(self._res(raw), "finetuned-cot") == "La dernière ligne."

    def test_finetuned_io_takes_first_line(self):
        assert extract_final_translation(self._res("Ligne une.\nLigne deux."), "finetuned-io") == "Ligne une."

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            extract_final_translation(self._res("x"), "mystery")
