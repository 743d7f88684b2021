"""Uniform access to OpenAI-compatible generation backends.

Provides thinking-mode control (assistant-region priming with the
suppression literal), a content-addressed on-disk response cache, retry
with jittered exponential backoff, a bounded-concurrency batch helper,
and a deterministic scripted mock backend so every pipeline can run with
zero network access.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import httpx

from .core import THINK_CLOSE, THINK_OPEN, CotParseError, parse_cot_target

logger = logging.getLogger(__name__)

NOTHINK_PRIMER = "<think>\n\n</think>"

Message = dict[str, str]


class BackendUnavailable(RuntimeError):
    """The backend failed permanently (after retries for transient errors)."""


class MockScriptError(ValueError):
    """A scripted mock backend received a prompt no rule matches."""


@dataclass(frozen=True)
class GenerationParams:
    """Decoding configuration for one generation call."""

    temperature: float = 0.0
    max_new_tokens: int = 1024
    max_thinking_tokens: int = 3500
    thinking: str = "n/a"  # "on" | "off" | "n/a"
    stop_sequences: tuple[str, ...] = ()
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_new_tokens <= 0 or self.max_thinking_tokens <= 0:
            raise ValueError("token budgets must be positive")
        if self.thinking not in ("on", "off", "n/a"):
            raise ValueError(f"unknown thinking mode {self.thinking!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "temperature": self.temperature,
            "max_new_tokens": self.max_new_tokens,
            "max_thinking_tokens": self.max_thinking_tokens,
            "thinking": self.thinking,
            "stop_sequences": list(self.stop_sequences),
            "seed": self.seed,
        }


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class GenerationResult:
    """One backend completion, split into thinking span and answer."""

    raw: str
    thinking_part: str | None
    answer: str
    truncated_thinking: bool
    usage: Usage
    cache_hit: bool = False


def normalize_messages(prompt: str | Sequence[Message]) -> list[Message]:
    """Accept a bare user string or a full message list."""
    if isinstance(prompt, str):
        return [{"role": "user", "content": prompt}]
    return [dict(m) for m in prompt]


def apply_nothink(messages: Sequence[Message], raw_append: bool = False) -> list[Message]:
    """Prime the response region so the model skips its thinking phase.

    Default: append an assistant message holding exactly the suppression
    literal, which backends continue from. raw_append instead appends the
    literal to the last user message for servers without prefill support.
    Applying twice is rejected.
    """
    out = [dict(m) for m in messages]
    if is_nothink_applied(out):
        raise ValueError("suppression literal is already applied")
    if raw_append:
        if not out or out[-1]["role"] != "user":
            raise ValueError("raw_append requires a trailing user message")
        out[-1]["content"] = out[-1]["content"] + NOTHINK_PRIMER
    else:
        out.append({"role": "assistant", "content": NOTHINK_PRIMER})
    return out


def is_nothink_applied(messages: Sequence[Message]) -> bool:
    return bool(messages) and messages[-1]["content"].endswith(NOTHINK_PRIMER)


def render_messages(messages: Sequence[Message]) -> str:
    """Flatten a message list into one prompt string (mock matching, cache keys)."""
    return "\n".join(f"{m['role']}: {m['content']}" for m in messages)


@dataclass(frozen=True)
class BackendReply:
    text: str
    prompt_tokens: int
    completion_tokens: int


class MockBackend:
    """Deterministic scripted backend.

    Rules are evaluated in order against the rendered prompt; the first
    match wins. Each rule is a dict with one matcher key (equals,
    contains, regex) and a reply, or {"default": true, "reply": ...}.
    A callable script maps the rendered prompt directly to a reply.
    """

    RULE_KEYS = frozenset({"equals", "contains", "regex", "default"})

    def __init__(self, script: Sequence[dict[str, Any]] | Callable[[str], str]) -> None:
        self._fn: Callable[[str], str] | None = script if callable(script) else None
        self._rules: list[dict[str, Any]] = []
        if not callable(script):
            for rule in script:
                if (
                    not isinstance(rule, dict)
                    or "reply" not in rule
                    or not self.RULE_KEYS & rule.keys()
                ):
                    raise ValueError(f"bad mock rule (needs a matcher and a reply): {rule!r}")
                self._rules.append(dict(rule))
        payload = "callable" if self._fn else json.dumps(self._rules, sort_keys=True, ensure_ascii=False)
        self.backend_id = "mock:" + hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]

    @classmethod
    def from_script_file(cls, path: Path | str) -> "MockBackend":
        text = Path(path).read_text(encoding="utf-8")
        if text.lstrip().startswith("["):
            return cls(json.loads(text))
        rules = []
        for line in text.splitlines():
            line = line.strip()
            if line:
                rules.append(json.loads(line))
        return cls(rules)

    def complete(self, messages: Sequence[Message], params: GenerationParams) -> BackendReply:
        prompt = render_messages(messages)
        text = self._reply_for(prompt)
        return BackendReply(
            text=text,
            prompt_tokens=len(prompt.split()),
            completion_tokens=len(text.split()),
        )

    def _reply_for(self, prompt: str) -> str:
        if self._fn is not None:
            return self._fn(prompt)
        default: str | None = None
        for rule in self._rules:
            if rule.get("default"):
                default = rule["reply"]
                continue
            if "equals" in rule and prompt == rule["equals"]:
                return rule["reply"]
            if "contains" in rule and rule["contains"] in prompt:
                return rule["reply"]
            if "regex" in rule and re.search(rule["regex"], prompt, flags=re.DOTALL):
                return rule["reply"]
        if default is not None:
            return default
        raise MockScriptError(f"no mock rule matches prompt starting {prompt[:80]!r}")


class OpenAIBackend:
    """Chat-completions client for any OpenAI-compatible server."""

    TRANSIENT_STATUS = {429, 500, 502, 503, 504}

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "MTFORGE_API_KEY",
        timeout: float = 120.0,
        client: httpx.Client | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.backend_id = f"openai:{self.base_url}:{model}"
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, messages: Sequence[Message], params: GenerationParams) -> BackendReply:
        payload: dict[str, Any] = {
            "model": self.model,
            "messages": list(messages),
            "temperature": params.temperature,
            "max_tokens": params.max_new_tokens,
        }
        if params.stop_sequences:
            payload["stop"] = list(params.stop_sequences)
        if params.seed is not None:
            payload["seed"] = params.seed
        headers = {}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            resp = self._client.post(
                f"{self.base_url}/chat/completions", json=payload, headers=headers
            )
        except httpx.HTTPError as exc:
            raise TransientBackendError(str(exc)) from exc
        if resp.status_code in self.TRANSIENT_STATUS:
            raise TransientBackendError(f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
        body = resp.json()
        usage = body.get("usage", {})
        return BackendReply(
            text=body["choices"][0]["message"]["content"],
            prompt_tokens=usage.get("prompt_tokens", 0),
            completion_tokens=usage.get("completion_tokens", 0),
        )


class TransientBackendError(RuntimeError):
    """Retryable backend failure (rate limit, 5xx, transport error)."""


class ResponseCache:
    """Content-addressed response store keyed by (backend id, prompt, params)."""

    def __init__(self, cache_dir: Path | str) -> None:
        self.cache_dir = Path(cache_dir)

    @staticmethod
    def key(backend_id: str, messages: Sequence[Message], params: GenerationParams) -> str:
        blob = json.dumps(
            {"backend": backend_id, "messages": list(messages), "params": params.to_dict()},
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def _path(self, key: str) -> Path:
        return self.cache_dir / key[:2] / f"{key}.json"

    def get(self, key: str) -> BackendReply | None:
        path = self._path(key)
        if not path.exists():
            return None
        d = json.loads(path.read_text(encoding="utf-8"))
        return BackendReply(**d)

    def put(self, key: str, reply: BackendReply) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps(
                {
                    "text": reply.text,
                    "prompt_tokens": reply.prompt_tokens,
                    "completion_tokens": reply.completion_tokens,
                },
                ensure_ascii=False,
            ),
            encoding="utf-8",
        )
        os.replace(tmp, path)


@dataclass
class Gateway:
    """Generation front door: caching, retries, thinking-mode handling."""

    backend: Any
    cache: ResponseCache | None = None
    max_retries: int = 5
    backoff_base: float = 1.0
    concurrency: int = 8
    raw_append_nothink: bool = False
    sleeper: Callable[[float], None] = field(default=time.sleep, repr=False)

    def generate(self, prompt: str | Sequence[Message], params: GenerationParams) -> GenerationResult:
        messages = normalize_messages(prompt)
        if params.thinking == "off" and not is_nothink_applied(messages):
            messages = apply_nothink(messages, raw_append=self.raw_append_nothink)
        key = ResponseCache.key(self.backend.backend_id, messages, params)
        cache_hit = False
        reply = self.cache.get(key) if self.cache else None
        if reply is None:
            reply = self._complete_with_retries(messages, params)
            if self.cache:
                self.cache.put(key, reply)
        else:
            cache_hit = True
        return self._postprocess(reply, params, cache_hit)

    def generate_many(
        self, prompts: Sequence[str | Sequence[Message]], params: GenerationParams
    ) -> list[GenerationResult]:
        """Generate for every prompt; results keep the input order."""
        if not prompts:
            return []
        workers = max(1, min(self.concurrency, len(prompts)))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda p: self.generate(p, params), prompts))

    def _complete_with_retries(
        self, messages: Sequence[Message], params: GenerationParams
    ) -> BackendReply:
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                return self.backend.complete(messages, params)
            except TransientBackendError as exc:
                last_error = exc
                if attempt == self.max_retries:
                    break
                delay = self.backoff_base * (2**attempt) * (0.5 + random.random())
                logger.warning("backend transient failure (%s), retry in %.1fs", exc, delay)
                self.sleeper(delay)
        raise BackendUnavailable(f"backend failed after {self.max_retries} retries: {last_error}")

    @staticmethod
    def _postprocess(reply: BackendReply, params: GenerationParams, cache_hit: bool) -> GenerationResult:
        raw = reply.text
        usage = Usage(reply.prompt_tokens, reply.completion_tokens)
        if params.thinking != "on":
            return GenerationResult(raw, None, raw.strip(), False, usage, cache_hit)
        close_at = raw.find(THINK_CLOSE)
        if close_at < 0:
            if usage.completion_tokens >= params.max_thinking_tokens:
                # thinking budget exhausted before the close tag: no usable answer
                return GenerationResult(raw, raw, "", True, usage, cache_hit)
            return GenerationResult(raw, None, raw.strip(), False, usage, cache_hit)
        head = raw[:close_at]
        open_at = head.find(THINK_OPEN)
        thinking = head[open_at + len(THINK_OPEN) :] if open_at >= 0 else head
        answer = raw[close_at + len(THINK_CLOSE) :]
        return GenerationResult(raw, thinking.strip(), answer.strip(), False, usage, cache_hit)


_QUOTE_PAIRS = [('"', '"'), ("'", "'"), ("“", "”"), ("«", "»")]


def strip_wrapping_quotes(text: str) -> str:
    """Remove one matched pair of wrapping quotes, if present."""
    if len(text) >= 2:
        for left, right in _QUOTE_PAIRS:
            if text.startswith(left) and text.endswith(right):
                return text[len(left) : -len(right)].strip()
    return text


def extract_final_translation(result: GenerationResult, model_kind: str) -> str:
    """Pull the final translation out of a completion, per model family.

    Empty extractions are returned as empty strings; callers flag them and
    metrics score them as empty hypotheses.
    """
    if model_kind == "thinking":
        return result.answer.strip()
    if model_kind == "instruct":
        return strip_wrapping_quotes(result.answer.strip())
    if model_kind == "finetuned-cot":
        try:
            return parse_cot_target(result.raw)[1]
        except CotParseError:
            lines = [ln.strip() for ln in result.raw.splitlines() if ln.strip()]
            return lines[-1] if lines else ""
    if model_kind == "finetuned-io":
        lines = result.raw.strip().splitlines()
        return lines[0].strip() if lines else ""
    raise ValueError(f"unknown model kind {model_kind!r}")
