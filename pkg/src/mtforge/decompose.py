"""Source decomposition: paraphrases, syntactic paraphrases, hard expressions,
and phrase splitting, each yielding auxiliary (segment, translation) pairs.

Auxiliary pairs feed two consumers: numbered phrase/translation trace blocks
and extra input-output training rows.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Sequence

from .core import LangPair, ParallelRecord, build_fewshot_io_prompt
from .gateway import BackendUnavailable, GenerationParams, Gateway, strip_wrapping_quotes

logger = logging.getLogger(__name__)

KIND_P = "p"
KIND_SP = "sp"
KIND_H = "h"
KIND_COMPTRA = "comptra_phrases"
DECOMP_KINDS = (KIND_P, KIND_SP, KIND_H, KIND_COMPTRA)

_BULLET_RE = re.compile(r"^\s*(?:\d+[\.\)]|-)\s*(.*\S)\s*$")


class ListParseError(ValueError):
    """The teacher reply holds no usable enumeration."""


@dataclass(frozen=True)
class AuxPair:
    """One generated segment with its translation, tied to a parent record."""

    text: str
    translation: str
    origin: str
    parent_id: str

    def __post_init__(self) -> None:
        if not self.text.strip() or not self.translation.strip():
            raise ValueError("aux pair parts must be non-empty")
        if self.origin not in DECOMP_KINDS:
            raise ValueError(f"unknown decomposition kind {self.origin!r}")

    def to_dict(self) -> dict[str, str]:
        return {
            "parent_id": self.parent_id,
            "origin": self.origin,
            "text": self.text,
            "translation": self.translation,
        }

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "AuxPair":
        return cls(
            text=d["text"],
            translation=d["translation"],
            origin=d["origin"],
            parent_id=d["parent_id"],
        )


def parse_numbered_list(reply: str) -> list[str]:
    """Items from a numbered or dashed list, with wrapping quotes stripped."""
    items = []
    for line in reply.splitlines():
        m = _BULLET_RE.match(line)
        if m:
            item = strip_wrapping_quotes(m.group(1).strip())
            if item:
                items.append(item)
    if not items:
        raise ListParseError(f"no list items in reply starting {reply[:60]!r}")
    return items


def _decomposition_prompt(record: ParallelRecord, kind: str, n_phrases: int) -> str:
    p = record.pair
    if kind == KIND_P:
        head = f"Generate five paraphrases of the following {p.src} sentence."
    elif kind == KIND_SP:
        head = (
            f"Generate five paraphrases of the following {p.src} sentence, "
            "keeping the same syntax as the source."
        )
    elif kind == KIND_H:
        head = (
            f"List the expressions in the following {p.src} sentence "
            f"that you deem difficult to translate into {p.tgt}."
        )
    else:
        head = (
            f"Divide the following {p.src} sentence into at most {n_phrases} "
            "shorter, self-contained phrases."
        )
    return f"{head}\nReply with a numbered list, nothing else.\n\n{record.source}"


def decompose(
    record: ParallelRecord,
    kind: str,
    gateway: Gateway,
    params: GenerationParams,
    cap: int = 5,
    n_phrases: int = 3,
) -> list[str]:
    """Source-language segments for one record under one decomposition kind.

    Paraphrase kinds return exactly five segments (extras are dropped with
    a warning); hard expressions are capped at ``cap``; phrase splitting is
    capped at ``n_phrases`` and skips the teacher for single-word sources.
    One reprompt is attempted before ListParseError.
    """
    if kind not in DECOMP_KINDS:
        raise ValueError(f"unknown decomposition kind {kind!r}")
    if kind == KIND_COMPTRA and len(record.source.split()) == 1:
        return [record.source.strip()]

    prompt = _decomposition_prompt(record, kind, n_phrases)
    messages = [{"role": "user", "content": prompt}]
    reply = gateway.generate(messages, params)
    try:
        items = _validated_items(reply.answer, kind, record, cap, n_phrases)
    except ListParseError:
        retry = messages + [
            {"role": "assistant", "content": reply.raw},
            {"role": "user", "content": "Reply with a numbered list only."},
        ]
        items = _validated_items(gateway.generate(retry, params).answer, kind, record, cap, n_phrases)
    return items


def _validated_items(
    reply: str, kind: str, record: ParallelRecord, cap: int, n_phrases: int
) -> list[str]:
    items = parse_numbered_list(reply)
    if kind in (KIND_P, KIND_SP):
        if len(items) < 5:
            raise ListParseError(f"expected five paraphrases, got {len(items)}")
        if len(items) > 5:
            logger.warning("record %s: %d paraphrases, keeping first 5", record.id, len(items))
        return items[:5]
    limit = cap if kind == KIND_H else n_phrases
    kept = []
    for item in items[:limit]:
        if len(item) > len(record.source):
            logger.warning("record %s: dropping segment longer than the source", record.id)
            continue
        kept.append(item)
    if not kept:
        raise ListParseError("no usable segments after validation")
    return kept


def translate_aux(
    segments: Sequence[str],
    record: ParallelRecord,
    gateway: Gateway,
    params: GenerationParams,
    kind: str,
    demos: Sequence[ParallelRecord] = (),
) -> list[AuxPair]:
    """Translate each segment few-shot; failed segments are dropped with a log."""
    pairs: list[AuxPair] = []
    for segment in segments:
        if not segment.strip():
            continue
        prompt = build_fewshot_io_prompt(segment, record.pair, demos)
        try:
            result = gateway.generate(prompt, params)
        except BackendUnavailable as exc:
            logger.warning("record %s: segment translation failed: %s", record.id, exc)
            continue
        translation = result.answer.strip().splitlines()[0].strip() if result.answer.strip() else ""
        if not translation:
            logger.warning("record %s: empty segment translation dropped", record.id)
            continue
        pairs.append(
            AuxPair(
                text=segment,
                translation=strip_wrapping_quotes(translation),
                origin=kind,
                parent_id=record.id,
            )
        )
    return pairs


def pairs_to_trace(pairs: Sequence[AuxPair], pair: LangPair) -> str:
    """Numbered sentence/translation blocks separated by blank lines."""
    if not pairs:
        raise ValueError("at least one pair required")
    blocks = [
        f"{i}. {pair.src} Sentence\n{ap.text}\n{pair.tgt} Translation\n{ap.translation}"
        for i, ap in enumerate(pairs, start=1)
    ]
    return "\n\n".join(blocks)


def parse_trace_pairs(trace: str, pair: LangPair) -> list[tuple[str, str]]:
    """Inverse of pairs_to_trace for line-structured segment fields."""
    out: list[tuple[str, str]] = []
    blocks = re.split(r"\n\n(?=\d+\. )", trace)
    for block in blocks:
        lines = block.split("\n")
        if len(lines) < 4 or not lines[0].endswith(f"{pair.src} Sentence"):
            raise ValueError(f"malformed trace block starting {block[:40]!r}")
        sep = lines.index(f"{pair.tgt} Translation")
        out.append(("\n".join(lines[1:sep]), "\n".join(lines[sep + 1 :])))
    return out
