"""Elicitation of structured translation reasoning traces from a teacher.

Six reasoning templates describe different ways to walk from a source
sentence to its translation. The teacher sees one template together with
a (source, translation) pair and writes the filled-in reasoning between
think tags; we extract the region between the first opening tag and the
last closing tag.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .core import THINK_CLOSE, THINK_OPEN, ParallelRecord, fill_slots, load_resource
from .gateway import BackendUnavailable, GenerationParams, Gateway

logger = logging.getLogger(__name__)


class MissingThinkTags(ValueError):
    """The teacher reply never produced a usable tagged reasoning region."""


@dataclass(frozen=True)
class CotTemplate:
    """A reasoning template: identifier, human name, tagged body."""

    id: str
    name: str
    body: str


def _template(template_id: str, name: str, resource: str) -> CotTemplate:
    return CotTemplate(template_id, name, load_resource(resource))


def cot_templates() -> tuple[CotTemplate, ...]:
    return (
        _template("t1", "Hierarchical translation", "cot_t1.txt"),
        _template("t2", "Triangulating the answer", "cot_t2.txt"),
        _template("t3", "Backtranslation check", "cot_t3.txt"),
        _template("t4", "Context-aware translation", "cot_t4.txt"),
        _template("t5", "Translation with explanation", "cot_t5.txt"),
        _template("t6", "Structural transformation", "cot_t6.txt"),
    )


def get_template(template_id: str) -> CotTemplate:
    for template in cot_templates():
        if template.id == template_id:
            return template
    raise KeyError(f"unknown reasoning template {template_id!r}")


def build_elicitation_prompt(record: ParallelRecord, template: CotTemplate) -> str:
    return fill_slots(
        load_resource("elicitation.txt"),
        {
            "{src}": record.pair.src,
            "{tgt}": record.pair.tgt,
            "{sentence}": record.source,
            "{translation}": record.target,
            "{chain_of_thought_template}": template.body,
        },
    )


def _extract_tagged(raw: str) -> str | None:
    start = raw.find(THINK_OPEN)
    if start < 0:
        return None
    end = raw.rfind(THINK_CLOSE)
    if end < 0 or end <= start:
        return None
    inner = raw[start + len(THINK_OPEN) : end]
    # nested stray tags would corrupt the training target grammar
    inner = inner.replace(THINK_OPEN, "").replace(THINK_CLOSE, "")
    return inner.strip()


def distill_trace(
    record: ParallelRecord,
    template: CotTemplate,
    gateway: Gateway,
    params: GenerationParams,
) -> str:
    """One tagged reasoning trace for the record, with a single reprompt."""
    prompt = build_elicitation_prompt(record, template)
    result = gateway.generate(prompt, params)
    trace = _extract_tagged(result.raw)
    if trace:
        return trace
    retry = gateway.generate(
        [
            {"role": "user", "content": prompt},
            {"role": "assistant", "content": result.raw},
            {
                "role": "user",
                "content": (
                    f"Rewrite your reasoning between {THINK_OPEN} and {THINK_CLOSE} "
                    "tags, exactly as the template shows."
                ),
            },
        ],
        params,
    )
    trace = _extract_tagged(retry.raw)
    if trace:
        return trace
    raise MissingThinkTags(f"no tagged reasoning for record {record.id!r}")


def distill_dataset(
    records: list[ParallelRecord],
    template: CotTemplate,
    gateway: Gateway,
    params: GenerationParams,
) -> tuple[dict[str, str], list[str]]:
    """Traces keyed by record id, plus ids dropped for unusable replies."""
    traces: dict[str, str] = {}
    dropped: list[str] = []
    for record in records:
        try:
            traces[record.id] = distill_trace(record, template, gateway, params)
        except (MissingThinkTags, BackendUnavailable) as exc:
            logger.warning("dropping record %s: %s", record.id, exc)
            dropped.append(record.id)
    return traces, dropped
