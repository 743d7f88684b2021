"""The five modular translation prompting strategies as step pipelines.

Each runner executes its teacher steps in order, assembles the strategy's
trace template from the step outputs, and records which outputs count as
full-sentence translation attempts. Trace assembly is a pure function of
the ordered step outputs, so persisted steps reproduce traces byte for
byte.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Any, Callable, Sequence

from .core import (
    LangPair,
    ParallelRecord,
    build_fewshot_io_prompt,
    build_io_prompt,
    fill_slots,
    load_resource,
)
from .decompose import (
    KIND_COMPTRA,
    AuxPair,
    ListParseError,
    decompose,
    pairs_to_trace,
)
from .gateway import (
    BackendUnavailable,
    GenerationParams,
    Gateway,
    Message,
    strip_wrapping_quotes,
)

logger = logging.getLogger(__name__)

MAPS = "maps"
SBYS = "sbys"
TEAR = "tear"
SELF_REFINE = "self_refine"
COMPTRA = "comptra"
STRATEGY_KINDS = (MAPS, SBYS, TEAR, SELF_REFINE, COMPTRA)

# fixed attempt counts; self_refine depends on the round count
_ATTEMPT_COUNTS = {MAPS: 4, SBYS: 3, TEAR: 2, COMPTRA: 0}


class StepFailed(RuntimeError):
    """A strategy step failed after gateway retries."""

    def __init__(self, step_name: str, cause: Exception) -> None:
        super().__init__(f"step {step_name!r} failed: {cause}")
        self.step_name = step_name


class DecompositionParseError(ListParseError):
    """The phrase-splitting reply could not be parsed."""


@dataclass(frozen=True)
class StepOutput:
    """One teacher call inside a strategy run."""

    step_name: str
    prompt_used: str
    raw_output: str
    parsed: str

    def to_dict(self) -> dict[str, str]:
        return {
            "step_name": self.step_name,
            "prompt_used": self.prompt_used,
            "raw_output": self.raw_output,
            "parsed": self.parsed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "StepOutput":
        return cls(d["step_name"], d["prompt_used"], d["raw_output"], d["parsed"])


@dataclass(frozen=True)
class TraceRecord:
    """A strategy run: ordered steps, assembled trace, embedded attempts."""

    record_id: str
    strategy: str
    steps: tuple[StepOutput, ...]
    trace: str
    attempts: tuple[str, ...]
    final_translation: str

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        expected = _ATTEMPT_COUNTS.get(self.strategy)
        if expected is not None and len(self.attempts) != expected:
            raise ValueError(
                f"{self.strategy} must carry {expected} attempts, got {len(self.attempts)}"
            )
        if self.strategy == SELF_REFINE and len(self.attempts) < 2:
            raise ValueError("self_refine needs a draft plus at least one refinement")
        for attempt in self.attempts:
            if attempt not in self.trace:
                raise ValueError(f"attempt {attempt[:40]!r} missing from trace")

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "strategy": self.strategy,
            "steps": [s.to_dict() for s in self.steps],
            "trace": self.trace,
            "attempts": list(self.attempts),
            "final_translation": self.final_translation,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TraceRecord":
        return cls(
            record_id=d["record_id"],
            strategy=d["strategy"],
            steps=tuple(StepOutput.from_dict(s) for s in d["steps"]),
            trace=d["trace"],
            attempts=tuple(d["attempts"]),
            final_translation=d["final_translation"],
        )


_LABEL_RE = re.compile(r"^([A-Za-z][A-Za-z ]{0,30}[A-Za-z]):\s+(\S.*)$")


def parse_step_reply(raw: str) -> str:
    """Slot value from a step reply.

    Single-line replies lose echoed colon labels ("Xhosa: Molo" becomes
    "Molo", repeatedly for stacked labels); wrapping quotes are stripped.
    Multi-line replies are kept whole, trimmed.
    """
    text = raw.strip()
    if "\n" not in text:
        for _ in range(3):
            m = _LABEL_RE.match(text)
            if not m:
                break
            text = m.group(2).strip()
    return strip_wrapping_quotes(text)


def assemble_maps_trace(
    pair: LangPair,
    zero_shot: str,
    demonstrations: str,
    demo_draft: str,
    keywords: str,
    keyword_draft: str,
    topics: str,
    topic_draft: str,
) -> str:
    return fill_slots(
        load_resource("trace_maps.txt"),
        {
            "{source language}": pair.src,
            "{target language}": pair.tgt,
            "{zero-shot translation}": zero_shot,
            "{demonstrations}": demonstrations,
            "{demonstrations-inspired translation}": demo_draft,
            "{keywords}": keywords,
            "{keywords-inspired translation}": keyword_draft,
            "{topics}": topics,
            "{topics-inspired translation}": topic_draft,
        },
    )


def assemble_sbys_trace(research: str, draft: str, refinement: str, proofreading: str) -> str:
    return fill_slots(
        load_resource("trace_sbys.txt"),
        {
            "{predrafting research}": research,
            "{draft translation}": draft,
            "{refinement}": refinement,
            "{proofreading}": proofreading,
        },
    )


def assemble_tear_trace(draft: str, annotations: str, refinement: str) -> str:
    return fill_slots(
        load_resource("trace_tear.txt"),
        {
            "{draft translation}": draft,
            "{MQM annotations}": annotations,
            "{refinement}": refinement,
        },
    )


def assemble_self_refine_trace(draft: str, refinements: Sequence[str]) -> str:
    if not refinements:
        raise ValueError("at least one refinement round required")
    lines = ["Here is a draft translation", "", f"1. {draft}", ""]
    last = len(refinements)
    for i, refinement in enumerate(refinements, start=1):
        if i == 1:
            connector = "Let's improve it and write a better translation"
        elif i == last:
            connector = "Let's improve it one last time and write a better translation"
        else:
            connector = "Let's further improve it and write a better translation"
        lines += [connector, "", f"{i + 1}. {refinement}", ""]
    lines.append(
        "We will choose the best of these translations and further improve it "
        "to obtain the final, polished translation."
    )
    return "\n".join(lines)


def _run_step(
    gateway: Gateway,
    params: GenerationParams,
    steps: list[StepOutput],
    name: str,
    prompt: str | Sequence[Message],
) -> str:
    try:
        result = gateway.generate(prompt, params)
    except BackendUnavailable as exc:
        raise StepFailed(name, exc) from exc
    parsed = parse_step_reply(result.answer)
    prompt_text = prompt if isinstance(prompt, str) else prompt[-1]["content"]
    steps.append(StepOutput(name, prompt_text, result.raw, parsed))
    return parsed


def _knowledge_draft_prompt(record: ParallelRecord, knowledge_label: str, knowledge: str) -> str:
    p = record.pair
    return (
        f"{knowledge_label}:\n{knowledge}\n\n"
        f"Given this knowledge, translate this from {p.src} to {p.tgt}:\n"
        f"{p.src}: {record.source}\n{p.tgt}: "
    )


def run_maps(
    record: ParallelRecord,
    gateway: Gateway,
    params: GenerationParams,
    selector: Callable[[str, Sequence[str]], int] | None = None,
) -> TraceRecord:
    """Multi-aspect prompting: four knowledge-conditioned candidate drafts.

    The trace closes before any selection happens; final_translation is
    informational (selector index when provided, else the first candidate).
    """
    p = record.pair
    steps: list[StepOutput] = []
    zero_shot = _run_step(gateway, params, steps, "zero_shot", build_io_prompt(record))
    demonstrations = _run_step(
        gateway,
        params,
        steps,
        "demonstrations",
        (
            f"Write an {p.src} sentence related to but different from the input "
            f"{p.src} sentence and translate it into {p.tgt}.\n\n"
            f"Input {p.src} sentence: {record.source}\n\n"
            f"Give the new sentence and its {p.tgt} translation."
        ),
    )
    demo_draft = _run_step(
        gateway, params, steps, "demo_draft",
        _knowledge_draft_prompt(record, "Related demonstration", demonstrations),
    )
    keywords = _run_step(
        gateway,
        params,
        steps,
        "keywords",
        (
            f"Extract the keywords in the provided {p.src} sentence, and then "
            f"translate these keywords into {p.tgt}.\n\n"
            f"{p.src} sentence: {record.source}"
        ),
    )
    keyword_draft = _run_step(
        gateway, params, steps, "keyword_draft",
        _knowledge_draft_prompt(record, "Keyword translations", keywords),
    )
    topics = _run_step(
        gateway,
        params,
        steps,
        "topics",
        (
            f"Use a few words to describe the topics of the provided {p.src} "
            f"sentence.\n\n{p.src} sentence: {record.source}"
        ),
    )
    topic_draft = _run_step(
        gateway, params, steps, "topic_draft",
        _knowledge_draft_prompt(record, "Topics", topics),
    )
    trace = assemble_maps_trace(
        p, zero_shot, demonstrations, demo_draft, keywords, keyword_draft, topics, topic_draft
    )
    attempts = (zero_shot, demo_draft, keyword_draft, topic_draft)
    winner = attempts[selector(record.source, attempts)] if selector else attempts[0]
    return TraceRecord(record.id, MAPS, tuple(steps), trace, attempts, winner)


def run_sbys(record: ParallelRecord, gateway: Gateway, params: GenerationParams) -> TraceRecord:
    """Step-by-step translation: research, draft, refine, proofread, one conversation."""
    p = record.pair
    steps: list[StepOutput] = []
    messages: list[Message] = []

    def converse(name: str, content: str) -> str:
        messages.append({"role": "user", "content": content})
        parsed = _run_step(gateway, params, steps, name, messages)
        messages.append({"role": "assistant", "content": steps[-1].raw_output})
        return parsed

    research = converse(
        "research",
        (
            f"We are translating the following {p.src} sentence into {p.tgt}.\n\n"
            f"{record.source}\n\n"
            "Before drafting, research the sentence: note idioms, named entities, "
            "and ambiguous phrases, and how to render them."
        ),
    )
    draft = converse("draft", f"Now write a draft {p.tgt} translation of the sentence.")
    refinement = converse(
        "refinement",
        (
            "Now let's move to the next stage: Post-editing with local refinement.\n"
            "Refine the draft translation by making micro-level improvements that "
            "improve the draft's fluency. Give the refined translation."
        ),
    )
    proofreading = converse(
        "proofreading",
        (
            "Now, we will proofread the refined text for grammar spelling, "
            "punctuation, terminology and overall fluency. Give the final text."
        ),
    )
    trace = assemble_sbys_trace(research, draft, refinement, proofreading)
    return TraceRecord(
        record.id, SBYS, tuple(steps), trace, (draft, refinement, proofreading), proofreading
    )


def _tear_rubric() -> str:
    lines = [
        line
        for line in load_resource("trace_tear.txt").splitlines()
        if line.startswith(("The categories of errors", "Each error is classified"))
    ]
    return "\n".join(lines)


def run_tear(
    record: ParallelRecord,
    gateway: Gateway,
    params: GenerationParams,
    demos: Sequence[ParallelRecord] = (),
) -> TraceRecord:
    """Translate, estimate (MQM-style annotation), refine."""
    p = record.pair
    steps: list[StepOutput] = []
    draft = _run_step(
        gateway, params, steps, "draft", build_fewshot_io_prompt(record.source, p, demos)
    )
    annotations = _run_step(
        gateway,
        params,
        steps,
        "annotate",
        (
            "Let's identify errors and assess the quality of the draft translation.\n"
            f"{_tear_rubric()}\n\n"
            f"{p.src} source: {record.source}\n"
            f"{p.tgt} draft: {draft}\n\n"
            "List the MQM annotations of the draft."
        ),
    )
    refinement = _run_step(
        gateway,
        params,
        steps,
        "refine",
        (
            "Upon reviewing the translation and error information, refine the draft "
            "and give a better translation.\n\n"
            f"{p.src} source: {record.source}\n"
            f"{p.tgt} draft: {draft}\n"
            f"MQM annotations:\n{annotations}\n\n"
            f"Improved {p.tgt} translation:"
        ),
    )
    trace = assemble_tear_trace(draft, annotations, refinement)
    return TraceRecord(record.id, TEAR, tuple(steps), trace, (draft, refinement), refinement)


def run_self_refine(
    record: ParallelRecord,
    gateway: Gateway,
    params: GenerationParams,
    rounds: int = 3,
) -> TraceRecord:
    """A draft followed by successive self-refinement rounds."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    p = record.pair
    steps: list[StepOutput] = []
    draft = _run_step(gateway, params, steps, "draft", build_io_prompt(record))
    refinements: list[str] = []
    current = draft
    for i in range(1, rounds + 1):
        current = _run_step(
            gateway,
            params,
            steps,
            f"refine_{i}",
            (
                f"Here is a {p.tgt} translation of an {p.src} sentence.\n\n"
                f"{p.src}: {record.source}\n"
                f"Current translation: {current}\n\n"
                f"Improve it and write a better {p.tgt} translation."
            ),
        )
        refinements.append(current)
    trace = assemble_self_refine_trace(draft, refinements)
    attempts = (draft, *refinements)
    return TraceRecord(record.id, SELF_REFINE, tuple(steps), trace, attempts, refinements[-1])


def run_comptra(
    record: ParallelRecord,
    gateway: Gateway,
    params: GenerationParams,
    demos: Sequence[ParallelRecord] = (),
    n_phrases: int = 3,
) -> TraceRecord:
    """Compositional translation: split into phrases, translate each few-shot.

    Phrase translations are not attempts at the full source, so attempts
    stays empty; the recombination step is not part of trace building and
    final_translation is left empty.
    """
    p = record.pair
    steps: list[StepOutput] = []
    try:
        phrases = decompose(record, KIND_COMPTRA, gateway, params, n_phrases=n_phrases)
    except BackendUnavailable as exc:
        raise StepFailed("decompose", exc) from exc
    except ListParseError as exc:
        raise DecompositionParseError(str(exc)) from exc
    steps.append(
        StepOutput("decompose", f"decompose into at most {n_phrases} phrases", "\n".join(phrases), "\n".join(phrases))
    )
    aux: list[AuxPair] = []
    for i, phrase in enumerate(phrases, start=1):
        translation = _run_step(
            gateway, params, steps, f"phrase_{i}", build_fewshot_io_prompt(phrase, p, demos)
        )
        aux.append(AuxPair(text=phrase, translation=translation, origin=KIND_COMPTRA, parent_id=record.id))
    trace = pairs_to_trace(aux, p)
    return TraceRecord(record.id, COMPTRA, tuple(steps), trace, (), "")


def reassemble_trace(strategy: str, pair: LangPair, steps: Sequence[StepOutput]) -> str:
    """Rebuild a trace from persisted step outputs (byte-identity check)."""
    parsed = {s.step_name: s.parsed for s in steps}
    if strategy == MAPS:
        return assemble_maps_trace(
            pair,
            parsed["zero_shot"],
            parsed["demonstrations"],
            parsed["demo_draft"],
            parsed["keywords"],
            parsed["keyword_draft"],
            parsed["topics"],
            parsed["topic_draft"],
        )
    if strategy == SBYS:
        return assemble_sbys_trace(
            parsed["research"], parsed["draft"], parsed["refinement"], parsed["proofreading"]
        )
    if strategy == TEAR:
        return assemble_tear_trace(parsed["draft"], parsed["annotate"], parsed["refine"])
    if strategy == SELF_REFINE:
        refinements = [s.parsed for s in steps if s.step_name.startswith("refine_")]
        return assemble_self_refine_trace(parsed["draft"], refinements)
    if strategy == COMPTRA:
        phrases = steps[0].parsed.split("\n")
        translations = [s.parsed for s in steps[1:]]
        aux = [
            AuxPair(text=ph, translation=tr, origin=KIND_COMPTRA, parent_id="reassembled")
            for ph, tr in zip(phrases, translations)
        ]
        return pairs_to_trace(aux, pair)
    raise ValueError(f"unknown strategy {strategy!r}")


STRATEGY_RUNNERS = {
    MAPS: run_maps,
    SBYS: run_sbys,
    TEAR: run_tear,
    SELF_REFINE: run_self_refine,
    COMPTRA: run_comptra,
}
