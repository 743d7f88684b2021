"""Domain types, prompt/completion text formats, and JSONL persistence.

Everything downstream (trace builders, dataset forges, the eval harness)
shares these types and the exact prompt grammars defined here.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib.resources import files as _resource_files
from pathlib import Path
from typing import Any, Iterable, Sequence

logger = logging.getLogger(__name__)


@lru_cache(maxsize=None)
def load_resource(name: str) -> str:
    """Versioned template text shipped with the package, byte-exact."""
    return _resource_files("mtforge.resources").joinpath(name).read_text(encoding="utf-8")

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
FINAL_MARKER = "Final Translation"


class CotFormatError(ValueError):
    """Raised when a trace would corrupt the CoT completion grammar."""


class CotParseError(ValueError):
    """Raised when a completion does not match the CoT completion grammar."""


class JsonlError(ValueError):
    """Raised on malformed JSONL input; carries the 1-based line number."""

    def __init__(self, path: Path | str, line_no: int, reason: str) -> None:
        super().__init__(f"{path}:{line_no}: {reason}")
        self.line_no = line_no


@dataclass(frozen=True)
class LangPair:
    """A translation direction with human-readable names and benchmark codes."""

    src: str
    tgt: str
    src_code: str = ""
    tgt_code: str = ""

    def __post_init__(self) -> None:
        if not self.src or not self.tgt:
            raise ValueError("language names must be non-empty")
        if self.src == self.tgt:
            raise ValueError("source and target languages must differ")


@dataclass(frozen=True)
class ParallelRecord:
    """One source/target sentence pair of a parallel dataset."""

    id: str
    source: str
    target: str
    pair: LangPair

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("record id must be non-empty")
        if not self.source.strip() or not self.target.strip():
            raise ValueError(f"record {self.id}: source and target must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "source": self.source,
            "target": self.target,
            "src_lang": self.pair.src,
            "tgt_lang": self.pair.tgt,
            "src_code": self.pair.src_code,
            "tgt_code": self.pair.tgt_code,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ParallelRecord":
        pair = LangPair(
            src=d["src_lang"],
            tgt=d["tgt_lang"],
            src_code=d.get("src_code", ""),
            tgt_code=d.get("tgt_code", ""),
        )
        return cls(id=d["id"], source=d["source"], target=d["target"], pair=pair)


@dataclass(frozen=True)
class TrainingExample:
    """One fine-tuning row: prompt plus completion in io or cot format."""

    id: str
    prompt: str
    completion: str
    mode: str  # "io" | "cot"
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in ("io", "cot"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "io":
            if THINK_OPEN in self.completion:
                raise ValueError(f"row {self.id}: io completion contains {THINK_OPEN}")
        else:
            parse_cot_target(self.completion)
            marker_at = self.completion.index(FINAL_MARKER)
            head = self.completion[:marker_at]
            if head.count(THINK_OPEN) != 1 or head.count(THINK_CLOSE) != 1:
                raise ValueError(f"row {self.id}: cot completion must contain one think span")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "prompt": self.prompt,
            "completion": self.completion,
            "mode": self.mode,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainingExample":
        return cls(
            id=d["id"],
            prompt=d["prompt"],
            completion=d["completion"],
            mode=d["mode"],
            meta=d.get("meta", {}),
        )


@dataclass
class Dataset:
    """An ordered record collection plus the manifest needed to rebuild it."""

    records: list[Any]
    kind: str  # "parallel" | "training"
    manifest: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("parallel", "training"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        ids = [r.id for r in self.records]
        if len(ids) != len(set(ids)):
            raise ValueError("dataset ids must be unique")

    def __len__(self) -> int:
        return len(self.records)


def build_io_prompt(record: ParallelRecord) -> str:
    """Base-model translation prompt ending with an open target line.

    The source is inserted verbatim; the template never adds quoting.
    """
    p = record.pair
    return f"Translate this from {p.src} to {p.tgt}:\n{p.src}: {record.source}\n{p.tgt}: "


def build_instruct_prompt(record: ParallelRecord) -> str:
    """Instruction-following translation prompt asking for the bare translation."""
    p = record.pair
    return (
        f"Please write a high-quality {p.tgt} translation of the following "
        f"{p.src} sentence\n\n{record.source}\n\nPlease provide only the translation, "
        "nothing more."
    )


def format_cot_target(trace: str, target: str) -> str:
    """Assemble a CoT completion: think span, blank line, final-translation block."""
    if not trace:
        raise CotFormatError("trace must be non-empty")
    if not target.strip():
        raise CotFormatError("target must be non-empty")
    if THINK_CLOSE in trace:
        raise CotFormatError(f"trace contains the reserved marker {THINK_CLOSE}")
    return f"{THINK_OPEN}\n{trace}\n{THINK_CLOSE}\n\n{FINAL_MARKER}\n{target}"


def parse_cot_target(completion: str) -> tuple[str, str]:
    """Split a CoT completion into (trace, target).

    Whitespace inside the trace is preserved (only the single framing
    newlines added by format_cot_target are removed); the target is the
    whole text after the marker line, trimmed. Raises CotParseError when
    either marker is absent.
    """
    open_at = completion.find(THINK_OPEN)
    if open_at < 0:
        raise CotParseError(f"missing {THINK_OPEN}")
    close_at = completion.find(THINK_CLOSE, open_at + len(THINK_OPEN))
    if close_at < 0:
        raise CotParseError(f"missing {THINK_CLOSE}")
    trace = completion[open_at + len(THINK_OPEN) : close_at]
    if trace.startswith("\n"):
        trace = trace[1:]
    if trace.endswith("\n"):
        trace = trace[:-1]
    tail = completion[close_at + len(THINK_CLOSE) :]
    marker_at = tail.find(FINAL_MARKER)
    if marker_at < 0:
        raise CotParseError(f"missing {FINAL_MARKER!r} marker")
    target = tail[marker_at + len(FINAL_MARKER) :].strip()
    return trace, target


def fill_slots(template: str, values: dict[str, str]) -> str:
    """Replace slot tokens in one pass so inserted values are never rescanned."""
    pattern = re.compile("|".join(re.escape(k) for k in values))
    return pattern.sub(lambda m: values[m.group(0)], template)


def build_fewshot_io_prompt(
    source: str, pair: LangPair, demos: Sequence[ParallelRecord] = ()
) -> str:
    """Demonstration blocks (completed target lines) above an open request block."""
    blocks = [
        f"Translate this from {pair.src} to {pair.tgt}:\n"
        f"{pair.src}: {d.source}\n{pair.tgt}: {d.target}"
        for d in demos
    ]
    blocks.append(
        f"Translate this from {pair.src} to {pair.tgt}:\n{pair.src}: {source}\n{pair.tgt}: "
    )
    return "\n\n".join(blocks)


def _record_from_dict(d: dict[str, Any], kind: str) -> Any:
    if kind == "parallel":
        return ParallelRecord.from_dict(d)
    return TrainingExample.from_dict(d)


def _detect_kind(d: dict[str, Any]) -> str:
    return "training" if "completion" in d else "parallel"


def manifest_path(path: Path | str) -> Path:
    """Sidecar manifest location for a JSONL dataset file."""
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def dump_jsonl(path: Path | str, rows: Iterable[dict[str, Any]]) -> int:
    """Write dicts one JSON object per line; returns the row count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False))
            fh.write("\n")
            n += 1
    return n


def load_jsonl(path: Path | str) -> list[dict[str, Any]]:
    """Read one JSON object per line; malformed lines raise JsonlError."""
    path = Path(path)
    rows: list[dict[str, Any]] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise JsonlError(path, line_no, f"invalid JSON: {exc.msg}") from exc
    return rows


def write_jsonl(dataset: Dataset, path: Path | str) -> Path:
    """Persist a dataset as JSONL plus a sidecar manifest.

    Field order is fixed per record type so reruns produce byte-identical
    files. The manifest gains the row count and a content hash of the
    records file.
    """
    path = Path(path)
    rows = [r.to_dict() for r in dataset.records]
    dump_jsonl(path, rows)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    manifest = dict(dataset.manifest)
    manifest["kind"] = dataset.kind
    manifest["rows"] = len(rows)
    manifest["content_sha256"] = digest
    manifest_path(path).write_text(
        json.dumps(manifest, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return path


def read_jsonl(path: Path | str, kind: str | None = None) -> Dataset:
    """Load a dataset written by write_jsonl; kind is auto-detected if omitted."""
    path = Path(path)
    raw = load_jsonl(path)
    if kind is None:
        kind = _detect_kind(raw[0]) if raw else "parallel"
    records = []
    for line_no, d in enumerate(raw, start=1):
        try:
            records.append(_record_from_dict(d, kind))
        except (KeyError, ValueError) as exc:
            raise JsonlError(path, line_no, str(exc)) from exc
    manifest: dict[str, Any] = {}
    mpath = manifest_path(path)
    if mpath.exists():
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        manifest.pop("kind", None)
        manifest.pop("rows", None)
        manifest.pop("content_sha256", None)
    return Dataset(records=records, kind=kind, manifest=manifest)
