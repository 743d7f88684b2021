"""Tooling for building CoT-style translation fine-tuning datasets.

The package elicits reasoning traces from a teacher model (six reasoning
templates and five modular prompting strategies), assembles training
datasets for every fine-tuning condition, and evaluates thinking versus
non-thinking decoding with signature-pinned metrics and paired bootstrap
significance tests.
"""

from __future__ import annotations

from .core import (
    CotFormatError,
    CotParseError,
    Dataset,
    JsonlError,
    LangPair,
    ParallelRecord,
    TrainingExample,
    build_fewshot_io_prompt,
    build_instruct_prompt,
    build_io_prompt,
    format_cot_target,
    parse_cot_target,
    read_jsonl,
    write_jsonl,
)
from .cot import CotTemplate, build_elicitation_prompt, cot_templates, distill_dataset, distill_trace, get_template
from .decompose import AuxPair, decompose, pairs_to_trace, translate_aux
from .evalharness import (
    EvalConfig,
    EvalReport,
    bm25_retrieve,
    build_eval_prompt,
    compare_runs,
    load_report,
    run_eval,
    save_report,
)
from .forge import (
    BuildPlan,
    build_cotft,
    build_cotft_max,
    build_ioft,
    build_ioft_boa,
    build_ioft_ext,
    build_ioft_max,
)
from .gateway import (
    GenerationParams,
    GenerationResult,
    Gateway,
    MockBackend,
    OpenAIBackend,
    ResponseCache,
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
    paired_bootstrap,
    reward_format,
    reward_translation,
    sentence_bleu,
    sentence_chrfpp,
)
from .scorer import NativeScorer, RemoteScorer, ScoreRequest, select_best
from .strategies import (
    TraceRecord,
    run_comptra,
    run_maps,
    run_sbys,
    run_self_refine,
    run_tear,
)

__version__ = "0.1.0"

__all__ = [
    "AuxPair",
    "BleuConfig",
    "BuildPlan",
    "ChrfConfig",
    "CotFormatError",
    "CotParseError",
    "CotTemplate",
    "Dataset",
    "EvalConfig",
    "EvalReport",
    "GenerationParams",
    "GenerationResult",
    "Gateway",
    "JsonlError",
    "LangPair",
    "MockBackend",
    "NativeScorer",
    "OpenAIBackend",
    "ParallelRecord",
    "RemoteScorer",
    "ResponseCache",
    "ScoreRequest",
    "SignificanceConfig",
    "TraceRecord",
    "TrainingExample",
    "bleu_signature",
    "bm25_retrieve",
    "bootstrap_compare",
    "build_cotft",
    "build_cotft_max",
    "build_elicitation_prompt",
    "build_eval_prompt",
    "build_fewshot_io_prompt",
    "build_instruct_prompt",
    "build_io_prompt",
    "build_ioft",
    "build_ioft_boa",
    "build_ioft_ext",
    "build_ioft_max",
    "chrfpp_signature",
    "compare_runs",
    "corpus_bleu",
    "corpus_chrfpp",
    "cot_templates",
    "decompose",
    "distill_dataset",
    "distill_trace",
    "extract_final_translation",
    "format_cot_target",
    "get_template",
    "load_report",
    "paired_bootstrap",
    "pairs_to_trace",
    "parse_cot_target",
    "read_jsonl",
    "reward_format",
    "reward_translation",
    "run_comptra",
    "run_eval",
    "run_maps",
    "run_sbys",
    "run_self_refine",
    "run_tear",
    "save_report",
    "select_best",
    "sentence_bleu",
    "sentence_chrfpp",
    "translate_aux",
    "write_jsonl",
]
