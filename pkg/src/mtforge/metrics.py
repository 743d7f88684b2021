"""Native corpus/sentence BLEU and chrF++, bootstrap significance, rewards.

The implementations reproduce the reference scorer semantics for the
signatures used in reports: BLEU with the 13a tokenizer, exponential
smoothing, no effective order (corpus) and a hard zero when no n-gram
matches exist anywhere; chrF++ with 6 character orders, 2 word orders,
beta=2, whitespace removed, effective-order averaging. Scores live on
the 0..100 scale.
"""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .core import CotParseError, parse_cot_target

REFERENCE_VERSION = "2.4.2"
_LOG_ZERO = -9999999999
_PUNCTS = set(string.punctuation)

# 13a tokenizer rules: split symbols, then period/comma unless digit-adjacent,
# then dash after a digit.
_13A_RULES = (
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),
    (re.compile(r"([0-9])(-)"), r"\1 \2 "),
)


def tokenize_13a(line: str) -> list[str]:
    """mteval-v13a tokenization: unescape entities, split on symbol classes."""
    line = line.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
    if "&" in line:
        line = (
            line.replace("&quot;", '"')
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">")
        )
    line = f" {line} "
    for pattern, repl in _13A_RULES:
        line = pattern.sub(repl, line)
    return line.split()


def tokenize_char(line: str) -> list[str]:
    """Each non-space character becomes a token."""
    return [ch for ch in line if not ch.isspace()]


@lru_cache(maxsize=4)
def _load_spm(path: str):
    try:
        import sentencepiece as spm
    except ImportError as exc:  # pragma: no cover - depends on optional package
        raise RuntimeError(
            "tokenizer 'spm' needs the sentencepiece package and a model file"
        ) from exc
    proc = spm.SentencePieceProcessor()
    proc.Load(path)
    return proc


@dataclass(frozen=True)
class BleuConfig:
    """BLEU settings; the defaults encode eff:no and smooth:exp."""

    max_ngram: int = 4
    smoothing: str = "exp"  # "exp" | "none"
    effective_order: bool = False
    tokenizer: str = "13a"  # "13a" | "char" | "spm"
    spm_path: str | None = None
    case: str = "mixed"

    def __post_init__(self) -> None:
        if self.smoothing not in ("exp", "none"):
            raise ValueError(f"unknown smoothing {self.smoothing!r}")
        if self.tokenizer not in ("13a", "char", "spm"):
            raise ValueError(f"unknown tokenizer {self.tokenizer!r}")
        if self.tokenizer == "spm" and not self.spm_path:
            raise ValueError("tokenizer 'spm' requires spm_path")

    def tokenize(self, line: str) -> list[str]:
        if self.tokenizer == "13a":
            return tokenize_13a(line)
        if self.tokenizer == "char":
            return tokenize_char(line)
        return [str(t) for t in _load_spm(self.spm_path).EncodeAsPieces(line)]

    @property
    def tokenizer_name(self) -> str:
        # the SPM mode exists for the benchmark tokenizer shipped as a file
        return {"13a": "13a", "char": "char", "spm": "flores200"}[self.tokenizer]


@dataclass(frozen=True)
class ChrfConfig:
    """chrF++ settings; the defaults encode eff:yes|nc:6|nw:2|space:no."""

    char_order: int = 6
    word_order: int = 2
    beta: float = 2.0
    whitespace: bool = False
    effective_order: bool = True

    @property
    def order(self) -> int:
        return self.char_order + self.word_order


@dataclass(frozen=True)
class SignificanceConfig:
    """Paired bootstrap protocol: 300 resamples of 500 sentences, p < 0.05."""

    n_resamples: int = 300
    sample_size: int = 500
    p_threshold: float = 0.05
    seed: int = 12345

    def __post_init__(self) -> None:
        if self.n_resamples < 1:
            raise ValueError("n_resamples must be >= 1")
        if not 0.0 < self.p_threshold < 1.0:
            raise ValueError("p_threshold must be in (0, 1)")


def bleu_signature(cfg: BleuConfig | None = None, n_refs: int = 1) -> str:
    """Report signature string for a BLEU configuration."""
    cfg = cfg or BleuConfig()
    eff = "yes" if cfg.effective_order else "no"
    return (
        f"nrefs:{n_refs}|case:{cfg.case}|eff:{eff}|tok:{cfg.tokenizer_name}"
        f"|smooth:{cfg.smoothing}|version:{REFERENCE_VERSION}"
    )


def chrfpp_signature(cfg: ChrfConfig | None = None, n_refs: int = 1) -> str:
    """Report signature string for a chrF++ configuration."""
    cfg = cfg or ChrfConfig()
    eff = "yes" if cfg.effective_order else "no"
    space = "yes" if cfg.whitespace else "no"
    return (
        f"nrefs:{n_refs}|case:mixed|eff:{eff}|nc:{cfg.char_order}|nw:{cfg.word_order}"
        f"|space:{space}|version:{REFERENCE_VERSION}"
    )


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_segment_stats(hyp: str, ref: str, cfg: BleuConfig | None = None) -> list[int]:
    """Sufficient statistics for one segment.

    Layout: [sys_len, ref_len, correct_1..max_ngram, total_1..max_ngram].
    Corpus BLEU is a function of the element-wise sum of these rows.
    """
    cfg = cfg or BleuConfig()
    hyp_tokens = cfg.tokenize(hyp.rstrip())
    ref_tokens = cfg.tokenize(ref.rstrip())
    correct = [0] * cfg.max_ngram
    total = [0] * cfg.max_ngram
    for n in range(1, cfg.max_ngram + 1):
        hyp_ngrams = _ngram_counts(hyp_tokens, n)
        if not hyp_ngrams:
            break
        total[n - 1] = len(hyp_tokens) - n + 1
        ref_ngrams = _ngram_counts(ref_tokens, n)
        correct[n - 1] = sum(min(cnt, ref_ngrams[ng]) for ng, cnt in hyp_ngrams.items() if ng in ref_ngrams)
    return [len(hyp_tokens), len(ref_tokens), *correct, *total]


def bleu_from_stats(stats: Sequence[int], cfg: BleuConfig | None = None) -> float:
    """BLEU from summed sufficient statistics."""
    cfg = cfg or BleuConfig()
    k = cfg.max_ngram
    sys_len, ref_len = int(stats[0]), int(stats[1])
    correct = [int(x) for x in stats[2 : 2 + k]]
    total = [int(x) for x in stats[2 + k : 2 + 2 * k]]

    if not any(correct):
        # no n-gram matches at all: smoothing must not invent a score
        return 0.0

    precisions = [0.0] * k
    smooth_mteval = 1.0
    eff_order = k
    for n in range(1, k + 1):
        if total[n - 1] == 0:
            break
        if cfg.effective_order:
            eff_order = n
        if correct[n - 1] == 0:
            if cfg.smoothing == "exp":
                smooth_mteval *= 2.0
                precisions[n - 1] = 100.0 / (smooth_mteval * total[n - 1])
        else:
            precisions[n - 1] = 100.0 * correct[n - 1] / total[n - 1]

    if sys_len < ref_len:
        bp = math.exp(1.0 - ref_len / sys_len) if sys_len > 0 else 0.0
    else:
        bp = 1.0

    log_sum = sum(math.log(p) if p > 0.0 else _LOG_ZERO for p in precisions[:eff_order])
    return bp * math.exp(log_sum / eff_order)


def corpus_bleu(hyps: Sequence[str], refs: Sequence[str], cfg: BleuConfig | None = None) -> float:
    """Corpus BLEU on the 0..100 scale."""
    if len(hyps) != len(refs):
        raise ValueError(f"hypothesis/reference count mismatch: {len(hyps)} vs {len(refs)}")
    if not hyps:
        raise ValueError("empty input")
    cfg = cfg or BleuConfig()
    summed = None
    for hyp, ref in zip(hyps, refs):
        row = bleu_segment_stats(hyp, ref, cfg)
        summed = row if summed is None else [a + b for a, b in zip(summed, row)]
    return bleu_from_stats(summed, cfg)


def sentence_bleu(hyp: str, ref: str, cfg: BleuConfig | None = None) -> float:
    """Sentence BLEU; defaults add effective ordering on top of exp smoothing."""
    cfg = cfg or BleuConfig(effective_order=True)
    return bleu_from_stats(bleu_segment_stats(hyp, ref, cfg), cfg)


def _split_punctuation(sent: str) -> list[str]:
    """Word tokens for chrF++: one edge punctuation mark split per word."""
    tokens: list[str] = []
    for word in sent.split():
        if len(word) == 1:
            tokens.append(word)
        elif word[-1] in _PUNCTS:
            tokens.extend([word[:-1], word[-1]])
        elif word[0] in _PUNCTS:
            tokens.extend([word[0], word[1:]])
        else:
            tokens.append(word)
    return tokens


def chrf_segment_stats(hyp: str, ref: str, cfg: ChrfConfig | None = None) -> list[int]:
    """Sufficient statistics for one segment.

    Layout: [hyp_count, ref_count, match_count] per order, character orders
    first, then word orders.
    """
    cfg = cfg or ChrfConfig()
    stats: list[int] = []

    hyp_chars = hyp if cfg.whitespace else "".join(hyp.split())
    ref_chars = ref if cfg.whitespace else "".join(ref.split())
    for n in range(1, cfg.char_order + 1):
        hyp_ngrams = Counter(hyp_chars[i : i + n] for i in range(len(hyp_chars) - n + 1))
        ref_ngrams = Counter(ref_chars[i : i + n] for i in range(len(ref_chars) - n + 1))
        stats.extend(_match_stats(hyp_ngrams, ref_ngrams))

    hyp_words = _split_punctuation(hyp)
    ref_words = _split_punctuation(ref)
    for n in range(1, cfg.word_order + 1):
        stats.extend(_match_stats(_ngram_counts(hyp_words, n), _ngram_counts(ref_words, n)))
    return stats


def _match_stats(hyp_ngrams: Counter, ref_ngrams: Counter) -> list[int]:
    match = sum(min(cnt, ref_ngrams[ng]) for ng, cnt in hyp_ngrams.items() if ng in ref_ngrams)
    return [sum(hyp_ngrams.values()), sum(ref_ngrams.values()), match]


def chrfpp_from_stats(stats: Sequence[int], cfg: ChrfConfig | None = None) -> float:
    """chrF++ from summed sufficient statistics."""
    cfg = cfg or ChrfConfig()
    eps = 1e-16
    factor = cfg.beta**2
    avg_prec = avg_rec = 0.0
    eff_order = 0
    for i in range(0, len(stats), 3):
        n_hyp, n_ref, n_match = int(stats[i]), int(stats[i + 1]), int(stats[i + 2])
        if cfg.effective_order:
            if n_hyp > 0 and n_ref > 0:
                avg_prec += n_match / n_hyp
                avg_rec += n_match / n_ref
                eff_order += 1
        else:
            avg_prec += n_match / n_hyp if n_hyp > 0 else eps
            avg_rec += n_match / n_ref if n_ref > 0 else eps
            eff_order += 1
    if eff_order == 0:
        return 0.0
    avg_prec /= eff_order
    avg_rec /= eff_order
    if avg_prec + avg_rec == 0.0:
        return 0.0
    return 100.0 * (1 + factor) * avg_prec * avg_rec / (factor * avg_prec + avg_rec)


def corpus_chrfpp(hyps: Sequence[str], refs: Sequence[str], cfg: ChrfConfig | None = None) -> float:
    """Corpus chrF++ on the 0..100 scale."""
    if len(hyps) != len(refs):
        raise ValueError(f"hypothesis/reference count mismatch: {len(hyps)} vs {len(refs)}")
    if not hyps:
        raise ValueError("empty input")
    cfg = cfg or ChrfConfig()
    summed = None
    for hyp, ref in zip(hyps, refs):
        row = chrf_segment_stats(hyp, ref, cfg)
        summed = row if summed is None else [a + b for a, b in zip(summed, row)]
    return chrfpp_from_stats(summed, cfg)


def sentence_chrfpp(hyp: str, ref: str, cfg: ChrfConfig | None = None) -> float:
    """Sentence chrF++: the corpus formula applied to a single segment."""
    cfg = cfg or ChrfConfig()
    return chrfpp_from_stats(chrf_segment_stats(hyp, ref, cfg), cfg)


@dataclass(frozen=True)
class BootstrapResult:
    p_value: float
    significant: bool
    score_a: float
    score_b: float


def paired_bootstrap(
    stats_a: Sequence[Sequence[int]],
    stats_b: Sequence[Sequence[int]],
    recompute: Callable[[np.ndarray], float],
    cfg: SignificanceConfig | None = None,
) -> BootstrapResult:
    """Paired bootstrap over per-segment sufficient statistics.

    RNG contract, fixed so independent implementations can reproduce the
    exact p-value: draw the full index matrix in one call,
    ``numpy.random.default_rng(seed).integers(0, n_segments,
    size=(n_resamples, sample_size))``; row i is resample i. Both systems
    share the indices (paired draws). The p-value is the fraction of draws
    where system B fails to strictly beat system A, so ties push p toward
    non-significance; significant means p < p_threshold.
    """
    cfg = cfg or SignificanceConfig()
    if len(stats_a) == 0 or len(stats_b) == 0:
        raise ValueError("empty inputs")
    if len(stats_a) != len(stats_b):
        raise ValueError("paired bootstrap needs equal segment counts")
    arr_a = np.asarray(stats_a, dtype=np.int64)
    arr_b = np.asarray(stats_b, dtype=np.int64)
    rng = np.random.default_rng(cfg.seed)
    idx = rng.integers(0, arr_a.shape[0], size=(cfg.n_resamples, cfg.sample_size))
    sums_a = arr_a[idx].sum(axis=1)
    sums_b = arr_b[idx].sum(axis=1)
    fails = 0
    for row_a, row_b in zip(sums_a, sums_b):
        if recompute(row_b) <= recompute(row_a):
            fails += 1
    p_value = fails / cfg.n_resamples
    return BootstrapResult(
        p_value=p_value,
        significant=p_value < cfg.p_threshold,
        score_a=recompute(arr_a.sum(axis=0)),
        score_b=recompute(arr_b.sum(axis=0)),
    )


def bootstrap_compare(
    hyps_a: Sequence[str],
    hyps_b: Sequence[str],
    refs: Sequence[str],
    metric: str = "bleu",
    cfg: SignificanceConfig | None = None,
    bleu_cfg: BleuConfig | None = None,
    chrf_cfg: ChrfConfig | None = None,
) -> BootstrapResult:
    """Paired bootstrap between two hypothesis sets under a named corpus metric."""
    if metric == "bleu":
        bcfg = bleu_cfg or BleuConfig()
        stats_a = [bleu_segment_stats(h, r, bcfg) for h, r in zip(hyps_a, refs)]
        stats_b = [bleu_segment_stats(h, r, bcfg) for h, r in zip(hyps_b, refs)]
        return paired_bootstrap(stats_a, stats_b, lambda s: bleu_from_stats(s, bcfg), cfg)
    if metric == "chrfpp":
        ccfg = chrf_cfg or ChrfConfig()
        stats_a = [chrf_segment_stats(h, r, ccfg) for h, r in zip(hyps_a, refs)]
        stats_b = [chrf_segment_stats(h, r, ccfg) for h, r in zip(hyps_b, refs)]
        return paired_bootstrap(stats_a, stats_b, lambda s: chrfpp_from_stats(s, ccfg), cfg)
    raise ValueError(f"unknown metric {metric!r}")


def reward_translation(hyp: str, ref: str) -> float:
    """Mean of normalized sentence BLEU and sentence chrF++, in [0, 1]."""
    if not hyp.strip():
        return 0.0
    return (sentence_bleu(hyp, ref) / 100.0 + sentence_chrfpp(hyp, ref) / 100.0) / 2.0


def reward_format(completion: str) -> float:
    """1.0 when the completion parses as a CoT target, else 0.0."""
    try:
        parse_cot_target(completion)
    except CotParseError:
        return 0.0
    return 1.0
