"""Command-line entry points composing the pipeline stages.

Subcommands mirror the stages: `traces` elicits reasoning traces or
decomposition pairs from a teacher, `forge` assembles training datasets,
`eval` runs the benchmark harness, `compare` tests two runs for
significance, and `score` exposes the candidate scorers directly.

Exit codes: 2 for configuration errors, 3 for an unreachable backend,
4 for a run with more than the tolerated share of failed items.
"""

from __future__ import annotations

import collections
import json
import logging
import sys
from pathlib import Path

import click
import yaml

from .core import (
    Dataset,
    JsonlError,
    LangPair,
    dump_jsonl,
    load_jsonl,
    read_jsonl,
    write_jsonl,
)
from .cot import MissingThinkTags, cot_templates, distill_trace, get_template
from .decompose import DECOMP_KINDS, AuxPair, ListParseError, decompose, translate_aux
from .evalharness import (
    EvalConfig,
    PartialFailure,
    compare_runs,
    format_verdict_table,
    load_parallel_text,
    load_report,
    run_eval,
    save_report,
)
from .forge import (
    build_cotft,
    build_cotft_max,
    build_ioft,
    build_ioft_boa,
    build_ioft_ext,
    build_ioft_max,
)
from .gateway import (
    BackendUnavailable,
    GenerationParams,
    Gateway,
    MockBackend,
    OpenAIBackend,
    ResponseCache,
)
from .metrics import SignificanceConfig
from .scorer import (
    METRIC_POLARITY,
    NATIVE_METRICS,
    REFERENCE_BASED,
    NativeScorer,
    RemoteScorer,
    RemoteUnavailable,
    ScoreRequest,
)
from .strategies import (
    STRATEGY_KINDS,
    StepFailed,
    TraceRecord,
    run_comptra,
    run_maps,
    run_sbys,
    run_self_refine,
    run_tear,
)

logger = logging.getLogger(__name__)

EXIT_BACKEND = 3
EXIT_PARTIAL = 4

TEMPLATE_IDS = tuple(t.id for t in cot_templates())


def _load_yaml_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise click.UsageError(f"cannot read config {path}: {exc}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise click.UsageError(f"config {path} must hold a mapping")
    return data


def _build_gateway(config: dict) -> Gateway:
    backend_cfg = config.get("backend")
    if not backend_cfg:
        raise click.UsageError("config needs a `backend` section")
    kind = backend_cfg.get("kind")
    if kind == "mock":
        script = backend_cfg.get("script")
        if not script:
            raise click.UsageError("mock backend needs a `script` path")
        try:
            backend = MockBackend.from_script_file(script)
        except (OSError, ValueError, JsonlError) as exc:
            raise click.UsageError(f"cannot load mock script {script}: {exc}")
    elif kind == "openai":
        base_url = backend_cfg.get("base_url")
        model = backend_cfg.get("model")
        if not base_url or not model:
            raise click.UsageError("openai backend needs `base_url` and `model`")
        backend = OpenAIBackend(
            base_url=base_url,
            model=model,
            api_key_env=backend_cfg.get("api_key_env", "MTFORGE_API_KEY"),
        )
    else:
        raise click.UsageError(f"unknown backend kind {kind!r}")
    cache = ResponseCache(config["cache_dir"]) if config.get("cache_dir") else None
    return Gateway(
        backend=backend,
        cache=cache,
        max_retries=int(config.get("max_retries", 5)),
        backoff_base=float(config.get("backoff_base", 1.0)),
        concurrency=int(config.get("concurrency", 8)),
        raw_append_nothink=bool(config.get("raw_append_nothink", False)),
    )


def _write_snapshot(out_path: Path, command: str, resolved: dict) -> None:
    """Resolved-config snapshot next to the outputs; stable across reruns."""
    snapshot = {"command": command, "resolved": resolved}
    target = out_path / "run_config.json" if out_path.is_dir() else Path(
        str(out_path) + ".config.json"
    )
    target.write_text(
        json.dumps(snapshot, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def _load_parallel(path: str) -> Dataset:
    try:
        dataset = read_jsonl(path, kind="parallel")
    except (OSError, JsonlError) as exc:
        raise click.UsageError(f"cannot load parallel data {path}: {exc}")
    if not dataset.records:
        raise click.UsageError(f"no records in {path}")
    return dataset


def _gen_params(temperature: float, max_new_tokens: int, max_thinking_tokens: int) -> GenerationParams:
    try:
        return GenerationParams(
            temperature=temperature,
            max_new_tokens=max_new_tokens,
            max_thinking_tokens=max_thinking_tokens,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))


@click.group()
@click.option("--verbose", is_flag=True, help="Debug logging to stderr.")
def main(verbose: bool) -> None:
    """Build CoT translation datasets and run the benchmark harness."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("traces")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--strategy", type=click.Choice(STRATEGY_KINDS), default=None)
@click.option("--template", "template_id", type=click.Choice(TEMPLATE_IDS), default=None)
@click.option("--decomp", "decomp_kind", type=click.Choice(DECOMP_KINDS), default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--rounds", default=3, show_default=True, help="Self-refinement rounds.")
@click.option("--n-phrases", default=3, show_default=True, help="Phrase cap for splitting.")
@click.option("--pool", "pool_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Demonstration pool (parallel JSONL) for few-shot steps.")
@click.option("--shots", default=0, show_default=True, help="Demonstrations per few-shot step.")
@click.option("--temperature", default=0.0, show_default=True)
@click.option("--max-new-tokens", default=1024, show_default=True)
@click.option("--max-thinking-tokens", default=3500, show_default=True)
def cmd_traces(
    config_path: str,
    data_path: str,
    strategy: str | None,
    template_id: str | None,
    decomp_kind: str | None,
    out_path: str,
    rounds: int,
    n_phrases: int,
    pool_path: str | None,
    shots: int,
    temperature: float,
    max_new_tokens: int,
    max_thinking_tokens: int,
) -> None:
    """Elicit strategy traces, template traces, or decomposition pairs."""
    chosen = [x for x in (strategy, template_id, decomp_kind) if x]
    if len(chosen) != 1:
        raise click.UsageError("give exactly one of --strategy, --template, --decomp")
    config = _load_yaml_config(config_path)
    gateway = _build_gateway(config)
    dataset = _load_parallel(data_path)
    params = _gen_params(temperature, max_new_tokens, max_thinking_tokens)
    demos: list = []
    if pool_path:
        pool = _load_parallel(pool_path).records
        demos = pool[:shots] if shots else pool[:5]

    rows: list[dict] = []
    failures = 0
    backend_down = False
    for record in dataset.records:
        try:
            if strategy:
                rows.append(_run_strategy(strategy, record, gateway, params, demos, rounds, n_phrases))
            elif template_id:
                trace = distill_trace(record, get_template(template_id), gateway, params)
                rows.append({"record_id": record.id, "template": template_id, "trace": trace})
            else:
                assert decomp_kind is not None
                segments = decompose(record, decomp_kind, gateway, params, n_phrases=n_phrases)
                pairs = translate_aux(segments, record, gateway, params, decomp_kind, demos)
                rows.extend(p.to_dict() for p in pairs)
            click.echo(f"done {record.id}", err=True)
        except BackendUnavailable as exc:
            failures += 1
            backend_down = True
            click.echo(f"backend failure on {record.id}: {exc}", err=True)
        except (StepFailed, MissingThinkTags, ListParseError) as exc:
            failures += 1
            if isinstance(exc.__cause__, BackendUnavailable):
                backend_down = True
                click.echo(f"backend failure on {record.id}: {exc}", err=True)
            else:
                click.echo(f"skipping {record.id}: {exc}", err=True)

    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_jsonl(out, rows)
    _write_snapshot(
        out,
        "traces",
        {
            "backend": config.get("backend"),
            "data": data_path,
            "source": chosen[0],
            "rows": len(rows),
            "failed_records": failures,
            "params": params.to_dict(),
        },
    )
    click.echo(f"wrote {len(rows)} rows to {out}")
    total = len(dataset.records)
    if failures == total and backend_down:
        sys.exit(EXIT_BACKEND)
    if failures / total > 0.10:
        click.echo(f"{failures}/{total} records failed", err=True)
        sys.exit(EXIT_PARTIAL)


def _run_strategy(
    strategy: str,
    record,
    gateway: Gateway,
    params: GenerationParams,
    demos,
    rounds: int,
    n_phrases: int,
) -> dict:
    if strategy == "maps":
        result = run_maps(record, gateway, params)
    elif strategy == "sbys":
        result = run_sbys(record, gateway, params)
    elif strategy == "tear":
        result = run_tear(record, gateway, params, demos)
    elif strategy == "self_refine":
        result = run_self_refine(record, gateway, params, rounds=rounds)
    else:
        result = run_comptra(record, gateway, params, demos, n_phrases=n_phrases)
    return result.to_dict()


def _load_trace_records(path: str) -> dict[str, TraceRecord]:
    try:
        rows = load_jsonl(path)
        return {row["record_id"]: TraceRecord.from_dict(row) for row in rows}
    except (OSError, JsonlError, KeyError, ValueError) as exc:
        raise click.UsageError(f"cannot load trace records {path}: {exc}")


def _load_trace_map(path: str) -> dict[str, str]:
    """record_id → trace text, from either template or strategy trace files."""
    try:
        rows = load_jsonl(path)
        return {row["record_id"]: row["trace"] for row in rows}
    except (OSError, JsonlError, KeyError) as exc:
        raise click.UsageError(f"cannot load traces {path}: {exc}")


def _make_scorer(config: dict, scorer_url: str | None):
    url = scorer_url or config.get("scorer_url")
    if not url:
        raise click.UsageError("selection needs a scorer service; set --scorer-url or config scorer_url")
    return RemoteScorer(
        url,
        max_retries=int(config.get("scorer_max_retries", 5)),
        backoff_base=float(config.get("scorer_backoff_base", 1.0)),
    )


@main.command("forge")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option(
    "--condition",
    type=click.Choice(["ioft", "cotft", "ioft-max", "cotft-max", "ioft-boa", "ioft-ext"]),
    required=True,
)
@click.option("--trace-source", default=None, help="Template id or strategy kind for CoT/Max builds.")
@click.option("--traces", "trace_paths", multiple=True,
              help="Trace JSONL path, or strategy=path (repeatable for ioft-boa).")
@click.option("--decomp", "decomp_kind", type=click.Choice(DECOMP_KINDS), default=None)
@click.option("--aux", "aux_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Auxiliary pair JSONL for ioft-ext.")
@click.option("--metric", default="blaser_qe", show_default=True,
              type=click.Choice(sorted(k for k in METRIC_POLARITY if k not in REFERENCE_BASED)))
@click.option("--scorer-url", default=None, help="Scoring service base URL.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def cmd_forge(
    config_path: str | None,
    data_path: str,
    condition: str,
    trace_source: str | None,
    trace_paths: tuple[str, ...],
    decomp_kind: str | None,
    aux_path: str | None,
    metric: str,
    scorer_url: str | None,
    out_path: str,
) -> None:
    """Assemble a training dataset for one fine-tuning condition."""
    config = _load_yaml_config(config_path)
    dataset = _load_parallel(data_path)
    records = dataset.records

    if condition == "ioft":
        built = build_ioft(records)
    elif condition == "cotft":
        if not trace_source or len(trace_paths) != 1:
            raise click.UsageError("cotft needs --trace-source and exactly one --traces path")
        built = build_cotft(records, _load_trace_map(trace_paths[0]), trace_source)
    elif condition == "ioft-max":
        if trace_source not in STRATEGY_KINDS or len(trace_paths) != 1:
            raise click.UsageError("ioft-max needs --trace-source <strategy> and one --traces path")
        built = build_ioft_max(
            records, _load_trace_records(trace_paths[0]), metric, _make_scorer(config, scorer_url)
        )
    elif condition == "cotft-max":
        if trace_source not in STRATEGY_KINDS or len(trace_paths) != 1:
            raise click.UsageError("cotft-max needs --trace-source <strategy> and one --traces path")
        built = build_cotft_max(
            records,
            _load_trace_records(trace_paths[0]),
            metric,
            _make_scorer(config, scorer_url),
            trace_source,
        )
    elif condition == "ioft-boa":
        if not trace_paths:
            raise click.UsageError("ioft-boa needs repeated --traces strategy=path")
        by_strategy: dict[str, dict[str, TraceRecord]] = {}
        for spec_item in trace_paths:
            if "=" not in spec_item:
                raise click.UsageError(f"--traces {spec_item!r} must look like strategy=path")
            name, _, path = spec_item.partition("=")
            if name not in STRATEGY_KINDS:
                raise click.UsageError(f"unknown strategy {name!r}")
            by_strategy[name] = _load_trace_records(path)
        built = build_ioft_boa(records, by_strategy, metric, _make_scorer(config, scorer_url))
    else:
        if not decomp_kind or not aux_path:
            raise click.UsageError("ioft-ext needs --decomp and --aux")
        try:
            aux_pairs = [AuxPair.from_dict(row) for row in load_jsonl(aux_path)]
        except (JsonlError, KeyError, ValueError) as exc:
            raise click.UsageError(f"cannot load aux pairs {aux_path}: {exc}")
        built = build_ioft_ext(records, aux_pairs, decomp_kind)

    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(built, out)
    _write_snapshot(
        out,
        "forge",
        {"condition": condition, "data": data_path, "manifest": built.manifest},
    )
    histogram = collections.Counter(
        str(r.meta.get("provenance", "ground_truth")) for r in built.records
    )
    click.echo(f"wrote {len(built.records)} rows to {out}")
    for provenance in sorted(histogram):
        click.echo(f"  provenance {provenance}: {histogram[provenance]}")


@main.command("eval")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Benchmark as parallel JSONL.")
@click.option("--src-file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--tgt-file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--benchmark", required=True, help="Benchmark split name for the report.")
@click.option("--src-lang", default=None)
@click.option("--tgt-lang", default=None)
@click.option("--model-kind", type=click.Choice(["base", "instruct", "thinking", "finetuned-io", "finetuned-cot"]),
              default="instruct", show_default=True)
@click.option("--thinking", type=click.Choice(["on", "off", "both", "n/a"]), default="n/a", show_default=True)
@click.option("--shots", default=0, show_default=True)
@click.option("--pool", "pool_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--temperature", default=0.0, show_default=True)
@click.option("--max-new-tokens", default=1024, show_default=True)
@click.option("--max-thinking-tokens", default=3500, show_default=True)
@click.option("--seed", default=12345, show_default=True, help="Bootstrap seed.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def cmd_eval(
    config_path: str,
    data_path: str | None,
    src_file: str | None,
    tgt_file: str | None,
    benchmark: str,
    src_lang: str | None,
    tgt_lang: str | None,
    model_kind: str,
    thinking: str,
    shots: int,
    pool_path: str | None,
    temperature: float,
    max_new_tokens: int,
    max_thinking_tokens: int,
    seed: int,
    out_dir: str,
) -> None:
    """Run the benchmark harness and persist a report."""
    config = _load_yaml_config(config_path)
    gateway = _build_gateway(config)
    if data_path:
        records = _load_parallel(data_path).records
        direction = records[0].pair
    elif src_file and tgt_file:
        if not src_lang or not tgt_lang:
            raise click.UsageError("text ingestion needs --src-lang and --tgt-lang")
        direction = LangPair(src=src_lang, tgt=tgt_lang)
        records = load_parallel_text(src_file, tgt_file, direction)
    else:
        raise click.UsageError("give --data or both --src-file and --tgt-file")
    if shots > 0 and not pool_path:
        raise click.UsageError("--shots > 0 needs --pool")
    pool = _load_parallel(pool_path).records if pool_path else []

    params = _gen_params(temperature, max_new_tokens, max_thinking_tokens)
    try:
        eval_config = EvalConfig(
            benchmark=benchmark,
            direction=direction,
            model_kind=model_kind,
            shots=shots,
            thinking=thinking,
            params=params,
            significance=SignificanceConfig(seed=seed),
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    partial: PartialFailure | None = None
    try:
        report = run_eval(records, eval_config, gateway, pool)
    except PartialFailure as exc:
        report = exc.report
        partial = exc
    except ValueError as exc:
        raise click.UsageError(str(exc))
    save_report(report, out)
    _write_snapshot(out, "eval", {"backend": config.get("backend"), **eval_config.to_dict()})
    for mode, result in sorted(report.modes.items()):
        for metric in result.metrics:
            click.echo(f"{mode} {metric.name} = {metric.score:.2f}  ({metric.signature})")
    if report.significance:
        click.echo(format_verdict_table(report.significance))
    if partial is not None:
        click.echo(str(partial), err=True)
        sys.exit(EXIT_PARTIAL)


@main.command("compare")
@click.option("--a", "dir_a", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--b", "dir_b", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--mode-a", default=None, help="Mode key inside report A (defaults to its only mode).")
@click.option("--mode-b", default=None)
@click.option("--n-resamples", default=300, show_default=True)
@click.option("--sample-size", default=500, show_default=True)
@click.option("--p-threshold", default=0.05, show_default=True)
@click.option("--seed", default=12345, show_default=True)
def cmd_compare(
    dir_a: str,
    dir_b: str,
    mode_a: str | None,
    mode_b: str | None,
    n_resamples: int,
    sample_size: int,
    p_threshold: float,
    seed: int,
) -> None:
    """Significance verdicts between two persisted eval runs."""
    cfg = SignificanceConfig(
        n_resamples=n_resamples, sample_size=sample_size, p_threshold=p_threshold, seed=seed
    )
    try:
        report_a = load_report(dir_a)
        report_b = load_report(dir_b)
        rows = compare_runs(report_a, report_b, cfg, mode_a=mode_a, mode_b=mode_b)
    except (OSError, ValueError, KeyError) as exc:
        raise click.UsageError(str(exc))
    click.echo(format_verdict_table(rows))


@main.command("score")
@click.option("--metric", type=click.Choice(sorted(METRIC_POLARITY)), required=True)
@click.option("--source", default=None)
@click.option("--hyp", default=None)
@click.option("--ref", default=None)
@click.option("--file", "batch_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSONL batch with src/hyp and optional ref fields.")
@click.option("--scorer-url", default=None, help="Scoring service base URL for neural metrics.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
def cmd_score(
    metric: str,
    source: str | None,
    hyp: str | None,
    ref: str | None,
    batch_path: str | None,
    scorer_url: str | None,
    config_path: str | None,
) -> None:
    """Score one hypothesis or a JSONL batch under a named metric."""
    config = _load_yaml_config(config_path)
    if batch_path:
        try:
            raw = load_jsonl(batch_path)
            items = [(row["src"], row["hyp"], row.get("ref")) for row in raw]
        except (JsonlError, KeyError, TypeError) as exc:
            raise click.UsageError(f"cannot load batch {batch_path}: {exc}")
    elif source is not None and hyp is not None:
        items = [(source, hyp, ref)]
    else:
        raise click.UsageError("give --source/--hyp or --file")
    try:
        requests = [
            ScoreRequest(source=s, hypothesis=h, metric=metric, reference=r)
            for s, h, r in items
        ]
    except ValueError as exc:
        raise click.UsageError(str(exc))
    scorer = NativeScorer() if metric in NATIVE_METRICS else _make_scorer(config, scorer_url)
    try:
        scores = scorer.score_batch(requests)
    except RemoteUnavailable as exc:
        click.echo(f"scorer unavailable: {exc}", err=True)
        sys.exit(EXIT_BACKEND)
    for score in scores:
        click.echo(f"{score:.4f}")


if __name__ == "__main__":
    main()
