"""Command-line pipeline: one subcommand per stage, artifacts on disk.

Every stage writes a deterministic artifact plus a ``<artifact>.meta.json``
sidecar holding the resolved config echo, the run id and the only
non-deterministic value (the timestamp). Rerunning a stage from the same
config and inputs reproduces the artifact byte for byte.

Failures exit nonzero after printing a single machine-parsable line to
stderr: ``{"error": "<class>", "message": "<detail>"}``.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import classifier as clf
from . import generator as gen
from . import hardness as hard
from . import metrics as met
from . import promptkit as pk
from .config import PipelineConfig, load_config
from .corpus import Document, load_corpus
from .errors import GenerationError, ScorerError, XaiqaError
from .explainer import explain, read_matrices, write_matrices
from .jsonl import read_jsonl, require_fields, write_jsonl


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _ensure_parent(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _out_path(args: argparse.Namespace, config: PipelineConfig, default_name: str) -> Path:
    if getattr(args, "out", None):
        return _ensure_parent(Path(args.out))
    return _ensure_parent(Path(config.paths["output_dir"]) / default_name)


def _write_sidecar(path: Path, command: str, config: PipelineConfig, run_id: str, extra: dict[str, Any] | None = None) -> None:
    meta: dict[str, Any] = {
        "run_id": run_id,
        "command": command,
        "config": config.echo(),
        "created_at": _utc_now(),
    }
    if extra:
        meta.update(extra)
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")


def _load_corpus_from(args: argparse.Namespace, config: PipelineConfig):
    corpus_path = getattr(args, "corpus", None) or config.paths["corpus"]
    vocab_path = getattr(args, "vocab", None) or config.paths["vocab"]
    return load_corpus(corpus_path, vocab_path)


def _build_scorer(args: argparse.Namespace, vocab_codes: tuple[str, ...]):
    endpoint = getattr(args, "endpoint", None)
    if endpoint:
        scorer = clf.RemoteScorer(endpoint)
    else:
        model_path = getattr(args, "model", None)
        if not model_path:
            raise ScorerError("either --model or --endpoint is required")
        scorer = clf.LinearModelParams.load(model_path)
    if tuple(scorer.labels) != vocab_codes:
        raise ScorerError("scorer label order does not match the vocabulary")
    return scorer


# -- subcommands ---------------------------------------------------------------


def cmd_train_classifier(args: argparse.Namespace, config: PipelineConfig) -> int:
    docs, vocab, assignments = _load_corpus_from(args, config)
    model = clf.train_linear(docs, vocab, assignments, config.train_config())
    out = _out_path(args, config, "model.json")
    model.save(out)
    quality = clf.evaluate_classifier(model, docs, assignments, vocab)
    run_id = gen.make_run_id("train-classifier", config.echo())
    _write_sidecar(
        out,
        "train-classifier",
        config,
        run_id,
        extra={"classifier_metrics": {"micro_ap": quality.micro_ap, "macro_ap": quality.macro_ap}},
    )
    print(f"trained model -> {out} (micro_ap={quality.micro_ap:.4f} macro_ap={quality.macro_ap:.4f})")
    return 0


def cmd_explain(args: argparse.Namespace, config: PipelineConfig) -> int:
    docs, vocab, _ = _load_corpus_from(args, config)
    scorer = _build_scorer(args, vocab.codes)
    cfg = config.msp_config()

    usable = [d for d in docs if d.sentences]
    skipped = [d.doc_id for d in docs if not d.sentences]
    if skipped:
        print(f"skipping {len(skipped)} document(s) with no sentences", file=sys.stderr)

    def one(doc: Document):
        return explain(doc, scorer, vocab.codes, cfg)

    workers = config.workers
    if workers == 1 or len(usable) < 2:
        matrices = [one(d) for d in usable]
    else:
        max_workers = workers if workers > 0 else None
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            matrices = list(pool.map(one, usable))

    out = _out_path(args, config, "matrices.jsonl")
    write_matrices(out, matrices, config_echo=config.echo()["explainer"])
    run_id = gen.make_run_id("explain", config.echo())
    _write_sidecar(out, "explain", config, run_id, extra={"documents": len(matrices), "skipped": skipped})
    print(f"explained {len(matrices)} document(s) -> {out}")
    return 0


def cmd_generate(args: argparse.Namespace, config: PipelineConfig) -> int:
    docs, vocab, assignments = _load_corpus_from(args, config)
    section = config.sections["generation"]
    method = args.method or str(section["method"])
    template = args.template or str(section["template"])
    if method == "xaiqa":
        if not args.importance:
            raise GenerationError("generate --method xaiqa requires --importance")
        matrices = read_matrices(args.importance)
        pairs = gen.generate_xaiqa(docs, vocab, assignments, matrices, template)
    elif method == "cosine":
        embedder = _make_embedder(config)
        pairs = gen.generate_cosine(docs, vocab, assignments, embedder, template)
    elif method == "random":
        pairs = gen.generate_random(docs, vocab, assignments, int(section["seed"]), template)
    else:
        raise GenerationError(f"unknown generation method {method!r}")
    run = gen.GenerationRun(gen.make_run_id(method, config.echo()), method, config.echo())
    out = _out_path(args, config, f"pairs_{method}.jsonl")
    gen.write_pairs(out, pairs, run)
    _write_sidecar(out, "generate", config, run.run_id, extra={"method": method, "pairs": len(pairs)})
    print(f"generated {len(pairs)} pair(s) via {method} -> {out}")
    return 0


def _make_embedder(config: PipelineConfig):
    from .embedder import build_embedder

    return build_embedder(config.embedder_config())


def cmd_postprocess(args: argparse.Namespace, config: PipelineConfig) -> int:
    docs, _, _ = _load_corpus_from(args, config)
    pairs = gen.read_pairs(args.pairs)
    embedder = _make_embedder(config)
    processed = gen.postprocess(pairs, docs, embedder)
    run = gen.GenerationRun(gen.make_run_id("xaiqa_pp", config.echo()), "xaiqa_pp", config.echo())
    out = _out_path(args, config, "pairs_pp.jsonl")
    gen.write_pairs(out, processed, run)
    _write_sidecar(out, "postprocess", config, run.run_id, extra={"pairs": len(processed)})
    print(f"post-processed {len(processed)} pair(s) -> {out}")
    return 0


def cmd_select(args: argparse.Namespace, config: PipelineConfig) -> int:
    pairs = gen.read_pairs(args.pairs)
    r = args.r if args.r is not None else int(config.sections["generation"]["top_r"])
    selected = gen.select_top_r(pairs, r)
    run_id = gen.make_run_id(f"select:{r}", config.echo())
    out = _out_path(args, config, "pairs_selected.jsonl")
    gen.write_pairs(out, selected, gen.GenerationRun(run_id, "select", config.echo()))
    _write_sidecar(out, "select", config, run_id, extra={"r": r, "pairs": len(selected)})
    print(f"selected top {len(selected)} of {len(pairs)} pair(s) -> {out}")
    return 0


def cmd_mix(args: argparse.Namespace, config: PipelineConfig) -> int:
    base = gen.read_pairs(args.base)
    synthetic = gen.read_pairs(args.synthetic)
    try:
        b, s = (int(part) for part in args.ratio.split(":"))
    except ValueError:
        raise GenerationError(f"ratio must look like B:S, got {args.ratio!r}")
    seed = int(config.sections["generation"]["seed"])
    blended = gen.mix(base, synthetic, (b, s), seed)
    run_id = gen.make_run_id(f"mix:{b}:{s}", config.echo())
    out = _out_path(args, config, "pairs_mixed.jsonl")
    gen.write_pairs(out, blended, gen.GenerationRun(run_id, "mix", config.echo()))
    _write_sidecar(out, "mix", config, run_id, extra={"ratio": [b, s], "pairs": len(blended)})
    print(f"mixed {len(base)} base + {len(blended) - len(base)} synthetic pair(s) -> {out}")
    return 0


def cmd_qclo(args: argparse.Namespace, config: PipelineConfig) -> int:
    docs, _, _ = _load_corpus_from(args, config)
    by_id = {d.doc_id: d for d in docs}
    gold = met.read_gold(args.gold)
    cfg = config.qclo_config()
    records: list[hard.HardnessRecord] = []
    excluded: list[dict[str, str]] = []
    for item in gold:
        doc = by_id.get(item.context_doc_id)
        if doc is None:
            raise GenerationError(f"gold item {item.item_id!r} references unknown document {item.context_doc_id!r}")
        try:
            value = hard.qclo(item.question, doc.text, cfg)
        except XaiqaError as exc:
            excluded.append({"item_id": item.item_id, "reason": str(exc)})
            continue
        records.append(hard.HardnessRecord(item_id=item.item_id, qclo=value))
    out = _out_path(args, config, "hardness.jsonl")
    write_jsonl(out, ({"item_id": r.item_id, "qclo": r.qclo} for r in records))
    run_id = gen.make_run_id("qclo", config.echo())
    _write_sidecar(out, "qclo", config, run_id, extra={"items": len(records), "excluded": excluded})
    if excluded:
        print(f"excluded {len(excluded)} item(s) with empty filtered questions", file=sys.stderr)
    print(f"computed qclo for {len(records)} item(s) -> {out}")
    return 0


def _read_hardness(path: str | Path) -> list[hard.HardnessRecord]:
    records = []
    for lineno, obj in read_jsonl(path):
        require_fields(path, lineno, obj, ("item_id", "qclo"))
        records.append(hard.HardnessRecord(item_id=str(obj["item_id"]), qclo=float(obj["qclo"])))
    return records


def cmd_subset(args: argparse.Namespace, config: PipelineConfig) -> int:
    records = _read_hardness(args.hardness)
    subset = hard.hardest_subset(records, args.fraction)
    out = _out_path(args, config, "hardness_subset.jsonl")
    write_jsonl(out, ({"item_id": r.item_id, "qclo": r.qclo} for r in subset))
    run_id = gen.make_run_id(f"subset:{args.fraction}", config.echo())
    boundary = max((r.qclo for r in subset), default=float("nan"))
    _write_sidecar(out, "subset", config, run_id, extra={"fraction": args.fraction, "items": len(subset), "boundary_qclo": boundary})
    print(f"hardest {args.fraction:.0%}: {len(subset)} item(s), boundary qclo {boundary:.4f} -> {out}")
    return 0


def _strata_from(args: argparse.Namespace, config: PipelineConfig) -> dict[str, Sequence[str]]:
    if not getattr(args, "hardness", None):
        return {}
    records = _read_hardness(args.hardness)
    fractions = (
        [float(f) for f in args.fractions.split(",")]
        if getattr(args, "fractions", None)
        else [float(f) for f in config.sections["hardness"]["fractions"]]
    )
    strata: dict[str, Sequence[str]] = {}
    for fraction in fractions:
        subset = hard.hardest_subset(records, fraction)
        strata[f"hardest_{fraction:g}"] = [r.item_id for r in subset]
    return strata


def cmd_eval(args: argparse.Namespace, config: PipelineConfig) -> int:
    gold = met.read_gold(args.gold)
    predictions = met.read_predictions(args.pred)
    section = config.sections["metrics"]
    report = met.evaluate_predictions(
        gold,
        predictions,
        strata=_strata_from(args, config),
        iterations=int(section["bootstrap_iterations"]),
        level=float(section["bootstrap_level"]),
        seed=int(section["seed"]),
    )
    out = _out_path(args, config, "eval_report.json")
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    table = met.render_table(report)
    table_path = Path(str(out).removesuffix(".json") + ".txt")
    table_path.write_text(table + "\n", encoding="utf-8")
    run_id = gen.make_run_id("eval", config.echo())
    _write_sidecar(out, "eval", config, run_id, extra={"items": len(report.per_item)})
    print(table)
    return 0


def cmd_stats(args: argparse.Namespace, config: PipelineConfig) -> int:
    records = met.read_annotations(args.annotations)
    annotators = sorted({r.annotator_id for r in records})
    if len(annotators) != 2:
        raise met.MetricsError(f"stats needs exactly two annotators, found {len(annotators)}")
    by_pair: dict[str, dict[str, met.AnnotationRecord]] = {}
    for record in records:
        by_pair.setdefault(record.pair_id, {})[record.annotator_id] = record
    pair_ids = sorted(pid for pid, recs in by_pair.items() if len(recs) == 2)

    agreement: dict[str, dict[str, float]] = {}
    for field_name in ("correct", "lexical", "abbreviation", "negation"):
        a = [getattr(by_pair[p][annotators[0]], field_name) for p in pair_ids]
        b = [getattr(by_pair[p][annotators[1]], field_name) for p in pair_ids]
        agreement[field_name] = {
            "agreement": met.raw_agreement(a, b),
            "kappa": met.cohen_kappa(a, b),
        }

    combined = met.combine_annotations(records)
    counts = met.count_by_method(combined)

    outcomes = ("semantic", "lexical", "abbreviation")
    indicator: dict[str, dict[str, list[float]]] = {o: {} for o in outcomes}
    for item in combined:
        for outcome in outcomes:
            indicator[outcome].setdefault(item.method, []).append(float(getattr(item, outcome)))
    welch: dict[str, dict[str, Any]] = {o: {} for o in outcomes}
    methods = sorted(counts)
    for outcome in outcomes:
        for i, m1 in enumerate(methods):
            for m2 in methods[i + 1 :]:
                key = f"{m1}_vs_{m2}"
                try:
                    result = met.welch_t_test(indicator[outcome][m1], indicator[outcome][m2])
                    welch[outcome][key] = {"t": result.t, "df": result.df, "p_value": result.p_value}
                except XaiqaError as exc:
                    welch[outcome][key] = {"error": str(exc)}

    payload = {"agreement": agreement, "methods": counts, "welch": welch}
    out = _out_path(args, config, "stats.json")
    out.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    run_id = gen.make_run_id("stats", config.echo())
    _write_sidecar(out, "stats", config, run_id, extra={"pairs": len(pair_ids)})
    print(f"annotation statistics for {len(pair_ids)} pair(s) -> {out}")
    return 0


def cmd_prompt_build(args: argparse.Namespace, config: PipelineConfig) -> int:
    docs, _, _ = _load_corpus_from(args, config)
    by_id = {d.doc_id: d for d in docs}
    pairs = gen.read_pairs(args.pairs)
    gold = met.read_gold(args.gold)
    section = config.sections["prompt"]
    num_examples = args.num_examples if args.num_examples is not None else int(section["num_examples"])
    radius = args.radius if args.radius is not None else int(section["window_radius"])
    budget = config.prompt_budget()

    rng = np.random.default_rng(int(section["seed"]))
    if num_examples > 0 and pairs:
        chosen = sorted(rng.choice(len(pairs), size=min(num_examples, len(pairs)), replace=False).tolist())
    else:
        chosen = []
    examples = []
    for idx in chosen:  # ascending = rank order, so trimming drops the weakest
        pair = pairs[idx]
        doc = by_id.get(pair.doc_id)
        if doc is None:
            raise GenerationError(f"pair references unknown document {pair.doc_id!r}")
        examples.append(pk.make_example(f"{pair.doc_id}#{pair.label_code}", doc, pair, radius))

    out_dir = Path(args.out_dir) if args.out_dir else Path(config.paths["output_dir"]) / "prompts"
    out_dir.mkdir(parents=True, exist_ok=True)
    manifests = []
    for item in gold:
        doc = by_id.get(item.context_doc_id)
        if doc is None:
            raise GenerationError(f"gold item {item.item_id!r} references unknown document {item.context_doc_id!r}")
        prompt, manifest = pk.assemble_prompt(examples, item.question, doc.text, budget, query_id=item.item_id)
        (out_dir / f"{item.item_id}.prompt.txt").write_text(prompt, encoding="utf-8")
        manifests.append(manifest)
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifests, indent=2, sort_keys=True), encoding="utf-8")
    run_id = gen.make_run_id("prompt-build", config.echo())
    _write_sidecar(manifest_path, "prompt-build", config, run_id, extra={"queries": len(manifests), "examples": len(examples)})
    print(f"built {len(manifests)} prompt(s) with {len(examples)} example(s) -> {out_dir}")
    return 0


def cmd_parse_responses(args: argparse.Namespace, config: PipelineConfig) -> int:
    predictions = []
    failures = 0
    for lineno, obj in read_jsonl(args.responses):
        require_fields(args.responses, lineno, obj, ("query_id", "raw"))
        prediction = pk.parse_model_answer(str(obj["raw"]), item_id=str(obj["query_id"]), recover_unclosed=args.recover_unclosed)
        failures += int(prediction.parse_failed)
        predictions.append(prediction)
    out = _out_path(args, config, "predictions.jsonl")
    met.write_predictions(out, predictions)
    run_id = gen.make_run_id("parse-responses", config.echo())
    _write_sidecar(out, "parse-responses", config, run_id, extra={"responses": len(predictions), "parse_failures": failures})
    print(f"parsed {len(predictions)} response(s) ({failures} abstention(s)) -> {out}")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xaiqa", description="Synthetic QA pair generation and evaluation pipeline")
    parser.add_argument("--config", help="pipeline config file (JSON)")
    parser.add_argument("--seed", type=int, help="override every section seed")
    parser.add_argument("--workers", type=int, help="worker threads for parallel stages (0 = auto)")
    parser.add_argument("--output-dir", help="base directory for default artifact paths")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, **kwargs) -> argparse.ArgumentParser:
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        return p

    p = add("train-classifier", cmd_train_classifier, help="fit the builtin TF-IDF linear model")
    p.add_argument("--corpus")
    p.add_argument("--vocab")
    p.add_argument("--out")

    p = add("explain", cmd_explain, help="compute sentence-by-label importance matrices")
    p.add_argument("--corpus")
    p.add_argument("--vocab")
    p.add_argument("--model")
    p.add_argument("--endpoint")
    p.add_argument("--out")

    p = add("generate", cmd_generate, help="generate QA pairs (xaiqa | cosine | random)")
    p.add_argument("--method", choices=["xaiqa", "cosine", "random"])
    p.add_argument("--corpus")
    p.add_argument("--vocab")
    p.add_argument("--importance")
    p.add_argument("--template")
    p.add_argument("--out")

    p = add("postprocess", cmd_postprocess, help="re-split answers and keep the most question-similar segment")
    p.add_argument("--pairs", required=True)
    p.add_argument("--corpus")
    p.add_argument("--vocab")
    p.add_argument("--out")

    p = add("select", cmd_select, help="keep the top-r pairs by score")
    p.add_argument("--pairs", required=True)
    p.add_argument("--r", type=int)
    p.add_argument("--out")

    p = add("mix", cmd_mix, help="blend base and synthetic pairs at a B:S ratio")
    p.add_argument("--base", required=True)
    p.add_argument("--synthetic", required=True)
    p.add_argument("--ratio", required=True)
    p.add_argument("--out")

    p = add("qclo", cmd_qclo, help="compute question-context lexical overlap for gold items")
    p.add_argument("--gold", required=True)
    p.add_argument("--corpus")
    p.add_argument("--vocab")
    p.add_argument("--out")

    p = add("subset", cmd_subset, help="take the hardest fraction of items by qclo")
    p.add_argument("--hardness", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--out")

    p = add("eval", cmd_eval, help="score predictions against gold answers")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--hardness")
    p.add_argument("--fractions")
    p.add_argument("--out")

    p = add("stats", cmd_stats, help="annotation agreement, combined counts and Welch tests")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out")

    p = add("prompt-build", cmd_prompt_build, help="emit few-shot prompts and a manifest")
    p.add_argument("--pairs", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--corpus")
    p.add_argument("--vocab")
    p.add_argument("--num-examples", type=int)
    p.add_argument("--radius", type=int)
    p.add_argument("--out-dir")

    p = add("parse-responses", cmd_parse_responses, help="turn raw model responses into predictions")
    p.add_argument("--responses", required=True)
    p.add_argument("--recover-unclosed", action="store_true")
    p.add_argument("--out")

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.override_seed(args.seed)
        if args.workers is not None:
            config.sections["runtime"]["workers"] = args.workers
        if args.output_dir is not None:
            config.sections["paths"]["output_dir"] = args.output_dir
        return args.func(args, config)
    except XaiqaError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
