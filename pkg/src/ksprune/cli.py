"""Operator-facing command line: prune, detect, evaluate, sim, index.

Exit codes are a stable contract: 0 success, 1 runtime failure, 2
configuration/usage error. Every report embeds the toolkit version and a
hash of the resolved configuration; identical inputs, flags and fixture
backends produce byte-identical primary outputs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import click

from . import __version__
from .corpus import CorpusError, load_manifest
from .detect import (DetectError, DetectParams, SelfCheckParams, classify)
from .embeddings import (CachingProvider, EmbeddingError, HttpEmbeddingProvider,
                         VectorFileProvider, embed_sim)
from .evaluate import (EvalError, coarse_metrics, count_ks, label_against_baseline,
                       load_generation_file, report_json, score_generations,
                       write_scores_csv)
from .generation import (GeneratorError, HttpChatGenerator,
                         RecordedFixtureGenerator, generate_bundle)
from .parallel import parallel_map
from .prune import PruneError, PruneParams, apply_prune, compute_r_all
from .simcore import (SimcoreError, SimilarityIndex, build_tfidf,
                      jaccard_sim, tf_cosine)
from . import textnorm

logger = logging.getLogger(__name__)

CONFIG_ERRORS = (CorpusError, PruneError, DetectError, EvalError, SimcoreError)


def _config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _run_config(ctx, **extra) -> dict:
    config = {"version": __version__, "command": ctx.command.name}
    config.update(extra)
    config["config_hash"] = _config_hash(config)
    return config


def _merge_config_file(ctx, config_path, values: dict) -> dict:
    """Config file supplies defaults; explicitly passed flags win."""
    if not config_path:
        return values
    try:
        file_cfg = json.loads(Path(config_path).read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"cannot read config file {config_path}: {exc}")
    merged = dict(values)
    for key, file_value in file_cfg.items():
        if key not in values:
            continue
        source = ctx.get_parameter_source(key)
        if source is not None and source.name != "COMMANDLINE":
            merged[key] = file_value
    return merged


def _make_embed_provider(backend, url, cache=None):
    if backend is None:
        return None
    if backend == "file":
        if not url:
            raise click.UsageError("--embed-backend file requires --embed-url "
                                   "pointing at a .ksev vector file")
        return VectorFileProvider(url)
    if backend == "http":
        if not url:
            raise click.UsageError("--embed-backend http requires --embed-url")
        provider = HttpEmbeddingProvider(url)
        if cache:
            return CachingProvider(provider, cache)
        return provider
    raise click.UsageError(f"unknown embed backend {backend!r}")


def _fail(exc, code: int):
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


embed_backend_option = click.option(
    "--embed-backend", type=click.Choice(["file", "http"]), default=None,
    help="Embedding provider backend (vector file or HTTP /embed endpoint).")
embed_url_option = click.option(
    "--embed-url", default=None,
    help="Vector file path (file backend) or endpoint base URL (http).")
stopwords_option = click.option(
    "--stopwords", type=click.Path(exists=True, dir_okay=False), default=None,
    help="Override the embedded stopword list with a plain-text file.")
workers_option = click.option(
    "--workers", type=int, default=lambda: os.cpu_count() or 1,
    help="Worker threads; output bytes never depend on this.")
config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False),
    default=None, help="JSON config file; explicit flags override it.")


@click.group()
@click.version_option(version=__version__, prog_name="ksprune")
@click.option("--log-level", default="WARNING", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"]))
def main(log_level):
    """High-similarity pruning and knowledge-shortcut hallucination
    detection for multi-source CQA corpora."""
    logging.basicConfig(level=getattr(logging, log_level),
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("prune")
@click.pass_context
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k1", type=int, default=50, show_default=True)
@click.option("--k2-ratio", type=float, default=0.006, show_default=True)
@click.option("--alpha1", type=float, default=0.4, show_default=True)
@click.option("--alpha2", type=float, default=0.1, show_default=True)
@click.option("--respect-protected", type=bool, default=True, show_default=True)
@click.option("--skip-bad-rows", is_flag=True, default=False)
@click.option("--out", required=True, type=click.Path())
@workers_option
@stopwords_option
@config_option
def cmd_prune(ctx, manifest, k1, k2_ratio, alpha1, alpha2, respect_protected,
              skip_bad_rows, out, workers, stopwords, config_path):
    """Prune cross-dataset high-similarity rows and write the result."""
    values = _merge_config_file(ctx, config_path, {
        "k1": k1, "k2_ratio": k2_ratio, "alpha1": alpha1, "alpha2": alpha2,
        "respect_protected": respect_protected, "workers": workers,
    })
    params = PruneParams(k1=values["k1"], k2_ratio=values["k2_ratio"],
                         alpha1=values["alpha1"], alpha2=values["alpha2"],
                         respect_protected=values["respect_protected"])
    try:
        params.validate()
        registry = load_manifest(manifest, skip_bad_rows=skip_bad_rows)
        stop = textnorm.load_stopwords(stopwords)
    except CONFIG_ERRORS as exc:
        _fail(exc, 2)
    try:
        index = SimilarityIndex(registry, stopwords=stop)
        report = compute_r_all(registry, params, index=index,
                               workers=values["workers"])
        report.config = _run_config(ctx, manifest=str(manifest),
                                    params=params.as_dict(),
                                    stopwords=stopwords or "embedded")
        out_path = apply_prune(registry, report, out)
    except CorpusError as exc:
        _fail(exc, 2)
    except (PruneError, SimcoreError, OSError) as exc:
        _fail(exc, 1)
    for entry in registry:
        n_del = len(report.deletions[entry.dataset_id])
        click.echo(f"{entry.dataset_id}: deleted {n_del} of "
                   f"{len(entry.records)} rows "
                   f"({report.reductions[entry.dataset_id]:.3%})")
    click.echo(f"pruned datasets written to {out_path}")


@main.command("detect")
@click.pass_context
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--fixtures", type=click.Path(), default=None,
              help="Recorded-bundle JSONL; enables the offline generator.")
@click.option("--queries", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Query JSONL (context/question[/refs]) for live generation.")
@click.option("--generator-url", default=None,
              help="OpenAI-compatible endpoint base URL for live generation.")
@click.option("--model", default="gpt2", show_default=True)
@click.option("--m", "m_samples", type=int, default=None,
              help="Self-check sample count [default: 5, or fixture size].")
@click.option("--alpha3", type=float, default=0.2, show_default=True)
@click.option("--sim-metric", type=click.Choice(["embed", "jaccard", "tfidf"]),
              default="embed", show_default=True)
@click.option("--k1", type=int, default=50, show_default=True)
@click.option("--kv", type=int, default=10, show_default=True)
@click.option("--eq5-literal", is_flag=True, default=False,
              help="Intersect Set(A_o) with the pool instead of S_o.")
@click.option("--temperature", type=float, default=1.0, show_default=True)
@click.option("--top-k", type=int, default=None)
@click.option("--seed", type=int, default=None,
              help="Sampling seed forwarded to the generator endpoint.")
@click.option("--out", required=True, type=click.Path())
@embed_backend_option
@embed_url_option
@workers_option
@stopwords_option
@config_option
def cmd_detect(ctx, manifest, fixtures, queries, generator_url, model, m_samples,
               alpha3, sim_metric, k1, kv, eq5_literal, temperature, top_k,
               seed, out, embed_backend, embed_url, workers, stopwords,
               config_path):
    """Classify generated answers as KS / other hallucinations or clean."""
    values = _merge_config_file(ctx, config_path, {
        "m_samples": m_samples, "alpha3": alpha3, "sim_metric": sim_metric,
        "k1": k1, "kv": kv, "eq5_literal": eq5_literal, "workers": workers,
    })
    if fixtures is None and generator_url is None:
        raise click.UsageError("either --fixtures or --generator-url is required")
    try:
        if fixtures is not None:
            generator = RecordedFixtureGenerator(fixtures)
            bundles = generator.bundles
        else:
            if queries is None:
                raise click.UsageError("--generator-url needs --queries "
                                       "with context/question rows")
            generator = HttpChatGenerator(generator_url, model,
                                          temperature=temperature, top_k=top_k,
                                          seed=seed)
            bundles = None
        registry = load_manifest(manifest)
        stop = textnorm.load_stopwords(stopwords)
        m = values["m_samples"]
        if m is None:
            m = len(bundles[0].samples) if bundles else 5
        check_params = SelfCheckParams(m=m, alpha3=values["alpha3"],
                                       sim_metric=values["sim_metric"]).validate()
        detect_params = DetectParams(k1=values["k1"], kv=values["kv"],
                                     eq5_literal=values["eq5_literal"])
        provider = _make_embed_provider(embed_backend, embed_url)
        if check_params.sim_metric == "embed" and provider is None:
            raise click.UsageError("--sim-metric embed requires --embed-backend")
    except (GeneratorError,) + CONFIG_ERRORS as exc:
        _fail(exc, 2)

    config = _run_config(ctx, manifest=str(manifest),
                         self_check=check_params.as_dict(),
                         detect=detect_params.as_dict(),
                         generator=getattr(generator, "backend", "?"),
                         embed_backend=embed_backend or "none")

    errors = []
    if bundles is None:
        bundles = []
        for lineno, obj in enumerate(_read_jsonl(queries), start=1):
            try:
                bundles.append(generate_bundle(
                    generator, obj["context"], obj["question"], m,
                    dataset_id=obj.get("dataset_id", ""),
                    row_index=int(obj.get("row_index", -1)),
                    correct_answer=obj.get("correct_answer", "")))
            except GeneratorError as exc:
                errors.append({"query_line": lineno, "error": str(exc)})

    try:
        index = SimilarityIndex(registry, stopwords=stop)

        def run_one(bundle):
            return classify(bundle, index, check_params, detect_params,
                            embed_provider=provider)

        verdicts = parallel_map(run_one, bundles, values["workers"])
    except EmbeddingError as exc:
        _fail(exc, 1)
    except CONFIG_ERRORS as exc:
        _fail(exc, 2)

    summary = _write_detect_output(out, verdicts, errors, config)
    for key, val in sorted(summary.items()):
        click.echo(f"{key}: {val}")
    if errors:
        _fail(f"{len(errors)} generation failures; error records written "
              f"alongside the verdicts", 1)


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def _write_detect_output(out, verdicts, errors, config) -> dict:
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "verdicts.jsonl", "w", encoding="utf-8") as fh:
        for verdict in verdicts:
            fh.write(verdict.to_json_line())
            fh.write("\n")
    summary = {"total": len(verdicts),
               "ks_hallucination": sum(1 for v in verdicts
                                       if v.classification == "ks_hallucination"),
               "other_hallucination": sum(1 for v in verdicts
                                          if v.classification == "other_hallucination"),
               "not_flagged": sum(1 for v in verdicts
                                  if v.classification == "not_flagged"),
               "errors": len(errors)}
    payload = {"config": config, "summary": summary}
    if errors:
        payload["error_records"] = errors
    (out_dir / "summary.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", "utf-8")
    return summary


@main.command("evaluate")
@click.pass_context
@click.option("--generations", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Generation JSONL: question/correct_answer/generated_answer.")
@click.option("--baseline", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Baseline generation file for more/less labels.")
@click.option("--verdicts", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Verdict JSONL for fine-grained KS counts.")
@click.option("--no-embed", is_flag=True, default=False)
@click.option("--out", required=True, type=click.Path())
@embed_backend_option
@embed_url_option
@stopwords_option
@config_option
def cmd_evaluate(ctx, generations, baseline, verdicts, no_embed, out,
                 embed_backend, embed_url, stopwords, config_path):
    """Coarse metrics, optional baseline labels and KS-hallucination counts."""
    try:
        stop = textnorm.load_stopwords(stopwords)
        provider = None if no_embed else _make_embed_provider(embed_backend, embed_url)
        rows, skipped = load_generation_file(generations)
        score_generations(rows, embed_provider=provider, stopwords=stop)
        metrics = coarse_metrics(rows)
        labels = None
        if baseline is not None:
            base_rows, _ = load_generation_file(baseline)
            score_generations(base_rows, embed_provider=provider, stopwords=stop)
            labels = label_against_baseline(base_rows, rows)
        ks = count_ks(verdicts) if verdicts is not None else None
    except EmbeddingError as exc:
        _fail(exc, 1)
    except CONFIG_ERRORS as exc:
        _fail(exc, 2)

    config = _run_config(ctx, generations=str(generations),
                         baseline=str(baseline) if baseline else None,
                         no_embed=no_embed, skipped_rows=skipped)
    report = report_json(rows, metrics, labels=labels, ks_counts=ks,
                         config=config)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", "utf-8")
    write_scores_csv(rows, out_dir / "scores.csv")
    for metric, cell in sorted(metrics.items()):
        click.echo(f"{metric}: {cell['count']} / {cell['mean']:.5f}")
    if labels:
        for metric, hist in sorted(labels["histogram"].items()):
            click.echo(f"{metric} labels: more={hist['more']} "
                       f"less={hist['less']} equal={hist['equal']}")
    if ks:
        click.echo(f"ks_hallucination: {ks['ks_hallucination']} "
                   f"other: {ks['other_hallucination']} "
                   f"not_flagged: {ks['not_flagged']}")


@main.command("sim")
@click.pass_context
@click.option("--a", "text_a", required=True)
@click.option("--b", "text_b", required=True)
@click.option("--metric", type=click.Choice(["all", "jaccard", "tfidf", "embed"]),
              default="all", show_default=True)
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Fit the TF-IDF model on this text file (one doc per "
                   "line). Without it the tfidf channel degrades to plain "
                   "tf cosine, since idf over two documents is always zero.")
@embed_backend_option
@embed_url_option
@stopwords_option
def cmd_sim(ctx, text_a, text_b, metric, corpus, embed_backend, embed_url,
            stopwords):
    """Print similarity scores for two texts."""
    try:
        stop = textnorm.load_stopwords(stopwords)
        scores = {}
        if metric in ("all", "jaccard"):
            scores["jaccard"] = jaccard_sim(
                textnorm.content_set(textnorm.norm_tokens(text_a), stopwords=stop),
                textnorm.content_set(textnorm.norm_tokens(text_b), stopwords=stop))
        if metric in ("all", "tfidf"):
            if corpus:
                docs = [line for line in
                        Path(corpus).read_text("utf-8").splitlines() if line]
                model = build_tfidf(docs)
                scores["tfidf"] = model.cosine_texts(text_a, text_b)
            else:
                scores["tfidf"] = tf_cosine(text_a, text_b)
        provider = _make_embed_provider(embed_backend, embed_url)
        if metric == "embed" and provider is None:
            raise click.UsageError("--metric embed requires --embed-backend")
        if provider is not None and metric in ("all", "embed"):
            scores["embed"] = embed_sim(provider, text_a, text_b)
    except EmbeddingError as exc:
        _fail(exc, 1)
    except CONFIG_ERRORS as exc:
        _fail(exc, 2)
    for name in ("jaccard", "tfidf", "embed"):
        if name in scores:
            click.echo(f"{name}\t{scores[name]:.5f}")


@main.command("index")
@click.pass_context
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path())
@embed_backend_option
@embed_url_option
@workers_option
@stopwords_option
def cmd_index(ctx, manifest, out, embed_backend, embed_url, workers, stopwords):
    """Build and cache the TF-IDF model, postings and embedding vectors."""
    try:
        registry = load_manifest(manifest)
        stop = textnorm.load_stopwords(stopwords)
        index = SimilarityIndex(registry, stopwords=stop)
    except CONFIG_ERRORS as exc:
        _fail(exc, 2)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _run_config(ctx, manifest=str(manifest),
                         embed_backend=embed_backend or "none")
    model_obj = {
        "config": config,
        "n_docs": index.model.n_docs,
        "df": {t: index.model.df[t] for t in sorted(index.model.df)},
        "idf": {t: index.model.idf[t] for t in sorted(index.model.idf)},
    }
    (out_dir / "tfidf_model.json").write_text(
        json.dumps(model_obj, sort_keys=True, ensure_ascii=False) + "\n", "utf-8")
    meta = {
        "config": config,
        "datasets": {e.dataset_id: {
            "rows": len(e.records),
            "jaccard_vocabulary": len(index.datasets[e.dataset_id].jac_postings),
            "tfidf_vocabulary": len(index.datasets[e.dataset_id].tfidf_postings),
        } for e in registry},
    }
    (out_dir / "index_meta.json").write_text(
        json.dumps(meta, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        "utf-8")
    if embed_backend is not None:
        try:
            inner = _make_embed_provider(embed_backend, embed_url)
            cached = CachingProvider(inner, out_dir / "embeddings.ksev")
            texts = []
            for entry in registry:
                texts.extend(index.datasets[entry.dataset_id].row_texts)
            cached.embed(texts)
            cached.flush()
            click.echo(f"embedding cache: {len(texts)} texts")
        except EmbeddingError as exc:
            _fail(exc, 1)
    click.echo(f"index artifacts written to {out_dir}")


if __name__ == "__main__":
    main()
