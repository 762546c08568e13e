"""Command line driver for the playtest pipeline.

Each stage reads its inputs from the artifact tree, talks to the
configured endpoints through the gateway, and writes one summary file
recording input digests. Re-running a stage whose inputs and config
are unchanged is a no-op unless --force is given. Every endpoint can
be pointed at ``mock:offline`` to run the entire pipeline
deterministically with no network.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Mapping

import yaml

from . import cot, evaluate, personas, reviews, rulebook, simulate
from .datamodel import (
    StructuredRulebook,
    UNASSIGNED,
    load_records,
    save_records,
)
from .errors import ConfigError, PlaytestError
from .gateway import EndpointConfig, Gateway, MockTransport, chat_request
from .offline import OfflineResponder
from .sampling import stratified_split

logger = logging.getLogger(__name__)

STAGES = (
    "structure", "rectify", "annotate", "select", "embed", "cluster",
    "profile", "label", "synthesize", "export-sft", "split", "simulate",
    "evaluate", "report",
)

EMBED_BATCH = 64

DEFAULT_CONFIG: dict[str, Any] = {
    "root_seed": 7,
    "workdir": "artifacts",
    "data": {
        "games": "data/games.jsonl",
        "rulebooks_raw": "data/rulebooks",
        "reviews": "data/reviews.jsonl",
    },
    "endpoint": {
        "base_url": "mock:offline",
        "model_name": "sim-model",
        "temperature": 0.7,
    },
    "judge_endpoint": {
        "base_url": "mock:offline",
        "model_name": "judge-model",
        "temperature": 0.0,
    },
    "teacher_endpoint": {
        "base_url": "mock:offline",
        "model_name": "teacher-model",
        "temperature": 0.7,
    },
    "embed_endpoint": {
        "base_url": "mock:offline",
        "model_name": "embed-model",
    },
    "selection": {
        "retention_ratio": 0.08,
        "min_per_game": 50,
        "max_per_game": 100,
        "quality_threshold": 4,
        "batch_size": 10,
    },
    "clustering": {"k": 15},
    "labeling": {"votes": 3, "batch_size": 10},
    "profiling": {"per_cluster": 20},
    "sft": {"max_attempts": 3},
    "simulation": {"n_runs": 100, "variant": "Full"},
    "evaluation": {"fact_check": True, "diversity": True, "opinion_recovery": True},
    "split": {"per_stratum": 1},
}


def deep_update(base: dict, override: Mapping) -> dict:
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(base.get(key), dict):
            deep_update(base[key], value)
        else:
            base[key] = value
    return base


def load_config(path: str | None) -> dict:
    config = json.loads(json.dumps(DEFAULT_CONFIG))
    if path is None:
        return config
    file_path = Path(path)
    if not file_path.exists():
        raise ConfigError(f"config file not found: {file_path}")
    loaded = yaml.safe_load(file_path.read_text(encoding="utf-8"))
    if loaded is None:
        return config
    if not isinstance(loaded, dict):
        raise ConfigError(f"config root must be a mapping, got {type(loaded).__name__}")
    return deep_update(config, loaded)


def _endpoint(config: dict, section: str) -> EndpointConfig:
    block = config.get(section)
    if not isinstance(block, Mapping):
        raise ConfigError(f"missing endpoint section {section!r}")
    allowed = {"base_url", "model_name", "api_key_env", "temperature",
               "max_parallel", "max_retries", "timeout"}
    unknown = sorted(set(block) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {unknown}")
    return EndpointConfig(**dict(block))


def path_digest(path: Path) -> str:
    """Content hash of a file, or of a directory's (name, hash) pairs."""
    if path.is_dir():
        h = hashlib.sha256()
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(str(child.relative_to(path)).encode("utf-8"))
            h.update(hashlib.sha256(child.read_bytes()).digest())
        return h.hexdigest()
    return hashlib.sha256(path.read_bytes()).hexdigest()


def config_digest(config: dict, stage: str, variant: str) -> str:
    payload = json.dumps({"config": config, "stage": stage, "variant": variant},
                         sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Context:
    """Everything a stage needs: effective config, resolved paths and
    lazily-built gateways."""

    def __init__(self, config: dict, force: bool = False, variant: str | None = None):
        self.config = config
        self.force = force
        self.workdir = Path(config["workdir"])
        self.variant = variant or config["simulation"]["variant"]
        if self.variant not in simulate.VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; "
                              f"expected one of {simulate.VARIANTS}")

    def data_path(self, key: str) -> Path:
        return Path(self.config["data"][key])

    def artifact(self, *parts: str) -> Path:
        return self.workdir.joinpath(*parts)

    def gateway(self, audit_name: str) -> Gateway:
        audit_path = self.artifact("audit", f"{audit_name}.jsonl")
        audit_path.parent.mkdir(parents=True, exist_ok=True)
        audit_path.unlink(missing_ok=True)
        transport = None
        urls = {self.config[s]["base_url"]
                for s in ("endpoint", "judge_endpoint", "teacher_endpoint",
                          "embed_endpoint")}
        mocked = [u for u in urls if u.startswith("mock:")]
        if mocked:
            if len(mocked) != len(urls):
                logger.warning("mixing mock and real endpoints is unsupported; "
                               "all traffic goes to the offline responder")
            transport = MockTransport(OfflineResponder())
        return Gateway(transport=transport, audit_path=audit_path)

    def seed(self) -> int:
        return int(self.config["root_seed"])


# -- artifact load/save helpers -------------------------------------


def _load_rulebooks(ctx: Context) -> dict[str, StructuredRulebook]:
    path = ctx.artifact("rulebooks", "rectified.jsonl")
    if not path.exists():
        path = ctx.artifact("rulebooks", "structured.jsonl")
    books = load_records(path, "rulebook")
    return {b.game_id: b for b in books}


def _rulebook_input(ctx: Context) -> Path:
    rectified = ctx.artifact("rulebooks", "rectified.jsonl")
    return rectified if rectified.exists() else ctx.artifact("rulebooks", "structured.jsonl")


def _load_embeddings(path: Path) -> dict[str, list[float]]:
    vectors: dict[str, list[float]] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        vectors[row["review_id"]] = [float(x) for x in row["vector"]]
    return vectors


def _write_kv_csv(path: Path, rows: list[tuple[str, Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key, value in rows:
            writer.writerow([key, "" if value is None else value])


def _split_games(ctx: Context) -> list[str] | None:
    path = ctx.artifact("splits", "test_games.json")
    if not path.exists():
        return None
    payload = json.loads(path.read_text(encoding="utf-8"))
    return list(payload["games"])


# -- stages ----------------------------------------------------------


def stage_structure(ctx: Context) -> dict:
    raw_dir = ctx.data_path("rulebooks_raw")
    gateway = ctx.gateway("structure")
    config = _endpoint(ctx.config, "teacher_endpoint")
    books = []
    for path in sorted(raw_dir.glob("*.md")):
        raw = path.read_text(encoding="utf-8")
        books.append(rulebook.structure_rulebook(raw, path.stem, gateway, config))
    if not books:
        raise ConfigError(f"no .md rulebooks found under {raw_dir}")
    n = save_records(ctx.artifact("rulebooks", "structured.jsonl"), books)
    return {"games": n}


def stage_rectify(ctx: Context) -> dict:
    raw_dir = ctx.data_path("rulebooks_raw")
    books = load_records(ctx.artifact("rulebooks", "structured.jsonl"), "rulebook")
    gateway = ctx.gateway("rectify")
    config = _endpoint(ctx.config, "teacher_endpoint")
    rectified = []
    changes: list[tuple[str, str]] = []
    for book in books:
        raw_path = raw_dir / f"{book.game_id}.md"
        if not raw_path.exists():
            raise ConfigError(f"raw rulebook missing for {book.game_id}: {raw_path}")
        fixed, changed = rulebook.rectify_rulebook(book, raw_path.read_text(encoding="utf-8"),
                                                   gateway, config)
        rectified.append(fixed)
        changes.extend((book.game_id, key) for key in changed)
    save_records(ctx.artifact("rulebooks", "rectified.jsonl"), rectified)
    changes_path = ctx.artifact("rulebooks", "rectify_changes.csv")
    with changes_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["game_id", "section"])
        writer.writerows(changes)
    return {"games": len(rectified), "changed_sections": len(changes)}


def stage_annotate(ctx: Context) -> dict:
    raw = load_records(ctx.data_path("reviews"), "raw_review")
    gateway = ctx.gateway("annotate")
    config = _endpoint(ctx.config, "judge_endpoint")
    batch_size = int(ctx.config["selection"]["batch_size"])
    annotated = reviews.annotate_reviews(raw, gateway, config, batch_size=batch_size)
    n = save_records(ctx.artifact("reviews", "annotated.jsonl"), annotated)
    n_valid = sum(1 for r in annotated if r.annotation.is_valid)
    return {"reviews": n, "valid": n_valid}


def stage_select(ctx: Context) -> dict:
    annotated = load_records(ctx.artifact("reviews", "annotated.jsonl"), "curated_review")
    section = ctx.config["selection"]
    config = reviews.SelectionConfig(
        retention_ratio=float(section["retention_ratio"]),
        min_per_game=int(section["min_per_game"]),
        max_per_game=int(section["max_per_game"]),
        quality_threshold=int(section["quality_threshold"]),
    )
    selected, stats = reviews.select_reviews(annotated, config)
    save_records(ctx.artifact("reviews", "curated.jsonl"), selected)
    _write_kv_csv(ctx.artifact("reviews", "selection_stats.csv"), [
        ("total_reviews", stats.total_reviews),
        ("total_valid", stats.total_valid),
        ("total_selected", stats.total_selected),
        ("retention", f"{stats.retention:.6f}"),
        ("rating_pearson_r", None if stats.rating_pearson_r is None
         else f"{stats.rating_pearson_r:.6f}"),
        ("facet_coverage", None if stats.facet_coverage is None
         else f"{stats.facet_coverage:.6f}"),
        ("delta_mechanism_anchoring", f"{stats.score_deltas.get('mechanism_anchoring', 0.0):.6f}"),
        ("delta_causal_attribution", f"{stats.score_deltas.get('causal_attribution', 0.0):.6f}"),
        ("delta_constructiveness", f"{stats.score_deltas.get('constructiveness', 0.0):.6f}"),
        ("games_without_valid", ";".join(stats.games_without_valid)),
    ])
    return {"selected": stats.total_selected, "valid": stats.total_valid,
            "retention": stats.retention}


def stage_embed(ctx: Context) -> dict:
    curated = load_records(ctx.artifact("reviews", "curated.jsonl"), "curated_review")
    gateway = ctx.gateway("embed")
    config = _endpoint(ctx.config, "embed_endpoint")
    out_path = ctx.artifact("personas", "embeddings.jsonl")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with out_path.open("w", encoding="utf-8") as fh:
        for start in range(0, len(curated), EMBED_BATCH):
            batch = curated[start:start + EMBED_BATCH]
            texts = [personas.render_composite(r).rendered for r in batch]
            vectors = gateway.embed(config, texts)
            for review, vector in zip(batch, vectors):
                fh.write(json.dumps({"review_id": review.review_id, "vector": vector},
                                    ensure_ascii=False) + "\n")
                n += 1
    return {"embedded": n}


def stage_cluster(ctx: Context) -> dict:
    vectors = _load_embeddings(ctx.artifact("personas", "embeddings.jsonl"))
    k = int(ctx.config["clustering"]["k"])
    model = personas.cluster(vectors, k=k, seed=ctx.seed())
    path = ctx.artifact("personas", "cluster_model.json")
    path.write_text(json.dumps(model.to_dict(), ensure_ascii=False, indent=2) + "\n",
                    encoding="utf-8")
    return {"k": k, "inertia": model.inertia, "iterations": len(model.inertia_history)}


def stage_profile(ctx: Context) -> dict:
    model_path = ctx.artifact("personas", "cluster_model.json")
    model = personas.ClusterModel.from_dict(
        json.loads(model_path.read_text(encoding="utf-8")))
    vectors = _load_embeddings(ctx.artifact("personas", "embeddings.jsonl"))
    curated = load_records(ctx.artifact("reviews", "curated.jsonl"), "curated_review")
    by_id = {r.review_id: r for r in curated}
    per_cluster = int(ctx.config["profiling"]["per_cluster"])
    samples = personas.export_profiling_samples(model, vectors, by_id,
                                                per_cluster=per_cluster)
    gateway = ctx.gateway("profile")
    config = _endpoint(ctx.config, "judge_endpoint")
    profile_dir = ctx.artifact("personas", "profiles")
    profile_dir.mkdir(parents=True, exist_ok=True)
    for index in sorted(samples):
        prompt = samples[index]
        (profile_dir / f"cluster_{index:02d}_prompt.txt").write_text(prompt, encoding="utf-8")
        reply = gateway.chat(config, chat_request(None, prompt))
        (profile_dir / f"cluster_{index:02d}.txt").write_text(reply.text + "\n",
                                                              encoding="utf-8")
    template = ctx.artifact("personas", "merge_map_template.txt")
    if not template.exists():
        personas.save_merge_map(template, {i: UNASSIGNED for i in range(model.k)})
    return {"clusters_profiled": len(samples)}


def stage_label(ctx: Context) -> dict:
    curated = load_records(ctx.artifact("reviews", "curated.jsonl"), "curated_review")
    gateway = ctx.gateway("label")
    config = _endpoint(ctx.config, "judge_endpoint")
    section = ctx.config["labeling"]
    labeled = personas.label_personas(curated, gateway, config,
                                      votes=int(section["votes"]),
                                      batch_size=int(section["batch_size"]))
    save_records(ctx.artifact("personas", "labeled.jsonl"), labeled)
    counts = personas.persona_counts(labeled)
    counts_path = ctx.artifact("personas", "persona_counts.csv")
    with counts_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["persona", "count"])
        for name, count in counts.items():
            writer.writerow([name, count])
    return {"labeled": len(labeled),
            "unassigned": counts.get(UNASSIGNED, 0)}


def stage_synthesize(ctx: Context) -> dict:
    labeled = load_records(ctx.artifact("personas", "labeled.jsonl"), "curated_review")
    rulebooks = _load_rulebooks(ctx)
    gateway = ctx.gateway("synthesize")
    teacher = _endpoint(ctx.config, "teacher_endpoint")
    judge = _endpoint(ctx.config, "judge_endpoint")
    max_attempts = int(ctx.config["sft"]["max_attempts"])
    records, dropped = cot.synthesize_sft_corpus(labeled, rulebooks, gateway,
                                                 teacher, judge,
                                                 max_attempts=max_attempts)
    cot.save_sft_records(records, ctx.artifact("sft", "records.jsonl"))
    cot.save_dropped(dropped, ctx.artifact("sft", "dropped.jsonl"))
    return {"records": len(records), "dropped": len(dropped)}


def stage_export_sft(ctx: Context) -> dict:
    records = cot.load_sft_records(ctx.artifact("sft", "records.jsonl"))
    n = cot.export_sft(records, ctx.artifact("sft", "corpus.jsonl"),
                       ctx.artifact("sft", "manifest.txt"))
    return {"records": n}


def stage_split(ctx: Context) -> dict:
    games = load_records(ctx.data_path("games"), "game")
    items = {g.game_id: (g.weight, g.avg_rating) for g in games}
    per_stratum = int(ctx.config["split"]["per_stratum"])
    chosen, sizes = stratified_split(items, per_stratum=per_stratum, seed=ctx.seed())
    path = ctx.artifact("splits", "test_games.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"seed": ctx.seed(), "per_stratum": per_stratum,
               "games": sorted(chosen), "strata": sizes}
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return {"test_games": len(chosen)}


def stage_simulate(ctx: Context) -> dict:
    rulebooks = _load_rulebooks(ctx)
    labeled = load_records(ctx.artifact("personas", "labeled.jsonl"), "curated_review")
    test_games = _split_games(ctx)
    if test_games is not None:
        missing = sorted(set(test_games) - set(rulebooks))
        if missing:
            raise ConfigError(f"test split references unknown games: {missing}")
        rulebooks = {g: rulebooks[g] for g in test_games}
    texts = {g: cot.rulebook_excerpt(b) for g, b in rulebooks.items()}
    weights = simulate.persona_weights_from_reviews(labeled)
    section = ctx.config["simulation"]
    spec = simulate.SimulationSpec(n_runs=int(section["n_runs"]), variant=ctx.variant,
                                   seed=ctx.seed())
    gateway = ctx.gateway(f"sim_{ctx.variant}")
    config = _endpoint(ctx.config, "endpoint")
    runs, failures = simulate.simulate_corpus(texts, weights, gateway, config, spec)
    save_records(ctx.artifact("sim", f"{ctx.variant}.jsonl"), runs)
    failed_path = ctx.artifact("sim", f"{ctx.variant}_failed.jsonl")
    failed_path.parent.mkdir(parents=True, exist_ok=True)
    with failed_path.open("w", encoding="utf-8") as fh:
        for failure in failures:
            fh.write(json.dumps(failure.to_dict(), ensure_ascii=False) + "\n")
    return {"variant": ctx.variant, "runs": len(runs), "failed": len(failures),
            "games": len(texts)}


def stage_evaluate(ctx: Context) -> dict:
    sim_path = ctx.artifact("sim", f"{ctx.variant}.jsonl")
    sims = load_records(sim_path, "simulated_review")
    labeled = load_records(ctx.artifact("personas", "labeled.jsonl"), "curated_review")
    failed_path = ctx.artifact("sim", f"{ctx.variant}_failed.jsonl")
    n_failed = 0
    if failed_path.exists():
        n_failed = sum(1 for line in failed_path.read_text(encoding="utf-8").splitlines()
                       if line.strip())

    report = evaluate.evaluate_alignment(labeled, sims, ctx.variant, n_failed=n_failed)

    flags = ctx.config["evaluation"]
    gateway = ctx.gateway(f"eval_{ctx.variant}")
    judge = _endpoint(ctx.config, "judge_endpoint")
    fact = diversity = recovery = None
    if flags.get("fact_check", True):
        rulebooks = _load_rulebooks(ctx)
        texts = {g: cot.rulebook_excerpt(b) for g, b in rulebooks.items()}
        fact = evaluate.fact_check_corpus(sims, texts, gateway, judge)
    if flags.get("diversity", True):
        diversity = evaluate.diversity_scores(sims, gateway, judge)
    if flags.get("opinion_recovery", True):
        recovery = evaluate.opinion_recovery(labeled, sims, gateway, judge)

    out_dir = ctx.artifact("eval", ctx.variant)
    evaluate.write_summary_csv(out_dir / "summary.csv", report, fact, diversity, recovery)
    evaluate.write_per_game_csv(out_dir / "per_game.csv", report, fact, diversity, recovery)
    if report.tier_matrix is not None:
        evaluate.write_tier_confusion_csv(out_dir / "tier_confusion.csv", report.tier_matrix)
    evaluate.write_persona_csv(out_dir / "persona.csv",
                               evaluate.persona_breakdown(labeled, sims))
    details = {"variant": ctx.variant, "mae": report.mae,
               "mean_wasserstein": report.mean_wasserstein}
    if fact is not None:
        details["fact_accuracy"] = fact.pooled_accuracy
    if recovery is not None:
        details["opinion_recovery_pct"] = recovery.rate
    return details


def stage_report(ctx: Context) -> dict:
    eval_dir = ctx.artifact("eval")
    rows: dict[str, dict[str, str]] = {}
    metric_names: list[str] = []
    for variant in simulate.VARIANTS:
        summary = eval_dir / variant / "summary.csv"
        if not summary.exists():
            continue
        with summary.open(encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for name, value in reader:
                rows.setdefault(variant, {})[name] = value
                if name not in metric_names:
                    metric_names.append(name)
    if not rows:
        raise ConfigError(f"no evaluation summaries under {eval_dir}")
    out = ctx.artifact("report", "variants.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric"] + list(rows))
        for name in metric_names:
            if name == "variant":
                continue
            writer.writerow([name] + [rows[v].get(name, "") for v in rows])
    return {"variants": sorted(rows)}


STAGE_FUNCS: dict[str, Callable[[Context], dict]] = {
    "structure": stage_structure,
    "rectify": stage_rectify,
    "annotate": stage_annotate,
    "select": stage_select,
    "embed": stage_embed,
    "cluster": stage_cluster,
    "profile": stage_profile,
    "label": stage_label,
    "synthesize": stage_synthesize,
    "export-sft": stage_export_sft,
    "split": stage_split,
    "simulate": stage_simulate,
    "evaluate": stage_evaluate,
    "report": stage_report,
}


def stage_inputs(ctx: Context, stage: str) -> list[Path]:
    a = ctx.artifact
    table: dict[str, list[Path]] = {
        "structure": [ctx.data_path("rulebooks_raw")],
        "rectify": [a("rulebooks", "structured.jsonl"), ctx.data_path("rulebooks_raw")],
        "annotate": [ctx.data_path("reviews")],
        "select": [a("reviews", "annotated.jsonl")],
        "embed": [a("reviews", "curated.jsonl")],
        "cluster": [a("personas", "embeddings.jsonl")],
        "profile": [a("personas", "cluster_model.json"), a("personas", "embeddings.jsonl"),
                    a("reviews", "curated.jsonl")],
        "label": [a("reviews", "curated.jsonl")],
        "synthesize": [a("personas", "labeled.jsonl"), _rulebook_input(ctx)],
        "export-sft": [a("sft", "records.jsonl")],
        "split": [ctx.data_path("games")],
        "simulate": [_rulebook_input(ctx), a("personas", "labeled.jsonl")],
        "evaluate": [a("sim", f"{ctx.variant}.jsonl"), a("personas", "labeled.jsonl"),
                     _rulebook_input(ctx)],
        "report": [a("eval")],
    }
    inputs = table[stage]
    if stage == "simulate":
        split_path = a("splits", "test_games.json")
        if split_path.exists():
            inputs.append(split_path)
    return inputs


def run_stage(stage: str, ctx: Context) -> int:
    if stage not in STAGE_FUNCS:
        raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
    inputs = stage_inputs(ctx, stage)
    missing = [str(p) for p in inputs if not p.exists()]
    if missing:
        raise ConfigError(f"stage {stage!r} inputs missing: {missing}")

    digests = {str(p): path_digest(p) for p in inputs}
    cfg_digest = config_digest(ctx.config, stage, ctx.variant)
    summary_name = f"{stage}_{ctx.variant}" if stage in ("simulate", "evaluate") else stage
    summary_path = ctx.artifact("summaries", f"{summary_name}.json")
    if summary_path.exists() and not ctx.force:
        previous = json.loads(summary_path.read_text(encoding="utf-8"))
        if previous.get("inputs") == digests and previous.get("config_digest") == cfg_digest:
            logger.info("stage %s up to date; skipping (use --force to rerun)", stage)
            return 0

    details = STAGE_FUNCS[stage](ctx)
    summary_path.parent.mkdir(parents=True, exist_ok=True)
    summary = {"stage": stage, "variant": ctx.variant, "inputs": digests,
               "config_digest": cfg_digest, "details": details}
    summary_path.write_text(json.dumps(summary, ensure_ascii=False, indent=2,
                                       sort_keys=True) + "\n", encoding="utf-8")
    logger.info("stage %s done: %s", stage, details)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="playtest",
        description="Virtual playtesting pipeline: structure rulebooks, curate "
                    "reviews, discover personas, build a reasoning SFT corpus, "
                    "simulate reviews and evaluate them.",
    )
    parser.add_argument("stage", choices=STAGES, help="pipeline stage to run")
    parser.add_argument("--config", help="YAML config file (defaults apply without it)")
    parser.add_argument("--workdir", help="artifact directory (overrides config)")
    parser.add_argument("--seed", type=int, help="root random seed (overrides config)")
    parser.add_argument("--endpoint",
                        help="override every endpoint base URL; 'mock' selects the "
                             "offline responder")
    parser.add_argument("--variant", choices=simulate.VARIANTS,
                        help="simulation variant for simulate/evaluate")
    parser.add_argument("--n-runs", type=int, dest="n_runs",
                        help="simulated runs per game (overrides config)")
    parser.add_argument("--force", action="store_true",
                        help="rerun even if inputs are unchanged")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        if args.workdir:
            config["workdir"] = args.workdir
        if args.seed is not None:
            config["root_seed"] = args.seed
        if args.n_runs is not None:
            config["simulation"]["n_runs"] = args.n_runs
        if args.endpoint:
            url = "mock:offline" if args.endpoint == "mock" else args.endpoint
            for section in ("endpoint", "judge_endpoint", "teacher_endpoint",
                            "embed_endpoint"):
                config[section]["base_url"] = url
        ctx = Context(config, force=args.force, variant=args.variant)
        return run_stage(args.stage, ctx)
    except PlaytestError as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
