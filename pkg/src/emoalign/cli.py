"""Command-line surface.

Subcommands: synth, filter, stats, train, eval, ablate, analyze, gradcheck.
Exit codes: 0 success, 1 validation failure (bad flags, config, manifest),
2 numeric-check failure (gradient tolerance exceeded, non-finite loss).
Every artifact embeds the resolved configuration and seed, either inline or
in a sidecar ``*_meta.json`` when its schema is fixed.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_run_config
from .corpus import (
    EmotionLabel,
    FilterPolicy,
    Manifest,
    ManifestError,
    apply_filter_policy,
    corpus_stats,
    load_manifest,
    save_manifest,
)
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .evaluation import (
    FOUR_CLASSES,
    ablation_run,
    evaluate,
    mean_spec_rows,
    project_2d,
    silhouette_score,
    write_predictions_jsonl,
    write_projection_csv,
    write_report_json,
    write_vector_csv,
)
from .frontend import FrameParams
from .pipeline import FeatureCache, Models, build_models, forward_utterance, manifest_base_dir
from .qformer import QFormerConfig
from .synth import SynthesisProfile, synth_generate
from .trainer import (
    NumericCheckError,
    grad_check,
    load_checkpoint,
    save_checkpoint,
    train_stage,
    write_train_log,
)

__all__ = ["main"]

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="emoalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, *flags: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        if "config" in flags:
            p.add_argument("--config", type=Path, default=None, help="TOML run config")
        if "manifest" in flags:
            p.add_argument("--manifest", type=Path, required=True, help="input manifest JSONL")
        if "ckpt" in flags:
            p.add_argument("--ckpt", type=Path, default=None, help="checkpoint path")
        if "ckpt!" in flags:
            p.add_argument("--ckpt", type=Path, required=True, help="checkpoint path")
        if "out" in flags:
            p.add_argument("--out", type=Path, required=True, help="output directory")
        if "out?" in flags:
            p.add_argument("--out", type=Path, default=None, help="output directory")
        if "seed" in flags:
            p.add_argument("--seed", type=int, default=None, help="seed override")
        if "stage" in flags:
            p.add_argument("--stage", type=int, choices=(1, 2), default=None)
        if "threads" in flags:
            p.add_argument("--threads", type=int, default=1, help="worker threads")
        if "classes" in flags:
            p.add_argument("--classes", type=int, choices=(4, 7), default=None)
        return p

    add("synth", "generate a synthetic corpus and manifest",
        "config", "out", "seed", "threads")
    add("filter", "apply the duration/size filter policy",
        "config", "manifest", "out")
    add("stats", "corpus statistics JSON",
        "config", "manifest", "out")
    p_train = add("train", "train the connector for one stage",
                  "config", "manifest", "ckpt", "out", "seed", "stage", "threads")
    p_train.set_defaults(stage=None)
    add("eval", "evaluate a checkpoint on a manifest",
        "config", "manifest", "ckpt!", "out", "threads", "classes")
    add("ablate", "six-cell ablation grid over three seeds",
        "config", "manifest", "out", "seed", "threads")
    p_an = add("analyze", "plot-ready CSV/JSON exports",
               "config", "manifest", "ckpt", "out", "threads", "classes")
    p_an.add_argument("--what", required=True,
                      choices=("mean-spec", "embeddings", "projection", "silhouette"))
    add("gradcheck", "finite-difference check on the tiny seeded config",
        "config", "out?", "seed", "stage")
    return parser


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _models_from_config(cfg: RunConfig, connector_seed: int) -> Models:
    return build_models(cfg.frontend, cfg.encoder, cfg.qformer, cfg.decoder, connector_seed)


def _write_meta(out: Path, name: str, cfg: RunConfig, seed: int | None, **extra) -> None:
    meta = {"config": cfg.to_dict(), "seed": seed}
    meta.update(extra)
    write_report_json(meta, out / f"{name}_meta.json")


def _warm_cache(models: Models, entries, base_dir, cache: FeatureCache, threads: int) -> None:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda u: cache.get(models, u, base_dir), entries))
    else:
        for u in entries:
            cache.get(models, u, base_dir)


def _restrict_from(args, cfg: RunConfig):
    if getattr(args, "classes", None) == 4:
        return FOUR_CLASSES
    if getattr(args, "classes", None) == 7:
        return None
    return cfg.eval.restrict


def _pooled_rows(models: Models, manifest: Manifest, base_dir, threads: int):
    """(id, language, emotion, pooled embedding) per utterance."""
    cache = FeatureCache()

    def one(utt):
        return forward_utterance(models, cache.get(models, utt, base_dir)).pooled

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vecs = list(pool.map(one, manifest))
    else:
        vecs = [one(u) for u in manifest]
    return [(u.id, u.language, u.emotion, v) for u, v in zip(manifest, vecs)]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    cfg = load_run_config(args.config)
    seed = args.seed if args.seed is not None else cfg.synth.seed
    profile = SynthesisProfile(seed=seed)
    manifest = synth_generate(
        profile,
        cfg.synth.languages,
        cfg.synth.emotion_labels,
        cfg.synth.per_cell,
        args.out,
        sr=cfg.synth.sr,
        dur_range=cfg.synth.dur_range,
        dataset=cfg.synth.dataset,
        threads=args.threads,
    )
    save_manifest(manifest, args.out / "manifest.jsonl")
    _write_meta(args.out, "synth", cfg, seed, utterances=len(manifest))
    print(f"wrote {len(manifest)} utterances under {args.out}")
    return EXIT_OK


def _cmd_filter(args) -> int:
    cfg = load_run_config(args.config)
    manifest = load_manifest(args.manifest)
    policy = FilterPolicy()
    kept, rejected, report = apply_filter_policy(manifest, policy)
    args.out.mkdir(parents=True, exist_ok=True)
    save_manifest(kept, args.out / "kept.jsonl")
    save_manifest(rejected, args.out / "rejected.jsonl")
    write_report_json(report.to_dict(), args.out / "filter_report.json")
    _write_meta(args.out, "filter", cfg, None,
                policy={"min_duration_s": policy.min_duration_s,
                        "unknown_dataset": policy.unknown_dataset,
                        "groups": [{"name": name, "threshold_bytes": group.threshold_bytes,
                                    "datasets": sorted(group.datasets)}
                                   for name, group in sorted(policy.size_groups.items())]})
    print(f"kept {report.kept} of {report.input} "
          f"(duration-rejected {report.rejected_duration}, size-rejected {report.rejected_size})")
    return EXIT_OK


def _cmd_stats(args) -> int:
    cfg = load_run_config(args.config)
    manifest = load_manifest(args.manifest)
    stats = corpus_stats(manifest)
    args.out.mkdir(parents=True, exist_ok=True)
    write_report_json({"config": cfg.to_dict(), "stats": stats}, args.out / "stats.json")
    print(json.dumps(stats, sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    stage = args.stage if args.stage is not None else 1
    manifest = load_manifest(args.manifest)
    train_cfg = cfg.train
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)

    if args.ckpt is not None:
        loaded = load_checkpoint(args.ckpt)
        models, optimizer = loaded.models, loaded.optimizer
    else:
        models, optimizer = _models_from_config(cfg, train_cfg.seed), None

    base_dir = manifest_base_dir(manifest)
    cache = FeatureCache()
    pool = train_cfg.stage_filter(stage).apply(manifest)
    _warm_cache(models, pool, base_dir, cache, args.threads)
    rows, optimizer = train_stage(
        models, manifest, train_cfg, stage,
        optimizer=optimizer, feature_cache=cache, base_dir=base_dir,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    ckpt_path = args.out / f"ckpt_stage{stage}.bin"
    save_checkpoint(ckpt_path, models, train_cfg, optimizer, stage=stage,
                    step=len(rows), extra_config=cfg.to_dict())
    write_train_log(rows, args.out / f"train_log_stage{stage}.jsonl")
    _write_meta(args.out, f"train_stage{stage}", cfg, train_cfg.seed,
                stage=stage, steps=len(rows), utterances=len(pool))
    last = rows[-1] if rows else None
    print(f"stage {stage}: {len(rows)} steps on {len(pool)} utterances -> {ckpt_path}"
          + (f" (final total {last['total']:.4f})" if last else ""))
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    loaded = load_checkpoint(args.ckpt)
    manifest = load_manifest(args.manifest)
    restrict = _restrict_from(args, cfg)
    result = evaluate(
        loaded.models, manifest, restrict=restrict, threads=args.threads,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    report = {
        "config": cfg.to_dict(),
        "seed": loaded.header["seed"],
        "checkpoint": str(args.ckpt),
        "classes": [e.text for e in result.classes],
        "skipped": result.skipped,
        "groups": [g.to_dict() for g in result.groups],
        "pooled": result.pooled.to_dict(),
    }
    write_report_json(report, args.out / "eval_report.json")
    write_predictions_jsonl(result.predictions, args.out / "predictions.jsonl")
    p = result.pooled
    print(f"pooled: wa={p.wa:.4f} ua={p.ua:.4f} wf1={p.wf1:.4f} "
          f"precision={p.precision:.4f} n={p.n} skipped={result.skipped}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    cfg = load_run_config(args.config)
    manifest = load_manifest(args.manifest)
    base_seed = args.seed if args.seed is not None else cfg.train.seed
    seeds = (base_seed, base_seed + 1, base_seed + 2)

    def builder(seed: int) -> Models:
        return _models_from_config(cfg, seed)

    base_dir = manifest_base_dir(manifest)
    cache = FeatureCache()
    _warm_cache(builder(base_seed), manifest, base_dir, cache, args.threads)
    result = ablation_run(
        manifest,
        cfg.eval.holdout_language,
        cfg.train,
        builder,
        seeds=seeds,
        base_dir=base_dir,
        feature_cache=cache,
        anchor_language=cfg.eval.anchor_language,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    write_report_json({"config": cfg.to_dict(), "seed": base_seed, **result},
                      args.out / "ablation.json")
    lines = ["cell,seed,wa,ua,wf1,precision"]
    for cell in result["cells"]:
        for row in cell["per_seed"]:
            lines.append(f"{cell['cell']},{row['seed']},{row['wa']!r},{row['ua']!r},"
                         f"{row['wf1']!r},{row['precision']!r}")
    (args.out / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for cell in result["cells"]:
        print(f"{cell['cell']:26s} mean_wa={cell['mean_wa']:.4f}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    cfg = load_run_config(args.config)
    manifest = load_manifest(args.manifest)
    args.out.mkdir(parents=True, exist_ok=True)
    base_dir = manifest_base_dir(manifest)

    if args.what == "mean-spec":
        rows = mean_spec_rows(manifest, cfg.frontend, base_dir=base_dir, threads=args.threads)
        write_vector_csv(rows, args.out / "mean_spec.csv", prefix="m")
        _write_meta(args.out, "analyze_mean_spec", cfg, None, rows=len(rows))
        print(f"wrote mean_spec.csv with {len(rows)} rows")
        return EXIT_OK

    if args.ckpt is None:
        raise ConfigError(f"analyze --what {args.what} requires --ckpt")
    models = load_checkpoint(args.ckpt).models
    rows = _pooled_rows(models, manifest, base_dir, args.threads)

    if args.what == "embeddings":
        write_vector_csv(rows, args.out / "embeddings.csv", prefix="e")
        _write_meta(args.out, "analyze_embeddings", cfg, None, rows=len(rows))
        print(f"wrote embeddings.csv with {len(rows)} rows")
        return EXIT_OK

    vecs = np.stack([vec for _, _, _, vec in rows])
    if args.what == "projection":
        coords, explained = project_2d(vecs)
        write_projection_csv([(i, l, e) for i, l, e, _ in rows], coords,
                             args.out / "projection.csv")
        _write_meta(args.out, "analyze_projection", cfg, None,
                    explained_variance=list(explained), rows=len(rows))
        print(f"wrote projection.csv ({explained[0]:.3f}/{explained[1]:.3f} variance)")
        return EXIT_OK

    labels = [int(e) for _, _, e, _ in rows]
    score = silhouette_score(vecs, labels)
    counts = {}
    for _, _, e, _ in rows:
        counts[e.text] = counts.get(e.text, 0) + 1
    write_report_json(
        {"config": cfg.to_dict(), "silhouette": score, "n": len(rows), "by_emotion": counts},
        args.out / "silhouette.json",
    )
    print(f"silhouette={score:.4f} over {len(rows)} embeddings")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    cfg = load_run_config(args.config)
    seed = args.seed if args.seed is not None else 0
    if args.config is None:
        tiny = RunConfig(
            frontend=FrameParams(n_mels=16),
            encoder=EncoderConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32, n_mels=16),
            qformer=QFormerConfig(n_queries=4, d_model=16, n_layers=1, n_heads=2,
                                  d_ff=32, d_enc=16),
            decoder=DecoderConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32, d_conn=16),
        )
        cfg = replace(tiny, train=cfg.train, eval=cfg.eval, synth=cfg.synth)
    models = _models_from_config(cfg, connector_seed=seed)

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 16])))
    d_enc = cfg.qformer.d_enc
    labels = (EmotionLabel.NEUTRAL, EmotionLabel.NEUTRAL, EmotionLabel.ANGRY, EmotionLabel.FEAR)
    batch = [(rng.standard_normal((16, d_enc)), label) for label in labels]

    stages = (args.stage,) if args.stage is not None else (1, 2)
    margins = {"active": -0.5, "inactive": 0.999}
    all_pass = True
    results = []
    for stage in stages:
        for regime, margin in margins.items():
            check_cfg = replace(cfg.train, loss=replace(cfg.train.loss, margin=margin))
            reports = grad_check(models, batch, check_cfg)
            worst = max(r["max_rel_err"] for r in reports)
            ok = all(r["passed"] for r in reports)
            all_pass &= ok
            results.append({"stage": stage, "hinge": regime, "passed": ok,
                            "worst_rel_err": worst, "tensors": reports})
            print(f"stage {stage} hinge={regime:8s}: "
                  f"{'PASS' if ok else 'FAIL'} (worst rel err {worst:.3e})")
    if getattr(args, "out", None) is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_report_json({"config": cfg.to_dict(), "seed": seed, "passed": all_pass,
                           "runs": results}, args.out / "gradcheck.json")
    if not all_pass:
        raise NumericCheckError("gradient check tolerance exceeded")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "synth": _cmd_synth,
    "filter": _cmd_filter,
    "stats": _cmd_stats,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "analyze": _cmd_analyze,
    "gradcheck": _cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NumericCheckError as err:
        print(f"emoalign {args.command}: numeric check failed: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ManifestError, ValueError, OSError) as err:
        print(f"emoalign {args.command}: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
