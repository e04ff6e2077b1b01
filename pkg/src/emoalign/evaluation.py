"""Evaluation and analysis: confusion-matrix metrics (WA/UA/WF1/precision),
grouped zero-shot evaluation, the six-cell ablation grid, PCA projection,
silhouette scoring, and mean-spectrogram consistency checks."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import EMOTIONS, EmotionLabel, Manifest, Utterance
from .decoder import predict_emotion
from .frontend import FrameParams, log_mel, mean_spectrogram
from .pipeline import FeatureCache, Models, forward_utterance, manifest_base_dir
from .trainer import StageFilter, TrainConfig, train_stage
from .wavio import read_wav_pcm16

__all__ = [
    "FOUR_CLASSES",
    "compute_metrics",
    "confusion_from_pairs",
    "GroupReport",
    "EvalResult",
    "evaluate",
    "project_2d",
    "silhouette_score",
    "mean_spec_rows",
    "emotion_consistency",
    "ABLATION_CELLS",
    "ablation_cell_spec",
    "ablation_run",
    "write_report_json",
    "write_predictions_jsonl",
    "write_vector_csv",
    "write_projection_csv",
]

log = logging.getLogger(__name__)

# Standard four-class protocol subset.
FOUR_CLASSES = (
    EmotionLabel.NEUTRAL,
    EmotionLabel.HAPPY,
    EmotionLabel.SAD,
    EmotionLabel.ANGRY,
)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def compute_metrics(confusion: np.ndarray) -> dict:
    """WA/UA/WF1/precision from a k x k confusion matrix (rows = gold).

    WA = trace/total. UA = mean recall over classes with support > 0.
    WF1 = support-weighted F1 (F1 = 0 when precision and recall are both 0).
    precision = support-weighted per-class precision (0 when a predicted
    column is empty).
    """
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] < 1:
        raise ValueError(f"confusion matrix must be square and nonempty, got {cm.shape}")
    if np.any(cm < 0) or not np.all(cm == np.floor(cm)):
        raise ValueError("confusion matrix entries must be nonnegative integers")
    cm = cm.astype(np.float64)
    total = cm.sum()
    if total < 1:
        raise ValueError("confusion matrix has no observations")
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    diag = np.diag(cm)

    wa = float(diag.sum() / total)

    present = support > 0
    recall = np.zeros(cm.shape[0])
    recall[present] = diag[present] / support[present]
    ua = float(recall[present].mean())

    precision_c = np.where(predicted > 0, diag / np.where(predicted > 0, predicted, 1.0), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(
            precision_c + recall > 0,
            2.0 * precision_c * recall / np.where(precision_c + recall > 0, precision_c + recall, 1.0),
            0.0,
        )
    weights = support / total
    wf1 = float((weights * f1).sum())
    precision = float((weights * precision_c).sum())
    return {"wa": wa, "ua": ua, "wf1": wf1, "precision": precision}


def confusion_from_pairs(
    gold: Sequence[int], pred: Sequence[int], n_classes: int
) -> np.ndarray:
    """k x k counts, rows = gold index, columns = predicted index."""
    if len(gold) != len(pred):
        raise ValueError("gold and pred must have equal length")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for g, p in zip(gold, pred):
        if not (0 <= g < n_classes and 0 <= p < n_classes):
            raise ValueError(f"label pair ({g}, {p}) outside 0..{n_classes - 1}")
        cm[g, p] += 1
    return cm


# ---------------------------------------------------------------------------
# Grouped evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupReport:
    """Metrics for one (dataset, language) group; None/None is the pooled row."""

    dataset: str | None
    language: str | None
    classes: int
    wa: float
    ua: float
    wf1: float
    precision: float
    confusion: np.ndarray
    n: int
    zero_shot: bool

    def to_dict(self) -> dict:
        return {
            "group": {
                "dataset": self.dataset,
                "language": self.language,
                "classes": self.classes,
            },
            "wa": self.wa,
            "ua": self.ua,
            "wf1": self.wf1,
            "precision": self.precision,
            "confusion": self.confusion.tolist(),
            "n": self.n,
            "zero_shot": self.zero_shot,
        }


@dataclass
class EvalResult:
    groups: list[GroupReport]
    pooled: GroupReport
    skipped: int
    predictions: list[dict]
    classes: tuple[EmotionLabel, ...]
    embeddings: list[tuple[str, str, EmotionLabel, np.ndarray]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "classes": [e.text for e in self.classes],
            "skipped": self.skipped,
            "groups": [g.to_dict() for g in self.groups],
            "pooled": self.pooled.to_dict(),
        }


def evaluate(
    models: Models,
    manifest: Manifest,
    restrict: tuple[EmotionLabel, ...] | None = None,
    base_dir: str | Path | None = None,
    feature_cache: FeatureCache | None = None,
    threads: int = 1,
    collect_embeddings: bool = False,
) -> EvalResult:
    """Classify every manifest utterance and report metrics per
    (dataset, language) group plus a pooled row.

    Utterances whose gold emotion lies outside ``restrict`` are skipped and
    counted. A group is zero-shot when its dataset never appeared in
    training. The pooled row is zero-shot only if every group is.
    """
    if len(manifest) == 0:
        raise ValueError("cannot evaluate an empty manifest")
    classes = tuple(sorted(restrict)) if restrict is not None else EMOTIONS
    if len(classes) < 2:
        raise ValueError("restriction must keep at least two classes")
    index_of = {label: i for i, label in enumerate(classes)}
    if base_dir is None:
        base_dir = manifest_base_dir(manifest)
    cache = feature_cache if feature_cache is not None else FeatureCache()

    kept = [u for u in manifest if u.emotion in index_of]
    skipped = len(manifest) - len(kept)
    if skipped:
        log.info("skipped %d utterances with gold labels outside the class set", skipped)
    if not kept:
        raise ValueError("no utterances remain after class restriction")

    def score(utt: Utterance) -> tuple[EmotionLabel, np.ndarray, np.ndarray]:
        fwd = forward_utterance(models, cache.get(models, utt, base_dir))
        pred = predict_emotion(fwd.logits, models.vocab, classes)
        subset = np.array([fwd.logits[models.vocab.emotion_ids[int(c)]] for c in classes])
        return pred, subset, fwd.pooled

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scored = list(pool.map(score, kept))
    else:
        scored = [score(u) for u in kept]

    predictions = []
    embeddings = []
    for utt, (pred, subset, pooled) in zip(kept, scored):
        predictions.append({
            "id": utt.id,
            "gold": utt.emotion.text,
            "pred": pred.text,
            "logits_emotion_subset": [float(v) for v in subset],
        })
        if collect_embeddings:
            embeddings.append((utt.id, utt.language, utt.emotion, pooled))

    def group_report(
        subset_utts: list[Utterance],
        subset_preds: list[EmotionLabel],
        dataset: str | None,
        language: str | None,
        zero_shot: bool,
    ) -> GroupReport:
        cm = confusion_from_pairs(
            [index_of[u.emotion] for u in subset_utts],
            [index_of[p] for p in subset_preds],
            len(classes),
        )
        m = compute_metrics(cm)
        return GroupReport(
            dataset=dataset, language=language, classes=len(classes),
            wa=m["wa"], ua=m["ua"], wf1=m["wf1"], precision=m["precision"],
            confusion=cm, n=len(subset_utts), zero_shot=zero_shot,
        )

    preds_only = [pred for pred, _, _ in scored]
    keys = sorted({(u.dataset, u.language) for u in kept})
    groups = []
    for dataset, language in keys:
        sel = [i for i, u in enumerate(kept) if (u.dataset, u.language) == (dataset, language)]
        groups.append(group_report(
            [kept[i] for i in sel], [preds_only[i] for i in sel],
            dataset, language, zero_shot=dataset not in models.train_datasets,
        ))
    pooled_row = group_report(
        kept, preds_only, None, None,
        zero_shot=all(g.zero_shot for g in groups),
    )
    return EvalResult(
        groups=groups, pooled=pooled_row, skipped=skipped,
        predictions=predictions, classes=classes, embeddings=embeddings,
    )


# ---------------------------------------------------------------------------
# Embedding analyses
# ---------------------------------------------------------------------------

def project_2d(embeddings: np.ndarray) -> tuple[np.ndarray, tuple[float, float]]:
    """Project n x d points onto their top-2 principal components.

    Sign convention: each component's largest-magnitude loading is positive.
    Returns (n x 2 coordinates, non-increasing explained-variance fractions).
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] < 2:
        raise ValueError(f"need an n x d matrix with n >= 3, d >= 2, got {x.shape}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    if eigvals[0] <= 0.0:
        raise ValueError("rank-0 input: all points identical")
    components = eigvecs[:, order[:2]]
    for j in range(2):
        k = int(np.argmax(np.abs(components[:, j])))
        if components[k, j] < 0:
            components[:, j] = -components[:, j]
    coords = centered @ components
    total = eigvals.sum()
    explained = (float(eigvals[0] / total), float(eigvals[1] / total))
    return coords, explained


def silhouette_score(embeddings: np.ndarray, labels: Sequence[int]) -> float:
    """Mean silhouette with cosine distance.

    Requires >= 2 labels, each with >= 2 members. s(i) = (b - a)/max(a, b),
    defined as 0 when both mean distances vanish.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("embeddings and labels must align on the first axis")
    uniq, counts = np.unique(y, return_counts=True)
    if len(uniq) < 2:
        raise ValueError("silhouette requires at least two labels")
    if np.any(counts < 2):
        bad = uniq[counts < 2]
        raise ValueError(f"labels with a single member: {bad.tolist()}")
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError("zero vectors have no cosine distance")
    unit = x / norms[:, None]
    dist = 1.0 - np.clip(unit @ unit.T, -1.0, 1.0)
    np.fill_diagonal(dist, 0.0)

    n = x.shape[0]
    scores = np.zeros(n)
    masks = {int(l): y == l for l in uniq}
    for i in range(n):
        own = masks[int(y[i])].copy()
        own[i] = False
        a = float(dist[i, own].mean())
        b = min(float(dist[i, masks[int(l)]].mean()) for l in uniq if l != y[i])
        m = max(a, b)
        scores[i] = 0.0 if m == 0.0 else (b - a) / m
    return float(scores.mean())


# ---------------------------------------------------------------------------
# Mean-spectrogram consistency
# ---------------------------------------------------------------------------

def mean_spec_rows(
    manifest: Manifest,
    params: FrameParams,
    base_dir: str | Path | None = None,
    threads: int = 1,
) -> list[tuple[str, str, EmotionLabel, np.ndarray]]:
    """(id, language, emotion, mean log-mel vector) per manifest utterance."""
    if len(manifest) == 0:
        raise ValueError("empty manifest")
    if base_dir is None:
        base_dir = manifest_base_dir(manifest)
    base = Path(base_dir) if base_dir is not None else Path(".")

    def one(utt: Utterance) -> np.ndarray:
        wave, sr = read_wav_pcm16(base / utt.audio_path)
        if sr != params.sr:
            raise ValueError(f"{utt.id}: sample rate {sr} != frontend {params.sr}")
        return mean_spectrogram(log_mel(wave, params))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vecs = list(pool.map(one, manifest))
    else:
        vecs = [one(u) for u in manifest]
    return [(u.id, u.language, u.emotion, v) for u, v in zip(manifest, vecs)]


def _cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise ValueError("zero vector has no cosine distance")
    return float(1.0 - np.clip(a @ b / (na * nb), -1.0, 1.0))


def emotion_consistency(
    rows: Sequence[tuple[str, str, EmotionLabel, np.ndarray]],
) -> dict:
    """Per-emotion intra- vs inter-emotion distances between per-cell mean
    spectrogram vectors, where a cell is one (language, emotion) pair.

    intra(e): mean cosine distance between cells of emotion e across distinct
    language pairs. inter(e): mean distance from cells of emotion e to cells
    of every other emotion (all language pairs, same language included).
    """
    cells: dict[tuple[str, EmotionLabel], list[np.ndarray]] = {}
    for _, language, emotion, vec in rows:
        cells.setdefault((language, emotion), []).append(np.asarray(vec, dtype=np.float64))
    means = {key: np.mean(np.stack(v), axis=0) for key, v in cells.items()}
    languages = sorted({lang for lang, _ in means})
    emotions = sorted({emo for _, emo in means})
    if len(languages) < 2:
        raise ValueError("consistency analysis needs >= 2 languages")
    if len(emotions) < 2:
        raise ValueError("consistency analysis needs >= 2 emotions")

    out = {}
    for e in emotions:
        intra = [
            _cosine_distance(means[(la, e)], means[(lb, e)])
            for i, la in enumerate(languages)
            for lb in languages[i + 1:]
            if (la, e) in means and (lb, e) in means
        ]
        inter = [
            _cosine_distance(means[(la, e)], means[(lb, o)])
            for la in languages
            for lb in languages
            for o in emotions
            if o != e and (la, e) in means and (lb, o) in means
        ]
        if not intra or not inter:
            raise ValueError(f"emotion {e.text}: not enough cells for comparison")
        out[e.text] = {
            "intra": float(np.mean(intra)),
            "inter": float(np.mean(inter)),
        }
    return out


# ---------------------------------------------------------------------------
# Ablation grid
# ---------------------------------------------------------------------------

ABLATION_CELLS = (
    "stage1",
    "stage1_contrastive",
    "multilingual",
    "multilingual_contrastive",
    "two_stage",
    "two_stage_contrastive",
)


def ablation_cell_spec(cell: str) -> tuple[bool, tuple[int, ...]]:
    """(use_contrastive, stage sequence) for one named grid cell."""
    table = {
        "stage1": (False, (1,)),
        "stage1_contrastive": (True, (1,)),
        "multilingual": (False, (2,)),
        "multilingual_contrastive": (True, (2,)),
        "two_stage": (False, (1, 2)),
        "two_stage_contrastive": (True, (1, 2)),
    }
    if cell not in table:
        raise ValueError(f"unknown ablation cell {cell!r}; choose from {ABLATION_CELLS}")
    return table[cell]


def ablation_run(
    manifest: Manifest,
    holdout_language: str,
    base_cfg: TrainConfig,
    model_builder,
    seeds: Sequence[int] = (0, 1, 2),
    base_dir: str | Path | None = None,
    feature_cache: FeatureCache | None = None,
    anchor_language: str = "en",
    with_silhouette: bool = True,
) -> dict:
    """Train the six-cell grid over several seeds and evaluate every cell on
    the held-out language.

    ``model_builder(seed)`` must return fresh Models whose connector is
    seeded by ``seed`` (frozen parts identical across seeds). Cells: stage-1
    only (anchor language), multilingual single-stage, and the two-stage
    schedule, each with and without the contrastive term. Contrastive on/off
    twins share batch order by construction. Optionally also reports the
    held-out silhouette of pooled embeddings before and after the full
    two-stage contrastive training per seed.
    """
    languages = sorted({u.language for u in manifest})
    if holdout_language not in languages:
        raise ValueError(f"holdout language {holdout_language!r} not in manifest")
    train_languages = tuple(l for l in languages if l != holdout_language)
    if anchor_language not in train_languages:
        raise ValueError(
            f"anchor language {anchor_language!r} missing from training languages"
        )
    eval_entries = [u for u in manifest if u.language == holdout_language]
    eval_manifest = Manifest(entries=eval_entries, provenance=manifest.provenance)
    if base_dir is None:
        base_dir = manifest_base_dir(manifest)
    cache = feature_cache if feature_cache is not None else FeatureCache()

    stage_filters = {
        1: StageFilter(synthetic=None, languages=(anchor_language,), split=None),
        2: StageFilter(synthetic=None, languages=train_languages, split=None),
    }

    def eval_wa(models: Models, collect: bool) -> tuple[dict, list]:
        result = evaluate(
            models, eval_manifest, restrict=None, base_dir=base_dir,
            feature_cache=cache, collect_embeddings=collect,
        )
        p = result.pooled
        row = {"wa": p.wa, "ua": p.ua, "wf1": p.wf1, "precision": p.precision, "n": p.n}
        return row, result.embeddings

    def silhouette_of(embeddings: list) -> float:
        vecs = np.stack([vec for _, _, _, vec in embeddings])
        labels = [int(emo) for _, _, emo, _ in embeddings]
        return silhouette_score(vecs, labels)

    cells: dict[str, dict] = {name: {"cell": name, "per_seed": []} for name in ABLATION_CELLS}
    silhouettes = []
    for seed in seeds:
        untrained_sil = None
        if with_silhouette:
            probe = model_builder(seed)
            _, emb0 = eval_wa(probe, collect=True)
            untrained_sil = silhouette_of(emb0)
        for name in ABLATION_CELLS:
            use_contrastive, stage_seq = ablation_cell_spec(name)
            cfg = replace(
                base_cfg,
                seed=seed,
                use_contrastive=use_contrastive,
                two_stage=len(stage_seq) == 2,
                stage1=stage_filters[1],
                stage2=stage_filters[2],
            )
            models = model_builder(seed)
            optimizer = None
            for stage in stage_seq:
                _, optimizer = train_stage(
                    models, manifest, cfg, stage,
                    optimizer=optimizer, feature_cache=cache, base_dir=base_dir,
                )
            collect = with_silhouette and name == "two_stage_contrastive"
            row, emb = eval_wa(models, collect=collect)
            row["seed"] = seed
            cells[name]["per_seed"].append(row)
            if collect:
                silhouettes.append({
                    "seed": seed,
                    "untrained": untrained_sil,
                    "trained": silhouette_of(emb),
                })
    for name in ABLATION_CELLS:
        rows = cells[name]["per_seed"]
        cells[name]["mean_wa"] = float(np.mean([r["wa"] for r in rows]))
        cells[name]["mean_ua"] = float(np.mean([r["ua"] for r in rows]))
        cells[name]["mean_wf1"] = float(np.mean([r["wf1"] for r in rows]))
        cells[name]["mean_precision"] = float(np.mean([r["precision"] for r in rows]))
    return {
        "holdout_language": holdout_language,
        "anchor_language": anchor_language,
        "train_languages": list(train_languages),
        "seeds": list(seeds),
        "cells": [cells[name] for name in ABLATION_CELLS],
        "silhouette": silhouettes,
    }


# ---------------------------------------------------------------------------
# Artifact writers
# ---------------------------------------------------------------------------

def write_report_json(report: dict, path: str | Path) -> None:
    """Deterministic JSON: sorted keys, 2-space indent, trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_predictions_jsonl(predictions: Sequence[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in predictions:
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")


def write_vector_csv(
    rows: Sequence[tuple[str, str, EmotionLabel, np.ndarray]],
    path: str | Path,
    prefix: str,
) -> None:
    """[id, language, emotion, <prefix>0..<prefix>{d-1}] with full-precision
    floats; used for both embedding (e*) and mean-spectrogram (m*) exports."""
    if not rows:
        raise ValueError("nothing to export")
    d = len(rows[0][3])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "language", "emotion", *(f"{prefix}{i}" for i in range(d))])
        for utt_id, language, emotion, vec in rows:
            if len(vec) != d:
                raise ValueError(f"{utt_id}: vector length {len(vec)} != {d}")
            writer.writerow([utt_id, language, emotion.text, *(repr(float(v)) for v in vec)])


def write_projection_csv(
    rows: Sequence[tuple[str, str, EmotionLabel]],
    coords: np.ndarray,
    path: str | Path,
) -> None:
    """[id, language, emotion, x, y]."""
    if len(rows) != coords.shape[0]:
        raise ValueError("row metadata and coordinates must align")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "language", "emotion", "x", "y"])
        for (utt_id, language, emotion), (x, y) in zip(rows, coords):
            writer.writerow([utt_id, language, emotion.text, repr(float(x)), repr(float(y))])
