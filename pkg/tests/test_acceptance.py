"""Acceptance suite: nine system-level properties, one test and one printed
PASS/FAIL line each.

The heavy fixtures are shared: a desk-scale synthetic corpus (6 languages x
7 emotions x 60 clips), a warmed feature cache, and a single six-cell
ablation run over three connector seeds that powers both the trend and the
clustering criteria.
"""

import json
import time
from concurrent.futures import ThreadPoolExecutor
import numpy as np
import pytest

from conftest import make_utt
from emoalign.cli import main as cli_main
from emoalign.corpus import (
    EMOTIONS,
    KNOWN_LANGUAGES,
    FilterPolicy,
    Manifest,
    apply_filter_policy,
)
from emoalign.decoder import DecoderConfig
from emoalign.encoder import EncoderConfig
from emoalign.evaluation import (
    ablation_run,
    compute_metrics,
    emotion_consistency,
    evaluate,
    mean_spec_rows,
    write_report_json,
)
from emoalign.frontend import FrameParams
from emoalign.layers import params_checksum
from emoalign.losses import LossConfig, contrastive_loss
from emoalign.pipeline import FeatureCache, build_models, verify_frozen
from emoalign.qformer import QFormerConfig
from emoalign.synth import SynthesisProfile, synth_generate
from emoalign.trainer import (
    StageFilter,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train_stage,
)

HOLDOUT = "it"
CHANCE = 1.0 / 7.0


# ---------------------------------------------------------------------------
# shared fixtures
# ---------------------------------------------------------------------------


@pytest.fixture
def announce(capsys):
    """Print one live pass/fail line per criterion, bypassing capture."""

    def _line(number: int, name: str, ok: bool, detail: str = "") -> None:
        tail = f" -- {detail}" if detail else ""
        with capsys.disabled():
            print(f"\ncriterion {number} ({name}): {'PASS' if ok else 'FAIL'}{tail}")

    return _line


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk_corpus")
    manifest = synth_generate(
        SynthesisProfile(seed=0), KNOWN_LANGUAGES, EMOTIONS, 60, root, threads=4
    )
    return manifest, root


@pytest.fixture(scope="session")
def desk_models():
    def fresh(seed: int):
        return build_models(
            FrameParams(), EncoderConfig(), QFormerConfig(), DecoderConfig(), seed
        )

    return fresh


@pytest.fixture(scope="session")
def desk_cache(desk_corpus, desk_models):
    manifest, root = desk_corpus
    cache = FeatureCache()
    models = desk_models(0)
    with ThreadPoolExecutor(max_workers=4) as pool:
        list(pool.map(lambda u: cache.get(models, u, root), manifest))
    return cache


@pytest.fixture(scope="session")
def desk_ablation(desk_corpus, desk_models, desk_cache):
    """One six-cell x three-seed ablation over the desk corpus, holding out
    one language entirely; also collects before/after silhouettes."""
    manifest, root = desk_corpus
    base_cfg = TrainConfig(steps=200, loss=LossConfig(ce_weight=5.0))
    start = time.perf_counter()
    result = ablation_run(
        manifest,
        HOLDOUT,
        base_cfg,
        desk_models,
        seeds=(0, 1, 2),
        base_dir=root,
        feature_cache=desk_cache,
    )
    return result, time.perf_counter() - start


# ---------------------------------------------------------------------------
# 1. connector gradients
# ---------------------------------------------------------------------------


def test_criterion_1_gradient_check(announce, tmp_path):
    start = time.perf_counter()
    code = cli_main(["gradcheck", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - start
    blob = json.loads((tmp_path / "gradcheck.json").read_text())
    worst = max(run["worst_rel_err"] for run in blob["runs"])
    regimes = {(run["stage"], run["hinge"]) for run in blob["runs"]}
    ok = (
        code == 0
        and blob["passed"]
        and regimes == {(1, "active"), (1, "inactive"), (2, "active"), (2, "inactive")}
        and worst < 1e-6
        and elapsed < 60.0
    )
    announce(1, "connector gradient check", ok,
             f"worst rel err {worst:.2e} over 4 regimes in {elapsed:.0f}s")
    assert code == 0
    assert blob["passed"] is True
    assert regimes == {(1, "active"), (1, "inactive"), (2, "active"), (2, "inactive")}
    assert worst < 1e-6
    assert elapsed < 60.0


# ---------------------------------------------------------------------------
# 2. contrastive loss vs. double-loop reference
# ---------------------------------------------------------------------------


def _loop_contrastive(emb: np.ndarray, labels: np.ndarray, cfg: LossConfig) -> float:
    """Independent O(b^2) definition: sum over ordered pairs, self-pairs at
    similarity one."""
    total = 0.0
    b = emb.shape[0]
    for i in range(b):
        for j in range(b):
            if i == j:
                s = 1.0
            else:
                s = float(emb[i] @ emb[j] / (np.linalg.norm(emb[i]) * np.linalg.norm(emb[j])))
            if labels[i] == labels[j]:
                total += cfg.w1 * (1.0 - s)
            else:
                total += cfg.w2 * max(0.0, s - cfg.margin)
    return total


def test_criterion_2_contrastive_oracle(announce):
    rng = np.random.Generator(np.random.PCG64(2))
    worst = 0.0
    for trial in range(100):
        b = int(rng.integers(2, 17))
        d = int(rng.integers(2, 33))
        emb = rng.standard_normal((b, d))
        emb /= np.linalg.norm(emb, axis=1, keepdims=True)
        if trial % 3 == 0:
            labels = np.zeros(b, dtype=int)          # all-positive
        elif trial % 3 == 1:
            labels = np.arange(b)                    # all-negative
        else:
            labels = rng.integers(0, 4, b)
        cfg = LossConfig(
            w1=float(rng.uniform(0.1, 2.0)),
            w2=float(rng.uniform(0.1, 2.0)),
            margin=float(rng.uniform(0.0, 0.9)),
        )
        got, _ = contrastive_loss(emb, labels, cfg)
        worst = max(worst, abs(got - _loop_contrastive(emb, labels, cfg)))

    h = np.sqrt(2.0) / 2.0
    worked = np.array([[1.0, 0.0], [1.0, 0.0], [h, h]])
    worked_labels = np.array([0, 0, 1])
    worked_loss, _ = contrastive_loss(worked, worked_labels, LossConfig(margin=0.2))
    worked_err = abs(worked_loss - 2.0284271)

    ok = worst < 1e-12 and worked_err < 1e-6
    announce(2, "contrastive loss oracle", ok,
             f"max |vectorized - loop| {worst:.2e} over 100 batches, "
             f"worked example err {worked_err:.2e}")
    assert worst < 1e-12
    assert worked_err < 1e-6


# ---------------------------------------------------------------------------
# 3. metrics vs. per-definition brute force
# ---------------------------------------------------------------------------


def _metrics_by_definition(cm: np.ndarray) -> tuple[float, float, float, float]:
    cm = cm.astype(np.float64)
    k = cm.shape[0]
    total = cm.sum()
    wa = sum(cm[i, i] for i in range(k)) / total
    recalls, precisions, f1s, weights = [], [], [], []
    for c in range(k):
        support = cm[c, :].sum()
        predicted = cm[:, c].sum()
        recall = cm[c, c] / support if support > 0 else 0.0
        precision = cm[c, c] / predicted if predicted > 0 else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        recalls.append((recall, support > 0))
        precisions.append(precision)
        f1s.append(f1)
        weights.append(support / total)
    ua = float(np.mean([r for r, present in recalls if present]))
    wf1 = float(sum(w * f for w, f in zip(weights, f1s)))
    prec = float(sum(w * p for w, p in zip(weights, precisions)))
    return float(wa), ua, wf1, prec


def test_criterion_3_metrics_oracle(announce):
    rng = np.random.Generator(np.random.PCG64(3))
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(2, 9))
        cm = rng.integers(0, 20, (k, k))
        if rng.uniform() < 0.3:
            cm[rng.integers(0, k), :] = 0            # absent gold class
        if rng.uniform() < 0.3:
            cm[:, rng.integers(0, k)] = 0            # never-predicted class
        if cm.sum() == 0:
            cm[0, 0] = 1
        got = compute_metrics(cm)
        want = _metrics_by_definition(cm)
        worst = max(worst, *(abs(g - w) for g, w in
                             zip((got["wa"], got["ua"], got["wf1"], got["precision"]), want)))

    worked = np.array([[1, 1, 0], [0, 2, 0], [0, 0, 1]])
    got = compute_metrics(worked)
    worked_ok = (
        abs(got["wa"] - 0.8) < 1e-12
        and abs(got["ua"] - 0.8333333) < 1e-6
        and abs(got["wf1"] - 0.7866667) < 1e-6
    )

    ok = worst < 1e-12 and worked_ok
    announce(3, "metric oracle", ok,
             f"max deviation {worst:.2e} over 1000 random confusion matrices")
    assert worst < 1e-12
    assert worked_ok


# ---------------------------------------------------------------------------
# 4. filter boundaries
# ---------------------------------------------------------------------------


def test_criterion_4_filter_boundaries(announce):
    rows = [
        make_utt("dur-049", duration_s=0.49),
        make_utt("dur-050", duration_s=0.50),
        make_utt("dur-051", duration_s=0.51),
        make_utt("iemocap-20479", dataset="IEMOCAP", synthetic=False, size_bytes=20479),
        make_utt("iemocap-20480", dataset="IEMOCAP", synthetic=False, size_bytes=20480),
        make_utt("iemocap-20481", dataset="IEMOCAP", synthetic=False, size_bytes=20481),
        make_utt("mead-51199", dataset="MEAD", synthetic=False, size_bytes=51199),
        make_utt("mead-51200", dataset="MEAD", synthetic=False, size_bytes=51200),
        make_utt("mead-51201", dataset="MEAD", synthetic=False, size_bytes=51201),
    ]
    kept, rejected, report = apply_filter_policy(Manifest(entries=rows), FilterPolicy())
    got_kept = [u.id for u in kept]
    got_rejected = [u.id for u in rejected]
    want_kept = ["dur-050", "dur-051", "iemocap-20480", "iemocap-20481",
                 "mead-51200", "mead-51201"]
    want_rejected = ["dur-049", "iemocap-20479", "mead-51199"]
    counts = report.to_dict()
    ok = (
        got_kept == want_kept
        and got_rejected == want_rejected
        and counts == {"input": 9, "kept": 6, "rejected_duration": 1, "rejected_size": 2}
    )
    announce(4, "filter boundary fidelity", ok,
             f"kept {counts['kept']}/9, duration {counts['rejected_duration']}, "
             f"size {counts['rejected_size']}")
    assert got_kept == want_kept
    assert got_rejected == want_rejected
    assert counts == {"input": 9, "kept": 6, "rejected_duration": 1, "rejected_size": 2}


# ---------------------------------------------------------------------------
# 5. frozen contract over a 200-step run
# ---------------------------------------------------------------------------


def test_criterion_5_frozen_contract(announce, desk_corpus, desk_models, desk_cache):
    manifest, root = desk_corpus
    models = desk_models(0)
    enc0 = models.encoder.checksum
    dec0 = models.decoder.checksum
    before = {name: p.copy() for name, p in models.qformer.named_parameters()}

    cfg = TrainConfig(steps=200, loss=LossConfig(ce_weight=5.0),
                      stage1=StageFilter(languages=("en",)))
    train_stage(models, manifest, cfg, 1, feature_cache=desk_cache, base_dir=root)

    verify_frozen(models)  # raises on any encoder/decoder drift
    frozen_ok = (params_checksum(models.encoder) == enc0
                 and params_checksum(models.decoder) == dec0)
    changed = [name for name, p in models.qformer.named_parameters()
               if not np.array_equal(before[name], p)]
    n_total = len(before)
    ok = frozen_ok and len(changed) > 0
    announce(5, "frozen encoder/decoder contract", ok,
             f"checksums unchanged after 200 steps; "
             f"{len(changed)}/{n_total} connector tensors updated")
    assert frozen_ok
    assert changed


# ---------------------------------------------------------------------------
# 6. directional ablation trend
# ---------------------------------------------------------------------------


def test_criterion_6_ablation_trend(announce, desk_ablation):
    result, elapsed = desk_ablation
    cells = {c["cell"]: c for c in result["cells"]}
    pairs = list(zip(cells["multilingual"]["per_seed"],
                     cells["multilingual_contrastive"]["per_seed"]))
    wins = sum(1 for base, contrastive in pairs if contrastive["wa"] > base["wa"])
    best = max(cells, key=lambda name: cells[name]["mean_wa"])
    ok = wins >= 2 and best == "two_stage_contrastive" and elapsed < 900.0
    announce(6, "ablation trend", ok,
             f"contrastive wins {wins}/3 seeds; best cell {best} "
             f"(mean WA {cells[best]['mean_wa']:.3f}) in {elapsed:.0f}s")
    assert wins >= 2
    assert best == "two_stage_contrastive"
    assert elapsed < 900.0


# ---------------------------------------------------------------------------
# 7. held-out clustering improves with training
# ---------------------------------------------------------------------------


def test_criterion_7_silhouette_improvement(announce, desk_ablation):
    result, _ = desk_ablation
    runs = result["silhouette"]
    wins = sum(1 for r in runs if r["trained"] > r["untrained"])
    detail = ", ".join(
        f"s{r['seed']}: {r['untrained']:.3f}->{r['trained']:.3f}" for r in runs
    )
    ok = len(runs) == 3 and wins >= 2
    announce(7, "held-out emotion clustering", ok, detail)
    assert len(runs) == 3
    assert wins >= 2


# ---------------------------------------------------------------------------
# 8. cross-language emotion consistency of the generator
# ---------------------------------------------------------------------------


def test_criterion_8_emotion_consistency(announce, desk_corpus):
    manifest, root = desk_corpus
    rows = mean_spec_rows(manifest, FrameParams(), base_dir=root, threads=4)
    consistency = emotion_consistency(rows)
    ratios = {e: consistency[e]["intra"] / consistency[e]["inter"] for e in consistency}
    worst_emotion = max(ratios, key=ratios.get)
    ok = all(consistency[e]["intra"] < consistency[e]["inter"] for e in consistency)
    announce(8, "cross-language emotion consistency", ok,
             f"worst intra/inter ratio {ratios[worst_emotion]:.3f} ({worst_emotion}), "
             f"{len(consistency)} emotions")
    assert ok


# ---------------------------------------------------------------------------
# 9. determinism, round trips, and chance-level calibration
# ---------------------------------------------------------------------------


def test_criterion_9_determinism_and_calibration(
    announce, desk_corpus, desk_models, desk_cache, tmp_path
):
    manifest, root = desk_corpus
    holdout = Manifest(entries=[u for u in manifest if u.language == HOLDOUT])
    cfg = TrainConfig(steps=50, loss=LossConfig(ce_weight=5.0),
                      stage1=StageFilter(languages=("en",)))

    def one_run(tag: str) -> tuple[bytes, bytes]:
        models = desk_models(0)
        rows, optimizer = train_stage(
            models, manifest, cfg, 1, feature_cache=desk_cache, base_dir=root
        )
        ckpt = tmp_path / f"ckpt_{tag}.bin"
        save_checkpoint(ckpt, models, cfg, optimizer, stage=1, step=len(rows))
        result = evaluate(models, holdout, base_dir=root, feature_cache=desk_cache)
        report = tmp_path / f"report_{tag}.json"
        write_report_json(
            {"skipped": result.skipped,
             "groups": [g.to_dict() for g in result.groups],
             "pooled": result.pooled.to_dict()},
            report,
        )
        return ckpt.read_bytes(), report.read_bytes()

    ckpt_a, report_a = one_run("a")
    ckpt_b, report_b = one_run("b")
    repeat_ok = ckpt_a == ckpt_b and report_a == report_b

    loaded = load_checkpoint(tmp_path / "ckpt_a.bin")
    resaved = tmp_path / "ckpt_resaved.bin"
    save_checkpoint(resaved, loaded.models, loaded.cfg, loaded.optimizer,
                    stage=loaded.header["stage"], step=loaded.header["step"])
    roundtrip_ok = resaved.read_bytes() == ckpt_a

    accuracies = []
    for seed in range(5):
        result = evaluate(desk_models(seed), holdout, base_dir=root,
                          feature_cache=desk_cache)
        accuracies.append(result.pooled.wa)
    accuracies = np.asarray(accuracies)
    spread = 3.0 * accuracies.std(ddof=1) / np.sqrt(len(accuracies))
    chance_ok = abs(accuracies.mean() - CHANCE) <= spread

    ok = repeat_ok and roundtrip_ok and chance_ok
    announce(
        9, "determinism and calibration", ok,
        f"repeat bytes {'equal' if repeat_ok else 'DIFFER'}; "
        f"round trip {'equal' if roundtrip_ok else 'DIFFER'}; "
        f"untrained WA {accuracies.mean():.4f} vs chance {CHANCE:.4f} "
        f"(band {spread:.4f})",
    )
    assert repeat_ok
    assert roundtrip_ok
    assert chance_ok
