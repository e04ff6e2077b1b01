"""
What training does to the embedding space
=========================================

The connector pools its query outputs into one unit vector per utterance.
If the contrastive objective works, same-emotion utterances from different
languages should end up close and different emotions far apart — visible in
a cosine silhouette score and in a two-axis projection. This demo measures
both on a held-out language, before and after training.
"""

import tempfile
from pathlib import Path

import numpy as np

from emoalign.corpus import EMOTIONS, KNOWN_LANGUAGES, Manifest
from emoalign.decoder import DecoderConfig
from emoalign.encoder import EncoderConfig
from emoalign.evaluation import evaluate, project_2d, silhouette_score
from emoalign.frontend import FrameParams
from emoalign.losses import LossConfig
from emoalign.pipeline import FeatureCache, build_models
from emoalign.qformer import QFormerConfig
from emoalign.synth import SynthesisProfile, synth_generate
from emoalign.trainer import StageFilter, TrainConfig, train_stage

HOLDOUT = "it"

root = Path(tempfile.mkdtemp(prefix="demo_embed_"))
manifest = synth_generate(
    SynthesisProfile(seed=0),
    languages=KNOWN_LANGUAGES,
    emotions=EMOTIONS,
    per_cell=16,
    out_dir=root,
    threads=4,
)
heldout = Manifest(entries=[u for u in manifest if u.language == HOLDOUT])
train_langs = tuple(sorted({u.language for u in manifest} - {HOLDOUT}))
print(f"corpus: {len(manifest)} clips in {len(KNOWN_LANGUAGES)} languages; "
      f"holding out '{HOLDOUT}' ({len(heldout)} clips)")


def fresh(seed: int):
    return build_models(
        FrameParams(), EncoderConfig(), QFormerConfig(), DecoderConfig(), seed
    )


def heldout_embeddings(models):
    """(id, language, emotion, pooled unit vector) for every held-out clip."""
    result = evaluate(models, heldout, base_dir=root, feature_cache=cache,
                      collect_embeddings=True, threads=4)
    return result.embeddings, result.pooled.wa


def emotion_silhouette(embeddings) -> float:
    vecs = np.stack([vec for _, _, _, vec in embeddings])
    labels = [int(emotion) for _, _, emotion, _ in embeddings]
    return silhouette_score(vecs, labels)


# ---------------------------------------------------------------------------
# Before training: the random connector scatters emotions; the cosine
# silhouette over emotion groups sits near zero and accuracy below chance.
# ---------------------------------------------------------------------------

cache = FeatureCache()
models = fresh(0)
before, wa_before = heldout_embeddings(models)
print(f"\n{len(before)} held-out embeddings, dimension "
      f"{before[0][3].shape[0]}, all unit norm: "
      f"{np.allclose([np.linalg.norm(v) for _, _, _, v in before], 1.0)}")
print(f"before training: silhouette {emotion_silhouette(before):+.4f}, "
      f"WA {wa_before:.3f}")

# ---------------------------------------------------------------------------
# Train two stages on the other five languages, then measure again.
# ---------------------------------------------------------------------------

cfg = TrainConfig(
    steps=200,
    batch_size=8,
    seed=0,
    loss=LossConfig(ce_weight=5.0),
    stage1=StageFilter(languages=("en",)),
    stage2=StageFilter(languages=train_langs),
)
_, optimizer = train_stage(models, manifest, cfg, stage=1,
                           feature_cache=cache, base_dir=root)
train_stage(models, manifest, cfg, stage=2, optimizer=optimizer,
            feature_cache=cache, base_dir=root)

after, wa_after = heldout_embeddings(models)
print(f"after training:  silhouette {emotion_silhouette(after):+.4f}, "
      f"WA {wa_after:.3f}")

# ---------------------------------------------------------------------------
# Project to two axes (principal components of the centered embeddings) and
# render a text scatter: each held-out clip prints as one letter per
# emotion. Same letters clumping together is the training effect.
# ---------------------------------------------------------------------------

LETTER = {"neutral": "n", "happy": "h", "sad": "s", "angry": "a",
          "surprise": "u", "disgust": "d", "fear": "f"}


def scatter(embeddings, title: str) -> None:
    vecs = np.stack([vec for _, _, _, vec in embeddings])
    letters = [LETTER[emotion.text] for _, _, emotion, _ in embeddings]
    coords, explained = project_2d(vecs)
    print(f"\n{title} (axes carry {explained[0]:.2f}/{explained[1]:.2f} "
          f"of the variance):")
    height, width = 16, 56
    lo = coords.min(axis=0)
    span = coords.max(axis=0) - lo
    grid = [[" "] * width for _ in range(height)]
    for (x, y), letter in zip(coords, letters):
        col = int((x - lo[0]) / span[0] * (width - 1))
        row = int((y - lo[1]) / span[1] * (height - 1))
        grid[height - 1 - row][col] = letter
    print("\n".join("  |" + "".join(line) + "|" for line in grid))


legend = ", ".join(f"{LETTER[e.text]}={e.text}" for e in EMOTIONS)
print(f"\nlegend: {legend}")
scatter(before, "before training")
scatter(after, "after training")
