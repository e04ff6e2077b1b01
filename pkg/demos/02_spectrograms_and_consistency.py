"""
From waveform to log-mel, and why the emotions are learnable
============================================================

The audio frontend is the only part of the system that touches raw samples:
STFT magnitudes through a mel filterbank into log space. This demo walks a
single clip through each stage, then averages spectrograms over time to show
that the same emotion lands in nearby spectral shapes across languages while
different emotions stay apart — the property that makes zero-shot transfer
across languages possible at all.
"""

import tempfile
from pathlib import Path

import numpy as np

from emoalign.corpus import EMOTIONS
from emoalign.evaluation import emotion_consistency, mean_spec_rows
from emoalign.frontend import (
    FrameParams,
    hz_to_mel,
    log_mel,
    mean_spectrogram,
    mel_filterbank,
    stft_magnitude,
)
from emoalign.synth import SynthesisProfile, synth_generate
from emoalign.wavio import read_wav_pcm16

root = Path(tempfile.mkdtemp(prefix="demo_frontend_"))
manifest = synth_generate(
    SynthesisProfile(seed=0),
    languages=("en", "fr", "de", "es"),
    emotions=EMOTIONS,
    per_cell=4,
    out_dir=root,
    threads=4,
)

# ---------------------------------------------------------------------------
# One clip, stage by stage. The frame grammar is 32 ms windows every 10 ms;
# a 16 kHz clip of n samples yields 1 + floor((n - 512) / 160) frames.
# ---------------------------------------------------------------------------

clip = manifest[0]
samples, sr = read_wav_pcm16(root / clip.audio_path)
params = FrameParams()
print(f"clip {clip.id}: {samples.shape[0]} samples at {sr} Hz "
      f"({clip.duration_s:.2f} s, emotion={clip.emotion.text})")

magnitudes = stft_magnitude(samples, params)
print(f"stft:    {magnitudes.shape}  (frames x fft bins)")

fb = mel_filterbank(params)
print(f"mel fb:  {fb.shape}  (mel bands x fft bins), "
      f"1 kHz sits at {hz_to_mel(1000.0):.1f} mel")

features = log_mel(samples, params)
print(f"log-mel: {features.values.shape}, range "
      f"[{features.values.min():.2f}, {features.values.max():.2f}]")

# The floor is exact: silence maps to log(1e-10) everywhere.
silence = log_mel(np.zeros(16000), params)
print(f"silence floor: {silence.values.max():.6f} (= log 1e-10)")

# ---------------------------------------------------------------------------
# Mean spectrograms. Collapsing time gives one vector per clip — a crude
# but honest summary of spectral shape. A coarse text rendering of the mel
# energy profile already separates a happy clip from a sad one.
# ---------------------------------------------------------------------------

def profile(emotion: str) -> np.ndarray:
    utt = next(u for u in manifest if u.language == "en" and u.emotion.text == emotion)
    return mean_spectrogram(log_mel(read_wav_pcm16(root / utt.audio_path)[0], params))

print("\nmean log-mel profile (x = mel band, rescaled to 0-9):")
for emotion in ("happy", "sad"):
    vec = profile(emotion)
    scaled = (9 * (vec - vec.min()) / (vec.max() - vec.min())).astype(int)
    print(f"  {emotion:6s} " + "".join(str(d) for d in scaled))

# ---------------------------------------------------------------------------
# Cross-language consistency. For each (language, emotion) cell, average the
# mean spectrograms, then compare cosine distances: within an emotion across
# languages (intra) versus against all other emotions (inter). Intra < inter
# for every emotion means emotion identity survives the language change.
# ---------------------------------------------------------------------------

rows = mean_spec_rows(manifest, params, base_dir=root, threads=4)
consistency = emotion_consistency(rows)

print(f"\n{'emotion':10s} {'intra':>8s} {'inter':>8s}  separated?")
for emotion in sorted(consistency):
    cell = consistency[emotion]
    verdict = "yes" if cell["intra"] < cell["inter"] else "NO"
    print(f"{emotion:10s} {cell['intra']:8.4f} {cell['inter']:8.4f}  {verdict}")
