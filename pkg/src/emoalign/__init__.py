"""Zero-shot multilingual speech emotion recognition at desk scale.

A frozen seeded audio encoder and a frozen emotion-word decoder sandwich the
only trainable part: a query-transformer connector trained in two stages with
an emotion-aware contrastive objective plus constrained-decoding cross
entropy. Ships with a procedural multilingual synthetic corpus, a filtering
and statistics pipeline, and an evaluation/ablation harness. Everything runs
on numpy in double precision with manual backpropagation, deterministically
under explicit seeds.
"""

from .corpus import (
    EMOTIONS,
    KNOWN_LANGUAGES,
    EmotionLabel,
    FilterPolicy,
    Manifest,
    ManifestError,
    Utterance,
    apply_filter_policy,
    corpus_stats,
    load_manifest,
    save_manifest,
    split_assign,
)
from .frontend import FrameParams, LogMelSpec, log_mel, mean_spectrogram
from .losses import LossConfig, ce_loss, contrastive_loss, stage_loss
from .encoder import EncoderConfig, encode, init_encoder
from .qformer import QFormerConfig, init_qformer, pool_queries, qformer_forward
from .decoder import DecoderConfig, Vocab, build_vocab, init_decoder, predict_emotion
from .synth import Prosody, SynthesisProfile, Timbre, synth_generate, synth_waveform
from .pipeline import FeatureCache, Models, build_models, forward_utterance
from .trainer import (
    AdamW,
    NumericCheckError,
    StageFilter,
    TrainConfig,
    grad_check,
    load_checkpoint,
    make_batches,
    save_checkpoint,
    train_stage,
    train_step,
)
from .evaluation import (
    ABLATION_CELLS,
    FOUR_CLASSES,
    ablation_run,
    compute_metrics,
    confusion_from_pairs,
    emotion_consistency,
    evaluate,
    mean_spec_rows,
    project_2d,
    silhouette_score,
)
from .config import ConfigError, EvalConfig, RunConfig, SynthConfig, load_run_config

__version__ = "0.1.0"
