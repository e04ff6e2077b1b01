"""Two-stage training of the connector: stage 1 on human-style English data,
stage 2 on synthetic multilingual data. Only connector tensors are updated
(AdamW with decoupled weight decay); encoder and decoder stay frozen and are
checksum-verified around every stage.

Also houses the binary checkpoint format and the central-finite-difference
gradient checker that validates the whole loss implementation.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import EmotionLabel, Manifest, Utterance
from .decoder import DecoderConfig, init_decoder
from .encoder import EncoderConfig, init_encoder
from .frontend import FrameParams
from .losses import LossConfig, ce_loss, contrastive_loss, stage_loss
from .pipeline import (
    FeatureCache,
    Models,
    backward_utterance,
    forward_utterance,
    manifest_base_dir,
    verify_frozen,
)
from .qformer import QFormerConfig, init_qformer

__all__ = [
    "NumericCheckError",
    "StageFilter",
    "TrainConfig",
    "AdamW",
    "make_batches",
    "train_step",
    "train_stage",
    "save_checkpoint",
    "load_checkpoint",
    "LoadedCheckpoint",
    "grad_check",
    "CHECKPOINT_MAGIC",
]

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"EMAL"
CHECKPOINT_VERSION = 1


class NumericCheckError(RuntimeError):
    """A numeric validation failed (gradient check tolerance, NaN loss)."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StageFilter:
    """Manifest selector for one training stage; None fields mean 'any'."""

    synthetic: bool | None = None
    languages: tuple[str, ...] | None = None
    datasets: tuple[str, ...] | None = None
    split: str | None = "train"

    def matches(self, utt: Utterance) -> bool:
        if self.synthetic is not None and utt.synthetic != self.synthetic:
            return False
        if self.languages is not None and utt.language not in self.languages:
            return False
        if self.datasets is not None and utt.dataset not in self.datasets:
            return False
        if self.split is not None and utt.split != self.split:
            return False
        return True

    def apply(self, manifest: Manifest) -> list[Utterance]:
        return [u for u in manifest if self.matches(u)]

    def to_dict(self) -> dict:
        return {
            "synthetic": self.synthetic,
            "languages": list(self.languages) if self.languages is not None else None,
            "datasets": list(self.datasets) if self.datasets is not None else None,
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StageFilter":
        return cls(
            synthetic=d.get("synthetic"),
            languages=tuple(d["languages"]) if d.get("languages") is not None else None,
            datasets=tuple(d["datasets"]) if d.get("datasets") is not None else None,
            split=d.get("split"),
        )


def _default_stage1() -> StageFilter:
    return StageFilter(synthetic=False, languages=("en",))


def _default_stage2() -> StageFilter:
    return StageFilter(synthetic=True)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop settings. Desk-scale lr default is 1e-3; a
    full-scale preset would use 1e-5. ``lr=0`` is allowed (null update)."""

    lr: float = 1e-3
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    steps: int = 200
    seed: int = 0
    grad_clip: float = 5.0
    use_contrastive: bool = True
    two_stage: bool = True
    loss: LossConfig = field(default_factory=LossConfig)
    stage1: StageFilter = field(default_factory=_default_stage1)
    stage2: StageFilter = field(default_factory=_default_stage2)

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must be in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (contrastive pairs need it)")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")

    def stage_filter(self, stage: int) -> StageFilter:
        if stage == 1:
            return self.stage1
        if stage == 2:
            return self.stage2
        raise ValueError(f"stage must be 1 or 2, got {stage}")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "batch_size": self.batch_size,
            "steps": self.steps,
            "seed": self.seed,
            "grad_clip": self.grad_clip,
            "use_contrastive": self.use_contrastive,
            "two_stage": self.two_stage,
            "loss": self.loss.to_dict(),
            "stage1": self.stage1.to_dict(),
            "stage2": self.stage2.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        loss = LossConfig(**d.pop("loss"))
        stage1 = StageFilter.from_dict(d.pop("stage1"))
        stage2 = StageFilter.from_dict(d.pop("stage2"))
        return cls(loss=loss, stage1=stage1, stage2=stage2, **d)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class AdamW:
    """AdamW with decoupled weight decay and global-norm gradient clipping.

    Update: p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p).
    """

    def __init__(self, cfg: TrainConfig) -> None:
        self.cfg = cfg
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(
        self,
        named_params: Sequence[tuple[str, np.ndarray]],
        named_grads: Sequence[tuple[str, np.ndarray]],
    ) -> float:
        """One update over matching (name, tensor) sequences; returns the
        pre-clip global gradient norm."""
        cfg = self.cfg
        grads = dict(named_grads)
        global_sq = 0.0
        for name, _ in named_params:
            g = grads[name]
            global_sq += float((g * g).sum())
        global_norm = global_sq ** 0.5
        scale = 1.0
        if global_norm > cfg.grad_clip:
            scale = cfg.grad_clip / global_norm
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for name, p in named_params:
            g = grads[name] * scale
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p -= cfg.lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p)
        return global_norm


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

def make_batches(
    entries: Sequence[Utterance], batch_size: int, seed: int, n_batches: int
) -> tuple[list[list[int]], bool]:
    """Deterministic index batches; every batch mixes >= 2 emotion labels
    whenever the pool has >= 2. Returns (batches, single_label_pool).

    Batches pair two emotion labels and split the slots between them, which
    maximizes the number of same-label (pull) and cross-label (push) pairs
    the contrastive term sees per step; languages mix freely within a label.
    """
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    if len(entries) < batch_size:
        raise ValueError(
            f"pool of {len(entries)} utterances is smaller than batch_size {batch_size}"
        )
    labels = np.array([int(u.emotion) for u in entries])
    by_label: dict[int, np.ndarray] = {
        int(l): np.flatnonzero(labels == l) for l in np.unique(labels)
    }
    single_label = len(by_label) < 2
    if single_label:
        log.warning("batch pool has a single emotion label; contrastive negatives absent")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, len(entries)])))
    n = len(entries)
    batches: list[list[int]] = []
    for _ in range(n_batches):
        if single_label:
            batch = [int(i) for i in rng.choice(n, size=batch_size, replace=False)]
        else:
            two = rng.choice(sorted(by_label), size=2, replace=False)
            half = batch_size // 2
            batch = []
            for label, quota in zip(two, (half, batch_size - half)):
                pool = by_label[int(label)]
                take = min(quota, len(pool))
                batch.extend(int(i) for i in rng.choice(pool, size=take, replace=False))
            if len(batch) < batch_size:
                rest_pool = np.setdiff1d(np.arange(n), np.array(batch))
                batch.extend(
                    int(i) for i in
                    rng.choice(rest_pool, size=batch_size - len(batch), replace=False)
                )
        batches.append(batch)
    return batches, single_label


# ---------------------------------------------------------------------------
# Steps and stages
# ---------------------------------------------------------------------------

def _batch_forward_backward(
    models: Models,
    batch: Sequence[tuple[np.ndarray, EmotionLabel]],
    cfg: TrainConfig,
    accumulate: bool = True,
) -> dict:
    """Forward the batch, compute stage loss, optionally backpropagate into
    the connector gradient buffers. Returns {lec, ce, total}."""
    fwds = [forward_utterance(models, features) for features, _ in batch]
    labels = np.array([int(label) for _, label in batch])

    if cfg.use_contrastive and len(batch) >= 2:
        embeddings = np.stack([f.pooled for f in fwds])
        lec, d_emb = contrastive_loss(embeddings, labels, cfg.loss)
    else:
        lec, d_emb = 0.0, None

    ce_sum = 0.0
    d_logit_list = []
    for fwd, (_, label) in zip(fwds, batch):
        target = models.vocab.emotion_ids[int(label)]
        ce_i, d_logits = ce_loss(fwd.logits, target)
        ce_sum += ce_i
        d_logit_list.append(d_logits)
    ce = ce_sum / len(batch)
    total = stage_loss(lec, ce, cfg.loss)
    if not np.isfinite(total):
        raise NumericCheckError(
            f"non-finite loss: lec={lec}, ce={ce} (diverged or bad inputs)"
        )
    if accumulate:
        ce_scale = cfg.loss.ce_weight / len(batch)
        for i, fwd in enumerate(fwds):
            backward_utterance(
                models,
                fwd,
                d_pooled=None if d_emb is None else d_emb[i],
                d_logits=ce_scale * d_logit_list[i],
            )
    return {"lec": float(lec), "ce": float(ce), "total": float(total)}


def train_step(
    models: Models,
    batch: Sequence[tuple[np.ndarray, EmotionLabel]],
    cfg: TrainConfig,
    optimizer: AdamW,
) -> dict:
    """One gradient step on the connector; returns the loss log entry."""
    models.qformer.zero_gradients()
    models.decoder.zero_gradients()  # side-effect buffers; never consumed
    entry = _batch_forward_backward(models, batch, cfg, accumulate=True)
    optimizer.step(
        list(models.qformer.named_parameters()),
        list(models.qformer.named_gradients()),
    )
    return entry


def train_stage(
    models: Models,
    manifest: Manifest,
    cfg: TrainConfig,
    stage: int,
    optimizer: AdamW | None = None,
    feature_cache: FeatureCache | None = None,
    base_dir: str | Path | None = None,
) -> tuple[list[dict], AdamW]:
    """Run one training stage over the stage-filtered manifest.

    Stage 2 with ``two_stage=True`` requires the models to have completed
    stage 1 (fresh models raise). Returns (per-step log rows, optimizer).
    """
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    if stage == 2 and cfg.two_stage and models.last_stage < 1:
        raise ValueError(
            "stage 2 with two_stage=true requires a stage-1 trained checkpoint"
        )
    pool = cfg.stage_filter(stage).apply(manifest)
    if not pool:
        raise ValueError(f"stage {stage} filter selected no utterances")
    if base_dir is None:
        base_dir = manifest_base_dir(manifest)
    cache = feature_cache if feature_cache is not None else FeatureCache()
    optimizer = optimizer if optimizer is not None else AdamW(cfg)

    enc_sum, dec_sum = models.encoder.checksum, models.decoder.checksum
    rows: list[dict] = []
    if cfg.steps > 0:
        batches, _ = make_batches(pool, cfg.batch_size, cfg.seed + stage, cfg.steps)
        for step, batch_idx in enumerate(batches, start=1):
            batch = [(cache.get(models, pool[i], base_dir), pool[i].emotion) for i in batch_idx]
            entry = train_step(models, batch, cfg, optimizer)
            rows.append({"step": step, "lec": entry["lec"], "ce": entry["ce"],
                         "total": entry["total"]})

    verify_frozen(models)
    if models.encoder.checksum != enc_sum or models.decoder.checksum != dec_sum:
        raise RuntimeError("frozen checksum changed during training")
    models.last_stage = max(models.last_stage, stage)
    datasets = sorted(set(models.train_datasets) | {u.dataset for u in pool})
    languages = sorted(set(models.train_languages) | {u.language for u in pool})
    models.train_datasets = tuple(datasets)
    models.train_languages = tuple(languages)
    return rows, optimizer


def write_train_log(rows: Sequence[dict], path: str | Path) -> None:
    """JSONL, one {step, lec, ce, total} object per training step."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(
                {"step": row["step"], "lec": row["lec"], "ce": row["ce"],
                 "total": row["total"]}))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------
#
# Little-endian binary: magic "EMAL", u32 format version, u64 header length,
# UTF-8 canonical JSON header, then the raw float64 bytes of every tensor in
# the header's declared order (encoder, connector, decoder, optimizer m, v).

def _canonical_json(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _checkpoint_tensors(models: Models, optimizer: AdamW) -> list[tuple[str, np.ndarray]]:
    tensors: list[tuple[str, np.ndarray]] = []
    tensors.extend((f"encoder.{n}", p) for n, p in models.encoder.named_parameters())
    tensors.extend((f"qformer.{n}", p) for n, p in models.qformer.named_parameters())
    tensors.extend((f"decoder.{n}", p) for n, p in models.decoder.named_parameters())
    conn = list(models.qformer.named_parameters())
    tensors.extend((f"opt.m.{n}", optimizer.m.get(n, np.zeros_like(p))) for n, p in conn)
    tensors.extend((f"opt.v.{n}", optimizer.v.get(n, np.zeros_like(p))) for n, p in conn)
    return tensors


def save_checkpoint(
    path: str | Path,
    models: Models,
    cfg: TrainConfig,
    optimizer: AdamW,
    stage: int,
    step: int,
    extra_config: dict | None = None,
) -> None:
    """Serialize models + optimizer into the binary checkpoint format."""
    tensors = _checkpoint_tensors(models, optimizer)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "stage": stage,
        "step": step,
        "seed": cfg.seed,
        "connector_seed": models.connector_seed,
        "opt_step": optimizer.t,
        "last_stage": models.last_stage,
        "train_datasets": list(models.train_datasets),
        "train_languages": list(models.train_languages),
        "checksums": {
            "encoder": models.encoder.checksum,
            "decoder": models.decoder.checksum,
        },
        "configs": {
            "frontend": models.frame_params.to_dict(),
            "encoder": models.encoder.cfg.to_dict(),
            "qformer": models.qformer.cfg.to_dict(),
            "decoder": models.decoder.cfg.to_dict(),
            "train": cfg.to_dict(),
        },
        "tensors": [[name, list(t.shape)] for name, t in tensors],
    }
    if extra_config is not None:
        header["extra_config"] = extra_config
    blob = _canonical_json(header)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


@dataclass
class LoadedCheckpoint:
    models: Models
    cfg: TrainConfig
    optimizer: AdamW
    header: dict


def load_checkpoint(path: str | Path) -> LoadedCheckpoint:
    """Rebuild models and optimizer; verifies magic, shapes, and checksums."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic {data[:4]!r})")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", data, 8)
    header = json.loads(data[16:16 + header_len].decode("utf-8"))
    configs = header["configs"]
    cfg = TrainConfig.from_dict(configs["train"])
    models = Models(
        frame_params=FrameParams(**configs["frontend"]),
        encoder=init_encoder(EncoderConfig(**configs["encoder"])),
        qformer=init_qformer(QFormerConfig(**configs["qformer"]), header["connector_seed"]),
        decoder=init_decoder(DecoderConfig(**configs["decoder"])),
        connector_seed=header["connector_seed"],
        train_datasets=tuple(header["train_datasets"]),
        train_languages=tuple(header["train_languages"]),
        last_stage=header["last_stage"],
    )
    optimizer = AdamW(cfg)
    optimizer.t = header["opt_step"]

    params = {}
    params.update((f"encoder.{n}", p) for n, p in models.encoder.named_parameters())
    params.update((f"qformer.{n}", p) for n, p in models.qformer.named_parameters())
    params.update((f"decoder.{n}", p) for n, p in models.decoder.named_parameters())

    offset = 16 + header_len
    for name, shape in header["tensors"]:
        shape = tuple(shape)
        count = int(np.prod(shape)) if shape else 1
        array = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += count * 8
        if name.startswith("opt.m."):
            optimizer.m[name[len("opt.m."):]] = array.copy()
        elif name.startswith("opt.v."):
            optimizer.v[name[len("opt.v."):]] = array.copy()
        else:
            if name not in params:
                raise ValueError(f"{path}: unknown tensor {name!r} in checkpoint")
            if params[name].shape != shape:
                raise ValueError(
                    f"{path}: tensor {name!r} shape {shape} != expected {params[name].shape}"
                )
            params[name][...] = array
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes after declared tensors")

    # Frozen integrity: recomputed checksums must match the header.
    from .layers import params_checksum  # local import to avoid cycle at top

    if params_checksum(models.encoder) != header["checksums"]["encoder"]:
        raise ValueError(f"{path}: encoder checksum mismatch")
    if params_checksum(models.decoder) != header["checksums"]["decoder"]:
        raise ValueError(f"{path}: decoder checksum mismatch")
    models.encoder.checksum = header["checksums"]["encoder"]
    models.decoder.checksum = header["checksums"]["decoder"]
    return LoadedCheckpoint(models=models, cfg=cfg, optimizer=optimizer, header=header)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def grad_check(
    models: Models,
    batch: Sequence[tuple[np.ndarray, EmotionLabel]],
    cfg: TrainConfig,
    eps: float = 1e-5,
    tol: float = 1e-6,
) -> list[dict]:
    """Central finite differences over every element of every connector tensor
    against the analytic gradient of the batch stage loss.

    A tensor passes when its max relative error is below ``tol``; near-zero
    gradient tensors pass on an absolute guard (both sides below ~1e-7, where
    central differences bottom out in double precision).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    models.qformer.zero_gradients()
    models.decoder.zero_gradients()
    _batch_forward_backward(models, batch, cfg, accumulate=True)
    analytic = {n: g.copy() for n, g in models.qformer.named_gradients()}

    def batch_loss() -> float:
        return _batch_forward_backward(models, batch, cfg, accumulate=False)["total"]

    reports = []
    for name, p in models.qformer.named_parameters():
        numeric = np.zeros_like(p)
        flat_p = p.reshape(-1)
        flat_n = numeric.reshape(-1)
        for i in range(flat_p.size):
            original = flat_p[i]
            flat_p[i] = original + eps
            loss_plus = batch_loss()
            flat_p[i] = original - eps
            loss_minus = batch_loss()
            flat_p[i] = original
            flat_n[i] = (loss_plus - loss_minus) / (2.0 * eps)
        a = analytic[name]
        abs_diff = float(np.max(np.abs(a - numeric)))
        denom = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(a))))
        rel = abs_diff / denom if denom > 0 else 0.0
        passed = rel < tol or abs_diff < 1e-7
        reports.append({
            "tensor": name,
            "size": int(p.size),
            "max_abs_diff": abs_diff,
            "max_rel_err": rel,
            "passed": bool(passed),
        })
    return reports
