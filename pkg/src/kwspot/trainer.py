"""Training loop: batch pairing, curriculum stages, Adam schedule, noise.

An epoch shuffles clips (seeded), partitions them into 40-clip batches,
pairs each clip with all its eligible keywords plus an equal number of
random negatives, and applies one Adam step per batch. Every per-epoch
random draw is derived from (seed, epoch), so a resumed run continues the
exact stream of the unbroken one.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigMismatchError, NumericError
from .gradcore import Tape, Tensor, adam_step, ops
from .gradcore.container import read_tensors
from .kwsnet import (KwsModel, SamplePair, kws_loss, load_checkpoint,
                     save_checkpoint)
from .pronlex import Lexicon
from .synthcorpus import (ClipRecord, Corpus, NoiseSpec, babble_for,
                          load_clip_features, mix_noise_at_snr)

STAGE_SCHEDULES = {
    # stage: (base learning rate, halve every N epochs)
    "pretrain": (1e-3, 10),
    "finetune": (1e-4, 20),
}


@dataclass
class TrainConfig:
    stage: str = "finetune"
    batch_clips: int = 40
    epochs: int = 40                      # desk-scale cap; the full run is 100
    base_lr: Optional[float] = None       # None = stage default
    use_boundaries: bool = True           # off reproduces the "no LOC" ablation
    noise: Optional[NoiseSpec] = None
    noise_in_pretrain: bool = True
    keyword_min_np: int = 6
    val_fraction: float = 0.1
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.stage not in STAGE_SCHEDULES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if not 1 <= self.epochs <= 100:
            raise ValueError(f"epochs must be in 1..100, got {self.epochs}")
        lr = self.base_lr or STAGE_SCHEDULES[self.stage][0]
        if lr <= 0:
            raise ValueError("learning rate must be positive")


def lr_schedule(stage: str, epoch: int, base_lr: Optional[float] = None) -> float:
    """Learning rate for a 1-indexed epoch: halved every N epochs by stage."""
    base, halve_every = STAGE_SCHEDULES[stage]
    if base_lr is not None:
        base = base_lr
    return base * 0.5 ** ((epoch - 1) // halve_every)


@dataclass
class Checkpoint:
    path: Path
    epoch: int
    val_loss: float


@dataclass
class TrainResult:
    checkpoints: list[Checkpoint]
    loss_rows: list[tuple[int, float, float, float]]  # epoch, train, val, lr
    converged: bool
    converged_epoch: Optional[int]
    diverged: bool
    skipped_clips: int


def eligible_keywords(transcript: Sequence[str], keyword_vocab: set[str]) -> list[str]:
    seen = []
    for w in transcript:
        if w in keyword_vocab and w not in seen:
            seen.append(w)
    return seen


def build_batch(clips: Sequence[ClipRecord], keyword_vocab: Sequence[str],
                rng: np.random.Generator) -> tuple[list[SamplePair], int]:
    """Positive pairs for every eligible keyword in each clip, plus an equal
    count of negatives drawn without replacement from the rest of the vocab.

    Returns (pairs, number of clips that contributed nothing).
    """
    vocab_list = list(keyword_vocab)
    vocab_set = set(vocab_list)
    pairs: list[SamplePair] = []
    skipped = 0
    for clip in clips:
        pos_words = eligible_keywords(clip.transcript, vocab_set)
        if not pos_words:
            skipped += 1
            continue
        for w in pos_words:
            bounds = next((s, e) for ww, s, e in clip.bounds if ww == w)
            pairs.append(SamplePair(clip.clip_id, w, 1, bounds))
        own = set(clip.transcript)
        candidates = [w for w in vocab_list if w not in own]
        neg = rng.choice(candidates, size=len(pos_words), replace=False)
        for w in neg:
            pairs.append(SamplePair(clip.clip_id, str(w), 0))
    return pairs, skipped


class _FeatureCache:
    """All clip feature streams of a manifest, loaded once."""

    def __init__(self, corpus_root: Path, records: Sequence[ClipRecord]):
        self.records = {r.clip_id: r for r in records}
        self.features = {r.clip_id: load_clip_features(corpus_root, r)
                         for r in records}

    def stream(self, clip_id: str, modality: str) -> np.ndarray:
        key = "visual" if modality == "v" else "audio"
        return self.features[clip_id][key]

    def audio_streams(self) -> list[np.ndarray]:
        return [f["audio"] for f in self.features.values()]


def _epoch_rng(seed: int, tag: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, tag, epoch])


def _batch_loss(model: KwsModel, cache: _FeatureCache,
                pairs: Sequence[SamplePair], lexicon: Lexicon,
                use_boundaries: bool, train: bool,
                noise_streams: Optional[list[np.ndarray]],
                noise: Optional[NoiseSpec],
                noise_rng: Optional[np.random.Generator]) -> Tensor:
    clip_ids = sorted({p.clip_id for p in pairs})
    encoded = {}
    for cid in clip_ids:
        stream = cache.stream(cid, model.modality)
        if (noise is not None and model.modality == "a"
                and noise_rng is not None
                and noise_rng.random() < noise.apply_prob):
            babble = babble_for(noise_streams, stream.shape[0],
                                stream.shape[1], noise_rng, noise.k)
            stream = mix_noise_at_snr(stream, babble, noise.snr_db)
        encoded[cid] = model.encode_stream(stream, train=train)
    keywords = sorted({p.keyword for p in pairs})
    kw_embeds = {w: model.encode_keyword(lexicon[w].variants[0])
                 for w in keywords}
    losses = []
    for pair in pairs:
        trace = model.pair_trace(encoded[pair.clip_id], kw_embeds[pair.keyword],
                                 stride_mode="train", train=train)
        losses.append(kws_loss(trace, pair, use_boundaries))
    return ops.stack_mean(losses)


def train(model: KwsModel, corpus: Corpus, config: TrainConfig, outdir,
          resume_from: Optional[Path] = None) -> TrainResult:
    """Run one curriculum stage; checkpoints and a loss CSV land in outdir."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = "pretrain" if config.stage == "pretrain" else "train"
    records = corpus.manifests[manifest]
    if not records:
        raise ValueError(f"corpus has no {manifest!r} clips")
    cache = _FeatureCache(corpus.root, records)
    lexicon = corpus.lexicon

    keyword_vocab = [w for w in corpus.train_keywords
                     if lexicon[w].min_np >= config.keyword_min_np]
    if not keyword_vocab:
        raise ValueError("no eligible training keywords")

    # boundary supervision only applies to sentence-level fine-tuning
    use_bounds = config.use_boundaries and config.stage == "finetune"
    use_noise = config.noise is not None and (
        config.stage != "pretrain" or config.noise_in_pretrain)

    order = np.array([r.clip_id for r in records])
    split_rng = np.random.default_rng([config.seed, 0x5A11])
    perm = split_rng.permutation(len(order))
    n_val = max(1, int(config.val_fraction * len(order))) \
        if config.val_fraction > 0 else 0
    val_ids = set(order[perm[:n_val]].tolist())
    train_ids = [cid for cid in order.tolist() if cid not in val_ids]
    val_records = [cache.records[cid] for cid in sorted(val_ids)]
    val_pairs, _ = build_batch(val_records, keyword_vocab,
                               np.random.default_rng([config.seed, 0x7A1]))
    noise_streams = cache.audio_streams() if use_noise else None

    checkpoints: list[Checkpoint] = []
    loss_rows: list[tuple[int, float, float, float]] = []
    best_val = math.inf
    stale = 0
    start_epoch = 1
    if resume_from is not None:
        resume_from = Path(resume_from)
        with open(resume_from.with_suffix(".json"), encoding="utf-8") as fh:
            sidecar = json.load(fh)
        if sidecar["digest"] != model.config_digest():
            raise ConfigMismatchError(
                f"cannot resume: {resume_from} was written by a different "
                "model configuration")
        model.load_state_tensors(read_tensors(resume_from))
        start_epoch = sidecar["epoch"] + 1
        best_val = sidecar.get("best_val", math.inf)
        stale = sidecar.get("stale", 0)

    converged = False
    converged_epoch = None
    diverged = False
    skipped_total = 0

    for epoch in range(start_epoch, config.epochs + 1):
        lr = lr_schedule(config.stage, epoch, config.base_lr)
        shuffle_rng = _epoch_rng(config.seed, 2, epoch)
        epoch_ids = list(train_ids)
        shuffle_rng.shuffle(epoch_ids)
        pair_rng = _epoch_rng(config.seed, 3, epoch)
        noise_rng = _epoch_rng(config.seed, 4, epoch) if use_noise else None

        epoch_losses = []
        for b0 in range(0, len(epoch_ids), config.batch_clips):
            batch_records = [cache.records[cid]
                             for cid in epoch_ids[b0:b0 + config.batch_clips]]
            pairs, skipped = build_batch(batch_records, keyword_vocab, pair_rng)
            skipped_total += skipped
            if not pairs:
                continue
            model.store.zero_grad()
            with Tape() as tape:
                loss = _batch_loss(model, cache, pairs, lexicon, use_bounds,
                                   True, noise_streams, config.noise
                                   if use_noise else None, noise_rng)
                tape.backward(loss)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                diverged = True
                break
            try:
                adam_step(model.store, model.store.grads(), lr)
            except NumericError:
                diverged = True
                break
            epoch_losses.append(loss_val)
        if diverged:
            break

        if val_pairs:
            val_loss = float(_batch_loss(model, cache, val_pairs, lexicon,
                                         use_bounds, False, None, None,
                                         None).data)
        else:
            val_loss = float("nan")
        train_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        loss_rows.append((epoch, train_loss, val_loss, lr))

        if val_pairs:
            if val_loss < best_val - 1e-12:
                best_val = val_loss
                stale = 0
            else:
                stale += 1

        path = outdir / f"ckpt_{epoch:03d}.kwt"
        save_checkpoint(model, path, epoch, val_loss,
                        extra={"best_val": best_val, "stale": stale})
        checkpoints.append(Checkpoint(path, epoch, val_loss))

        if val_pairs and stale >= config.patience:
            converged = True
            converged_epoch = epoch
            break

    with open(outdir / "loss_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for row in loss_rows:
            writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])

    return TrainResult(checkpoints, loss_rows, converged, converged_epoch,
                       diverged, skipped_total)


def checkpoint_save(model: KwsModel, path, epoch: int, val_loss: float):
    save_checkpoint(model, path, epoch, val_loss)


def checkpoint_load(path) -> tuple[KwsModel, dict]:
    return load_checkpoint(path)
