"""Feature encoders: the two sequences that meet at the similarity map.

The speech side produces a feature sequence of one d-vector per video
frame (25 Hz), from mouth-crop video, from a mel spectrogram at 4x video
rate, or from a precomputed synthetic stream via a learned affine bypass.
The query side turns a phoneme-id sequence into one d-vector per phoneme.
All channel widths scale by a single desk-scale factor; factor 1 restores
the full-width layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError, LengthError, VocabularyError
from .gradcore import Tensor, ParamStore, ops
from .gradcore.layers import BatchNorm, BiLSTM, Conv2d, Conv3d, Embedding, Linear

VALID_SCALES = (1.0, 0.5, 0.25, 0.125)


@dataclass
class ModelConfig:
    channel_scale: float = 0.25
    frontend: str = "bypass"          # "bypass" or "conv"
    d_syn: int = 16                   # bypass input width
    shortcut: bool = True
    max_np: int = 24
    sample_rate: int = 16000
    win_samples: int = 512            # 32 ms at 16 kHz
    hop_samples: int = 160            # 10 ms
    n_mels: int = 80
    frame_rate: float = 25.0

    def __post_init__(self):
        if self.channel_scale not in VALID_SCALES:
            raise ValueError(f"channel_scale must be one of {VALID_SCALES}")
        if self.d % 2:
            raise ValueError(f"embedding width {self.d} must be even")

    @property
    def d(self) -> int:
        return int(round(512 * self.channel_scale))

    def width(self, full: int) -> int:
        return max(1, int(round(full * self.channel_scale)))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "channel_scale", "frontend", "d_syn", "shortcut", "max_np",
            "sample_rate", "win_samples", "hop_samples", "n_mels",
            "frame_rate")}


@dataclass
class FeatureSequence:
    frames: Tensor                    # (t_padded, d)
    valid_len: int
    frame_rate: float = 25.0

    @property
    def t_v(self) -> int:
        return self.valid_len


@dataclass
class KeywordEmbedding:
    rows: Tensor                      # (n_p, d)

    @property
    def n_p(self) -> int:
        return self.rows.data.shape[0]


# ---------------------------------------------------------------------------
# audio feature extraction (no gradients: pure preprocessing)
# ---------------------------------------------------------------------------

def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int,
                   f_lo: float = 0.0, f_hi: Optional[float] = None) -> np.ndarray:
    """Triangular mel filters on the rfft bin grid; rows are filters."""
    f_hi = f_hi if f_hi is not None else sample_rate / 2.0

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    pts = from_mel(np.linspace(to_mel(f_lo), to_mel(f_hi), n_mels + 2))
    bin_hz = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    bank = np.zeros((n_mels, n_fft // 2 + 1))
    for i in range(n_mels):
        lo, ctr, hi = pts[i], pts[i + 1], pts[i + 2]
        up = (bin_hz - lo) / (ctr - lo)
        down = (hi - bin_hz) / (hi - ctr)
        bank[i] = np.maximum(0.0, np.minimum(up, down))
    return bank


def stft_mel(waveform: np.ndarray, config: ModelConfig) -> np.ndarray:
    """Log-mel features: Hann-window DFT magnitudes through the mel bank.

    Frame count is 1 + floor((N - win)/hop), then right-trimmed or
    zero-padded to a multiple of 4 so each video frame maps to exactly 4
    acoustic frames.
    """
    wave = np.asarray(waveform, dtype=np.float64).ravel()
    win, hop = config.win_samples, config.hop_samples
    if wave.size < win:
        raise LengthError(
            f"waveform of {wave.size} samples is shorter than one "
            f"{win}-sample window")
    n_frames = 1 + (wave.size - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = wave[idx] * np.hanning(win)
    mag = np.abs(np.fft.rfft(frames, axis=1))
    bank = mel_filterbank(config.n_mels, win, config.sample_rate,
                          0.0, config.sample_rate / 2.0)
    mel = np.log(mag @ bank.T + 1e-10)
    keep = (n_frames // 4) * 4
    if keep >= 4:
        return mel[:keep]
    pad = np.full((4 - n_frames, config.n_mels), np.log(1e-10))
    return np.concatenate([mel, pad], axis=0)


# ---------------------------------------------------------------------------
# encoder networks
# ---------------------------------------------------------------------------

class BypassFrontend:
    """Learned affine map from a precomputed d_syn stream to width d."""

    def __init__(self, store: ParamStore, prefix: str, cfg: ModelConfig,
                 rng: np.random.Generator):
        self.affine = Linear(store, f"{prefix}.affine", cfg.d_syn, cfg.d, rng)

    def __call__(self, stream: Tensor, train: bool) -> Tensor:
        if stream.data.ndim != 2 or stream.data.shape[1] != self.affine.w.data.shape[0]:
            raise DimensionError(
                f"bypass stream {stream.data.shape} does not match affine "
                f"input {self.affine.w.data.shape[0]}")
        return self.affine(stream)


class MelFrontend:
    """Two strided 1-D convolutions collapsing 4 mel frames per video frame."""

    def __init__(self, store: ParamStore, prefix: str, cfg: ModelConfig,
                 rng: np.random.Generator):
        c1, c2 = cfg.width(256), cfg.d
        self.conv1 = Conv2d(store, f"{prefix}.conv1", (5, 1), cfg.n_mels, c1,
                            (2, 1), rng)
        self.bn1 = BatchNorm(store, f"{prefix}.bn1", c1)
        self.conv2 = Conv2d(store, f"{prefix}.conv2", (5, 1), c1, c2, (2, 1), rng)
        self.bn2 = BatchNorm(store, f"{prefix}.bn2", c2)

    def __call__(self, mel: Tensor, train: bool) -> Tensor:
        t4 = mel.data.shape[0]
        if t4 % 4:
            raise LengthError(
                f"mel frame count {t4} is not divisible by 4; pad first")
        x = ops.reshape(mel, (t4, 1, mel.data.shape[1]))
        x = ops.relu(self.bn1(self.conv1(x), train))
        x = ops.relu(self.bn2(self.conv2(x), train))
        return ops.reshape(x, (t4 // 4, x.data.shape[2]))


class _ResBlock:
    def __init__(self, store, prefix, c_in, c_out, stride, rng):
        self.conv1 = Conv3d(store, f"{prefix}.conv1", (1, 3, 3), c_in, c_out,
                            (1, stride, stride), rng)
        self.bn1 = BatchNorm(store, f"{prefix}.bn1", c_out)
        self.conv2 = Conv3d(store, f"{prefix}.conv2", (1, 3, 3), c_out, c_out,
                            (1, 1, 1), rng)
        self.bn2 = BatchNorm(store, f"{prefix}.bn2", c_out)
        self.down = None
        if stride != 1 or c_in != c_out:
            self.down = Conv3d(store, f"{prefix}.down", (1, 1, 1), c_in, c_out,
                               (1, stride, stride), rng)
            self.bn_down = BatchNorm(store, f"{prefix}.bn_down", c_out)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        h = ops.relu(self.bn1(self.conv1(x), train))
        h = self.bn2(self.conv2(h), train)
        skip = x if self.down is None else self.bn_down(self.down(x), train)
        return ops.relu(ops.add(h, skip))


class ConvFrontend:
    """Spatio-temporal stem plus residual 2-D blocks; frame count preserved.

    Desk-scale input is (T, H, W, 1) grayscale mouth crops with H = W = 32:
    the stem halves space twice, the residual chain halves it three more
    times, and global average pooling leaves one d-vector per frame.
    """

    CHANNELS = [64, 64, 128, 128, 256, 256, 512, 512]
    STRIDES = [1, 1, 2, 1, 2, 1, 2, 1]

    def __init__(self, store: ParamStore, prefix: str, cfg: ModelConfig,
                 rng: np.random.Generator):
        c0 = cfg.width(64)
        self.stem = Conv3d(store, f"{prefix}.stem", (5, 7, 7), 1, c0,
                           (1, 2, 2), rng)
        self.bn0 = BatchNorm(store, f"{prefix}.bn0", c0)
        self.blocks = []
        c_in = c0
        for i, (c_full, s) in enumerate(zip(self.CHANNELS, self.STRIDES)):
            c_out = cfg.width(c_full)
            self.blocks.append(_ResBlock(store, f"{prefix}.block{i + 1}",
                                         c_in, c_out, s, rng))
            c_in = c_out

    def __call__(self, frames: Tensor, train: bool) -> Tensor:
        if frames.data.ndim != 4 or frames.data.shape[3] != 1:
            raise DimensionError(
                f"conv frontend expects (T, H, W, 1), got {frames.data.shape}")
        t, h, w, _ = frames.data.shape
        if h < 32 or w < 32:
            raise DimensionError(
                f"input {h}x{w} is below the 8x8-after-stem receptive floor "
                f"(needs at least 32x32)")
        x = ops.relu(self.bn0(self.stem(frames), train))
        x = ops.pool3d(x, "max", (1, 3, 3), (1, 2, 2))
        for block in self.blocks:
            x = block(x, train)
        x = ops.reduce_mean(ops.reduce_mean(x, axis=2), axis=1)  # (T, C)
        return x


class SequenceEncoder:
    """BiLSTM over frames (hidden d/2 per direction) plus a d -> d projection.

    Frames beyond ``valid_len`` are ignored: the recurrence runs on the
    valid prefix only and padded rows come out as zeros.
    """

    def __init__(self, store: ParamStore, prefix: str, cfg: ModelConfig,
                 rng: np.random.Generator):
        self.bilstm = BiLSTM(store, f"{prefix}.bilstm", cfg.d, cfg.d // 2, rng)
        self.proj = Linear(store, f"{prefix}.proj", cfg.d, cfg.d, rng)

    def __call__(self, frames: Tensor, valid_len: int) -> Tensor:
        t = frames.data.shape[0]
        if valid_len > t:
            raise LengthError(f"valid_len {valid_len} exceeds frames {t}")
        x = frames if valid_len == t else ops.getitem(frames, slice(0, valid_len))
        out = self.proj(self.bilstm(x))
        if valid_len == t:
            return out
        pad = Tensor(np.zeros((t - valid_len, out.data.shape[1])))
        return ops.concat([out, pad], axis=0)


class SpeechEncoder:
    """Front-end of the configured kind followed by the sequence BiLSTM."""

    def __init__(self, store: ParamStore, prefix: str, cfg: ModelConfig,
                 rng: np.random.Generator, kind: str):
        self.cfg = cfg
        self.kind = kind
        if kind == "bypass":
            self.frontend = BypassFrontend(store, prefix, cfg, rng)
        elif kind == "conv":
            self.frontend = ConvFrontend(store, prefix, cfg, rng)
        elif kind == "mel":
            self.frontend = MelFrontend(store, prefix, cfg, rng)
        else:
            raise ValueError(f"unknown frontend kind {kind!r}")
        self.seq = SequenceEncoder(store, f"{prefix}.seq", cfg, rng)

    def __call__(self, stream, train: bool = False,
                 valid_len: Optional[int] = None) -> FeatureSequence:
        x = stream if isinstance(stream, Tensor) else Tensor(stream)
        feats = self.frontend(x, train)
        t = feats.data.shape[0]
        valid = t if valid_len is None else valid_len
        out = self.seq(feats, valid)
        return FeatureSequence(out, valid, self.cfg.frame_rate)


class KeywordEncoder:
    """Phoneme tokens -> one d-vector per phoneme.

    Token embedding width 64, a BiLSTM whose concatenated width scales from
    500, then two row-wise linear layers (scaled 128, then d). A ReLU sits
    between the two projections so they do not collapse into one map.
    """

    def __init__(self, store: ParamStore, prefix: str, cfg: ModelConfig,
                 vocab_size: int, rng: np.random.Generator):
        self.cfg = cfg
        self.vocab_size = vocab_size
        per_dir = max(1, int(round(250 * cfg.channel_scale)))
        mid = cfg.width(128)
        self.embed = Embedding(store, f"{prefix}.embed", vocab_size, 64, rng)
        self.bilstm = BiLSTM(store, f"{prefix}.bilstm", 64, per_dir, rng)
        self.fc1 = Linear(store, f"{prefix}.fc1", 2 * per_dir, mid, rng)
        self.fc2 = Linear(store, f"{prefix}.fc2", mid, cfg.d, rng)

    def __call__(self, phoneme_ids) -> KeywordEmbedding:
        ids = np.asarray(phoneme_ids, dtype=np.int64)
        if ids.ndim != 1 or not 1 <= ids.size <= self.cfg.max_np:
            raise LengthError(
                f"keyword must have 1..{self.cfg.max_np} phonemes, "
                f"got {ids.size}")
        if ids.min() < 1 or ids.max() >= self.vocab_size:
            raise VocabularyError(
                f"phoneme id out of range 1..{self.vocab_size - 1}: {ids}")
        x = self.embed(ids)
        x = self.bilstm(x)
        x = ops.relu(self.fc1(x))
        return KeywordEmbedding(self.fc2(x))
