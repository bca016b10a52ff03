"""Similarity-map keyword detection: the model core.

The per-frame speech features V (t_v x d) and per-phoneme keyword rows P
(n_p x d) meet in a raw dot-product grid. The keyword rows are optionally
broadcast over time and concatenated as extra channels (the phonetic
shortcut), and a small CNN turns the grid into one keyword-presence logit
per 8 input frames. At test time the same stack is evaluated at stride
one over time for fine-grained localization.

Stride-one evaluation is computed densely: every strided layer is
rewritten as a dilated full-resolution pass, which is algebraically
identical to running the stack on each 32-frame window and reading the
window's interior output. Subsampling the dense logits at hop 8
reproduces the train-stride logits exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (AlignmentError, DimensionError, LengthError,
                     ConfigMismatchError)
from .gradcore import Tensor, ParamStore, ops
from .gradcore.container import read_tensors, write_tensors
from .gradcore.layers import BatchNorm, Conv2d
from .gradcore.ops import BN_EPS, _sigmoid
from .gradcore.tensor import record_op
from .encoders import (FeatureSequence, KeywordEmbedding, KeywordEncoder,
                       ModelConfig, SpeechEncoder)

# detector geometry along time (kernel, stride) per layer
_TIME_LAYERS = [(5, 1), (5, 2), (2, 2), (5, 2)]


def _geometry():
    span, jump = 1, 1
    for k, s in _TIME_LAYERS:
        span += (k - 1) * jump
        jump *= s
    window = jump * (-(-span // jump))
    return span, jump, window


RECEPTIVE_SPAN, TIME_JUMP, TEST_WINDOW = _geometry()  # 27, 8, 32
# dense position represented by the window starting at frame j is j + TIME_JUMP
TEST_CENTER_OFFSET = TEST_WINDOW // 2

# positives whose boundary-derived mask clamps to empty fall back to the
# nearest valid output; this counts how often that happened
MASK_CLAMP_WARNINGS = {"count": 0}


@dataclass
class SimilarityMap:
    grid: Tensor                  # (t_v, n_p, C); channel 0 = raw dot products
    valid_t: int
    valid_p: int

    @property
    def channels(self) -> int:
        return self.grid.data.shape[2]


@dataclass
class DetectionTrace:
    logits: Union[Tensor, np.ndarray]   # (t_out,)
    input_stride: int                   # 8 (train) or 1 (test)
    window: Optional[int] = None        # window length in test mode

    @property
    def logit_data(self) -> np.ndarray:
        return self.logits.data if isinstance(self.logits, Tensor) else self.logits

    @property
    def probs(self) -> np.ndarray:
        return _sigmoid(self.logit_data)

    @property
    def t_out(self) -> int:
        return self.logit_data.shape[0]

    @property
    def clip_score(self) -> float:
        return float(self.probs.max())

    @property
    def peak_index(self) -> int:
        return int(self.logit_data.argmax())


@dataclass
class SamplePair:
    clip_id: str
    keyword: str
    label: int                              # y* in {0, 1}
    bounds: Optional[tuple[int, int]] = None  # (t_start, t_end) input frames


# ---------------------------------------------------------------------------
# conv1 over (similarity channel + broadcast keyword channels)
#
# Because the shortcut channels are constant along time, their contribution
# to conv1 collapses to a per-phoneme term that only varies in the four
# rows nearest the clip edges (where same-padding truncates the temporal
# kernel). Splitting the kernel lets the hot path skip a conv over 1+d
# channels and do a 1-channel conv plus five tiny keyword convolutions,
# with the exact same result as conv1 on the concatenated map.
# ---------------------------------------------------------------------------

def _time_row_groups(t: int):
    """(kt_lo, kt_hi, row selector) groups sharing a temporal-kernel range."""
    if t < 5:
        return [(max(0, 2 - i), min(5, t + 2 - i), i) for i in range(t)]
    return [(2, 5, 0), (1, 5, 1), (0, 5, slice(2, t - 2)),
            (0, 4, t - 2), (0, 3, t - 1)]


def _phoneme_cols(rows: np.ndarray) -> np.ndarray:
    """(P, 5*d) window matrix of the keyword rows, zero-padded by 2."""
    n_p, d = rows.shape
    pad = np.pad(rows, ((2, 2), (0, 0)))
    s0, s1 = pad.strides
    view = np.lib.stride_tricks.as_strided(pad, (n_p, 5, d), (s0, s0, s1))
    return view.reshape(n_p, 5 * d)


def _sim_conv_forward(sim: np.ndarray, w_s: np.ndarray) -> np.ndarray:
    t, n_p, _ = sim.shape
    c1 = w_s.shape[3]
    xp = np.pad(sim[:, :, 0], ((2, 2), (2, 2)))
    s0, s1 = xp.strides
    view = np.lib.stride_tricks.as_strided(xp, (t, n_p, 5, 5), (s0, s1, s0, s1))
    return (view.reshape(t * n_p, 25) @ w_s.reshape(25, c1)).reshape(t, n_p, c1)


def shortcut_conv1(sim: Tensor, rows: Optional[Tensor], w: Tensor) -> Tensor:
    """conv1 on concat([sim, broadcast(rows)]) without materializing it.

    ``sim`` is (T, P, 1), ``rows`` is (P, d) or None when the shortcut is
    disabled; ``w`` is the full (5, 5, 1 + d, c1) kernel.
    """
    t, n_p, _ = sim.data.shape
    c1 = w.data.shape[3]
    w_s = w.data[:, :, :1, :]
    out = _sim_conv_forward(sim.data, w_s)
    groups = None
    kw_cols = None
    if rows is not None:
        w_p = w.data[:, :, 1:, :]
        d = w_p.shape[2]
        csum = np.concatenate([np.zeros((1, 5, d, c1)),
                               np.cumsum(w_p, axis=0)])
        kw_cols = _phoneme_cols(rows.data)
        groups = _time_row_groups(t)
        for lo, hi, sel in groups:
            wk = (csum[hi] - csum[lo]).reshape(5 * d, c1)
            out[sel] += kw_cols @ wk

    def backward(g):
        # similarity-channel part: plain conv adjoints over one channel
        gp = np.zeros((t + 4, n_p + 4))
        xp = np.pad(sim.data[:, :, 0], ((2, 2), (2, 2)))
        g2 = g.reshape(t * n_p, c1)
        gw = np.zeros_like(w.data)
        for kt in range(5):
            for kp in range(5):
                xs = xp[kt:kt + t, kp:kp + n_p].reshape(t * n_p)
                gw[kt, kp, 0] = xs @ g2
                gp[kt:kt + t, kp:kp + n_p] += (
                    g2 @ w_s[kt, kp, 0]).reshape(t, n_p)
        gsim = gp[2:2 + t, 2:2 + n_p][:, :, None]
        grows = None
        if rows is not None:
            d = rows.data.shape[1]
            grows_pad = np.zeros((n_p + 4, d))
            gwk_by_range: dict[tuple[int, int], np.ndarray] = {}
            for lo, hi, sel in groups:
                gv = g[sel]
                if gv.ndim == 3:
                    gv = gv.sum(axis=0)
                key = (lo, hi)
                dcols = gv @ (np.add.reduce(
                    w.data[lo:hi, :, 1:, :], axis=0).reshape(5 * d, c1)).T
                dwk = kw_cols.T @ gv
                if key in gwk_by_range:
                    gwk_by_range[key] += dwk
                else:
                    gwk_by_range[key] = dwk
                dcols3 = dcols.reshape(n_p, 5, d)
                for kp in range(5):
                    grows_pad[kp:kp + n_p] += dcols3[:, kp, :]
            grows = grows_pad[2:2 + n_p]
            for (lo, hi), dwk in gwk_by_range.items():
                gw[lo:hi, :, 1:, :] += dwk.reshape(5, d, c1)[None]
        return (gsim, grows, gw) if rows is not None else (gsim, gw)

    inputs = (sim, rows, w) if rows is not None else (sim, w)
    return record_op(inputs, out, backward)


class Detector:
    """Shallow CNN over the similarity map; subsamples time by 8."""

    def __init__(self, store: ParamStore, prefix: str, cfg: ModelConfig,
                 rng: np.random.Generator):
        self.cfg = cfg
        c_in = 1 + (cfg.d if cfg.shortcut else 0)
        c1, c2, c3 = cfg.width(32), cfg.width(128), cfg.width(256)
        f1, f2 = cfg.width(512), cfg.width(256)
        self.conv1 = Conv2d(store, f"{prefix}.conv1", (5, 5), c_in, c1, (1, 1), rng)
        self.bn1 = BatchNorm(store, f"{prefix}.bn1", c1)
        self.conv2 = Conv2d(store, f"{prefix}.conv2", (5, 5), c1, c2, (2, 2), rng)
        self.bn2 = BatchNorm(store, f"{prefix}.bn2", c2)
        self.conv3 = Conv2d(store, f"{prefix}.conv3", (5, 5), c2, c3, (2, 1), rng)
        self.bn3 = BatchNorm(store, f"{prefix}.bn3", c3)
        self.fc1 = Conv2d(store, f"{prefix}.fc1", (1, 1), c3, f1, (1, 1), rng)
        self.bn4 = BatchNorm(store, f"{prefix}.bn4", f1)
        self.fc2 = Conv2d(store, f"{prefix}.fc2", (1, 1), f1, f2, (1, 1), rng)
        self.bn5 = BatchNorm(store, f"{prefix}.bn5", f2)
        self.fc3 = Conv2d(store, f"{prefix}.fc3", (1, 1), f2, 1, (1, 1), rng,
                          bias=True)

    def in_channels(self) -> int:
        return self.conv1.w.data.shape[2]

    def _check_geometry(self, t: int, n_p: int):
        if t < TIME_JUMP:
            raise LengthError(f"need at least {TIME_JUMP} frames, got {t}")
        if n_p < 2:
            raise DimensionError(f"need at least 2 phoneme rows, got {n_p}")

    def _tail(self, x: Tensor, train: bool, t8: int) -> Tensor:
        """Everything after conv1: the strided stack down to one logit per 8."""
        x = ops.relu(self.bn1(x, train))
        x = ops.relu(self.bn2(self.conv2(x), train))
        x = ops.pool2d(x, "max", (2, 2), (2, 1))
        x = ops.relu(self.bn3(self.conv3(x), train))
        q = x.data.shape[1]
        x = ops.pool2d(x, "avg", (1, q), (1, q))
        x = ops.relu(self.bn4(self.fc1(x), train))
        x = ops.relu(self.bn5(self.fc2(x), train))
        x = self.fc3(x)
        return ops.reshape(x, (t8 // TIME_JUMP,))

    def forward_train(self, grid: Tensor, train: bool) -> Tensor:
        """Stride-8 logits from the materialized (T, P, C) map; the input is
        trimmed to a multiple of 8 frames."""
        t, n_p, c = grid.data.shape
        self._check_geometry(t, n_p)
        if c != self.in_channels():
            raise DimensionError(
                f"map has {c} channels, detector expects {self.in_channels()}")
        t8 = TIME_JUMP * (t // TIME_JUMP)
        x = grid if t8 == t else ops.getitem(grid, slice(0, t8))
        return self._tail(self.conv1(x), train, t8)

    def forward_fused(self, sim: Tensor, rows: Optional[Tensor],
                      train: bool) -> Tensor:
        """Stride-8 logits from the 1-channel map plus keyword rows, using
        the split conv1; numerically equal to ``forward_train`` on the
        concatenated map."""
        t, n_p, _ = sim.data.shape
        self._check_geometry(t, n_p)
        want_rows = self.in_channels() > 1
        if want_rows != (rows is not None):
            raise DimensionError(
                "keyword rows are required exactly when the shortcut is on")
        t8 = TIME_JUMP * (t // TIME_JUMP)
        if t8 != t:
            sim = ops.getitem(sim, slice(0, t8))
        x = shortcut_conv1(sim, rows, self.conv1.w)
        return self._tail(x, train, t8)

    # -- dense stride-one inference (eval-mode batch norm, no gradients) --

    def _bn_eval(self, x: np.ndarray, bn: BatchNorm) -> np.ndarray:
        scale = bn.gamma.data / np.sqrt(bn.running_var + BN_EPS)
        return x * scale + (bn.beta.data - bn.running_mean * scale)

    @staticmethod
    def _same_pad_1d(extent: int, k: int, s: int) -> tuple[int, int]:
        out = -(-extent // s)
        total = max((out - 1) * s + k - extent, 0)
        return total // 2, total - total // 2

    @staticmethod
    def _dense_conv(x: np.ndarray, w: np.ndarray, t_start: int, t_step: int,
                    p_stride: int) -> np.ndarray:
        """Full-time-resolution conv: taps t_start + i*t_step along time,
        "same"-strided along the phoneme axis."""
        t, p, cin = x.shape
        kt, kp, _, cout = w.shape
        pl_t = max(0, -t_start)
        pr_t = max(0, t_start + (kt - 1) * t_step)
        pl_p, pr_p = Detector._same_pad_1d(p, kp, p_stride)
        xp = np.pad(x, ((pl_t, pr_t), (pl_p, pr_p), (0, 0)))
        p_out = -(-p // p_stride)
        ts, ps, cs = xp.strides
        view = np.lib.stride_tricks.as_strided(
            xp[pl_t + t_start:],
            (t, p_out, kt, kp, cin),
            (ts, ps * p_stride, ts * t_step, ps, cs))
        taps = kt * kp * cin
        out = view.reshape(t * p_out, taps) @ w.reshape(taps, cout)
        return out.reshape(t, p_out, cout)

    def dense_logits(self, sim: np.ndarray,
                     rows: Optional[np.ndarray]) -> np.ndarray:
        """Logit for every dense time position (train logit k sits at 8k)."""
        t, n_p, c = sim.shape
        if c != 1:
            raise DimensionError(f"dense path wants a 1-channel map, got {c}")
        if (rows is not None) != (self.in_channels() > 1):
            raise DimensionError(
                "keyword rows are required exactly when the shortcut is on")
        relu = lambda a: np.maximum(a, 0.0)
        d1 = _sim_conv_forward(sim, self.conv1.w.data[:, :, :1, :])
        if rows is not None:
            w_p = self.conv1.w.data[:, :, 1:, :]
            d, c1 = w_p.shape[2], w_p.shape[3]
            csum = np.concatenate([np.zeros((1, 5, d, c1)),
                                   np.cumsum(w_p, axis=0)])
            kw_cols = _phoneme_cols(rows)
            for lo, hi, sel in _time_row_groups(t):
                d1[sel] += kw_cols @ (csum[hi] - csum[lo]).reshape(5 * d, c1)
        d1 = relu(self._bn_eval(d1, self.bn1))
        d2 = relu(self._bn_eval(
            self._dense_conv(d1, self.conv2.w.data, -1, 1, 2), self.bn2))
        # max pool: time taps {0, +2}, phoneme window 2 stride 1 (partial right)
        q = d2.shape[1]
        pad = np.full((2, q, d2.shape[2]), -np.inf)
        d2t = np.concatenate([d2, pad], axis=0)
        d3 = np.maximum(d2t[:t], d2t[2:t + 2])
        padp = np.full((t, 1, d2.shape[2]), -np.inf)
        d3p = np.concatenate([d3, padp], axis=1)
        d3 = np.maximum(d3p[:, :q], d3p[:, 1:q + 1])
        d4 = relu(self._bn_eval(
            self._dense_conv(d3, self.conv3.w.data, -4, 4, 1), self.bn3))
        x = d4.mean(axis=1)  # collapse phoneme axis
        x = relu(self._bn_eval(x @ self.fc1.w.data[0, 0], self.bn4))
        x = relu(self._bn_eval(x @ self.fc2.w.data[0, 0], self.bn5))
        x = x @ self.fc3.w.data[0, 0] + self.fc3.b.data
        return x[:, 0]

    def test_logits(self, sim: np.ndarray,
                    rows: Optional[np.ndarray]) -> np.ndarray:
        """Sliding-window logits, indexed by window start (hop one)."""
        t = sim.shape[0]
        if t < TEST_WINDOW:
            raise LengthError(
                f"test-mode needs at least {TEST_WINDOW} frames, got {t}")
        dense = self.dense_logits(sim, rows)
        return dense[TIME_JUMP:t - TEST_WINDOW + TIME_JUMP + 1]

    def window_logit_reference(self, grid: np.ndarray, j: int) -> float:
        """Brute-force definition of the test-mode logit for window start j:
        run the train-mode stack on the 32-frame window and read the output
        whose receptive field lies inside the window."""
        window = grid[j:j + TEST_WINDOW]
        trace = self.forward_train(Tensor(window), train=False)
        return float(trace.data[1])


# ---------------------------------------------------------------------------
# functional ops over maps and traces
# ---------------------------------------------------------------------------

def similarity_map(v: FeatureSequence, p: KeywordEmbedding) -> SimilarityMap:
    """Raw dot-product grid between frame features and keyword rows."""
    dv = v.frames.data.shape[1]
    dp = p.rows.data.shape[1]
    if dv != dp:
        raise DimensionError(f"feature width {dv} != keyword width {dp}")
    frames = (v.frames if v.valid_len == v.frames.data.shape[0]
              else ops.getitem(v.frames, slice(0, v.valid_len)))
    grid = ops.matmul(frames, ops.transpose(p.rows))
    t, n_p = grid.data.shape
    return SimilarityMap(ops.reshape(grid, (t, n_p, 1)), t, n_p)


def attach_shortcut(smap: SimilarityMap, p: KeywordEmbedding) -> SimilarityMap:
    """Concatenate the keyword rows, broadcast over time, as channels 1..d."""
    if p.rows.data.shape[0] != smap.valid_p:
        raise DimensionError(
            f"keyword has {p.rows.data.shape[0]} rows, map has {smap.valid_p}")
    tiled = ops.expand_time(p.rows, smap.valid_t)
    grid = ops.concat([smap.grid, tiled], axis=2)
    return SimilarityMap(grid, smap.valid_t, smap.valid_p)


def build_map(v: FeatureSequence, p: KeywordEmbedding,
              shortcut: bool) -> SimilarityMap:
    smap = similarity_map(v, p)
    return attach_shortcut(smap, p) if shortcut else smap


def detect(detector: Detector, smap: SimilarityMap, stride_mode: str,
           train: bool = False) -> DetectionTrace:
    """Run the CNN: stride 8 in train mode, sliding stride 1 in test mode."""
    if stride_mode == "train":
        logits = detector.forward_train(smap.grid, train)
        return DetectionTrace(logits, input_stride=TIME_JUMP)
    if stride_mode == "test":
        grid = smap.grid.data
        # broadcast shortcut channels are constant over time, so the keyword
        # rows can be read back from any single time slice
        rows = grid[0, :, 1:] if grid.shape[2] > 1 else None
        logits = detector.test_logits(grid[:, :, :1], rows)
        return DetectionTrace(logits, input_stride=1, window=TEST_WINDOW)
    raise ValueError(f"stride_mode must be 'train' or 'test', got {stride_mode!r}")


def boundary_mask(bounds: tuple[int, int], t_out: int) -> np.ndarray:
    """Output indices whose stride-8 cells overlap the word interval."""
    s, e = bounds
    lo = s // TIME_JUMP
    hi = min(-(-e // TIME_JUMP) - 1, t_out - 1)
    lo = min(lo, t_out - 1)
    if lo > hi:
        MASK_CLAMP_WARNINGS["count"] += 1
        nearest = min(max(lo, 0), t_out - 1)
        return np.array([nearest])
    return np.arange(lo, hi + 1)


def kws_loss(trace: DetectionTrace, sample: SamplePair,
             use_boundaries: bool) -> Tensor:
    """Binary cross-entropy of the (optionally boundary-masked) max logit."""
    if not isinstance(trace.logits, Tensor):
        raise ValueError("kws_loss needs a train-mode trace")
    t_out = trace.t_out
    if use_boundaries and sample.label == 1:
        if sample.bounds is None:
            raise ValueError(
                f"positive sample {sample.clip_id}/{sample.keyword} lacks "
                "boundaries in boundary-supervised mode")
        idxs = boundary_mask(sample.bounds, t_out)
    else:
        idxs = np.arange(t_out)
    clip_logit = ops.subset_max(trace.logits, idxs)
    return ops.sigmoid_bce(clip_logit, sample.label)


def fuse_modalities(a_trace: DetectionTrace, v_trace: DetectionTrace,
                    w_a: float) -> DetectionTrace:
    """Late fusion: per-frame weighted logit average, sigmoid afterwards."""
    if not 0.0 <= w_a <= 1.0:
        raise ValueError(f"audio weight must be in [0,1], got {w_a}")
    if a_trace.input_stride != v_trace.input_stride:
        raise AlignmentError(
            f"stride mismatch: {a_trace.input_stride} vs {v_trace.input_stride}")
    la, lv = a_trace.logit_data, v_trace.logit_data
    if la.shape != lv.shape:
        raise AlignmentError(
            f"trace lengths differ: {la.shape} vs {lv.shape}")
    fused = w_a * la + (1.0 - w_a) * lv
    return DetectionTrace(fused, a_trace.input_stride, a_trace.window)


@dataclass
class SpotResult:
    present: bool
    score: float
    frame: int          # predicted keyword location in input frames
    variant: int        # pronunciation variant that produced the score


def spot_variants(variant_logits: Sequence[np.ndarray],
                  threshold: float) -> SpotResult:
    """Pick the best pronunciation variant from dense test-mode traces."""
    best = None
    for i, logits in enumerate(variant_logits):
        probs = _sigmoid(logits)
        j = int(probs.argmax())
        score = float(probs[j])
        if best is None or score > best.score:
            best = SpotResult(score >= threshold, score,
                              j + TEST_CENTER_OFFSET, i)
    if best is None:
        raise ValueError("no pronunciation variants to score")
    return best


# ---------------------------------------------------------------------------
# full single-modality model
# ---------------------------------------------------------------------------

class KwsModel:
    """One modality (visual or audio): speech encoder + keyword encoder + CNN."""

    def __init__(self, cfg: ModelConfig, modality: str,
                 phoneme_symbols: list[str], seed: int):
        if modality not in ("v", "a"):
            raise ValueError(f"modality must be 'v' or 'a', got {modality!r}")
        if modality == "v" and cfg.frontend not in ("bypass", "conv"):
            raise ValueError(f"visual frontend must be bypass|conv, "
                             f"got {cfg.frontend!r}")
        if modality == "a" and cfg.frontend not in ("bypass", "mel"):
            raise ValueError(f"audio frontend must be bypass|mel, "
                             f"got {cfg.frontend!r}")
        self.cfg = cfg
        self.modality = modality
        self.phoneme_symbols = list(phoneme_symbols)
        self.seed = seed
        self.store = ParamStore()
        rng = np.random.default_rng([seed, 0x11A7])
        enc_prefix = "enc.visual" if modality == "v" else "enc.audio"
        self.speech = SpeechEncoder(self.store, enc_prefix, cfg, rng,
                                    kind=cfg.frontend)
        self.kw = KeywordEncoder(self.store, "enc.kw", cfg,
                                 len(phoneme_symbols) + 1, rng)
        self.det = Detector(self.store, "det", cfg, rng)

    # -- persistence ------------------------------------------------------

    def config_digest(self) -> str:
        payload = json.dumps({"config": self.cfg.to_dict(),
                              "modality": self.modality,
                              "symbols": self.phoneme_symbols},
                             sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def state_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, p in self.store.params.items():
            out[f"param.{name}"] = p.data
        for name, b in self.store.buffers.items():
            out[f"buffer.{name}"] = b
        for name in self.store.params:
            out[f"adam.m.{name}"] = self.store.adam_m[name]
            out[f"adam.v.{name}"] = self.store.adam_v[name]
            out[f"adam.t.{name}"] = np.array([self.store.adam_t[name]],
                                             dtype=np.float64)
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]):
        for name, p in self.store.params.items():
            src = tensors[f"param.{name}"]
            if src.shape != p.data.shape:
                raise ConfigMismatchError(
                    f"parameter {name!r}: stored {src.shape} vs "
                    f"model {p.data.shape}")
            p.data[:] = src
            self.store.adam_m[name][:] = tensors[f"adam.m.{name}"]
            self.store.adam_v[name][:] = tensors[f"adam.v.{name}"]
            self.store.adam_t[name] = int(tensors[f"adam.t.{name}"][0])
        for name, b in self.store.buffers.items():
            b[:] = tensors[f"buffer.{name}"]

    # -- forward helpers ----------------------------------------------------

    def encode_stream(self, stream: np.ndarray, train: bool = False,
                      valid_len: Optional[int] = None) -> FeatureSequence:
        return self.speech(stream, train=train, valid_len=valid_len)

    def encode_keyword(self, phoneme_ids) -> KeywordEmbedding:
        return self.kw(phoneme_ids)

    def pair_trace(self, v: FeatureSequence, p: KeywordEmbedding,
                   stride_mode: str = "train",
                   train: bool = False) -> DetectionTrace:
        smap = similarity_map(v, p)
        rows = p.rows if self.cfg.shortcut else None
        if stride_mode == "train":
            logits = self.det.forward_fused(smap.grid, rows, train)
            return DetectionTrace(logits, input_stride=TIME_JUMP)
        logits = self.det.test_logits(
            smap.grid.data, rows.data if rows is not None else None)
        return DetectionTrace(logits, input_stride=1, window=TEST_WINDOW)

    def dense_pair_logits(self, v: FeatureSequence,
                          p: KeywordEmbedding) -> np.ndarray:
        """Dense stride-1 logits for cached eval paths (no gradients)."""
        sim = (v.frames.data[:v.valid_len] @ p.rows.data.T)[:, :, None]
        rows = p.rows.data if self.cfg.shortcut else None
        return self.det.test_logits(sim, rows)


def save_checkpoint(model: KwsModel, path, epoch: int, val_loss: float,
                    extra: Optional[dict] = None):
    path = Path(path)
    write_tensors(path, model.state_tensors())
    sidecar = {
        "config": model.cfg.to_dict(),
        "modality": model.modality,
        "phoneme_symbols": model.phoneme_symbols,
        "seed": model.seed,
        "digest": model.config_digest(),
        "epoch": epoch,
        "val_loss": val_loss,
    }
    if extra:
        sidecar.update(extra)
    with open(path.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)


def load_checkpoint(path) -> tuple[KwsModel, dict]:
    path = Path(path)
    with open(path.with_suffix(".json"), encoding="utf-8") as fh:
        sidecar = json.load(fh)
    cfg = ModelConfig(**sidecar["config"])
    model = KwsModel(cfg, sidecar["modality"], sidecar["phoneme_symbols"],
                     sidecar["seed"])
    if model.config_digest() != sidecar["digest"]:
        raise ConfigMismatchError(
            f"checkpoint digest mismatch for {path}")
    model.load_state_tensors(read_tensors(path))
    return model, sidecar
