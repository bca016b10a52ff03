"""Retrieval evaluation: ranked spotting over all keyword-clip pairs.

Every query keyword is scored against every test clip. A pair is a
correct match only if the keyword occurs in the clip and the predicted
peak falls inside the ground-truth word interval (the localization
condition can be dropped). Rankings use descending score with ties broken
by clip id, and all metrics are rank-based, so any strictly monotone
transform of the scores leaves them unchanged.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import MetricError
from .kwsnet import KwsModel, SpotResult, spot_variants, TEST_CENTER_OFFSET
from .gradcore.ops import _sigmoid
from .pronlex import Lexicon
from .synthcorpus import (ClipRecord, NoiseSpec, babble_for,
                          load_clip_features, mix_noise_at_snr)


@dataclass
class RetrievalEntry:
    clip_id: str
    score: float
    peak_frame: int
    contains: bool
    localization_ok: bool

    def correct(self, use_localization: bool) -> bool:
        return self.contains and (self.localization_ok or not use_localization)


@dataclass
class RankedRetrieval:
    keyword: str
    entries: list[RetrievalEntry]   # descending score, ties by clip id

    @property
    def n_positive(self) -> int:
        return sum(e.contains for e in self.entries)


@dataclass
class EvalSettings:
    localization: bool = True
    threshold: float = 0.5
    noise_snr: Optional[float] = None   # eval-time babble on the audio stream
    noise_seed: int = 1234
    noise_k: int = 4
    fusion_w: float = 0.7               # audio weight for AV scoring


class PairScorer:
    """Caches per-clip encodings and per-keyword variant traces.

    ``models`` maps modality ("v"/"a") to a model; with both present the
    per-variant dense logit traces are fused with weight ``fusion_w``
    before the sigmoid.
    """

    def __init__(self, models: dict[str, KwsModel], records: Sequence[ClipRecord],
                 corpus_root: Path, lexicon: Lexicon, settings: EvalSettings):
        if not models:
            raise ValueError("need at least one modality model")
        self.models = models
        self.records = list(records)
        self.lexicon = lexicon
        self.settings = settings
        feats = {r.clip_id: load_clip_features(corpus_root, r)
                 for r in self.records}
        if settings.noise_snr is not None and "a" in models:
            streams = [f["audio"] for f in feats.values()]
            for i, r in enumerate(self.records):
                rng = np.random.default_rng([settings.noise_seed, i])
                clean = feats[r.clip_id]["audio"]
                babble = babble_for(streams, clean.shape[0], clean.shape[1],
                                    rng, settings.noise_k)
                feats[r.clip_id]["audio"] = mix_noise_at_snr(
                    clean, babble, settings.noise_snr)
        self.encoded = {}
        for mod, model in models.items():
            key = "visual" if mod == "v" else "audio"
            self.encoded[mod] = {r.clip_id: model.encode_stream(feats[r.clip_id][key])
                                 for r in self.records}
        self.kw_cache: dict[tuple[str, str], list] = {}

    def _variants(self, mod: str, word: str):
        key = (mod, word)
        if key not in self.kw_cache:
            model = self.models[mod]
            self.kw_cache[key] = [model.encode_keyword(v)
                                  for v in self.lexicon[word].variants]
        return self.kw_cache[key]

    def variant_traces(self, clip_id: str, word: str) -> list[np.ndarray]:
        """One dense stride-1 logit trace per pronunciation variant."""
        per_mod = {}
        for mod, model in self.models.items():
            v = self.encoded[mod][clip_id]
            per_mod[mod] = [model.dense_pair_logits(v, p)
                            for p in self._variants(mod, word)]
        if len(per_mod) == 1:
            return next(iter(per_mod.values()))
        w_a = self.settings.fusion_w
        return [w_a * a + (1.0 - w_a) * v
                for a, v in zip(per_mod["a"], per_mod["v"])]

    def spot(self, clip_id: str, word: str) -> SpotResult:
        traces = self.variant_traces(clip_id, word)
        return spot_variants(traces, self.settings.threshold)


def retrieve(scorer: PairScorer, keywords: Sequence[str],
             phrase_map: Optional[dict[str, tuple[str, ...]]] = None,
             ) -> list[RankedRetrieval]:
    """Rank every clip for every query keyword (or phrase).

    ``phrase_map`` maps a query to its word tuple for containment and
    boundary checks; default is the single-word query itself.
    """
    out = []
    skipped = 0
    for kw in keywords:
        if kw.split()[0] not in scorer.lexicon or any(
                w not in scorer.lexicon for w in kw.split()):
            skipped += 1
            continue
        words = phrase_map[kw] if phrase_map else (kw,)
        entries = []
        for rec in scorer.records:
            res = scorer.spot(rec.clip_id, kw)
            contains, loc_ok = _match(rec, words, res.frame)
            entries.append(RetrievalEntry(rec.clip_id, res.score, res.frame,
                                          contains, loc_ok))
        entries.sort(key=lambda e: (-e.score, e.clip_id))
        out.append(RankedRetrieval(kw, entries))
    if skipped:
        import warnings
        warnings.warn(f"skipped {skipped} out-of-vocabulary queries")
    return out


def _match(rec: ClipRecord, words: tuple[str, ...],
           peak_frame: int) -> tuple[bool, bool]:
    """Does the clip contain the word n-gram, and does the peak fall in it?"""
    n = len(words)
    transcript = rec.transcript
    contains = False
    loc_ok = False
    for i in range(len(transcript) - n + 1):
        if tuple(transcript[i:i + n]) == tuple(words):
            contains = True
            start = rec.bounds[i][1]
            end = rec.bounds[i + n - 1][2]
            if start <= peak_frame < end:
                loc_ok = True
    return contains, loc_ok


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def recall_at_n(retrieval: RankedRetrieval, n: int,
                use_localization: bool = True) -> Optional[float]:
    """Percent of the keyword's positive clips retrieved in the top n.

    Returns None for keywords with no positive clips (excluded from
    aggregates and reported separately).
    """
    positives = retrieval.n_positive
    if positives == 0:
        return None
    hits = sum(e.correct(use_localization) for e in retrieval.entries[:n])
    return 100.0 * hits / positives


def average_precision(retrieval: RankedRetrieval,
                      use_localization: bool = True) -> Optional[float]:
    """Non-interpolated AP: mean precision at each correct match's rank.

    Positive clips that fail localization count as incorrect but stay in
    the per-rank denominators.
    """
    if retrieval.n_positive == 0:
        return None
    hits = 0
    precisions = []
    for rank, e in enumerate(retrieval.entries, start=1):
        if e.correct(use_localization):
            hits += 1
            precisions.append(hits / rank)
    if not precisions:
        return 0.0
    return 100.0 * float(np.mean(precisions))


def mean_average_precision(retrievals: Sequence[RankedRetrieval],
                           use_localization: bool = True) -> float:
    aps = [average_precision(r, use_localization) for r in retrievals]
    aps = [a for a in aps if a is not None]
    if not aps:
        raise MetricError("no keyword has a positive clip")
    return float(np.mean(aps))


def equal_error_rate(scores: Sequence[float],
                     correct: Sequence[bool]) -> float:
    """EER via a sweep over the sorted score set.

    FAR(t) is the fraction of incorrect pairs scoring above t, FRR(t) the
    fraction of correct pairs scoring below t. The crossing of the two
    step functions is found over adjacent thresholds and linearly
    interpolated; with an exact tie the midpoint value is returned.
    """
    scores = np.asarray(scores, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    pos = scores[correct]
    neg = scores[~correct]
    if pos.size == 0 or neg.size == 0:
        raise MetricError("EER needs at least one correct and one incorrect pair")
    thresholds = np.unique(scores)
    far = np.array([(neg > t).mean() for t in thresholds])
    frr = np.array([(pos < t).mean() for t in thresholds])
    diff = far - frr
    exact = np.flatnonzero(diff == 0.0)
    if exact.size:
        i = exact[0]
        return 100.0 * 0.5 * (far[i] + frr[i])
    sign_change = np.flatnonzero(np.sign(diff[:-1]) != np.sign(diff[1:]))
    if sign_change.size == 0:
        i = int(np.argmin(np.abs(diff)))
        return 100.0 * 0.5 * (far[i] + frr[i])
    i = int(sign_change[0])
    t_frac = diff[i] / (diff[i] - diff[i + 1])
    eer = far[i] + t_frac * (far[i + 1] - far[i])
    return 100.0 * float(eer)


def pooled_pairs(retrievals: Sequence[RankedRetrieval],
                 use_localization: bool = True
                 ) -> tuple[np.ndarray, np.ndarray]:
    scores, labels = [], []
    for r in retrievals:
        for e in r.entries:
            scores.append(e.score)
            labels.append(e.correct(use_localization))
    return np.asarray(scores), np.asarray(labels)


def compute_metrics(retrievals: Sequence[RankedRetrieval],
                    use_localization: bool = True) -> dict[str, float]:
    scores, labels = pooled_pairs(retrievals, use_localization)
    out = {}
    for n in (1, 5, 10):
        vals = [recall_at_n(r, n, use_localization) for r in retrievals]
        vals = [v for v in vals if v is not None]
        out[f"R@{n}"] = float(np.mean(vals)) if vals else float("nan")
    out["mAP"] = mean_average_precision(retrievals, use_localization)
    out["EER"] = equal_error_rate(scores, labels)
    return out


# ---------------------------------------------------------------------------
# reporting over checkpoints
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    checkpoints: list[str]
    rows: list[tuple[str, str, str, float]] = field(default_factory=list)
    summary: dict[str, tuple[float, float]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "keyword", "checkpoint", "value"])
            for metric, keyword, ckpt, value in self.rows:
                writer.writerow([metric, keyword, ckpt, repr(value)])
            for metric, (mean, std) in sorted(self.summary.items()):
                writer.writerow([metric, "__ALL__", "mean", repr(mean)])
                writer.writerow([metric, "__ALL__", "std", repr(std)])


def homophone_collisions(lexicon: Lexicon,
                         keywords: Sequence[str]) -> list[tuple[str, str]]:
    """Distinct queried words with an identical pronunciation variant."""
    seen: dict[tuple[int, ...], str] = {}
    collisions = []
    for w in keywords:
        for v in lexicon[w].variants:
            if v in seen and seen[v] != w:
                collisions.append((seen[v], w))
            else:
                seen[v] = w
    return collisions


def report(checkpoint_paths: Sequence[Path], make_scorer, keywords,
           use_localization: bool = True,
           score_dump: Optional[Path] = None) -> MetricsReport:
    """Evaluate the last five checkpoints and aggregate mean +- std.

    ``make_scorer`` maps a checkpoint path to a PairScorer (the caller owns
    model loading and modality wiring). Population std is reported.
    """
    paths = list(checkpoint_paths)[-5:]
    rep = MetricsReport([str(p) for p in paths])
    if len(paths) < 5:
        rep.warnings.append(
            f"only {len(paths)} checkpoints available; aggregating over all")
    per_metric: dict[str, list[float]] = {}
    for ckpt in paths:
        scorer = make_scorer(ckpt)
        if ckpt == paths[0]:
            for a, b in homophone_collisions(scorer.lexicon, keywords):
                rep.warnings.append(
                    f"keywords {a!r} and {b!r} share a pronunciation")
        retrievals = retrieve(scorer, keywords)
        label = Path(ckpt).stem
        for r in retrievals:
            for n in (1, 5, 10):
                v = recall_at_n(r, n, use_localization)
                if v is not None:
                    rep.rows.append((f"R@{n}", r.keyword, label, v))
            ap = average_precision(r, use_localization)
            if ap is not None:
                rep.rows.append(("AP", r.keyword, label, ap))
        agg = compute_metrics(retrievals, use_localization)
        for metric, value in agg.items():
            rep.rows.append((metric, "__ALL__", label, value))
            per_metric.setdefault(metric, []).append(value)
        if score_dump is not None and ckpt == paths[-1]:
            dump_scores(score_dump, retrievals, use_localization)
    for metric, values in per_metric.items():
        arr = np.asarray(values)
        rep.summary[metric] = (float(arr.mean()), float(arr.std()))
    return rep


def dump_scores(path, retrievals: Sequence[RankedRetrieval],
                use_localization: bool = True):
    """TSV dump: keyword, clip, score, peak frame, correctness."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in retrievals:
            for e in r.entries:
                fh.write(f"{r.keyword}\t{e.clip_id}\t{e.score!r}\t"
                         f"{e.peak_frame}\t{int(e.correct(use_localization))}\n")


def fusion_sweep(scorer_a: PairScorer, scorer_v: PairScorer,
                 keywords: Sequence[str], weights: Sequence[float],
                 use_localization: bool = True
                 ) -> dict[float, dict[str, float]]:
    """Aggregate metrics per audio weight, fusing cached per-pair traces.

    The two scorers share the clip set; per-variant dense traces are
    computed once per modality and mixed for every grid point.
    """
    from .kwsnet import spot_variants
    ids_a = [r.clip_id for r in scorer_a.records]
    ids_v = [r.clip_id for r in scorer_v.records]
    if ids_a != ids_v:
        raise MetricError("fusion sweep needs identical clip sets")
    cached = {}
    for kw in keywords:
        for rec in scorer_a.records:
            cached[(kw, rec.clip_id)] = (
                scorer_a.variant_traces(rec.clip_id, kw),
                scorer_v.variant_traces(rec.clip_id, kw))
    out: dict[float, dict[str, float]] = {}
    for w in weights:
        retrievals = []
        for kw in keywords:
            entries = []
            for rec in scorer_a.records:
                ta, tv = cached[(kw, rec.clip_id)]
                fused = [w * a + (1.0 - w) * v for a, v in zip(ta, tv)]
                res = spot_variants(fused, scorer_a.settings.threshold)
                contains, loc_ok = _match(rec, (kw,), res.frame)
                entries.append(RetrievalEntry(rec.clip_id, res.score,
                                              res.frame, contains, loc_ok))
            entries.sort(key=lambda e: (-e.score, e.clip_id))
            retrievals.append(RankedRetrieval(kw, entries))
        out[w] = compute_metrics(retrievals, use_localization)
    return out
