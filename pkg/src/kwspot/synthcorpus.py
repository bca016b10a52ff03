"""Synthetic viseme/phoneme feature corpora with planted keywords.

Clips are emitted directly at video frame rate as feature streams: the
visual stream repeats a per-viseme embedding for the duration of each
phoneme (so words that differ only inside one viseme group are visually
identical), while the audio stream repeats the per-phoneme embedding.
Gaussian emission noise, exact word boundaries, babble-surrogate noise
mixing, and disjoint train/test vocabularies make the corpus a stand-in
for sentence-level lip-reading data at desk scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import GenerationError, NumericError, VocabularyError
from .gradcore import read_tensors, write_tensors
from .pronlex import Lexicon, PhonemeVocab, parse_lexicon, split_vocabulary

ARPABET_VOWELS = ["AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY",
                  "IH", "IY", "OW", "OY", "UH", "UW"]
ARPABET_CONSONANTS = ["B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L",
                      "M", "N", "NG", "P", "R", "S", "SH", "T", "TH", "V",
                      "W", "Y", "Z", "ZH"]

# Coarse viseme classes: consonants by place of articulation, vowels by
# rounding/height. The bilabial group is the canonical confusable triple.
VISEME_GROUPS = {
    "bilabial": ["B", "P", "M"],
    "labiodental": ["F", "V"],
    "dental": ["TH", "DH"],
    "alveolar": ["D", "T", "S", "Z", "N", "L"],
    "postalveolar": ["CH", "JH", "SH", "ZH"],
    "velar": ["K", "G", "NG", "HH"],
    "glide_r": ["R", "W"],
    "palatal": ["Y"],
    "v_high_front": ["IY", "IH"],
    "v_mid_front": ["EH", "EY", "AE"],
    "v_open": ["AA", "AH", "AY"],
    "v_round": ["AO", "OW", "OY", "UH", "UW", "AW"],
    "v_rhotic": ["ER"],
}

_LETTERS = {
    "AA": "o", "AE": "a", "AH": "u", "AO": "aw", "AW": "ow", "AY": "i",
    "EH": "e", "ER": "ur", "EY": "ay", "IH": "i", "IY": "ee", "OW": "o",
    "OY": "oy", "UH": "oo", "UW": "u", "B": "b", "CH": "ch", "D": "d",
    "DH": "th", "F": "f", "G": "g", "HH": "h", "JH": "j", "K": "k",
    "L": "l", "M": "m", "N": "n", "NG": "ng", "P": "p", "R": "r",
    "S": "s", "SH": "sh", "T": "t", "TH": "th", "V": "v", "W": "w",
    "Y": "y", "Z": "z", "ZH": "zh",
}


def _base(symbol: str) -> str:
    return symbol[:-1] if symbol[-1].isdigit() else symbol


class VisemeMap:
    """Total many-to-one phoneme-id -> viseme-id map for a phoneme vocab."""

    def __init__(self, vocab: PhonemeVocab,
                 groups: Optional[dict[str, list[str]]] = None):
        groups = groups or VISEME_GROUPS
        base_to_group = {}
        for gname, members in groups.items():
            for m in members:
                base_to_group[m] = gname
        self.group_names = sorted(groups)
        self._gid = {g: i for i, g in enumerate(self.group_names)}
        self.mapping: dict[int, int] = {}
        for symbol in vocab.symbols:
            b = _base(symbol)
            if b not in base_to_group:
                raise VocabularyError(f"phoneme {symbol!r} has no viseme group")
            self.mapping[vocab.id(symbol)] = self._gid[base_to_group[b]]
        self.n_visemes = len(self.group_names)
        if self.n_visemes >= len(vocab.symbols):
            raise GenerationError("viseme count must be below phoneme count")
        sizes = {}
        for vid in self.mapping.values():
            sizes[vid] = sizes.get(vid, 0) + 1
        if max(sizes.values()) < 3:
            raise GenerationError("need at least one confusable group of size >= 3")

    def viseme(self, phoneme_id: int) -> int:
        try:
            return self.mapping[phoneme_id]
        except KeyError:
            raise VocabularyError(f"phoneme id {phoneme_id} unmapped") from None


def phoneme_to_viseme(track: Sequence[tuple[int, int, int]],
                      vmap: VisemeMap) -> list[tuple[int, int, int]]:
    """Relabel a (phoneme_id, start, end) track; timing is unchanged."""
    return [(vmap.viseme(pid), s, e) for pid, s, e in track]


# ---------------------------------------------------------------------------
# lexicon generation
# ---------------------------------------------------------------------------

def generate_lexicon(n_words: int, seed: int, min_np: int = 3,
                     max_np: int = 9, n_minimal_pairs: int = 0,
                     alt_fraction: float = 0.04,
                     comment: str = "generated lexicon",
                     ) -> tuple[str, list[tuple[str, str]]]:
    """Make a CMUdict-format lexicon of pronounceable pseudo-words.

    Pronunciations alternate consonant/vowel runs; each word carries one
    primary-stress vowel. ``n_minimal_pairs`` extra word pairs are planted
    that differ in exactly one consonant within a single viseme group (the
    confusable probes). Returns (lexicon text, list of probe word pairs).
    """
    rng = np.random.default_rng([seed, 0x1E1C])
    words: dict[str, list[str]] = {}
    prons_seen: set[tuple[str, ...]] = set()

    def spell(phones: list[str]) -> str:
        return "".join(_LETTERS[_base(p)] for p in phones).upper()

    def sample_pron(n_p: int) -> list[str]:
        phones = []
        want_vowel = bool(rng.integers(0, 2))
        for _ in range(n_p):
            pool = ARPABET_VOWELS if want_vowel else ARPABET_CONSONANTS
            phones.append(str(rng.choice(pool)))
            # mostly alternate C/V with occasional clusters
            want_vowel = not want_vowel if rng.random() < 0.8 else want_vowel
        vowel_slots = [i for i, p in enumerate(phones) if p in ARPABET_VOWELS]
        if not vowel_slots:
            phones[int(rng.integers(0, n_p))] = str(rng.choice(ARPABET_VOWELS))
            vowel_slots = [i for i, p in enumerate(phones)
                           if p in ARPABET_VOWELS]
        primary = int(rng.choice(vowel_slots))
        for i in vowel_slots:
            phones[i] = phones[i] + ("1" if i == primary else "0")
        return phones

    def add_word(phones: list[str]) -> Optional[str]:
        key = tuple(phones)
        if key in prons_seen:
            return None
        name = spell(phones)
        k = 2
        while name in words:
            name = spell(phones) + str(k)
            k += 1
        words[name] = phones
        prons_seen.add(key)
        return name

    lengths = rng.integers(min_np, max_np + 1, size=4 * n_words)
    li = 0
    while len(words) < n_words and li < len(lengths):
        add_word(sample_pron(int(lengths[li])))
        li += 1
    if len(words) < n_words:
        raise GenerationError(f"could not generate {n_words} distinct words")

    pairs: list[tuple[str, str]] = []
    conf_groups = [g for g in VISEME_GROUPS.values()
                   if len(g) >= 2 and g[0] in ARPABET_CONSONANTS]
    guard = 0
    while len(pairs) < n_minimal_pairs and guard < 50 * max(1, n_minimal_pairs):
        guard += 1
        phones = sample_pron(int(rng.integers(max(6, min_np), max_np + 1)))
        slots = [i for i, p in enumerate(phones)
                 if any(p in g for g in conf_groups)]
        if not slots:
            continue
        slot = int(rng.choice(slots))
        group = next(g for g in conf_groups if phones[slot] in g)
        alt = str(rng.choice([m for m in group if m != phones[slot]]))
        sibling = list(phones)
        sibling[slot] = alt
        wa = add_word(phones)
        wb = add_word(sibling)
        if wa and wb:
            pairs.append((wa.lower(), wb.lower()))
    if len(pairs) < n_minimal_pairs:
        raise GenerationError(
            f"only planted {len(pairs)}/{n_minimal_pairs} minimal pairs")

    names = list(words)
    for name in rng.choice(names, size=int(alt_fraction * len(names)),
                           replace=False):
        phones = list(words[name])
        vowel_slots = [i for i, p in enumerate(phones) if p[-1].isdigit()]
        i = int(rng.choice(vowel_slots))
        stress = phones[i][-1]
        alt_vowel = str(rng.choice(ARPABET_VOWELS)) + stress
        if _base(alt_vowel) == _base(phones[i]):
            continue
        phones[i] = alt_vowel
        if tuple(phones) not in prons_seen:
            words[name + "\x00alt"] = phones  # marker, rendered as WORD(2)
            prons_seen.add(tuple(phones))

    lines = [f";;; {comment} (seed={seed})"]
    for name in sorted(words):
        if name.endswith("\x00alt"):
            continue
        lines.append(f"{name}  {' '.join(words[name])}")
        alt = name + "\x00alt"
        if alt in words:
            lines.append(f"{name}(2)  {' '.join(words[alt])}")
    return "\n".join(lines) + "\n", pairs


# ---------------------------------------------------------------------------
# clip synthesis
# ---------------------------------------------------------------------------

@dataclass
class NoiseSpec:
    """Babble-surrogate noise: the sum of k other clips' audio streams."""

    snr_db: float = 0.0
    apply_prob: float = 0.5
    k: int = 4

    def __post_init__(self):
        if not 0.0 <= self.apply_prob <= 1.0:
            raise ValueError(f"apply_prob must be in [0,1], got {self.apply_prob}")


@dataclass
class SyntheticClip:
    clip_id: str
    transcript: list[str]
    phoneme_track: list[tuple[int, int, int]]   # (phoneme id, start, end)
    word_bounds: list[tuple[str, int, int]]     # (word, start, end)
    visual: np.ndarray                          # (t_v, d_syn)
    audio: np.ndarray                           # (t_v, d_syn)
    seed: int

    @property
    def t_v(self) -> int:
        return self.visual.shape[0]


@dataclass
class EmissionModel:
    """Unit-norm random embedding per viseme (visual) and phoneme (audio)."""

    d_syn: int
    sigma: float
    viseme_table: np.ndarray
    phoneme_table: np.ndarray
    crossfade: bool = False

    @classmethod
    def build(cls, vocab: PhonemeVocab, vmap: VisemeMap, d_syn: int,
              sigma: float, seed: int, crossfade: bool = False):
        rng = np.random.default_rng([seed, 0xE311])
        vis = rng.normal(size=(vmap.n_visemes, d_syn))
        vis /= np.linalg.norm(vis, axis=1, keepdims=True)
        pho = rng.normal(size=(len(vocab), d_syn))  # row 0 = padding, unused
        pho /= np.linalg.norm(pho, axis=1, keepdims=True)
        return cls(d_syn, sigma, vis, pho, crossfade)


def synth_clip(clip_id: str, transcript: Sequence[str], lexicon: Lexicon,
               vmap: VisemeMap, emission: EmissionModel, seed: int,
               mean_dur: int = 3, jitter: int = 1,
               sigma: Optional[float] = None) -> SyntheticClip:
    """Emit one clip; deterministic given ``seed``.

    Durations are uniform integers in [mean-jitter, mean+jitter] clamped to
    >= 1 frame. The first pronunciation variant of each word is spoken.
    """
    if mean_dur < 1:
        raise ValueError(f"mean duration must be >= 1 frame, got {mean_dur}")
    for w in transcript:
        if w not in lexicon:
            raise VocabularyError(f"word not in lexicon: {w!r}")
    sigma = emission.sigma if sigma is None else sigma
    rng = np.random.default_rng([seed, 0xC119])

    phoneme_track: list[tuple[int, int, int]] = []
    word_bounds: list[tuple[str, int, int]] = []
    t = 0
    for w in transcript:
        variant = lexicon[w].variants[0]
        w_start = t
        for pid in variant:
            dur = max(1, int(rng.integers(mean_dur - jitter, mean_dur + jitter + 1)))
            phoneme_track.append((pid, t, t + dur))
            t += dur
        word_bounds.append((w, w_start, t))

    t_v = t
    visual = np.zeros((t_v, emission.d_syn))
    audio = np.zeros((t_v, emission.d_syn))
    for pid, s, e in phoneme_track:
        visual[s:e] = emission.viseme_table[vmap.viseme(pid)]
        audio[s:e] = emission.phoneme_table[pid]
    if emission.crossfade:
        for _, s, _ in phoneme_track[1:]:
            visual[s] = 0.5 * visual[s] + 0.5 * visual[s - 1]
            audio[s] = 0.5 * audio[s] + 0.5 * audio[s - 1]
    if sigma > 0:
        visual = visual + rng.normal(scale=sigma, size=visual.shape)
        audio = audio + rng.normal(scale=sigma, size=audio.shape)
    return SyntheticClip(clip_id, list(transcript), phoneme_track,
                         word_bounds, visual, audio, seed)


def mix_noise_at_snr(signal: np.ndarray, noise: np.ndarray,
                     snr_db: float) -> np.ndarray:
    """Scale ``noise`` so the signal/noise power ratio is exactly snr_db."""
    if signal.shape != noise.shape:
        raise NumericError(
            f"signal {signal.shape} and noise {noise.shape} shapes differ")
    p_signal = float(np.mean(signal ** 2))
    p_noise = float(np.mean(noise ** 2))
    if p_noise <= 0.0:
        raise NumericError("noise stream has zero power")
    alpha = np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    return signal + alpha * noise


def babble_for(streams: Sequence[np.ndarray], t_v: int, d: int,
               rng: np.random.Generator, k: int = 4) -> np.ndarray:
    """Sum of k randomly chosen streams, tiled/cropped to t_v frames."""
    idx = rng.choice(len(streams), size=min(k, len(streams)), replace=False)
    out = np.zeros((t_v, d))
    for i in idx:
        s = streams[int(i)]
        reps = -(-t_v // s.shape[0])
        out += np.tile(s, (reps, 1))[:t_v]
    return out


# ---------------------------------------------------------------------------
# corpus building and manifests
# ---------------------------------------------------------------------------

@dataclass
class CorpusParams:
    n_pretrain: int = 800
    n_train: int = 2000
    n_test: int = 200
    n_probe_per_pair: int = 2
    n_train_keywords: int = 200
    test_quota_long: int = 30      # test words with 6 <= n_p <= 7
    test_quota_xlong: int = 20     # test words with n_p >= 8
    test_quota_short: int = 25     # test words with 4 <= n_p <= 5
    n_minimal_pairs: int = 24
    fillers_per_clip: int = 3
    short_test_prob: float = 0.35
    distractor_prob: float = 0.5   # chance a test keyword gets a confusable twin
    d_syn: int = 16
    sigma: float = 0.2
    mean_dur: int = 3
    jitter: int = 1
    crossfade: bool = False
    min_np: int = 4
    keyword_min_np: int = 6


@dataclass
class ClipRecord:
    clip_id: str
    path: str
    transcript: list[str]
    bounds: list[tuple[str, int, int]]


@dataclass
class Corpus:
    root: Path
    lexicon: Lexicon
    vmap: VisemeMap
    train_vocab: list[str]
    test_vocab: list[str]
    excluded: list[str]
    train_keywords: list[str]
    probe_pairs: list[tuple[str, str]]
    manifests: dict[str, list[ClipRecord]]
    meta: dict = field(default_factory=dict)


def write_manifest(path: Path, records: Iterable[ClipRecord]):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            bounds = ",".join(f"{w}:{s}:{e}" for w, s, e in r.bounds)
            fh.write(f"{r.clip_id}\t{r.path}\t{' '.join(r.transcript)}\t{bounds}\n")


def read_manifest(path: Path) -> list[ClipRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            clip_id, fpath, transcript, bounds = line.split("\t")
            parsed = []
            for item in bounds.split(","):
                w, s, e = item.rsplit(":", 2)
                parsed.append((w, int(s), int(e)))
            records.append(ClipRecord(clip_id, fpath, transcript.split(), parsed))
    return records


def load_clip_features(root: Path, record: ClipRecord) -> dict[str, np.ndarray]:
    return read_tensors(root / record.path)


def build_corpus(lexicon: Lexicon, outdir, params: CorpusParams, seed: int,
                 probe_pairs: Optional[list[tuple[str, str]]] = None) -> Corpus:
    """Generate the full corpus tree: vocab splits, clips, manifests.

    Training transcripts never contain a test-vocabulary word; every test
    clip contains at least one long test keyword. Probe clips (noiseless,
    one per planted confusable word) and visually-confusable distractors in
    the test set are included for the modality studies.
    """
    outdir = Path(outdir)
    (outdir / "clips").mkdir(parents=True, exist_ok=True)
    vmap = VisemeMap(lexicon.vocab)
    emission = EmissionModel.build(lexicon.vocab, vmap, params.d_syn,
                                   params.sigma, seed, params.crossfade)
    rng = np.random.default_rng([seed, 0xC0DE])

    probe_pairs = probe_pairs or []
    probe_words = {w for pair in probe_pairs for w in pair}
    pool = [w for w in lexicon.words() if w not in probe_words]

    quota = {(params.keyword_min_np, 7): params.test_quota_long,
             (8, 99): params.test_quota_xlong,
             (params.min_np, params.keyword_min_np - 1): params.test_quota_short}
    test_size = sum(quota.values())
    train_vocab, test_vocab, excluded = split_vocabulary(
        pool, lexicon, params.min_np, test_size, seed, test_np_quota=quota)

    long_train = [w for w in train_vocab
                  if lexicon[w].min_np >= params.keyword_min_np]
    if len(long_train) < params.n_train_keywords:
        raise GenerationError(
            f"only {len(long_train)} train keywords with n_p >= "
            f"{params.keyword_min_np}, need {params.n_train_keywords}")
    train_keywords = sorted(rng.choice(long_train, size=params.n_train_keywords,
                                       replace=False).tolist())
    fillers = sorted(set(train_vocab) - set(train_keywords)) + excluded
    if len(fillers) < params.fillers_per_clip + 1:
        raise GenerationError("not enough filler words for transcripts")

    test_long = [w for w in test_vocab
                 if lexicon[w].min_np >= params.keyword_min_np]
    test_short = [w for w in test_vocab
                  if lexicon[w].min_np < params.keyword_min_np]

    # visually-confusable distractor words: siblings of test keywords that
    # appear only in other test clips (unseen during training, never queried)
    distractors: dict[str, str] = {}
    extra_entries: list[str] = []
    conf_groups = [g for g in VISEME_GROUPS.values()
                   if len(g) >= 2 and g[0] in ARPABET_CONSONANTS]
    existing = set(lexicon.words())
    for kw in test_long:
        if rng.random() > params.distractor_prob:
            continue
        phones = lexicon.symbols_of(lexicon[kw].variants[0])
        slots = [i for i, p in enumerate(phones)
                 if any(p in g for g in conf_groups)]
        if not slots:
            continue
        slot = int(rng.choice(slots))
        group = next(g for g in conf_groups if phones[slot] in g)
        alt = str(rng.choice([m for m in group if m != phones[slot]]))
        sib_phones = list(phones)
        sib_phones[slot] = alt
        sib = "".join(_LETTERS[_base(p)] for p in sib_phones).lower()
        k = 2
        while sib in existing or sib in distractors.values():
            sib = sib + str(k)
            k += 1
        distractors[kw] = sib
        extra_entries.append(f"{sib.upper()}  {' '.join(sib_phones)}")

    if extra_entries:
        base_text = _lexicon_text(lexicon)
        lexicon = parse_lexicon(iter((base_text + "\n".join(extra_entries)
                                      + "\n").splitlines(keepends=True)))
        vmap = VisemeMap(lexicon.vocab)
        emission = EmissionModel.build(lexicon.vocab, vmap, params.d_syn,
                                       params.sigma, seed, params.crossfade)

    with open(outdir / "lexicon.txt", "w", encoding="utf-8") as fh:
        lexicon.dump(fh)
    for name, words in (("vocab_train.txt", train_vocab),
                        ("vocab_test.txt", test_vocab),
                        ("vocab_excluded.txt", excluded)):
        with open(outdir / name, "w", encoding="utf-8") as fh:
            fh.write("\n".join(words) + ("\n" if words else ""))

    def emit(clip_id: str, transcript: list[str], clip_seed: int,
             sigma: Optional[float] = None) -> ClipRecord:
        clip = synth_clip(clip_id, transcript, lexicon, vmap, emission,
                          clip_seed, params.mean_dur, params.jitter,
                          sigma=sigma)
        rel = f"clips/{clip_id}.kwt"
        write_tensors(outdir / rel, {"visual": clip.visual, "audio": clip.audio})
        return ClipRecord(clip_id, rel, clip.transcript, clip.word_bounds)

    manifests: dict[str, list[ClipRecord]] = {}

    pre = []
    for i in range(params.n_pretrain):
        kw = train_keywords[int(rng.integers(0, len(train_keywords)))]
        pre.append(emit(f"pre{i:06d}", [kw], int(rng.integers(0, 2 ** 31))))
    manifests["pretrain"] = pre

    trn = []
    for i in range(params.n_train):
        kw = train_keywords[int(rng.integers(0, len(train_keywords)))]
        fill = rng.choice(fillers, size=params.fillers_per_clip,
                          replace=False).tolist()
        slot = int(rng.integers(0, params.fillers_per_clip + 1))
        transcript = fill[:slot] + [kw] + fill[slot:]
        trn.append(emit(f"trn{i:06d}", transcript, int(rng.integers(0, 2 ** 31))))
    manifests["train"] = trn

    tst = []
    if params.n_test and not test_long:
        raise GenerationError("no long test keywords available for test clips")
    distractor_items = sorted(distractors.items())
    for i in range(params.n_test):
        kw = test_long[int(rng.integers(0, len(test_long)))]
        extras: list[str] = []
        if test_short and rng.random() < params.short_test_prob:
            extras.append(test_short[int(rng.integers(0, len(test_short)))])
        if distractor_items and rng.random() < 0.25:
            dk, dw = distractor_items[int(rng.integers(0, len(distractor_items)))]
            if dk != kw:
                extras.append(dw)
        n_fill = max(1, params.fillers_per_clip - len(extras))
        fill = rng.choice(fillers, size=n_fill, replace=False).tolist()
        context = fill + extras
        rng.shuffle(context)
        # keyword placed interior so phrase queries have both neighbours
        slot = int(rng.integers(1, len(context))) if len(context) > 1 else 1
        transcript = context[:slot] + [kw] + context[slot:]
        tst.append(emit(f"tst{i:06d}", transcript, int(rng.integers(0, 2 ** 31))))
    manifests["test"] = tst

    prb = []
    for pi, (wa, _) in enumerate(probe_pairs):
        for j in range(params.n_probe_per_pair):
            fill = rng.choice(fillers, size=params.fillers_per_clip,
                              replace=False).tolist()
            slot = int(rng.integers(1, len(fill))) if len(fill) > 1 else 1
            transcript = fill[:slot] + [wa] + fill[slot:]
            prb.append(emit(f"prb{pi:03d}_{j}", transcript,
                            int(rng.integers(0, 2 ** 31)), sigma=0.0))
    manifests["probe"] = prb

    for name, records in manifests.items():
        write_manifest(outdir / f"manifest_{name}.tsv", records)

    meta = {
        "seed": seed,
        "params": {k: getattr(params, k) for k in vars(params)},
        "lexicon_digest": lexicon.digest,
        "probe_pairs": [list(p) for p in probe_pairs],
        "distractors": distractors,
        "train_keywords": train_keywords,
        "clip_counts": {k: len(v) for k, v in manifests.items()},
    }
    with open(outdir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)

    return Corpus(outdir, lexicon, vmap, train_vocab, test_vocab, excluded,
                  train_keywords, probe_pairs, manifests, meta)


def _lexicon_text(lexicon: Lexicon) -> str:
    import io
    buf = io.StringIO()
    lexicon.dump(buf)
    return buf.getvalue()


def load_corpus(root) -> Corpus:
    """Re-open a corpus directory written by :func:`build_corpus`."""
    root = Path(root)
    with open(root / "meta.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    with open(root / "lexicon.txt", encoding="utf-8") as fh:
        lexicon = parse_lexicon(fh)
    vmap = VisemeMap(lexicon.vocab)

    def readwords(name):
        p = root / name
        if not p.exists():
            return []
        return [w for w in p.read_text(encoding="utf-8").splitlines() if w]

    manifests = {}
    for mf in sorted(root.glob("manifest_*.tsv")):
        manifests[mf.stem.replace("manifest_", "")] = read_manifest(mf)
    return Corpus(root, lexicon, vmap, readwords("vocab_train.txt"),
                  readwords("vocab_test.txt"), readwords("vocab_excluded.txt"),
                  meta.get("train_keywords", []),
                  [tuple(p) for p in meta.get("probe_pairs", [])],
                  manifests, meta)
