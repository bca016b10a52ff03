"""Pronouncing-dictionary ingestion and query-to-phoneme conversion.

Input format is the CMUdict flat file: one ``WORD  PH1 PH2 ...`` entry per
line, ``;;;`` comment lines, and ``WORD(2)`` markers for alternate
pronunciations, which are folded into the base word's variant list.
Stress digits are kept by default (AE1 and AE0 are distinct tokens); a
``strip_stress`` switch folds them for ablation.
"""

from __future__ import annotations

import hashlib
import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, TextIO, Union

import numpy as np

from .errors import LexiconError, VocabularyError

PAD_ID = 0

_ALT_RE = re.compile(r"^(?P<word>.+?)\((?P<n>\d+)\)$")
_STRESS_RE = re.compile(r"^([A-Z]+)([0-2])$")


class PhonemeVocab:
    """Bijective phoneme symbol <-> id map; id 0 is reserved for padding."""

    def __init__(self, symbols: Iterable[str]):
        self._symbols = list(dict.fromkeys(symbols))
        if "<pad>" in self._symbols:
            raise ValueError("'<pad>' is reserved")
        self._ids = {s: i + 1 for i, s in enumerate(self._symbols)}

    def __len__(self) -> int:
        return len(self._symbols) + 1  # including padding id 0

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._ids

    def id(self, symbol: str) -> int:
        try:
            return self._ids[symbol]
        except KeyError:
            raise VocabularyError(f"unknown phoneme symbol {symbol!r}") from None

    def symbol(self, pid: int) -> str:
        if pid == PAD_ID:
            raise VocabularyError("id 0 is the padding id, not a phoneme")
        try:
            return self._symbols[pid - 1]
        except IndexError:
            raise VocabularyError(f"unknown phoneme id {pid}") from None

    @property
    def symbols(self) -> list[str]:
        return list(self._symbols)


@dataclass
class Pronunciation:
    """A word with one or more phoneme-id sequences."""

    word: str
    variants: list[tuple[int, ...]] = field(default_factory=list)

    @property
    def n_p(self) -> list[int]:
        return [len(v) for v in self.variants]

    @property
    def min_np(self) -> int:
        return min(len(v) for v in self.variants)


class Lexicon:
    """Case-insensitive word -> Pronunciation map with a source digest."""

    def __init__(self, vocab: PhonemeVocab,
                 entries: dict[str, Pronunciation], digest: str,
                 malformed_lines: int = 0):
        self.vocab = vocab
        self._entries = entries
        self.digest = digest
        self.malformed_lines = malformed_lines

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, word: str) -> bool:
        return _canon(word) in self._entries

    def __getitem__(self, word: str) -> Pronunciation:
        key = _canon(word)
        if key not in self._entries:
            raise VocabularyError(f"word not in lexicon: {word!r}")
        return self._entries[key]

    def words(self) -> list[str]:
        return list(self._entries)

    def symbols_of(self, variant: tuple[int, ...]) -> list[str]:
        return [self.vocab.symbol(p) for p in variant]

    def dump(self, fh: TextIO):
        """Serialize back to CMUdict flat-file format."""
        for word, pron in self._entries.items():
            for i, variant in enumerate(pron.variants):
                name = word.upper() if i == 0 else f"{word.upper()}({i + 1})"
                fh.write(f"{name}  {' '.join(self.symbols_of(variant))}\n")


def _canon(word: str) -> str:
    return word.strip().lower()


def _strip_stress(symbol: str) -> str:
    m = _STRESS_RE.match(symbol)
    return m.group(1) if m else symbol


def parse_lexicon(stream: Union[TextIO, Iterable[str]],
                  strip_stress: bool = False) -> Lexicon:
    """Parse a CMUdict-style flat file into a Lexicon.

    Malformed lines are counted and skipped; a file with zero valid entries
    raises :class:`LexiconError`.
    """
    raw: dict[str, list[list[str]]] = {}
    malformed = 0
    hasher = hashlib.sha256()
    for line in stream:
        hasher.update(line.encode("utf-8"))
        line = line.rstrip("\n")
        if not line.strip() or line.startswith(";;;"):
            continue
        fields = line.split()
        if len(fields) < 2:
            malformed += 1
            continue
        head, phones = fields[0], fields[1:]
        if not all(re.fullmatch(r"[A-Z]+[0-2]?", p) for p in phones):
            malformed += 1
            continue
        m = _ALT_RE.match(head)
        word = _canon(m.group("word") if m else head)
        if strip_stress:
            phones = [_strip_stress(p) for p in phones]
        raw.setdefault(word, []).append(phones)

    if not raw:
        raise LexiconError(
            f"no valid lexicon entries found ({malformed} malformed lines)")

    symbols = sorted({p for variants in raw.values() for v in variants for p in v})
    vocab = PhonemeVocab(symbols)
    entries: dict[str, Pronunciation] = {}
    for word, variants in raw.items():
        seen: list[tuple[int, ...]] = []
        for v in variants:
            ids = tuple(vocab.id(p) for p in v)
            if ids not in seen:
                seen.append(ids)
        entries[word] = Pronunciation(word, seen)
    return Lexicon(vocab, entries, hasher.hexdigest(), malformed)


def pronounce(query: str, lexicon: Lexicon) -> list[tuple[int, ...]]:
    """Phoneme-id sequences for a word or whitespace-separated phrase.

    Multi-word phrases return the cross-product of per-word variants, each
    the concatenation of the word pronunciations.
    """
    words = query.split()
    if not words:
        raise VocabularyError("empty query")
    per_word = []
    for w in words:
        if w not in lexicon:
            raise VocabularyError(f"word not in lexicon: {w!r}")
        per_word.append(lexicon[w].variants)
    out: list[tuple[int, ...]] = []
    for combo in itertools.product(*per_word):
        seq = tuple(itertools.chain.from_iterable(combo))
        if seq not in out:
            out.append(seq)
    return out


def split_vocabulary(words: Iterable[str], lexicon: Lexicon, min_np: int,
                     test_size: int, seed: int,
                     test_np_quota: Optional[dict[tuple[int, int], int]] = None,
                     ) -> tuple[list[str], list[str], list[str]]:
    """Split a word pool into disjoint train/test vocabularies.

    A word is eligible when its shortest pronunciation variant has at least
    ``min_np`` phonemes. The test vocabulary is drawn by seeded sampling;
    the train vocabulary is every other eligible word. Returns
    (train, test, excluded-short) word lists.

    ``test_np_quota`` optionally stratifies the draw: a map from an
    inclusive (lo, hi) phoneme-length band to the number of test words to
    draw from it (bands must be disjoint and sum to ``test_size``).
    """
    if min_np < 1:
        raise ValueError(f"min_np must be >= 1, got {min_np}")
    pool = list(dict.fromkeys(_canon(w) for w in words))
    eligible = [w for w in pool if w in lexicon and lexicon[w].min_np >= min_np]
    excluded = [w for w in pool if w not in eligible]
    if test_size > len(eligible):
        raise ValueError(
            f"requested {test_size} test words but only {len(eligible)} eligible")
    rng = np.random.default_rng([seed, 0xB0CA])
    if test_np_quota is None:
        test = sorted(rng.choice(eligible, size=test_size, replace=False).tolist()) \
            if test_size else []
    else:
        if sum(test_np_quota.values()) != test_size:
            raise ValueError("test_np_quota must sum to test_size")
        test = []
        for (lo, hi), count in sorted(test_np_quota.items()):
            band = [w for w in eligible
                    if lo <= lexicon[w].min_np <= hi and w not in test]
            if count > len(band):
                raise ValueError(
                    f"band {lo}..{hi} has {len(band)} eligible words, "
                    f"needs {count}")
            test.extend(rng.choice(band, size=count, replace=False).tolist())
        test = sorted(test)
    test_set = set(test)
    train = [w for w in eligible if w not in test_set]
    return train, test, excluded
