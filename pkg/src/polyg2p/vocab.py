"""Polyphone lexicon, extended vocabulary, and character-level tokenization.

A polyphonic character (a single Unicode scalar with two or more readings)
is split into one synthetic monophonic token per reading.  Those per-reading
tokens occupy a contiguous id block appended after the base vocabulary, so
``extended size = base size + total readings``.  All types here are immutable
after construction and safe to share across threads.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

SPECIALS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
PAD, UNK, CLS, SEP, MASK = range(5)

_PINYIN_RE = re.compile(r"^([a-z]+)([1-5])$")


class LexiconError(ValueError):
    """Malformed lexicon/monophone input."""


class VocabError(ValueError):
    """Vocabulary construction or lookup failure."""


@dataclass(frozen=True, order=True)
class Pinyin:
    """A romanized syllable plus tone digit, canonical form ``[a-z]+[1-5]``."""

    syllable: str
    tone: int

    def __post_init__(self):
        if not _PINYIN_RE.match(f"{self.syllable}{self.tone}"):
            raise ValueError(f"not a canonical pinyin: {self.syllable!r} tone {self.tone!r}")

    @classmethod
    def parse(cls, text: str) -> "Pinyin":
        m = _PINYIN_RE.match(text)
        if not m:
            raise ValueError(f"not a canonical pinyin: {text!r}")
        return cls(m.group(1), int(m.group(2)))

    def __str__(self) -> str:
        return f"{self.syllable}{self.tone}"


@dataclass(frozen=True)
class PolyphoneEntry:
    """One polyphonic character and its ordered readings (at least two, all distinct)."""

    scpc: str
    readings: tuple[Pinyin, ...]

    def __post_init__(self):
        if len(self.scpc) != 1:
            raise LexiconError(f"polyphone must be a single character, got {self.scpc!r}")
        if len(self.readings) < 2:
            raise LexiconError(f"{self.scpc!r} needs at least two readings, got {len(self.readings)}")
        if len(set(self.readings)) != len(self.readings):
            raise LexiconError(f"{self.scpc!r} has duplicate readings")


@dataclass(frozen=True)
class Lexicon:
    """Polyphone entries plus an optional monophone pronunciation map."""

    entries: Mapping[str, PolyphoneEntry]
    monophones: Mapping[str, Pinyin] = field(default_factory=dict)

    def __post_init__(self):
        for char, entry in self.entries.items():
            if char != entry.scpc:
                raise LexiconError(f"entry key {char!r} does not match scpc {entry.scpc!r}")
        overlap = set(self.entries) & set(self.monophones)
        if overlap:
            raise LexiconError(f"characters listed as both polyphone and monophone: {sorted(overlap)}")

    @property
    def ncmc_count(self) -> int:
        return sum(len(e.readings) for e in self.entries.values())

    def readings_of(self, char: str) -> tuple[Pinyin, ...]:
        return self.entries[char].readings

    def is_polyphone(self, char: str) -> bool:
        return char in self.entries

    def all_readings(self) -> tuple[Pinyin, ...]:
        """Union of all polyphone readings, sorted; the baseline's global label set."""
        return tuple(sorted({p for e in self.entries.values() for p in e.readings}))


def _parse_lexicon_line(line: str, lineno: int, path) -> tuple[str, tuple[Pinyin, ...]]:
    parts = line.split("\t")
    if len(parts) != 2:
        raise LexiconError(f"{path}:{lineno}: expected <char>\\t<pinyin,...>, got {line!r}")
    char, readings_field = parts[0].strip(), parts[1].strip()
    if len(char) != 1:
        raise LexiconError(f"{path}:{lineno}: first field must be a single character, got {char!r}")
    readings = []
    for item in readings_field.split(","):
        try:
            readings.append(Pinyin.parse(item.strip()))
        except ValueError as exc:
            raise LexiconError(f"{path}:{lineno}: {exc}") from exc
    return char, tuple(readings)


def load_lexicon(path, monophone_path=None) -> Lexicon:
    """Read a polyphone lexicon (TSV: ``<char>\\t<pinyin>,<pinyin>[,...]``).

    ``#`` begins a comment line.  Reading order in the file is preserved.
    An optional monophone file maps single-reading characters
    (``<char>\\t<pinyin>``) for whole-sentence annotation.
    """
    entries: dict[str, PolyphoneEntry] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        char, readings = _parse_lexicon_line(raw, lineno, path)
        if char in entries:
            raise LexiconError(f"{path}:{lineno}: duplicate polyphone {char!r}")
        if len(readings) < 2:
            raise LexiconError(f"{path}:{lineno}: {char!r} needs at least two readings")
        try:
            entries[char] = PolyphoneEntry(char, readings)
        except LexiconError as exc:
            raise LexiconError(f"{path}:{lineno}: {exc}") from exc

    monophones: dict[str, Pinyin] = {}
    if monophone_path is not None:
        mono_text = Path(monophone_path).read_text(encoding="utf-8")
        for lineno, raw in enumerate(mono_text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = raw.split("\t")
            if len(parts) != 2:
                raise LexiconError(f"{monophone_path}:{lineno}: expected <char>\\t<pinyin>")
            char = parts[0].strip()
            if len(char) != 1:
                raise LexiconError(f"{monophone_path}:{lineno}: first field must be a single character")
            if char in monophones:
                raise LexiconError(f"{monophone_path}:{lineno}: duplicate monophone {char!r}")
            try:
                monophones[char] = Pinyin.parse(parts[1].strip())
            except ValueError as exc:
                raise LexiconError(f"{monophone_path}:{lineno}: {exc}") from exc

    return Lexicon(entries=entries, monophones=monophones)


def save_lexicon(lexicon: Lexicon, path, monophone_path=None) -> None:
    lines = [f"{c}\t{','.join(str(p) for p in e.readings)}" for c, e in lexicon.entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if monophone_path is not None:
        mlines = [f"{c}\t{p}" for c, p in lexicon.monophones.items()]
        Path(monophone_path).write_text("\n".join(mlines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class VocabMap:
    """Base token inventory plus the contiguous per-reading extension block.

    Base ids are ``0 .. base_size-1`` (specials first, then single-character
    tokens); extension ids are exactly ``base_size .. base_size+len(ncmcs)-1``
    in the order of ``ncmcs``.  ``(character, pinyin) <-> extension id`` is a
    bijection.  Unlike systems that scatter new tokens over reserved slots,
    the assignment here is fully determined by the lexicon (characters by
    code point, readings in lexicon order), so two builds of the same lexicon
    always agree.
    """

    base_tokens: tuple[str, ...]
    ncmcs: tuple[tuple[str, Pinyin], ...]

    @cached_property
    def _base_index(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(self.base_tokens)}

    @cached_property
    def _ncmc_index(self) -> dict[tuple[str, Pinyin], int]:
        return {pair: self.base_size + i for i, pair in enumerate(self.ncmcs)}

    @cached_property
    def _by_scpc(self) -> dict[str, tuple[tuple[Pinyin, int], ...]]:
        grouped: dict[str, list[tuple[Pinyin, int]]] = {}
        for i, (scpc, pinyin) in enumerate(self.ncmcs):
            grouped.setdefault(scpc, []).append((pinyin, self.base_size + i))
        return {c: tuple(v) for c, v in grouped.items()}

    @property
    def base_size(self) -> int:
        return len(self.base_tokens)

    @property
    def size(self) -> int:
        return len(self.base_tokens) + len(self.ncmcs)

    pad_id = PAD
    unk_id = UNK
    cls_id = CLS
    sep_id = SEP
    mask_id = MASK

    def base_id(self, token: str) -> int:
        try:
            return self._base_index[token]
        except KeyError:
            raise VocabError(f"token {token!r} not in base vocabulary") from None

    def is_ncmc(self, token_id: int) -> bool:
        return self.base_size <= token_id < self.size

    def ncmc_info(self, token_id: int) -> tuple[str, Pinyin]:
        if not self.is_ncmc(token_id):
            raise VocabError(f"id {token_id} is not in the extension block")
        return self.ncmcs[token_id - self.base_size]

    def ncmc_id(self, scpc: str, pinyin: Pinyin) -> int:
        if scpc not in self._by_scpc:
            raise VocabError(f"{scpc!r} is not a known polyphone")
        try:
            return self._ncmc_index[(scpc, pinyin)]
        except KeyError:
            raise VocabError(f"{pinyin} is not a reading of {scpc!r}") from None

    def candidates(self, scpc: str) -> tuple[tuple[Pinyin, int], ...]:
        """All (reading, extension id) pairs of ``scpc``, in lexicon order."""
        try:
            return self._by_scpc[scpc]
        except KeyError:
            raise VocabError(f"{scpc!r} is not a known polyphone") from None

    @property
    def scpc_chars(self) -> frozenset:
        return frozenset(self._by_scpc)

    def token(self, token_id: int) -> str:
        """Token string for an id; extension ids render as ``<char><reading#>``."""
        if not 0 <= token_id < self.size:
            raise VocabError(f"id {token_id} out of range for vocabulary of size {self.size}")
        if token_id < self.base_size:
            return self.base_tokens[token_id]
        scpc, pinyin = self.ncmcs[token_id - self.base_size]
        index = next(i for i, (p, _) in enumerate(self._by_scpc[scpc]) if p == pinyin)
        return f"{scpc}{index + 1}"

    def _match_display_form(self, text: str, i: int) -> tuple[int, int] | None:
        """Match ``<char><digits>`` starting at ``i``; returns (id, chars consumed)."""
        ch = text[i]
        group = self._by_scpc.get(ch)
        if group is None:
            return None
        j = i + 1
        while j < len(text) and text[j].isascii() and text[j].isdigit():
            j += 1
        # longest digit run whose value names an existing reading wins
        for end in range(j, i + 1, -1):
            n = int(text[i + 1:end])
            if 1 <= n <= len(group):
                return group[n - 1][1], end - i
        return None

    def encode(self, text: str) -> list[int]:
        """Token ids for ``text``: ``[CLS]`` + one id per character + ``[SEP]``.

        Out-of-vocabulary characters map to ``[UNK]``.  A polyphone character
        immediately followed by an ASCII reading number (the display form
        produced by :meth:`decode`, e.g. ``X2``) is read back as the
        corresponding extension token; this is the one exception to the
        one-token-per-scalar rule and makes decode/encode mutually inverse.
        """
        ids = [self.cls_id]
        i = 0
        while i < len(text):
            merged = self._match_display_form(text, i)
            if merged is not None:
                ids.append(merged[0])
                i += merged[1]
            else:
                ids.append(self._base_index.get(text[i], self.unk_id))
                i += 1
        ids.append(self.sep_id)
        return ids

    def encode_chars(self, text: str) -> list[int]:
        """Strict one-id-per-scalar encoding (no display-form merging).

        Keeps token position = character index + 1 exactly; used wherever
        label positions must align with the text.
        """
        idx = self._base_index
        return [self.cls_id] + [idx.get(ch, self.unk_id) for ch in text] + [self.sep_id]

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.token(int(i)) for i in ids)


def build_vocab(base_tokens: Sequence[str], lexicon: Lexicon) -> VocabMap:
    """Assemble the extended vocabulary for ``lexicon`` over ``base_tokens``.

    Extension ordering is deterministic: entries sorted by character code
    point, readings in lexicon order.  Every polyphone must already be a base
    token.
    """
    base = tuple(base_tokens)
    if base[:len(SPECIALS)] != SPECIALS:
        raise VocabError(f"base tokens must start with the specials {SPECIALS}")
    if len(set(base)) != len(base):
        raise VocabError("base tokens contain duplicates")
    for tok in base[len(SPECIALS):]:
        if len(tok) != 1:
            raise VocabError(f"non-special base token must be a single character, got {tok!r}")
    index = {tok: i for i, tok in enumerate(base)}
    ncmcs: list[tuple[str, Pinyin]] = []
    for scpc in sorted(lexicon.entries, key=ord):
        if scpc not in index:
            raise VocabError(f"polyphone {scpc!r} missing from base tokens")
        for pinyin in lexicon.entries[scpc].readings:
            ncmcs.append((scpc, pinyin))
    return VocabMap(base_tokens=base, ncmcs=tuple(ncmcs))


def base_vocab(base_tokens: Sequence[str]) -> VocabMap:
    """A vocabulary with an empty extension block (pre-training stage)."""
    return build_vocab(base_tokens, Lexicon(entries={}))


def base_tokens_from_chars(chars: Iterable[str]) -> tuple[str, ...]:
    """Specials followed by the given characters sorted by code point."""
    return SPECIALS + tuple(sorted(set(chars), key=ord))


def lexicon_from_vocab(vocab: VocabMap) -> Lexicon:
    """Reconstruct the polyphone entries recorded in a vocabulary's extension block."""
    grouped: dict[str, list[Pinyin]] = {}
    for scpc, pinyin in vocab.ncmcs:
        grouped.setdefault(scpc, []).append(pinyin)
    return Lexicon(entries={c: PolyphoneEntry(c, tuple(ps)) for c, ps in grouped.items()})
