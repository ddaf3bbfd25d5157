"""Byte-pair-encoding tokenizer: prompt text -> fixed-length id sequences.

The encoding pipeline is NFC normalization, whitespace collapsing, lowercasing,
regex word splitting, byte-to-unicode mapping, then ranked BPE merges with a
"</w>" end-of-word marker. With the packaged vocabulary this reproduces the
standard CLIP tokenization; tiny hand-built vocabularies work the same way.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import regex

_WORD_PATTERN = regex.compile(
    r"""<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+"""
)

BOS_TOKEN = "<|startoftext|>"
EOS_TOKEN = "<|endoftext|>"
WORD_END = "</w>"


class TokenizerError(ValueError):
    pass


@lru_cache(maxsize=1)
def _byte_encoder() -> dict[int, str]:
    """Map every byte to a printable unicode char (the GPT-2/CLIP table)."""
    bs = list(range(ord("!"), ord("~") + 1)) + list(range(ord("\xa1"), ord("\xac") + 1)) + list(range(ord("\xae"), ord("\xff") + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, (chr(c) for c in cs)))


@lru_cache(maxsize=1)
def _byte_decoder() -> dict[str, int]:
    return {c: b for b, c in _byte_encoder().items()}


@dataclass(frozen=True)
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: dict[int, str]
    bos_id: int
    eos_id: int
    pad_id: int

    def __len__(self) -> int:
        return len(self.token_to_id)


@dataclass(frozen=True)
class MergeRules:
    pairs: tuple[tuple[str, str], ...]
    ranks: dict[tuple[str, str], int]

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class TokenSequence:
    """Fixed-length id sequence: bos, content, eos, then padding."""

    ids: tuple[int, ...]
    length: int  # content tokens including bos/eos

    @property
    def context_len(self) -> int:
        return len(self.ids)

    def content_ids(self) -> tuple[int, ...]:
        """Ids without bos/eos/padding."""
        return self.ids[1 : self.length - 1]


def load_vocabulary(vocab_source: str, merges_source: str) -> tuple[Vocabulary, MergeRules]:
    """Parse a vocabulary blob (JSON map or "token id" lines) and a merges blob.

    Merges are one "left right" pair per line, ranked by line order; a leading
    "#version" header line is tolerated.
    """
    token_to_id: dict[str, int] = {}
    stripped = vocab_source.lstrip()
    if stripped.startswith("{"):
        raw = json.loads(vocab_source)
        for token, idx in raw.items():
            if token in token_to_id:
                raise TokenizerError(f"duplicate vocabulary token {token!r}")
            token_to_id[token] = int(idx)
    else:
        for lineno, line in enumerate(vocab_source.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                token, idx = line.rsplit(maxsplit=1)
            except ValueError:
                raise TokenizerError(f"vocabulary line {lineno} is not 'token id': {line!r}") from None
            if token in token_to_id:
                raise TokenizerError(f"duplicate vocabulary token {token!r} at line {lineno}")
            token_to_id[token] = int(idx)

    id_to_token: dict[int, str] = {}
    for token, idx in token_to_id.items():
        if idx in id_to_token:
            raise TokenizerError(f"duplicate vocabulary id {idx} ({id_to_token[idx]!r} vs {token!r})")
        id_to_token[idx] = token
    size = len(token_to_id)
    if size == 0:
        raise TokenizerError("empty vocabulary")
    if min(id_to_token) != 0 or max(id_to_token) != size - 1:
        raise TokenizerError(f"vocabulary ids must be dense in [0, {size})")
    for special in (BOS_TOKEN, EOS_TOKEN):
        if special not in token_to_id:
            raise TokenizerError(f"vocabulary is missing required token {special!r}")

    vocab = Vocabulary(
        token_to_id=token_to_id,
        id_to_token=id_to_token,
        bos_id=token_to_id[BOS_TOKEN],
        eos_id=token_to_id[EOS_TOKEN],
        pad_id=token_to_id[EOS_TOKEN],
    )

    pairs: list[tuple[str, str]] = []
    ranks: dict[tuple[str, str], int] = {}
    for lineno, line in enumerate(merges_source.splitlines(), start=1):
        line = line.strip()
        if not line or (lineno == 1 and line.startswith("#version")):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise TokenizerError(f"merges line {lineno} is not 'left right': {line!r}")
        pair = (parts[0], parts[1])
        if pair in ranks:
            raise TokenizerError(f"duplicate merge pair at line {lineno}: {line!r}")
        for side in pair:
            if side not in token_to_id:
                raise TokenizerError(f"merges line {lineno} references unknown token {side!r}: {line!r}")
        if parts[0] + parts[1] not in token_to_id:
            raise TokenizerError(f"merges line {lineno} produces unknown token {parts[0] + parts[1]!r}: {line!r}")
        ranks[pair] = len(pairs)
        pairs.append(pair)

    return vocab, MergeRules(pairs=tuple(pairs), ranks=ranks)


@lru_cache(maxsize=1)
def load_default_vocabulary() -> tuple[Vocabulary, MergeRules]:
    """The packaged 49,408-entry vocabulary and its merge rules."""
    data = resources.files("diffuscope").joinpath("data")
    return load_vocabulary(
        data.joinpath("vocab.json").read_text(encoding="utf-8"),
        data.joinpath("merges.txt").read_text(encoding="utf-8"),
    )


def normalize_text(text: str) -> str:
    """NFC, collapse whitespace runs to single spaces, lowercase, trim."""
    text = unicodedata.normalize("NFC", text)
    text = regex.sub(r"\s+", " ", text)
    return text.strip().lower()


def _get_pairs(word: tuple[str, ...]) -> set[tuple[str, str]]:
    return {(word[i], word[i + 1]) for i in range(len(word) - 1)}


def _bpe(word_chars: tuple[str, ...], m: MergeRules) -> tuple[str, ...]:
    """Apply ranked merges to one word whose last symbol carries the end marker."""
    word = word_chars
    pairs = _get_pairs(word)
    while pairs:
        bigram = min(pairs, key=lambda p: m.ranks.get(p, float("inf")))
        if bigram not in m.ranks:
            break
        first, second = bigram
        merged: list[str] = []
        i = 0
        while i < len(word):
            try:
                j = word.index(first, i)
            except ValueError:
                merged.extend(word[i:])
                break
            merged.extend(word[i:j])
            i = j
            if i < len(word) - 1 and word[i + 1] == second:
                merged.append(first + second)
                i += 2
            else:
                merged.append(word[i])
                i += 1
        word = tuple(merged)
        if len(word) == 1:
            break
        pairs = _get_pairs(word)
    return word


def encode(text: str, v: Vocabulary, m: MergeRules, context_len: int) -> TokenSequence:
    """Tokenize text into a fixed-length id sequence wrapped in bos/eos markers.

    Content beyond context_len - 2 tokens is truncated; eos always occupies the
    last content slot. Raises TokenizerError for characters the vocabulary
    cannot represent even after byte mapping.
    """
    if context_len < 2:
        raise TokenizerError(f"context_len must be >= 2, got {context_len}")
    byte_encoder = _byte_encoder()
    content: list[int] = []
    for word in _WORD_PATTERN.findall(normalize_text(text)):
        if word in (BOS_TOKEN, EOS_TOKEN):
            content.append(v.token_to_id[word])
            continue
        chars = tuple(byte_encoder[b] for b in word.encode("utf-8"))
        pieces = _bpe(chars[:-1] + (chars[-1] + WORD_END,), m)
        for piece in pieces:
            piece_id = v.token_to_id.get(piece)
            if piece_id is None:
                char = piece[: -len(WORD_END)] if piece.endswith(WORD_END) else piece
                raise TokenizerError(
                    f"character {char!r} in word {word!r} is not representable in the vocabulary"
                )
            content.append(piece_id)
    content = content[: context_len - 2]
    ids = [v.bos_id] + content + [v.eos_id]
    length = len(ids)
    ids.extend([v.pad_id] * (context_len - length))
    return TokenSequence(ids=tuple(ids), length=length)


def decode(seq: TokenSequence, v: Vocabulary) -> str:
    """Inverse of encode for in-vocabulary text: strips markers and padding."""
    tokens: list[str] = []
    for idx in seq.ids:
        token = v.id_to_token.get(idx)
        if token is None:
            raise TokenizerError(f"unknown token id {idx}")
        if idx in (v.bos_id, v.eos_id, v.pad_id):
            continue
        tokens.append(token)
    byte_decoder = _byte_decoder()
    joined = "".join(tokens)
    try:
        raw = bytes(byte_decoder[c] for c in joined)
        text = raw.decode("utf-8", errors="replace")
    except KeyError:
        # hand-built vocabularies bypass the byte mapping
        text = joined
    return text.replace(WORD_END, " ").strip()
