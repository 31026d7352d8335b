"""Open vocabulary, word-level tokenizer, and the frozen target embedding table.

The embedding table plays the role of a locked pretrained token-embedding
space: generated once from a seed, frozen, and used as the regression target
for the first training stage. Real pretrained embeddings can be dropped in
through the binary import format below.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

_PUNCT = ".,;:!?'\"()"

EMBED_MAGIC = b"TEMBED01"


class FrozenTableError(RuntimeError):
    """Attempt to modify a frozen embedding table."""


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and detach leading/trailing
    punctuation as separate tokens."""
    out: list[str] = []
    for chunk in text.lower().split():
        lead: list[str] = []
        trail: list[str] = []
        while chunk and chunk[0] in _PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        while chunk and chunk[-1] in _PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        out.extend(lead)
        if chunk:
            out.append(chunk)
        out.extend(reversed(trail))
    return out


def detokenize(tokens: list[str]) -> str:
    text = " ".join(tokens)
    for p in _PUNCT:
        text = text.replace(f" {p}", p)
    return text


class Vocabulary:
    """Ordered open token set with fixed special indices 0-3."""

    def __init__(self, tokens: list[str]):
        if list(tokens[:4]) != list(SPECIAL_TOKENS):
            raise ValueError("vocabulary must start with the four special tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def from_words(cls, words: list[str]) -> "Vocabulary":
        seen: dict[str, None] = {}
        for w in words:
            if w not in seen and w not in SPECIAL_TOKENS:
                seen[w] = None
        return cls(list(SPECIAL_TOKENS) + list(seen))

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, token: str) -> int:
        return self.index.get(token, UNK)

    def encode_many(self, tokens: list[str]) -> list[int]:
        return [self.encode(t) for t in tokens]

    def decode(self, idx: int) -> str:
        return self.tokens[idx]

    def decode_text(self, ids: list[int]) -> str:
        words = [self.tokens[i] for i in ids if i not in (PAD, BOS, EOS)]
        return detokenize(words)


class TokenEmbeddingTable:
    """|V| x D embedding matrix with a freeze latch and a content checksum."""

    def __init__(self, vectors: np.ndarray, frozen: bool = False):
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValueError(f"embedding table must be 2-d, got {vectors.shape}")
        self._vectors = vectors
        self.frozen = frozen
        if frozen:
            self._vectors.setflags(write=False)

    @classmethod
    def seeded(cls, vocab_size: int, dim: int, seed: int) -> "TokenEmbeddingTable":
        rng = np.random.default_rng(seed)
        vectors = rng.normal(0.0, 1.0, size=(vocab_size, dim)).astype(np.float32)
        table = cls(vectors)
        table.freeze()
        return table

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    @property
    def dim(self) -> int:
        return self._vectors.shape[1]

    def __len__(self) -> int:
        return self._vectors.shape[0]

    def freeze(self) -> None:
        self.frozen = True
        self._vectors.setflags(write=False)

    def checksum(self) -> str:
        return hashlib.sha256(self._vectors.tobytes()).hexdigest()

    def rows(self, ids: list[int] | np.ndarray) -> np.ndarray:
        return self._vectors[np.asarray(ids, dtype=np.int64)]


def target_embeddings(tokens: list[str], vocab: Vocabulary, table: TokenEmbeddingTable) -> np.ndarray:
    """Per-token target rows; out-of-vocabulary tokens use the UNK row."""
    if not table.frozen:
        raise FrozenTableError("target embedding table must be frozen")
    return table.rows(vocab.encode_many(tokens))


def save_embedding_table(path: str | Path, table: TokenEmbeddingTable, vocab: Vocabulary) -> None:
    """Binary export: magic tag, |V| and D as little-endian uint32, then
    |V| * D little-endian float32 values. Token sidecar at ``<path>.vocab``,
    one token per line in index order."""
    path = Path(path)
    n, d = table.vectors.shape
    if n != len(vocab):
        raise ValueError(f"table rows {n} != vocabulary size {len(vocab)}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sII", EMBED_MAGIC, n, d))
        fh.write(np.ascontiguousarray(table.vectors, dtype="<f4").tobytes())
    sidecar = path.with_name(path.name + ".vocab")
    sidecar.write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8")


def load_embedding_table(path: str | Path) -> tuple[TokenEmbeddingTable, Vocabulary]:
    path = Path(path)
    raw = path.read_bytes()
    header = struct.calcsize("<8sII")
    if len(raw) < header:
        raise ValueError(f"embedding file {path} is truncated")
    magic, n, d = struct.unpack_from("<8sII", raw)
    if magic != EMBED_MAGIC:
        raise ValueError(f"embedding file {path} has unknown magic {magic!r}")
    expected = header + n * d * 4
    if len(raw) != expected:
        raise ValueError(f"embedding file {path}: expected {expected} bytes, got {len(raw)}")
    vectors = np.frombuffer(raw, dtype="<f4", offset=header).reshape(n, d).astype(np.float32)
    sidecar = path.with_name(path.name + ".vocab")
    tokens = sidecar.read_text(encoding="utf-8").splitlines()
    if len(tokens) != n:
        raise ValueError(f"sidecar {sidecar} lists {len(tokens)} tokens for {n} rows")
    table = TokenEmbeddingTable(vectors)
    table.freeze()
    return table, Vocabulary(tokens)
