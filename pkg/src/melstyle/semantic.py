"""Per-subword semantic embeddings for a context window.

Pretrained language models are out of scope, so embeddings come from
pluggable providers with a common contract: given a window, return one
row per subword of the concatenated sentence texts, in order.  Providers
may be context-sensitive (they see the whole window at once).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import ContextWindow, Corpus
from .errors import ConfigError, DataError
from .nn import Embedding, Module, Tensor
from .nn import autograd as ag
from .tensorfile import read_tensor, write_tensor

INDEX_NAME = "index.json"


@dataclass
class SemanticSequence:
    """Concatenated window embeddings with per-sentence offsets."""

    embeddings: Tensor
    sentence_offsets: list[tuple[int, int]]
    d_sem: int

    @property
    def total_subwords(self) -> int:
        return self.embeddings.shape[0]

    def sentence_block(self, index: int) -> Tensor:
        start, length = self.sentence_offsets[index]
        return self.embeddings[start:start + length]


def embed_context(window: ContextWindow, provider) -> SemanticSequence:
    """Embed the whole window once and slice per-sentence offsets."""
    counts = [utt.n_subwords for utt in window.sentences]
    if any(c < 1 for c in counts):
        raise DataError("every sentence in the window needs at least one subword")
    embeddings = provider.embed_window(window)
    total = sum(counts)
    if embeddings.shape != (total, provider.d_sem):
        raise DataError(f"provider returned shape {embeddings.shape}, expected "
                        f"({total}, {provider.d_sem})")
    offsets = []
    start = 0
    for count in counts:
        offsets.append((start, count))
        start += count
    return SemanticSequence(embeddings=embeddings, sentence_offsets=offsets,
                            d_sem=provider.d_sem)


def _sinusoid_rows(positions: np.ndarray, d_sem: int) -> np.ndarray:
    """Standard sinusoidal position codes for the given absolute positions."""
    pe = np.zeros((len(positions), d_sem))
    half = (d_sem + 1) // 2
    div = np.exp(np.arange(half) * (-2.0 * np.log(10000.0) / d_sem))
    args = positions[:, None] * div[None, :]
    pe[:, 0::2] = np.sin(args)
    pe[:, 1::2] = np.cos(args[:, : d_sem // 2])
    return pe


class HashProvider:
    """Deterministic pseudo-random token embeddings, optionally position-mixed.

    Each token maps through a seeded hash to a fixed random row, so the
    corpus-wide table is reproducible bit-exactly.  With position mixing a
    sinusoidal code for the subword's position within the concatenated
    window is added, making rows context-dependent.
    """

    def __init__(self, seed: int, d_sem: int, position_mixing: bool = False):
        self.seed = int(seed)
        self.d_sem = int(d_sem)
        self.position_mixing = bool(position_mixing)
        self._cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        row = self._cache.get(token)
        if row is None:
            digest = hashlib.sha256(f"{self.seed}:{token}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            row = rng.standard_normal(self.d_sem)
            self._cache[token] = row
        return row

    def embed_window(self, window: ContextWindow) -> Tensor:
        tokens = [t for utt in window.sentences for t in utt.text]
        table = np.stack([self.token_vector(t) for t in tokens])
        if self.position_mixing:
            table = table + _sinusoid_rows(np.arange(len(tokens), dtype=np.float64),
                                           self.d_sem)
        return Tensor(table)


class PrecomputedProvider:
    """Embeddings read from per-utterance tensor files plus an index."""

    def __init__(self, store_path: str | Path):
        self.store = Path(store_path)
        index_path = self.store / INDEX_NAME
        if not index_path.exists():
            raise DataError(f"precomputed store index not found: {index_path}")
        with open(index_path) as fh:
            index = json.load(fh)
        self.d_sem = int(index["d_sem"])
        self._files: dict[str, str] = index["entries"]

    def _load(self, utt) -> np.ndarray:
        key = f"{utt.document_id}:{utt.sentence_index}"
        if key not in self._files:
            raise DataError(f"precomputed store has no entry for {key}")
        array = read_tensor(self.store / self._files[key]).astype(np.float64)
        if array.shape != (utt.n_subwords, self.d_sem):
            raise DataError(f"stored embedding for {key} has shape {array.shape}, "
                            f"expected ({utt.n_subwords}, {self.d_sem})")
        return array

    def embed_window(self, window: ContextWindow) -> Tensor:
        return Tensor(np.concatenate([self._load(utt) for utt in window.sentences]))


class TrainableProvider(Module):
    """Learnable lookup table over the corpus vocabulary with a reserved UNK row."""

    UNK = 0

    def __init__(self, vocab: list[str], d_sem: int, rng: np.random.Generator):
        super().__init__()
        self.d_sem = int(d_sem)
        self.vocab = {token: i + 1 for i, token in enumerate(vocab)}
        self.table = Embedding(len(vocab) + 1, d_sem, rng)

    def token_id(self, token: str) -> int:
        return self.vocab.get(token, self.UNK)

    def embed_window(self, window: ContextWindow) -> Tensor:
        ids = np.array([self.token_id(t) for utt in window.sentences for t in utt.text],
                       dtype=np.int64)
        return self.table(ids)


def build_provider(kind: str, *, d_sem: int = 768, seed: int = 0,
                   position_mixing: bool = False, store: str | None = None,
                   vocab: list[str] | None = None,
                   rng: np.random.Generator | None = None):
    if kind == "hash":
        return HashProvider(seed=seed, d_sem=d_sem, position_mixing=position_mixing)
    if kind == "precomputed":
        if store is None:
            raise ConfigError("provider.store is required for the precomputed provider")
        return PrecomputedProvider(store)
    if kind == "trainable":
        if vocab is None:
            raise ConfigError("trainable provider needs a corpus vocabulary")
        return TrainableProvider(vocab, d_sem, rng or np.random.default_rng(seed))
    raise ConfigError(f"unknown provider kind {kind!r}")


def build_precomputed_store(corpus: Corpus, provider, out_dir: str | Path) -> Path:
    """Materialize per-utterance embeddings (no window context) as a store."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries: dict[str, str] = {}
    for utt in corpus:
        window = ContextWindow(sentences=(utt,), current_offset=0, L=0)
        block = provider.embed_window(window)
        data = block.data if isinstance(block, Tensor) else np.asarray(block)
        name = f"{utt.document_id}_{utt.sentence_index:04d}.msst"
        write_tensor(out_dir / name, data, dtype="float64")
        entries[f"{utt.document_id}:{utt.sentence_index}"] = name
    with open(out_dir / INDEX_NAME, "w") as fh:
        json.dump({"d_sem": provider.d_sem, "entries": entries}, fh, indent=1,
                  sort_keys=True)
    return out_dir
