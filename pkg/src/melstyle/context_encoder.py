"""Hierarchical context encoder: subword- and sentence-level recurrent
attention modules producing C_w, C_s and C_g.

Both modules share the same structure: a bidirectional GRU followed by
scaled dot-product attention with a learnable query.  Queries start at
zero so a fresh model attends uniformly; training shapes them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import ContextWindow
from .errors import ConfigError, DataError
from .nn import BiGRU, Linear, Module, Param, Tensor, scaled_dot_attention
from .nn import autograd as ag
from .semantic import SemanticSequence


@dataclass
class ContextEmbeddings:
    """Window-level context at all three granularities."""

    C_w: list[Tensor]
    sentence_vectors: Tensor
    C_s: Tensor
    C_g: Tensor
    inter_sentence_weights: Tensor
    current_offset: int | None = None

    @property
    def n_sentences(self) -> int:
        return self.C_s.shape[0]

    def current_subword_context(self) -> Tensor:
        if self.current_offset is None:
            raise DataError("context embeddings carry no current-sentence marker")
        return self.C_w[self.current_offset]

    def current_sentence_context(self) -> Tensor:
        if self.current_offset is None:
            raise DataError("context embeddings carry no current-sentence marker")
        return self.C_s[self.current_offset:self.current_offset + 1]


class HierarchicalContextEncoder(Module):
    def __init__(self, d_sem: int, d_ctx: int, rng: np.random.Generator):
        super().__init__()
        if d_ctx % 2 != 0:
            raise ConfigError(f"d_ctx must be even for a bidirectional encoder, got {d_ctx}")
        self.d_sem, self.d_ctx = d_sem, d_ctx
        self.input_proj = Linear(d_sem, d_ctx, rng)
        self.subword_rnn = BiGRU(d_ctx, d_ctx // 2, rng)
        self.subword_query = Param(np.zeros(d_ctx))
        self.sentence_rnn = BiGRU(d_ctx, d_ctx // 2, rng)
        self.sentence_query = Param(np.zeros(d_ctx))

    def encode_subwords(self, sentence_embeddings: Tensor
                        ) -> tuple[Tensor, Tensor, Tensor]:
        """One sentence's semantic rows -> (C_w, sentence vector, subword weights)."""
        if sentence_embeddings.shape[0] < 1:
            raise DataError("cannot encode an empty sentence")
        projected = self.input_proj(sentence_embeddings)
        c_w = self.subword_rnn(projected)
        sentence_vector, weights = scaled_dot_attention(
            self.subword_query.tensor, c_w, c_w)
        return c_w, sentence_vector, weights

    def encode_sentences(self, sentence_vectors: Tensor
                         ) -> tuple[Tensor, Tensor, Tensor]:
        """Window sentence vectors -> (C_s, C_g, inter-sentence weights)."""
        if sentence_vectors.shape[0] < 1:
            raise DataError("cannot encode an empty window")
        c_s = self.sentence_rnn(sentence_vectors)
        c_g, weights = scaled_dot_attention(self.sentence_query.tensor, c_s, c_s)
        return c_s, c_g, weights

    def encode_context(self, sem: SemanticSequence, window: ContextWindow
                       ) -> ContextEmbeddings:
        counts = [utt.n_subwords for utt in window.sentences]
        if [length for _, length in sem.sentence_offsets] != counts:
            raise DataError("semantic offsets do not match the window's subword counts")
        c_w_blocks: list[Tensor] = []
        vectors: list[Tensor] = []
        for i in range(len(window.sentences)):
            c_w, vector, _ = self.encode_subwords(sem.sentence_block(i))
            c_w_blocks.append(c_w)
            vectors.append(ag.reshape(vector, (1, self.d_ctx)))
        sentence_vectors = ag.concat(vectors, axis=0)
        c_s, c_g, weights = self.encode_sentences(sentence_vectors)
        return ContextEmbeddings(C_w=c_w_blocks, sentence_vectors=sentence_vectors,
                                 C_s=c_s, C_g=c_g, inter_sentence_weights=weights,
                                 current_offset=window.current_offset)
