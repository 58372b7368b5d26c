"""Multi-scale style extraction from mel-spectrograms.

Three reference encoders read the window, the current sentence and each
subword slice of the current sentence.  The reference embeddings become
residuals (each finer level minus the coarser one) and each residual is
decomposed through its level's style-token attention into the final style
embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import ContextWindow
from .errors import ConfigError, DataError
from .nn import ConvStack, GRU, Module, MultiHeadAttention, Param, Tensor
from .nn import autograd as ag
from .nn.layers import uniform_fan_in

LEVELS = ("global", "sentence", "subword")


@dataclass
class ReferenceEmbeddings:
    E_g: Tensor
    E_s: Tensor
    E_w: Tensor  # [n_subwords, d_ref]


@dataclass
class ResidualEmbeddings:
    R_g: Tensor
    R_s: Tensor
    R_w: Tensor


@dataclass
class StyleEmbeddings:
    S_g: Tensor
    S_s: Tensor
    S_w: Tensor  # [n_subwords, d_style]
    token_weights: dict[str, Tensor] = field(default_factory=dict)

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (np.array(self.S_g.data), np.array(self.S_s.data),
                np.array(self.S_w.data))


class ReferenceEncoder(Module):
    """Conv pyramid over a mel segment followed by a GRU; the final state is
    the reference embedding.

    ``embed_batch`` zero-pads a list of segments to a shared length and runs
    them in one pass, which is how the per-subword slices are processed.
    """

    def __init__(self, mel_bins: int, channels: tuple[int, ...], d_ref: int,
                 rng: np.random.Generator):
        super().__init__()
        self.mel_bins = mel_bins
        self.conv = ConvStack(mel_bins, channels, rng)
        self.rnn = GRU(self.conv.out_width, d_ref, rng)
        self.d_ref = d_ref

    def embed_batch(self, mels: list[np.ndarray]) -> Tensor:
        """Encode equal-padded segments; returns ``[len(mels), d_ref]``."""
        if not mels:
            raise DataError("reference encoder got an empty batch")
        longest = max(m.shape[0] for m in mels)
        if longest < 1:
            raise DataError("reference encoder needs at least one frame")
        stack = np.zeros((len(mels), longest, self.mel_bins))
        for i, mel in enumerate(mels):
            stack[i, :mel.shape[0]] = mel
        features = self.conv.batched(stack)
        h = Tensor(np.zeros((len(mels), self.d_ref)))
        for step in range(features.shape[1]):
            h = self.rnn.step(features[:, step], h)
        return h

    def __call__(self, mel) -> Tensor:
        data = mel.data if isinstance(mel, Tensor) else np.asarray(mel, dtype=np.float64)
        if data.shape[0] < 1:
            raise DataError("reference encoder needs at least one frame")
        return ag.reshape(self.embed_batch([data]), (self.d_ref,))


class StyleTokenLayer(Module):
    """Multi-head attention from a residual embedding onto learnable tokens.

    Keys and values are the tanh-activated token bank; the output is the
    concatenation of per-head attended values, width d_style.  The query
    projection is initialized ``attention_gain`` times hotter than fan-in
    scaling so that a fresh layer already attends input-dependently; with
    near-uniform initial weights the output is almost constant and the
    token bank differentiates far too slowly at small training budgets.
    """

    def __init__(self, d_ref: int, d_style: int, n_tokens: int, heads: int,
                 rng: np.random.Generator, attention_gain: float = 6.0):
        super().__init__()
        if n_tokens < 1:
            raise ConfigError(f"style token count must be >= 1, got {n_tokens}")
        if d_style % heads != 0:
            raise ConfigError(f"token heads {heads} must divide d_style {d_style}")
        self.n_tokens = n_tokens
        d_token = d_style // heads
        self.tokens = Param(uniform_fan_in(rng, (n_tokens, d_token), d_token))
        self.attention = MultiHeadAttention(d_ref, d_token, d_style, heads, rng,
                                            out_proj=False)
        self.attention.w_query.data = self.attention.w_query.data * attention_gain

    def batched(self, residuals: Tensor) -> tuple[Tensor, Tensor]:
        """``[n, d_ref]`` residual rows -> (styles ``[n, d_style]``,
        weights ``[heads, n, n_tokens]``)."""
        bank = ag.tanh(self.tokens.tensor)
        return self.attention(residuals, bank, bank)

    def __call__(self, residual: Tensor) -> tuple[Tensor, Tensor]:
        if residual.ndim != 1:
            raise DataError("style token layer expects a single residual vector")
        out, weights = self.batched(ag.reshape(residual, (1, residual.shape[0])))
        return ag.reshape(out, (out.shape[1],)), ag.reshape(
            weights, (weights.shape[0], self.n_tokens))


class MultiScaleStyleExtractor(Module):
    """Reference encoders plus style-token layers for all three levels."""

    def __init__(self, mel_bins: int, d_style: int, conv_channels: tuple[int, ...],
                 n_tokens: int, heads: int, rng: np.random.Generator,
                 attention_gain: float = 6.0):
        super().__init__()
        self.mel_bins = mel_bins
        self.d_style = d_style
        self.global_encoder = ReferenceEncoder(mel_bins, conv_channels, d_style, rng)
        self.sentence_encoder = ReferenceEncoder(mel_bins, conv_channels, d_style, rng)
        self.subword_encoder = ReferenceEncoder(mel_bins, conv_channels, d_style, rng)
        self.global_tokens = StyleTokenLayer(d_style, d_style, n_tokens, heads, rng,
                                             attention_gain=attention_gain)
        self.sentence_tokens = StyleTokenLayer(d_style, d_style, n_tokens, heads,
                                               rng, attention_gain=attention_gain)
        self.subword_tokens = StyleTokenLayer(d_style, d_style, n_tokens, heads,
                                              rng, attention_gain=attention_gain)

    def level_modules(self, level: str) -> list[Module]:
        if level == "global":
            return [self.global_encoder, self.global_tokens]
        if level == "sentence":
            return [self.sentence_encoder, self.sentence_tokens]
        if level == "subword":
            return [self.subword_encoder, self.subword_tokens]
        raise ConfigError(f"unknown style level {level!r}")

    # -- extraction stages -------------------------------------------------

    def extract_reference(self, window: ContextWindow) -> ReferenceEmbeddings:
        current = window.current
        window_mel = np.concatenate([utt.mel for utt in window.sentences], axis=0)
        e_g = self.global_encoder(window_mel)
        e_s = self.sentence_encoder(current.mel)
        slices = []
        for start, end in current.subword_spans():
            piece = current.mel[start:end]
            if piece.shape[0] == 0:
                piece = np.zeros((1, self.mel_bins))
            slices.append(np.asarray(piece, dtype=np.float64))
        e_w = self.subword_encoder.embed_batch(slices)
        return ReferenceEmbeddings(E_g=e_g, E_s=e_s, E_w=e_w)

    @staticmethod
    def compute_residuals(ref: ReferenceEmbeddings) -> ResidualEmbeddings:
        r_g = ref.E_g
        r_s = ag.sub(ref.E_s, ref.E_g)
        r_w = ag.sub(ref.E_w, ag.reshape(ref.E_s, (1, ref.E_s.shape[0])))
        return ResidualEmbeddings(R_g=r_g, R_s=r_s, R_w=r_w)

    def style_tokens(self, level: str, residual: Tensor) -> tuple[Tensor, Tensor]:
        layer = {"global": self.global_tokens, "sentence": self.sentence_tokens,
                 "subword": self.subword_tokens}.get(level)
        if layer is None:
            raise ConfigError(f"unknown style level {level!r}")
        return layer(residual)

    def extract_multiscale(self, window: ContextWindow) -> StyleEmbeddings:
        ref = self.extract_reference(window)
        res = self.compute_residuals(ref)
        s_g, w_g = self.global_tokens(res.R_g)
        s_s, w_s = self.sentence_tokens(res.R_s)
        s_w, w_w = self.subword_tokens.batched(res.R_w)
        return StyleEmbeddings(S_g=s_g, S_s=s_s, S_w=s_w,
                               token_weights={"global": w_g, "sentence": w_s,
                                              "subword": w_w})
