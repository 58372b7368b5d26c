"""Non-autoregressive acoustic backbone with multi-scale style injection.

Pipeline: phoneme encoder -> add per-phoneme style (the three levels summed,
the subword level replicated through the subword-to-phoneme alignment) ->
variance adaptor (phoneme-level pitch and energy as quantized embeddings) ->
duration predictor and length regulator -> mel decoder.

Pitch and energy are regressed in a z-scored domain derived from corpus
statistics; the public prediction object exposes both the normalized values
(the training targets) and the de-normalized Hz / linear values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .corpus import Corpus, phone_level_average
from .errors import ConfigError, DataError
from .nn import (Embedding, LayerNorm, Linear, Module, ModuleList,
                 MultiHeadAttention, Tensor)
from .nn import autograd as ag
from .nn.layers import Conv1d


@dataclass
class PhonemeSequence:
    """Phoneme ids plus the subword index owning each phoneme."""

    ids: np.ndarray
    subword_of: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.subword_of = np.asarray(self.subword_of, dtype=np.int64)
        if len(self.ids) != len(self.subword_of):
            raise DataError("ids and subword_of must have equal length")
        if len(self.ids) == 0:
            raise DataError("empty phoneme sequence")
        if np.any(np.diff(self.subword_of) < 0):
            raise DataError("subword_of must be non-decreasing")

    @property
    def n_phonemes(self) -> int:
        return len(self.ids)

    @property
    def n_subwords(self) -> int:
        return int(self.subword_of.max()) + 1

    @classmethod
    def from_utterance(cls, utt, phoneme_map: dict[str, int]) -> "PhonemeSequence":
        try:
            ids = np.array([phoneme_map[p] for p in utt.phonemes], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"unknown phoneme symbol {exc.args[0]!r}") from exc
        subword_of = np.repeat(np.arange(len(utt.subword_phoneme_counts)),
                               utt.subword_phoneme_counts)
        return cls(ids=ids, subword_of=subword_of)


@dataclass
class FeatureStats:
    """Corpus-level statistics for variance normalization and quantization."""

    pitch_mean: float
    pitch_std: float
    energy_mean: float
    energy_std: float
    energy_min: float
    energy_max: float
    pitch_range: tuple[float, float] = (0.0, 600.0)

    def to_dict(self) -> dict:
        return {"pitch_mean": self.pitch_mean, "pitch_std": self.pitch_std,
                "energy_mean": self.energy_mean, "energy_std": self.energy_std,
                "energy_min": self.energy_min, "energy_max": self.energy_max,
                "pitch_range": list(self.pitch_range)}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureStats":
        data = dict(data)
        data["pitch_range"] = tuple(data.get("pitch_range", (0.0, 600.0)))
        return cls(**data)

    def norm_pitch(self, hz: np.ndarray) -> np.ndarray:
        return (np.asarray(hz, dtype=np.float64) - self.pitch_mean) / self.pitch_std

    def denorm_pitch(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.pitch_std + self.pitch_mean

    def norm_energy(self, e: np.ndarray) -> np.ndarray:
        return (np.asarray(e, dtype=np.float64) - self.energy_mean) / self.energy_std

    def denorm_energy(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.energy_std + self.energy_mean


def compute_feature_stats(corpus: Corpus, keys=None) -> FeatureStats:
    """Phone-level pitch/energy statistics over the given (or all) utterances."""
    pitches, energies = [], []
    selected = [corpus.utterance(*k) for k in keys] if keys is not None else list(corpus)
    for utt in selected:
        pitches.append(phone_level_average(utt.pitch_frame, utt.durations,
                                           exclude_zeros=True))
        energies.append(phone_level_average(utt.energy_frame, utt.durations))
    pitch = np.concatenate(pitches)
    energy = np.concatenate(energies)
    return FeatureStats(
        pitch_mean=float(pitch.mean()), pitch_std=max(float(pitch.std()), 1e-6),
        energy_mean=float(energy.mean()), energy_std=max(float(energy.std()), 1e-6),
        energy_min=float(energy.min()), energy_max=float(energy.max()))


def quantize(values: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    """Linear binning over [lo, hi]: lo -> bin 0, hi -> bin bins-1."""
    values = np.asarray(values, dtype=np.float64)
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


@dataclass
class VariancePredictions:
    """Per-phoneme variance predictions, normalized and physical views."""

    pitch_norm: Tensor
    energy_norm: Tensor
    log_duration: Tensor
    stats: FeatureStats

    @property
    def pitch(self) -> np.ndarray:
        """Predicted pitch in Hz."""
        return self.stats.denorm_pitch(self.pitch_norm.data)

    @property
    def energy(self) -> np.ndarray:
        """Predicted energy on the corpus linear scale."""
        return self.stats.denorm_energy(self.energy_norm.data)

    def round_durations(self) -> np.ndarray:
        """Free-running rule: round(exp(log_duration) - 1), floored at 0."""
        frames = np.round(np.exp(self.log_duration.data) - 1.0)
        return np.maximum(frames, 0.0).astype(np.int64)


@dataclass
class MelPrediction:
    mel: Tensor
    durations_rounded: np.ndarray

    @property
    def frames(self) -> int:
        return int(self.mel.shape[0])


@lru_cache(maxsize=64)
def _positional_encoding(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    half = (d + 1) // 2
    div = np.exp(np.arange(half) * (-2.0 * math.log(10000.0) / d))
    args = pos * div[None, :]
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(args)
    pe[:, 1::2] = np.cos(args[:, : d // 2])
    return pe


class FeedForwardBlock(Module):
    """Self-attention plus position-wise feed-forward, post-norm residuals."""

    def __init__(self, d_model: int, heads: int, d_ff: int, rng: np.random.Generator):
        super().__init__()
        self.attention = MultiHeadAttention(d_model, d_model, d_model, heads, rng,
                                            out_proj=True)
        self.norm1 = LayerNorm(d_model)
        self.ff1 = Linear(d_model, d_ff, rng, activation="relu")
        self.ff2 = Linear(d_ff, d_model, rng)
        self.norm2 = LayerNorm(d_model)

    def __call__(self, x: Tensor) -> Tensor:
        attended, _ = self.attention(x, x, x)
        h = self.norm1(ag.add(x, attended))
        return self.norm2(ag.add(h, self.ff2(self.ff1(h))))


class VariancePredictorNet(Module):
    """Two conv1d/relu/norm blocks and a scalar projection per phoneme."""

    def __init__(self, d_model: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv1d(d_model, hidden, rng, kernel=3)
        self.norm1 = LayerNorm(hidden)
        self.conv2 = Conv1d(hidden, hidden, rng, kernel=3)
        self.norm2 = LayerNorm(hidden)
        self.out = Linear(hidden, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm1(ag.relu(self.conv1(x)))
        h = self.norm2(ag.relu(self.conv2(h)))
        return ag.reshape(self.out(h), (x.shape[0],))


def style_triple(styles) -> tuple[Tensor, Tensor, Tensor]:
    """Accept extractor or predictor outputs (or a raw triple) uniformly."""
    if hasattr(styles, "S_g_hat"):
        return styles.S_g_hat, styles.S_s_hat, styles.S_w_hat
    if hasattr(styles, "S_g"):
        return styles.S_g, styles.S_s, styles.S_w
    s_g, s_s, s_w = styles
    wrap = lambda v: v if isinstance(v, Tensor) else Tensor(v)
    return wrap(s_g), wrap(s_s), wrap(s_w)


class AcousticModel(Module):
    def __init__(self, phoneme_vocab: int, mel_bins: int, d_model: int,
                 rng: np.random.Generator, encoder_layers: int = 2,
                 decoder_layers: int = 2, heads: int = 2, d_ff: int = 64,
                 variance_hidden: int = 32, variance_bins: int = 64,
                 stats: FeatureStats | None = None):
        super().__init__()
        self.phoneme_vocab = phoneme_vocab
        self.mel_bins = mel_bins
        self.d_model = d_model
        self.variance_bins = variance_bins
        self.stats = stats or FeatureStats(pitch_mean=0.0, pitch_std=1.0,
                                           energy_mean=0.0, energy_std=1.0,
                                           energy_min=0.0, energy_max=1.0)
        self.embedding = Embedding(phoneme_vocab, d_model, rng)
        self.encoder = _blocks(encoder_layers, d_model, heads, d_ff, rng)
        self.pitch_net = VariancePredictorNet(d_model, variance_hidden, rng)
        self.energy_net = VariancePredictorNet(d_model, variance_hidden, rng)
        self.duration_net = VariancePredictorNet(d_model, variance_hidden, rng)
        self.pitch_embedding = Embedding(variance_bins, d_model, rng)
        self.energy_embedding = Embedding(variance_bins, d_model, rng)
        self.decoder = _blocks(decoder_layers, d_model, heads, d_ff, rng)
        self.mel_out = Linear(d_model, mel_bins, rng)

    # -- stages ------------------------------------------------------------

    def encode_phonemes(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        hidden = self.embedding(ids)
        hidden = ag.add(hidden, Tensor(_positional_encoding(len(ids), self.d_model)))
        for block in self.encoder:
            hidden = block(hidden)
        return hidden

    def replicate_styles(self, styles, phonemes: PhonemeSequence) -> Tensor:
        """Per-phoneme style: S_g + S_s + S_w[subword_of[p]]."""
        s_g, s_s, s_w = style_triple(styles)
        if phonemes.n_subwords > s_w.shape[0]:
            raise DataError(f"alignment references subword {phonemes.n_subwords - 1} "
                            f"but styles cover {s_w.shape[0]}")
        base = ag.add(s_g, s_s)
        rows = s_w[phonemes.subword_of]
        return ag.add(rows, ag.reshape(base, (1, base.shape[0])))

    def variance_adapt(self, hidden: Tensor, targets: dict | None = None
                       ) -> tuple[Tensor, VariancePredictions]:
        """Predict pitch/energy/duration; inject quantized pitch and energy.

        In teacher-forced mode (``targets`` with raw ``pitch_hz``/``energy``)
        the injected embeddings come from the ground truth; predictions are
        still returned for the loss.
        """
        stats = self.stats
        pitch_norm = self.pitch_net(hidden)
        if targets is not None:
            pitch_source = np.asarray(targets["pitch_hz"], dtype=np.float64)
        else:
            pitch_source = stats.denorm_pitch(pitch_norm.data)
        lo, hi = stats.pitch_range
        pitch_bins = quantize(pitch_source, lo, hi, self.variance_bins)
        hidden = ag.add(hidden, self.pitch_embedding(pitch_bins))

        energy_norm = self.energy_net(hidden)
        if targets is not None:
            energy_source = np.asarray(targets["energy"], dtype=np.float64)
        else:
            energy_source = stats.denorm_energy(energy_norm.data)
        energy_bins = quantize(energy_source, stats.energy_min, stats.energy_max,
                               self.variance_bins)
        hidden = ag.add(hidden, self.energy_embedding(energy_bins))

        log_duration = self.duration_net(hidden)
        return hidden, VariancePredictions(pitch_norm=pitch_norm,
                                           energy_norm=energy_norm,
                                           log_duration=log_duration, stats=stats)

    def length_regulate(self, hidden: Tensor, durations: np.ndarray) -> Tensor:
        durations = np.asarray(durations, dtype=np.int64)
        if np.any(durations < 0):
            raise DataError("negative durations")
        if durations.sum() == 0:
            raise DataError("all durations are zero; nothing to synthesize")
        index = np.repeat(np.arange(len(durations)), durations)
        return hidden[index]

    def decode_mel(self, frames_hidden: Tensor) -> Tensor:
        hidden = ag.add(frames_hidden,
                        Tensor(_positional_encoding(frames_hidden.shape[0], self.d_model)))
        for block in self.decoder:
            hidden = block(hidden)
        return self.mel_out(hidden)

    def synthesize(self, phonemes: PhonemeSequence, styles,
                   targets: dict | None = None
                   ) -> tuple[MelPrediction, VariancePredictions]:
        """Full pass; ``targets`` switches on teacher forcing.

        Teacher-forced targets: ``durations`` (frames), ``pitch_hz`` and
        ``energy`` per phoneme.  Free-running mode derives durations from
        the duration predictor.
        """
        hidden = self.encode_phonemes(phonemes.ids)
        hidden = ag.add(hidden, self.replicate_styles(styles, phonemes))
        hidden, variances = self.variance_adapt(hidden, targets)
        if targets is not None and "durations" in targets:
            durations = np.asarray(targets["durations"], dtype=np.int64)
        else:
            durations = variances.round_durations()
        frames = self.length_regulate(hidden, durations)
        mel = self.decode_mel(frames)
        return MelPrediction(mel=mel, durations_rounded=durations), variances


def _blocks(n: int, d_model: int, heads: int, d_ff: int, rng) -> ModuleList:
    if n < 1:
        raise ConfigError("need at least one transformer block")
    return ModuleList([FeedForwardBlock(d_model, heads, d_ff, rng) for _ in range(n)])
