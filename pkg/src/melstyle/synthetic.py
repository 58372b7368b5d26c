"""Deterministic synthetic audiobook corpus with planted style factors.

Three factors are planted and recorded in a side file so probe tests can
check what each embedding level picks up:

* chapter factor: a per-document pitch offset, constant across the document;
* sentence factor: a tempo/energy/pitch scale mixed from the sentence's own
  "mood" and (optionally) its neighbours' moods, so context genuinely helps;
* subword stress: a local pitch excursion plus energy gain on stressed
  subwords.

Each factor is also encoded in the text: every sentence starts with a
chapter marker token and a mood marker token, and stressed subwords draw
their tokens from a separate vocabulary block.  Mel frames are a smooth
deterministic function of the phoneme identity and the planted factors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import AlignedUtterance, FeatureConfig, write_corpus
from .errors import ConfigError, DataError
from .util import dataclass_from_dict

FACTORS_NAME = "factors.json"

CHAPTER_TOKENS = {1.0: "chaphi", -1.0: "chaplo"}
MOOD_TOKENS = {1.0: "moodhi", -1.0: "moodlo"}


@dataclass
class SynthConfig:
    documents: int = 8
    sentences_per_document: int = 12
    subwords_per_sentence: tuple[int, int] = (4, 6)
    phonemes_per_subword: tuple[int, int] = (1, 3)
    duration_frames: tuple[int, int] = (3, 6)
    mel_bins: int = 20
    sample_rate_hz: int = 24000
    frame_size_samples: int = 1200
    hop_size_samples: int = 240
    phoneme_vocab: int = 24
    content_vocab: int = 20
    stressed_vocab: int = 10
    unvoiced_fraction: float = 0.15
    base_pitch_hz: float = 220.0
    pitch_map_range: tuple[float, float] = (100.0, 400.0)
    chapter_pitch_offset_hz: float = 30.0
    chapter_modulation_depth: float = 0.0
    chapter_modulation_period: float = 150.0
    sentence_pitch_span_hz: float = 12.0
    sentence_energy_span: float = 0.35
    sentence_tempo_span: float = 0.2
    mood_self_weight: float = 0.5
    mood_neighbor_weight: float = 0.25
    stress_probability: float = 0.5
    stress_pitch_bump_hz: float = 45.0
    stress_energy_gain: float = 1.3

    def validate(self) -> "SynthConfig":
        def positive(name, value):
            if value <= 0:
                raise ConfigError(f"synth.{name} must be positive, got {value}")

        positive("documents", self.documents)
        positive("sentences_per_document", self.sentences_per_document)
        positive("mel_bins", self.mel_bins)
        positive("phoneme_vocab", self.phoneme_vocab)
        positive("content_vocab", self.content_vocab)
        positive("stressed_vocab", self.stressed_vocab)
        for name in ("subwords_per_sentence", "phonemes_per_subword", "duration_frames"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ConfigError(f"synth.{name} must be an increasing range >= 1, "
                                  f"got ({lo}, {hi})")
        if self.subwords_per_sentence[0] < 3:
            raise ConfigError("synth.subwords_per_sentence minimum must be >= 3 "
                              "(two marker subwords plus content)")
        if not 0.0 <= self.stress_probability <= 1.0:
            raise ConfigError(f"synth.stress_probability must be in [0, 1], "
                              f"got {self.stress_probability}")
        if not 0.0 <= self.unvoiced_fraction < 1.0:
            raise ConfigError(f"synth.unvoiced_fraction must be in [0, 1), "
                              f"got {self.unvoiced_fraction}")
        if self.pitch_map_range[0] >= self.pitch_map_range[1]:
            raise ConfigError("synth.pitch_map_range must be increasing")
        if self.chapter_modulation_depth < 0:
            raise ConfigError("synth.chapter_modulation_depth must be >= 0")
        if self.chapter_modulation_period <= 0:
            raise ConfigError("synth.chapter_modulation_period must be positive")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        return dataclass_from_dict(cls, data, context="synth").validate()

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(mel_bins=self.mel_bins, sample_rate_hz=self.sample_rate_hz,
                             frame_size_samples=self.frame_size_samples,
                             hop_size_samples=self.hop_size_samples)


@dataclass
class PlantedFactors:
    """Ground-truth style factors recorded alongside a synthetic corpus."""

    chapter: dict[str, float]
    sentence: dict[str, dict[str, float]]
    subword_stress: dict[str, list[int]]

    def save(self, path: str | Path) -> None:
        payload = {"chapter": self.chapter, "sentence": self.sentence,
                   "subword_stress": self.subword_stress}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "PlantedFactors":
        path = Path(path)
        if not path.exists():
            raise DataError(f"planted-factors side file not found: {path}")
        with open(path) as fh:
            payload = json.load(fh)
        return cls(chapter=payload["chapter"], sentence=payload["sentence"],
                   subword_stress=payload["subword_stress"])


def _gaussian_bump(bins: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((bins - center) / width) ** 2)


class _MelSynthesizer:
    """Smooth deterministic mel/pitch/energy rendering for one corpus.

    The pitch carrier dominates the spectral shape so that the planted
    pitch offsets are the most salient property of the mel.
    """

    def __init__(self, config: SynthConfig, rng: np.random.Generator):
        self.config = config
        n = config.phoneme_vocab
        self.formant1 = rng.uniform(0.15, 0.85, size=n) * (config.mel_bins - 1)
        self.formant2 = rng.uniform(0.05, 0.95, size=n) * (config.mel_bins - 1)
        self.noise_center = rng.uniform(0.3, 0.9, size=n) * (config.mel_bins - 1)
        self.phase = rng.uniform(0.0, 2.0 * math.pi, size=n)
        self.n_unvoiced = int(round(config.unvoiced_fraction * n))
        self.bins = np.arange(config.mel_bins, dtype=np.float64)

    def is_voiced(self, phoneme_id: int) -> bool:
        return phoneme_id >= self.n_unvoiced

    def pitch_to_bin(self, pitch_hz: float) -> float:
        lo, hi = self.config.pitch_map_range
        clipped = min(max(pitch_hz, lo), hi)
        return (clipped - lo) / (hi - lo) * (self.config.mel_bins - 1)

    def render_phoneme(self, phoneme_id: int, frames: int, frame_offset: int,
                       pitch_offset_hz: np.ndarray, energy_scale: float,
                       stress_bump_hz: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        cfg = self.config
        t = frame_offset + np.arange(frames, dtype=np.float64)
        voiced = self.is_voiced(phoneme_id)
        if voiced:
            pitch = (cfg.base_pitch_hz + pitch_offset_hz + stress_bump_hz
                     + 1.5 * np.sin(2.0 * math.pi * t / 23.0))
        else:
            pitch = np.zeros(frames)
        energy = energy_scale * (1.0 + 0.15 * np.sin(
            2.0 * math.pi * t / 17.0 + self.phase[phoneme_id]))
        mel = np.zeros((frames, cfg.mel_bins))
        for i in range(frames):
            if voiced:
                carrier = 1.4 * _gaussian_bump(self.bins, self.pitch_to_bin(pitch[i]), 1.0)
            else:
                carrier = 0.7 * _gaussian_bump(self.bins, self.noise_center[phoneme_id], 4.0)
            shape = (carrier
                     + 0.45 * _gaussian_bump(self.bins, self.formant1[phoneme_id], 2.0)
                     + 0.3 * _gaussian_bump(self.bins, self.formant2[phoneme_id], 3.0))
            mel[i] = np.log(1e-3 + energy[i] * shape)
        return mel, pitch, energy


class _Lexicon:
    """Deterministic token -> phoneme-id pronunciation, like a real lexicon.

    Every occurrence of a token shares the same phonemes, so textual content
    fully determines segmental content and the style predictor is not asked
    to explain unlearnable per-occurrence noise.
    """

    def __init__(self, config: SynthConfig, seed: int):
        self.config = config
        self.seed = int(seed)
        self._cache: dict[str, list[int]] = {}

    def pronounce(self, token: str) -> list[tuple[int, int]]:
        """(phoneme id, base duration in frames) pairs for the token."""
        entry = self._cache.get(token)
        if entry is None:
            import hashlib

            digest = hashlib.sha256(f"{self.seed}/lex/{token}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            p_lo, p_hi = self.config.phonemes_per_subword
            d_lo, d_hi = self.config.duration_frames
            count = int(rng.integers(p_lo, p_hi + 1))
            entry = [(int(p), int(d)) for p, d in
                     zip(rng.integers(self.config.phoneme_vocab, size=count),
                         rng.integers(d_lo, d_hi + 1, size=count))]
            self._cache[token] = entry
        return entry


def _mix_moods(moods: np.ndarray, config: SynthConfig) -> np.ndarray:
    """Applied sentence factor: own mood plus neighbour moods, clamped at edges."""
    n = len(moods)
    applied = np.zeros(n)
    for t in range(n):
        value = config.mood_self_weight * moods[t]
        if t > 0:
            value += config.mood_neighbor_weight * moods[t - 1]
        if t + 1 < n:
            value += config.mood_neighbor_weight * moods[t + 1]
        applied[t] = value
    return applied


def generate_synthetic_corpus(config: SynthConfig, seed: int,
                              out_dir: str | Path) -> Path:
    """Generate the corpus under ``out_dir``; returns the manifest path.

    Byte-identical output for identical (config, seed).
    """
    config.validate()
    rng = np.random.default_rng(int(seed))
    synth = _MelSynthesizer(config, rng)
    lexicon = _Lexicon(config, seed)
    phoneme_symbols = [f"p{i:02d}" for i in range(config.phoneme_vocab)]

    utterances: list[AlignedUtterance] = []
    chapter_factor: dict[str, float] = {}
    sentence_factors: dict[str, dict[str, float]] = {}
    stress_flags: dict[str, list[int]] = {}

    for d in range(config.documents):
        doc_id = f"doc{d:02d}"
        chapter = 1.0 if d % 2 == 0 else -1.0
        chapter_factor[doc_id] = chapter
        moods = rng.choice([-1.0, 1.0], size=config.sentences_per_document)
        applied = _mix_moods(moods, config)
        doc_frame = 0
        for s in range(config.sentences_per_document):
            utt, factors, stresses = _generate_sentence(
                config, rng, synth, lexicon, phoneme_symbols, doc_id, s,
                chapter, float(moods[s]), float(applied[s]), doc_frame)
            doc_frame += utt.frames
            utterances.append(utt)
            sentence_factors[f"{doc_id}:{s}"] = factors
            stress_flags[f"{doc_id}:{s}"] = stresses

    out_dir = Path(out_dir)
    manifest = write_corpus(out_dir, utterances, config.feature_config())
    PlantedFactors(chapter=chapter_factor, sentence=sentence_factors,
                   subword_stress=stress_flags).save(out_dir / FACTORS_NAME)
    with open(out_dir / "synth_config.json", "w") as fh:
        json.dump({"seed": int(seed), "config": _config_as_dict(config)}, fh,
                  indent=1, sort_keys=True)
    return manifest


def _config_as_dict(config: SynthConfig) -> dict:
    import dataclasses

    raw = dataclasses.asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in raw.items()}


def _chapter_offset_series(config: SynthConfig, chapter: float,
                           doc_frames: np.ndarray) -> np.ndarray:
    """Chapter pitch offset per frame: a document-mean offset of
    chapter * chapter_pitch_offset_hz, slowly modulated along the document
    so that short mel slices see ambiguous values while a window-scale
    average resolves the chapter cleanly."""
    base = config.chapter_pitch_offset_hz * chapter
    if config.chapter_modulation_depth == 0.0:
        return np.full(len(doc_frames), base)
    wobble = np.sin(2.0 * math.pi * doc_frames / config.chapter_modulation_period)
    return base * (1.0 + config.chapter_modulation_depth * wobble)


def _generate_sentence(config: SynthConfig, rng: np.random.Generator,
                       synth: _MelSynthesizer, lexicon: _Lexicon,
                       phoneme_symbols: list[str], doc_id: str,
                       sentence_index: int, chapter: float, mood: float,
                       applied: float, doc_frame_start: int):
    sentence_offset = config.sentence_pitch_span_hz * applied
    energy_scale = 1.0 + config.sentence_energy_span * applied
    tempo_scale = 1.0 - config.sentence_tempo_span * applied

    lo, hi = config.subwords_per_sentence
    n_subwords = int(rng.integers(lo, hi + 1))
    tokens: list[str] = []
    stresses: list[int] = []
    subword_phonemes: list[list[tuple[int, int]]] = []
    for position in range(n_subwords):
        if position == 0:
            tokens.append(CHAPTER_TOKENS[chapter])
            stressed = 0
        elif position == 1:
            tokens.append(MOOD_TOKENS[mood])
            stressed = 0
        else:
            stressed = int(rng.random() < config.stress_probability)
            if stressed:
                tokens.append(f"x{int(rng.integers(config.stressed_vocab)):02d}")
            else:
                tokens.append(f"w{int(rng.integers(config.content_vocab)):02d}")
        stresses.append(stressed)
        subword_phonemes.append(lexicon.pronounce(tokens[-1]))

    phoneme_ids = [p for group in subword_phonemes for p, _ in group]
    base_durations = [d for group in subword_phonemes for _, d in group]
    durations = np.asarray([max(1, int(round(d * tempo_scale)))
                            for d in base_durations], dtype=np.int64)

    mel_parts, pitch_parts, energy_parts = [], [], []
    frame_offset = 0
    phoneme_pos = 0
    for subword_idx, group in enumerate(subword_phonemes):
        span_frames = int(durations[phoneme_pos:phoneme_pos + len(group)].sum())
        within = 0
        for p_id, _ in group:
            frames = int(durations[phoneme_pos])
            if stresses[subword_idx] and span_frames > 0:
                rel = (within + np.arange(frames) + 0.5) / span_frames
                bump = config.stress_pitch_bump_hz * 0.5 * (1.0 - np.cos(2.0 * math.pi * rel))
                gain = config.stress_energy_gain
            else:
                bump = np.zeros(frames)
                gain = 1.0
            doc_frames = doc_frame_start + frame_offset + np.arange(frames)
            offsets = sentence_offset + _chapter_offset_series(config, chapter,
                                                               doc_frames)
            mel, pitch, energy = synth.render_phoneme(
                p_id, frames, frame_offset, offsets, energy_scale * gain, bump)
            mel_parts.append(mel)
            pitch_parts.append(pitch)
            energy_parts.append(energy)
            frame_offset += frames
            within += frames
            phoneme_pos += 1

    utt = AlignedUtterance(
        document_id=doc_id,
        sentence_index=sentence_index,
        text=tuple(tokens),
        phonemes=tuple(phoneme_symbols[p] for p in phoneme_ids),
        subword_phoneme_counts=tuple(len(g) for g in subword_phonemes),
        durations=durations,
        mel=np.concatenate(mel_parts, axis=0),
        pitch_frame=np.concatenate(pitch_parts),
        energy_frame=np.concatenate(energy_parts),
    ).validate(mel_bins=config.mel_bins)
    factors = {"mood": mood, "applied": applied,
               "pitch_offset_hz": config.chapter_pitch_offset_hz * chapter
               + sentence_offset,
               "energy_scale": energy_scale, "tempo_scale": tempo_scale}
    return utt, factors, stresses
