"""Model bundle: extractor, context encoder, predictor, acoustic model and
semantic provider built from one config and seed, with checkpoint round-trip.

Construction order is fixed and every module draws from one seeded
generator, so identical (config, seed) gives bit-identical initialization.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .acoustic import AcousticModel, FeatureStats, PhonemeSequence
from .config import ModelConfig, ProviderConfig
from .context_encoder import ContextEmbeddings, HierarchicalContextEncoder
from .corpus import Corpus, build_context_window, phone_level_average
from .errors import ConfigError, DataError
from .extractor import MultiScaleStyleExtractor, StyleEmbeddings
from .nn import Module, load_checkpoint, load_meta, save_checkpoint
from .predictor import (AutoregressiveStylePredictor, HierarchicalStylePredictor,
                        ParagraphStyles, PredictedStyles)
from .semantic import SemanticSequence, build_provider, embed_context


def _as_plain(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def _config_dict(cfg) -> dict:
    return {k: _as_plain(v) for k, v in dataclasses.asdict(cfg).items()}


class Pipeline(Module):
    def __init__(self, model_cfg: ModelConfig, provider_cfg: ProviderConfig,
                 mel_bins: int, stats: FeatureStats, phoneme_inventory: list[str],
                 subword_inventory: list[str], mode: str, seed: int):
        super().__init__()
        model_cfg.validate()
        provider_cfg.validate()
        if mode not in ("hierarchical", "ar"):
            raise ConfigError(f"unknown mode {mode!r}")
        self.model_cfg = model_cfg
        self.provider_cfg = provider_cfg
        self.mel_bins = mel_bins
        self.stats = dataclasses.replace(stats, pitch_range=tuple(model_cfg.pitch_range))
        self.mode = mode
        self.seed = int(seed)
        self.phoneme_inventory = list(phoneme_inventory)
        self.subword_inventory = list(subword_inventory)
        self.phoneme_map = {p: i for i, p in enumerate(self.phoneme_inventory)}

        rng = np.random.default_rng(self.seed)
        self.extractor = MultiScaleStyleExtractor(
            mel_bins=mel_bins, d_style=model_cfg.d_style,
            conv_channels=model_cfg.conv_channels, n_tokens=model_cfg.style_tokens,
            heads=model_cfg.token_heads, rng=rng,
            attention_gain=model_cfg.token_attention_gain)
        self.context_encoder = HierarchicalContextEncoder(
            d_sem=provider_cfg.d_sem, d_ctx=model_cfg.d_ctx, rng=rng)
        if mode == "ar":
            self.predictor = AutoregressiveStylePredictor(
                model_cfg.d_ctx, model_cfg.d_style, rng)
        else:
            self.predictor = HierarchicalStylePredictor(
                model_cfg.d_ctx, model_cfg.d_style, rng)
        self.acoustic = AcousticModel(
            phoneme_vocab=len(self.phoneme_inventory), mel_bins=mel_bins,
            d_model=model_cfg.d_style, rng=rng,
            encoder_layers=model_cfg.encoder_layers,
            decoder_layers=model_cfg.decoder_layers,
            heads=model_cfg.attention_heads, d_ff=model_cfg.d_ff,
            variance_hidden=model_cfg.variance_hidden,
            variance_bins=model_cfg.variance_bins, stats=self.stats)
        self.provider = build_provider(
            provider_cfg.kind, d_sem=provider_cfg.d_sem, seed=provider_cfg.seed,
            position_mixing=provider_cfg.position_mixing, store=provider_cfg.store,
            vocab=self.subword_inventory, rng=rng)

    # -- windows and styles --------------------------------------------------

    def window(self, corpus: Corpus, document_id: str, sentence_index: int,
               for_extractor: bool = False):
        radius = self.model_cfg.extractor_radius if for_extractor else self.model_cfg.L
        return build_context_window(corpus, document_id, sentence_index, radius)

    def encode_window(self, window) -> ContextEmbeddings:
        sem = embed_context(window, self.provider)
        return self.context_encoder.encode_context(sem, window)

    def extract_styles(self, corpus: Corpus, document_id: str,
                       sentence_index: int) -> StyleEmbeddings:
        window = self.window(corpus, document_id, sentence_index, for_extractor=True)
        return self.extractor.extract_multiscale(window)

    def predict_styles(self, corpus: Corpus, document_id: str,
                       sentence_index: int) -> PredictedStyles:
        """Window-based prediction; in AR mode runs the chain from the
        document start up to the requested sentence."""
        if self.mode == "ar":
            sentences = corpus.sentences(document_id)
            upto = [u.sentence_index for u in sentences
                    if u.sentence_index <= sentence_index]
            if sentence_index not in upto:
                raise DataError(f"unknown sentence {document_id}:{sentence_index}")
            ctx_seq = [self.encode_window(self.window(corpus, document_id, idx))
                       for idx in upto]
            return self.predictor.predict_paragraph(ctx_seq)[len(upto) - 1]
        ctx = self.encode_window(self.window(corpus, document_id, sentence_index))
        return self.predictor.predict(ctx)

    def predict_paragraph(self, corpus: Corpus, document_id: str,
                          teacher_styles=None) -> ParagraphStyles:
        sentences = corpus.sentences(document_id)
        ctx_seq = [self.encode_window(self.window(corpus, document_id, u.sentence_index))
                   for u in sentences]
        if self.mode == "ar":
            return self.predictor.predict_paragraph(ctx_seq, teacher_styles=teacher_styles)
        return ParagraphStyles(sentences=[self.predictor.predict(c) for c in ctx_seq])

    def phoneme_sequence(self, utt) -> PhonemeSequence:
        return PhonemeSequence.from_utterance(utt, self.phoneme_map)

    def teacher_targets(self, utt) -> dict:
        """Ground-truth per-phoneme arrays for teacher forcing and losses."""
        pitch = phone_level_average(utt.pitch_frame, utt.durations, exclude_zeros=True)
        energy = phone_level_average(utt.energy_frame, utt.durations)
        return {
            "durations": np.asarray(utt.durations, dtype=np.int64),
            "pitch_hz": pitch,
            "energy": energy,
            "mel": np.asarray(utt.mel, dtype=np.float64),
            "pitch_norm": self.acoustic.stats.norm_pitch(pitch),
            "energy_norm": self.acoustic.stats.norm_energy(energy),
            "log_duration": np.log(np.asarray(utt.durations, dtype=np.float64) + 1.0),
        }

    # -- persistence -----------------------------------------------------------

    def meta(self) -> dict:
        return {
            "model": _config_dict(self.model_cfg),
            "provider": _config_dict(self.provider_cfg),
            "mel_bins": self.mel_bins,
            "stats": self.stats.to_dict(),
            "phonemes": self.phoneme_inventory,
            "subwords": self.subword_inventory,
            "mode": self.mode,
            "seed": self.seed,
        }

    def save(self, directory, extra_meta: dict | None = None,
             extra_arrays: dict | None = None):
        meta = self.meta()
        meta.update(extra_meta or {})
        return save_checkpoint(directory, self, meta=meta, extra_arrays=extra_arrays)


def load_pipeline(directory) -> tuple[Pipeline, dict, dict]:
    """Rebuild a pipeline from a checkpoint; returns (pipeline, meta, extras)."""
    meta = load_meta(directory)
    model_cfg = ModelConfig(**{k: tuple(v) if isinstance(v, list) and k in
                               ("conv_channels", "pitch_range") else v
                               for k, v in meta["model"].items()})
    provider_cfg = ProviderConfig(**meta["provider"])
    pipeline = Pipeline(model_cfg=model_cfg, provider_cfg=provider_cfg,
                        mel_bins=int(meta["mel_bins"]),
                        stats=FeatureStats.from_dict(meta["stats"]),
                        phoneme_inventory=meta["phonemes"],
                        subword_inventory=meta["subwords"],
                        mode=meta["mode"], seed=int(meta["seed"]))
    extras = load_checkpoint(directory, pipeline)
    return pipeline, meta, extras
