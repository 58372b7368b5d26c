import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from melstyle.corpus import load_manifest, phone_level_average
from melstyle.errors import ConfigError
from melstyle.synthetic import (FACTORS_NAME, PlantedFactors, SynthConfig,
                                generate_synthetic_corpus)


def _tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(path.name.encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def test_same_seed_byte_identical(tmp_path):
    cfg = SynthConfig(documents=2, sentences_per_document=3)
    generate_synthetic_corpus(cfg, 11, tmp_path / "a")
    generate_synthetic_corpus(cfg, 11, tmp_path / "b")
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")


def test_different_seed_differs(tmp_path):
    cfg = SynthConfig(documents=2, sentences_per_document=3)
    generate_synthetic_corpus(cfg, 11, tmp_path / "a")
    generate_synthetic_corpus(cfg, 12, tmp_path / "b")
    assert _tree_digest(tmp_path / "a") != _tree_digest(tmp_path / "b")


def test_entry_count(tmp_path):
    cfg = SynthConfig(documents=2, sentences_per_document=3)
    manifest = generate_synthetic_corpus(cfg, 0, tmp_path)
    corpus = load_manifest(manifest)
    assert len(corpus) == 6
    assert len(corpus.document_ids) == 2


def test_planted_chapter_offset_measured_from_tensors(tmp_path):
    """With only the chapter factor active, per-document mean voiced pitch
    differs by the planted 60 Hz within a 2 Hz band."""
    cfg = SynthConfig(documents=2, sentences_per_document=6,
                      chapter_pitch_offset_hz=30.0, sentence_pitch_span_hz=0.0,
                      stress_pitch_bump_hz=0.0)
    manifest = generate_synthetic_corpus(cfg, 3, tmp_path)
    corpus = load_manifest(manifest)
    means = {}
    for doc in corpus.document_ids:
        voiced = np.concatenate([u.pitch_frame[u.pitch_frame > 0]
                                 for u in corpus.sentences(doc)])
        means[doc] = voiced.mean()
    factors = PlantedFactors.load(tmp_path / FACTORS_NAME)
    hi = max(means, key=lambda d: factors.chapter[d])
    lo = min(means, key=lambda d: factors.chapter[d])
    assert abs((means[hi] - means[lo]) - 60.0) <= 2.0


def test_all_invariants_hold_on_default_corpus(tmp_path):
    cfg = SynthConfig(documents=2, sentences_per_document=4)
    corpus = load_manifest(generate_synthetic_corpus(cfg, 9, tmp_path))
    for utt in corpus:
        utt.validate(mel_bins=cfg.mel_bins)  # raises on violation
        assert utt.text[0].startswith("chap")
        assert utt.text[1].startswith("mood")


def test_factors_side_file_is_complete(tmp_path):
    cfg = SynthConfig(documents=2, sentences_per_document=3)
    manifest = generate_synthetic_corpus(cfg, 2, tmp_path)
    corpus = load_manifest(manifest)
    factors = PlantedFactors.load(tmp_path / FACTORS_NAME)
    assert set(factors.chapter) == set(corpus.document_ids)
    for utt in corpus:
        key = f"{utt.document_id}:{utt.sentence_index}"
        assert key in factors.sentence
        assert len(factors.subword_stress[key]) == utt.n_subwords


def test_mood_mixing_uses_neighbours(tmp_path):
    cfg = SynthConfig(documents=1, sentences_per_document=8,
                      mood_self_weight=0.5, mood_neighbor_weight=0.25)
    generate_synthetic_corpus(cfg, 4, tmp_path)
    factors = PlantedFactors.load(tmp_path / FACTORS_NAME)
    moods = [factors.sentence[f"doc00:{i}"]["mood"] for i in range(8)]
    for t in range(1, 7):
        expected = 0.5 * moods[t] + 0.25 * moods[t - 1] + 0.25 * moods[t + 1]
        assert factors.sentence[f"doc00:{t}"]["applied"] == pytest.approx(expected)


def test_energy_scale_realized_in_features(tmp_path):
    cfg = SynthConfig(documents=1, sentences_per_document=6,
                      stress_energy_gain=1.0)
    manifest = generate_synthetic_corpus(cfg, 6, tmp_path)
    corpus = load_manifest(manifest)
    factors = PlantedFactors.load(tmp_path / FACTORS_NAME)
    measured, planted = [], []
    for utt in corpus.sentences("doc00"):
        measured.append(utt.energy_frame.mean())
        planted.append(factors.sentence[f"doc00:{utt.sentence_index}"]["energy_scale"])
    assert np.corrcoef(measured, planted)[0, 1] > 0.99


def test_config_validation_names_field():
    with pytest.raises(ConfigError, match="sentences_per_document"):
        SynthConfig(sentences_per_document=-3).validate()
    with pytest.raises(ConfigError, match="subwords_per_sentence"):
        SynthConfig(subwords_per_sentence=(2, 4)).validate()
    with pytest.raises(ConfigError, match="stress_probability"):
        SynthConfig(stress_probability=1.5).validate()


def test_tempo_scale_affects_durations(tmp_path):
    cfg = SynthConfig(documents=1, sentences_per_document=10,
                      sentence_tempo_span=0.4)
    manifest = generate_synthetic_corpus(cfg, 8, tmp_path)
    corpus = load_manifest(manifest)
    factors = PlantedFactors.load(tmp_path / FACTORS_NAME)
    mean_dur, tempo = [], []
    for utt in corpus.sentences("doc00"):
        mean_dur.append(np.mean(utt.durations))
        tempo.append(factors.sentence[f"doc00:{utt.sentence_index}"]["tempo_scale"])
    assert np.corrcoef(mean_dur, tempo)[0, 1] > 0.8
