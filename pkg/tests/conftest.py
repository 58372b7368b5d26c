import numpy as np
import pytest

from melstyle.corpus import AlignedUtterance, Corpus, FeatureConfig
from melstyle.synthetic import SynthConfig, generate_synthetic_corpus
from melstyle.corpus import load_manifest


def make_utterance(document_id="doc", sentence_index=0, tokens=("a", "b"),
                   counts=(1, 2), durations=(2, 3, 1), mel_bins=4, seed=0,
                   pitch=None, energy=None):
    """Hand-built utterance with all invariants satisfied."""
    rng = np.random.default_rng(seed)
    durations = np.asarray(durations, dtype=np.int64)
    frames = int(durations.sum())
    mel = rng.standard_normal((frames, mel_bins))
    return AlignedUtterance(
        document_id=document_id,
        sentence_index=sentence_index,
        text=tuple(tokens),
        phonemes=tuple(f"p{i}" for i in range(len(durations))),
        subword_phoneme_counts=tuple(counts),
        durations=durations,
        mel=mel,
        pitch_frame=np.asarray(pitch, dtype=np.float64) if pitch is not None
        else rng.uniform(100, 300, frames),
        energy_frame=np.asarray(energy, dtype=np.float64) if energy is not None
        else rng.uniform(0.5, 1.5, frames),
    ).validate(mel_bins=mel_bins)


def make_document(document_id, n_sentences, mel_bins=4, seed=0):
    return [make_utterance(document_id, i, mel_bins=mel_bins, seed=seed + i)
            for i in range(n_sentences)]


@pytest.fixture
def tiny_corpus():
    utts = make_document("docA", 5) + make_document("docB", 2, seed=50)
    return Corpus(utts, FeatureConfig(mel_bins=4))


@pytest.fixture(scope="session")
def micro_corpus(tmp_path_factory):
    """Small generated corpus shared by model-level unit tests."""
    out = tmp_path_factory.mktemp("micro_corpus")
    cfg = SynthConfig(documents=2, sentences_per_document=6, mel_bins=12,
                      subwords_per_sentence=(3, 5))
    manifest = generate_synthetic_corpus(cfg, seed=5, out_dir=out)
    return load_manifest(manifest)
