"""Aligned-utterance corpus: on-disk formats, validation and window building.

A corpus is a line-delimited JSON manifest plus one tensor file per feature
array.  The first manifest line is a header record carrying the format
version and feature configuration; every other line is one utterance entry
with its alignment metadata and relative tensor paths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, UnknownUtteranceError
from .tensorfile import read_tensor, write_tensor

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class FeatureConfig:
    mel_bins: int = 80
    sample_rate_hz: int = 24000
    frame_size_samples: int = 1200
    hop_size_samples: int = 240

    def to_dict(self) -> dict:
        return {"mel_bins": self.mel_bins, "sample_rate_hz": self.sample_rate_hz,
                "frame_size_samples": self.frame_size_samples,
                "hop_size_samples": self.hop_size_samples}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureConfig":
        return cls(**{k: int(v) for k, v in data.items()})


@dataclass
class AlignedUtterance:
    """One sentence with text, alignment and acoustic features."""

    document_id: str
    sentence_index: int
    text: tuple[str, ...]
    phonemes: tuple[str, ...]
    subword_phoneme_counts: tuple[int, ...]
    durations: np.ndarray
    mel: np.ndarray
    pitch_frame: np.ndarray
    energy_frame: np.ndarray

    @property
    def key(self) -> tuple[str, int]:
        return (self.document_id, self.sentence_index)

    @property
    def frames(self) -> int:
        return int(self.mel.shape[0])

    @property
    def n_subwords(self) -> int:
        return len(self.text)

    def validate(self, mel_bins: int | None = None) -> "AlignedUtterance":
        name = f"{self.document_id}:{self.sentence_index}"
        if len(self.text) != len(self.subword_phoneme_counts):
            raise DataError(f"{name}: {len(self.text)} subwords but "
                            f"{len(self.subword_phoneme_counts)} phoneme counts")
        if sum(self.subword_phoneme_counts) != len(self.phonemes):
            raise DataError(f"{name}: subword_phoneme_counts sum to "
                            f"{sum(self.subword_phoneme_counts)}, expected {len(self.phonemes)}")
        if len(self.durations) != len(self.phonemes):
            raise DataError(f"{name}: {len(self.durations)} durations for "
                            f"{len(self.phonemes)} phonemes")
        if np.any(self.durations < 0):
            raise DataError(f"{name}: negative phoneme duration")
        total = int(self.durations.sum())
        if total <= 0:
            raise DataError(f"{name}: all phoneme durations are zero")
        if self.mel.ndim != 2:
            raise DataError(f"{name}: mel must be 2-D, got shape {self.mel.shape}")
        if mel_bins is not None and self.mel.shape[1] != mel_bins:
            raise DataError(f"{name}: mel has {self.mel.shape[1]} bins, expected {mel_bins}")
        if self.mel.shape[0] != total:
            raise DataError(f"{name}: durations sum to {total} frames but mel has "
                            f"{self.mel.shape[0]}")
        if len(self.pitch_frame) != total or len(self.energy_frame) != total:
            raise DataError(f"{name}: pitch/energy length does not match {total} frames")
        for label, arr in (("mel", self.mel), ("pitch", self.pitch_frame),
                           ("energy", self.energy_frame)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name}: non-finite values in {label}")
        return self

    def subword_spans(self) -> list[tuple[int, int]]:
        return subword_spans(self.durations, self.subword_phoneme_counts)


@dataclass
class ContextWindow:
    """The current sentence plus up to L neighbours on each side."""

    sentences: tuple[AlignedUtterance, ...]
    current_offset: int
    L: int

    def __post_init__(self):
        if not 0 <= self.current_offset < len(self.sentences):
            raise DataError("current_offset outside window")
        doc = self.sentences[0].document_id
        for prev, cur in zip(self.sentences, self.sentences[1:]):
            if cur.document_id != doc or cur.sentence_index != prev.sentence_index + 1:
                raise DataError("window sentences must be consecutive in one document")

    @property
    def current(self) -> AlignedUtterance:
        return self.sentences[self.current_offset]

    def __len__(self) -> int:
        return len(self.sentences)


class Corpus:
    """Immutable set of validated utterances grouped by document."""

    def __init__(self, utterances: list[AlignedUtterance], feature_config: FeatureConfig):
        self.feature_config = feature_config
        self._by_key: dict[tuple[str, int], AlignedUtterance] = {}
        docs: dict[str, list[AlignedUtterance]] = {}
        for utt in utterances:
            if utt.key in self._by_key:
                raise DataError(f"duplicate utterance {utt.key}")
            self._by_key[utt.key] = utt
            docs.setdefault(utt.document_id, []).append(utt)
        self.documents: dict[str, list[AlignedUtterance]] = {
            doc: sorted(group, key=lambda u: u.sentence_index)
            for doc, group in sorted(docs.items())
        }

    def __len__(self) -> int:
        return len(self._by_key)

    def __iter__(self):
        for doc in self.documents.values():
            yield from doc

    @property
    def document_ids(self) -> list[str]:
        return list(self.documents.keys())

    def sentences(self, document_id: str) -> list[AlignedUtterance]:
        if document_id not in self.documents:
            raise UnknownUtteranceError(f"unknown document {document_id!r}")
        return self.documents[document_id]

    def utterance(self, document_id: str, sentence_index: int) -> AlignedUtterance:
        key = (document_id, int(sentence_index))
        if key not in self._by_key:
            raise UnknownUtteranceError(f"unknown utterance {document_id}:{sentence_index}")
        return self._by_key[key]

    def keys(self) -> list[tuple[str, int]]:
        return [u.key for u in self]

    def phoneme_inventory(self) -> list[str]:
        symbols = {p for utt in self for p in utt.phonemes}
        return sorted(symbols)

    def subword_inventory(self) -> list[str]:
        tokens = {t for utt in self for t in utt.text}
        return sorted(tokens)


# -- alignment helpers ---------------------------------------------------------


def subword_spans(durations, subword_phoneme_counts) -> list[tuple[int, int]]:
    """Frame spans per subword; a contiguous partition of [0, total_frames).

    Subwords whose phonemes all have zero duration produce zero-length spans
    (start == end), which callers must handle.
    """
    durations = np.asarray(durations, dtype=np.int64)
    counts = [int(c) for c in subword_phoneme_counts]
    if sum(counts) != len(durations):
        raise DataError(f"phoneme counts sum to {sum(counts)} but there are "
                        f"{len(durations)} durations")
    spans = []
    frame = 0
    phoneme = 0
    for count in counts:
        width = int(durations[phoneme:phoneme + count].sum())
        spans.append((frame, frame + width))
        frame += width
        phoneme += count
    return spans


def phone_level_average(frame_values, durations, exclude_zeros: bool = False) -> np.ndarray:
    """Mean of each phoneme's frames; zero-duration phonemes average to 0.

    With ``exclude_zeros`` (used for pitch) zero-valued frames are dropped
    from the mean and an all-zero phoneme yields 0.
    """
    frame_values = np.asarray(frame_values, dtype=np.float64)
    durations = np.asarray(durations, dtype=np.int64)
    if len(frame_values) != int(durations.sum()):
        raise DataError(f"{len(frame_values)} frame values for durations summing to "
                        f"{int(durations.sum())}")
    out = np.zeros(len(durations))
    start = 0
    for i, dur in enumerate(durations):
        chunk = frame_values[start:start + int(dur)]
        start += int(dur)
        if exclude_zeros:
            chunk = chunk[chunk != 0.0]
        if chunk.size:
            out[i] = chunk.mean()
    return out


def build_context_window(corpus: Corpus, document_id: str, sentence_index: int,
                         L: int) -> ContextWindow:
    """Clamped window of up to L past and L future sentences around the target."""
    if L < 0:
        raise DataError("context radius L must be non-negative")
    current = corpus.utterance(document_id, sentence_index)
    doc = corpus.documents[document_id]
    pos = next(i for i, u in enumerate(doc) if u.sentence_index == current.sentence_index)
    lo = max(0, pos - L)
    hi = min(len(doc), pos + L + 1)
    return ContextWindow(sentences=tuple(doc[lo:hi]), current_offset=pos - lo, L=L)


def train_test_split(corpus: Corpus, holdout_per_document: int = 2
                     ) -> tuple[list[tuple[str, int]], list[tuple[str, int]]]:
    """Deterministic split: the last N sentences of every document are held out."""
    train, test = [], []
    for doc in corpus.document_ids:
        sentences = corpus.documents[doc]
        cut = max(0, len(sentences) - holdout_per_document)
        train.extend(u.key for u in sentences[:cut])
        test.extend(u.key for u in sentences[cut:])
    return train, test


# -- manifest I/O ----------------------------------------------------------------


def _tensor_name(utt: AlignedUtterance, kind: str) -> str:
    return f"tensors/{utt.document_id}_{utt.sentence_index:04d}_{kind}.msst"


def write_corpus(directory: str | Path, utterances: list[AlignedUtterance],
                 feature_config: FeatureConfig) -> Path:
    """Write tensors plus manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest_path = directory / "manifest.jsonl"
    with open(manifest_path, "w") as fh:
        header = {"record": "header", "version": MANIFEST_VERSION,
                  "feature_config": feature_config.to_dict()}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for utt in utterances:
            utt.validate(mel_bins=feature_config.mel_bins)
            paths = {kind: _tensor_name(utt, kind) for kind in ("mel", "pitch", "energy")}
            write_tensor(directory / paths["mel"], utt.mel)
            write_tensor(directory / paths["pitch"], utt.pitch_frame)
            write_tensor(directory / paths["energy"], utt.energy_frame)
            entry = {
                "record": "entry",
                "document_id": utt.document_id,
                "sentence_index": utt.sentence_index,
                "text": list(utt.text),
                "phonemes": list(utt.phonemes),
                "subword_phoneme_counts": list(utt.subword_phoneme_counts),
                "durations": [int(d) for d in utt.durations],
                "mel_path": paths["mel"],
                "pitch_path": paths["pitch"],
                "energy_path": paths["energy"],
            }
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return manifest_path


def load_manifest(path: str | Path) -> Corpus:
    """Load and validate a corpus; every invariant is checked on entry."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    root = path.parent
    feature_config: FeatureConfig | None = None
    utterances: list[AlignedUtterance] = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from exc
            kind = record.get("record")
            if kind == "header":
                if "feature_config" not in record:
                    raise DataError(f"{path}: header missing feature_config")
                feature_config = FeatureConfig.from_dict(record["feature_config"])
            elif kind == "entry":
                if feature_config is None:
                    raise DataError(f"{path}: entry before header")
                utterances.append(_load_entry(root, record, feature_config))
            else:
                raise DataError(f"{path}:{line_no}: unknown record type {kind!r}")
    if feature_config is None:
        raise DataError(f"{path}: missing header record")
    return Corpus(utterances, feature_config)


def _load_entry(root: Path, record: dict, feature_config: FeatureConfig) -> AlignedUtterance:
    arrays = {}
    for kind in ("mel", "pitch", "energy"):
        tensor_path = root / record[f"{kind}_path"]
        if not tensor_path.exists():
            raise DataError(f"missing tensor file {tensor_path}")
        arrays[kind] = np.asarray(read_tensor(tensor_path), dtype=np.float64)
    utt = AlignedUtterance(
        document_id=str(record["document_id"]),
        sentence_index=int(record["sentence_index"]),
        text=tuple(record["text"]),
        phonemes=tuple(record["phonemes"]),
        subword_phoneme_counts=tuple(int(c) for c in record["subword_phoneme_counts"]),
        durations=np.asarray(record["durations"], dtype=np.int64),
        mel=arrays["mel"],
        pitch_frame=arrays["pitch"],
        energy_frame=arrays["energy"],
    )
    return utt.validate(mel_bins=feature_config.mel_bins)
