"""Objective evaluation: DTW-aligned spectral/prosody metrics, the
inter-sentence attention dump and linear probes against planted factors.

Predicted and reference mels generally differ in length, so metrics run
over a minimal-cost monotonic alignment.  All metrics are pure functions;
corpus aggregates are means of per-utterance values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .corpus import Corpus
from .errors import ConfigError, DataError
from .pipeline import Pipeline
from .synthetic import PlantedFactors

METRIC_NAMES = ("mcd", "f0_rmse", "energy_rmse", "duration_mse")


@dataclass
class DtwPath:
    """Monotone frame alignment with steps (1,0), (0,1), (1,1)."""

    pairs: list[tuple[int, int]]
    cost: float


def dtw_align(a: np.ndarray, b: np.ndarray) -> DtwPath:
    """Minimal-cost alignment under per-frame Euclidean distance.

    Ties prefer the diagonal predecessor, then the (1,0) step, so the path
    is deterministic; identical inputs give the pure diagonal at cost 0.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    n, m = a.shape[0], b.shape[0]
    if n < 1 or m < 1:
        raise DataError("DTW requires non-empty inputs")
    diff = a[:, None, :] - b[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    cost = np.full((n, m), np.inf)
    choice = np.zeros((n, m), dtype=np.int8)  # 0 diag, 1 from (i-1,j), 2 from (i,j-1)
    cost[0, 0] = dist[0, 0]
    for i in range(1, n):
        cost[i, 0] = cost[i - 1, 0] + dist[i, 0]
        choice[i, 0] = 1
    for j in range(1, m):
        cost[0, j] = cost[0, j - 1] + dist[0, j]
        choice[0, j] = 2
    for i in range(1, n):
        row = cost[i]
        prev = cost[i - 1]
        for j in range(1, m):
            best = prev[j - 1]
            pick = 0
            if prev[j] < best:
                best, pick = prev[j], 1
            if row[j - 1] < best:
                best, pick = row[j - 1], 2
            row[j] = best + dist[i, j]
            choice[i, j] = pick
    pairs = []
    i, j = n - 1, m - 1
    while True:
        pairs.append((i, j))
        if i == 0 and j == 0:
            break
        pick = choice[i, j]
        if pick == 0 and i > 0 and j > 0:
            i, j = i - 1, j - 1
        elif pick == 1:
            i -= 1
        else:
            j -= 1
    pairs.reverse()
    return DtwPath(pairs=pairs, cost=float(cost[n - 1, m - 1]))


def mel_cepstra(log_mel: np.ndarray, n_coeffs: int) -> np.ndarray:
    """Orthonormal DCT-II cepstra of log-mel frames, c_1..c_K (c_0 dropped)."""
    log_mel = np.atleast_2d(np.asarray(log_mel, dtype=np.float64))
    if n_coeffs >= log_mel.shape[1]:
        raise ConfigError(f"n_coeffs={n_coeffs} must be below mel bins "
                          f"{log_mel.shape[1]}")
    coeffs = dct(log_mel, type=2, norm="ortho", axis=-1)
    return coeffs[:, 1:n_coeffs + 1]


def mcd(a: np.ndarray, b: np.ndarray, path: DtwPath, n_coeffs: int = 13) -> float:
    """Mean mel-cepstral distortion in dB over the aligned pairs."""
    ca = mel_cepstra(a, n_coeffs)
    cb = mel_cepstra(b, n_coeffs)
    factor = 10.0 / math.log(10.0)
    values = [factor * math.sqrt(2.0 * float(((ca[i] - cb[j]) ** 2).sum()))
              for i, j in path.pairs]
    return float(np.mean(values))


def f0_rmse(pitch_a: np.ndarray, pitch_b: np.ndarray, path: DtwPath) -> float:
    """RMSE in Hz over aligned pairs; pairs unvoiced on both sides are skipped."""
    pitch_a = np.asarray(pitch_a, dtype=np.float64)
    pitch_b = np.asarray(pitch_b, dtype=np.float64)
    diffs = [pitch_a[i] - pitch_b[j] for i, j in path.pairs
             if not (pitch_a[i] == 0.0 and pitch_b[j] == 0.0)]
    if not diffs:
        return 0.0
    return float(np.sqrt(np.mean(np.square(diffs))))


def energy_rmse(energy_a: np.ndarray, energy_b: np.ndarray, path: DtwPath) -> float:
    energy_a = np.asarray(energy_a, dtype=np.float64)
    energy_b = np.asarray(energy_b, dtype=np.float64)
    diffs = [energy_a[i] - energy_b[j] for i, j in path.pairs]
    return float(np.sqrt(np.mean(np.square(diffs))))


def duration_mse(pred_durations, true_durations) -> float:
    """MSE in the log(frames+1) domain."""
    pred = np.asarray(pred_durations, dtype=np.float64)
    true = np.asarray(true_durations, dtype=np.float64)
    if pred.shape != true.shape:
        raise DataError(f"duration shapes differ: {pred.shape} vs {true.shape}")
    return float(np.mean((np.log(pred + 1.0) - np.log(true + 1.0)) ** 2))


# -- corpus-level evaluation ------------------------------------------------------


@dataclass
class MetricReport:
    mode: str
    per_utterance: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)

    def finalize(self) -> "MetricReport":
        if self.per_utterance:
            keys = [k for k in self.per_utterance[0]
                    if isinstance(self.per_utterance[0][k], (int, float))]
            self.aggregate = {k: float(np.mean([u[k] for u in self.per_utterance]))
                              for k in keys}
        return self

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for entry in self.per_utterance:
                fh.write(json.dumps({"record": "utterance", **entry},
                                    sort_keys=True) + "\n")
            fh.write(json.dumps({"record": "aggregate", "mode": self.mode,
                                 **self.aggregate}, sort_keys=True) + "\n")
        return path

    def summary(self) -> str:
        lines = [f"evaluation mode: {self.mode} "
                 f"({len(self.per_utterance)} utterances)"]
        for name in METRIC_NAMES + ("style_mse",):
            if name in self.aggregate:
                lines.append(f"  {name:>14}: {self.aggregate[name]:.6f}")
        return "\n".join(lines)


def evaluate_corpus(pipeline: Pipeline, corpus: Corpus, keys,
                    mode: str = "predictor", n_coeffs: int = 13) -> MetricReport:
    """Synthesize the given utterances and score them against ground truth.

    ``mode``: 'predictor' uses context-predicted styles, 'extractor' uses
    ground-truth-mel styles (the upper bound), 'copy' scores the ground
    truth against itself (all metrics must be exactly zero).
    """
    if mode not in ("predictor", "extractor", "copy"):
        raise ConfigError(f"unknown evaluation mode {mode!r}")
    report = MetricReport(mode=mode)
    for key in keys:
        utt = corpus.utterance(*key)
        entry: dict = {"document_id": key[0], "sentence_index": key[1]}
        if mode == "copy":
            synth_mel = np.asarray(utt.mel, dtype=np.float64)
            synth_pitch = np.asarray(utt.pitch_frame, dtype=np.float64)
            synth_energy = np.asarray(utt.energy_frame, dtype=np.float64)
            pred_durations = np.asarray(utt.durations, dtype=np.float64)
        else:
            if mode == "extractor":
                styles = pipeline.extract_styles(corpus, *key)
            else:
                styles = pipeline.predict_styles(corpus, *key)
                extracted = pipeline.extract_styles(corpus, *key).to_arrays()
                predicted = styles.to_arrays()
                entry["style_mse"] = float(np.mean([
                    np.mean((p - t) ** 2) for p, t in zip(predicted, extracted)]))
            phonemes = pipeline.phoneme_sequence(utt)
            mel_pred, variances = pipeline.acoustic.synthesize(phonemes, styles,
                                                               targets=None)
            synth_mel = np.array(mel_pred.mel.data)
            durations = mel_pred.durations_rounded
            synth_pitch = np.repeat(variances.pitch, durations)
            synth_energy = np.repeat(variances.energy, durations)
            pred_durations = durations.astype(np.float64)
        path = dtw_align(synth_mel, np.asarray(utt.mel, dtype=np.float64))
        entry["mcd"] = mcd(synth_mel, utt.mel, path, n_coeffs=n_coeffs)
        entry["f0_rmse"] = f0_rmse(synth_pitch, utt.pitch_frame, path)
        entry["energy_rmse"] = energy_rmse(synth_energy, utt.energy_frame, path)
        entry["duration_mse"] = duration_mse(pred_durations, utt.durations)
        entry["dtw_cost"] = path.cost
        report.per_utterance.append(entry)
    return report.finalize()


# -- attention dump ----------------------------------------------------------------


def full_window_keys(corpus: Corpus, L: int) -> list[tuple[str, int]]:
    keys = []
    for doc in corpus.document_ids:
        sentences = corpus.documents[doc]
        last = len(sentences) - 1
        for utt in sentences:
            if utt.sentence_index - L >= 0 and utt.sentence_index + L <= last:
                keys.append(utt.key)
    return keys


def dump_attention(pipeline: Pipeline, corpus: Corpus, keys,
                   window_size: int) -> np.ndarray:
    """Inter-sentence attention rows for the given utterances.

    Every window must span exactly ``window_size`` sentences; rows sum to 1.
    """
    expected = 2 * pipeline.model_cfg.L + 1
    if window_size != expected:
        raise ConfigError(f"window size {window_size} does not match the model's "
                          f"2L+1 = {expected}")
    rows = []
    for key in keys:
        window = pipeline.window(corpus, key[0], key[1])
        if len(window) != window_size:
            raise DataError(f"utterance {key} has a clamped window of {len(window)} "
                            f"sentences; need a full window of {window_size}")
        ctx = pipeline.encode_window(window)
        rows.append(np.array(ctx.inter_sentence_weights.data))
    return np.stack(rows)


def sample_attention_keys(corpus: Corpus, L: int, samples: int,
                          seed: int = 0) -> list[tuple[str, int]]:
    keys = full_window_keys(corpus, L)
    if not keys:
        raise DataError(f"no utterance has a full window at L={L}")
    rng = np.random.default_rng([int(seed), L, samples])
    if samples >= len(keys):
        return keys
    idx = rng.choice(len(keys), size=samples, replace=False)
    return [keys[i] for i in sorted(idx)]


# -- linear probes ------------------------------------------------------------------


def fit_linear_probe(features: np.ndarray, targets: np.ndarray,
                     ridge: float = 1e-2) -> np.ndarray:
    """Closed-form ridge-regularized least squares with a bias column.

    The small ridge keeps held-out behaviour sane when the feature width is
    comparable to the sample count; ridge=0 recovers plain least squares.
    """
    x = np.concatenate([features, np.ones((features.shape[0], 1))], axis=1)
    d = x.shape[1]
    reg = ridge * np.eye(d)
    reg[-1, -1] = 0.0  # never penalize the bias
    weights = np.linalg.solve(x.T @ x + reg, x.T @ targets)
    return weights


def probe_scores(weights: np.ndarray, features: np.ndarray) -> np.ndarray:
    x = np.concatenate([features, np.ones((features.shape[0], 1))], axis=1)
    return x @ weights


def probe_accuracy(weights: np.ndarray, features: np.ndarray,
                   labels: np.ndarray) -> float:
    """Sign agreement with +-1 labels."""
    predicted = np.where(probe_scores(weights, features) >= 0.0, 1.0, -1.0)
    return float(np.mean(predicted == labels))


def probe_r2(weights: np.ndarray, features: np.ndarray, targets: np.ndarray) -> float:
    predictions = probe_scores(weights, features)
    residual = float(np.sum((targets - predictions) ** 2))
    total = float(np.sum((targets - targets.mean()) ** 2))
    return 1.0 - residual / total if total > 0 else 0.0


def brute_force_threshold_accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    """Best single-threshold classifier on raw scores; the probe oracle."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    candidates = np.concatenate([[-np.inf], np.unique(scores), [np.inf]])
    best = 0.0
    for threshold in candidates:
        above = np.where(scores > threshold, 1.0, -1.0)
        best = max(best, float(np.mean(above == labels)),
                   float(np.mean(-above == labels)))
    return best


def scale_separation_probe(styles: dict, factors: PlantedFactors,
                           train_keys, test_keys) -> dict[str, float]:
    """Probe what each level's embedding carries about the planted factors.

    ``styles`` maps utterance key -> (S_g, S_s, S_w rows).  Reports held-out
    chapter accuracy from the global embedding (and, for contrast, from the
    mean subword embedding), R-squared of the applied sentence factor from
    the sentence embedding, and subword stress accuracy from subword rows.
    """

    def chapter_label(key):
        return float(factors.chapter[key[0]])

    def applied(key):
        return float(factors.sentence[f"{key[0]}:{key[1]}"]["applied"])

    g_train = np.stack([styles[k][0] for k in train_keys])
    g_test = np.stack([styles[k][0] for k in test_keys])
    y_train = np.array([chapter_label(k) for k in train_keys])
    y_test = np.array([chapter_label(k) for k in test_keys])
    w_chapter = fit_linear_probe(g_train, y_train)

    wmean_train = np.stack([styles[k][2].mean(axis=0) for k in train_keys])
    wmean_test = np.stack([styles[k][2].mean(axis=0) for k in test_keys])
    w_chapter_sub = fit_linear_probe(wmean_train, y_train)

    s_train = np.stack([styles[k][1] for k in train_keys])
    s_test = np.stack([styles[k][1] for k in test_keys])
    a_train = np.array([applied(k) for k in train_keys])
    a_test = np.array([applied(k) for k in test_keys])
    w_applied = fit_linear_probe(s_train, a_train)

    def stress_rows(keys):
        rows, labels = [], []
        for k in keys:
            flags = factors.subword_stress[f"{k[0]}:{k[1]}"]
            for row, flag in zip(styles[k][2], flags):
                rows.append(row)
                labels.append(1.0 if flag else -1.0)
        return np.stack(rows), np.array(labels)

    sw_train, st_train = stress_rows(train_keys)
    sw_test, st_test = stress_rows(test_keys)
    w_stress = fit_linear_probe(sw_train, st_train)

    return {
        "chapter_from_global": probe_accuracy(w_chapter, g_test, y_test),
        "chapter_from_subword": probe_accuracy(w_chapter_sub, wmean_test, y_test),
        "sentence_r2": probe_r2(w_applied, s_test, a_test),
        "stress_from_subword": probe_accuracy(w_stress, sw_test, st_test),
    }


def extract_style_features(pipeline: Pipeline, corpus: Corpus, keys) -> dict:
    """Per-utterance extracted style triples as numpy arrays."""
    styles = {}
    for key in keys:
        styles[key] = pipeline.extract_styles(corpus, *key).to_arrays()
    return styles


# -- plots -------------------------------------------------------------------------


def plot_attention(matrix: np.ndarray, path: str | Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.imshow(matrix.T, aspect="auto", origin="lower", cmap="viridis")
    ax.set_xlabel("sample")
    ax.set_ylabel("window position")
    fig.colorbar(im, ax=ax, label="attention weight")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_losses(log_path: str | Path, out_path: str | Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps, losses, stages = [], [], []
    with open(log_path) as fh:
        for line in fh:
            record = json.loads(line)
            if "loss" in record and "step" in record:
                steps.append(len(steps) + 1)
                losses.append(record["loss"])
                stages.append(record.get("stage", 0))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, lw=0.8)
    for boundary in np.flatnonzero(np.diff(stages)):
        ax.axvline(boundary + 1, color="grey", ls="--", lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_pitch_contour(true_pitch: np.ndarray, synth_pitch: np.ndarray,
                       out_path: str | Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(true_pitch, label="ground truth", lw=1.0)
    ax.plot(synth_pitch, label="synthesized", lw=1.0)
    ax.set_xlabel("frame")
    ax.set_ylabel("F0 (Hz)")
    ax.legend()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
