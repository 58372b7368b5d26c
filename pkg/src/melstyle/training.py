"""Three-step training schedule with knowledge distillation.

Stage 1 trains the extractor jointly with the acoustic model, one style
level at a time (global, then sentence, then subword); inactive levels are
frozen but still contribute to the forward pass by default.  Stage 2
freezes everything but the predictor side and regresses extracted style
embeddings.  Stage 3 fine-tunes predictor and acoustic model together at a
reduced learning rate on the combined acoustic + style objective.

Every step is deterministic: batches are derived statelessly from
(seed, stage, step), so identical configs reproduce identical loss curves
and resuming from a checkpoint replays the exact schedule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .corpus import Corpus, train_test_split
from .errors import ConfigError, DataError, DivergenceError
from .extractor import StyleEmbeddings
from .nn import Tensor
from .nn import autograd as ag
from .nn.layers import Param
from .pipeline import Pipeline
from .predictor import PredictedStyles

LEVELS = ("global", "sentence", "subword")
CHECKPOINT_DIR = "checkpoints"
LOG_NAME = "training_log.jsonl"
STYLE_CLAMP = 0.999


# -- losses ---------------------------------------------------------------------


def acoustic_loss(mel_pred: Tensor, variances, truth: dict, mel_loss: str = "mae"
                  ) -> tuple[Tensor, dict[str, float]]:
    """Mel reconstruction plus MSE of pitch, energy and log-duration.

    Pitch/energy terms are computed in the normalized domain on both sides.
    Components are reported separately and sum to the total.
    """
    if mel_pred.shape != truth["mel"].shape:
        raise DataError(f"mel shapes differ: {mel_pred.shape} vs {truth['mel'].shape}")
    mel_term = (ag.mae if mel_loss == "mae" else ag.mse)(mel_pred, truth["mel"])
    pitch_term = ag.mse(variances.pitch_norm, truth["pitch_norm"])
    energy_term = ag.mse(variances.energy_norm, truth["energy_norm"])
    duration_term = ag.mse(variances.log_duration, truth["log_duration"])
    total = ag.add(ag.add(mel_term, pitch_term), ag.add(energy_term, duration_term))
    components = {"mel": float(mel_term.data), "pitch": float(pitch_term.data),
                  "energy": float(energy_term.data),
                  "duration": float(duration_term.data)}
    return total, components


def clamp_style_targets(arrays: tuple[np.ndarray, np.ndarray, np.ndarray],
                        bound: float = STYLE_CLAMP):
    return tuple(np.clip(a, -bound, bound) for a in arrays)


def style_loss(pred: PredictedStyles, target_arrays, clamp: bool = True
               ) -> tuple[Tensor, dict[str, float]]:
    """Sum of per-level MSEs; targets are clamped into the tanh range."""
    s_g, s_s, s_w = target_arrays
    if clamp:
        s_g, s_s, s_w = clamp_style_targets((s_g, s_s, s_w))
    if pred.S_w_hat.shape != s_w.shape:
        raise DataError(f"subword style shapes differ: {pred.S_w_hat.shape} vs {s_w.shape}")
    g_term = ag.mse(pred.S_g_hat, s_g)
    s_term = ag.mse(pred.S_s_hat, s_s)
    w_term = ag.mse(pred.S_w_hat, s_w)
    total = ag.add(ag.add(g_term, s_term), w_term)
    return total, {"style_global": float(g_term.data),
                   "style_sentence": float(s_term.data),
                   "style_subword": float(w_term.data)}


# -- optimizer --------------------------------------------------------------------


def lr_at(step: int, base_lr: float, warmup_steps: int) -> float:
    """Linear warmup to base_lr, then inverse-square-root decay."""
    step = max(1, int(step))
    return base_lr * min(step / warmup_steps, math.sqrt(warmup_steps / step))


class Adam:
    """Adam over named parameters; frozen parameters are left untouched."""

    def __init__(self, named_params, beta1: float = 0.9, beta2: float = 0.98,
                 epsilon: float = 1e-9):
        self.params: list[tuple[str, Param]] = list(named_params)
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def step(self, lr: float) -> None:
        for name, param in self.params:
            if not param.trainable:
                continue
            grad = param.grad
            if grad is None:
                grad = np.zeros_like(param.data)
            if not np.all(np.isfinite(grad)):
                raise DivergenceError(f"non-finite gradient for {name}")
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(param.data)
                self.v[name] = np.zeros_like(param.data)
                self.t[name] = 0
            v = self.v[name]
            t = self.t[name] + 1
            m = self.beta1 * m + (1.0 - self.beta1) * grad
            v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + self.epsilon)
            self.m[name], self.v[name], self.t[name] = m, v, t

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for name in self.m:
            arrays[f"adam_m/{name}"] = self.m[name]
            arrays[f"adam_v/{name}"] = self.v[name]
        return arrays

    def state_steps(self) -> dict[str, int]:
        return dict(self.t)

    def load_state(self, arrays: dict[str, np.ndarray], steps: dict[str, int]) -> None:
        for key, value in arrays.items():
            if key.startswith("adam_m/"):
                self.m[key[len("adam_m/"):]] = np.array(value)
            elif key.startswith("adam_v/"):
                self.v[key[len("adam_v/"):]] = np.array(value)
        self.t = {k: int(v) for k, v in steps.items()}


def batch_keys(seed: int, stage: int, step: int, keys: list, size: int) -> list:
    """Stateless batch selection so resumed runs replay the same order."""
    rng = np.random.default_rng([int(seed), int(stage), int(step)])
    if size >= len(keys):
        return list(keys)
    idx = rng.choice(len(keys), size=size, replace=False)
    return [keys[i] for i in sorted(idx)]


@dataclass
class StageState:
    stage: int
    step: int
    active_level: str | None

    def to_dict(self) -> dict:
        return {"stage": self.stage, "step": self.step, "active_level": self.active_level}


# -- trainer -------------------------------------------------------------------


class Trainer:
    def __init__(self, pipeline: Pipeline, corpus: Corpus, cfg: TrainConfig,
                 run_dir: str | Path, holdout_per_document: int = 2):
        cfg.validate()
        self.pipeline = pipeline
        self.corpus = corpus
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        (self.run_dir / CHECKPOINT_DIR).mkdir(exist_ok=True)
        self.train_keys, self.test_keys = train_test_split(corpus, holdout_per_document)
        if not self.train_keys:
            raise ConfigError("training split is empty; reduce holdout_per_document")
        self.train_documents = sorted({k[0] for k in self.train_keys})
        self._data_cache: dict = {}
        self._window_cache: dict = {}
        self._log_path = self.run_dir / LOG_NAME

    # -- shared plumbing -----------------------------------------------------

    def log(self, record: dict) -> None:
        with open(self._log_path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def ckpt_path(self, name: str) -> Path:
        return self.run_dir / CHECKPOINT_DIR / name

    def _data(self, key):
        cached = self._data_cache.get(key)
        if cached is None:
            utt = self.corpus.utterance(*key)
            cached = {"phonemes": self.pipeline.phoneme_sequence(utt),
                      "targets": self.pipeline.teacher_targets(utt)}
            self._data_cache[key] = cached
        return cached

    def _window(self, key, for_extractor: bool):
        cache_key = (key, for_extractor)
        window = self._window_cache.get(cache_key)
        if window is None:
            window = self.pipeline.window(self.corpus, key[0], key[1],
                                          for_extractor=for_extractor)
            self._window_cache[cache_key] = window
        return window

    def _check_finite(self, loss: Tensor, state: StageState) -> None:
        if not np.isfinite(loss.data):
            raise DivergenceError(
                f"non-finite loss at stage {state.stage} step {state.step} "
                f"(level {state.active_level})")

    def _save_state(self, name: str, state: StageState, optimizer: Adam,
                    extra_meta: dict | None = None) -> Path:
        meta = {"train_state": state.to_dict(),
                "adam_t": optimizer.state_steps()}
        meta.update(extra_meta or {})
        return self.pipeline.save(self.ckpt_path(name), extra_meta=meta,
                                  extra_arrays=optimizer.state_arrays())

    # -- stage 1 ---------------------------------------------------------------

    def _set_stage1_trainable(self, level: str) -> None:
        self.pipeline.set_trainable(False)
        self.pipeline.acoustic.set_trainable(True)
        for module in self.pipeline.extractor.level_modules(level):
            module.set_trainable(True)

    def _stage1_styles(self, styles: StyleEmbeddings, level_index: int) -> StyleEmbeddings:
        """Optionally blank style levels that have not been trained yet."""
        if self.cfg.include_inactive_levels:
            return styles
        d = self.pipeline.model_cfg.d_style
        n = styles.S_w.shape[0]
        zero_vec = Tensor(np.zeros(d))
        zero_rows = Tensor(np.zeros((n, d)))
        return StyleEmbeddings(
            S_g=styles.S_g,
            S_s=styles.S_s if level_index >= 1 else zero_vec,
            S_w=styles.S_w if level_index >= 2 else zero_rows,
            token_weights=styles.token_weights)

    def run_stage1(self, start_step: int = 0, optimizer: Adam | None = None) -> Path:
        cfg = self.cfg
        pipeline = self.pipeline
        pipeline.set_training(True)
        optimizer = optimizer or Adam(pipeline.named_params(), cfg.beta1, cfg.beta2,
                                      cfg.epsilon)
        total_steps = cfg.stage1_steps
        for step in range(start_step + 1, total_steps + 1):
            level_index = (step - 1) // cfg.stage1_per_level
            level = LEVELS[level_index]
            state = StageState(stage=1, step=step, active_level=level)
            self._set_stage1_trainable(level)
            keys = batch_keys(cfg.seed, 1, step, self.train_keys, cfg.batch_size)
            losses = []
            component_sums: dict[str, float] = {}
            for key in keys:
                data = self._data(key)
                window = self._window(key, for_extractor=True)
                styles = pipeline.extractor.extract_multiscale(window)
                styles = self._stage1_styles(styles, level_index)
                pred, variances = pipeline.acoustic.synthesize(
                    data["phonemes"], styles, targets=data["targets"])
                loss, comps = acoustic_loss(pred.mel, variances, data["targets"],
                                            mel_loss=cfg.mel_loss)
                losses.append(loss)
                for k, v in comps.items():
                    component_sums[k] = component_sums.get(k, 0.0) + v
            batch_loss = ag.div(_sum_tensors(losses), float(len(losses)))
            self._check_finite(batch_loss, state)
            pipeline.zero_grad()
            batch_loss.backward()
            lr = lr_at(step, cfg.base_lr, cfg.warmup_steps)
            optimizer.step(lr)
            record = {"stage": 1, "step": step, "level": level, "lr": lr,
                      "loss": float(batch_loss.data)}
            record.update({k: v / len(keys) for k, v in component_sums.items()})
            self.log(record)
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                self._save_state("stage1_latest", state, optimizer)
            if step % cfg.stage1_per_level == 0:
                self._save_state(f"stage1_{level}", state, optimizer)
        pipeline.set_training(False)
        return self.ckpt_path("stage1_subword")

    # -- stage 2 -----------------------------------------------------------------

    def extract_style_targets(self, keys=None) -> dict:
        """Frozen-extractor style embeddings used as distillation targets."""
        pipeline = self.pipeline
        pipeline.set_training(False)
        flags = {name: p.trainable for name, p in pipeline.named_params()}
        pipeline.set_trainable(False)
        targets = {}
        for key in keys if keys is not None else (self.train_keys + self.test_keys):
            window = self._window(key, for_extractor=True)
            targets[key] = pipeline.extractor.extract_multiscale(window).to_arrays()
        for name, param in pipeline.named_params():
            if not param.is_buffer:
                param.trainable = flags[name]
        return targets

    def _set_stage2_trainable(self) -> None:
        self.pipeline.set_trainable(False)
        self.pipeline.context_encoder.set_trainable(True)
        self.pipeline.predictor.set_trainable(True)
        if self.cfg_train_provider():
            self.pipeline.provider.set_trainable(True)

    def cfg_train_provider(self) -> bool:
        return (self.pipeline.provider_cfg.train_provider
                and hasattr(self.pipeline.provider, "set_trainable"))

    def _teacher_styles(self, doc: str, targets: dict) -> list[StyleEmbeddings]:
        styles = []
        for utt in self.corpus.sentences(doc):
            g, s, w = clamp_style_targets(targets[utt.key])
            styles.append(StyleEmbeddings(S_g=Tensor(g), S_s=Tensor(s), S_w=Tensor(w)))
        return styles

    def _stage2_loss_hier(self, keys, targets) -> tuple[Tensor, dict]:
        losses, sums = [], {}
        for key in keys:
            ctx = self.pipeline.encode_window(self._window(key, for_extractor=False))
            pred = self.pipeline.predictor.predict(ctx)
            loss, comps = style_loss(pred, targets[key])
            losses.append(loss)
            for k, v in comps.items():
                sums[k] = sums.get(k, 0.0) + v
        total = ag.div(_sum_tensors(losses), float(len(losses)))
        return total, {k: v / len(keys) for k, v in sums.items()}

    def _stage2_loss_ar(self, docs, targets) -> tuple[Tensor, dict]:
        losses, sums, count = [], {}, 0
        for doc in docs:
            ctx_seq = [self.pipeline.encode_window(self._window(u.key, False))
                       for u in self.corpus.sentences(doc)]
            teacher = self._teacher_styles(doc, targets)
            paragraph = self.pipeline.predictor.predict_paragraph(
                ctx_seq, teacher_styles=teacher)
            for t, utt in enumerate(self.corpus.sentences(doc)):
                loss, comps = style_loss(paragraph[t], targets[utt.key])
                losses.append(loss)
                count += 1
                for k, v in comps.items():
                    sums[k] = sums.get(k, 0.0) + v
        total = ag.div(_sum_tensors(losses), float(count))
        return total, {k: v / count for k, v in sums.items()}

    def run_stage2(self, targets: dict | None = None, start_step: int = 0,
                   optimizer: Adam | None = None) -> Path:
        cfg = self.cfg
        pipeline = self.pipeline
        targets = targets if targets is not None else self.extract_style_targets()
        extractor_snapshot = _snapshot(pipeline.extractor)
        self._set_stage2_trainable()
        pipeline.set_training(True)
        optimizer = optimizer or Adam(pipeline.named_params(), cfg.beta1, cfg.beta2,
                                      cfg.epsilon)
        for step in range(start_step + 1, cfg.stage2_steps + 1):
            state = StageState(stage=2, step=step, active_level=None)
            if cfg.mode == "ar":
                docs = batch_keys(cfg.seed, 2, step, self.train_documents,
                                  max(1, cfg.batch_size // 4))
                batch_loss, comps = self._stage2_loss_ar(docs, targets)
            else:
                keys = batch_keys(cfg.seed, 2, step, self.train_keys, cfg.batch_size)
                batch_loss, comps = self._stage2_loss_hier(keys, targets)
            self._check_finite(batch_loss, state)
            pipeline.zero_grad()
            batch_loss.backward()
            lr = lr_at(step, cfg.base_lr, cfg.warmup_steps)
            optimizer.step(lr)
            record = {"stage": 2, "step": step, "level": None, "lr": lr,
                      "loss": float(batch_loss.data)}
            record.update(comps)
            self.log(record)
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                self._save_state("stage2_latest", state, optimizer)
        _assert_unchanged(extractor_snapshot, pipeline.extractor,
                          "extractor changed during stage 2")
        pipeline.set_training(False)
        heldout = self.heldout_style_loss(targets)
        self.log({"stage": 2, "event": "heldout_style_loss", **heldout})
        return self._save_state("stage2", StageState(2, cfg.stage2_steps, None),
                                optimizer, extra_meta={"heldout_style_loss": heldout})

    def heldout_style_loss(self, targets: dict) -> dict[str, float]:
        """Mean per-level style loss over the held-out split."""
        pipeline = self.pipeline
        sums: dict[str, float] = {}
        count = 0
        if self.cfg.mode == "ar":
            docs = sorted({k[0] for k in self.test_keys})
            test_set = set(self.test_keys)
            for doc in docs:
                ctx_seq = [pipeline.encode_window(self._window(u.key, False))
                           for u in self.corpus.sentences(doc)]
                teacher = self._teacher_styles(doc, targets)
                paragraph = pipeline.predictor.predict_paragraph(
                    ctx_seq, teacher_styles=teacher)
                for t, utt in enumerate(self.corpus.sentences(doc)):
                    if utt.key not in test_set:
                        continue
                    _, comps = style_loss(paragraph[t], targets[utt.key])
                    count += 1
                    for k, v in comps.items():
                        sums[k] = sums.get(k, 0.0) + v
        else:
            for key in self.test_keys:
                ctx = pipeline.encode_window(self._window(key, False))
                pred = pipeline.predictor.predict(ctx)
                _, comps = style_loss(pred, targets[key])
                count += 1
                for k, v in comps.items():
                    sums[k] = sums.get(k, 0.0) + v
        out = {k: v / count for k, v in sums.items()}
        out["style_total"] = sum(out.values())
        return out

    def target_variance_baseline(self, targets: dict) -> dict[str, float]:
        """Held-out MSE of predicting the training-split mean target."""
        stacks = {level: [] for level in ("g", "s", "w")}
        for key in self.train_keys:
            g, s, w = clamp_style_targets(targets[key])
            stacks["g"].append(g)
            stacks["s"].append(s)
            stacks["w"].append(w)
        mean_g = np.mean(np.stack(stacks["g"]), axis=0)
        mean_s = np.mean(np.stack(stacks["s"]), axis=0)
        mean_w = np.mean(np.concatenate(stacks["w"], axis=0), axis=0)
        sums = {"style_global": 0.0, "style_sentence": 0.0, "style_subword": 0.0}
        for key in self.test_keys:
            g, s, w = clamp_style_targets(targets[key])
            sums["style_global"] += float(np.mean((g - mean_g) ** 2))
            sums["style_sentence"] += float(np.mean((s - mean_s) ** 2))
            sums["style_subword"] += float(np.mean((w - mean_w[None, :]) ** 2))
        n = len(self.test_keys)
        out = {k: v / n for k, v in sums.items()}
        out["style_total"] = sum(out.values())
        return out

    # -- stage 3 -----------------------------------------------------------------

    def _set_stage3_trainable(self) -> None:
        self.pipeline.set_trainable(False)
        self.pipeline.acoustic.set_trainable(True)
        self.pipeline.context_encoder.set_trainable(True)
        self.pipeline.predictor.set_trainable(True)
        if self.cfg_train_provider():
            self.pipeline.provider.set_trainable(True)

    def _stage3_utterance_loss(self, key, targets) -> tuple[Tensor, dict, PredictedStyles]:
        data = self._data(key)
        ctx = self.pipeline.encode_window(self._window(key, for_extractor=False))
        pred_styles = self.pipeline.predictor.predict(ctx)
        mel_pred, variances = self.pipeline.acoustic.synthesize(
            data["phonemes"], pred_styles, targets=data["targets"])
        a_loss, a_comps = acoustic_loss(mel_pred.mel, variances, data["targets"],
                                        mel_loss=self.cfg.mel_loss)
        s_loss, s_comps = style_loss(pred_styles, targets[key])
        total = ag.add(a_loss, ag.mul(s_loss, self.cfg.style_loss_weight))
        comps = {**a_comps, **s_comps,
                 "style": float(s_loss.data) * self.cfg.style_loss_weight}
        return total, comps, pred_styles

    def run_stage3(self, targets: dict | None = None, start_step: int = 0,
                   optimizer: Adam | None = None) -> Path:
        cfg = self.cfg
        pipeline = self.pipeline
        targets = targets if targets is not None else self.extract_style_targets()
        self._set_stage3_trainable()
        pipeline.set_training(True)
        optimizer = optimizer or Adam(pipeline.named_params(), cfg.beta1, cfg.beta2,
                                      cfg.epsilon)
        for step in range(start_step + 1, cfg.stage3_steps + 1):
            state = StageState(stage=3, step=step, active_level=None)
            losses, sums, count = [], {}, 0
            if cfg.mode == "ar":
                docs = batch_keys(cfg.seed, 3, step, self.train_documents,
                                  max(1, cfg.batch_size // 4))
                for doc in docs:
                    sentences = self.corpus.sentences(doc)
                    ctx_seq = [pipeline.encode_window(self._window(u.key, False))
                               for u in sentences]
                    paragraph = pipeline.predictor.predict_paragraph(ctx_seq)
                    for t, utt in enumerate(sentences):
                        data = self._data(utt.key)
                        mel_pred, variances = pipeline.acoustic.synthesize(
                            data["phonemes"], paragraph[t], targets=data["targets"])
                        a_loss, a_comps = acoustic_loss(
                            mel_pred.mel, variances, data["targets"], cfg.mel_loss)
                        s_loss, s_comps = style_loss(paragraph[t], targets[utt.key])
                        losses.append(ag.add(a_loss, ag.mul(s_loss,
                                                            cfg.style_loss_weight)))
                        count += 1
                        for k, v in {**a_comps, **s_comps}.items():
                            sums[k] = sums.get(k, 0.0) + v
            else:
                keys = batch_keys(cfg.seed, 3, step, self.train_keys, cfg.batch_size)
                for key in keys:
                    total, comps, _ = self._stage3_utterance_loss(key, targets)
                    losses.append(total)
                    count += 1
                    for k, v in comps.items():
                        sums[k] = sums.get(k, 0.0) + v
            batch_loss = ag.div(_sum_tensors(losses), float(count))
            self._check_finite(batch_loss, state)
            pipeline.zero_grad()
            batch_loss.backward()
            lr = cfg.stage3_lr_scale * lr_at(step, cfg.base_lr, cfg.warmup_steps)
            optimizer.step(lr)
            record = {"stage": 3, "step": step, "level": None, "lr": lr,
                      "loss": float(batch_loss.data)}
            record.update({k: v / count for k, v in sums.items()})
            self.log(record)
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                self._save_state("stage3_latest", state, optimizer)
        pipeline.set_training(False)
        return self._save_state("stage3", StageState(3, cfg.stage3_steps, None),
                                optimizer)

    def run_all(self) -> Path:
        self.run_stage1()
        targets = self.extract_style_targets()
        self.run_stage2(targets=targets)
        return self.run_stage3(targets=targets)


def _sum_tensors(tensors: list[Tensor]) -> Tensor:
    total = tensors[0]
    for t in tensors[1:]:
        total = ag.add(total, t)
    return total


def _snapshot(module) -> dict[str, np.ndarray]:
    return {name: np.array(p.data) for name, p in module.named_params()}


def _assert_unchanged(snapshot: dict[str, np.ndarray], module, message: str) -> None:
    for name, param in module.named_params():
        if not np.array_equal(snapshot[name], param.data):
            raise DataError(f"{message}: {name}")
