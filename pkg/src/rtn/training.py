"""Loss, teacher forcing, AMSGrad and the epoch loop."""
from __future__ import annotations

import configparser
import logging
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore
from .metrics import aco, mse_loss
from .model import ModelConfig, init_params, make_batch, rollout, rollout_loss
from .motion import NormStats, TransitionWindow, compute_stats, random_rotate
from .terrain import raw_patch

log = logging.getLogger(__name__)

TEACHER_MODES = ("fixed", "scheduled-linear", "always", "never", "windowed-ac")


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    teacher_mode: str = "fixed"
    teacher_p: float = 0.2
    epochs: int = 200
    seed: int = 0
    p: int = 30
    terrain_aware: bool = False
    augment: bool = True
    clip_norm: float | None = None
    ac_window: tuple[int, int] = (5, 5)
    eval_batch: int = 128

    def __post_init__(self):
        if not 0.0 <= self.teacher_p <= 1.0:
            raise ConfigError("teacher_p must lie in [0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.teacher_mode not in TEACHER_MODES:
            raise ConfigError(f"unknown teacher-forcing mode {self.teacher_mode!r}")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        self.ac_window = tuple(self.ac_window)


def select_prev_frame(ground_truth, prediction, p: float, rng: np.random.Generator):
    """Ground truth with probability ``p``, else the prediction. Always consumes one draw."""
    return ground_truth if rng.random() < p else prediction


def teacher_probability(config: TrainConfig, epoch: int) -> float:
    """Probability of feeding ground truth during 1-based ``epoch``."""
    mode = config.teacher_mode
    if mode == "fixed":
        return config.teacher_p
    if mode == "always":
        return 1.0
    if mode == "never":
        return 0.0
    if mode == "scheduled-linear":
        if config.epochs <= 1:
            return 1.0
        return 1.0 - (epoch - 1) / (config.epochs - 1)
    return float("nan")


def teacher_masks(config: TrainConfig, epoch: int, p: int, batch: int, rng: np.random.Generator) -> np.ndarray:
    """(P, B) flags: True feeds the ground-truth previous frame at that step."""
    if config.teacher_mode == "windowed-ac":
        on, off = config.ac_window
        k = np.arange(p)
        return np.repeat(((k % (on + off)) < on)[:, None], batch, axis=1)
    prob = teacher_probability(config, epoch)
    return rng.random((p, batch)) < prob


def amsgrad_step(store: ParamStore, grads: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8) -> bool:
    """One AMSGrad update in place. Returns False (and changes nothing) on non-finite gradients."""
    for name, g in grads.items():
        if g.shape != store.params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape for {name}")
        if not np.all(np.isfinite(g)):
            log.warning("skipping update: non-finite gradient for %s", name)
            return False
    for name, g in grads.items():
        m = store.m[name]
        v = store.v[name]
        vmax = store.vmax[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        np.maximum(vmax, v, out=vmax)
        store.params[name] -= lr * m / (np.sqrt(vmax) + eps)
    store.step += 1
    return True


def _clip(grads: dict, max_norm: float) -> dict:
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm:
        return grads
    return {k: g * (max_norm / norm) for k, g in grads.items()}


@dataclass
class TrainReport:
    rows: list[tuple[int, float, float, float]] = field(default_factory=list)  # epoch, train, val mse, val aco
    best_epoch: int = 0
    wall_clock: float = 0.0

    @property
    def val_mse(self) -> list[float]:
        return [r[2] for r in self.rows]

    @property
    def best_val_mse(self) -> float:
        return self.rows[self.best_epoch][2]

    def to_rows(self) -> str:
        lines = ["epoch,train_loss,val_mse,val_aco"]
        lines += [f"{e},{tl!r},{vm!r},{va!r}" for e, tl, vm, va in self.rows]
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        lines = [f"{'epoch':>5}  {'train loss':>12}  {'val MSE':>10}  {'val ACO':>9}"]
        for e, tl, vm, va in self.rows:
            mark = "  *" if e == self.best_epoch else ""
            lines.append(f"{e:>5}  {tl:>12.6f}  {vm:>10.6f}  {va:>9.4f}{mark}")
        return "\n".join(lines) + "\n"


def training_patches(windows: Sequence[TransitionWindow]) -> list[np.ndarray]:
    """Raw patches along the ground-truth root path of every heightmap of every window."""
    out = []
    for w in windows:
        n = w.target_index + 1
        for hm in w.heightmaps:
            out.append(np.stack([raw_patch(hm, w.positions[t, 0]) for t in range(n)]))
    return out


def prepare_stats(windows: Sequence[TransitionWindow], terrain_aware: bool) -> NormStats:
    patches = training_patches(windows) if terrain_aware else None
    return compute_stats(windows, patches)


def evaluate_windows(store, config: ModelConfig, stats: NormStats, windows: Sequence[TransitionWindow],
                     chunk: int = 128) -> tuple[float, float]:
    """Validation (MSE in normalized space, ACO in cm) with teacher forcing off."""
    params = store.params if isinstance(store, ParamStore) else store
    sq, ab, n_frames = 0.0, 0.0, 0
    for i in range(0, len(windows), chunk):
        part = windows[i:i + chunk]
        hms = [w.heightmaps[0] for w in part] if config.terrain_aware else None
        batch = make_batch(part, stats, hms)
        ro = rollout(params, batch, config, stats)
        pred = ro.frames_array()
        truth = batch.truth()
        sq += mse_loss(pred, truth) * pred.shape[0] * pred.shape[1]
        y_true = batch.y[batch.context: batch.target_index + 1]
        ab += aco(np.stack([g.value for g in ro.globals]), y_true) * pred.shape[0] * pred.shape[1]
        n_frames += pred.shape[0] * pred.shape[1]
    return sq / n_frames, ab / n_frames


def train_step(store: ParamStore, config: ModelConfig, stats: NormStats, windows, tconf: TrainConfig,
               epoch: int, rng: np.random.Generator) -> float:
    """Augment, roll out with teacher forcing, backpropagate and update; returns the batch loss."""
    aug, hms = [], []
    for w in windows:
        hm = None
        if config.terrain_aware:
            hm = w.heightmaps[int(rng.integers(len(w.heightmaps)))]
        angle = float(rng.uniform(-np.pi, np.pi)) if tconf.augment else 0.0
        rw, rhm = random_rotate(w, hm, angle)
        aug.append(rw)
        hms.append(rhm)
    batch = make_batch(aug, stats, hms if config.terrain_aware else None)
    masks = teacher_masks(tconf, epoch, batch.p, batch.size, rng)
    leaves = store.leaves()
    ro = rollout(leaves, batch, config, stats, masks)
    loss = rollout_loss(ro, batch)
    value = float(loss.value[0, 0])
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite training loss at epoch {epoch}")
    grads = ad.backward(loss, leaves)
    if tconf.clip_norm is not None:
        grads = _clip(grads, tconf.clip_norm)
    amsgrad_step(store, grads, tconf.lr, tconf.beta1, tconf.beta2, tconf.eps)
    return value


def train(
    train_windows: Sequence[TransitionWindow],
    val_windows: Sequence[TransitionWindow],
    config: ModelConfig,
    tconf: TrainConfig,
    stats: NormStats | None = None,
    store: ParamStore | None = None,
) -> tuple[TrainReport, ParamStore, NormStats]:
    """Train and return the report, the best-validation parameters and the statistics.

    Row 0 of the report is the untrained network (train loss reported as the
    validation-style loss on the training set is skipped; it is NaN).
    """
    if not train_windows or not val_windows:
        raise ValueError("training needs non-empty training and validation sets")
    t0 = time.perf_counter()
    if stats is None:
        stats = prepare_stats(train_windows, config.terrain_aware)
    if store is None:
        store = init_params(config, tconf.seed)
    rng = np.random.default_rng(tconf.seed)
    report = TrainReport()
    vm, va = evaluate_windows(store, config, stats, val_windows, tconf.eval_batch)
    report.rows.append((0, float("nan"), vm, va))
    best = store.copy()
    best_val = vm
    n = len(train_windows)
    for epoch in range(1, tconf.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for i in range(0, n, tconf.batch_size):
            part = [train_windows[j] for j in order[i:i + tconf.batch_size]]
            try:
                losses.append(train_step(store, config, stats, part, tconf, epoch, rng))
            except ad.NonFiniteError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}") from exc
        vm, va = evaluate_windows(store, config, stats, val_windows, tconf.eval_batch)
        tl = float(np.mean(losses))
        report.rows.append((epoch, tl, vm, va))
        log.info("epoch %d train %.5f val %.5f aco %.3f", epoch, tl, vm, va)
        if vm < best_val:
            best_val, best = vm, store.copy()
            report.best_epoch = epoch
    report.wall_clock = time.perf_counter() - t0
    return report, best, stats


# config files

def _coerce(value: str, current):
    value = value.strip()
    if isinstance(current, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(current, tuple):
        return tuple(int(v) for v in value.replace(",", " ").split())
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float) or current is None:
        if value.lower() == "none":
            return None
        return float(value)
    return value


def parse_config(text: str) -> tuple[TrainConfig, dict]:
    """``key = value`` lines; keys prefixed ``model.`` override ModelConfig fields."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    tdefaults = TrainConfig()
    mdefaults = ModelConfig()
    tkw, mkw = {}, {}
    tnames = {f.name for f in fields(TrainConfig)}
    mnames = {f.name for f in fields(ModelConfig)}
    for key, value in cp["config"].items():
        try:
            if key.startswith("model."):
                name = key[len("model."):]
                if name not in mnames:
                    raise ConfigError(f"unknown model key {name!r}")
                mkw[name] = _coerce(value, getattr(mdefaults, name))
            elif key in tnames:
                tkw[key] = _coerce(value, getattr(tdefaults, key))
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key!r}: {value!r}") from None
    return TrainConfig(**tkw), mkw


def load_config(path) -> tuple[TrainConfig, dict]:
    return parse_config(Path(path).read_text())


def dump_config(tconf: TrainConfig, model: dict | None = None) -> str:
    lines = []
    for f in fields(TrainConfig):
        v = getattr(tconf, f.name)
        lines.append(f"{f.name} = {' '.join(map(str, v)) if isinstance(v, tuple) else v}")
    for k, v in (model or {}).items():
        lines.append(f"model.{k} = {' '.join(map(str, v)) if isinstance(v, tuple) else v}")
    return "\n".join(lines) + "\n"
