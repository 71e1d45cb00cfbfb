"""Method comparison, ablation harness and report formatting."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .baselines import interpolation_baseline
from .metrics import aco, mse_loss, offset_profile
from .model import ABLATIONS, ModelConfig, generate_transition
from .motion import NormStats, Skeleton, TransitionWindow, preprocess
from .training import TrainConfig, TrainReport, train

# reference values from the original large motion-capture corpus (MSE, ACO);
# kept for documentation and report layout, never used as test oracles
REFERENCE_COMPARISON = {
    "INT": (0.210, 6.726),
    "F-ResLSTM": (0.144, 7.709),
    "F-ERD": (0.092, 4.770),
    "RTN": (0.087, 4.751),
}
REFERENCE_ABLATION = {
    "no-future": 0.298,
    "ptf=delta": 0.151,
    "ptf=1.0": 0.147,
    "ptf=0.0": 0.109,
    "no-resnet": 0.114,
    "h0": 0.095,
    "hcommon": 0.092,
    "full": 0.087,
}
REFERENCE_TERRAIN = {"P=30": (0.086, 0.087), "P=60": (0.274, 0.268)}  # (terrain-aware, unaware)

ABLATION_VARIANTS = tuple(REFERENCE_ABLATION)
TEACHER_VARIANTS = {"ptf=delta": "scheduled-linear", "ptf=1.0": "always", "ptf=0.0": "never"}

Method = Callable[[Sequence[TransitionWindow]], np.ndarray]


@dataclass
class EvalReport:
    rows: dict[str, tuple[float, float]] = field(default_factory=dict)  # method -> (mse, aco)
    curves: dict[str, np.ndarray] = field(default_factory=dict)
    epochs: dict[str, int] = field(default_factory=dict)
    reference: dict = field(default_factory=dict)

    def to_table(self) -> str:
        width = max([len(m) for m in self.rows] + [8])
        lines = [f"{'method':<{width}}  {'MSE':>10}  {'ACO':>9}  {'ref MSE':>8}"]
        for name, (m, a) in self.rows.items():
            ref = self.reference.get(name)
            ref_m = ref[0] if isinstance(ref, tuple) else ref
            ref_s = f"{ref_m:>8.3f}" if ref_m is not None else f"{'-':>8}"
            aco_s = f"{a:>9.4f}" if np.isfinite(a) else f"{'-':>9}"
            lines.append(f"{name:<{width}}  {m:>10.6f}  {aco_s}  {ref_s}")
        return "\n".join(lines) + "\n"

    def to_rows(self) -> str:
        lines = ["method,mse,aco"]
        lines += [f"{n},{m!r},{a!r}" for n, (m, a) in self.rows.items()]
        return "\n".join(lines) + "\n"

    def curve_rows(self) -> str:
        lines = ["method,frame,centimeters"]
        for n, c in self.curves.items():
            lines += [f"{n},{i + 1},{v!r}" for i, v in enumerate(c)]
        return "\n".join(lines) + "\n"

    def worst(self) -> str:
        return max(self.rows, key=lambda n: self.rows[n][0])


# methods

def interpolation_method(skeleton: Skeleton, method: str = "slerp") -> Method:
    def run(windows):
        return np.stack([interpolation_baseline(w, method, skeleton, include_target=True) for w in windows])
    return run


def network_method(params, config: ModelConfig, stats: NormStats, chunk: int = 128) -> Method:
    def run(windows):
        out = []
        for i in range(0, len(windows), chunk):
            out.append(generate_transition(list(windows[i:i + chunk]), params, config, stats))
        return np.concatenate(out)
    return run


def ground_truth_method(windows) -> np.ndarray:
    return np.stack([w.positions[w.s:w.target_index + 1] for w in windows])


def score_predictions(windows: Sequence[TransitionWindow], pred: np.ndarray, stats: NormStats):
    """(MSE in normalized space over frames s..T, ACO in cm over s..T, per-frame curve over s..T-1)."""
    xs_hat, xs, g_hat, g = [], [], [], []
    for w, ph in zip(windows, pred):
        n = w.target_index + 1
        full = w.positions[:n].copy()
        full[w.s:n] = ph
        xs_hat.append(preprocess(full, stats)[w.s:n])
        xs.append(preprocess(w.positions[:n], stats)[w.s:n])
        g_hat.append(ph)
        g.append(w.positions[w.s:n])
    g_hat, g = np.stack(g_hat), np.stack(g)
    curve = offset_profile(g_hat[:, :-1], g[:, :-1], frame_axis=1)
    return mse_loss(np.stack(xs_hat), np.stack(xs)), aco(g_hat, g), curve


def run_comparison(
    windows: Sequence[TransitionWindow],
    methods: Mapping[str, Method | None],
    stats: NormStats,
) -> EvalReport:
    """Score every method on the same windows. A ``None`` method means its checkpoint is missing."""
    missing = [n for n, m in methods.items() if m is None]
    if missing:
        raise FileNotFoundError(f"no checkpoint for method(s): {', '.join(missing)}")
    if not windows:
        raise ValueError("no evaluation windows")
    report = EvalReport(reference=dict(REFERENCE_COMPARISON))
    for name, method in methods.items():
        m, a, curve = score_predictions(windows, method(windows), stats)
        report.rows[name] = (m, a)
        report.curves[name] = curve
    return report


def variant_configs(variant: str, model: ModelConfig, tconf: TrainConfig) -> tuple[ModelConfig, TrainConfig]:
    if variant in ABLATIONS:
        return replace(model, **ABLATIONS[variant]), tconf
    if variant in TEACHER_VARIANTS:
        return model, replace(tconf, teacher_mode=TEACHER_VARIANTS[variant])
    raise ValueError(f"unknown ablation variant {variant!r}")


def run_ablation(
    train_windows: Sequence[TransitionWindow],
    val_windows: Sequence[TransitionWindow],
    variants: Sequence[str],
    model: ModelConfig,
    tconf: TrainConfig,
    stats: NormStats | None = None,
) -> tuple[EvalReport, dict[str, TrainReport]]:
    """Train each variant with the same seed, data and statistics; report best-epoch validation MSE."""
    for v in variants:
        variant_configs(v, model, tconf)
    reports = {}
    out = EvalReport(reference=dict(REFERENCE_ABLATION))
    for v in variants:
        mc, tc = variant_configs(v, model, tconf)
        rep, _, stats = train(train_windows, val_windows, mc, tc, stats)
        reports[v] = rep
        row = rep.rows[rep.best_epoch]
        out.rows[v] = (row[2], row[3])
        out.epochs[v] = rep.best_epoch
    return out, reports
