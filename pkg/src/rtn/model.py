"""Recurrent Transition Network: sub-networks, rollout, variants and checkpoints."""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParamStore
from .motion import CONTEXT_FRAMES, NormStats, TransitionWindow, build_target_vector, preprocess
from .terrain import PATCH_DIM, raw_patch, raw_patch_grad

VARIANTS = ("rtn", "f-erd", "f-reslstm")
INIT_MODES = ("learned", "common", "zero")
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    d: int = 66
    terrain_aware: bool = False
    residual: bool = True
    hidden_init: str = "learned"
    future: bool = True
    variant: str = "rtn"
    p: int = 30
    encoder: tuple[int, int] = (512, 512)
    future_encoder: tuple[int, int] = (128, 128)
    lstm: int = 512
    decoder: tuple[int, int] = (256, 128)
    init_hidden: int = 512
    slope: float = ad.DEFAULT_LRELU_SLOPE

    def __post_init__(self):
        self.encoder = tuple(self.encoder)
        self.future_encoder = tuple(self.future_encoder)
        self.decoder = tuple(self.decoder)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.hidden_init not in INIT_MODES:
            raise ValueError(f"unknown hidden-state init mode {self.hidden_init!r}")
        if self.d % 3:
            raise ValueError("frame dimension must be 3K")
        if self.variant == "f-erd" and self.hidden_init != "zero":
            raise ValueError("f-erd uses zero hidden-state init")
        if self.variant == "f-reslstm" and (self.hidden_init != "zero" or not self.residual):
            raise ValueError("f-reslstm is residual with zero hidden-state init")
        if self.variant != "rtn" and not self.future:
            raise ValueError("baseline variants always use future conditioning")

    @property
    def input_dim(self) -> int:
        return self.d + (PATCH_DIM if self.terrain_aware else 0)

    @classmethod
    def for_variant(cls, variant: str, **kw) -> "ModelConfig":
        if variant == "f-erd":
            kw.setdefault("hidden_init", "zero")
            kw.setdefault("residual", False)
        elif variant == "f-reslstm":
            kw.setdefault("hidden_init", "zero")
        return cls(variant=variant, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**dict(d))


# layer sizes small enough to train on one CPU core in minutes
DESK_PRESET = {
    "encoder": (128, 128),
    "future_encoder": (32, 32),
    "lstm": 128,
    "decoder": (64, 32),
    "init_hidden": 128,
}

# ablation variants by name
ABLATIONS = {
    "full": {},
    "no-future": {"future": False},
    "no-resnet": {"residual": False},
    "h0": {"hidden_init": "zero"},
    "hcommon": {"hidden_init": "common"},
}


def init_params(config: ModelConfig, seed: int = 0) -> ParamStore:
    """Fan-in scaled uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    store = ParamStore()

    def dense(name, n_in, n_out):
        lim = 1.0 / np.sqrt(n_in)
        store.add(f"{name}.W", rng.uniform(-lim, lim, size=(n_in, n_out)))
        store.add(f"{name}.b", np.zeros((1, n_out)))

    h = config.lstm
    fo = 2 * config.future_encoder[1] if config.future else 0
    if config.variant == "f-reslstm":
        lstm_in = config.input_dim
    else:
        dense("enc1", config.input_dim, config.encoder[0])
        dense("enc2", config.encoder[0], config.encoder[1])
        lstm_in = config.encoder[1]
    if config.future:
        dense("tgt1", 2 * config.d, config.future_encoder[0])
        dense("tgt2", config.future_encoder[0], config.future_encoder[1])
        dense("off1", config.d, config.future_encoder[0])
        dense("off2", config.future_encoder[0], config.future_encoder[1])
    lim = 1.0 / np.sqrt(lstm_in + h + fo)
    store.add("lstm.W", rng.uniform(-lim, lim, size=(lstm_in, 4 * h)))
    store.add("lstm.U", rng.uniform(-lim, lim, size=(h, 4 * h)))
    if config.future:
        store.add("lstm.C", rng.uniform(-lim, lim, size=(fo, 4 * h)))
    store.add("lstm.b", np.zeros((1, 4 * h)))
    if config.variant == "f-reslstm":
        dense("out", h, config.d)
    else:
        dense("dec1", h, config.decoder[0])
        dense("dec2", config.decoder[0], config.decoder[1])
        dense("dec3", config.decoder[1], config.d)
    if config.hidden_init == "learned":
        dense("init1", config.d, config.init_hidden)
        dense("init2", config.init_hidden, 2 * h)
    elif config.hidden_init == "common":
        store.add("init.h", np.zeros((1, 2 * h)))
    return store


# sub-networks; params maps names to Nodes or arrays

def _p(params, name) -> Node:
    v = params[name]
    return v if isinstance(v, Node) else ad.const(v)


def _dense(params, name, x, act=True, slope=ad.DEFAULT_LRELU_SLOPE) -> Node:
    z = ad.add(ad.matmul(x, _p(params, f"{name}.W")), _p(params, f"{name}.b"))
    return ad.lrelu(z, slope) if act else z


def frame_encode(params, x, patch=None, config: ModelConfig | None = None) -> Node:
    slope = config.slope if config else ad.DEFAULT_LRELU_SLOPE
    if config is not None:
        if patch is not None and not config.terrain_aware:
            raise ValueError("terrain patch given to a terrain-unaware model")
        if patch is None and config.terrain_aware:
            raise ValueError("terrain-aware model needs a terrain patch")
    inp = x if patch is None else ad.concat([x, patch])
    return _dense(params, "enc2", _dense(params, "enc1", inp, slope=slope), slope=slope)


def encode_target(params, t, slope=ad.DEFAULT_LRELU_SLOPE) -> Node:
    return _dense(params, "tgt2", _dense(params, "tgt1", t, slope=slope), slope=slope)


def encode_offset(params, o, slope=ad.DEFAULT_LRELU_SLOPE) -> Node:
    return _dense(params, "off2", _dense(params, "off1", o, slope=slope), slope=slope)


def encode_future(params, t, o, slope=ad.DEFAULT_LRELU_SLOPE) -> tuple[Node, Node]:
    return encode_target(params, t, slope), encode_offset(params, o, slope)


@dataclass
class RecurrentState:
    h: Node
    c: Node


def lstm_step(params, h_in, state: RecurrentState, h_future=None) -> RecurrentState:
    """Future-conditioned LSTM step. Gate blocks are stacked as i, o, f, candidate."""
    z = ad.add(ad.matmul(h_in, _p(params, "lstm.W")), ad.matmul(state.h, _p(params, "lstm.U")))
    if h_future is not None:
        z = ad.add(z, ad.matmul(h_future, _p(params, "lstm.C")))
    z = ad.add(z, _p(params, "lstm.b"))
    n = z.shape[1] // 4
    i = ad.sigmoid(ad.slice_cols(z, 0, n))
    o = ad.sigmoid(ad.slice_cols(z, n, 2 * n))
    f = ad.sigmoid(ad.slice_cols(z, 2 * n, 3 * n))
    cand = ad.tanh(ad.slice_cols(z, 3 * n, 4 * n))
    c = ad.add(ad.mul(f, state.c), ad.mul(i, cand))
    h = ad.mul(o, ad.tanh(c))
    if not (np.all(np.isfinite(h.value)) and np.all(np.isfinite(c.value))):
        raise ad.NonFiniteError("recurrent state diverged")
    return RecurrentState(h, c)


def frame_decode(params, h, x, residual: bool = True, slope=ad.DEFAULT_LRELU_SLOPE) -> Node:
    if "out.W" in params:
        out = _dense(params, "out", h, act=False)
    else:
        z = _dense(params, "dec2", _dense(params, "dec1", h, slope=slope), slope=slope)
        out = _dense(params, "dec3", z, act=False)
    return ad.add(x, out) if residual else out


def init_hidden(params, x0, mode: str, size: int) -> RecurrentState:
    x0 = x0 if isinstance(x0, Node) else ad.const(x0)
    b = x0.shape[0]
    if mode == "zero":
        z = ad.const(np.zeros((b, size)))
        return RecurrentState(z, ad.const(np.zeros((b, size))))
    if mode == "learned":
        hidden = _dense(params, "init1", x0)
        both = _dense(params, "init2", hidden, act=False)
    elif mode == "common":
        both = ad.matmul(ad.const(np.ones((b, 1))), _p(params, "init.h"))
    else:
        raise ValueError(f"unknown hidden-state init mode {mode!r}")
    return RecurrentState(ad.slice_cols(both, 0, size), ad.slice_cols(both, size, 2 * size))


# batches

@dataclass
class Batch:
    """Arrays for B windows sharing one transition length.

    ``x`` and ``y`` are (L, B, D) normalized frames and flattened globals;
    ``targets`` is (B, 2D); ``heightmaps`` has one entry per window or is None.
    """

    x: np.ndarray
    y: np.ndarray
    targets: np.ndarray
    p: int
    heightmaps: list | None = None
    context: int = CONTEXT_FRAMES

    @property
    def size(self) -> int:
        return self.x.shape[1]

    @property
    def target_index(self) -> int:
        return self.context + self.p

    def truth(self) -> np.ndarray:
        """Ground-truth normalized frames s..T, shape (P+1, B, D)."""
        return self.x[self.context: self.target_index + 1]


def make_batch(windows: Sequence[TransitionWindow], stats: NormStats, heightmaps=None) -> Batch:
    ps = {w.p for w in windows}
    if len(ps) != 1:
        raise ValueError("all windows in a batch need the same transition length")
    p = ps.pop()
    ctx = windows[0].context
    n = ctx + p + 2
    x = np.stack([preprocess(w.positions[:n], stats) for w in windows], axis=1)
    y = np.stack([w.positions[:n].reshape(n, -1) for w in windows], axis=1)
    t = np.stack([build_target_vector(w.y_target, w.y_next, stats) for w in windows])
    return Batch(x, y, t, p, heightmaps, ctx)


# rollout

def _patch_node(root: Node, heightmaps, stats: NormStats) -> Node:
    hms = list(heightmaps)

    def fwd(r):
        return np.stack([raw_patch(hm, r[b]) for b, hm in enumerate(hms)])

    def bwd(g, vals, out):
        r = vals[0]
        return (np.stack([g[b] @ raw_patch_grad(hm, r[b]) for b, hm in enumerate(hms)]),)

    raw = ad.custom("terrain-patch", (root,), fwd, bwd)
    return ad.mul(ad.add(raw, ad.const(-stats.patch_mean)), ad.const(1.0 / stats.patch_std))


def _const_patch(y_flat: np.ndarray, heightmaps, stats: NormStats) -> np.ndarray:
    raw = np.stack([raw_patch(hm, y_flat[b, :3]) for b, hm in enumerate(heightmaps)])
    return (raw - stats.patch_mean) / stats.patch_std


@dataclass
class Rollout:
    frames: list[Node]  # P+1 predicted normalized frames x_s..x_T
    globals: list[Node]  # matching flattened global positions
    offsets: list[np.ndarray] = field(default_factory=list)  # normalized o_t fed at each step

    def frames_array(self) -> np.ndarray:
        return np.stack([f.value for f in self.frames])

    def globals_array(self) -> np.ndarray:
        g = np.stack([f.value for f in self.globals])
        return g.reshape(g.shape[0], g.shape[1], -1, 3)


def rollout(
    params,
    batch: Batch,
    config: ModelConfig,
    stats: NormStats,
    teacher_masks: np.ndarray | None = None,
    record_offsets: bool = False,
) -> Rollout:
    """Consume the past context, then emit P+1 frames autoregressively.

    ``teacher_masks[k, b]`` set means window ``b`` receives its ground-truth
    frame instead of the prediction as input for transition step ``k``.
    Global offsets and terrain patches of predicted frames are computed
    in-graph, so gradients flow through them.
    """
    if config.terrain_aware and (batch.heightmaps is None or stats.patch_mean is None):
        raise ValueError("terrain-aware rollout needs heightmaps and patch statistics")
    d = config.d
    b = batch.size
    ctx, p = batch.context, batch.p
    slope = config.slope
    y_target = batch.y[batch.target_index]
    off_scale = ad.const(-1.0 / stats.off_std)
    off_shift = ad.const((y_target - stats.off_mean) / stats.off_std)
    x_scale = ad.const(stats.x_std)
    x_shift = ad.const(stats.x_mean)
    tile = ad.const(np.tile(np.eye(3), (1, d // 3 - 1)))

    state = init_hidden(params, batch.x[0], config.hidden_init, config.lstm)
    h_target = encode_target(params, batch.targets, slope) if config.future else None

    def step(x_t, y_t, state):
        if config.terrain_aware:
            if isinstance(y_t, Node):
                patch = _patch_node(ad.slice_cols(y_t, 0, 3), batch.heightmaps, stats)
            else:
                patch = ad.const(_const_patch(y_t, batch.heightmaps, stats))
            inp = ad.concat([x_t, patch])
        else:
            inp = x_t
        if config.variant == "f-reslstm":
            h_in = inp
        else:
            h_in = _dense(params, "enc2", _dense(params, "enc1", inp, slope=slope), slope=slope)
        h_future = None
        if config.future:
            if isinstance(y_t, Node):
                o_t = ad.add(ad.mul(y_t, off_scale), off_shift)
            else:
                o_t = ad.const((y_target - y_t - stats.off_mean) / stats.off_std)
            if record_offsets:
                offsets.append(o_t.value.copy())
            h_future = ad.concat([h_target, encode_offset(params, o_t, slope)])
        return lstm_step(params, h_in, state, h_future)

    offsets: list[np.ndarray] = []
    for t in range(ctx):
        state = step(ad.const(batch.x[t]), batch.y[t], state)
    x_prev = ad.const(batch.x[ctx - 1])
    y_prev: Node | np.ndarray = batch.y[ctx - 1]
    frames, globs = [], []
    for k in range(p + 1):
        try:
            x_hat = frame_decode(params, state.h, x_prev, config.residual, slope)
        except ad.NonFiniteError:
            raise ad.NonFiniteError(f"non-finite emission at step {k}") from None
        if not np.all(np.isfinite(x_hat.value)):
            raise ad.NonFiniteError(f"non-finite emission at step {k}")
        raw = ad.add(ad.mul(x_hat, x_scale), x_shift)
        y_prev_node = y_prev if isinstance(y_prev, Node) else ad.const(y_prev)
        root = ad.add(ad.slice_cols(y_prev_node, 0, 3), ad.slice_cols(raw, 0, 3))
        joints = ad.add(ad.slice_cols(raw, 3, d), ad.matmul(root, tile))
        y_hat = ad.concat([root, joints])
        frames.append(x_hat)
        globs.append(y_hat)
        if k == p:
            break
        x_in, y_in = x_hat, y_hat
        if teacher_masks is not None and teacher_masks[k].any():
            m = teacher_masks[k].astype(np.float64)[:, None]
            if m.all():
                x_in, y_in = ad.const(batch.x[ctx + k]), batch.y[ctx + k]
            else:
                keep = ad.const(np.repeat(1.0 - m, d, axis=1))
                x_in = ad.add(ad.mul(x_hat, keep), ad.const(m * batch.x[ctx + k]))
                y_in = ad.add(ad.mul(y_hat, keep), ad.const(m * batch.y[ctx + k]))
        try:
            state = step(x_in, y_in, state)
        except ad.NonFiniteError:
            raise ad.NonFiniteError(f"non-finite recurrent state at step {k}") from None
        x_prev, y_prev = x_in, y_in
    return Rollout(frames, globs, offsets)


def rollout_loss(ro: Rollout, batch: Batch) -> Node:
    """Mean over windows and predicted frames of the squared frame-error norm."""
    truth = batch.truth()
    total = None
    for k, f in enumerate(ro.frames):
        sq = ad.sum_of_squares(ad.add(f, ad.const(-truth[k])))
        total = sq if total is None else ad.add(total, sq)
    return ad.scale(total, 1.0 / (batch.size * len(ro.frames)))


def generate_transition(
    windows: Sequence[TransitionWindow] | TransitionWindow,
    params,
    config: ModelConfig,
    stats: NormStats,
    heightmaps=None,
) -> np.ndarray:
    """Predicted global positions (B, P+1, K, 3) for frames s..T, no teacher forcing."""
    single = isinstance(windows, TransitionWindow)
    wins = [windows] if single else list(windows)
    if config.terrain_aware and heightmaps is None:
        heightmaps = [w.heightmaps[0] for w in wins]
    batch = make_batch(wins, stats, heightmaps)
    vals = params.params if isinstance(params, ParamStore) else params
    ro = rollout(vals, batch, config, stats)
    out = np.transpose(ro.globals_array(), (1, 0, 2, 3))
    return out[0] if single else out


# checkpoints

def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _zip_write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, store: ParamStore, config: ModelConfig, stats: NormStats, meta: Mapping | None = None) -> None:
    """Deterministic zip: header JSON, parameters, AMSGrad slots and statistics."""
    header = {
        "format": "rtn-checkpoint",
        "version": CHECKPOINT_VERSION,
        "model": config.to_dict(),
        "params": list(store.params),
        "step": store.step,
        "meta": dict(meta or {}),
    }
    with zipfile.ZipFile(path, "w") as zf:
        _zip_write(zf, "header.json", json.dumps(header, sort_keys=True, indent=1).encode())
        for name, arr in store.params.items():
            _zip_write(zf, f"params/{name}.npy", _npy_bytes(arr))
            _zip_write(zf, f"slots/m/{name}.npy", _npy_bytes(store.m[name]))
            _zip_write(zf, f"slots/v/{name}.npy", _npy_bytes(store.v[name]))
            _zip_write(zf, f"slots/vmax/{name}.npy", _npy_bytes(store.vmax[name]))
        for name, vec in stats.streams().items():
            _zip_write(zf, f"stats/{name}.npy", _npy_bytes(vec))


def load_checkpoint(path) -> tuple[ParamStore, ModelConfig, NormStats, dict]:
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
        if header.get("format") != "rtn-checkpoint" or header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint")

        def arr(name):
            return np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)

        store = ParamStore()
        for name in header["params"]:
            store.add(name, arr(f"params/{name}.npy"))
            store.m[name] = arr(f"slots/m/{name}.npy")
            store.v[name] = arr(f"slots/v/{name}.npy")
            store.vmax[name] = arr(f"slots/vmax/{name}.npy")
        store.step = header["step"]
        streams = {n[len("stats/"):-4]: arr(n) for n in zf.namelist() if n.startswith("stats/")}
    config = ModelConfig.from_dict(header["model"])
    return store, config, NormStats.from_streams(streams), header["meta"]
