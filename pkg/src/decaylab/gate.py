"""Decay recognition network: gating model updates from similarity maps.

A small recurrent binary classifier scores windows of recent similarity
maps; updates are permitted only when the score clears a conservative
threshold.  The gate sees similarity maps only, never tracker parameters,
so its decisions share no state with the tracker model.

Architecture (fixed):

    input   K maps, each resampled to 32 x 32
    encoder conv 3x3, 8 channels, valid, ReLU
            conv 3x3, 16 channels, valid, ReLU
            max-pool 5x5, stride 5            -> 16 x 5 x 5 = 400 per map
    core    two gated recurrent layers, hidden width 32
    head    fully connected 32 -> 16, ReLU; 16 -> 1; sigmoid

Recurrent cell (frozen; gates stacked in the order z, r, candidate):

    z   = sigmoid(Wz x + Uz h + bz)
    r   = sigmoid(Wr x + Ur h + br)
    hh  = tanh(Wh x + r * (Uh h) + bh)
    h'  = (1 - z) * h + z * hh

Training uses binary cross entropy with SGD + momentum:
    v <- momentum * v + grad;  theta <- theta - lr * v
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from ._rng import Rng
from .errors import DataError, NumericError
from .metrics import frame_iou

MAP_SIZE = 32
_C1, _C2 = 8, 16
_HIDDEN = 32
_FC = 16
_CONV1_OUT = MAP_SIZE - 2  # 30
_CONV2_OUT = _CONV1_OUT - 2  # 28
_POOL = 5
_POOL_OUT = (_CONV2_OUT - _POOL) // _POOL + 1  # 5
_FEAT = _C2 * _POOL_OUT * _POOL_OUT  # 400

PARAM_SHAPES = {
    "conv1_w": (_C1, 1, 3, 3),
    "conv1_b": (_C1,),
    "conv2_w": (_C2, _C1, 3, 3),
    "conv2_b": (_C2,),
    "gru1_wx": (3 * _HIDDEN, _FEAT),
    "gru1_wh": (3 * _HIDDEN, _HIDDEN),
    "gru1_b": (3 * _HIDDEN,),
    "gru2_wx": (3 * _HIDDEN, _HIDDEN),
    "gru2_wh": (3 * _HIDDEN, _HIDDEN),
    "gru2_b": (3 * _HIDDEN,),
    "fc1_w": (_FC, _HIDDEN),
    "fc1_b": (_FC,),
    "fc2_w": (1, _FC),
    "fc2_b": (1,),
}
PARAM_ORDER = tuple(PARAM_SHAPES)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GateWindow:
    """K stacked similarity maps (oldest first), zero-padded before the
    start of the track; ``label`` is 1/0 for training windows, else None."""

    maps: np.ndarray  # (K, 32, 32)
    label: int | None = None

    def __post_init__(self):
        m = np.asarray(self.maps, dtype=np.float64)
        if m.ndim != 3 or m.shape[1:] != (MAP_SIZE, MAP_SIZE):
            raise ValueError(f"maps must be (K, {MAP_SIZE}, {MAP_SIZE}), got {m.shape}")
        object.__setattr__(self, "maps", m)

    @property
    def k(self) -> int:
        return self.maps.shape[0]


@dataclass(frozen=True)
class GateClassifier:
    """All parameters as named float64 arrays (see PARAM_SHAPES)."""

    params: dict

    def __post_init__(self):
        if set(self.params) != set(PARAM_SHAPES):
            raise ValueError("parameter names do not match the architecture")
        for name, shape in PARAM_SHAPES.items():
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.params[name] = arr

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in PARAM_ORDER])

    def with_flat(self, vec: np.ndarray) -> "GateClassifier":
        out = {}
        off = 0
        for n in PARAM_ORDER:
            size = int(np.prod(PARAM_SHAPES[n]))
            out[n] = vec[off:off + size].reshape(PARAM_SHAPES[n]).copy()
            off += size
        if off != vec.size:
            raise ValueError(f"expected {off} values, got {vec.size}")
        return GateClassifier(out)

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(s)) for s in PARAM_SHAPES.values())


def init_classifier(seed: int = 0, scale: float = 1.0) -> GateClassifier:
    """Uniform(-a, a) weights with a = scale / sqrt(fan_in); zero biases."""
    rng = Rng(seed)
    fan_in = {
        "conv1_w": 9,
        "conv2_w": _C1 * 9,
        "gru1_wx": _FEAT,
        "gru1_wh": _HIDDEN,
        "gru2_wx": _HIDDEN,
        "gru2_wh": _HIDDEN,
        "fc1_w": _HIDDEN,
        "fc2_w": _FC,
    }
    params = {}
    for name in PARAM_ORDER:
        shape = PARAM_SHAPES[name]
        n = int(np.prod(shape))
        if name in fan_in:
            a = scale / np.sqrt(fan_in[name])
            params[name] = (rng.uniform_array(n) * 2.0 - 1.0).reshape(shape) * a
        else:
            params[name] = np.zeros(shape)
    return GateClassifier(params)


# ---------------------------------------------------------------------------
# layers

def _conv_forward(x, w, b):
    """Valid 3x3 convolution, channels last; w keeps its (OC, C, 3, 3) shape."""
    return kernels.conv3x3_forward(x, w, b), x


def _conv_backward(da, x, w, x_shape, need_dx=True):
    da = np.ascontiguousarray(da)
    dw, db = kernels.conv3x3_param_grad(da, x)
    dx = kernels.conv3x3_input_grad(da, w, x_shape[1], x_shape[2]) if need_dx else None
    return dx, dw, db


def _pool_forward(x):
    """5x5 max-pool, stride 5, valid (input rows/cols beyond 25 unused)."""
    return kernels.maxpool5_forward(x)


def _pool_backward(dout, idx, x_shape):
    return kernels.maxpool5_backward(dout, idx, x_shape[1], x_shape[2])


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _gru_forward(xs, wx, wh, b):
    """Run the cell over time; xs is (K, B, In).  Returns hs (K, B, H) and
    per-step caches for backprop."""
    K, B, _ = xs.shape
    H = wh.shape[1]
    h = np.zeros((B, H))
    hs = np.empty((K, B, H))
    caches = []
    for t in range(K):
        x = xs[t]
        gx = x @ wx.T + b
        gh = h @ wh.T
        az = gx[:, :H] + gh[:, :H]
        ar = gx[:, H:2 * H] + gh[:, H:2 * H]
        z = _sigmoid(az)
        r = _sigmoid(ar)
        uh = gh[:, 2 * H:]
        hh = np.tanh(gx[:, 2 * H:] + r * uh)
        h_new = (1.0 - z) * h + z * hh
        caches.append((x, h, z, r, hh, uh))
        h = h_new
        hs[t] = h
    return hs, caches


def _gru_backward(dhs, caches, wx, wh):
    """BPTT.  dhs is (K, B, H): gradient arriving at each step's output."""
    K, B, H = dhs.shape
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(3 * H)
    dxs = np.empty((K, B, wx.shape[1]))
    dh_carry = np.zeros((B, H))
    for t in range(K - 1, -1, -1):
        x, h_prev, z, r, hh, uh = caches[t]
        dh = dhs[t] + dh_carry
        dz = dh * (hh - h_prev)
        dhh = dh * z
        dh_prev = dh * (1.0 - z)
        dah = dhh * (1.0 - hh * hh)
        dr = dah * uh
        duh = dah * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dgx = np.concatenate([daz, dar, dah], axis=1)
        dgh = np.concatenate([daz, dar, duh], axis=1)
        dwx += dgx.T @ x
        dwh += dgh.T @ h_prev
        db += dgx.sum(axis=0)
        dxs[t] = dgx @ wx
        dh_prev = dh_prev + dgh @ wh
        dh_carry = dh_prev
    return dxs, dwx, dwh, db


def _forward(c: GateClassifier, X: np.ndarray):
    """X is (B, K, 32, 32).  Returns (scores, logits, cache)."""
    p = c.params
    B, K = X.shape[:2]
    x0 = X.reshape(B * K, MAP_SIZE, MAP_SIZE, 1)
    a1, cols1 = _conv_forward(x0, p["conv1_w"], p["conv1_b"])
    r1 = np.maximum(a1, 0.0)
    a2, cols2 = _conv_forward(r1, p["conv2_w"], p["conv2_b"])
    r2 = np.maximum(a2, 0.0)
    pooled, pidx = _pool_forward(r2)
    feats = pooled.reshape(B, K, _FEAT).transpose(1, 0, 2)  # (K, B, F)
    hs1, cache1 = _gru_forward(feats, p["gru1_wx"], p["gru1_wh"], p["gru1_b"])
    hs2, cache2 = _gru_forward(hs1, p["gru2_wx"], p["gru2_wh"], p["gru2_b"])
    h_last = hs2[-1]
    fa1 = h_last @ p["fc1_w"].T + p["fc1_b"]
    fr1 = np.maximum(fa1, 0.0)
    logits = (fr1 @ p["fc2_w"].T + p["fc2_b"])[:, 0]
    scores = _sigmoid(logits)
    cache = (x0, a1, r1, cols1, a2, r2, cols2, pidx, cache1, cache2, hs1, h_last, fa1, fr1)
    return scores, logits, cache


def _backward(c: GateClassifier, X: np.ndarray, cache, dlogits: np.ndarray) -> dict:
    p = c.params
    B, K = X.shape[:2]
    (x0, a1, r1, cols1, a2, r2, cols2, pidx, cache1, cache2, hs1, h_last, fa1, fr1) = cache

    grads = {}
    dfr1 = dlogits[:, None] @ p["fc2_w"]
    grads["fc2_w"] = dlogits[None, :] @ fr1
    grads["fc2_b"] = np.array([dlogits.sum()])
    dfa1 = dfr1 * (fa1 > 0)
    grads["fc1_w"] = dfa1.T @ h_last
    grads["fc1_b"] = dfa1.sum(axis=0)
    dh_last = dfa1 @ p["fc1_w"]

    dhs2 = np.zeros((K, B, _HIDDEN))
    dhs2[-1] = dh_last
    dhs1, grads["gru2_wx"], grads["gru2_wh"], grads["gru2_b"] = _gru_backward(
        dhs2, cache2, p["gru2_wx"], p["gru2_wh"]
    )
    dfeats, grads["gru1_wx"], grads["gru1_wh"], grads["gru1_b"] = _gru_backward(
        dhs1, cache1, p["gru1_wx"], p["gru1_wh"]
    )
    dpooled = dfeats.transpose(1, 0, 2).reshape(B * K, _POOL_OUT, _POOL_OUT, _C2)
    dr2 = _pool_backward(dpooled, pidx, r2.shape)
    da2 = dr2 * (a2 > 0)
    dr1, grads["conv2_w"], grads["conv2_b"] = _conv_backward(da2, cols2, p["conv2_w"], r1.shape)
    da1 = dr1 * (a1 > 0)
    _, grads["conv1_w"], grads["conv1_b"] = _conv_backward(
        da1, cols1, p["conv1_w"], x0.shape, need_dx=False
    )
    return grads


# ---------------------------------------------------------------------------
# public operations

def resample_map(values: np.ndarray, size: int = MAP_SIZE) -> np.ndarray:
    from . import kernels

    values = np.asarray(values, dtype=np.float64)
    if values.shape == (size, size):
        return values
    h, w = values.shape
    return kernels.bilinear_sample_box(values, 0.0, 0.0, float(w), float(h), size, size)


def map_features(c: GateClassifier, m) -> np.ndarray:
    """Encode one similarity map (any size) to its flattened feature vector."""
    values = m.values if hasattr(m, "values") else m
    x = resample_map(values)[None, :, :, None]
    p = c.params
    a1, _ = _conv_forward(x, p["conv1_w"], p["conv1_b"])
    a2, _ = _conv_forward(np.maximum(a1, 0.0), p["conv2_w"], p["conv2_b"])
    pooled, _ = _pool_forward(np.maximum(a2, 0.0))
    return pooled.reshape(-1)


def conv_preactivations(c: GateClassifier, m) -> tuple[np.ndarray, np.ndarray]:
    """Pre-activation tensors of both conv layers (for linearity checks)."""
    values = m.values if hasattr(m, "values") else m
    x = resample_map(values)[None, :, :, None]
    p = c.params
    a1, _ = _conv_forward(x, p["conv1_w"], p["conv1_b"])
    a2, _ = _conv_forward(np.maximum(a1, 0.0), p["conv2_w"], p["conv2_b"])
    return a1[0], a2[0]


def gate_forward(c: GateClassifier, w: GateWindow) -> float:
    """Score one window; strictly inside (0, 1)."""
    scores, _, _ = _forward(c, w.maps[None])
    return float(np.clip(scores[0], 1e-12, 1.0 - 1e-12))


def batch_scores(c: GateClassifier, windows: list[GateWindow]) -> np.ndarray:
    X = np.stack([w.maps for w in windows])
    scores, _, _ = _forward(c, X)
    return np.clip(scores, 1e-12, 1.0 - 1e-12)


def bce_loss(c: GateClassifier, windows: list[GateWindow]) -> float:
    X = np.stack([w.maps for w in windows])
    y = np.array([float(w.label) for w in windows])
    _, logits, _ = _forward(c, X)
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


def gate_train_step(
    c: GateClassifier,
    batch: list[GateWindow],
    lr: float,
    momentum: float = 0.9,
    velocity: np.ndarray | None = None,
):
    """One SGD-with-momentum step on mean BCE over the batch.

    Returns (classifier, loss, velocity); pass the velocity back in to chain
    steps.  Gradients flow through the full history window (BPTT).
    """
    if lr < 0:
        raise ValueError("lr must be >= 0")
    if any(w.label is None for w in batch):
        raise ValueError("all windows in a training batch need labels")
    ks = {w.k for w in batch}
    if len(ks) != 1:
        raise ValueError(f"mixed window lengths in batch: {sorted(ks)}")

    X = np.stack([w.maps for w in batch])
    y = np.array([float(w.label) for w in batch])
    # a diverged model is reported through NumericError, not float warnings
    with np.errstate(all="ignore"):
        _, logits, cache = _forward(c, X)
        loss = float(np.mean(np.logaddexp(0.0, logits) - y * logits))
    if not np.isfinite(loss):
        raise NumericError("non-finite training loss; step aborted")
    dlogits = (_sigmoid(logits) - y) / len(batch)
    grads = _backward(c, X, cache, dlogits)

    gvec = np.concatenate([grads[n].ravel() for n in PARAM_ORDER])
    v = np.zeros_like(gvec) if velocity is None else velocity
    v = momentum * v + gvec
    new = c.with_flat(c.flat() - lr * v)
    return new, loss, v


def gradient(c: GateClassifier, batch: list[GateWindow]) -> np.ndarray:
    """Flat BCE gradient over a labeled batch (used by gradient checks)."""
    X = np.stack([w.maps for w in batch])
    y = np.array([float(w.label) for w in batch])
    _, logits, cache = _forward(c, X)
    dlogits = (_sigmoid(logits) - y) / len(batch)
    grads = _backward(c, X, cache, dlogits)
    return np.concatenate([grads[n].ravel() for n in PARAM_ORDER])


def train_gate(
    c: GateClassifier,
    windows: list[GateWindow],
    steps: int,
    batch_size: int = 32,
    lr: float = 0.01,
    momentum: float = 0.9,
    seed: int = 0,
):
    """Seeded mini-batch training loop; returns (classifier, loss history)."""
    if not windows:
        raise ValueError("no training windows")
    rng = Rng(seed)
    order = rng.shuffled(len(windows))
    pos = 0
    losses = []
    velocity = None
    for _ in range(steps):
        if pos + batch_size > len(windows):
            order = rng.shuffled(len(windows))
            pos = 0
        take = min(batch_size, len(windows))
        batch = [windows[i] for i in order[pos:pos + take]]
        pos += take
        c, loss, velocity = gate_train_step(c, batch, lr, momentum, velocity)
        losses.append(loss)
    return c, losses


def build_training_set(tracks, history: int) -> list[GateWindow]:
    """Label windows of per-frame similarity maps by prediction quality.

    ``tracks`` are runs that retained their similarity maps (see
    trackers.run_tracker(..., keep_maps=True)).  A window ending at frame t
    is positive when frame_iou(prediction, truth) > 0.5, negative below, and
    dropped at exactly 0.5; windows before frame ``history`` are zero-padded
    at the front.  The init frame itself contributes no window.
    """
    if history < 1:
        raise ValueError("history must be >= 1")
    out: list[GateWindow] = []
    for track in tracks:
        if getattr(track, "maps32", None) is None:
            raise ValueError("track did not retain similarity maps")
        maps = track.maps32
        preds = track.boxes
        truths = track.truth
        if truths is None or len(truths) != len(preds):
            raise ValueError("track lacks aligned ground truth")
        for t in range(1, len(preds)):
            v = frame_iou(preds[t], truths[t])
            if v == 0.5:
                continue
            lo = max(0, t - history + 1)
            stack = [resample_map(m) for m in maps[lo:t + 1]]
            while len(stack) < history:
                stack.insert(0, np.zeros((MAP_SIZE, MAP_SIZE)))
            out.append(GateWindow(np.stack(stack), int(v > 0.5)))
    return out


def should_update(score: float, threshold: float = 0.9) -> bool:
    """The binary update gate: fire only strictly above the threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return score > threshold


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(c: GateClassifier, path) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "arch": {name: list(shape) for name, shape in PARAM_SHAPES.items()},
        "params": {name: c.params[name].ravel().tolist() for name in PARAM_ORDER},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def load_checkpoint(path) -> GateClassifier:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version: {payload.get('format_version')}")
    arch = payload.get("arch", {})
    params = {}
    for name, shape in PARAM_SHAPES.items():
        if tuple(arch.get(name, ())) != shape:
            raise DataError(f"checkpoint arch mismatch for {name}: "
                            f"{arch.get(name)} != {list(shape)}")
        vals = np.asarray(payload["params"][name], dtype=np.float64)
        if vals.size != int(np.prod(shape)):
            raise DataError(f"checkpoint size mismatch for {name}")
        params[name] = vals.reshape(shape)
    return GateClassifier(params)
