"""Three trackers over grayscale frames.

- A template-matching tracker: a fixed normalized-cross-correlation exemplar
  captured in the first frame, local search at five fine scales, and a
  three-stage hierarchical global search (coarse full-frame scan, multi-scale
  probing of the best locations, fine rescoring at full resolution).  With
  updates disabled its model never changes, so its cumulative decay is zero.
- A correlation-filter tracker in the frequency domain, updated on every
  frame with a running average: the heavy-updating regime.
- Hybrid drivers combining local search with periodic global search and
  configurable template-update policies (never / always / similarity
  threshold / decay-gate), used by the benchmark roster.

Search grids and input resolutions are capped, never upsampled beyond the
native frame resolution; similarity scores are NCC values in [-1, 1].
Argmax ties break to the lexicographically smallest (row, column,
scale-index) so replays are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import kernels
from .errors import ConfigError
from .geom import Box, Frame, clip_box, extract_patch
from .synthvid import Sequence

SCALES_FINE = (0.9509, 0.9751, 1.0, 1.0255, 1.0517)
SCALES_GLOBAL = tuple(float(2.0 ** ((k - 5) * 0.08)) for k in range(11))

TRACKER_KINDS = (
    "siamese-no-update",
    "siamese-local-only",
    "siamese-global-only",
    "hybrid-blind-update",
    "hybrid-sim-threshold-update",
    "hybrid-gated",
    "mosse",
)


@dataclass(frozen=True)
class SimilarityMap:
    """Grid of matching scores with the geometry to map cells back to frame
    coordinates: placement (r, c) has its top-left corner at
    origin + (c * stride_x, r * stride_y)."""

    values: np.ndarray
    origin: tuple[float, float]
    stride: tuple[float, float]  # (x, y) pixels per cell
    scale: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).view()
        v.setflags(write=False)  # read-only view; the caller's array is untouched
        object.__setattr__(self, "values", v)

    @property
    def max_value(self) -> float:
        return float(self.values.max())


@dataclass(frozen=True)
class Prediction:
    box: Box
    score: float
    search_kind: str  # "local" | "global" | "init"
    map_summary: Optional[SimilarityMap] = None


@dataclass(frozen=True)
class SiameseConfig:
    template_size: int = 64  # stored exemplar and fine-stage resolution cap
    coarse_size: int = 32  # coarse-stage resolution cap
    fine_scales: tuple = SCALES_FINE
    global_scales: tuple = SCALES_GLOBAL
    global_T: Optional[int] = 15  # global search every T frames; None = never
    top_n: int = 10
    search_radius_factor: float = 3.0  # local window = factor x box size
    stage2_window_factor: float = 2.0
    stage3_window_factor: float = 2.0


@dataclass
class SiameseState:
    template: np.ndarray  # normalized (zero mean, unit norm) exemplar
    last_box: Box
    frame_index: int
    config: SiameseConfig
    # native exemplar size; global search probes scales around it, so local
    # scale drift during lost stretches cannot poison re-detection
    init_w: float = 0.0
    init_h: float = 0.0


def _normalize_patch(p: np.ndarray) -> np.ndarray:
    z = p - p.mean()
    n = float(np.linalg.norm(z))
    if n < 1e-12:
        raise ValueError("zero-variance patch cannot be normalized")
    return z / n


def siamese_init(f: Frame, b: Box, cfg: SiameseConfig | None = None) -> SiameseState:
    """Capture the first-frame exemplar; the box must lie inside the frame."""
    cfg = cfg or SiameseConfig()
    if not b.present:
        raise ValueError("cannot initialize from an absent box")
    if b.w < 3 or b.h < 3:
        raise ValueError("initial box is degenerate")
    inside = clip_box(b, f.width, f.height)
    if not inside.present or inside.area < 0.999 * b.area:
        raise ValueError("initial box must lie inside the frame")
    patch = extract_patch(f, b, cfg.template_size, cfg.template_size).pixels
    template = _normalize_patch(patch)
    template.setflags(write=False)
    return SiameseState(template, b, 1, cfg, init_w=b.w, init_h=b.h)


def ncc_similarity(template: np.ndarray, f: Frame, region: Box, scale: float = 1.0) -> SimilarityMap:
    """NCC of the scaled template against every placement in the region.

    The template is resampled by ``scale`` and slid at one-pixel stride over
    the region clipped to the frame; zero-variance windows score 0.
    """
    if not region.present:
        raise ValueError("region must be present")
    th, tw = template.shape
    ts_h = max(2, int(round(th * scale)))
    ts_w = max(2, int(round(tw * scale)))
    scaled = kernels.resize(template, ts_h, ts_w) if (ts_h, ts_w) != (th, tw) else np.asarray(template, float)

    x1 = max(int(math.floor(region.x)), 0)
    y1 = max(int(math.floor(region.y)), 0)
    x2 = min(int(math.ceil(region.x2)), f.width)
    y2 = min(int(math.ceil(region.y2)), f.height)
    if x2 - x1 < ts_w or y2 - y1 < ts_h:
        raise ValueError(
            f"region {x2 - x1}x{y2 - y1} smaller than scaled template {ts_w}x{ts_h}"
        )
    values = kernels.ncc_response(f.pixels[y1:y2, x1:x2], scaled)
    return SimilarityMap(values, (float(x1), float(y1)), (1.0, 1.0), scale)


def _argmax_rc(values: np.ndarray) -> tuple[int, int]:
    flat = int(np.argmax(values))  # row-major, so first max = smallest (r, c)
    return flat // values.shape[1], flat % values.shape[1]


def _quad_refine(values: np.ndarray, r: int, c: int) -> tuple[float, float]:
    """Sub-cell peak offset by 1-D quadratic fits; each in [-0.5, 0.5]."""

    def axis_offset(vm: float, v0: float, vp: float) -> float:
        denom = vm - 2.0 * v0 + vp
        if denom >= -1e-12:  # flat or non-concave
            return 0.0
        off = 0.5 * (vm - vp) / denom
        return min(max(off, -0.5), 0.5)

    h, w = values.shape
    dr = axis_offset(values[r - 1, c], values[r, c], values[r + 1, c]) if 0 < r < h - 1 else 0.0
    dc = axis_offset(values[r, c - 1], values[r, c], values[r, c + 1]) if 0 < c < w - 1 else 0.0
    return dr, dc


@dataclass
class _Candidate:
    score: float
    key: tuple[int, int, int]  # (row, col, scale_index) tie-break key
    box: Box
    map: SimilarityMap


def _scan_scales(
    pixels: np.ndarray,
    template: np.ndarray,
    center: tuple[float, float],
    base_w: float,
    base_h: float,
    scales,
    px_cap: int,
    window_factor: float,
) -> Optional[_Candidate]:
    """Multi-scale NCC scan of a window around ``center``.

    Per scale the window is resampled so the candidate box maps to at most
    ``px_cap`` pixels (never upsampled beyond native resolution) and the
    stored template is resized to the candidate size on that grid.
    """
    H, W = pixels.shape
    best: Optional[_Candidate] = None
    for si, s in enumerate(scales):
        cand_w = base_w * s
        cand_h = base_h * s
        zx = min(1.0, px_cap / cand_w)
        zy = min(1.0, px_cap / cand_h)
        t_w = max(3, int(round(cand_w * zx)))
        t_h = max(3, int(round(cand_h * zy)))
        win_w = cand_w * window_factor
        win_h = cand_h * window_factor
        wx = center[0] - win_w / 2.0
        wy = center[1] - win_h / 2.0
        out_w = max(t_w, int(round(win_w * zx)))
        out_h = max(t_h, int(round(win_h * zy)))
        search = kernels.bilinear_sample_box(pixels, wx, wy, win_w, win_h, out_w, out_h)
        scaled_t = kernels.resize(template, t_h, t_w)
        values = kernels.ncc_response(search, scaled_t)
        stride_x = win_w / out_w
        stride_y = win_h / out_h
        smap = SimilarityMap(values, (wx, wy), (stride_x, stride_y), s)
        r, c = _argmax_rc(values)
        score = float(values[r, c])
        if best is None or score > best.score or (score == best.score and (r, c, si) < best.key):
            dr, dc = _quad_refine(values, r, c)
            box = Box(
                wx + (c + dc) * stride_x,
                wy + (r + dr) * stride_y,
                t_w * stride_x,
                t_h * stride_y,
            )
            best = _Candidate(score, (r, c, si), box, smap)
    return best


def local_search(s: SiameseState, f: Frame) -> Prediction:
    """Search a window of search_radius_factor x box size around last_box
    at the five fine scales; argmax over positions and scales."""
    cfg = s.config
    b = s.last_box
    win_w = b.w * cfg.search_radius_factor
    win_h = b.h * cfg.search_radius_factor
    wx, wy = b.cx - win_w / 2.0, b.cy - win_h / 2.0
    if wx + win_w <= 0 or wy + win_h <= 0 or wx >= f.width or wy >= f.height:
        return Prediction(Box.absent(), float("-inf"), "local", None)
    best = _scan_scales(
        f.pixels, s.template, (b.cx, b.cy), b.w, b.h,
        cfg.fine_scales, cfg.template_size, cfg.search_radius_factor,
    )
    return Prediction(best.box, best.score, "local", best.map)


def top_local_maxima(values: np.ndarray, n: int, radius: int) -> list[tuple[int, int]]:
    """Up to n local maxima by greedy non-maximum suppression.

    Cells are visited in descending value (row-major among ties); each pick
    suppresses a Chebyshev ball of the given radius around it.
    """
    h, w = values.shape
    order = np.argsort(-values.ravel(), kind="stable")
    suppressed = np.zeros((h, w), dtype=bool)
    picks: list[tuple[int, int]] = []
    for flat in order:
        r, c = int(flat) // w, int(flat) % w
        if suppressed[r, c]:
            continue
        picks.append((r, c))
        if len(picks) == n:
            break
        r0, r1 = max(r - radius, 0), min(r + radius + 1, h)
        c0, c1 = max(c - radius, 0), min(c + radius + 1, w)
        suppressed[r0:r1, c0:c1] = True
    return picks


def global_stage1(s: SiameseState, f: Frame) -> tuple[SimilarityMap, list[tuple[float, float]]]:
    """Coarse full-frame scan: the whole frame is resampled so the current
    box maps to at most coarse_size pixels, and the top-N response maxima
    become candidate centres (NMS radius: half the template width)."""
    cfg = s.config
    bw, bh = s.init_w, s.init_h
    zx = min(1.0, cfg.coarse_size / bw)
    zy = min(1.0, cfg.coarse_size / bh)
    t_w = max(3, int(round(bw * zx)))
    t_h = max(3, int(round(bh * zy)))
    out_w = max(1, int(round(f.width * zx)))
    out_h = max(1, int(round(f.height * zy)))
    if out_w < t_w or out_h < t_h:
        raise ValueError("frame smaller than the coarse template")
    search = kernels.resize(f.pixels, out_h, out_w)
    templ = kernels.resize(s.template, t_h, t_w)
    values = kernels.ncc_response(search, templ)
    stride_x = f.width / out_w
    stride_y = f.height / out_h
    smap = SimilarityMap(values, (0.0, 0.0), (stride_x, stride_y), 1.0)
    picks = top_local_maxima(values, cfg.top_n, max(1, t_w // 2))
    centres = [
        ((c + t_w / 2.0) * stride_x, (r + t_h / 2.0) * stride_y) for r, c in picks
    ]
    return smap, centres


def global_search(s: SiameseState, f: Frame) -> Prediction:
    """Three-stage hierarchical search over the whole frame.

    Stage 1 scans the frame coarsely and keeps the top-N candidate centres.
    Stage 2 probes the global scale set around each candidate (coarse
    resolution) and keeps the best scale per candidate.  Stage 3 rescoring
    runs the fine scale set at full resolution around each survivor; the
    highest similarity wins.
    """
    cfg = s.config
    _, centres = global_stage1(s, f)

    best: Optional[_Candidate] = None
    for centre in centres:  # stage-1 rank order; ties keep the earlier rank
        c2 = _scan_scales(
            f.pixels, s.template, centre, s.init_w, s.init_h,
            cfg.global_scales, cfg.coarse_size, cfg.stage2_window_factor,
        )
        if c2 is None:
            continue
        c3 = _scan_scales(
            f.pixels, s.template, (c2.box.cx, c2.box.cy), c2.box.w, c2.box.h,
            cfg.fine_scales, cfg.template_size, cfg.stage3_window_factor,
        )
        if c3 is None:
            continue
        if best is None or c3.score > best.score:
            best = c3
    return Prediction(best.box, best.score, "global", best.map)


def _sanitize_box(b: Box, width: int, height: int) -> Box:
    """Clamp the box centre into the frame so the next window overlaps it."""
    cx = min(max(b.cx, 0.0), float(width))
    cy = min(max(b.cy, 0.0), float(height))
    return Box(cx - b.w / 2.0, cy - b.h / 2.0, b.w, b.h)


def hybrid_step(s: SiameseState, f: Frame) -> Prediction:
    """Advance one frame: global search on frame indices divisible by T
    (counted from the init frame as index 1), local search otherwise."""
    s.frame_index += 1
    T = s.config.global_T
    if T is not None and s.frame_index % T == 0:
        p = global_search(s, f)
    else:
        p = local_search(s, f)
    if p.box.present:
        s.last_box = _sanitize_box(p.box, f.width, f.height)
    return p


def template_update(
    s: SiameseState, f: Frame, p: Prediction, alpha: float, permitted: bool
) -> SiameseState:
    """Blend the exemplar with the patch under the prediction when permitted.

    template <- normalize((1 - alpha) * template + alpha * normalize(patch));
    when not permitted the state is returned unchanged.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if not permitted:
        return s
    if not p.box.present:
        raise ValueError("cannot update from an absent prediction")
    size = s.config.template_size
    patch = extract_patch(f, p.box, size, size).pixels
    candidate = _normalize_patch(patch)
    blended = _normalize_patch((1.0 - alpha) * s.template + alpha * candidate)
    blended.setflags(write=False)
    return replace(s, template=blended)


# ---------------------------------------------------------------------------
# correlation-filter tracker (frequency domain, per-frame updates)

@dataclass(frozen=True)
class MosseConfig:
    window_factor: float = 2.0  # training/search window = factor x box size
    sigma_factor: float = 0.1  # response Gaussian sigma = factor * box width
    lam: float = 1e-2  # regularizer in the filter denominator
    beta: float = 0.125  # running-average update rate


@dataclass
class MosseState:
    num: np.ndarray  # frequency-domain accumulators
    den: np.ndarray
    gauss_freq: np.ndarray
    hann: np.ndarray
    win_h: int
    win_w: int
    box_w: float
    box_h: float
    cx: float
    cy: float
    config: MosseConfig
    frame_index: int = 1


def _int_window(pixels: np.ndarray, cx: float, cy: float, win_h: int, win_w: int) -> np.ndarray:
    """Integer-aligned window around a centre, zero-padded at frame borders."""
    H, W = pixels.shape
    x0 = int(round(cx)) - win_w // 2
    y0 = int(round(cy)) - win_h // 2
    out = np.zeros((win_h, win_w))
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + win_w, W), min(y0 + win_h, H)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = pixels[sy0:sy1, sx0:sx1]
    return out


def _preprocess(patch: np.ndarray, hann: np.ndarray) -> np.ndarray:
    z = (patch - patch.mean()) / (patch.std() + 1e-5)
    return z * hann


def mosse_init(f: Frame, b: Box, cfg: MosseConfig | None = None) -> MosseState:
    """Train the filter on the first-frame window with a Gaussian target."""
    cfg = cfg or MosseConfig()
    if not b.present:
        raise ValueError("cannot initialize from an absent box")
    win_w = max(8, int(round(b.w * cfg.window_factor)))
    win_h = max(8, int(round(b.h * cfg.window_factor)))
    patch = _int_window(f.pixels, b.cx, b.cy, win_h, win_w)
    if patch.std() < 1e-9:
        raise ValueError("zero-energy window cannot train a filter")
    hann = np.outer(np.hanning(win_h), np.hanning(win_w))
    sigma = max(cfg.sigma_factor * b.w, 0.5)
    ys = np.arange(win_h) - win_h // 2
    xs = np.arange(win_w) - win_w // 2
    g = np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) / (2.0 * sigma * sigma))
    G = np.fft.fft2(g)
    F = np.fft.fft2(_preprocess(patch, hann))
    return MosseState(
        num=G * np.conj(F),
        den=F * np.conj(F),
        gauss_freq=G,
        hann=hann,
        win_h=win_h,
        win_w=win_w,
        box_w=b.w,
        box_h=b.h,
        cx=b.cx,
        cy=b.cy,
        config=cfg,
    )


def mosse_detect(s: MosseState, f: Frame) -> np.ndarray:
    """Real response of the current filter over the window at last position."""
    patch = _int_window(f.pixels, s.cx, s.cy, s.win_h, s.win_w)
    H = s.num / (s.den + s.config.lam)
    return np.real(np.fft.ifft2(H * np.fft.fft2(_preprocess(patch, s.hann))))


def mosse_step(s: MosseState, f: Frame) -> Prediction:
    """Detect via frequency-domain correlation, move to the peak, then update
    the accumulators from the new window (unconditional per-frame update)."""
    s.frame_index += 1
    resp = mosse_detect(s, f)
    r, c = _argmax_rc(resp)
    score = float(resp[r, c])
    # peak index relative to the window centre is the displacement; the
    # response is circular, so neighbours for refinement wrap around
    rol = np.roll(np.roll(resp, 1 - r, axis=0), 1 - c, axis=1)
    dr_f, dc_f = _quad_refine(rol, 1, 1)
    dy = (r - s.win_h // 2) + dr_f
    dx = (c - s.win_w // 2) + dc_f
    s.cx = min(max(s.cx + dx, 0.0), float(f.width))
    s.cy = min(max(s.cy + dy, 0.0), float(f.height))

    beta = s.config.beta
    patch = _int_window(f.pixels, s.cx, s.cy, s.win_h, s.win_w)
    F = np.fft.fft2(_preprocess(patch, s.hann))
    s.num = (1.0 - beta) * s.num + beta * (s.gauss_freq * np.conj(F))
    s.den = (1.0 - beta) * s.den + beta * (F * np.conj(F))

    box = Box(s.cx - s.box_w / 2.0, s.cy - s.box_h / 2.0, s.box_w, s.box_h)
    x0 = float(int(round(s.cx)) - s.win_w // 2)
    y0 = float(int(round(s.cy)) - s.win_h // 2)
    smap = SimilarityMap(resp, (x0, y0), (1.0, 1.0), 1.0)
    return Prediction(box, score, "local", smap)


# ---------------------------------------------------------------------------
# sequence drivers

def resize_map(values: np.ndarray, size: int = 32) -> np.ndarray:
    """Resample a similarity map to a fixed size x size grid."""
    h, w = values.shape
    if (h, w) == (size, size):
        return np.asarray(values, dtype=np.float64)
    return kernels.bilinear_sample_box(values, 0.0, 0.0, float(w), float(h), size, size)


@dataclass
class TrackRun:
    """Output of running one tracker over one sequence."""

    boxes: list[Box]
    scores: list[float]
    kinds: list[str]
    truth: list[Box]
    tags: frozenset[str]
    repetition_boundaries: list[int]
    maps32: list[np.ndarray] | None = None

    def result(self):
        from .metrics import TrackResult

        return TrackResult(
            pred=self.boxes,
            truth=self.truth,
            tags=self.tags,
            repetition_boundaries=self.repetition_boundaries,
        )


def run_tracker(
    kind: str,
    seq: Sequence,
    siamese_config: SiameseConfig | None = None,
    mosse_config: MosseConfig | None = None,
    alpha: float = 0.05,
    sim_threshold: float = 0.5,
    gate=None,
    gate_threshold: float = 0.9,
    gate_history: int = 8,
    gate_update_global_only: bool = True,
    keep_maps: bool = False,
) -> TrackRun:
    """Run a roster tracker over a sequence initialized from frame 1 truth."""
    if kind not in TRACKER_KINDS:
        raise ConfigError(f"unknown tracker kind: {kind!r} (choose from {TRACKER_KINDS})")
    if not seq.truth[0].present:
        raise ConfigError("first frame must have a present ground-truth box")
    if kind == "hybrid-gated" and gate is None:
        raise ConfigError("hybrid-gated requires a trained gate classifier")

    init_box = seq.truth[0]
    boxes = [init_box]
    scores = [1.0]
    kinds = ["init"]
    maps: list[np.ndarray] | None = [np.zeros((32, 32))] if (keep_maps or kind == "hybrid-gated") else None

    if kind == "mosse":
        st = mosse_init(seq.frames[0], init_box, mosse_config)
        for i in range(1, len(seq)):
            p = mosse_step(st, seq.frames[i])
            boxes.append(p.box)
            scores.append(p.score)
            kinds.append(p.search_kind)
            if maps is not None:
                maps.append(resize_map(p.map_summary.values))
        return TrackRun(boxes, scores, kinds, list(seq.truth), seq.tags,
                        list(seq.repetition_boundaries), maps if keep_maps else None)

    cfg = siamese_config or SiameseConfig()
    if kind == "siamese-local-only":
        cfg = replace(cfg, global_T=None)
    elif kind == "siamese-global-only":
        cfg = replace(cfg, global_T=1)
    st = siamese_init(seq.frames[0], init_box, cfg)

    from .gate import GateWindow, gate_forward, should_update

    for i in range(1, len(seq)):
        frame = seq.frames[i]
        p = hybrid_step(st, frame)
        boxes.append(p.box)
        scores.append(p.score)
        kinds.append(p.search_kind)
        if maps is not None:
            maps.append(
                resize_map(p.map_summary.values) if p.map_summary is not None else np.zeros((32, 32))
            )

        if not p.box.present:
            continue
        if kind == "hybrid-blind-update":
            permitted = True
        elif kind == "hybrid-sim-threshold-update":
            permitted = p.score > sim_threshold
        elif kind == "hybrid-gated":
            if gate_update_global_only and p.search_kind != "global":
                permitted = False  # update forbidden; the gate need not run
            else:
                window = np.stack(maps[-gate_history:])
                if window.shape[0] < gate_history:
                    pad = np.zeros((gate_history - window.shape[0], 32, 32))
                    window = np.concatenate([pad, window])
                g_score = gate_forward(gate, GateWindow(window))
                permitted = should_update(g_score, gate_threshold)
        else:
            permitted = False
        if permitted:
            patch = extract_patch(frame, p.box, cfg.template_size, cfg.template_size)
            if patch.pixels.std() > 1e-9:
                st = template_update(st, frame, p, alpha, True)

    return TrackRun(boxes, scores, kinds, list(seq.truth), seq.tags,
                    list(seq.repetition_boundaries), maps if keep_maps else None)
