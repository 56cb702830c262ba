"""Deterministic synthetic challenge videos with exact ground truth.

A textured target moves over a textured background; timed challenge events
(occlusion, out-of-view, illumination gain, scale ramps, blur, fast-motion
bursts, deformation, clutter, low resolution, texture spin) alter the frames
in measurable ways.  Generation is a pure function of the config: identical
config and seed produce bit-identical sequences.

Event intervals are 1-based inclusive frame indices in [1, T].

On disk a sequence is a directory:

    frames/%06d.pgm    8-bit binary (P5) grayscale, one file per frame
    annotations.csv    header + one row per frame: frame,x,y,w,h,present
    meta.json          width, height, seed, tags[], repetition_boundaries[]

Frames are quantised to the 8-bit grid (k/255) as the final generation step
so the round trip through disk is bit-exact.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import Rng, derive
from .errors import ConfigError, DataError
from .geom import Box, Frame

CHALLENGE_TAGS = ("IV", "SV", "OCC", "DEF", "MB", "FM", "IPR_proxy", "OV", "BC", "LR")


# ---------------------------------------------------------------------------
# challenge events

@dataclass(frozen=True)
class Occlusion:
    """Opaque textured rectangle drawn over the target during [start, end].

    With ``occluder=None`` the rectangle follows the target centre and covers
    the ``cover`` fraction of its area; an explicit box is drawn as given.
    """

    start: int
    end: int
    occluder: Box | None = None
    cover: float = 0.7

    tag = "OCC"


@dataclass(frozen=True)
class OutOfView:
    """Target fully leaves the frame during [start, end] and re-enters at a
    seeded uniform location afterwards."""

    start: int
    end: int

    tag = "OV"


@dataclass(frozen=True)
class GainRamp:
    """Frame-wide multiplicative intensity gain ramping gain_min -> gain_max."""

    start: int
    end: int
    gain_min: float = 0.5
    gain_max: float = 1.0

    tag = "IV"


@dataclass(frozen=True)
class ScaleRamp:
    """Target size ramps smoothly from x1 to x``factor`` across the interval
    and holds afterwards."""

    start: int
    end: int
    factor: float = 1.5

    tag = "SV"


@dataclass(frozen=True)
class Blur:
    """Box blur of the whole frame with the given radius during the interval."""

    start: int
    end: int
    radius: int = 2

    tag = "MB"


@dataclass(frozen=True)
class FastMotion:
    """Per-frame displacement boosted to ``speed`` px/frame during the burst."""

    start: int
    end: int
    speed: float = 30.0

    tag = "FM"


@dataclass(frozen=True)
class Deformation:
    """Sinusoidal warp of the target texture, amplitude in target pixels."""

    start: int
    end: int
    amplitude: float = 2.0

    tag = "DEF"


@dataclass(frozen=True)
class Clutter:
    """Video-wide distractor patches drawn from the target texture family."""

    count: int = 4

    tag = "BC"


@dataclass(frozen=True)
class LowRes:
    """Downsample-then-upsample of the whole frame by an integer factor."""

    start: int
    end: int
    factor: int = 3

    tag = "LR"


@dataclass(frozen=True)
class TextureSpin:
    """In-plane rotation proxy: the target texture spins up to ``degrees``."""

    start: int
    end: int
    degrees: float = 45.0

    tag = "IPR_proxy"


_EVENT_KINDS = {
    "occlusion": Occlusion,
    "out_of_view": OutOfView,
    "gain_ramp": GainRamp,
    "scale_ramp": ScaleRamp,
    "blur": Blur,
    "fast_motion": FastMotion,
    "deformation": Deformation,
    "clutter": Clutter,
    "low_res": LowRes,
    "texture_spin": TextureSpin,
}
_KIND_BY_TYPE = {cls: kind for kind, cls in _EVENT_KINDS.items()}


@dataclass(frozen=True)
class SequenceConfig:
    width: int = 96
    height: int = 96
    length: int = 60
    seed: int = 0
    target_size: float = 16.0
    velocity: float = 1.0
    jitter_sd: float = 0.0
    start_center: tuple[float, float] | None = None
    events: tuple = ()

    def to_dict(self) -> dict:
        evs = []
        for ev in self.events:
            d = {"kind": _KIND_BY_TYPE[type(ev)]}
            for k, v in vars(ev).items():
                if isinstance(v, Box):
                    v = [v.x, v.y, v.w, v.h]
                d[k] = v
            evs.append(d)
        return {
            "width": self.width,
            "height": self.height,
            "length": self.length,
            "seed": self.seed,
            "target_size": self.target_size,
            "velocity": self.velocity,
            "jitter_sd": self.jitter_sd,
            "start_center": list(self.start_center) if self.start_center else None,
            "events": evs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceConfig":
        evs = []
        for ed in d.get("events", ()):
            ed = dict(ed)
            kind = ed.pop("kind", None)
            if kind not in _EVENT_KINDS:
                raise ConfigError(f"unknown event kind: {kind!r}")
            if kind == "occlusion" and ed.get("occluder") is not None:
                ed["occluder"] = Box(*ed["occluder"])
            try:
                evs.append(_EVENT_KINDS[kind](**ed))
            except TypeError as e:
                raise ConfigError(f"bad parameters for event {kind!r}: {e}") from e
        sc = d.get("start_center")
        return cls(
            width=int(d.get("width", 96)),
            height=int(d.get("height", 96)),
            length=int(d.get("length", 60)),
            seed=int(d.get("seed", 0)),
            target_size=float(d.get("target_size", 16.0)),
            velocity=float(d.get("velocity", 1.0)),
            jitter_sd=float(d.get("jitter_sd", 0.0)),
            start_center=tuple(sc) if sc else None,
            events=tuple(evs),
        )


@dataclass
class Sequence:
    """Frames plus aligned ground truth, challenge tags and provenance."""

    frames: list[Frame]
    truth: list[Box]
    tags: frozenset[str]
    seed: int
    repetition_boundaries: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.frames) != len(self.truth):
            raise ValueError("frames and truth must have equal length")
        self.tags = frozenset(self.tags)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def __len__(self) -> int:
        return len(self.frames)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sequence):
            return NotImplemented
        return (
            self.frames == other.frames
            and self.truth == other.truth
            and self.tags == other.tags
            and self.seed == other.seed
            and self.repetition_boundaries == other.repetition_boundaries
        )


# ---------------------------------------------------------------------------
# texture helpers

def _value_noise(h: int, w: int, cell: float, rng: Rng) -> np.ndarray:
    """Smooth noise in [0, 1): a coarse uniform grid, bilinearly upsampled."""
    gh = int(math.ceil(h / cell)) + 1
    gw = int(math.ceil(w / cell)) + 1
    grid = rng.uniform_array(gh * gw).reshape(gh, gw)
    ys = np.arange(h) / cell
    xs = np.arange(w) / cell
    iy = np.minimum(np.floor(ys).astype(np.intp), gh - 2)
    ix = np.minimum(np.floor(xs).astype(np.intp), gw - 2)
    fy = (ys - iy)[:, None]
    fx = (xs - ix)[None, :]
    g00 = grid[np.ix_(iy, ix)]
    g01 = grid[np.ix_(iy, ix + 1)]
    g10 = grid[np.ix_(iy + 1, ix)]
    g11 = grid[np.ix_(iy + 1, ix + 1)]
    return (1 - fy) * ((1 - fx) * g00 + fx * g01) + fy * ((1 - fx) * g10 + fx * g11)


def _sample_texture(tex: np.ndarray, tu: np.ndarray, tv: np.ndarray) -> np.ndarray:
    """Bilinear texture lookup with edge clamping (coords in texel units)."""
    th, tw = tex.shape
    tu = np.clip(tu, 0.0, tw - 1.0)
    tv = np.clip(tv, 0.0, th - 1.0)
    iu = np.floor(tu).astype(np.intp)
    iv = np.floor(tv).astype(np.intp)
    fu = tu - iu
    fv = tv - iv
    iu1 = np.minimum(iu + 1, tw - 1)
    iv1 = np.minimum(iv + 1, th - 1)
    return (1 - fv) * ((1 - fu) * tex[iv, iu] + fu * tex[iv, iu1]) + fv * (
        (1 - fu) * tex[iv1, iu] + fu * tex[iv1, iu1]
    )


def _box_blur(img: np.ndarray, radius: int) -> np.ndarray:
    """Separable moving average with edge-corrected window counts."""
    if radius <= 0:
        return img
    k = 2 * radius + 1
    h, w = img.shape

    def blur_axis(a: np.ndarray, axis: int) -> np.ndarray:
        n = a.shape[axis]
        pad = np.zeros((1, a.shape[1]) if axis == 0 else (a.shape[0], 1))
        c = np.concatenate([pad, np.cumsum(a, axis=axis)], axis=axis)
        idx_hi = np.minimum(np.arange(n) + radius + 1, n)
        idx_lo = np.maximum(np.arange(n) - radius, 0)
        counts = (idx_hi - idx_lo).astype(np.float64)
        if axis == 0:
            return (c[idx_hi, :] - c[idx_lo, :]) / counts[:, None]
        return (c[:, idx_hi] - c[:, idx_lo]) / counts[None, :]

    return blur_axis(blur_axis(img, 0), 1)


def _draw_patch(canvas, tex, x, y, w, h, warp_amp=0.0, warp_phase=0.0, spin_rad=0.0):
    """Alpha-composite a textured box at sub-pixel position onto canvas.

    Per-pixel alpha is the geometric coverage of the pixel by the box, so
    edges move smoothly under sub-pixel motion.
    """
    H, W = canvas.shape
    r0 = max(int(math.floor(y)), 0)
    r1 = min(int(math.ceil(y + h)), H)
    c0 = max(int(math.floor(x)), 0)
    c1 = min(int(math.ceil(x + w)), W)
    if r0 >= r1 or c0 >= c1:
        return
    rows = np.arange(r0, r1)
    cols = np.arange(c0, c1)
    cov_y = np.clip(np.minimum(rows + 1.0, y + h) - np.maximum(rows, y), 0.0, 1.0)
    cov_x = np.clip(np.minimum(cols + 1.0, x + w) - np.maximum(cols, x), 0.0, 1.0)
    alpha = cov_y[:, None] * cov_x[None, :]

    th, tw = tex.shape
    un = ((cols + 0.5) - x) / w  # [0, 1] across the box
    vn = ((rows + 0.5) - y) / h
    tu = un[None, :] * (tw - 1.0) + np.zeros((rows.size, 1))
    tv = vn[:, None] * (th - 1.0) + np.zeros((1, cols.size))
    if warp_amp != 0.0:
        tu = tu + (warp_amp * (tw - 1.0) / max(w, 1e-9)) * np.sin(
            2.0 * math.pi * (2.0 * vn[:, None] + warp_phase)
        )
    if spin_rad != 0.0:
        cu, cv = (tw - 1.0) / 2.0, (th - 1.0) / 2.0
        du, dv = tu - cu, tv - cv
        cs, sn = math.cos(spin_rad), math.sin(spin_rad)
        tu = cu + cs * du - sn * dv
        tv = cv + sn * du + cs * dv
    sample = _sample_texture(tex, tu, tv)
    region = canvas[r0:r1, c0:c1]
    canvas[r0:r1, c0:c1] = (1.0 - alpha) * region + alpha * sample


# ---------------------------------------------------------------------------
# generation

def _validate(cfg: SequenceConfig) -> None:
    if cfg.length < 1:
        raise ConfigError("sequence length must be >= 1")
    if cfg.width < 8 or cfg.height < 8:
        raise ConfigError("frame must be at least 8x8")
    if cfg.target_size < 2:
        raise ConfigError("target_size must be >= 2")
    if cfg.target_size >= min(cfg.width, cfg.height):
        raise ConfigError("target larger than frame")
    for ev in cfg.events:
        if isinstance(ev, Clutter):
            if ev.count < 1:
                raise ConfigError("clutter count must be >= 1")
            continue
        if not (1 <= ev.start <= ev.end <= cfg.length):
            raise ConfigError(
                f"event interval [{ev.start}, {ev.end}] outside [1, {cfg.length}]"
            )
        if isinstance(ev, ScaleRamp):
            grown = cfg.target_size * max(1.0, ev.factor)
            if grown >= min(cfg.width, cfg.height):
                raise ConfigError("scale ramp grows target beyond the frame")
        if isinstance(ev, LowRes) and ev.factor < 2:
            raise ConfigError("low_res factor must be >= 2")


def _active(events, cls, i):
    """The event of type cls active at 1-based frame i, or None."""
    for ev in events:
        if isinstance(ev, cls) and ev.start <= i <= ev.end:
            return ev
    return None


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def generate_sequence(cfg: SequenceConfig) -> Sequence:
    """Render a sequence from the config; see the module docstring."""
    _validate(cfg)
    W, H, T = cfg.width, cfg.height, cfg.length

    rng_bg = Rng(derive(cfg.seed, "background"))
    rng_tgt = Rng(derive(cfg.seed, "target"))
    rng_occ = Rng(derive(cfg.seed, "occluder"))
    rng_motion = Rng(derive(cfg.seed, "motion"))
    rng_reentry = Rng(derive(cfg.seed, "reentry"))
    rng_clutter = Rng(derive(cfg.seed, "clutter"))

    background = 0.55 * _value_noise(H, W, 8.0, rng_bg) + 0.05 * _value_noise(
        H, W, 1.5, rng_bg
    )

    # Texture held at twice the base size so scale ramps stay crisp.
    tex_res = max(8, int(round(cfg.target_size * 2)))
    target_tex = 0.35 + 0.65 * _value_noise(tex_res, tex_res, 3.0, rng_tgt)
    occluder_tex = 0.15 + 0.5 * _value_noise(tex_res, tex_res, 2.0, rng_occ)

    clutter_ev = next((e for e in cfg.events if isinstance(e, Clutter)), None)
    distractors = []
    if clutter_ev is not None:
        for _ in range(clutter_ev.count):
            dtex = 0.35 + 0.65 * _value_noise(tex_res, tex_res, 3.0, rng_clutter)
            dx = rng_clutter.uniform_range(0.0, W - cfg.target_size)
            dy = rng_clutter.uniform_range(0.0, H - cfg.target_size)
            distractors.append((dtex, dx, dy))

    angle = rng_motion.uniform() * 2.0 * math.pi
    dir_x, dir_y = math.cos(angle), math.sin(angle)
    if cfg.start_center is not None:
        cx, cy = float(cfg.start_center[0]), float(cfg.start_center[1])
    else:
        half = cfg.target_size / 2.0
        cx = rng_motion.uniform_range(half + 1.0, W - half - 1.0)
        cy = rng_motion.uniform_range(half + 1.0, H - half - 1.0)

    frames: list[Frame] = []
    truth: list[Box] = []
    tags = frozenset(ev.tag for ev in cfg.events)

    for i in range(1, T + 1):
        scale = 1.0
        for ev in cfg.events:
            if isinstance(ev, ScaleRamp):
                if i >= ev.end:
                    scale = ev.factor
                elif i >= ev.start:
                    frac = (i - ev.start) / max(ev.end - ev.start, 1)
                    scale = 1.0 + (ev.factor - 1.0) * frac
        w = h = cfg.target_size * scale

        ov = _active(cfg.events, OutOfView, i)
        if ov is not None and i == ov.start:
            pass  # target vanishes this frame; position frozen until re-entry
        if ov is None:
            prev_ov_end = max(
                (e.end for e in cfg.events if isinstance(e, OutOfView) and e.end < i),
                default=None,
            )
            if prev_ov_end is not None and i == prev_ov_end + 1:
                half = w / 2.0
                cx = rng_reentry.uniform_range(half + 1.0, W - half - 1.0)
                cy = rng_reentry.uniform_range(half + 1.0, H - half - 1.0)
            elif i > 1:
                fm = _active(cfg.events, FastMotion, i)
                speed = fm.speed if fm is not None else cfg.velocity
                jx = rng_motion.normal() * cfg.jitter_sd if cfg.jitter_sd > 0 else 0.0
                jy = rng_motion.normal() * cfg.jitter_sd if cfg.jitter_sd > 0 else 0.0
                cx += dir_x * speed + jx
                cy += dir_y * speed + jy
                lo_x, hi_x = w / 2.0, W - w / 2.0
                lo_y, hi_y = h / 2.0, H - h / 2.0
                if cx < lo_x:
                    cx = min(lo_x + (lo_x - cx), hi_x)
                    dir_x = -dir_x
                elif cx > hi_x:
                    cx = max(hi_x - (cx - hi_x), lo_x)
                    dir_x = -dir_x
                if cy < lo_y:
                    cy = min(lo_y + (lo_y - cy), hi_y)
                    dir_y = -dir_y
                elif cy > hi_y:
                    cy = max(hi_y - (cy - hi_y), lo_y)
                    dir_y = -dir_y

        canvas = background.copy()
        for dtex, dx, dy in distractors:
            _draw_patch(canvas, dtex, dx, dy, cfg.target_size, cfg.target_size)

        present = ov is None
        if present:
            # keep the box inside the frame so clipped truth has positive area
            cx = min(max(cx, w / 2.0), W - w / 2.0)
            cy = min(max(cy, h / 2.0), H - h / 2.0)
            x, y = cx - w / 2.0, cy - h / 2.0
            de = _active(cfg.events, Deformation, i)
            warp_amp = de.amplitude if de is not None else 0.0
            warp_phase = 0.13 * i
            spin = _active(cfg.events, TextureSpin, i)
            spin_rad = 0.0
            if spin is not None:
                frac = (i - spin.start) / max(spin.end - spin.start, 1)
                spin_rad = math.radians(spin.degrees) * frac
            _draw_patch(canvas, target_tex, x, y, w, h, warp_amp, warp_phase, spin_rad)
            truth.append(Box(x, y, w, h))
        else:
            truth.append(Box.absent())

        occ = _active(cfg.events, Occlusion, i)
        if occ is not None:
            if occ.occluder is not None:
                ob = occ.occluder
                _draw_patch(canvas, occluder_tex, ob.x, ob.y, ob.w, ob.h)
            elif present:
                side = math.sqrt(occ.cover)
                ow, oh = side * w, side * h
                _draw_patch(canvas, occluder_tex, cx - ow / 2.0, cy - oh / 2.0, ow, oh)

        lr = _active(cfg.events, LowRes, i)
        if lr is not None:
            from . import kernels

            small = kernels.resize(canvas, max(1, H // lr.factor), max(1, W // lr.factor))
            canvas = kernels.resize(small, H, W)

        mb = _active(cfg.events, Blur, i)
        if mb is not None:
            canvas = _box_blur(canvas, mb.radius)

        iv = _active(cfg.events, GainRamp, i)
        if iv is not None:
            frac = (i - iv.start) / max(iv.end - iv.start, 1)
            canvas = canvas * (iv.gain_min + (iv.gain_max - iv.gain_min) * frac)

        frames.append(Frame(_quantize(canvas)))

    return Sequence(frames, truth, tags, cfg.seed)


def extend_long(s: Sequence, repetitions: int) -> Sequence:
    """Extend by forward+reverse passes; one pass pair is one repetition.

    For frames x1..xT the output is x1 followed by ``repetitions`` copies of
    (x2..xT, x_{T-1}..x1): total length (2T-2)*R + 1.  Truth mirrors
    identically and tags are preserved; repetition_boundaries holds the start
    index of each repetition.
    """
    T = len(s.frames)
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if T < 2:
        raise ValueError("need at least 2 frames to extend")
    period_f = s.frames[1:] + s.frames[-2::-1]
    period_t = s.truth[1:] + s.truth[-2::-1]
    frames = [s.frames[0]] + period_f * repetitions
    truth = [s.truth[0]] + period_t * repetitions
    boundaries = [(2 * T - 2) * k for k in range(repetitions)]
    return Sequence(frames, truth, s.tags, s.seed, boundaries)


# ---------------------------------------------------------------------------
# disk format

def _write_pgm(path: Path, pixels: np.ndarray) -> None:
    data = np.rint(pixels * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _read_pgm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    m = re.match(rb"P5\s+(?:#[^\n]*\n\s*)?(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if not m:
        raise DataError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise DataError(f"{path}: expected maxval 255, got {maxval}")
    data = raw[m.end():]
    if len(data) != w * h:
        raise DataError(f"{path}: expected {w * h} pixel bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def write_sequence(s: Sequence, directory) -> None:
    d = Path(directory)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(s.frames):
        _write_pgm(d / "frames" / f"{i:06d}.pgm", f.pixels)
    lines = ["frame,x,y,w,h,present"]
    for i, b in enumerate(s.truth):
        p = 1 if b.present else 0
        lines.append(f"{i},{b.x!r},{b.y!r},{b.w!r},{b.h!r},{p}")
    (d / "annotations.csv").write_text("\n".join(lines) + "\n")
    meta = {
        "width": s.width,
        "height": s.height,
        "seed": s.seed,
        "tags": sorted(s.tags),
        "repetition_boundaries": list(s.repetition_boundaries),
    }
    (d / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def read_sequence(directory) -> Sequence:
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise DataError(f"{d}: missing meta.json")
    meta = json.loads(meta_path.read_text())
    width, height = int(meta["width"]), int(meta["height"])

    frame_paths = sorted((d / "frames").glob("*.pgm"))
    if not frame_paths:
        raise DataError(f"{d}: no frames found")
    frames = []
    for p in frame_paths:
        px = _read_pgm(p)
        if px.shape != (height, width):
            raise DataError(f"{p}: frame is {px.shape[1]}x{px.shape[0]}, "
                            f"meta says {width}x{height}")
        frames.append(Frame(px))

    truth = []
    ann_path = d / "annotations.csv"
    if not ann_path.exists():
        raise DataError(f"{d}: missing annotations.csv")
    lines = ann_path.read_text().splitlines()
    if not lines or lines[0].strip() != "frame,x,y,w,h,present":
        raise DataError(f"{ann_path}: missing or bad header row")
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise DataError(f"{ann_path}: line {ln}: expected 6 fields, got {len(parts)}")
        try:
            idx = int(parts[0])
            x, y, w, h = (float(v) for v in parts[1:5])
            present = int(parts[5])
        except ValueError as e:
            raise DataError(f"{ann_path}: line {ln}: {e}") from e
        if present not in (0, 1):
            raise DataError(f"{ann_path}: line {ln}: present must be 0 or 1")
        if idx != len(truth):
            raise DataError(f"{ann_path}: line {ln}: frame index {idx} out of order")
        if present:
            if w <= 0 or h <= 0:
                raise DataError(f"{ann_path}: line {ln}: present box with w={w}, h={h}")
            truth.append(Box(x, y, w, h))
        else:
            truth.append(Box.absent())

    if len(truth) != len(frames):
        raise DataError(
            f"{d}: {len(frames)} frames but {len(truth)} annotation rows"
        )
    return Sequence(
        frames,
        truth,
        frozenset(meta.get("tags", [])),
        int(meta.get("seed", 0)),
        [int(b) for b in meta.get("repetition_boundaries", [])],
    )
