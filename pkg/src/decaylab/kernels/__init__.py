"""Hot numeric kernels with a compiled core and a NumPy fallback.

Backends are selected once at import time.  Under the default ``auto``
policy each kernel gets the implementation that wins on it (see
``benchmarks/bench_kernels.py``): the compiled extension for bilinear
resampling, convolution and pooling, and the FFT-based NumPy path for the
sliding NCC, whose direct-computation compiled twin serves as its
cross-check oracle.  Override everything with DECAYLAB_KERNELS=c|py
(``c`` fails loudly when the extension is missing).
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_IMPLS = {"py": _pykernels}
if _ckernels is not None:
    _IMPLS["c"] = _ckernels

_requested = os.environ.get("DECAYLAB_KERNELS", "auto").lower()
if _requested == "auto":
    BACKEND = "c" if _ckernels is not None else "py"
    # large-map NCC is FFT-bound; the compiled direct path stays available
    # as the verification route
    _NCC_BACKEND = "py"
elif _requested in _IMPLS:
    BACKEND = _requested
    _NCC_BACKEND = _requested
elif _requested == "c":
    raise ImportError(
        "DECAYLAB_KERNELS=c but the compiled extension is not built; "
        "run `python setup.py build_ext --inplace` or `pip install -e .`"
    )
else:
    raise ImportError(f"unknown DECAYLAB_KERNELS value: {_requested!r}")


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_IMPLS))


def tune_allocator() -> bool:
    """Raise glibc's mmap/trim thresholds so large temporaries are pooled.

    Fresh mmap-backed arrays pay page-fault costs on some virtual machines;
    pooling them speeds the training loops noticeably.  Safe to call from
    applications (the CLI and the test suite do); returns False when the
    platform has no glibc mallopt.
    """
    import ctypes

    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 512 * 1024 * 1024)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 512 * 1024 * 1024)  # M_TRIM_THRESHOLD
        return True
    except (OSError, AttributeError):
        return False


def get_impl(backend: str | None = None):
    if backend is None:
        backend = BACKEND
    try:
        return _IMPLS[backend]
    except KeyError:
        raise ValueError(f"backend {backend!r} not available (have {available_backends()})")


def _as_image(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError("expected a non-empty 2-D array")
    return a


def ncc_response(image, templ, backend: str | None = None) -> np.ndarray:
    """NCC of templ against every placement in image; see _pykernels."""
    image = _as_image(image)
    templ = _as_image(templ)
    if templ.shape[0] > image.shape[0] or templ.shape[1] > image.shape[1]:
        raise ValueError(
            f"template {templ.shape} larger than search image {image.shape}"
        )
    if backend is None:
        backend = _NCC_BACKEND
    return get_impl(backend).ncc_response(image, templ)


def bilinear_sample_box(
    image, x0: float, y0: float, bw: float, bh: float,
    out_w: int, out_h: int, backend: str | None = None,
) -> np.ndarray:
    """Bilinear resample of a sub-pixel box onto a fixed grid; see _pykernels."""
    image = _as_image(image)
    if bw <= 0 or bh <= 0:
        raise ValueError("box width and height must be positive")
    if out_w <= 0 or out_h <= 0:
        raise ValueError("output size must be positive")
    return get_impl(backend).bilinear_sample_box(
        image, float(x0), float(y0), float(bw), float(bh), int(out_w), int(out_h)
    )


def resize(image, out_h: int, out_w: int, backend: str | None = None) -> np.ndarray:
    """Resample a full array to (out_h, out_w) with the bilinear kernel."""
    image = _as_image(image)
    h, w = image.shape
    return bilinear_sample_box(image, 0.0, 0.0, float(w), float(h), out_w, out_h, backend)


def _as4d(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 4:
        raise ValueError("expected a 4-D array")
    return a


def conv3x3_forward(x, w, b, backend: str | None = None) -> np.ndarray:
    """Valid 3x3 convolution; x is (B, H, W, C) channels-last, w (OC, C, 3, 3)."""
    x = _as4d(x)
    w = _as4d(w)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if x.shape[1] < 3 or x.shape[2] < 3:
        raise ValueError("input smaller than the 3x3 kernel")
    if w.shape[1] != x.shape[3] or w.shape[2:] != (3, 3) or b.shape != (w.shape[0],):
        raise ValueError("weight/bias shapes do not match the input")
    return get_impl(backend).conv3x3_forward(x, w, b)


def conv3x3_input_grad(da, w, H: int, W: int, backend: str | None = None) -> np.ndarray:
    """Gradient wrt the conv input: a valid convolution of the zero-padded
    upstream gradient with spatially flipped, channel-swapped kernels."""
    da = _as4d(da)
    w = _as4d(w)
    B, oh, ow, oc = da.shape
    pad = np.zeros((B, oh + 4, ow + 4, oc))
    pad[:, 2:-2, 2:-2, :] = da
    wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    out = get_impl(backend).conv3x3_forward(pad, wf, np.zeros(w.shape[1]))
    if out.shape[1] != H or out.shape[2] != W:
        raise ValueError("gradient shape does not match the stated input size")
    return out


def conv3x3_param_grad(da, x, backend: str | None = None):
    return get_impl(backend).conv3x3_param_grad(_as4d(da), _as4d(x))


def maxpool5_forward(x, backend: str | None = None):
    """Non-overlapping 5x5 max-pool; returns (pooled, argmax indices)."""
    x = _as4d(x)
    if x.shape[1] < 5 or x.shape[2] < 5:
        raise ValueError("input smaller than the 5x5 pooling window")
    return get_impl(backend).maxpool5_forward(x)


def maxpool5_backward(dout, idx, H: int, W: int, backend: str | None = None) -> np.ndarray:
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    return get_impl(backend).maxpool5_backward(_as4d(dout), idx, int(H), int(W))
