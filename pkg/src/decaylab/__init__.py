"""decaylab: an executable lab for model decay in long-term visual tracking.

Subpackages and modules:

- ``geom``      bounding boxes, frames, IoU, patch extraction
- ``kernels``   hot numeric kernels (compiled extension with NumPy fallback)
- ``synthvid``  deterministic synthetic challenge videos + repetition protocol
- ``dynamics``  online-learning dynamics with exact perfect/bias decomposition
- ``trackers``  template-matching, correlation-filter and long-term trackers
- ``gate``      decay recognition network gating model updates
- ``metrics``   long-term tracking metrics and reports
- ``harness``   corpus/benchmark orchestration used by the CLI
"""

__version__ = "0.1.0"
