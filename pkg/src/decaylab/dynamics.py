"""Online gradient-descent learning dynamics with an exact bias split.

A linear tracker model f(x; phi) = phi^T g(x) is trained online on noisy
self-labels.  Because the model is linear in phi, each gradient step splits
*exactly* into a perfect-update term (driven by the true boxes) and a bias
term (driven by the label noise), and the induced change of any prediction
is likewise exact rather than first order.  The bias term is the quantity
that accumulates over time and produces model decay.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ._rng import Rng, derive
from .errors import NumericError
from .geom import Box, Frame, extract_patch
from .synthvid import Sequence

FeatureMap = Callable[[Frame, Box], np.ndarray]


def patch_feature_map(patch_size: int = 16, context_factor: float = 2.0) -> FeatureMap:
    """Featurizer: flattened grayscale patch around a context box, plus bias.

    The square region covers context_factor times the larger box side,
    centred on the box centre, resampled to patch_size x patch_size,
    mean-subtracted, with a constant-1 feature appended
    (d = patch_size**2 + 1).  Never depends on model parameters.
    """

    def feature_map(frame: Frame, context: Box) -> np.ndarray:
        side = max(context.w, context.h) * context_factor
        region = Box(context.cx - side / 2.0, context.cy - side / 2.0, side, side)
        patch = extract_patch(frame, region, patch_size, patch_size).pixels.ravel()
        g = np.empty(patch.size + 1)
        g[:-1] = patch - patch.mean()
        g[-1] = 1.0
        return g

    return feature_map


@dataclass(frozen=True)
class LinearTrackerModel:
    """phi maps a d-dim feature vector to 4 box coordinates (x, y, w, h)."""

    phi: np.ndarray  # (d, 4)
    feature_map: FeatureMap

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.float64)
        if phi.ndim != 2 or phi.shape[1] != 4:
            raise ValueError(f"phi must be (d, 4), got {phi.shape}")
        object.__setattr__(self, "phi", phi)

    @property
    def dim(self) -> int:
        return self.phi.shape[0]

    def predict(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.shape != (self.dim,):
            raise ValueError(f"features must be ({self.dim},), got {features.shape}")
        return self.phi.T @ features


def init_model(frame: Frame, truth: Box, feature_map: FeatureMap) -> LinearTrackerModel:
    """Model fitted to the single user-given first-frame sample.

    The minimum-norm phi with phi^T g = y for the first frame, so tracking
    starts from an exact prediction of the initial box.
    """
    g = feature_map(frame, truth)
    y = truth.to_vector()
    phi = np.outer(g, y) / float(g @ g)
    return LinearTrackerModel(phi, feature_map)


@dataclass(frozen=True)
class LabeledSample:
    """One training sample: features, noisy label, and (oracle) truth.

    label = truth + noise holds exactly by construction; truth and noise are
    only available in oracle mode and are None for deployment-style samples.
    """

    features: np.ndarray  # (d,)
    label: np.ndarray  # (4,)
    truth: np.ndarray | None = None  # (4,)
    noise: np.ndarray | None = None  # (4,)

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "label", np.asarray(self.label, dtype=np.float64))
        if (self.truth is None) != (self.noise is None):
            raise ValueError("truth and noise must be given together")
        if self.truth is not None:
            object.__setattr__(self, "truth", np.asarray(self.truth, dtype=np.float64))
            object.__setattr__(self, "noise", np.asarray(self.noise, dtype=np.float64))


@dataclass(frozen=True)
class UpdateDecomposition:
    """One gradient step split into perfect and bias terms (all (d, 4)).

    full_step = perfect_term + bias_term holds to floating tolerance; the
    full step is computed independently from the plain loss gradient.
    """

    full_step: np.ndarray
    perfect_term: np.ndarray
    bias_term: np.ndarray
    eta: float


def _stack(D: list[LabeledSample], dim: int, need_truth: bool = False):
    if not D:
        raise ValueError("dataset must be non-empty")
    for i, s in enumerate(D):
        if s.features.shape != (dim,):
            raise ValueError(
                f"sample {i}: feature dim {s.features.shape} != model dim ({dim},)"
            )
        if need_truth and s.truth is None:
            raise ValueError(f"sample {i} lacks ground truth (oracle mode required)")
    G = np.stack([s.features for s in D])
    Y = np.stack([s.label for s in D])
    return G, Y


def loss_and_gradient(m: LinearTrackerModel, D: list[LabeledSample]):
    """Mean squared error over the dataset and its gradient in phi.

    loss = (1/t) sum_i |y_i - f_i|^2  (summed over the 4 coordinates),
    grad = (2/t) sum_i g_i (f_i - y_i)^T.
    """
    G, Y = _stack(D, m.dim)
    F = G @ m.phi
    R = F - Y
    loss = float((R * R).sum() / len(D))
    grad = (2.0 / len(D)) * (G.T @ R)
    return loss, grad


def sgd_step(m: LinearTrackerModel, grad: np.ndarray, eta: float) -> LinearTrackerModel:
    """phi <- phi - eta * grad; the featurizer is untouched."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != m.phi.shape:
        raise ValueError(f"grad shape {grad.shape} != phi shape {m.phi.shape}")
    if not np.isfinite(grad).all():
        raise NumericError("gradient contains non-finite entries")
    return LinearTrackerModel(m.phi - eta * grad, m.feature_map)


def decompose_step(
    m: LinearTrackerModel, D: list[LabeledSample], eta: float
) -> UpdateDecomposition:
    """Split the update -eta*grad into perfect and bias terms.

    perfect = -(2 eta / t) sum_i g_i (f_i - y*_i)^T
    bias    = +(2 eta / t) sum_i g_i delta_i^T

    full_step is recomputed independently through loss_and_gradient so the
    additivity of the split is a checkable identity, not a tautology.
    eta = 0 is allowed and yields all-zero terms (no-learning runs).
    """
    if eta < 0:
        raise ValueError("eta must be >= 0")
    G, _ = _stack(D, m.dim, need_truth=True)
    F = G @ m.phi
    Ystar = np.stack([s.truth for s in D])
    Delta = np.stack([s.noise for s in D])
    t = len(D)
    perfect = -(2.0 * eta / t) * (G.T @ (F - Ystar))
    bias = (2.0 * eta / t) * (G.T @ Delta)
    _, grad = loss_and_gradient(m, D)
    return UpdateDecomposition(-eta * grad, perfect, bias, eta)


def _validate_eta(eta: float) -> None:
    if eta < 0:
        raise ValueError("eta must be >= 0")


def dynamics_prediction(
    m: LinearTrackerModel, dec: UpdateDecomposition, sample: LabeledSample
):
    """Exact change of the prediction at one sample induced by an update.

    Returns (predicted_change, perfect_component, decay_component), each a
    4-vector; for the linear model f(x; phi + d_phi) - f(x; phi) equals
    d_phi^T g(x) exactly.
    """
    g = sample.features
    if g.shape != (m.dim,):
        raise ValueError(f"feature dim {g.shape} != model dim ({m.dim},)")
    return dec.full_step.T @ g, dec.perfect_term.T @ g, dec.bias_term.T @ g


def corrupt_annotation(truth: Box, sigma: float, rng: Rng):
    """Perturb each box coordinate with independent N(0, sigma^2) noise.

    Returns (label, noise) as 4-vectors; label = truth + noise exactly.
    """
    if not truth.present:
        raise ValueError("cannot corrupt an absent annotation")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    noise = sigma * rng.normal_array(4)
    return truth.to_vector() + noise, noise


@dataclass
class DecayTrace:
    """Per-step record of an online learning run.

    Cumulative columns sum Frobenius norms of the corresponding update
    terms, so they are non-decreasing by construction; pred_error is the
    Euclidean error of the pre-update prediction against the true box.
    """

    t: np.ndarray
    loss: np.ndarray
    cum_bias: np.ndarray
    cum_perfect: np.ndarray
    pred_error: np.ndarray

    def to_csv(self, path) -> None:
        lines = ["t,loss,cum_bias,cum_perfect,pred_error"]
        for i in range(len(self.t)):
            lines.append(
                f"{int(self.t[i])},{float(self.loss[i])!r},{float(self.cum_bias[i])!r},"
                f"{float(self.cum_perfect[i])!r},{float(self.pred_error[i])!r}"
            )
        Path(path).write_text("\n".join(lines) + "\n")

    @property
    def terminal_cum_bias(self) -> float:
        return float(self.cum_bias[-1]) if len(self.cum_bias) else 0.0


def _context_from_prediction(pred: np.ndarray, fallback: Box, width: int, height: int) -> Box:
    """Previous prediction as a search context, sanitised to a usable box."""
    x, y, w, h = (float(v) for v in pred)
    if not (np.isfinite(pred).all() and w >= 2.0 and h >= 2.0):
        return fallback
    cx = min(max(x + w / 2.0, 0.0), float(width))
    cy = min(max(y + h / 2.0, 0.0), float(height))
    return Box(cx - w / 2.0, cy - h / 2.0, w, h)


def run_decay_experiment(
    seq: Sequence,
    sigma_schedule,
    eta: float,
    seed: int,
    feature_map: FeatureMap | None = None,
    window: int | None = None,
) -> DecayTrace:
    """Run the online learning loop over a sequence and trace the decay.

    Per frame: featurize around the previous prediction, predict, corrupt the
    true box into a noisy label, append the sample, split the update into its
    perfect and bias terms, and apply the full update.  ``sigma_schedule`` is
    a scalar or a per-frame array; ``window`` limits the dataset expectation
    to the last ``window`` samples (default: all history, equal weights).
    eta = 0 traces a frozen model (no updates are applied).  Frames with
    absent truth are skipped.
    """
    _validate_eta(eta)
    T = len(seq)
    if T < 2:
        raise ValueError("need at least 2 frames")
    sigmas = np.broadcast_to(np.asarray(sigma_schedule, dtype=np.float64), (T,))
    if (sigmas < 0).any():
        raise ValueError("sigma values must be >= 0")
    if not seq.truth[0].present:
        raise ValueError("first frame must have a present ground-truth box")

    fmap = feature_map or patch_feature_map()
    rng = Rng(derive(seed, "annotation-noise"))
    model = init_model(seq.frames[0], seq.truth[0], fmap)
    prev_pred = seq.truth[0].to_vector()
    prev_label_box = seq.truth[0]

    D: list[LabeledSample] = []
    rows_t, rows_loss, rows_bias, rows_perfect, rows_err = [], [], [], [], []
    cum_bias = 0.0
    cum_perfect = 0.0

    for i in range(1, T):
        truth = seq.truth[i]
        if not truth.present:
            continue
        context = _context_from_prediction(prev_pred, prev_label_box, seq.width, seq.height)
        g = fmap(seq.frames[i], context)
        f = model.predict(g)
        label, noise = corrupt_annotation(truth, float(sigmas[i]), rng)
        D.append(LabeledSample(g, label, truth.to_vector(), noise))
        batch = D if window is None else D[-window:]
        dec = decompose_step(model, batch, eta)
        loss, grad = loss_and_gradient(model, batch)
        if eta > 0:
            model = sgd_step(model, grad, eta)

        cum_bias += float(np.linalg.norm(dec.bias_term))
        cum_perfect += float(np.linalg.norm(dec.perfect_term))
        rows_t.append(i + 1)
        rows_loss.append(loss)
        rows_bias.append(cum_bias)
        rows_perfect.append(cum_perfect)
        rows_err.append(float(np.linalg.norm(f - truth.to_vector())))

        prev_pred = model.predict(g)
        lw = max(float(label[2]), 2.0)
        lh = max(float(label[3]), 2.0)
        prev_label_box = Box(float(label[0]), float(label[1]), lw, lh)

    return DecayTrace(
        np.array(rows_t),
        np.array(rows_loss),
        np.array(rows_bias),
        np.array(rows_perfect),
        np.array(rows_err),
    )
