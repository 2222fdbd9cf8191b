"""Evaluation metric and loss arithmetic.

* ``rel_error`` / ``pair_lidar_with_prediction``: mean relative distance error
  between LiDAR references and a predicted depth image.
* ``l1_depth_loss``, ``gradient_loss``, ``ssim_loss``, ``densedepth_loss``:
  the DenseDepth training objective, evaluated on supplied images.
* ``adversarial_loss``, ``cycle_loss``, ``identity_loss``,
  ``cyclegan_objective``: CycleGAN objective terms over supplied discriminator
  scores and image batches. No networks are involved.

All reductions go through ``math.fsum`` so results do not depend on
evaluation order or chunking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .depthio import DEFAULT_MAX_RANGE, DepthMap, QuantizedDepth, quantize_values
from .errors import DomainError, ShapeError, ValidationError

Space = Literal["grayscale", "metric"]


@dataclass(frozen=True)
class LossWeights:
    lambda_depth: float = 0.1
    lambda_cyc: float = 10.0
    lambda_idt: float = 5.0

    def __post_init__(self):
        for name in ("lambda_depth", "lambda_cyc", "lambda_idt"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    c1: float = (0.01 * 1.0) ** 2
    c2: float = (0.03 * 1.0) ** 2

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValidationError(f"SSIM window must be odd and >= 3, got {self.window}")
        if not (self.sigma > 0):
            raise ValidationError("SSIM sigma must be positive")
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValidationError("SSIM constants must be positive")

    @classmethod
    def for_range(cls, dynamic_range: float, **kw) -> "SsimConfig":
        return cls(c1=(0.01 * dynamic_range) ** 2, c2=(0.03 * dynamic_range) ** 2, **kw)


@dataclass(frozen=True, eq=False)
class PairedDepthSamples:
    reference: np.ndarray
    predicted: np.ndarray
    unit: Space = "metric"
    index: np.ndarray = field(default=None)

    def __post_init__(self):
        ref = np.asarray(self.reference, dtype=np.float64).reshape(-1)
        pred = np.asarray(self.predicted, dtype=np.float64).reshape(-1)
        if ref.shape != pred.shape:
            raise ShapeError("reference and predicted must have equal length")
        if not (np.all(np.isfinite(ref)) and np.all(np.isfinite(pred))):
            raise ValidationError("samples must be finite")
        if np.any(ref <= 0):
            raise ValidationError("references must be > 0")
        if np.any(pred < 0):
            raise ValidationError("predictions must be >= 0")
        if self.unit not in ("grayscale", "metric"):
            raise ValidationError(f"unknown unit {self.unit!r}")
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "predicted", pred)
        if self.index is not None:
            object.__setattr__(self, "index", np.asarray(self.index, dtype=np.int64).reshape(-1))

    def __len__(self):
        return len(self.reference)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, float]], unit: Space = "metric"):
        pairs = list(pairs)
        ref = [p[0] for p in pairs]
        pred = [p[1] for p in pairs]
        return cls(np.array(ref, dtype=np.float64), np.array(pred, dtype=np.float64), unit)

    def select(self, mask) -> "PairedDepthSamples":
        mask = np.asarray(mask, dtype=bool)
        idx = None if self.index is None else self.index[mask]
        return PairedDepthSamples(self.reference[mask], self.predicted[mask], self.unit, idx)


# -- relative error ----------------------------------------------------------

def rel_error(samples: PairedDepthSamples) -> float:
    """Mean of ``|ref - pred| / ref`` over all pairs."""
    n = len(samples)
    if n == 0:
        raise DomainError("rel_error needs at least one pair")
    ref, pred = samples.reference, samples.predicted
    return math.fsum((np.abs(ref - pred) / ref).tolist()) / n


def pair_lidar_with_prediction(pred: QuantizedDepth, projections, max_range: float | None = None,
                               space: Space = "grayscale") -> PairedDepthSamples:
    """Pair each projected LiDAR point with the prediction pixel it lands in.

    ``projections`` holds ProjectedPoints or ``(index, ProjectedPoint)`` pairs
    as returned by ``project_cloud``. The pixel is ``(floor(u), floor(v))``.
    References are truncated at ``max_range`` (default: the prediction's own
    range) and, in grayscale space, quantized to 8-bit levels. Pairs whose
    reference is 0 are dropped.
    """
    if space not in ("grayscale", "metric"):
        raise ValidationError(f"space must be 'grayscale' or 'metric', got {space!r}")
    if max_range is None:
        max_range = pred.max_range
    if not (max_range > 0 and math.isfinite(max_range)):
        raise ValidationError("max_range must be positive and finite")

    idx, u, v, d = [], [], [], []
    for k, item in enumerate(projections):
        if len(item) == 2:
            i, pp = item
        else:
            i, pp = k, item
        idx.append(i)
        u.append(pp[0])
        v.append(pp[1])
        d.append(pp[2])
    idx = np.array(idx, dtype=np.int64)
    cols = np.floor(np.array(u, dtype=np.float64)).astype(np.int64)
    rows = np.floor(np.array(v, dtype=np.float64)).astype(np.int64)
    d = np.array(d, dtype=np.float64)
    if len(d) and (cols.min() < 0 or rows.min() < 0 or cols.max() >= pred.width or rows.max() >= pred.height):
        raise ShapeError("projection falls outside the predicted image")

    levels = pred.levels[rows, cols] if len(d) else np.zeros(0, np.uint8)
    truncated = np.minimum(d, max_range)
    if space == "grayscale":
        ref = quantize_values(truncated, max_range).astype(np.float64)
        got = levels.astype(np.float64)
    else:
        ref = truncated
        got = levels.astype(np.float64) / 255.0 * pred.max_range
    keep = ref > 0
    return PairedDepthSamples(ref[keep], got[keep], space, idx[keep])


# -- DenseDepth loss family ----------------------------------------------------

def _as_array(x) -> np.ndarray:
    if isinstance(x, DepthMap):
        return x.values.astype(np.float64)
    if isinstance(x, QuantizedDepth):
        return x.levels.astype(np.float64)
    a = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValidationError("image values must be finite")
    return a


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    a, b = _as_array(y), _as_array(yhat)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ShapeError("empty images")
    return a, b


def _mean(a: np.ndarray) -> float:
    return math.fsum(a.ravel().tolist()) / a.size


def l1_depth_loss(y, yhat) -> float:
    a, b = _pair(y, yhat)
    return _mean(np.abs(a - b))


def gradient_loss(y, yhat) -> float:
    """Mean |forward difference| of ``y - yhat`` along columns plus along rows.

    Each term averages over the positions where its difference exists, so the
    last column is excluded from the horizontal term and the last row from
    the vertical term.
    """
    a, b = _pair(y, yhat)
    if a.ndim < 2 or a.shape[0] < 2 or a.shape[1] < 2:
        raise ShapeError(f"gradient_loss needs at least 2x2 images, got {a.shape}")
    diff = a - b
    gx = diff[:, 1:] - diff[:, :-1]
    gy = diff[1:, :] - diff[:-1, :]
    return _mean(np.abs(gx)) + _mean(np.abs(gy))


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = size // 2
    g = np.exp(-((np.arange(size) - r) ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    w = len(g)
    rows = sliding_window_view(img, w, axis=0) @ g
    return sliding_window_view(rows, w, axis=1) @ g


def ssim_map(a, b, cfg: SsimConfig = SsimConfig()) -> np.ndarray:
    """Local SSIM at every position where the window fits entirely.

    Multi-channel inputs (H, W, C) return an (H', W', C) map.
    """
    x, y = _pair(a, b)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if x.ndim != 3:
        raise ShapeError(f"expected (H, W) or (H, W, C) images, got {x.shape}")
    if x.shape[0] < cfg.window or x.shape[1] < cfg.window:
        raise ShapeError(f"image {x.shape[:2]} smaller than SSIM window {cfg.window}")
    g = gaussian_window(cfg.window, cfg.sigma)
    out = []
    for c in range(x.shape[2]):
        p, q = x[..., c], y[..., c]
        mu_p, mu_q = _filter_valid(p, g), _filter_valid(q, g)
        var_p = _filter_valid(p * p, g) - mu_p * mu_p
        var_q = _filter_valid(q * q, g) - mu_q * mu_q
        cov = _filter_valid(p * q, g) - mu_p * mu_q
        num = (2 * mu_p * mu_q + cfg.c1) * (2 * cov + cfg.c2)
        den = (mu_p * mu_p + mu_q * mu_q + cfg.c1) * (var_p + var_q + cfg.c2)
        out.append(num / den)
    return np.stack(out, axis=-1)


def ssim(a, b, cfg: SsimConfig = SsimConfig()) -> float:
    m = ssim_map(a, b, cfg)
    return min(1.0, max(-1.0, _mean(m)))


def ssim_loss(a, b, cfg: SsimConfig = SsimConfig()) -> float:
    return (1.0 - ssim(a, b, cfg)) / 2.0


def densedepth_loss(y, yhat, w: LossWeights = LossWeights(), cfg: SsimConfig = SsimConfig()) -> float:
    return (w.lambda_depth * l1_depth_loss(y, yhat)
            + gradient_loss(y, yhat)
            + ssim_loss(y, yhat, cfg))


def densedepth_terms(y, yhat, w: LossWeights = LossWeights(), cfg: SsimConfig = SsimConfig()) -> dict:
    """Each component plus the composite, as reported by the ``metrics`` command."""
    l1 = l1_depth_loss(y, yhat)
    grad = gradient_loss(y, yhat)
    sl = ssim_loss(y, yhat, cfg)
    return {"l1": l1, "grad": grad, "ssim_loss": sl, "composite": w.lambda_depth * l1 + grad + sl}


# -- CycleGAN objective ------------------------------------------------------

def _scores(s, name: str) -> np.ndarray:
    a = np.asarray(s, dtype=np.float64).ravel()
    if a.size == 0:
        raise DomainError(f"{name} scores are empty")
    if not np.all((a > 0) & (a < 1)):
        raise ValidationError(f"{name} scores must lie strictly inside (0, 1)")
    return a


def adversarial_loss(real_scores, fake_scores) -> float:
    """``mean(log D(real)) + mean(log(1 - D(fake)))`` with natural log."""
    real = _scores(real_scores, "real")
    fake = _scores(fake_scores, "fake")
    return _mean(np.log(real)) + _mean(np.log1p(-fake))


def _batch_l1(a, b) -> float:
    a, b = _pair(a, b)
    return _mean(np.abs(a - b))


def cycle_loss(x, x_reconstructed, y, y_reconstructed) -> float:
    """Forward plus backward reconstruction error, each a per-pixel mean L1."""
    return _batch_l1(x_reconstructed, x) + _batch_l1(y_reconstructed, y)


def identity_loss(y, g_of_y, x, f_of_x) -> float:
    return _batch_l1(g_of_y, y) + _batch_l1(f_of_x, x)


def cyclegan_objective(adv_g: float, adv_f: float, cyc: float, idt: float,
                       w: LossWeights = LossWeights()) -> float:
    for v in (adv_g, adv_f, cyc, idt):
        if not math.isfinite(v):
            raise ValidationError("objective terms must be finite")
    return adv_g + adv_f + w.lambda_cyc * cyc + w.lambda_idt * idt


def normalized_depth(x, max_range: float = DEFAULT_MAX_RANGE) -> np.ndarray:
    """Map a DepthMap (truncated at ``max_range``) or QuantizedDepth to [0, 1]."""
    if isinstance(x, QuantizedDepth):
        return x.levels.astype(np.float64) / 255.0
    if isinstance(x, DepthMap):
        return np.minimum(x.values.astype(np.float64), max_range) / max_range
    raise TypeError(f"expected DepthMap or QuantizedDepth, got {type(x).__name__}")
