"""Channel recalibration adapter with analytic gradients.

The adapter is a bottleneck residual block (1x1 down-projection to C/4
channels, 3x3 depthwise convolution, 1x1 up-projection back to C) whose
branch output is modulated per channel by ``1 + alpha * sigmoid(gate)``.
The gate reads the global average of the bottleneck feature (or of the
input, behind ``gate_source="input"``).  The up-projection and the gate
weights start at zero, so a freshly initialized adapter is exactly the
identity map.

All math is float64.  ``backward`` returns exact reverse-mode gradients,
verified against central finite differences by :func:`gradient_check`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from stormkit.core import StormkitError, derive_rng

GATE_SOURCES = ("bottleneck", "input")


@dataclass
class RecalibParams:
    """Adapter weights for one stage with ``C`` channels (C divisible by 4).

    Shapes: down ``(C/4, C)``, depthwise ``(C/4, 3, 3)``, up ``(C, C/4)``,
    gate ``(C, C/4)`` (or ``(C, C)`` when the gate reads the input).
    """

    down_w: np.ndarray
    down_b: np.ndarray
    dw_w: np.ndarray
    dw_b: np.ndarray
    up_w: np.ndarray
    up_b: np.ndarray
    gate_w: np.ndarray
    gate_b: np.ndarray
    alpha: float = 2.0
    gate_source: str = "bottleneck"

    @property
    def channels(self) -> int:
        return self.down_w.shape[1]

    @property
    def bottleneck(self) -> int:
        return self.down_w.shape[0]


@dataclass
class RecalibGrads:
    """Gradients mirroring :class:`RecalibParams` field by field."""

    down_w: np.ndarray
    down_b: np.ndarray
    dw_w: np.ndarray
    dw_b: np.ndarray
    up_w: np.ndarray
    up_b: np.ndarray
    gate_w: np.ndarray
    gate_b: np.ndarray
    alpha: float


PARAM_FIELDS = ("down_w", "down_b", "dw_w", "dw_b", "up_w", "up_b", "gate_w", "gate_b")


def _check_channels(channels: int) -> int:
    if channels <= 0 or channels % 4 != 0:
        raise StormkitError(f"channel count must be a positive multiple of 4, got {channels}")
    return channels


def init_params(
    channels: int,
    alpha: float = 2.0,
    seed: int = 0,
    gate_source: str = "bottleneck",
) -> RecalibParams:
    """Deterministic initialization that makes the adapter an exact identity.

    Down-projection and depthwise weights use a fan-in-scaled uniform draw;
    the up-projection and the gate start at zero (so does every bias).
    """
    _check_channels(channels)
    if alpha < 0:
        raise StormkitError(f"alpha must be >= 0, got {alpha}")
    if gate_source not in GATE_SOURCES:
        raise StormkitError(f"gate_source must be one of {GATE_SOURCES}, got {gate_source!r}")
    d = channels // 4
    rng = derive_rng(seed, "recalib-init")
    bound_down = 1.0 / math.sqrt(channels)
    bound_dw = 1.0 / 3.0  # fan-in 9 per depthwise channel
    gate_in = d if gate_source == "bottleneck" else channels
    return RecalibParams(
        down_w=rng.uniform(-bound_down, bound_down, size=(d, channels)),
        down_b=np.zeros(d),
        dw_w=rng.uniform(-bound_dw, bound_dw, size=(d, 3, 3)),
        dw_b=np.zeros(d),
        up_w=np.zeros((channels, d)),
        up_b=np.zeros(channels),
        gate_w=np.zeros((channels, gate_in)),
        gate_b=np.zeros(channels),
        alpha=float(alpha),
        gate_source=gate_source,
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _dwconv(feat: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # 3x3 depthwise, stride 1, zero padding 1
    d, h, w = feat.shape
    padded = np.zeros((d, h + 2, w + 2), dtype=feat.dtype)
    padded[:, 1:-1, 1:-1] = feat
    out = np.zeros_like(feat)
    for u in range(3):
        for v in range(3):
            out += kernel[:, u, v][:, None, None] * padded[:, u : u + h, v : v + w]
    return out


def _dwconv_input_grad(dz: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    d, h, w = dz.shape
    padded = np.zeros((d, h + 2, w + 2), dtype=dz.dtype)
    padded[:, 1:-1, 1:-1] = dz
    out = np.zeros_like(dz)
    for u in range(3):
        for v in range(3):
            out += kernel[:, u, v][:, None, None] * padded[:, 2 - u : 2 - u + h, 2 - v : 2 - v + w]
    return out


def _dwconv_kernel_grad(dz: np.ndarray, feat: np.ndarray) -> np.ndarray:
    d, h, w = feat.shape
    padded = np.zeros((d, h + 2, w + 2), dtype=feat.dtype)
    padded[:, 1:-1, 1:-1] = feat
    grad = np.zeros((d, 3, 3), dtype=feat.dtype)
    for u in range(3):
        for v in range(3):
            grad[:, u, v] = (dz * padded[:, u : u + h, v : v + w]).sum(axis=(1, 2))
    return grad


def _check_input(params: RecalibParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise StormkitError(f"feature map must have shape (C, H, W), got {x.shape}")
    if x.shape[0] != params.channels:
        raise StormkitError(
            f"channel mismatch: params expect {params.channels}, feature map has {x.shape[0]}"
        )
    return x


def _forward_parts(params: RecalibParams, x: np.ndarray):
    bott = params.down_w @ x.reshape(params.channels, -1) + params.down_b[:, None]
    bott = bott.reshape(params.bottleneck, x.shape[1], x.shape[2])
    z = _dwconv(bott, params.dw_w) + params.dw_b[:, None, None]
    pooled = z.mean(axis=(1, 2)) if params.gate_source == "bottleneck" else x.mean(axis=(1, 2))
    gate = _sigmoid(params.gate_w @ pooled + params.gate_b)
    branch = params.up_w @ z.reshape(params.bottleneck, -1) + params.up_b[:, None]
    branch = branch.reshape(params.channels, x.shape[1], x.shape[2])
    scale = 1.0 + params.alpha * gate
    y = x + branch * scale[:, None, None]
    return y, bott, z, pooled, gate, branch, scale


def forward(params: RecalibParams, x: np.ndarray) -> np.ndarray:
    """Apply the adapter to a (C, H, W) float64 feature map."""
    x = _check_input(params, x)
    return _forward_parts(params, x)[0]


def channel_scales(params: RecalibParams, x: np.ndarray) -> np.ndarray:
    """Per-channel branch multipliers ``1 + alpha * sigmoid(gate)``.

    Strictly inside ``(1, 1 + alpha)`` for finite inputs and alpha > 0.
    """
    x = _check_input(params, x)
    return _forward_parts(params, x)[6]


def backward(
    params: RecalibParams, x: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, RecalibGrads]:
    """Exact reverse-mode gradients of :func:`forward`.

    Returns the input gradient and per-parameter gradients for an upstream
    gradient ``grad_out`` of the same shape as the output.
    """
    x = _check_input(params, x)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != x.shape:
        raise StormkitError(
            f"grad_out shape {grad_out.shape} does not match input shape {x.shape}"
        )
    _, bott, z, pooled, gate, branch, scale = _forward_parts(params, x)
    c, h, w = x.shape
    d = params.bottleneck
    area = h * w

    dx = grad_out.copy()
    dbranch = grad_out * scale[:, None, None]
    dscale = (grad_out * branch).sum(axis=(1, 2))
    dalpha = float((dscale * gate).sum())
    dgate = params.alpha * dscale
    dpre = dgate * gate * (1.0 - gate)
    dgate_w = np.outer(dpre, pooled)
    dgate_b = dpre
    dpooled = params.gate_w.T @ dpre

    dup_w = dbranch.reshape(c, -1) @ z.reshape(d, -1).T
    dup_b = dbranch.sum(axis=(1, 2))
    dz = (params.up_w.T @ dbranch.reshape(c, -1)).reshape(d, h, w)
    if params.gate_source == "bottleneck":
        dz = dz + dpooled[:, None, None] / area
    else:
        dx += dpooled[:, None, None] / area

    ddw_b = dz.sum(axis=(1, 2))
    ddw_w = _dwconv_kernel_grad(dz, bott)
    dbott = _dwconv_input_grad(dz, params.dw_w)

    ddown_w = dbott.reshape(d, -1) @ x.reshape(c, -1).T
    ddown_b = dbott.sum(axis=(1, 2))
    dx += (params.down_w.T @ dbott.reshape(d, -1)).reshape(c, h, w)

    grads = RecalibGrads(
        down_w=ddown_w,
        down_b=ddown_b,
        dw_w=ddw_w,
        dw_b=ddw_b,
        up_w=dup_w,
        up_b=dup_b,
        gate_w=dgate_w,
        gate_b=dgate_b,
        alpha=dalpha,
    )
    return dx, grads


def param_count(embed_dims: "list[int] | tuple[int, ...]") -> int:
    """Exact number of adapter weights and biases across all stages."""
    total = 0
    for channels in embed_dims:
        _check_channels(channels)
        d = channels // 4
        total += d * channels + d  # down-projection
        total += 9 * d + d  # depthwise 3x3
        total += channels * d + channels  # up-projection
        total += channels * d + channels  # gate
    return total


def _random_params(
    rng: np.random.Generator, channels: int, gate_source: str
) -> RecalibParams:
    d = channels // 4
    gate_in = d if gate_source == "bottleneck" else channels
    return RecalibParams(
        down_w=rng.uniform(-0.5, 0.5, size=(d, channels)),
        down_b=rng.uniform(-0.5, 0.5, size=d),
        dw_w=rng.uniform(-0.5, 0.5, size=(d, 3, 3)),
        dw_b=rng.uniform(-0.5, 0.5, size=d),
        up_w=rng.uniform(-0.5, 0.5, size=(channels, d)),
        up_b=rng.uniform(-0.5, 0.5, size=channels),
        gate_w=rng.uniform(-0.5, 0.5, size=(channels, gate_in)),
        gate_b=rng.uniform(-0.5, 0.5, size=channels),
        alpha=float(rng.uniform(0.5, 3.0)),
        gate_source=gate_source,
    )


def gradient_check(
    channels: int = 8,
    spatial: int = 5,
    trials: int = 20,
    step: float = 1e-5,
    seed: int = 0,
    gate_source: str = "bottleneck",
) -> float:
    """Compare analytic gradients against central finite differences.

    Uses the scalar objective ``sum(forward(params, x) * G)`` for a random
    upstream gradient ``G``; returns the maximum relative error seen over
    all parameters and input entries across ``trials`` random instances.
    """
    _check_channels(channels)
    if gate_source not in GATE_SOURCES:
        raise StormkitError(f"gate_source must be one of {GATE_SOURCES}, got {gate_source!r}")
    rng = derive_rng(seed, "recalib-gradcheck")
    worst = 0.0

    def rel_err(analytic: float, numeric: float) -> float:
        return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)

    for _ in range(trials):
        params = _random_params(rng, channels, gate_source)
        x = rng.standard_normal((channels, spatial, spatial))
        g_up = rng.standard_normal((channels, spatial, spatial))
        dx, grads = backward(params, x, g_up)

        def loss() -> float:
            return float((forward(params, x) * g_up).sum())

        for name in PARAM_FIELDS:
            arr = getattr(params, name)
            grad_arr = getattr(grads, name)
            flat = arr.reshape(-1)
            gflat = grad_arr.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                plus = loss()
                flat[i] = orig - step
                minus = loss()
                flat[i] = orig
                worst = max(worst, rel_err(gflat[i], (plus - minus) / (2.0 * step)))

        orig_alpha = params.alpha
        params.alpha = orig_alpha + step
        plus = loss()
        params.alpha = orig_alpha - step
        minus = loss()
        params.alpha = orig_alpha
        worst = max(worst, rel_err(grads.alpha, (plus - minus) / (2.0 * step)))

        xflat = x.reshape(-1)
        dxflat = dx.reshape(-1)
        for i in range(xflat.size):
            orig = xflat[i]
            xflat[i] = orig + step
            plus = loss()
            xflat[i] = orig - step
            minus = loss()
            xflat[i] = orig
            worst = max(worst, rel_err(dxflat[i], (plus - minus) / (2.0 * step)))

    return worst
