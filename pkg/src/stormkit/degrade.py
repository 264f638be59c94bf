"""Synthetic weather degradations: blur, darkness, snow, haze, and glare.

Each category is sampled at its empirical frequency (blur 29%, dark 26%,
snow 16%, haze 16%, glare 13%) with one of three severity levels, and the
whole pipeline is applied with a configurable probability (default 0.5).
All operations are pure functions of (input, RNG stream, config): equal
seeds give bit-identical outputs, and output dimensions always equal
input dimensions.

Parameter ranges are stored as directed ``(light_end, heavy_end)`` pairs;
a severity level selects the corresponding third of the directed interval,
so "heavy" always intensifies the artifact even when that means a smaller
numeric value (brightness, haze transmission, contrast).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np
from scipy import ndimage

from stormkit.core import StormkitError, derive_rng, require_image, to_f32, to_u8

CATEGORIES = ("blur", "dark", "snow", "haze", "glare")
SEVERITIES = ("light", "medium", "heavy")

Params = dict[str, float]


@dataclass(frozen=True)
class DegradeConfig:
    """Degradation sampling knobs and per-category parameter ranges.

    ``category_weights`` must cover exactly the five categories and sum to
    one; ``severity_weights`` likewise over light/medium/heavy.  Range
    fields are directed (value at the light end first).
    """

    apply_prob: float = 0.5
    category_weights: Mapping[str, float] = field(
        default_factory=lambda: {
            "blur": 0.29,
            "dark": 0.26,
            "snow": 0.16,
            "haze": 0.16,
            "glare": 0.13,
        }
    )
    severity_weights: Mapping[str, float] = field(
        default_factory=lambda: {"light": 1 / 3, "medium": 1 / 3, "heavy": 1 / 3}
    )

    # blur
    blur_sigma: tuple[float, float] = (0.5, 3.5)
    motion_prob: float = 0.5
    motion_length: tuple[float, float] = (5.0, 25.0)

    # dark
    dark_gamma: tuple[float, float] = (1.15, 2.6)
    dark_brightness: tuple[float, float] = (0.95, 0.5)
    dark_noise_sigma: tuple[float, float] = (2.0, 10.0)

    # haze
    haze_contrast: tuple[float, float] = (0.95, 0.6)
    haze_transmission: tuple[float, float] = (0.9, 0.55)
    haze_airlight: tuple[float, float] = (220.0, 255.0)
    haze_blur_prob: float = 0.3
    haze_blur_sigma: tuple[float, float] = (0.5, 1.2)

    # snow: particle count per megapixel at light/medium/heavy, split over
    # three disc radius classes; the closing veil is a white airlight blend
    snow_density: tuple[float, float, float] = (150.0, 500.0, 1200.0)
    snow_radius_classes: tuple[tuple[float, float], ...] = (
        (0.5, 1.5),
        (1.5, 3.0),
        (3.0, 6.0),
    )
    snow_class_split: tuple[float, float, float] = (0.6, 0.3, 0.1)
    snow_brightness: tuple[float, float] = (230.0, 255.0)
    snow_streak_prob: float = 0.5
    snow_streak_length: tuple[float, float] = (5.0, 25.0)
    snow_haze_transmission: tuple[float, float] = (0.95, 0.85)

    # glare: radial blobs screen-blended over the image
    glare_peak: tuple[float, float] = (120.0, 255.0)
    glare_radius_frac: tuple[float, float] = (0.1, 0.45)
    glare_streak_prob: float = 0.5
    glare_streak_sigma_frac: tuple[float, float] = (0.2, 0.5)
    glare_streak_width_frac: tuple[float, float] = (0.01, 0.04)

    def validate(self) -> None:
        if not 0.0 <= self.apply_prob <= 1.0:
            raise StormkitError(f"apply_prob must be in [0, 1], got {self.apply_prob}")
        if set(self.category_weights) != set(CATEGORIES):
            raise StormkitError(
                f"category_weights must cover exactly {CATEGORIES}, "
                f"got {sorted(self.category_weights)}"
            )
        if any(w < 0 for w in self.category_weights.values()):
            raise StormkitError("category weights must be nonnegative")
        total = sum(self.category_weights.values())
        if abs(total - 1.0) > 1e-9:
            raise StormkitError(f"category_weights must sum to 1, got {total!r}")
        if set(self.severity_weights) != set(SEVERITIES):
            raise StormkitError(
                f"severity_weights must cover exactly {SEVERITIES}, "
                f"got {sorted(self.severity_weights)}"
            )
        if any(w < 0 for w in self.severity_weights.values()):
            raise StormkitError("severity weights must be nonnegative")
        total = sum(self.severity_weights.values())
        if abs(total - 1.0) > 1e-9:
            raise StormkitError(f"severity_weights must sum to 1, got {total!r}")
        for prob_field in ("motion_prob", "haze_blur_prob", "snow_streak_prob", "glare_streak_prob"):
            v = getattr(self, prob_field)
            if not 0.0 <= v <= 1.0:
                raise StormkitError(f"{prob_field} must be in [0, 1], got {v}")

    def force_category(self, category: str) -> "DegradeConfig":
        """Return a copy whose category weights are a point mass on ``category``."""
        if category not in CATEGORIES:
            raise StormkitError(f"unknown category {category!r}, expected one of {CATEGORIES}")
        return replace(
            self, category_weights={c: 1.0 if c == category else 0.0 for c in CATEGORIES}
        )

    def force_severity(self, severity: str) -> "DegradeConfig":
        """Return a copy whose severity weights are a point mass on ``severity``."""
        if severity not in SEVERITIES:
            raise StormkitError(f"unknown severity {severity!r}, expected one of {SEVERITIES}")
        return replace(
            self, severity_weights={s: 1.0 if s == severity else 0.0 for s in SEVERITIES}
        )


@dataclass(frozen=True)
class DegradeRecord:
    """Audit record of one degradation decision: what was applied, and how."""

    applied: bool
    category: str | None = None
    severity: str | None = None
    params: Params = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "applied": self.applied,
            "category": self.category,
            "severity": self.severity,
            "params": {k: float(v) for k, v in self.params.items()},
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "DegradeRecord":
        return cls(
            applied=bool(obj["applied"]),
            category=obj.get("category"),
            severity=obj.get("severity"),
            params=dict(obj.get("params") or {}),
        )


def _severity_band(rng: np.random.Generator, directed: tuple[float, float], sev: int) -> float:
    """Sample uniformly from the ``sev``-th third of a directed interval."""
    lo, hi = directed
    a = lo + (hi - lo) * (sev / 3.0)
    b = lo + (hi - lo) * ((sev + 1) / 3.0)
    return float(rng.uniform(min(a, b), max(a, b)))


def _weighted_choice(rng: np.random.Generator, names: tuple[str, ...], weights: Mapping[str, float]) -> str:
    u = rng.random() * sum(weights[n] for n in names)
    acc = 0.0
    for name in names:
        acc += weights[name]
        if u < acc:
            return name
    return names[-1]  # guard against accumulated rounding


def _sample_blur(rng: np.random.Generator, sev: int, cfg: DegradeConfig) -> Params:
    params: Params = {"sigma": _severity_band(rng, cfg.blur_sigma, sev)}
    if rng.random() < cfg.motion_prob:
        params["motion_length"] = _severity_band(rng, cfg.motion_length, sev)
        params["motion_angle"] = float(rng.uniform(0.0, math.pi))
    return params


def _sample_dark(rng: np.random.Generator, sev: int, cfg: DegradeConfig) -> Params:
    return {
        "gamma": _severity_band(rng, cfg.dark_gamma, sev),
        "brightness": _severity_band(rng, cfg.dark_brightness, sev),
        "noise_sigma": _severity_band(rng, cfg.dark_noise_sigma, sev),
    }


def _sample_snow(rng: np.random.Generator, sev: int, cfg: DegradeConfig) -> Params:
    params: Params = {
        "density": float(cfg.snow_density[sev]),
        "angle": float(rng.uniform(0.0, math.pi)),
        "transmission": _severity_band(rng, cfg.snow_haze_transmission, sev),
    }
    if rng.random() < cfg.snow_streak_prob:
        params["streak_length"] = _severity_band(rng, cfg.snow_streak_length, sev)
    return params


def _sample_haze(rng: np.random.Generator, sev: int, cfg: DegradeConfig) -> Params:
    params: Params = {
        "contrast": _severity_band(rng, cfg.haze_contrast, sev),
        "transmission": _severity_band(rng, cfg.haze_transmission, sev),
        "airlight": _severity_band(rng, cfg.haze_airlight, sev),
    }
    if rng.random() < cfg.haze_blur_prob:
        params["blur_sigma"] = _severity_band(rng, cfg.haze_blur_sigma, sev)
    return params


def _sample_glare(rng: np.random.Generator, sev: int, cfg: DegradeConfig) -> Params:
    n_blobs = int(rng.integers(1, 4))
    params: Params = {"num_blobs": float(n_blobs)}
    for i in range(n_blobs):
        params[f"blob{i}_x"] = float(rng.random())
        params[f"blob{i}_y"] = float(rng.random())
        params[f"blob{i}_peak"] = _severity_band(rng, cfg.glare_peak, sev)
        params[f"blob{i}_radius_frac"] = _severity_band(rng, cfg.glare_radius_frac, sev)
    if rng.random() < cfg.glare_streak_prob:
        params["streak_x"] = float(rng.random())
        params["streak_y"] = float(rng.random())
        params["streak_angle"] = float(rng.uniform(0.0, math.pi))
        params["streak_peak"] = _severity_band(rng, cfg.glare_peak, sev)
        params["streak_sigma_frac"] = _severity_band(rng, cfg.glare_streak_sigma_frac, sev)
        params["streak_width_frac"] = _severity_band(rng, cfg.glare_streak_width_frac, sev)
    return params


_PARAM_SAMPLERS: dict[str, Callable[[np.random.Generator, int, DegradeConfig], Params]] = {
    "blur": _sample_blur,
    "dark": _sample_dark,
    "snow": _sample_snow,
    "haze": _sample_haze,
    "glare": _sample_glare,
}


def sample_plan(rng: np.random.Generator, cfg: DegradeConfig | None = None) -> DegradeRecord:
    """Decide whether/how to degrade: category by weight, severity by weight,
    then all named parameters for the chosen category.
    """
    cfg = cfg if cfg is not None else DegradeConfig()
    cfg.validate()
    if rng.random() >= cfg.apply_prob:
        return DegradeRecord(applied=False)
    category = _weighted_choice(rng, CATEGORIES, cfg.category_weights)
    severity = _weighted_choice(rng, SEVERITIES, cfg.severity_weights)
    params = _PARAM_SAMPLERS[category](rng, SEVERITIES.index(severity), cfg)
    return DegradeRecord(applied=True, category=category, severity=severity, params=params)


# -- rendering kernels -------------------------------------------------------


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """L1-normalized 1-D Gaussian with kernel radius ceil(3*sigma)."""
    if sigma <= 0:
        raise StormkitError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def _gaussian_blur(raster: np.ndarray, sigma: float) -> np.ndarray:
    # separable, reflect-101 border ("mirror" in scipy terms)
    k = gaussian_kernel1d(sigma)
    out = ndimage.convolve1d(raster, k, axis=0, mode="mirror")
    return ndimage.convolve1d(out, k, axis=1, mode="mirror")


def motion_kernel(length: float, angle: float) -> np.ndarray:
    """L1-normalized directional box kernel: an anti-aliased line segment of
    ``length`` pixels through the kernel center at ``angle`` radians.
    """
    length = max(1.0, float(length))
    n = int(math.ceil(length))
    if n % 2 == 0:
        n += 1
    k = np.zeros((n, n), dtype=np.float64)
    c = (n - 1) / 2.0
    half = (length - 1.0) / 2.0
    steps = max(2, int(math.ceil(length * 8)))
    dy, dx = math.sin(angle), math.cos(angle)
    for t in np.linspace(-half, half, steps):
        y = c + t * dy
        x = c + t * dx
        y0, x0 = int(math.floor(y)), int(math.floor(x))
        fy, fx = y - y0, x - x0
        for oy, wy in ((0, 1.0 - fy), (1, fy)):
            for ox, wx in ((0, 1.0 - fx), (1, fx)):
                yy, xx = y0 + oy, x0 + ox
                if 0 <= yy < n and 0 <= xx < n:
                    k[yy, xx] += wy * wx
    return k / k.sum()


def _render_blur(raster: np.ndarray, params: Params, rng: np.random.Generator, cfg: DegradeConfig) -> np.ndarray:
    out = _gaussian_blur(raster, params["sigma"])
    if "motion_length" in params:
        k = motion_kernel(params["motion_length"], params["motion_angle"])
        out = np.stack(
            [ndimage.convolve(out[..., ch], k, mode="mirror") for ch in range(3)], axis=-1
        )
    return out


def _render_dark(raster: np.ndarray, params: Params, rng: np.random.Generator, cfg: DegradeConfig) -> np.ndarray:
    gamma = np.float32(params["gamma"])
    brightness = np.float32(params["brightness"])
    out = np.power(raster / np.float32(255.0), gamma) * np.float32(255.0) * brightness
    sigma_n = params["noise_sigma"]
    if sigma_n > 0:
        out = out + rng.normal(0.0, sigma_n, size=out.shape).astype(np.float32)
    return out


def _white_veil(raster: np.ndarray, transmission: float) -> np.ndarray:
    # airlight fixed at 255 keeps the overlay non-decreasing for every pixel
    t = np.float32(transmission)
    return raster * t + np.float32(255.0) * (np.float32(1.0) - t)


def _stamp_disc(raster: np.ndarray, cx: float, cy: float, radius: float, value: float) -> None:
    h, w = raster.shape[:2]
    x0 = max(0, int(math.floor(cx - radius - 1)))
    x1 = min(w, int(math.ceil(cx + radius + 2)))
    y0 = max(0, int(math.floor(cy - radius - 1)))
    y1 = min(h, int(math.ceil(cy + radius + 2)))
    if x0 >= x1 or y0 >= y1:
        return
    ys = np.arange(y0, y1, dtype=np.float32)[:, None]
    xs = np.arange(x0, x1, dtype=np.float32)[None, :]
    dist = np.sqrt((ys - np.float32(cy)) ** 2 + (xs - np.float32(cx)) ** 2)
    alpha = np.clip(np.float32(radius) + np.float32(0.5) - dist, 0.0, 1.0)[..., None]
    region = raster[y0:y1, x0:x1]
    region += alpha * np.clip(np.float32(value) - region, 0.0, None)


def _stamp_segment(
    raster: np.ndarray,
    x0: float,
    y0: float,
    angle: float,
    length: float,
    thickness: float,
    value: float,
) -> None:
    h, w = raster.shape[:2]
    x1 = x0 + length * math.cos(angle)
    y1 = y0 + length * math.sin(angle)
    pad = thickness + 1.5
    bx0 = max(0, int(math.floor(min(x0, x1) - pad)))
    bx1 = min(w, int(math.ceil(max(x0, x1) + pad)))
    by0 = max(0, int(math.floor(min(y0, y1) - pad)))
    by1 = min(h, int(math.ceil(max(y0, y1) + pad)))
    if bx0 >= bx1 or by0 >= by1:
        return
    ys = np.arange(by0, by1, dtype=np.float32)[:, None]
    xs = np.arange(bx0, bx1, dtype=np.float32)[None, :]
    vx, vy = x1 - x0, y1 - y0
    seg_len2 = max(vx * vx + vy * vy, 1e-12)
    t = ((xs - np.float32(x0)) * np.float32(vx) + (ys - np.float32(y0)) * np.float32(vy)) / np.float32(seg_len2)
    t = np.clip(t, 0.0, 1.0)
    dist = np.sqrt(
        (xs - (np.float32(x0) + t * np.float32(vx))) ** 2
        + (ys - (np.float32(y0) + t * np.float32(vy))) ** 2
    )
    alpha = np.clip(np.float32(thickness / 2.0 + 0.5) - dist, 0.0, 1.0)[..., None]
    region = raster[by0:by1, bx0:bx1]
    region += alpha * np.clip(np.float32(value) - region, 0.0, None)


def _render_snow(raster: np.ndarray, params: Params, rng: np.random.Generator, cfg: DegradeConfig) -> np.ndarray:
    out = raster.copy()
    h, w = out.shape[:2]
    n_total = int(round(params["density"] * (h * w) / 1e6))
    counts = [int(round(frac * n_total)) for frac in cfg.snow_class_split[:-1]]
    counts.append(max(0, n_total - sum(counts)))
    for (r_lo, r_hi), count in zip(cfg.snow_radius_classes, counts):
        for _ in range(count):
            cx = float(rng.uniform(0, w))
            cy = float(rng.uniform(0, h))
            radius = float(rng.uniform(r_lo, r_hi))
            value = float(rng.uniform(*cfg.snow_brightness))
            _stamp_disc(out, cx, cy, radius, value)
    if "streak_length" in params:
        n_streaks = max(1, int(round(0.05 * n_total)))
        for _ in range(n_streaks):
            sx = float(rng.uniform(0, w))
            sy = float(rng.uniform(0, h))
            thickness = float(rng.uniform(0.8, 1.6))
            value = float(rng.uniform(*cfg.snow_brightness))
            _stamp_segment(out, sx, sy, params["angle"], params["streak_length"], thickness, value)
    return _white_veil(out, params["transmission"])


def _render_haze(raster: np.ndarray, params: Params, rng: np.random.Generator, cfg: DegradeConfig) -> np.ndarray:
    c = np.float32(params["contrast"])
    t = np.float32(params["transmission"])
    airlight = np.float32(params["airlight"])
    mu = np.float32(raster.mean())
    out = (c * (raster - mu) + mu) * t + airlight * (np.float32(1.0) - t)
    if "blur_sigma" in params:
        out = _gaussian_blur(out, params["blur_sigma"])
    return out


def _screen_add(raster: np.ndarray, glow: np.ndarray) -> np.ndarray:
    # out = 255 - (255 - I)(255 - g)/255, written so g == 0 is an exact no-op
    return raster + (np.float32(255.0) - raster) * (glow[..., None] / np.float32(255.0))


def _render_glare(raster: np.ndarray, params: Params, rng: np.random.Generator, cfg: DegradeConfig) -> np.ndarray:
    out = raster
    h, w = out.shape[:2]
    scale = float(min(h, w))
    ys = np.arange(h, dtype=np.float32)[:, None]
    xs = np.arange(w, dtype=np.float32)[None, :]
    for i in range(int(params["num_blobs"])):
        peak = params[f"blob{i}_peak"]
        if peak <= 0:
            continue
        cx = params[f"blob{i}_x"] * (w - 1)
        cy = params[f"blob{i}_y"] * (h - 1)
        radius = max(params[f"blob{i}_radius_frac"] * scale, 1e-6)
        r2 = ((xs - np.float32(cx)) ** 2 + (ys - np.float32(cy)) ** 2) / np.float32(radius * radius)
        out = _screen_add(out, np.float32(peak) * np.exp(-r2))
    if "streak_peak" in params and params["streak_peak"] > 0:
        cx = params["streak_x"] * (w - 1)
        cy = params["streak_y"] * (h - 1)
        theta = params["streak_angle"]
        sig_a = max(params["streak_sigma_frac"] * scale, 1e-6)
        sig_b = max(params["streak_width_frac"] * scale, 1e-6)
        dx = xs - np.float32(cx)
        dy = ys - np.float32(cy)
        major = dx * np.float32(math.cos(theta)) + dy * np.float32(math.sin(theta))
        minor = -dx * np.float32(math.sin(theta)) + dy * np.float32(math.cos(theta))
        glow = np.float32(params["streak_peak"]) * np.exp(
            -((major / np.float32(sig_a)) ** 2) - (minor / np.float32(sig_b)) ** 2
        )
        out = _screen_add(out, glow)
    return out


_RENDERERS: dict[str, Callable[[np.ndarray, Params, np.random.Generator, DegradeConfig], np.ndarray]] = {
    "blur": _render_blur,
    "dark": _render_dark,
    "snow": _render_snow,
    "haze": _render_haze,
    "glare": _render_glare,
}


def _severity_index(severity: str) -> int:
    if severity not in SEVERITIES:
        raise StormkitError(f"unknown severity {severity!r}, expected one of {SEVERITIES}")
    return SEVERITIES.index(severity)


def _apply_category(
    category: str,
    img: np.ndarray,
    rng: np.random.Generator,
    severity: str,
    cfg: DegradeConfig | None,
) -> np.ndarray:
    cfg = cfg if cfg is not None else DegradeConfig()
    sev = _severity_index(severity)
    params = _PARAM_SAMPLERS[category](rng, sev, cfg)
    return to_u8(_RENDERERS[category](to_f32(img), params, rng, cfg))


def apply_blur(img: np.ndarray, rng: np.random.Generator, severity: str, cfg: DegradeConfig | None = None) -> np.ndarray:
    """Separable Gaussian blur, optionally followed by directional motion blur."""
    return _apply_category("blur", img, rng, severity, cfg)


def apply_dark(img: np.ndarray, rng: np.random.Generator, severity: str, cfg: DegradeConfig | None = None) -> np.ndarray:
    """Gamma darkening with brightness scaling and additive Gaussian noise."""
    return _apply_category("dark", img, rng, severity, cfg)


def apply_snow(img: np.ndarray, rng: np.random.Generator, severity: str, cfg: DegradeConfig | None = None) -> np.ndarray:
    """Anti-aliased snow discs in three size classes, optional shared-angle
    streaks, then a light white veil."""
    return _apply_category("snow", img, rng, severity, cfg)


def apply_haze(img: np.ndarray, rng: np.random.Generator, severity: str, cfg: DegradeConfig | None = None) -> np.ndarray:
    """Contrast reduction about the image mean, airlight blend, optional mild blur."""
    return _apply_category("haze", img, rng, severity, cfg)


def apply_glare(img: np.ndarray, rng: np.random.Generator, severity: str, cfg: DegradeConfig | None = None) -> np.ndarray:
    """Screen-blended radial glare blobs with an optional elongated streak."""
    return _apply_category("glare", img, rng, severity, cfg)


def degrade(
    img: np.ndarray,
    seed: int | np.random.Generator,
    cfg: DegradeConfig | None = None,
) -> tuple[np.ndarray, DegradeRecord]:
    """Sample a degradation plan and apply it to a clean frame.

    ``seed`` may be an integer (a dedicated "degrade" stream is derived from
    it) or an already-derived generator, e.g. one keyed per (seed, frame).
    Returns the output image and the audit record; when nothing is applied
    the output is a bit-identical copy of the input.
    """
    require_image(img)
    cfg = cfg if cfg is not None else DegradeConfig()
    rng = seed if isinstance(seed, np.random.Generator) else derive_rng(int(seed), "degrade")
    record = sample_plan(rng, cfg)
    if not record.applied:
        return img.copy(), record
    out = to_u8(_RENDERERS[record.category](to_f32(img), record.params, rng, cfg))
    return out, record
