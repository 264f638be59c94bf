import math
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from stormkit.core import StormkitError, derive_rng, to_f32, to_u8
from stormkit.degrade import (
    CATEGORIES,
    SEVERITIES,
    DegradeConfig,
    DegradeRecord,
    _render_dark,
    _render_glare,
    _render_haze,
    _render_snow,
    apply_blur,
    apply_dark,
    apply_glare,
    apply_haze,
    apply_snow,
    degrade,
    gaussian_kernel1d,
    motion_kernel,
    sample_plan,
)

CFG = DegradeConfig()


def random_image(seed, shape=(32, 40, 3)):
    return np.random.default_rng(seed).integers(0, 256, shape, dtype=np.uint8)


class TestSamplePlan:
    def test_apply_prob_zero_never_applies(self):
        rng = derive_rng(0, "never")
        cfg = DegradeConfig(apply_prob=0.0)
        for _ in range(200):
            record = sample_plan(rng, cfg)
            assert not record.applied
            assert record.category is None and record.severity is None
            assert record.params == {}

    def test_point_mass_weights_pin_category(self):
        rng = derive_rng(0, "blur-only")
        cfg = DegradeConfig(apply_prob=1.0).force_category("blur")
        for _ in range(200):
            record = sample_plan(rng, cfg)
            assert record.applied and record.category == "blur"

    def test_point_mass_severity(self):
        rng = derive_rng(0, "heavy-only")
        cfg = DegradeConfig(apply_prob=1.0).force_severity("heavy")
        for _ in range(100):
            assert sample_plan(rng, cfg).severity == "heavy"

    def test_frequencies_converge(self):
        # binomial oracle: at n=20000 applied draws, 3 sigma for the largest
        # weight (0.29) is ~0.014, so +-0.02 absolute is a safe bound
        rng = derive_rng(7, "freq-unit")
        counts = Counter()
        n = 20_000
        applied = 0
        for _ in range(n):
            record = sample_plan(rng, CFG)
            if record.applied:
                applied += 1
                counts[record.category] += 1
        assert abs(applied / n - 0.5) < 0.02
        for category in CATEGORIES:
            assert abs(counts[category] / applied - CFG.category_weights[category]) < 0.02

    def test_chi_square_on_category_counts(self):
        rng = derive_rng(11, "chisq")
        cfg = DegradeConfig(apply_prob=1.0)
        counts = Counter()
        n = 100_000
        for _ in range(n):
            counts[sample_plan(rng, cfg).category] += 1
        observed = [counts[c] for c in CATEGORIES]
        expected = [n * cfg.category_weights[c] for c in CATEGORIES]
        result = stats.chisquare(observed, expected)
        assert result.pvalue > 0.001

    def test_record_json_round_trip(self):
        rng = derive_rng(3, "json")
        record = sample_plan(rng, DegradeConfig(apply_prob=1.0))
        assert DegradeRecord.from_json(record.to_json()) == record

    def test_invalid_config_rejected(self):
        with pytest.raises(StormkitError):
            DegradeConfig(apply_prob=1.5).validate()
        with pytest.raises(StormkitError):
            DegradeConfig(category_weights={"blur": 1.0}).validate()
        bad = dict(CFG.category_weights)
        bad["blur"] = 0.5
        with pytest.raises(StormkitError, match="sum to 1"):
            DegradeConfig(category_weights=bad).validate()


class TestBlur:
    def test_constant_image_is_fixed_point(self):
        img = np.full((24, 24, 3), 128, dtype=np.uint8)
        out = apply_blur(img, derive_rng(0, "const"), "heavy")
        assert np.array_equal(out, img)

    def test_impulse_mass_conserved_at_sigma_max(self):
        # kernel L1-normalization oracle: total mass is invariant
        raster = np.zeros((48, 48, 3), dtype=np.float32)
        raster[24, 24, :] = 255.0
        from stormkit.degrade import _render_blur

        out = _render_blur(raster, {"sigma": 3.5}, None, CFG)
        assert abs(out.sum() - raster.sum()) <= 0.01 * raster.sum()

    def test_impulse_center_matches_analytic_kernel(self):
        # closed-form oracle: separable center weight is (k0 / sum(k))^2
        sigma = 0.5
        radius = math.ceil(3 * sigma)
        weights = [math.exp(-(i * i) / (2 * sigma * sigma)) for i in range(-radius, radius + 1)]
        center_weight = weights[radius] / sum(weights)
        expected = 255.0 * center_weight * center_weight

        raster = np.zeros((16, 16, 3), dtype=np.float32)
        raster[8, 8, :] = 255.0
        from stormkit.degrade import _render_blur

        out = _render_blur(raster, {"sigma": sigma}, None, CFG)
        assert out[8, 8, 0] == pytest.approx(expected, abs=1e-3)
        assert to_u8(out)[8, 8, 0] == round(expected)

    def test_kernel_radius_and_normalization(self):
        k = gaussian_kernel1d(1.7)
        assert k.size == 2 * math.ceil(3 * 1.7) + 1
        assert k.sum() == pytest.approx(1.0, abs=1e-12)

    def test_motion_kernel_normalized_and_odd(self):
        for length, angle in [(1.0, 0.0), (7.3, 0.9), (25.0, 2.5)]:
            k = motion_kernel(length, angle)
            assert k.shape[0] % 2 == 1
            assert k.sum() == pytest.approx(1.0, abs=1e-12)
            assert (k >= 0).all()

    def test_shape_preserved_with_motion(self):
        img = random_image(5)
        out = apply_blur(img, derive_rng(5, "motion"), "heavy")
        assert out.shape == img.shape


class TestDark:
    def test_scalar_example(self):
        # (128/255)^2 * 255 = 64.25 -> rounds half-to-even to 64
        raster = np.full((1, 1, 3), 128.0, dtype=np.float32)
        out = _render_dark(raster, {"gamma": 2.0, "brightness": 1.0, "noise_sigma": 0.0}, None, CFG)
        assert to_u8(out).flat[0] == 64

    def test_gamma_fixes_endpoints(self):
        raster = np.array([[[0.0, 255.0, 0.0]]], dtype=np.float32)
        for gamma in (1.15, 2.0, 2.6):
            out = _render_dark(raster, {"gamma": gamma, "brightness": 1.0, "noise_sigma": 0.0}, None, CFG)
            assert out[0, 0, 0] == 0.0
            assert out[0, 0, 1] == 255.0

    def test_noiseless_dark_never_brightens(self):
        raster = to_f32(random_image(9))
        rng = derive_rng(9, "dark-mono")
        from stormkit.degrade import _sample_dark

        for sev in range(3):
            params = _sample_dark(rng, sev, CFG)
            params["noise_sigma"] = 0.0
            out = _render_dark(raster, params, rng, CFG)
            assert (out <= raster + 1e-4).all()

    def test_apply_dark_darkens_on_average(self):
        img = random_image(10)
        out = apply_dark(img, derive_rng(10, "dark"), "heavy")
        assert out.mean() < img.mean()


class TestHaze:
    def test_identity_parameters(self):
        img = random_image(12)
        out = _render_haze(to_f32(img), {"contrast": 1.0, "transmission": 1.0, "airlight": 240.0}, None, CFG)
        assert np.array_equal(to_u8(out), img)

    def test_constant_image_scalar_example(self):
        raster = np.full((4, 4, 3), 100.0, dtype=np.float32)
        out = _render_haze(raster, {"contrast": 1.0, "transmission": 0.5, "airlight": 240.0}, None, CFG)
        assert np.all(out == 170.0)

    def test_zero_transmission_gives_airlight(self):
        raster = to_f32(random_image(13))
        out = _render_haze(raster, {"contrast": 0.8, "transmission": 0.0, "airlight": 231.0}, None, CFG)
        assert np.allclose(out, 231.0, atol=1e-4)

    def test_apply_haze_reduces_contrast(self):
        img = random_image(14)
        out = apply_haze(img, derive_rng(14, "haze"), "heavy")
        assert out.astype(np.float64).std() < img.astype(np.float64).std()


class TestSnow:
    def test_black_image_brightens(self):
        img = np.zeros((40, 40, 3), dtype=np.uint8)
        for severity in SEVERITIES:
            out = apply_snow(img, derive_rng(1, "snow", severity), severity)
            assert out.mean() > 0

    def test_empty_composite_is_identity(self):
        img = random_image(15)
        params = {"density": 0.0, "angle": 0.0, "transmission": 1.0}
        out = _render_snow(to_f32(img), params, derive_rng(0, "empty"), CFG)
        assert np.array_equal(to_u8(out), img)

    def test_deterministic_particle_placement(self):
        img = random_image(16, (64, 64, 3))
        a = apply_snow(img, derive_rng(5, "snow-det"), "heavy")
        b = apply_snow(img, derive_rng(5, "snow-det"), "heavy")
        assert np.array_equal(a, b)

    def test_never_decreases_any_pixel(self):
        raster = to_f32(random_image(17, (64, 64, 3)))
        rng = derive_rng(17, "snow-mono")
        from stormkit.degrade import _sample_snow

        params = _sample_snow(rng, 2, CFG)
        out = _render_snow(raster, params, rng, CFG)
        assert (out >= raster - 1e-3).all()


class TestGlare:
    def test_zero_peak_is_identity(self):
        img = random_image(18)
        params = {"num_blobs": 1.0, "blob0_x": 0.5, "blob0_y": 0.5, "blob0_peak": 0.0, "blob0_radius_frac": 0.3}
        out = _render_glare(to_f32(img), params, None, CFG)
        assert np.array_equal(to_u8(out), img)

    def test_screen_blend_saturates_under_center(self):
        raster = np.zeros((21, 21, 3), dtype=np.float32)
        params = {"num_blobs": 1.0, "blob0_x": 0.5, "blob0_y": 0.5, "blob0_peak": 255.0, "blob0_radius_frac": 0.3}
        out = _render_glare(raster, params, None, CFG)
        assert to_u8(out)[10, 10, 0] == 255

    def test_never_decreases_any_pixel(self):
        raster = to_f32(random_image(19, (48, 48, 3)))
        rng = derive_rng(19, "glare-mono")
        from stormkit.degrade import _sample_glare

        params = _sample_glare(rng, 2, CFG)
        out = _render_glare(raster, params, rng, CFG)
        assert (out >= raster - 1e-3).all()


class TestDegrade:
    def test_pass_through_is_bit_identical(self):
        img = random_image(20)
        out, record = degrade(img, 123, DegradeConfig(apply_prob=0.0))
        assert not record.applied
        assert out.tobytes() == img.tobytes()

    def test_same_seed_bit_identical(self):
        img = random_image(21)
        out1, rec1 = degrade(img, 77)
        out2, rec2 = degrade(img, 77)
        assert np.array_equal(out1, out2)
        assert rec1 == rec2

    def test_different_seeds_usually_differ(self):
        img = random_image(22)
        cfg = DegradeConfig(apply_prob=1.0)
        out1, _ = degrade(img, 1, cfg)
        out2, _ = degrade(img, 2, cfg)
        assert not np.array_equal(out1, out2)

    def test_shape_preserved_for_every_category(self):
        img = random_image(23, (19, 27, 3))
        cfg = DegradeConfig(apply_prob=1.0)
        seen = set()
        for seed in range(40):
            out, record = degrade(img, seed, cfg)
            assert out.shape == img.shape
            seen.add(record.category)
        assert seen == set(CATEGORIES)

    def test_applied_fraction_converges(self):
        img = random_image(24, (8, 8, 3))
        rng = derive_rng(24, "apply-frac")
        n = 2000
        applied = sum(sample_plan(rng, CFG).applied for _ in range(n))
        assert abs(applied / n - 0.5) < 0.04
