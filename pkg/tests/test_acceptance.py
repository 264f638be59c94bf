"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines on the terminal.  Tolerances are pinned here and nowhere else.
"""

import functools
import json
import time
from collections import Counter

import numpy as np

from stormkit.cli import dispatch
from stormkit.core import derive_rng, write_image_png
from stormkit.degrade import CATEGORIES, DegradeConfig, sample_plan
from stormkit.fusion import argmax_labels, fuse_scene
from stormkit.metrics import accumulate, metrics, miou_from_per_class, new_confusion
from stormkit.recalib import forward, gradient_check, init_params, param_count
from stormkit.sampler import build_plan, parse_manifest, plan_stats
from stormkit.soup import CompatibilityError, soup

from test_metrics import exact_oracle, random_scene


def criterion(label):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"[FAIL] {label}")
                raise
            print(f"[PASS] {label}")

        return wrapper

    return decorate


@criterion("criterion 1: identity-at-init, 50 random maps, bit-exact, <5s")
def test_criterion_1_identity_at_init():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    combos = [(c, s) for c in (4, 8, 64) for s in (1, 7, 16)]
    for i in range(50):
        channels, side = combos[i % len(combos)]
        params = init_params(channels, alpha=2.0, seed=i)
        x = rng.standard_normal((channels, side, side))
        out = forward(params, x)
        assert out.tobytes() == x.tobytes(), f"not bit-exact for C={channels}, H=W={side}"
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"took {elapsed:.2f}s"


@criterion("criterion 2: gradient suite, 20 instances, rel err < 1e-4, <30s")
def test_criterion_2_gradient_suite():
    start = time.perf_counter()
    worst = gradient_check(channels=8, spatial=5, trials=20, step=1e-5, seed=0)
    assert worst < 1e-4, f"max relative error {worst:.3e}"
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0, f"took {elapsed:.2f}s"


@criterion("criterion 3: parameter budget == 282,228 and < 1,000,000")
def test_criterion_3_parameter_budget():
    count = param_count([64, 144, 288, 512])
    assert count == 282_228
    assert count < 1_000_000


@criterion("criterion 4: category frequencies within 1% at 100k draws, <10s")
def test_criterion_4_degradation_frequencies():
    start = time.perf_counter()
    targets = {"blur": 0.29, "dark": 0.26, "snow": 0.16, "haze": 0.16, "glare": 0.13}
    rng = derive_rng(2024, "acceptance-frequencies")
    cfg = DegradeConfig()
    n = 100_000
    applied = 0
    counts = Counter()
    for _ in range(n):
        record = sample_plan(rng, cfg)
        if record.applied:
            applied += 1
            counts[record.category] += 1
    applied_frac = applied / n
    assert abs(applied_frac - 0.5) <= 0.01, f"applied fraction {applied_frac:.4f}"
    for category in CATEGORIES:
        freq = counts[category] / applied
        assert abs(freq - targets[category]) <= 0.01, (
            f"{category}: {freq:.4f} vs target {targets[category]}"
        )
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"took {elapsed:.2f}s"


@criterion("criterion 5: degrade CLI byte-identical across reruns and 1 vs 8 workers")
def test_criterion_5_degradation_determinism(tmp_path, monkeypatch):
    monkeypatch.delenv("STORMKIT_THREADS", raising=False)
    in_dir = tmp_path / "in"
    in_dir.mkdir()
    rng = np.random.default_rng(77)
    for i in range(20):
        write_image_png(in_dir / f"img{i:03d}.png", rng.integers(0, 256, (48, 64, 3), dtype=np.uint8))

    def run(out_name, workers):
        out_dir = tmp_path / out_name
        code = dispatch(
            ["degrade", "--in", str(in_dir), "--out", str(out_dir),
             "--seed", "1234", "--workers", str(workers)]
        )
        assert code == 0
        pngs = {p.name: p.read_bytes() for p in sorted(out_dir.glob("*.png"))}
        return pngs, (out_dir / "records.jsonl").read_bytes()

    pngs_a, records_a = run("run_a", 1)
    pngs_b, records_b = run("run_b", 1)
    pngs_c, records_c = run("run_c", 8)
    assert len(pngs_a) == 20
    assert pngs_a == pngs_b == pngs_c
    assert records_a == records_b == records_c


@criterion("criterion 6: per-scene counts 5000 +- 150 at 10k iterations")
def test_criterion_6_sampler_balance():
    lines = []
    for i in range(1):
        lines.append(f"small\tc{i}\tclean\timg.png")
        lines.append(f"small\td{i}\tdegraded\timg.png")
    for i in range(100):
        lines.append(f"big\tc{i}\tclean\timg.png")
        lines.append(f"big\td{i}\tdegraded\timg.png")
    manifest = parse_manifest(lines)
    plan = build_plan(manifest, 10_000, seed=99)
    counts = plan_stats(plan)["per_scene"]
    assert abs(counts["small"] - 5000) <= 150, counts
    assert abs(counts["big"] - 5000) <= 150, counts

    single = parse_manifest(["only\tc\tclean\timg.png", "only\td\tdegraded\timg.png"])
    single_plan = build_plan(single, 1000, seed=5)
    assert all(e.scene_id == "only" for e in single_plan.entries)


@criterion("criterion 7: fusion/metrics pipeline equals exact oracle on 100 instances")
def test_criterion_7_oracle_equivalence():
    rng = np.random.default_rng(123)
    for _ in range(100):
        frames, gt = random_scene(rng, k=4, h=8, w=8)
        fused = fuse_scene(frames)
        cm = accumulate(new_confusion(4), argmax_labels(fused), gt)
        oracle_cm, oracle = exact_oracle([frames], [gt], 4)
        assert np.array_equal(cm, np.array(oracle_cm)), "confusion counts diverge"
        got = metrics(cm)
        assert abs(got["miou"] - float(oracle["miou"])) <= 1e-12
        assert abs(got["macc"] - float(oracle["macc"])) <= 1e-12
        assert abs(got["aacc"] - float(oracle["aacc"])) <= 1e-12
    table5 = [13.5, 88.0, 58.7, 55.3, 60.7, 67.3, 82.1, 52.8, 79.8, 87.1]
    assert abs(miou_from_per_class(table5) - 64.53) <= 0.01


@criterion("criterion 8: soup identity/annihilation/permutation at 1e-12, plus refusal")
def test_criterion_8_soup_properties():
    rng = np.random.default_rng(31)
    base = {
        "a.w": rng.standard_normal((5, 3)),
        "a.b": rng.standard_normal(5),
        "b.w": rng.standard_normal((2, 5)),
    }
    clones = [dict(base), {k: v.copy() for k, v in base.items()}]
    mean_of_equals = soup(clones)
    for name in base:
        np.testing.assert_allclose(mean_of_equals[name], base[name], rtol=1e-12)

    negated = {k: -v for k, v in base.items()}
    cancelled = soup([base, negated])
    for name in cancelled:
        assert np.abs(cancelled[name]).max() <= 1e-15

    others = [{k: rng.standard_normal(v.shape) for k, v in base.items()} for _ in range(2)]
    fwd = soup([base] + others)
    rev = soup(list(reversed([base] + others)))
    for name in fwd:
        np.testing.assert_allclose(fwd[name], rev[name], rtol=1e-12)

    broken = {k: v.copy() for k, v in base.items()}
    broken["a.w"] = rng.standard_normal((3, 5))
    refused = False
    try:
        soup([base, broken])
    except CompatibilityError as err:
        refused = True
        assert any("a.w" in line for line in err.report)
    assert refused, "shape mismatch was not refused"

    renamed = {("renamed" if k == "b.w" else k): v.copy() for k, v in base.items()}
    refused = False
    try:
        soup([base, renamed])
    except CompatibilityError as err:
        refused = True
        assert any("b.w" in line or "renamed" in line for line in err.report)
    assert refused, "name mismatch was not refused"


@criterion("criterion 9: fused maps stay on the probability simplex within 1e-5")
def test_criterion_9_simplex_conservation():
    rng = np.random.default_rng(55)
    for _ in range(100):
        frames, _ = random_scene(rng, k=4, h=8, w=8)
        fused = fuse_scene(frames)
        assert (fused >= 0).all()
        sums = fused.sum(axis=0)
        assert np.abs(sums - 1.0).max() <= 1e-5
