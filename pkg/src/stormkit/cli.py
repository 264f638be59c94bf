"""Command-line entry point: degrade, plan, fuse, eval, soup, recalib, augstats.

Exit codes: 0 success, 1 validation or data error, 2 usage error.  Commands
that produce outputs also write a run manifest (tool version, seed, resolved
options, config hash, inputs) beside them; re-running the recorded argv
reproduces the outputs byte for byte.  ``STORMKIT_THREADS`` caps worker
parallelism; per-frame RNG streams make outputs independent of worker count.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from stormkit import __version__
from stormkit.core import StormkitError, derive_rng, read_image_png, write_image_png
from stormkit.degrade import CATEGORIES, SEVERITIES, DegradeConfig, degrade, sample_plan
from stormkit.fusion import fuse_directory, require_probmap, write_probmap
from stormkit.metrics import evaluate_scenes
from stormkit.recalib import GATE_SOURCES, gradient_check, param_count
from stormkit.sampler import build_plan, plan_stats, read_manifest, write_plan
from stormkit.soup import CompatibilityError, compat_check, read_archive, soup, write_archive

GRADIENT_TOLERANCE = 1e-4

_DEGRADE_PROB_KEYS = {
    "apply_prob",
    "motion_prob",
    "haze_blur_prob",
    "snow_streak_prob",
    "glare_streak_prob",
}
_DEGRADE_PAIR_KEYS = {
    "blur_sigma",
    "motion_length",
    "dark_gamma",
    "dark_brightness",
    "dark_noise_sigma",
    "haze_contrast",
    "haze_transmission",
    "haze_airlight",
    "haze_blur_sigma",
    "snow_streak_length",
    "snow_haze_transmission",
    "snow_brightness",
    "glare_peak",
    "glare_radius_frac",
    "glare_streak_sigma_frac",
    "glare_streak_width_frac",
}
_DEGRADE_TRIPLE_KEYS = {"snow_density", "snow_class_split"}


@dataclass
class RunConfig:
    """Validated contents of a ``key=value`` config file."""

    seed: int | None = None
    degrade_overrides: dict = field(default_factory=dict)

    def degrade_config(self, base: DegradeConfig | None = None) -> DegradeConfig:
        base = base if base is not None else DegradeConfig()
        return dataclasses.replace(base, **self.degrade_overrides)


def _parse_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError as exc:
        raise StormkitError(f"config key {key!r}: expected a number, got {value!r}") from exc


def _parse_tuple(key: str, value: str, arity: int) -> tuple[float, ...]:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != arity:
        raise StormkitError(
            f"config key {key!r}: expected {arity} comma-separated numbers, got {value!r}"
        )
    return tuple(_parse_float(key, p) for p in parts)


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    """Parse dotted ``key=value`` lines; unknown keys are rejected."""
    cfg = RunConfig()
    weights: dict[str, float] = {}
    sev_weights: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise StormkitError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "seed":
            seed = int(_parse_float(key, value))
            if seed < 0:
                raise StormkitError(f"{source}:{lineno}: seed must be >= 0")
            cfg.seed = seed
        elif key.startswith("degrade.category_weights."):
            category = key.rsplit(".", 1)[1]
            if category not in CATEGORIES:
                raise StormkitError(f"{source}:{lineno}: unknown category {category!r}")
            weights[category] = _parse_float(key, value)
        elif key.startswith("degrade.severity_weights."):
            severity = key.rsplit(".", 1)[1]
            if severity not in SEVERITIES:
                raise StormkitError(f"{source}:{lineno}: unknown severity {severity!r}")
            sev_weights[severity] = _parse_float(key, value)
        elif key.startswith("degrade."):
            name = key.split(".", 1)[1]
            if name in _DEGRADE_PROB_KEYS:
                prob = _parse_float(key, value)
                if not 0.0 <= prob <= 1.0:
                    raise StormkitError(f"{source}:{lineno}: {key} must be in [0, 1], got {prob}")
                cfg.degrade_overrides[name] = prob
            elif name in _DEGRADE_PAIR_KEYS:
                cfg.degrade_overrides[name] = _parse_tuple(key, value, 2)
            elif name in _DEGRADE_TRIPLE_KEYS:
                cfg.degrade_overrides[name] = _parse_tuple(key, value, 3)
            else:
                raise StormkitError(f"{source}:{lineno}: unknown config key {key!r}")
        else:
            raise StormkitError(f"{source}:{lineno}: unknown config key {key!r}")
    if weights:
        merged = dict(DegradeConfig().category_weights)
        merged.update(weights)
        cfg.degrade_overrides["category_weights"] = merged
    if sev_weights:
        merged = dict(DegradeConfig().severity_weights)
        merged.update(sev_weights)
        cfg.degrade_overrides["severity_weights"] = merged
    return cfg


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        raise StormkitError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), source=str(p))


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_run_manifest(
    out_target: Path,
    command: str,
    argv: list[str],
    seed: int | None,
    inputs: list[str],
    options: dict,
) -> Path:
    """Write the run manifest beside the output (dir gets run_manifest.json,
    a file gets <name>.manifest.json)."""
    options = _jsonable(options)
    canonical = json.dumps(options, sort_keys=True, separators=(",", ":"))
    payload = {
        "tool": "stormkit",
        "version": __version__,
        "command": command,
        "argv": argv,
        "seed": seed,
        "inputs": sorted(inputs),
        "options": options,
        "config_sha256": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
    }
    if out_target.is_dir():
        dest = out_target / "run_manifest.json"
    else:
        dest = out_target.parent / (out_target.name + ".manifest.json")
    dest.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return dest


def _resolve_seed(flag_value: int | None, cfg: RunConfig) -> int:
    if flag_value is not None:
        return flag_value
    if cfg.seed is not None:
        return cfg.seed
    raise StormkitError("no seed given: pass --seed or set seed= in the config file")


def _worker_count(requested: int | None) -> int:
    workers = requested if requested is not None else 1
    cap = os.environ.get("STORMKIT_THREADS")
    if cap is not None:
        try:
            cap_n = int(cap)
        except ValueError as exc:
            raise StormkitError(f"STORMKIT_THREADS must be an integer, got {cap!r}") from exc
        if cap_n < 1:
            raise StormkitError(f"STORMKIT_THREADS must be >= 1, got {cap_n}")
        workers = min(workers, cap_n)
    return max(1, workers)


# -- subcommands --------------------------------------------------------------


def _cmd_degrade(args: argparse.Namespace) -> int:
    run_cfg = load_config(args.config)
    seed = _resolve_seed(args.seed, run_cfg)
    cfg = run_cfg.degrade_config()
    if args.apply_prob is not None:
        if not 0.0 <= args.apply_prob <= 1.0:
            raise StormkitError(f"--apply-prob must be in [0, 1], got {args.apply_prob}")
        cfg = dataclasses.replace(cfg, apply_prob=args.apply_prob)
    if args.category is not None:
        cfg = cfg.force_category(args.category)
    if args.severity is not None:
        cfg = cfg.force_severity(args.severity)
    cfg.validate()

    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise StormkitError(f"input directory not found: {in_dir}")
    paths = sorted(in_dir.glob("*.png"))
    if not paths:
        raise StormkitError(f"no .png images found in {in_dir}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def process(path: Path) -> dict:
        img = read_image_png(path)
        rng = derive_rng(seed, "degrade", path.stem)
        out, record = degrade(img, rng, cfg)
        write_image_png(out_dir / path.name, out)
        return {"frame": path.stem, **record.to_json()}

    workers = _worker_count(args.workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(process, paths))
    else:
        records = [process(p) for p in paths]

    with open(out_dir / "records.jsonl", "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    argv = ["degrade", "--in", str(in_dir), "--out", str(out_dir), "--seed", str(seed)]
    if args.apply_prob is not None:
        argv += ["--apply-prob", repr(args.apply_prob)]
    if args.category is not None:
        argv += ["--category", args.category]
    if args.severity is not None:
        argv += ["--severity", args.severity]
    if args.config is not None:
        argv += ["--config", args.config]
    write_run_manifest(
        out_dir,
        "degrade",
        argv,
        seed,
        [p.name for p in paths],
        dataclasses.asdict(cfg),
    )
    print(f"degraded {len(paths)} images -> {out_dir}")
    return 0


def _cmd_plan(args: argparse.Namespace) -> int:
    run_cfg = load_config(args.config)
    seed = _resolve_seed(args.seed, run_cfg)
    manifest = read_manifest(args.manifest)
    plan = build_plan(manifest, args.iters, seed)
    out = Path(args.out)
    write_plan(out, plan)
    stats = plan_stats(plan)
    write_run_manifest(
        out,
        "plan",
        ["plan", "--manifest", str(args.manifest), "--iters", str(args.iters),
         "--seed", str(seed), "--out", str(out)],
        seed,
        [str(args.manifest)],
        {"iterations": args.iters, "scenes": len(manifest.scenes)},
    )
    per_variant = stats["per_variant"]
    print(
        f"wrote {stats['total']} entries over {len(manifest.scenes)} scenes "
        f"(clean {per_variant['clean']}, degraded {per_variant['degraded']}) -> {out}"
    )
    return 0


def _cmd_fuse(args: argparse.Namespace) -> int:
    fused = fuse_directory(args.scene)
    require_probmap(fused)
    out = Path(args.out)
    write_probmap(out, fused)
    inputs = sorted(p.name for p in Path(args.scene).glob("*.pmap"))
    write_run_manifest(
        out,
        "fuse",
        ["fuse", "--scene", str(args.scene), "--out", str(out)],
        None,
        inputs,
        {"frames": len(inputs), "shape": list(fused.shape)},
    )
    print(f"fused {len(inputs)} frames -> {out}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.manifest)
    report = evaluate_scenes(manifest, args.pred)
    out = Path(args.report)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_run_manifest(
        out,
        "eval",
        ["eval", "--manifest", str(args.manifest), "--pred", str(args.pred),
         "--report", str(out)],
        None,
        [str(args.manifest), str(args.pred)],
        {"num_scenes": report["num_scenes"], "num_classes": report["num_classes"]},
    )
    g = report["global"]
    print(f"mIoU {g['miou']:.4f}  mAcc {g['macc']:.4f}  aAcc {g['aacc']:.4f} -> {out}")
    return 0


def _cmd_soup(args: argparse.Namespace) -> int:
    paths = list(args.archives)
    if paths and paths[0] == "check":
        if args.out is not None:
            raise StormkitError("--out is not used with 'soup check'")
        paths = paths[1:]
        archives = [read_archive(p) for p in paths]
        report = compat_check(archives)
        if report:
            for line in report:
                print(line)
            return 1
        print(f"compatible: {len(archives)} archives, {len(archives[0])} tensors")
        return 0
    if args.out is None:
        raise StormkitError("--out is required (or use 'soup check A B ...')")
    archives = [read_archive(p) for p in paths]
    averaged = soup(archives)
    out = Path(args.out)
    write_archive(out, averaged)
    write_run_manifest(
        out,
        "soup",
        ["soup", "--out", str(out)] + [str(p) for p in paths],
        None,
        [str(p) for p in paths],
        {"archives": len(paths), "tensors": len(averaged)},
    )
    print(f"averaged {len(paths)} archives ({len(averaged)} tensors) -> {out}")
    return 0


def _cmd_recalib_check(args: argparse.Namespace) -> int:
    worst = gradient_check(
        channels=args.channels,
        spatial=args.spatial,
        trials=args.trials,
        step=args.step,
        seed=args.seed,
        gate_source=args.gate_source,
    )
    print(
        f"max relative error {worst:.3e} over {args.trials} trials "
        f"(channels={args.channels}, spatial={args.spatial}, gate={args.gate_source})"
    )
    if worst >= GRADIENT_TOLERANCE:
        print(f"FAIL: exceeds tolerance {GRADIENT_TOLERANCE:.1e}", file=sys.stderr)
        return 1
    return 0


def _cmd_recalib_params(args: argparse.Namespace) -> int:
    try:
        dims = [int(d) for d in args.dims.split(",") if d.strip()]
    except ValueError as exc:
        raise StormkitError(f"--dims must be comma-separated integers, got {args.dims!r}") from exc
    if not dims:
        raise StormkitError("--dims is empty")
    total = 0
    for channels in dims:
        count = param_count([channels])
        total += count
        print(f"stage C={channels}: {count}")
    print(f"total: {total}")
    return 0


def _cmd_augstats(args: argparse.Namespace) -> int:
    run_cfg = load_config(args.config)
    seed = _resolve_seed(args.seed, run_cfg)
    cfg = run_cfg.degrade_config()
    if args.apply_prob is not None:
        cfg = dataclasses.replace(cfg, apply_prob=args.apply_prob)
    cfg.validate()
    rng = derive_rng(seed, "augstats")
    applied = 0
    counts = {c: 0 for c in CATEGORIES}
    for _ in range(args.n):
        record = sample_plan(rng, cfg)
        if record.applied:
            applied += 1
            counts[record.category] += 1
    print(f"applied {applied / args.n:.5f} of {args.n} (target {cfg.apply_prob})")
    for category in CATEGORIES:
        freq = counts[category] / applied if applied else float("nan")
        print(f"{category:5s} {freq:.5f} (target {cfg.category_weights[category]})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stormkit",
        description="Weather degradation synthesis, sampling plans, fusion, metrics, and model soups.",
    )
    parser.add_argument("--version", action="version", version=f"stormkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="synthesize weather degradations over a PNG directory")
    p.add_argument("--in", dest="in_dir", required=True, help="input directory of RGB PNGs")
    p.add_argument("--out", dest="out_dir", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--apply-prob", type=float, default=None)
    p.add_argument("--category", choices=CATEGORIES, default=None,
                   help="force a single degradation category")
    p.add_argument("--severity", choices=SEVERITIES, default=None,
                   help="force a single severity level")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel workers (capped by STORMKIT_THREADS)")
    p.add_argument("--config", default=None, help="key=value config file")
    p.set_defaults(func=_cmd_degrade)

    p = sub.add_parser("plan", help="build a deterministic scene-balanced sampling plan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("fuse", help="average the probability maps of one scene")
    p.add_argument("--scene", required=True, help="directory of .pmap frames")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("eval", help="fuse, decode, and score scenes against labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred", required=True, help="directory of <scene>/<frame>.pmap files")
    p.add_argument("--report", required=True, help="output JSON report path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("soup", help="uniform-average checkpoint archives (or: soup check A B ...)")
    p.add_argument("archives", nargs="+",
                   help="archive paths; prefix with 'check' to only verify compatibility")
    p.add_argument("--out", default=None, help="output archive path")
    p.set_defaults(func=_cmd_soup)

    p = sub.add_parser("recalib", help="recalibration adapter checks")
    rsub = p.add_subparsers(dest="recalib_command", required=True)
    pc = rsub.add_parser("check", help="verify analytic gradients against finite differences")
    pc.add_argument("--channels", type=int, default=8)
    pc.add_argument("--trials", type=int, default=20)
    pc.add_argument("--spatial", type=int, default=5)
    pc.add_argument("--step", type=float, default=1e-5)
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--gate-source", choices=GATE_SOURCES, default="bottleneck")
    pc.set_defaults(func=_cmd_recalib_check)
    pp = rsub.add_parser("params", help="count adapter parameters for given stage widths")
    pp.add_argument("--dims", required=True, help="comma-separated channel counts")
    pp.set_defaults(func=_cmd_recalib_params)

    p = sub.add_parser("augstats", help="print empirical degradation sampling frequencies")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--apply-prob", type=float, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_augstats)

    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except StormkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
