"""Scene-balanced sampling plans with 50/50 clean/degraded mixing.

Every iteration draws a scene uniformly (with replacement), flips a fair
coin for the clean/degraded variant, then draws a frame uniformly from that
scene's frames of the chosen variant.  Scenes therefore contribute equally
in expectation regardless of how many frames they contain.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from stormkit.core import StormkitError, derive_rng

VARIANTS = ("clean", "degraded")


@dataclass(frozen=True)
class Frame:
    frame_id: str
    variant: str
    image_path: str
    label_path: str | None = None


@dataclass(frozen=True)
class Scene:
    scene_id: str
    frames: tuple[Frame, ...]

    def frames_of(self, variant: str) -> tuple[Frame, ...]:
        return tuple(f for f in self.frames if f.variant == variant)


@dataclass(frozen=True)
class SceneManifest:
    scenes: tuple[Scene, ...]

    def validate(self) -> "SceneManifest":
        if not self.scenes:
            raise StormkitError("manifest is empty")
        seen_scenes: set[str] = set()
        for scene in self.scenes:
            if scene.scene_id in seen_scenes:
                raise StormkitError(f"duplicate scene_id {scene.scene_id!r}")
            seen_scenes.add(scene.scene_id)
            seen_frames: set[str] = set()
            for frame in scene.frames:
                if frame.variant not in VARIANTS:
                    raise StormkitError(
                        f"scene {scene.scene_id!r} frame {frame.frame_id!r}: "
                        f"variant must be one of {VARIANTS}, got {frame.variant!r}"
                    )
                if frame.frame_id in seen_frames:
                    raise StormkitError(
                        f"scene {scene.scene_id!r}: duplicate frame_id {frame.frame_id!r}"
                    )
                seen_frames.add(frame.frame_id)
            for variant in VARIANTS:
                if not scene.frames_of(variant):
                    raise StormkitError(
                        f"scene {scene.scene_id!r} has no {variant} frame"
                    )
        return self

    def scene_ids(self) -> tuple[str, ...]:
        return tuple(s.scene_id for s in self.scenes)


def parse_manifest(lines: "list[str] | tuple[str, ...]", source: str = "<memory>") -> SceneManifest:
    """Parse tab-separated manifest lines.

    Line format: ``scene_id<TAB>frame_id<TAB>variant<TAB>image_path`` with an
    optional fifth ``label_path`` column.  Blank lines and ``#`` comments are
    skipped.  Scenes keep first-appearance order.
    """
    frames_by_scene: dict[str, list[Frame]] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (4, 5):
            raise StormkitError(
                f"{source}:{lineno}: expected 4 or 5 tab-separated fields, got {len(fields)}"
            )
        scene_id, frame_id, variant, image_path = fields[:4]
        label_path = fields[4] if len(fields) == 5 and fields[4] else None
        frames_by_scene.setdefault(scene_id, []).append(
            Frame(frame_id=frame_id, variant=variant, image_path=image_path, label_path=label_path)
        )
    manifest = SceneManifest(
        scenes=tuple(Scene(scene_id=s, frames=tuple(fs)) for s, fs in frames_by_scene.items())
    )
    return manifest.validate()


def read_manifest(path: str | Path) -> SceneManifest:
    path = Path(path)
    if not path.exists():
        raise StormkitError(f"manifest not found: {path}")
    return parse_manifest(path.read_text().splitlines(), source=str(path))


@dataclass(frozen=True)
class PlanEntry:
    iteration: int
    scene_id: str
    frame_id: str
    variant: str


@dataclass(frozen=True)
class SamplePlan:
    entries: tuple[PlanEntry, ...]


def build_plan(manifest: SceneManifest, iterations: int, seed: int) -> SamplePlan:
    """Build a deterministic iteration plan for ``iterations`` training steps."""
    manifest.validate()
    if iterations < 1:
        raise StormkitError(f"iterations must be >= 1, got {iterations}")
    rng = derive_rng(seed, "plan")
    frames_by_variant = [
        {variant: scene.frames_of(variant) for variant in VARIANTS}
        for scene in manifest.scenes
    ]
    entries = []
    n_scenes = len(manifest.scenes)
    for it in range(iterations):
        s_idx = int(rng.integers(n_scenes))
        variant = "clean" if rng.random() < 0.5 else "degraded"
        frames = frames_by_variant[s_idx][variant]
        frame = frames[int(rng.integers(len(frames)))]
        entries.append(
            PlanEntry(
                iteration=it,
                scene_id=manifest.scenes[s_idx].scene_id,
                frame_id=frame.frame_id,
                variant=variant,
            )
        )
    return SamplePlan(entries=tuple(entries))


def plan_stats(plan: SamplePlan) -> dict:
    """Exact per-scene and per-variant counts; both sum to len(entries)."""
    per_scene: Counter[str] = Counter()
    per_variant: Counter[str] = Counter()
    for entry in plan.entries:
        per_scene[entry.scene_id] += 1
        per_variant[entry.variant] += 1
    return {
        "total": len(plan.entries),
        "per_scene": dict(per_scene),
        "per_variant": {v: per_variant.get(v, 0) for v in VARIANTS},
    }


def write_plan(path: str | Path, plan: SamplePlan) -> None:
    with open(path, "w") as fh:
        for e in plan.entries:
            fh.write(f"{e.iteration}\t{e.scene_id}\t{e.frame_id}\t{e.variant}\n")


def read_plan(path: str | Path) -> SamplePlan:
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise StormkitError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
        entries.append(
            PlanEntry(
                iteration=int(fields[0]),
                scene_id=fields[1],
                frame_id=fields[2],
                variant=fields[3],
            )
        )
    return SamplePlan(entries=tuple(entries))
