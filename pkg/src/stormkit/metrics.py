"""Segmentation metrics over mergeable confusion matrices, plus the
scene-level evaluation pipeline (fuse, decode, accumulate, score).

Rows index ground truth, columns index predictions; pixels labeled with the
ignore value 255 are excluded.  Matrices add, so per-scene evaluation can
run in parallel and merge at the end.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

import numpy as np

from stormkit.core import IGNORE_INDEX, StormkitError, read_label_png
from stormkit.fusion import argmax_labels, fuse_scene, read_probmap
from stormkit.sampler import SceneManifest


def new_confusion(num_classes: int) -> np.ndarray:
    if num_classes < 1:
        raise StormkitError(f"num_classes must be >= 1, got {num_classes}")
    return np.zeros((num_classes, num_classes), dtype=np.int64)


def accumulate(cm: np.ndarray, pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Return ``cm`` plus the counts from one (pred, gt) pair.

    Ignore-index pixels in ``gt`` are skipped; any other class index at or
    above K is an error.
    """
    cm = np.asarray(cm)
    k = cm.shape[0]
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise StormkitError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    mask = gt != IGNORE_INDEX
    gt_used = gt[mask].astype(np.int64)
    pred_used = pred[mask].astype(np.int64)
    if gt_used.size:
        if int(gt_used.max()) >= k:
            raise StormkitError(f"ground-truth class {int(gt_used.max())} out of range for K={k}")
        if int(pred_used.max()) >= k or int(pred_used.min()) < 0:
            raise StormkitError(f"predicted class out of range for K={k}")
    counts = np.bincount(k * gt_used + pred_used, minlength=k * k).reshape(k, k)
    return cm + counts


def metrics(cm: np.ndarray) -> dict:
    """Per-class IoU plus mIoU, mAcc (mean per-class recall), and aAcc.

    Classes absent from both ground truth and predictions have undefined
    IoU (``None``) and are excluded from mIoU; classes without ground-truth
    pixels are excluded from mAcc.
    """
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total == 0:
        raise StormkitError("confusion matrix is empty")
    tp = np.diag(cm)
    gt_total = cm.sum(axis=1)
    pred_total = cm.sum(axis=0)
    union = gt_total + pred_total - tp

    iou = [float(tp[c] / union[c]) if union[c] > 0 else None for c in range(cm.shape[0])]
    defined = [v for v in iou if v is not None]
    recall = [tp[c] / gt_total[c] for c in range(cm.shape[0]) if gt_total[c] > 0]
    return {
        "iou": iou,
        "miou": float(np.mean(defined)),
        "macc": float(np.mean(recall)),
        "aacc": float(tp.sum() / total),
    }


def miou_from_per_class(ious: Iterable[float]) -> float:
    """Arithmetic mean of the given per-class IoU values (any scale)."""
    values = [float(v) for v in ious]
    if not values:
        raise StormkitError("no per-class IoU values given")
    return sum(values) / len(values)


def _scene_label_path(scene) -> str:
    paths = {f.label_path for f in scene.frames if f.label_path}
    if not paths:
        raise StormkitError(f"scene {scene.scene_id!r} has no label path")
    if len(paths) > 1:
        raise StormkitError(
            f"scene {scene.scene_id!r} lists {len(paths)} distinct label paths; expected one"
        )
    return paths.pop()


def evaluate_scenes(manifest: SceneManifest, pred_dir: str | Path) -> dict:
    """Fuse, decode, and score every scene; report global and per-scene metrics.

    Probability maps are expected at ``pred_dir/<scene_id>/<frame_id>.pmap``,
    one per manifest frame; each scene's single label map is read from the
    manifest.  Missing inputs are reported all at once, grouped by scene.
    """
    manifest.validate()
    pred_dir = Path(pred_dir)
    missing: list[str] = []
    for scene in manifest.scenes:
        try:
            _scene_label_path(scene)
        except StormkitError as exc:
            missing.append(str(exc))
        for frame in scene.frames:
            path = pred_dir / scene.scene_id / f"{frame.frame_id}.pmap"
            if not path.exists():
                missing.append(f"scene {scene.scene_id!r}: missing probability map {path}")
    if missing:
        raise StormkitError("missing evaluation inputs:\n  " + "\n  ".join(missing))

    num_classes: int | None = None
    total_cm: np.ndarray | None = None
    per_scene: dict[str, dict] = {}
    for scene in manifest.scenes:
        frames = [
            read_probmap(pred_dir / scene.scene_id / f"{frame.frame_id}.pmap")
            for frame in scene.frames
        ]
        fused = fuse_scene(frames)
        if num_classes is None:
            num_classes = fused.shape[0]
            total_cm = new_confusion(num_classes)
        elif fused.shape[0] != num_classes:
            raise StormkitError(
                f"scene {scene.scene_id!r} has {fused.shape[0]} classes, expected {num_classes}"
            )
        pred = argmax_labels(fused)
        gt = read_label_png(_scene_label_path(scene))
        if gt.shape != pred.shape:
            raise StormkitError(
                f"scene {scene.scene_id!r}: label shape {gt.shape} != prediction shape {pred.shape}"
            )
        scene_cm = accumulate(new_confusion(num_classes), pred, gt)
        per_scene[scene.scene_id] = metrics(scene_cm)
        total_cm = total_cm + scene_cm

    return {
        "num_classes": num_classes,
        "num_scenes": len(manifest.scenes),
        "global": metrics(total_cm),
        "scenes": per_scene,
    }
