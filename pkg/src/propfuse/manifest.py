"""Sequence manifests: the JSON file that ties frames, detections, and flows together.

A manifest lists the frame size, the class vocabulary (index -> name), one
entry per frame (frame image plus its teacher detections), the motion-field
files keyed by ordered (from, to) frame pair, and optional ground-truth and
embedding files. Paths are relative to the manifest's directory and must
exist at load time.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import ValidationError, VocabularyError
from .geometry import BBox, Detection, FrameSize, LabelSet
from .io import read_detections, read_frame
from .motion import FlowStore, Frame

__all__ = ["FrameEntry", "SequenceManifest", "load_manifest"]


@dataclass
class FrameEntry:
    index: int
    frame_path: Path
    detections_path: Path


class SequenceManifest:
    """Loaded, validated view of a sequence directory."""

    def __init__(
        self,
        root: Path,
        size: FrameSize,
        classes: list[str],
        frames: dict[int, FrameEntry],
        flows: FlowStore,
        gt_path: Optional[Path] = None,
        embeddings_path: Optional[Path] = None,
    ):
        self.root = root
        self.size = size
        self.classes = classes
        self.frames = frames
        self.flows = flows
        self.gt_path = gt_path
        self.embeddings_path = embeddings_path
        self._class_to_id = {name: i for i, name in enumerate(classes)}
        self._labels_cache: dict[int, LabelSet] = {}
        self._frame_cache: dict[int, Frame] = {}
        self._gt_cache: Optional[dict[int, LabelSet]] = None
        self._lock = threading.Lock()

    # -- vocabulary ---------------------------------------------------------

    def class_id(self, name: str) -> int:
        try:
            return self._class_to_id[name]
        except KeyError:
            raise VocabularyError([name])

    def class_name(self, class_id: int) -> str:
        if not 0 <= class_id < len(self.classes):
            raise VocabularyError([class_id])
        return self.classes[class_id]

    # -- frames and labels --------------------------------------------------

    def frame_indices(self) -> list[int]:
        return sorted(self.frames)

    def has_frame(self, index: int) -> bool:
        return index in self.frames

    def _records_to_labels(self, records, frame_index: int) -> LabelSet:
        labels = LabelSet(frame_index=frame_index)
        for rec in records:
            if rec.frame != frame_index:
                continue
            labels.detections.append(
                Detection(
                    class_id=self.class_id(rec.class_name),
                    bbox=BBox.from_sequence(rec.bbox),
                    score=rec.score,
                    source_offset=rec.source_offset,
                )
            )
        return labels

    def teacher_labels(self, index: int) -> Optional[LabelSet]:
        entry = self.frames.get(index)
        if entry is None:
            return None
        with self._lock:
            cached = self._labels_cache.get(index)
            if cached is None:
                records, _ = read_detections(entry.detections_path)
                cached = self._records_to_labels(records, index)
                self._labels_cache[index] = cached
            return cached

    def frame_image(self, index: int) -> Frame:
        entry = self.frames.get(index)
        if entry is None:
            raise ValidationError(f"manifest has no frame {index}")
        with self._lock:
            cached = self._frame_cache.get(index)
            if cached is None:
                cached = read_frame(entry.frame_path)
                if cached.size != self.size:
                    raise ValidationError(
                        f"frame {index} is {cached.size}, manifest says {self.size}"
                    )
                self._frame_cache[index] = cached
            return cached

    def ground_truth(self) -> dict[int, LabelSet]:
        if self.gt_path is None:
            raise ValidationError("manifest has no ground-truth file")
        with self._lock:
            if self._gt_cache is None:
                records, _ = read_detections(self.gt_path)
                by_frame: dict[int, LabelSet] = {}
                for rec in records:
                    labels = by_frame.setdefault(rec.frame, LabelSet(frame_index=rec.frame))
                    labels.detections.append(
                        Detection(
                            class_id=self.class_id(rec.class_name),
                            bbox=BBox.from_sequence(rec.bbox),
                            score=rec.score,
                        )
                    )
                self._gt_cache = by_frame
            return self._gt_cache


def load_manifest(path: str | Path) -> SequenceManifest:
    """Parse and validate a manifest file; all referenced files must exist."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError:
        raise
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: manifest must be a JSON object")
    root = path.parent

    try:
        size = FrameSize(int(obj["size"][0]), int(obj["size"][1]))
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise ValidationError(f"{path}: bad or missing size: {exc}") from exc
    classes = obj.get("classes")
    if not isinstance(classes, list) or not classes:
        raise ValidationError(f"{path}: classes must be a non-empty list")
    classes = [str(c) for c in classes]
    if len(set(classes)) != len(classes):
        raise ValidationError(f"{path}: duplicate class names in vocabulary")

    missing: list[str] = []

    def _resolve(rel: str) -> Path:
        p = root / rel
        if not p.is_file():
            missing.append(rel)
        return p

    frames: dict[int, FrameEntry] = {}
    for entry in obj.get("frames", []):
        try:
            idx = int(entry["index"])
            frame_path = _resolve(entry["frame"])
            det_path = _resolve(entry["detections"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: malformed frame entry {entry}: {exc}") from exc
        if idx in frames:
            raise ValidationError(f"{path}: duplicate frame index {idx}")
        frames[idx] = FrameEntry(idx, frame_path, det_path)
    if not frames:
        raise ValidationError(f"{path}: manifest lists no frames")

    flows = FlowStore()
    seen_pairs = set()
    for entry in obj.get("flows", []):
        try:
            a = int(entry["from"])
            b = int(entry["to"])
            flow_path = _resolve(entry["path"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: malformed flow entry {entry}: {exc}") from exc
        if (a, b) in seen_pairs:
            raise ValidationError(f"{path}: duplicate flow pair ({a}, {b})")
        seen_pairs.add((a, b))
        flows.add(a, b, flow_path)

    gt_path = _resolve(obj["gt"]) if obj.get("gt") else None
    embeddings_path = _resolve(obj["embeddings"]) if obj.get("embeddings") else None

    if missing:
        raise ValidationError(
            f"{path}: referenced files do not exist: " + ", ".join(sorted(missing))
        )
    return SequenceManifest(
        root=root,
        size=size,
        classes=classes,
        frames=frames,
        flows=flows,
        gt_path=gt_path,
        embeddings_path=embeddings_path,
    )
