"""End-to-end per-frame processing: gather candidates, fuse, write labels.

With k=0 there is nothing to carry in and nothing to corroborate, so the
pipeline degenerates to the plain thresholded teacher labels; fusion is
bypassed entirely in that case. With k>0 every target frame is processed
independently (optionally across a thread pool) and the per-frame label
files are written under <out>/labels/ named by frame index, so the output
tree is identical no matter the completion order.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .errors import CliUsageError, ValidationError
from .fusion import METHODS, FusionConfig, FusionResult, fuse_candidates
from .geometry import Detection, LabelSet
from .io import CandidateMeta, DetectionRecord, write_detections
from .manifest import SequenceManifest
from .propagation import CandidateSet, build_candidates, chain_pairs, offset_order, threshold_labels
from .similarity import FallbackProvider, PatchDescriptor, PrecomputedEmbeddings

__all__ = [
    "PipelineConfig",
    "PipelineRun",
    "parse_config_file",
    "run_pipeline",
    "validate_flow_coverage",
    "build_provider",
    "candidate_records",
]

log = logging.getLogger("propfuse.pipeline")

COMPOSITIONS = ("trajectory", "additive")
PROVIDERS = ("patch", "precomputed")
SOURCE_COUNT_MODES = ("effective", "literal")
MISS_POLICIES = ("drop", "fallback")


@dataclass
class PipelineConfig:
    """Every knob of the per-frame pipeline, file- and flag-configurable."""

    k: int = 1
    teacher_threshold: float = 0.4
    iou_threshold: float = 0.5
    post_threshold: float = 0.1
    method: str = "swbf"
    composition: str = "trajectory"
    min_coverage: float = 0.25
    feature_provider: str = "patch"
    embed_miss: str = "drop"
    source_count_mode: str = "effective"
    match: str = "first"
    snms_sigma: float = 0.5
    patch_size: int = 16
    num_sources: Optional[int] = None
    jobs: int = 1
    small_height_threshold: float = 45.0

    def __post_init__(self):
        if self.k < 0:
            raise ValidationError(f"k must be >= 0, got {self.k}")
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.composition not in COMPOSITIONS:
            raise ValidationError(
                f"unknown composition {self.composition!r}; expected one of {COMPOSITIONS}"
            )
        if self.feature_provider not in PROVIDERS:
            raise ValidationError(
                f"unknown feature provider {self.feature_provider!r}; expected one of {PROVIDERS}"
            )
        if self.embed_miss not in MISS_POLICIES:
            raise ValidationError(
                f"unknown embed_miss policy {self.embed_miss!r}; expected one of {MISS_POLICIES}"
            )
        if self.source_count_mode not in SOURCE_COUNT_MODES:
            raise ValidationError(
                f"unknown source_count_mode {self.source_count_mode!r}; "
                f"expected one of {SOURCE_COUNT_MODES}"
            )
        for name in ("teacher_threshold", "post_threshold", "min_coverage"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValidationError(f"iou_threshold must lie in (0, 1), got {self.iou_threshold}")
        if self.num_sources is not None and self.num_sources < 1:
            raise ValidationError(f"num_sources must be >= 1, got {self.num_sources}")
        if self.jobs < 1:
            raise ValidationError(f"jobs must be >= 1, got {self.jobs}")
        if self.patch_size < 2:
            raise ValidationError(f"patch_size must be >= 2, got {self.patch_size}")
        if self.snms_sigma <= 0.0:
            raise ValidationError(f"snms_sigma must be > 0, got {self.snms_sigma}")

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)

    def fusion_config(self, num_sources: int) -> FusionConfig:
        return FusionConfig(
            method=self.method,
            iou_threshold=self.iou_threshold,
            num_sources=num_sources,
            post_threshold=self.post_threshold,
            snms_sigma=self.snms_sigma,
            match=self.match,
        )

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)


_CONFIG_TYPES = {
    "k": int,
    "teacher_threshold": float,
    "iou_threshold": float,
    "post_threshold": float,
    "method": str,
    "composition": str,
    "min_coverage": float,
    "feature_provider": str,
    "embed_miss": str,
    "source_count_mode": str,
    "match": str,
    "snms_sigma": float,
    "patch_size": int,
    "num_sources": int,
    "jobs": int,
    "small_height_threshold": float,
}


def parse_config_file(path: str | Path) -> dict:
    """Flat key=value config, '#' comments, unknown keys rejected by name."""
    values: dict = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliUsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.split("#", 1)[0].strip()
        caster = _CONFIG_TYPES.get(key)
        if caster is None:
            raise CliUsageError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = caster(value)
        except ValueError as exc:
            raise CliUsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return values


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, then config file values, then explicit flag overrides."""
    values: dict = {}
    if path is not None:
        values.update(parse_config_file(path))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _CONFIG_TYPES:
            raise CliUsageError(f"unknown config key {key!r}")
        values[key] = val
    return PipelineConfig(**values)


def validate_flow_coverage(
    manifest: SequenceManifest,
    k: int,
    targets: Sequence[int],
) -> None:
    """Fail up front if any needed motion field between existing frames is absent.

    Offsets whose source frame falls off the end of the sequence are fine
    (they are omitted per frame); a hole in the flow graph between frames
    that both exist is an error naming the missing pairs.
    """
    missing: set[tuple[int, int]] = set()
    for t in targets:
        for off in offset_order(k):
            source = t - off
            if not manifest.has_frame(source):
                continue
            for a, b in chain_pairs(t, off):
                if not manifest.flows.has(a, b):
                    missing.add((a, b))
    if missing:
        pairs = ", ".join(f"{a}->{b}" for a, b in sorted(missing))
        raise ValidationError(f"manifest is missing motion fields: {pairs}")


def build_provider(manifest: SequenceManifest, config: PipelineConfig):
    """The feature provider the swbf method will rescore with."""
    patch = PatchDescriptor(manifest.frame_image, patch_size=config.patch_size)
    if config.feature_provider == "patch":
        return patch
    if manifest.embeddings_path is None:
        raise ValidationError(
            "config asks for precomputed embeddings but the manifest has none"
        )
    pre = PrecomputedEmbeddings.load(manifest.embeddings_path)
    if config.embed_miss == "fallback":
        return FallbackProvider(pre, patch)
    return pre


def candidate_records(
    candidates: CandidateSet,
    class_name,
    k: int,
) -> tuple[list[DetectionRecord], CandidateMeta]:
    """Turn a candidate set into serializable records plus its header line."""
    records = []
    for det, src_box in zip(candidates.detections, candidates.source_boxes):
        records.append(
            DetectionRecord(
                frame=candidates.frame_index,
                class_name=class_name(det.class_id),
                bbox=det.bbox.as_tuple(),
                score=det.score,
                source_offset=det.source_offset,
                source_bbox=None if src_box is None else src_box.as_tuple(),
            )
        )
    meta = CandidateMeta(
        frame=candidates.frame_index,
        effective_sources=candidates.effective_sources,
        k=k,
    )
    return records, meta


@dataclass
class PipelineRun:
    """In-memory results plus the JSON-ready run report."""

    labels: dict[int, LabelSet] = field(default_factory=dict)
    report: dict = field(default_factory=dict)
    out_dir: Optional[Path] = None


def _teacher_passthrough(candidates: CandidateSet, config: PipelineConfig) -> FusionResult:
    kept = [d for d in candidates.detections if d.score > config.post_threshold]
    dropped = len(candidates.detections) - len(kept)
    return FusionResult(
        labels=LabelSet(candidates.frame_index, kept),
        clusters=len(kept),
        dropped_rescore=0,
        dropped_post=dropped,
    )


def run_pipeline(
    manifest: SequenceManifest,
    config: PipelineConfig,
    targets: Optional[Sequence[int]] = None,
    out_dir: Optional[str | Path] = None,
    keep_going: bool = False,
) -> PipelineRun:
    """Process every target frame and optionally write the output tree.

    The output tree holds labels/fused_<frame>.jsonl per frame plus a
    run_report.json with per-frame counts and per-stage wall-clock totals.
    """
    if targets is None:
        targets = manifest.frame_indices()
    else:
        targets = list(targets)
        unknown = [t for t in targets if not manifest.has_frame(t)]
        if unknown:
            raise ValidationError(f"target frames not in manifest: {unknown}")
    if config.k > 0:
        validate_flow_coverage(manifest, config.k, targets)

    provider = None
    if config.method == "swbf" and config.k > 0:
        provider = build_provider(manifest, config)

    labels_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        labels_dir = out_dir / "labels"
        labels_dir.mkdir(parents=True, exist_ok=True)

    def process(t: int) -> tuple[int, LabelSet, dict]:
        t0 = time.perf_counter()
        candidates = build_candidates(
            t,
            config.k,
            manifest.teacher_labels,
            manifest.flows,
            manifest.size,
            teacher_threshold=config.teacher_threshold,
            mode=config.composition,
            min_coverage=config.min_coverage,
        )
        t1 = time.perf_counter()
        if config.k == 0:
            result = _teacher_passthrough(candidates, config)
            num_sources = 1
        else:
            if config.num_sources is not None:
                num_sources = config.num_sources
            elif config.source_count_mode == "literal":
                num_sources = 2 * config.k + 1
            else:
                num_sources = candidates.effective_sources
            result = fuse_candidates(candidates, config.fusion_config(num_sources), provider)
        t2 = time.perf_counter()
        if labels_dir is not None:
            records = [
                DetectionRecord(
                    frame=t,
                    class_name=manifest.class_name(d.class_id),
                    bbox=d.bbox.as_tuple(),
                    score=d.score,
                )
                for d in result.labels.detections
            ]
            write_detections(records, labels_dir / f"fused_{t:06d}.jsonl")
        t3 = time.perf_counter()
        stats = {
            "frame": t,
            "candidates": len(candidates),
            "per_offset": {str(k): v for k, v in candidates.count_by_offset().items()},
            "effective_sources": candidates.effective_sources,
            "num_sources": num_sources,
            "clusters": result.clusters,
            "dropped_rescore": result.dropped_rescore,
            "dropped_post": result.dropped_post,
            "output": len(result.labels.detections),
            "seconds": {"build": t1 - t0, "fuse": t2 - t1, "write": t3 - t2},
        }
        log.info("frame %d: %d candidates -> %d fused", t, stats["candidates"], stats["output"])
        return t, result.labels, stats

    run = PipelineRun(out_dir=out_dir)
    frame_stats: dict[int, dict] = {}
    errors: list[dict] = []
    started = time.perf_counter()
    if config.jobs == 1:
        for t in targets:
            try:
                _, labels, stats = process(t)
            except Exception as exc:
                if not keep_going:
                    raise
                log.debug("frame %d failed: %s", t, exc)
                errors.append({"frame": t, "error": str(exc)})
                continue
            run.labels[t] = labels
            frame_stats[t] = stats
    else:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            futures = {t: pool.submit(process, t) for t in targets}
            for t in targets:
                try:
                    _, labels, stats = futures[t].result()
                except Exception as exc:
                    if not keep_going:
                        raise
                    log.debug("frame %d failed: %s", t, exc)
                    errors.append({"frame": t, "error": str(exc)})
                    continue
                run.labels[t] = labels
                frame_stats[t] = stats
    total = time.perf_counter() - started

    ordered = [frame_stats[t] for t in sorted(frame_stats)]
    run.report = {
        "config": config.to_json_dict(),
        "frames": ordered,
        "errors": errors,
        "totals": {
            "frames": len(ordered),
            "candidates": sum(s["candidates"] for s in ordered),
            "output": sum(s["output"] for s in ordered),
        },
        "stages": {
            "build_s": sum(s["seconds"]["build"] for s in ordered),
            "fuse_s": sum(s["seconds"]["fuse"] for s in ordered),
            "write_s": sum(s["seconds"]["write"] for s in ordered),
            "total_s": total,
        },
    }
    if out_dir is not None:
        report_path = Path(out_dir) / "run_report.json"
        report_path.write_text(
            json.dumps(run.report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return run
