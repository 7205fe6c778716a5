"""Motion-guided label propagation and box fusion for video detections.

The package turns per-frame detector output plus dense motion fields into
denser, steadier pseudo labels: neighbouring frames' boxes are carried to a
target frame along composed motion, optionally re-scored by visual
similarity, and merged by weighted box fusion (or classic NMS-family
baselines). A synthetic-sequence generator and an AP/mAP evaluator make the
whole loop testable without any real data.
"""

from .errors import (
    CliUsageError,
    EmbeddingLookupError,
    EmptyCropError,
    FlowFormatError,
    FlowLengthError,
    MissingFlowError,
    PropfuseError,
    SceneValidationError,
    ValidationError,
    VocabularyError,
)
from .evaluation import ConsistencyReport, EvalReport, average_precision, evaluate, self_consistency
from .fusion import FusionConfig, FusionResult, fuse, fuse_candidates, nms, nmw, soft_nms
from .geometry import BBox, Detection, FrameSize, LabelSet, clip_to_frame, iou
from .io import DetectionRecord, read_detections, read_frame, write_detections, write_frame
from .manifest import SequenceManifest, load_manifest
from .motion import (
    ComposedMotion,
    FlowStore,
    Frame,
    MotionField,
    constant_field,
    read_flow,
    transfer_box,
    transfer_point,
    write_flow,
)
from .pipeline import PipelineConfig, PipelineRun, load_config, run_pipeline
from .propagation import CandidateSet, build_candidates, propagate_from_offset
from .similarity import (
    FallbackProvider,
    FeatureVector,
    PatchDescriptor,
    PrecomputedEmbeddings,
    cosine_sim,
    rescore,
)
from .synth import DetectorNoise, ObjectSpec, SceneSpec, SequenceBundle, generate, write_bundle

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "CandidateSet",
    "CliUsageError",
    "ComposedMotion",
    "ConsistencyReport",
    "Detection",
    "DetectionRecord",
    "DetectorNoise",
    "EmbeddingLookupError",
    "EmptyCropError",
    "EvalReport",
    "FallbackProvider",
    "FeatureVector",
    "FlowFormatError",
    "FlowLengthError",
    "FlowStore",
    "Frame",
    "FrameSize",
    "FusionConfig",
    "FusionResult",
    "LabelSet",
    "MissingFlowError",
    "MotionField",
    "ObjectSpec",
    "PatchDescriptor",
    "PipelineConfig",
    "PipelineRun",
    "PrecomputedEmbeddings",
    "PropfuseError",
    "SceneSpec",
    "SceneValidationError",
    "SequenceBundle",
    "SequenceManifest",
    "ValidationError",
    "VocabularyError",
    "average_precision",
    "build_candidates",
    "clip_to_frame",
    "constant_field",
    "cosine_sim",
    "evaluate",
    "fuse",
    "fuse_candidates",
    "generate",
    "iou",
    "load_config",
    "load_manifest",
    "nms",
    "nmw",
    "propagate_from_offset",
    "read_detections",
    "read_flow",
    "read_frame",
    "rescore",
    "run_pipeline",
    "self_consistency",
    "soft_nms",
    "transfer_box",
    "transfer_point",
    "write_bundle",
    "write_detections",
    "write_flow",
    "write_frame",
    "__version__",
]
