import filecmp

import numpy as np
import pytest

from propfuse.errors import SceneValidationError, ValidationError
from propfuse.geometry import BBox, FrameSize
from propfuse.manifest import load_manifest
from propfuse.motion import sample
from propfuse.similarity import PrecomputedEmbeddings
from propfuse.synth import (
    DetectorNoise,
    InjectedFalsePositive,
    ObjectSpec,
    SceneSpec,
    generate,
    write_bundle,
)

import _bundles


def simple_spec(**overrides):
    base = dict(
        size=FrameSize(96, 72),
        length=5,
        classes=["car", "person"],
        objects=[
            ObjectSpec.linear(0, (20.0, 14.0), (4.0, 10.0), (6.0, 2.0), 5),
            ObjectSpec.linear(1, (10.0, 16.0), (70.0, 40.0), (-3.0, 0.0), 5, color=240),
        ],
        seed=7,
    )
    base.update(overrides)
    return SceneSpec(**base)


def assert_same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    stack = [cmp]
    while stack:
        node = stack.pop()
        assert not node.left_only and not node.right_only
        match, mismatch, errors = filecmp.cmpfiles(
            node.left, node.right, node.common_files, shallow=False
        )
        assert not mismatch and not errors, (mismatch, errors)
        stack.extend(node.subdirs.values())


class TestGenerate:
    def test_zero_noise_detector_equals_ground_truth(self):
        bundle = generate(simple_spec())
        for gt, det in zip(bundle.ground_truth, bundle.detections):
            assert gt.detections == det.detections
            for d in det.detections:
                assert d.score == 1.0

    def test_occlusion_hides_from_detector_only(self):
        spec = simple_spec(
            objects=[
                ObjectSpec.linear(0, (20.0, 14.0), (4.0, 10.0), (6.0, 2.0), 5, occlusion=[(2, 4)]),
            ]
        )
        bundle = generate(spec)
        for t in range(5):
            assert len(bundle.ground_truth[t]) == 1
            expected = 0 if 2 <= t < 4 else 1
            assert len(bundle.detections[t]) == expected

    def test_absent_removes_object_entirely(self):
        spec = simple_spec(
            objects=[
                ObjectSpec.linear(0, (20.0, 14.0), (4.0, 10.0), (6.0, 2.0), 5, absent=[(1, 3)]),
            ]
        )
        bundle = generate(spec)
        for t in range(5):
            expected = 0 if 1 <= t < 3 else 1
            assert len(bundle.ground_truth[t]) == expected
            assert len(bundle.detections[t]) == expected
        # no object motion stamped across the gap: sample inside where
        # the box would have been and find only background (zero)
        box = spec.objects[0].box(1)
        du, dv = sample(bundle.forward_flows[(1, 2)], box.x1 + 2, box.y1 + 2)
        assert (du, dv) == (0.0, 0.0)

    def test_forward_flow_exact_inside_and_at_corner(self):
        bundle = generate(simple_spec())
        fw = bundle.forward_flows[(1, 2)]
        car = simple_spec().objects[0].box(1)
        # interior point and the exact corner both read the velocity
        assert sample(fw, car.x1 + 1.0, car.y1 + 1.0) == (6.0, 2.0)
        assert sample(fw, car.x2, car.y2) == (6.0, 2.0)
        # far corner of the frame is background
        assert sample(fw, 95.0, 1.0) == (0.0, 0.0)

    def test_backward_flow_negates(self):
        bundle = generate(simple_spec())
        bw = bundle.backward_flows[(2, 1)]
        car = simple_spec().objects[0].box(2)
        assert sample(bw, car.x1 + 1.0, car.y1 + 1.0) == (-6.0, -2.0)

    def test_injected_false_positive_only_in_detections(self):
        spec = simple_spec(
            injected=[InjectedFalsePositive(frame=3, class_id=0, bbox=BBox(60, 50, 80, 66), score=0.8)]
        )
        bundle = generate(spec)
        dets3 = bundle.detections[3].detections
        spurious = [d for d in dets3 if d.score == 0.8]
        assert len(spurious) == 1
        assert spurious[0].bbox == BBox(60.0, 50.0, 80.0, 66.0)
        assert all(d.score == 1.0 for d in bundle.ground_truth[3].detections)

    def test_noise_respects_score_ranges(self):
        spec = simple_spec(
            noise=DetectorNoise(
                miss_prob=0.2,
                jitter_sigma=0.5,
                fp_rate=0.5,
                fp_score_range=(0.45, 0.6),
                true_score_range=(0.7, 0.95),
            ),
            length=12,
        )
        # stretch the trajectories to 12 frames without leaving the frame
        spec.objects = [
            ObjectSpec.linear(0, (20.0, 14.0), (4.0, 10.0), (3.0, 1.0), 12),
            ObjectSpec.linear(1, (10.0, 16.0), (70.0, 40.0), (-3.0, 0.0), 12, color=240),
        ]
        bundle = generate(spec)
        scores = [d.score for ls in bundle.detections for d in ls.detections]
        assert scores
        for s in scores:
            assert 0.45 <= s <= 0.95
            assert s < 0.6 + 1e-9 or s >= 0.7 - 1e-9

    def test_coverage_validation_names_object_and_frame(self):
        spec = simple_spec(
            objects=[ObjectSpec.linear(0, (20.0, 14.0), (80.0, 10.0), (6.0, 0.0), 5)]
        )
        with pytest.raises(SceneValidationError) as err:
            generate(spec)
        msg = str(err.value)
        assert "object 0" in msg
        assert "t=" in msg

    def test_unknown_class_id_rejected(self):
        spec = simple_spec(objects=[ObjectSpec.linear(7, (10.0, 10.0), (5.0, 5.0), (0.0, 0.0), 5)])
        with pytest.raises(SceneValidationError):
            generate(spec)

    def test_same_seed_same_bundle(self):
        spec = simple_spec(noise=DetectorNoise(miss_prob=0.3, jitter_sigma=1.0, fp_rate=0.5))
        a = generate(spec)
        b = generate(spec)
        assert a.detections == b.detections
        for pair in a.forward_flows:
            assert np.array_equal(a.forward_flows[pair].data, b.forward_flows[pair].data)
        for fa, fb in zip(a.frames, b.frames):
            assert np.array_equal(fa.data, fb.data)


class TestFromJson:
    def test_class_names_resolve(self):
        spec = SceneSpec.from_json_dict(
            {
                "size": [96, 72],
                "length": 3,
                "classes": ["car", "person"],
                "objects": [
                    {"class": "person", "size": [10, 16], "start": [40, 30], "velocity": [1, 0]}
                ],
                "injected_false_positives": [
                    {"frame": 1, "class": "car", "bbox": [5, 5, 20, 20], "score": 0.7}
                ],
            }
        )
        assert spec.objects[0].class_id == 1
        assert spec.injected[0].class_id == 0

    def test_unknown_class_name_rejected(self):
        with pytest.raises(SceneValidationError) as err:
            SceneSpec.from_json_dict(
                {
                    "size": [96, 72],
                    "length": 3,
                    "classes": ["car"],
                    "objects": [{"class": "bike", "size": [10, 10], "start": [5, 5], "velocity": [0, 0]}],
                }
            )
        assert "bike" in str(err.value)

    def test_object_needs_a_trajectory(self):
        with pytest.raises(SceneValidationError):
            SceneSpec.from_json_dict(
                {
                    "size": [96, 72],
                    "length": 3,
                    "classes": ["car"],
                    "objects": [{"class": "car", "size": [10, 10]}],
                }
            )


class TestWriteBundle:
    def test_same_seed_byte_identical_trees(self, tmp_path):
        spec = simple_spec(noise=DetectorNoise(miss_prob=0.3, jitter_sigma=1.0, fp_rate=0.5))
        a_dir = tmp_path / "a"
        b_dir = tmp_path / "b"
        write_bundle(generate(spec, include_embeddings=True), a_dir)
        write_bundle(generate(spec, include_embeddings=True), b_dir)
        assert_same_tree(a_dir, b_dir)

    def test_manifest_loads_back(self, tmp_path):
        bundle = generate(simple_spec(), include_embeddings=True)
        path = write_bundle(bundle, tmp_path)
        m = load_manifest(path)
        assert m.size == FrameSize(96, 72)
        assert m.classes == ["car", "person"]
        assert m.frame_indices() == list(range(5))
        for t in range(5):
            assert m.teacher_labels(t).detections == bundle.detections[t].detections
            assert m.frame_image(t).size == m.size
        for t in range(4):
            assert m.flows.has(t, t + 1)
            assert m.flows.has(t + 1, t)
        gt = m.ground_truth()
        for t in range(5):
            assert gt[t].detections == bundle.ground_truth[t].detections
        assert m.embeddings_path is not None
        table = PrecomputedEmbeddings.load(m.embeddings_path)
        assert len(table) > 0

    def test_embeddings_omitted_by_default(self, tmp_path):
        path = write_bundle(generate(simple_spec()), tmp_path)
        m = load_manifest(path)
        assert m.embeddings_path is None

    def test_missing_referenced_file_rejected(self, tmp_path):
        path = write_bundle(generate(simple_spec()), tmp_path)
        victim = tmp_path / "flows" / "fw_0001_0002.flo"
        victim.unlink()
        with pytest.raises(ValidationError) as err:
            load_manifest(path)
        assert "fw_0001_0002.flo" in str(err.value)


class TestBenchmarkRecipe:
    def test_benchmark_spec_is_valid_and_busy(self):
        spec = _bundles.benchmark_spec()
        spec.validate()
        assert spec.length == 200
        assert len(spec.objects) == 6
        assert len(spec.injected) == 24
