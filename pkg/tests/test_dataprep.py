import json
import sys
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.config import deg_to_rad
from src.dataprep import (
    FrameRecord,
    HandAnnotation,
    MaskRef,
    annotate_occlusion,
    assume_hand_only,
    canonical_json,
    dump_manifest,
    enhancement_eligible,
    format_float,
    is_enhancement_eligible,
    label_grasping,
    label_sequences,
    load_manifest,
    occlusion_proportion,
    parse_manifest_line,
    record_to_json,
    repaint_mask,
    save_manifest,
    scene_counts,
    split_scenes,
)
from src.errors import InputError, MissingAnnotation, MissingReference, ParseError, SchemaError, UnlabeledRecord
from src.geometry import RigidPose, Rotation3
from src.masks import BinaryMask, save_mask_image
from src.synthetic import fixture_records, occluded_masks


FIXTURES = Path(__file__).resolve().parent / "fixtures"


def _hand():
    rng = np.random.default_rng(0)
    return HandAnnotation(rng.normal(size=(21, 3)), rng.normal(size=(21, 2)), np.zeros(48), np.zeros(10))


def _ramp(count, step_mm=0.5, step_rad=0.0):
    return [
        FrameRecord(
            frame_id=f"ramp-{i:03d}",
            sequence_id="ramp",
            frame_index=i,
            hand=_hand(),
            object_pose=RigidPose(Rotation3.about_axis("y", step_rad * i), np.array([step_mm * i, 0.0, 500.0])),
        )
        for i in range(count)
    ]


class TestGraspingLabels(unittest.TestCase):
    def test_fixture_labels(self):
        labeled = label_sequences(fixture_records())
        self.assertEqual([r.grasping_label for r in labeled[:6]], [False] * 6)
        self.assertEqual([r.grasping_label for r in labeled[6:]], [False, False, False, True, True, True])
        self.assertEqual(scene_counts(labeled), {"hand_only": 9, "hand_object": 3, "total": 12})

    def test_lower_rotation_threshold_labels_more_frames(self):
        strict = scene_counts(label_sequences(fixture_records(), rre_threshold=deg_to_rad(1.0)))
        default = scene_counts(label_sequences(fixture_records()))
        self.assertGreater(strict["hand_object"], default["hand_object"])

    def test_translation_boundary_is_not_grasping(self):
        labeled = label_grasping(_ramp(50))
        flips = [r.frame_index for r in labeled if r.grasping_label]
        self.assertEqual(flips[0], 21)
        self.assertEqual(len(flips), 29)

    def test_rotation_ramp_crosses_five_degrees(self):
        labeled = label_grasping(_ramp(50, step_mm=0.0, step_rad=deg_to_rad(0.3)))
        flips = [r.frame_index for r in labeled if r.grasping_label]
        # 16 × 0.3° = 4.8°, 17 × 0.3° = 5.1°
        self.assertEqual(flips[0], 17)

    def test_first_annotated_reference_skips_missing_pose(self):
        frames = _ramp(5, step_mm=6.0)
        frames[0] = replace(frames[0], object_pose=None)
        labeled = label_grasping(frames)
        self.assertEqual([r.grasping_label for r in labeled], [False, False, False, True, True])

    def test_initial_reference_requires_first_pose(self):
        frames = _ramp(3)
        frames[0] = replace(frames[0], object_pose=None)
        with self.assertRaises(MissingReference):
            label_grasping(frames, reference="initial")

    def test_mixed_sequences_rejected(self):
        frames = _ramp(2)
        frames[1] = replace(frames[1], sequence_id="other")
        with self.assertRaises(InputError):
            label_grasping(frames)

    def test_output_keeps_input_order(self):
        records = fixture_records()
        shuffled = records[6:] + records[:6]
        self.assertEqual([r.frame_id for r in label_sequences(shuffled)], [r.frame_id for r in shuffled])

    def test_relabeling_is_idempotent(self):
        once = label_grasping(_ramp(30))
        twice = label_grasping(once)
        self.assertEqual([r.grasping_label for r in twice], [r.grasping_label for r in once])

    def test_labels_do_not_depend_on_input_order(self):
        frames = _ramp(30, step_mm=0.4, step_rad=deg_to_rad(0.2))
        expected = {r.frame_id: r.grasping_label for r in label_grasping(frames)}
        shuffled = [frames[i] for i in np.random.default_rng(9).permutation(len(frames))]
        self.assertEqual({r.frame_id: r.grasping_label for r in label_grasping(shuffled)}, expected)


class TestScenes(unittest.TestCase):
    def test_split_requires_labels(self):
        with self.assertRaises(UnlabeledRecord):
            split_scenes(fixture_records())

    def test_split_keeps_order(self):
        hand_only, hand_object = split_scenes(label_sequences(fixture_records()))
        self.assertEqual([r.frame_id for r in hand_object], ["grasp-003", "grasp-004", "grasp-005"])
        self.assertEqual(len(hand_only), 9)

    def test_hand_only_dataset(self):
        frames = [replace(r, object_pose=None) for r in _ramp(3)]
        self.assertEqual(scene_counts(assume_hand_only(frames))["hand_only"], 3)
        with self.assertRaises(InputError):
            assume_hand_only(_ramp(1))


class TestOcclusion(unittest.TestCase):
    def test_occlusion_is_complement_of_iou(self):
        amodal, full = occluded_masks(2)
        self.assertEqual(occlusion_proportion(amodal, full), 0.75)
        self.assertEqual(occlusion_proportion(amodal, full, mode="iou"), 0.25)
        self.assertEqual(occlusion_proportion(full, full), 0.0)

    def test_occlusion_is_symmetric_and_shift_invariant(self):
        amodal = np.zeros((10, 12), dtype=bool)
        amodal[2:5, 3:7] = True
        full = np.zeros((10, 12), dtype=bool)
        full[3:6, 2:8] = True
        a, f = BinaryMask.from_array(amodal), BinaryMask.from_array(full)
        value = occlusion_proportion(a, f)
        self.assertEqual(occlusion_proportion(f, a), value)
        shifted_a = BinaryMask.from_array(np.roll(amodal, (2, 3), axis=(0, 1)))
        shifted_f = BinaryMask.from_array(np.roll(full, (2, 3), axis=(0, 1)))
        self.assertEqual(occlusion_proportion(shifted_a, shifted_f), value)

    def test_annotate_fixture(self):
        annotated = annotate_occlusion(fixture_records())
        self.assertEqual([r.occlusion_proportion for r in annotated[:3]], [0.0, 0.125, 0.25])
        self.assertEqual(annotated[6].occlusion_proportion, 0.75)

    def test_records_without_masks_untouched(self):
        record = replace(fixture_records()[0], amodal_hand_mask=None)
        self.assertIsNone(annotate_occlusion([record])[0].occlusion_proportion)

    def test_enhancement_gate(self):
        self.assertTrue(is_enhancement_eligible(0.1, True))
        self.assertFalse(is_enhancement_eligible(0.0999, True))
        self.assertFalse(is_enhancement_eligible(0.9, False))
        with self.assertRaises(MissingAnnotation):
            enhancement_eligible(fixture_records()[0])
        record = label_sequences(annotate_occlusion(fixture_records()))[9]
        self.assertTrue(enhancement_eligible(record))

    def test_repaint_mask(self):
        hand = BinaryMask.from_array(np.eye(5, dtype=bool))
        obj = BinaryMask.from_array(np.fliplr(np.eye(5, dtype=bool)))
        self.assertEqual(repaint_mask(hand, obj).count(), 9)
        self.assertEqual(repaint_mask(hand, obj, radius=2).count(), 25)


class TestManifest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def _line(self, **changes):
        data = json.loads(canonical_json(record_to_json(fixture_records()[0])))
        for key, value in changes.items():
            if value is None:
                data.pop(key, None)
            else:
                data[key] = value
        return json.dumps(data)

    def test_save_load_is_byte_identical(self):
        records = annotate_occlusion(label_sequences(fixture_records()))
        path = self.dir / "m.jsonl"
        save_manifest(records, path)
        text = path.read_text(encoding="utf-8")
        reloaded = load_manifest(path)
        self.assertEqual(dump_manifest(reloaded), text)
        self.assertEqual([r.grasping_label for r in reloaded], [r.grasping_label for r in records])

    def test_canonical_json(self):
        self.assertEqual(canonical_json({"b": 1, "a": [0.1, -0.0]}), '{"a":[0.10000000000000001,-0.0],"b":1}')
        self.assertEqual(format_float(2.5), "2.5")
        with self.assertRaises(InputError):
            format_float(float("nan"))

    def test_recorded_manifest_round_trips_byte_for_byte(self):
        path = FIXTURES / "manifest_canonical.jsonl"
        records = load_manifest(path, strict=False)
        self.assertEqual(dump_manifest(records), path.read_text(encoding="utf-8"))
        self.assertEqual(np.copysign(1.0, records[0].hand.joints_3d[0, 0]), -1.0)
        self.assertEqual(records[1].object_pose.translation[0], 0.1)
        self.assertEqual(records[1].occlusion_proportion, 0.1)
        self.assertIsNone(records[0].intrinsics)
        self.assertEqual(records[2].amodal_hand_mask.path, "masks/b-001.png")
        self.assertEqual(records[2].full_hand_mask.runs, (3, 4, 1))

    def test_blank_lines_skipped(self):
        path = self.dir / "m.jsonl"
        path.write_text("\n" + self._line() + "\n\n", encoding="utf-8")
        self.assertEqual(len(load_manifest(path)), 1)

    def test_parse_errors_carry_line(self):
        with self.assertRaises(ParseError) as ctx:
            parse_manifest_line("{not json", 7)
        self.assertEqual(ctx.exception.line, 7)

    def test_schema_errors_name_field(self):
        cases = {
            "joints_3d": self._line(joints_3d=None),
            "mano_shape": self._line(mano_shape=[0.0] * 9),
            "unexpected": self._line(unexpected=1),
            "intrinsics.fx": self._line(intrinsics={"fx": -1.0, "fy": 1.0, "cx": 0.0, "cy": 0.0}),
        }
        for field, text in cases.items():
            with self.subTest(field=field):
                with self.assertRaises(SchemaError) as ctx:
                    parse_manifest_line(text, 3)
                self.assertEqual(ctx.exception.field, field)
                self.assertEqual(ctx.exception.line, 3)

    def test_intrinsics_required_only_when_strict(self):
        text = self._line(intrinsics=None)
        with self.assertRaises(SchemaError) as ctx:
            parse_manifest_line(text, 1)
        self.assertEqual(ctx.exception.field, "intrinsics")
        self.assertIsNone(parse_manifest_line(text, 1, strict=False).intrinsics)

    def test_missing_manifest(self):
        with self.assertRaises(InputError):
            load_manifest(self.dir / "missing.jsonl")

    def test_mask_paths_resolve_against_manifest_dir(self):
        amodal, full = occluded_masks(4)
        save_mask_image(amodal, self.dir / "amodal.png")
        save_mask_image(full, self.dir / "full.png")
        path = self.dir / "m.jsonl"
        path.write_text(self._line(masks={"amodal": "amodal.png", "full": "full.png"}) + "\n", encoding="utf-8")
        record = annotate_occlusion(load_manifest(path))[0]
        self.assertIsInstance(record.amodal_hand_mask, MaskRef)
        self.assertEqual(record.occlusion_proportion, 0.5)
        self.assertIn('"amodal":"amodal.png"', dump_manifest([record]))

    def test_vertex_file_reference(self):
        vertices = np.random.default_rng(0).normal(size=(778, 3))
        np.save(self.dir / "v.npy", vertices)
        path = self.dir / "m.jsonl"
        path.write_text(self._line(vertices_3d="v.npy") + "\n", encoding="utf-8")
        record = load_manifest(path)[0]
        np.testing.assert_array_equal(record.hand.vertices_3d, vertices)
        self.assertIn('"vertices_3d":"v.npy"', dump_manifest([record]))


if __name__ == "__main__":
    unittest.main()
