import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crosspose.core import Instance, Keypoint, Pose, SkeletonSchema
from crosspose.datasets import (
    AnnotationSet, align_skeleton, compute_bone_proportions, parse_annotations,
    save_annotations, split,
)
from crosspose.errors import ConfigError, ParseError, SchemaError
from crosspose.skeletons import (
    ANIMAL_20_NAMES, REFERENCE_17_NAMES, animal_schema, reference_schema,
)


def write_annotation_file(tmp_path, keypoint_names, records, name="person"):
    d = len(keypoint_names)
    payload = {
        "images": [{"id": i, "file_name": f"{i}.png", "width": 64, "height": 64}
                   for i in range(len(records))],
        "annotations": [
            {"id": i, "image_id": i, "category_id": 1, "keypoints": rec,
             "num_keypoints": sum(1 for k in range(len(rec) // 3) if rec[3 * k + 2] > 0),
             "bbox": [0, 0, 64, 64]}
            for i, rec in enumerate(records)
        ],
        "categories": [{"id": 1, "name": name, "keypoints": list(keypoint_names),
                        "skeleton": [[1, 2]]}],
    }
    path = tmp_path / "ann.json"
    path.write_text(json.dumps(payload))
    return path


class TestParse:
    def test_single_annotation_17_keypoints(self, tmp_path):
        rec = []
        for k in range(17):
            rec.extend([float(k), float(k + 1), 2])
        path = write_annotation_file(tmp_path, REFERENCE_17_NAMES, [rec])
        aset = parse_annotations(path)
        assert len(aset) == 1
        assert aset.schema.d == 17
        assert aset.instances[0].y == 0  # person category
        assert aset.instances[0].pose.keypoints[3].x == 3.0

    def test_zero_keypoints_accepted(self, tmp_path):
        rec = [0.0, 0.0, 0] * 17
        path = write_annotation_file(tmp_path, REFERENCE_17_NAMES, [rec])
        aset = parse_annotations(path)
        assert all(kp.v == 0 for kp in aset.instances[0].pose.keypoints)

    def test_twenty_keypoint_animal_file(self, tmp_path):
        rec = []
        for k in range(20):
            rec.extend([float(k), 2.0 * k, 2])
        path = write_annotation_file(tmp_path, ANIMAL_20_NAMES, [rec], name="dog")
        aset = parse_annotations(path)
        assert aset.schema.d == 20
        assert aset.instances[0].y == 1
        knees = [n for n in aset.schema.keypoint_names if "knee" in n]
        assert len(knees) == 4

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"images": [],\n "annotations": [,]}')
        with pytest.raises(ParseError, match="line 2"):
            parse_annotations(path)

    def test_keypoint_count_mismatch_names_annotation(self, tmp_path):
        rec = [1.0, 1.0, 2] * 5  # too short for 17
        path = write_annotation_file(tmp_path, REFERENCE_17_NAMES, [rec])
        with pytest.raises(SchemaError, match="annotation 0"):
            parse_annotations(path)

    def test_box_only_annotation_becomes_unlabeled(self, tmp_path):
        payload = {
            "images": [{"id": 0, "file_name": "0.png", "width": 64, "height": 64}],
            "annotations": [{"id": 0, "image_id": 0, "category_id": 1, "bbox": [1, 2, 3, 4]}],
            "categories": [{"id": 1, "name": "cat", "keypoints": ["a", "b"], "skeleton": [[1, 2]]}],
        }
        path = tmp_path / "boxes.json"
        path.write_text(json.dumps(payload))
        aset = parse_annotations(path)
        inst = aset.instances[0]
        assert inst.z == 1 and inst.y == 1 and inst.pose is None

    def test_round_trip(self, tmp_path):
        rec = []
        for k in range(17):
            rec.extend([float(k), float(k + 1), 2 if k % 3 else 1])
        path = write_annotation_file(tmp_path, REFERENCE_17_NAMES, [rec])
        aset = parse_annotations(path)
        out = tmp_path / "resaved.json"
        save_annotations(aset, out)
        again = parse_annotations(out)
        assert again.schema.keypoint_names == aset.schema.keypoint_names
        np.testing.assert_allclose(again.instances[0].pose.xy(), aset.instances[0].pose.xy())


class TestAlign:
    def test_identity(self):
        ref = reference_schema()
        pose = Pose([Keypoint(float(i), float(i), 2) for i in range(17)], ref.name)
        out = align_skeleton(pose, ref, ref)
        np.testing.assert_array_equal(out.xy(), pose.xy())
        np.testing.assert_array_equal(out.vis(), pose.vis())

    def test_animal_to_reference(self):
        animal = animal_schema()
        ref = reference_schema()
        pose = Pose([Keypoint(float(i), float(100 + i), 2) for i in range(20)], animal.name)
        out = align_skeleton(pose, animal, ref)
        assert len(out) == 17
        nose_src = animal.index_of("nose")
        assert out.keypoints[ref.index_of("nose")].x == float(nose_src)
        # trunk points are gone, unfilled reference slots are unannotated
        for name in ("left_shoulder", "right_shoulder", "left_hip", "right_hip"):
            assert out.keypoints[ref.index_of(name)].v == 0
        # rear elbows land on reference knees
        assert out.keypoints[ref.index_of("left_knee")].x == float(animal.index_of("left_back_elbow"))

    def test_all_invisible_stays_invisible(self):
        animal = animal_schema()
        ref = reference_schema()
        pose = Pose([Keypoint(0, 0, 0) for _ in range(20)], animal.name)
        out = align_skeleton(pose, animal, ref)
        assert all(kp.v == 0 for kp in out.keypoints)

    def test_never_invents_visibility(self):
        animal = animal_schema()
        ref = reference_schema()
        rng = np.random.default_rng(0)
        for _ in range(20):
            vis = rng.integers(0, 3, 20)
            pose = Pose([Keypoint(1.0, 1.0, int(v)) for v in vis], animal.name)
            out = align_skeleton(pose, animal, ref)
            annotated_in = {animal.keypoint_names[i] for i in range(20) if vis[i] > 0}
            for j, kp in enumerate(out.keypoints):
                if kp.v > 0:
                    src = [a for a, b in animal.alignment.items() if b == j]
                    assert src and animal.keypoint_names[src[0]] in annotated_in

    def test_missing_alignment_rejected(self):
        a = SkeletonSchema("a", ["p", "q"], [])
        b = SkeletonSchema("b", ["r", "s"], [])
        with pytest.raises(ConfigError):
            align_skeleton(Pose([Keypoint(0, 0, 2)] * 2, "a"), a, b)


def chain_set(lengths, species="spec", vis_mask=None):
    """Instances whose pose is a straight chain with given segment lengths."""
    d = len(lengths) + 1
    xs = np.concatenate([[0.0], np.cumsum(lengths)])
    schema = SkeletonSchema("chain", [f"j{i}" for i in range(d)],
                            [(i, i + 1) for i in range(d - 1)])
    v = vis_mask if vis_mask is not None else [2] * d
    pose = Pose([Keypoint(float(x), 0.0, int(vv)) for x, vv in zip(xs, v)], "chain")
    inst = Instance("i0", None, pose, y=1, z=0, species=species)
    return AnnotationSet([inst], schema)


class TestBoneProportions:
    def test_equal_bones_uniform(self):
        aset = chain_set([1.0] * 18)
        rep = compute_bone_proportions(aset)
        np.testing.assert_allclose(rep.proportions["spec"], np.full(18, 1 / 18), atol=1e-12)

    def test_double_length_bone(self):
        aset = chain_set([2.0] + [1.0] * 17)
        rep = compute_bone_proportions(aset)
        assert rep.proportions["spec"][0] == pytest.approx(2 / 19, abs=1e-12)
        assert rep.proportions["spec"][1] == pytest.approx(1 / 19, abs=1e-12)

    def test_invisible_endpoint_excludes_bone(self):
        # hiding joint 0 removes bone 0 from the instance's total
        aset = chain_set([2.0] + [1.0] * 17, vis_mask=[0] + [2] * 18)
        rep = compute_bone_proportions(aset)
        assert rep.proportions["spec"][0] == 0.0
        np.testing.assert_allclose(rep.proportions["spec"][1:], np.full(17, 1 / 17), atol=1e-12)

    def test_class_without_visible_instances_absent(self):
        aset = chain_set([1.0] * 18, vis_mask=[0] * 19)
        rep = compute_bone_proportions(aset)
        assert "spec" not in rep.proportions

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=25, deadline=None)
    def test_rows_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        lengths = rng.uniform(0.5, 3.0, 18)
        aset = chain_set(list(lengths))
        rep = compute_bone_proportions(aset)
        assert abs(rep.proportions["spec"].sum() - 1.0) < 1e-9


def many_instances(n, species_cycle=("a", "b")):
    schema = SkeletonSchema("s", ["j0", "j1"], [(0, 1)])
    insts = []
    for i in range(n):
        pose = Pose([Keypoint(0, 0, 2), Keypoint(1, 1, 2)], "s")
        insts.append(Instance(f"i{i}", None, pose, y=1, z=0,
                              species=species_cycle[i % len(species_cycle)]))
    return AnnotationSet(insts, schema)


class TestSplit:
    def test_sizes(self):
        aset = many_instances(100)
        tagged = split(aset, {"train": 0.8, "test": 0.2}, seed=7)
        tags = list(tagged.split_tags.values())
        assert tags.count("train") == 80 and tags.count("test") == 20

    def test_deterministic(self):
        aset = many_instances(50)
        t1 = split(aset, {"train": 0.8, "test": 0.2}, seed=7).split_tags
        t2 = split(aset, {"train": 0.8, "test": 0.2}, seed=7).split_tags
        assert t1 == t2

    def test_bad_fractions(self):
        with pytest.raises(ConfigError):
            split(many_instances(10), {"train": 0.5, "test": 0.6}, seed=0)

    def test_stratified_by_species(self):
        aset = many_instances(40, ("a", "b"))
        tagged = split(aset, {"train": 0.75, "test": 0.25}, seed=1)
        for sp in ("a", "b"):
            ids = [i.id for i in aset.instances if i.species == sp]
            test_n = sum(1 for i in ids if tagged.split_tags[i] == "test")
            assert test_n == 5

    def test_tiny_class_goes_to_train_with_warning(self):
        schema = SkeletonSchema("s", ["j0", "j1"], [(0, 1)])
        pose = Pose([Keypoint(0, 0, 2), Keypoint(1, 1, 2)], "s")
        insts = [Instance("solo", None, pose, 1, 0, species="rare")]
        aset = AnnotationSet(insts, schema)
        with pytest.warns(UserWarning, match="rare"):
            tagged = split(aset, {"train": 0.5, "test": 0.5}, seed=0)
        assert tagged.split_tags["solo"] == "train"
