"""Synthetic scene and teacher generation."""

import dataclasses

import numpy as np
import pytest

from pointlift.synth import (
    SynthSpec,
    class_prototypes,
    default_dictionary,
    generate_scene,
    generate_teacher,
)


def test_same_seed_identical_bundles():
    spec = SynthSpec(seed=4, n_points=600)
    a = generate_scene(spec)
    b = generate_scene(spec)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.raw_features, b.raw_features)
    assert np.array_equal(a.gt_labels, b.gt_labels)


def test_road_only_scene():
    spec = SynthSpec(seed=0, n_points=300, classes=("road",))
    bundle = generate_scene(spec)
    assert (bundle.gt_labels == 0).all()
    assert np.abs(bundle.points[:, 2]).max() < 0.2  # flat up to sensor noise


def test_exact_point_count():
    bundle = generate_scene(SynthSpec(seed=1, n_points=5000))
    assert bundle.n_points == 5000
    assert bundle.raw_features.shape == (5000, 6)


def test_spec_validation():
    with pytest.raises(ValueError, match="noise_rate"):
        SynthSpec(noise_rate=1.0)
    with pytest.raises(ValueError, match="n_points"):
        SynthSpec(n_points=50)
    with pytest.raises(ValueError, match="class"):
        SynthSpec(classes=("boat",))
    with pytest.raises(ValueError, match="embed_dim"):
        SynthSpec(embed_dim=2)


def test_spec_save_load_round_trip(tmp_path):
    spec = SynthSpec(seed=9, n_points=400, classes=("road", "car"),
                     noise_rate=0.1, noise_classes=("road",), mask_tile=32)
    path = str(tmp_path / "spec.json")
    spec.save(path)
    assert SynthSpec.load(path) == spec


def test_text_features_are_exact_prototypes():
    spec = SynthSpec(seed=2, n_points=400)
    classdict = default_dictionary(spec.classes)
    bundle = generate_scene(spec)
    teacher = generate_teacher(bundle, classdict, spec)
    protos = class_prototypes(classdict.n_classes, spec.embed_dim)
    assert np.array_equal(teacher.text_features, protos[classdict.class_of_prompt])
    # prototypes are orthonormal
    assert np.array_equal(protos @ protos.T, np.eye(classdict.n_classes))


def test_mask_features_near_own_prototype():
    spec = SynthSpec(seed=2, n_points=2000)
    classdict = default_dictionary(spec.classes)
    bundle = generate_scene(spec)
    teacher = generate_teacher(bundle, classdict, spec)
    prompts = [m.prompt for ms in teacher.mask_sets for m in ms.masks]
    cls = classdict.class_of_prompt[np.array(prompts)]
    protos = class_prototypes(classdict.n_classes, spec.embed_dim)
    cos_own = np.einsum("ij,ij->i", teacher.mask_features, protos[cls])
    assert np.linalg.norm(teacher.mask_features, axis=1) == pytest.approx(1.0, abs=1e-6)
    assert (cos_own > 0.5).all()
    # different-class features stay clearly separated
    other = teacher.mask_features @ protos.T
    other[np.arange(len(cls)), cls] = -1.0
    assert (other.max(axis=1) < 0.5).mean() > 0.99


def test_zero_noise_has_no_flips():
    spec = SynthSpec(seed=3, n_points=800, noise_rate=0.0)
    classdict = default_dictionary(spec.classes)
    teacher = generate_teacher(generate_scene(spec), classdict, spec)
    assert not any(teacher.flipped)


def test_flip_fraction_tracks_noise_rate():
    flips = []
    for seed in range(4):
        spec = SynthSpec(seed=seed, n_points=2000, noise_rate=0.2, mask_tile=48)
        classdict = default_dictionary(spec.classes)
        teacher = generate_teacher(generate_scene(spec), classdict, spec)
        flips.extend(teacher.flipped)
    assert np.mean(flips) == pytest.approx(0.2, abs=0.04)


def test_noise_classes_restrict_flips():
    spec = SynthSpec(seed=5, n_points=2000, noise_rate=0.5,
                     noise_classes=("road",), mask_tile=48)
    classdict = default_dictionary(spec.classes)
    bundle = generate_scene(spec)
    teacher = generate_teacher(bundle, classdict, spec)
    assert any(teacher.flipped)
    # the zero-noise teacher produces the same mask geometry and true classes,
    # so position-aligned comparison exposes which masks were eligible to flip
    teacher0 = generate_teacher(bundle, classdict,
                                dataclasses.replace(spec, noise_rate=0.0))
    for m0, m1, f in zip([m for s in teacher0.mask_sets for m in s.masks],
                         [m for s in teacher.mask_sets for m in s.masks],
                         teacher.flipped):
        if classdict.resolve(m0.prompt) != 0:
            assert not f  # only road masks are eligible
            assert classdict.resolve(m1.prompt) == classdict.resolve(m0.prompt)


def test_mask_pixels_disjoint_per_image():
    spec = SynthSpec(seed=6, n_points=1500, mask_tile=64)
    classdict = default_dictionary(spec.classes)
    teacher = generate_teacher(generate_scene(spec), classdict, spec)
    for ms in teacher.mask_sets:
        seen = set()
        for m in ms.masks:
            for start, run in m.rle:
                pix = set(range(start, start + run))
                assert not pix & seen
                seen |= pix
