"""Shared fixtures: small deterministic scenes and teacher outputs."""

import numpy as np
import pytest

from pointlift.synth import SynthSpec, default_dictionary, generate_scene, generate_teacher


@pytest.fixture(scope="session")
def small_scene():
    """Zero-noise four-class scene with tiled teacher masks."""
    spec = SynthSpec(seed=3, n_points=1500, noise_rate=0.0, n_cameras=2, mask_tile=64)
    classdict = default_dictionary(spec.classes)
    bundle = generate_scene(spec)
    teacher = generate_teacher(bundle, classdict, spec)
    return spec, bundle, teacher, classdict


@pytest.fixture(scope="session")
def noisy_scene():
    """Scene with 20% road-mask label noise, used by the denoising tests."""
    spec = SynthSpec(seed=11, n_points=1500, noise_rate=0.2,
                     noise_classes=("road",), n_cameras=3, mask_tile=48)
    classdict = default_dictionary(spec.classes)
    bundle = generate_scene(spec)
    teacher = generate_teacher(bundle, classdict, spec)
    return spec, bundle, teacher, classdict


def fd_gradient(fn, x, h=1e-6):
    """Central finite-difference gradient of a scalar function of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            xp = x.copy()
            xp[i, j] += h
            xm = x.copy()
            xm[i, j] -= h
            g[i, j] = (fn(xp) - fn(xm)) / (2 * h)
    return g
