import numpy as np
import pytest

from polsketch import detect, synth
from polsketch.rasters import CoherencyImage, hermitianize


def random_psd(rng, scale=1.0):
    """Random well-conditioned 3x3 Hermitian PSD matrix."""
    b = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    return scale * (b @ b.conj().T + 0.1 * np.eye(3))


def random_image(rng, h, w, looks=4.0, scale=1.0):
    """Image of independent random PSD matrices (not Wishart; for algebra tests)."""
    b = rng.normal(size=(h, w, 3, 3)) + 1j * rng.normal(size=(h, w, 3, 3))
    data = scale * (b @ b.conj().swapaxes(2, 3) + 0.1 * np.eye(3))
    return CoherencyImage(hermitianize(data), looks)


def constant_image(mat, h, w, looks=4.0):
    data = np.broadcast_to(np.asarray(mat, dtype=np.complex128), (h, w, 3, 3)).copy()
    return CoherencyImage(hermitianize(data), looks)


@pytest.fixture(scope="session")
def bank():
    return detect.build_filter_bank()


@pytest.fixture(scope="session")
def edge_scene():
    layout, mats = synth.edge_layout(128, 6.0)
    return synth.sample_wishart_scene(layout, mats, 4, seed=7)


@pytest.fixture(scope="session")
def edge_fields(edge_scene, bank):
    return detect.detector_fields(edge_scene.image, bank)


@pytest.fixture(scope="session")
def edge_hybrid(edge_fields):
    fe = detect.fuse_energy(edge_fields["cfar_edge"], edge_fields["grad_edge"])
    fl = detect.fuse_energy(edge_fields["cfar_line"], edge_fields["grad_line"])
    return detect.hybrid_energy(fe, fl)


@pytest.fixture(scope="session")
def composite_scene():
    layout, mats, truth = synth.composite_layout(144)
    scene = synth.sample_wishart_scene(layout, mats, 8, seed=17)
    return scene, truth


@pytest.fixture(scope="session")
def composite_sketch(composite_scene, bank):
    from polsketch import sketch

    scene, _ = composite_scene
    fields = detect.detector_fields(scene.image, bank)
    fe = detect.fuse_energy(fields["cfar_edge"], fields["grad_edge"])
    fl = detect.fuse_energy(fields["cfar_line"], fields["grad_line"])
    hyb = detect.hybrid_energy(fe, fl)
    edges = detect.nonmax_suppress(hyb)
    lines = sketch.pursue_sketch(edges, hyb)
    scored = sketch.score_lines(lines, scene.image)
    return sketch.select_lines(scored, scene.image.shape), hyb
