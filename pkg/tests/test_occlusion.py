"""
Test suite for visibility estimation and body-mask handling.
"""

import numpy as np
import pytest

from src.core.exceptions import MaskFormatError
from src.data_handlers.mask_io import decode_rle, encode_rle, read_mask, write_mask
from src.occlusion.visibility import BodyMask, PartLayout, estimate_visibility, occlusion_bce_loss
from src.synth.generator import MaskSpec, apply_occluder, generate_masks, make_fixture, render_silhouette


def test_layout_regions():
    """Four horizontal stripes and two vertical halves tile the frame."""
    layout = PartLayout(128, 64)
    assert layout.num_parts == 6
    assert layout.regions[:4] == ((0, 32, 0, 64), (32, 64, 0, 64), (64, 96, 0, 64), (96, 128, 0, 64))
    assert layout.regions[4:] == ((0, 128, 0, 32), (0, 128, 32, 64))


def test_layout_too_small():
    """A frame shorter than the stripe count is rejected."""
    with pytest.raises(MaskFormatError):
        PartLayout(3, 64)


def test_full_body_is_all_visible():
    """An unoccluded silhouette is visible everywhere."""
    state = estimate_visibility(BodyMask(render_silhouette(128, 64)))
    assert state.mask.all()
    assert state.scores.max() == pytest.approx(1.0)
    assert not state.empty_mask


def test_bottom_occluder_hides_lower_stripes():
    """A bottom occluder hides the lower stripes."""
    bitmap = apply_occluder(render_silhouette(128, 64), "bottom", 64)
    state = estimate_visibility(BodyMask(bitmap))
    assert state.mask[:4].tolist() == [True, True, False, False]


def test_top_occluder_hides_upper_stripes():
    """A top occluder hides the upper stripe."""
    bitmap = apply_occluder(render_silhouette(128, 64), "top", 40)
    state = estimate_visibility(BodyMask(bitmap))
    assert state.mask[:4].tolist() == [False, True, True, True]


def test_empty_mask_marks_everything_occluded():
    """An empty mask marks every part occluded."""
    state = estimate_visibility(BodyMask(np.zeros((128, 64), dtype=bool)))
    assert state.empty_mask
    assert not state.mask.any()
    assert np.all(state.scores == 0.0)


def test_layout_frame_mismatch():
    """Mask and layout sizes must agree."""
    with pytest.raises(MaskFormatError):
        estimate_visibility(BodyMask(np.ones((64, 32), dtype=bool)), PartLayout(128, 64))


def test_estimator_agrees_with_fixture_truth():
    """At least 95% per-part agreement on 500 fixtures."""
    fixtures = generate_masks(MaskSpec(count=500, seed=0))
    predicted = np.stack([estimate_visibility(f.mask).mask for f in fixtures])
    truth = np.stack([f.truth for f in fixtures])
    assert (predicted == truth).mean() >= 0.95


def test_fixtures_avoid_ambiguous_boundaries():
    """Occluder edges stay clear of the 0.5 decision boundary."""
    for fixture in generate_masks(MaskSpec(count=50, noise=0.0, seed=3)):
        if fixture.occluder != "none":
            assert np.all(np.abs(fixture.visible_fraction - 0.5) > 0.1)


def test_make_fixture_truth():
    """Fixture truth follows the occluder height."""
    fixture = make_fixture("m", 128, 64, "bottom", 100)
    assert fixture.truth[:4].tolist() == [True, True, True, False]


def test_bce_at_one_half_is_ln2():
    """BCE at 0.5 is ln 2."""
    loss, grad = occlusion_bce_loss(np.full(6, 0.5), np.ones(6))
    assert loss == pytest.approx(np.log(2.0))
    assert np.allclose(grad, -2.0 / 6)


def test_bce_gradient_is_zero_where_clamped():
    """Clamped predictions get no gradient."""
    loss, grad = occlusion_bce_loss(np.array([0.0, 1.0, 0.3]), np.array([1.0, 0.0, 1.0]))
    assert np.isfinite(loss)
    assert grad[0] == 0.0 and grad[1] == 0.0
    assert grad[2] < 0.0


def test_bce_shape_mismatch():
    """Prediction and target shapes must agree."""
    with pytest.raises(ValueError):
        occlusion_bce_loss(np.ones(3), np.ones(4))


@pytest.mark.parametrize("suffix", [".pgm", ".json"])
def test_mask_file_round_trip(tmp_path, suffix):
    """PGM and RLE mask files read back unchanged."""
    bitmap = apply_occluder(render_silhouette(32, 16), "bottom", 20)
    bitmap[0, 0] = True
    path = tmp_path / f"mask{suffix}"
    write_mask(BodyMask(bitmap), path)
    assert np.array_equal(read_mask(path).bitmap, bitmap)


def test_rle_starts_with_background_run():
    """RLE starts with a background run, possibly empty."""
    bitmap = np.array([[1, 1, 0], [0, 1, 1]], dtype=bool)
    doc = encode_rle(BodyMask(bitmap))
    assert doc["rle"] == [0, 2, 2, 2]
    assert np.array_equal(decode_rle(doc).bitmap, bitmap)


def test_bad_rle_rejected():
    """Inconsistent RLE documents are rejected."""
    with pytest.raises(MaskFormatError):
        decode_rle({"h": 2, "w": 2, "rle": [1, 1]})
    with pytest.raises(MaskFormatError):
        decode_rle({"h": 2, "rle": [4]})


def test_bad_pgm_rejected(tmp_path):
    """Non-binary PGM files are rejected."""
    path = tmp_path / "broken.pgm"
    path.write_bytes(b"P2\n2 2\n255\n0 0 0 0")
    with pytest.raises(MaskFormatError):
        read_mask(path)
