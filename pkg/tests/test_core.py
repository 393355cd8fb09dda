import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hazeforge import core
from hazeforge.core import (AtmosphericMap, AugmentationSpec, DensityMap, DepthMap, HazePair, Image,
                            OutOfRangeError, ShapeMismatchError, TransmissionMap, normalize_depth, validate_pair)


def test_validate_pair_accepts_in_range():
    pair = HazePair(Image(np.full((4, 4, 3), 0.5)), Image(np.full((4, 4, 3), 0.5)), "p")
    assert validate_pair(pair) is pair


def test_validate_pair_dimension_mismatch():
    pair = HazePair(Image(np.full((4, 4, 3), 0.5)), Image(np.full((4, 5, 3), 0.5)), "p")
    with pytest.raises(ShapeMismatchError):
        validate_pair(pair)


def test_out_of_range_reports_index():
    clean = np.full((4, 4, 3), 0.5)
    clean[2, 1, 0] = 1.5
    with pytest.raises(OutOfRangeError) as info:
        validate_pair(HazePair(np.full((4, 4, 3), 0.5), clean, "p"))
    assert info.value.index == (2, 1, 0)
    assert info.value.value == 1.5


def test_validate_pair_checks_depth_size():
    img = Image(np.full((4, 4, 3), 0.5))
    with pytest.raises(ShapeMismatchError):
        validate_pair(HazePair(img, img, "p", depth=DepthMap(np.zeros((3, 4, 1)))))


@pytest.mark.parametrize("cls,shape", [(Image, (4, 4, 1)), (AtmosphericMap, (4, 4, 3)), (DensityMap, (4, 4))])
def test_channel_count_enforced(cls, shape):
    with pytest.raises(ShapeMismatchError):
        cls(np.zeros(shape))


def test_map_ranges():
    with pytest.raises(OutOfRangeError):
        DensityMap(np.full((2, 2, 3), -0.1))
    DensityMap(np.full((2, 2, 3), 7.0))
    with pytest.raises(OutOfRangeError):
        TransmissionMap(np.zeros((2, 2, 3)))
    with pytest.raises(OutOfRangeError):
        Image(np.full((2, 2, 3), np.nan))


def test_maps_are_immutable():
    img = Image(np.zeros((2, 2, 3)))
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1.0


@pytest.mark.parametrize("raw,expected", [([1, 3], [0, 1]), ([0, 5, 10], [0, 0.5, 1])])
def test_normalize_depth(raw, expected):
    out = normalize_depth(np.array(raw, float).reshape(1, -1))
    np.testing.assert_array_equal(out.data.ravel(), expected)
    assert not out.degenerate


def test_normalize_depth_constant_is_flagged():
    with pytest.warns(RuntimeWarning):
        out = normalize_depth(np.full((1, 3), 2.0))
    assert out.degenerate
    np.testing.assert_array_equal(out.data.ravel(), [0, 0, 0])


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), st.floats(0.01, 100), st.floats(-50, 50))
def test_normalize_depth_affine_invariant(x, a, b):
    if np.ptp(x) < 1e-3:
        return
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        np.testing.assert_allclose(normalize_depth(a * x + b).data, normalize_depth(x).data, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 3, 3), elements=st.floats(0, 1)))
def test_validation_idempotent(x):
    img = Image(x)
    assert np.array_equal(Image(img).data, img.data)
    assert np.array_equal(DensityMap(img).data, img.data)


def test_augmentation_spec_invariants():
    with pytest.raises(ValueError):
        AugmentationSpec(alpha=0)
    with pytest.raises(ValueError):
        AugmentationSpec(gamma=-1)
    with pytest.raises(ValueError):
        AugmentationSpec(fill_range=(2, 1))
    spec = AugmentationSpec(alpha=2.0, strategy="compose", seed=2**64 - 1)
    assert AugmentationSpec.from_dict(spec.to_dict()) == spec


def test_png_roundtrip(tmp_path):
    data = np.arange(4 * 5 * 3).reshape(4, 5, 3) / 59.0
    core.save_image(tmp_path / "x.png", data)
    back = core.load_image(tmp_path / "x.png").data
    np.testing.assert_array_equal(back, np.rint(data * 255) / 255)


def test_param_map_format(tmp_path):
    data = np.random.default_rng(1).uniform(0, 3, (5, 7, 3))
    path = core.save_param_map(tmp_path / "b.hfpm", data)
    raw = path.read_bytes()
    assert raw[:4] == b"HFPM"
    assert raw[4] == 3 and raw[5] == 0 and raw[6:8] == b"\0\0"
    assert int.from_bytes(raw[8:12], "little") == 5
    assert int.from_bytes(raw[12:16], "little") == 7
    assert len(raw) == 16 + 5 * 7 * 3 * 4
    np.testing.assert_array_equal(core.load_param_map(path), data.astype(np.float32))


def test_param_map_rejects_bad_magic(tmp_path):
    p = tmp_path / "x.hfpm"
    p.write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(core.HazeForgeError):
        core.load_param_map(p)
