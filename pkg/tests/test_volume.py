import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from hnradiomics.errors import (DegenerateRoiError, NonFiniteError, SizeMismatchError, ValidationError,
                                VolumeFormatError)
from hnradiomics.volume import (ImageVolume, ResampleSpec, RoiMask, crop_to_roi, load_mask, load_volume,
                                resample_isotropic, roi_bounding_box, save_mask, save_volume)

from conftest import ball_mask, make_pair


def test_volume_rejects_nan_and_bad_spacing():
    with pytest.raises(NonFiniteError):
        ImageVolume(np.full((2, 2, 2), np.nan), (1, 1, 1))
    with pytest.raises(ValidationError):
        ImageVolume(np.zeros((2, 2, 2)), (1, 0, 1))
    with pytest.raises(ValidationError):
        ImageVolume(np.zeros((2, 2)), (1, 1, 1))
    with pytest.raises(ValidationError):
        ImageVolume(np.zeros((2, 2, 2)), (1, 1, 1), "MR")


def test_mask_rejects_empty_and_non_binary():
    with pytest.raises(DegenerateRoiError):
        RoiMask(np.zeros((3, 3, 3)), (1, 1, 1))
    with pytest.raises(ValidationError):
        RoiMask(np.full((3, 3, 3), 2), (1, 1, 1))


def test_volume_is_read_only():
    v = ImageVolume(np.zeros((2, 2, 2)), (1, 1, 1))
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1.0


def test_rvf_round_trip_preserves_layout(tmp_path, rng):
    data = rng.normal(size=(5, 4, 3)).astype(np.float32)
    vol = ImageVolume(data, (0.9765625, 0.9765625, 3.27), "CT")
    save_volume(vol, tmp_path / "v.rvf")
    back = load_volume(tmp_path / "v.rvf")
    assert back.dims == (5, 4, 3)
    assert back.spacing == vol.spacing
    assert back.modality == "CT"
    np.testing.assert_array_equal(back.data, data)
    # x is the fastest axis on disk
    raw = (tmp_path / "v.rvf").read_bytes()
    payload = np.frombuffer(raw[raw.index(b"\n\n") + 2:], dtype="<f4")
    assert payload[1] == data[1, 0, 0]
    mask = RoiMask(data > 0, vol.spacing)
    save_mask(mask, tmp_path / "m.rvf")
    np.testing.assert_array_equal(load_mask(tmp_path / "m.rvf").data, data > 0)


def test_rvf_size_mismatch_and_bad_header(tmp_path):
    vol = ImageVolume(np.ones((2, 2, 2), np.float32), (1, 1, 1))
    save_volume(vol, tmp_path / "v.rvf")
    raw = (tmp_path / "v.rvf").read_bytes()
    (tmp_path / "short.rvf").write_bytes(raw[:-4])
    with pytest.raises(SizeMismatchError):
        load_volume(tmp_path / "short.rvf")
    (tmp_path / "bad.rvf").write_bytes(b"dims = 2 2\n\n")
    with pytest.raises(VolumeFormatError):
        load_volume(tmp_path / "bad.rvf")
    (tmp_path / "noterm.rvf").write_bytes(b"dims = 2 2 2")
    with pytest.raises(VolumeFormatError):
        load_volume(tmp_path / "noterm.rvf")
    with pytest.raises(VolumeFormatError):
        load_mask(tmp_path / "v.rvf")  # f32 payload is not a mask


def test_nan_payload_is_rejected(tmp_path):
    vol = ImageVolume(np.ones((2, 2, 2), np.float32), (1, 1, 1))
    save_volume(vol, tmp_path / "v.rvf")
    raw = bytearray((tmp_path / "v.rvf").read_bytes())
    raw[-4:] = np.array([np.nan], "<f4").tobytes()
    (tmp_path / "nan.rvf").write_bytes(bytes(raw))
    with pytest.raises(NonFiniteError):
        load_volume(tmp_path / "nan.rvf")


def test_resample_matches_scipy_linear_interpolation(rng):
    data = rng.normal(size=(7, 6, 5))
    mask = np.ones((7, 6, 5), bool)
    vol, roi = make_pair(data, mask, spacing=(1.5, 2.0, 3.0))
    out, _ = resample_isotropic(vol, roi, ResampleSpec(1.0))
    axes = []
    for n, s in zip(data.shape, (1.5, 2.0, 3.0)):
        m = int(np.ceil(n * s / 1.0))
        axes.append(np.clip((np.arange(m) + 0.5) / s - 0.5, 0, n - 1))
    grid = np.meshgrid(*axes, indexing="ij")
    expected = ndimage.map_coordinates(data, grid, order=1, mode="nearest")
    assert out.dims == expected.shape
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_resample_same_spacing_is_identity(rng):
    data = rng.normal(size=(4, 5, 6))
    mask = rng.random((4, 5, 6)) > 0.5
    vol, roi = make_pair(data, mask, spacing=(2.0, 2.0, 2.0))
    out, m = resample_isotropic(vol, roi, ResampleSpec(2.0))
    np.testing.assert_allclose(out.data, data, atol=1e-12)
    np.testing.assert_array_equal(m.data, mask)


def test_resample_reproduces_linear_field_inside():
    idx = np.indices((8, 8, 8)).astype(float)
    spacing = (1.0, 1.0, 2.0)
    field = 0.3 * idx[0] * spacing[0] - 0.7 * idx[1] * spacing[1] + 1.1 * idx[2] * spacing[2]
    vol, roi = make_pair(field, np.ones((8, 8, 8)), spacing=spacing)
    out, _ = resample_isotropic(vol, roi, ResampleSpec(1.0))
    i = np.indices(out.dims).astype(float)
    # physical positions of target centres measured from the first input centre
    pos = [(i[a] + 0.5) * 1.0 - 0.5 * spacing[a] for a in range(3)]
    exact = 0.3 * pos[0] - 0.7 * pos[1] + 1.1 * pos[2]
    inner = tuple(slice(1, -1) for _ in range(3))
    np.testing.assert_allclose(out.data[inner], exact[inner], atol=1e-9)


def test_resample_shrinking_roi_to_nothing_is_degenerate():
    mask = np.zeros((9, 9, 9), bool)
    mask[1, 1, 1] = True
    vol, roi = make_pair(np.zeros((9, 9, 9)), mask)
    with pytest.raises(DegenerateRoiError):
        resample_isotropic(vol, roi, ResampleSpec(5.0))


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 9), st.integers(3, 9), st.integers(3, 9), st.sampled_from([1.0, 2.0, 3.0]),
       st.integers(0, 3))
def test_crop_keeps_every_roi_voxel(nx, ny, nz, spacing, margin):
    rng = np.random.default_rng(nx * 100 + ny * 10 + nz)
    mask = rng.random((nx, ny, nz)) > 0.7
    mask[nx // 2, ny // 2, nz // 2] = True
    data = rng.normal(size=mask.shape)
    vol, roi = make_pair(data, mask, spacing=(spacing,) * 3)
    cv, cm = crop_to_roi(vol, roi, margin)
    assert cm.count == roi.count
    assert np.isclose(cv.data[cm.data].sum(), data[mask].sum())
    box = roi_bounding_box(roi, margin)
    for a, sl in enumerate(box):
        assert 0 <= sl.start < sl.stop <= mask.shape[a]


def test_crop_margin_is_clamped():
    mask = ball_mask((10, 10, 10), (5, 5, 5), 2)
    vol, roi = make_pair(np.zeros(mask.shape), mask)
    cv, cm = crop_to_roi(vol, roi, 2)
    assert cv.dims == (9, 9, 9)
    cv, cm = crop_to_roi(vol, roi, 10)
    assert cv.dims == (10, 10, 10)
