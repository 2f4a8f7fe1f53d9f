import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldsf.asc_model import ScatteringCenter, ScatterSet, synthesize_image
from ldsf.core_types import (
    ComplexImage, MagnitudeImage, RadarConfig, crop_center, csar_bytes, csar_from_bytes,
    gamma_transform, image_energy, magnitude, read_csar, write_csar)
from ldsf.errors import DimensionError, InvalidParameterError


def test_default_config_gives_03m_cells():
    cfg = RadarConfig()
    assert cfg.fc == 9.6e9
    assert cfg.range_resolution == pytest.approx(0.3, rel=1e-12)
    assert cfg.cross_resolution == pytest.approx(0.3, rel=1e-12)
    assert (cfg.nf, cfg.nphi) == (128, 128)


@pytest.mark.parametrize("kwargs", [dict(fc=0), dict(bandwidth=-1), dict(nf=1),
                                    dict(nphi=1), dict(depression=math.pi / 2)])
def test_config_invariants(kwargs):
    with pytest.raises(InvalidParameterError):
        RadarConfig(**kwargs)


def test_magnitude_examples(rng):
    img = ComplexImage(np.array([[3 + 4j, 0]]), RadarConfig(nf=2, nphi=2))
    mag = magnitude(img)
    assert mag.data[0, 0] == 5.0
    assert mag.data[0, 1] == 0.0
    assert mag.pixel_spacing == img.pixel_spacing and mag.config == img.config

    z = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    mag = magnitude(ComplexImage(z))
    oracle = np.array([[math.hypot(v.real, v.imag) for v in row] for row in z])
    np.testing.assert_allclose(mag.data, oracle, rtol=1e-15)


def test_magnitude_phase_rotation_invariance(cfg8, rng):
    s = ScatterSet([ScatteringCenter(A=1.3, x=0.4, y=-0.2), ScatteringCenter(A=0.7, alpha=0.5, x=-0.9)])
    img = synthesize_image(s, cfg8)
    rotated = img.with_data(img.data * np.exp(1j * 0.731))
    np.testing.assert_allclose(magnitude(rotated).data, magnitude(img).data, atol=1e-12)


def test_gamma_transform_examples():
    img = MagnitudeImage(np.array([[1.0, 0.0], [0.25, 0.5]]))
    out = gamma_transform(img, a=1.0, gamma=0.6)
    assert out.data[0, 0] == 1.0
    assert out.data[0, 1] == 0.0
    # exp(0.6 ln 0.25) at 40 digits
    assert out.data[1, 0] == pytest.approx(0.43527528164806206957, rel=1e-14)


def test_gamma_transform_normalizes_and_rejects_bad_gamma():
    img = MagnitudeImage(np.array([[4.0, 1.0]]))
    np.testing.assert_allclose(gamma_transform(img, 1.0, 0.5).data, [[1.0, 0.5]])
    assert np.all(gamma_transform(MagnitudeImage(np.zeros((2, 2)))).data == 0)
    with pytest.raises(InvalidParameterError):
        gamma_transform(img, 1.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=2, max_size=30), st.floats(0.05, 3))
def test_gamma_transform_monotone(values, gamma):
    v = np.array(sorted(values))[None, :]
    out = gamma_transform(MagnitudeImage(v), a=1.5, gamma=gamma).data[0]
    assert np.all(np.diff(out) >= 0)


def test_crop_center_examples():
    data = np.arange(130 * 130, dtype=float).reshape(130, 130)
    out = crop_center(MagnitudeImage(data), 128, 128)
    np.testing.assert_array_equal(out.data, data[1:129, 1:129])

    same = MagnitudeImage(np.arange(128 * 128, dtype=float).reshape(128, 128))
    np.testing.assert_array_equal(crop_center(same, 128, 128).data, same.data)

    odd = np.arange(131 * 131, dtype=float).reshape(131, 131)
    out = crop_center(MagnitudeImage(odd), 128, 128)
    np.testing.assert_array_equal(out.data, odd[1:129, 1:129])

    with pytest.raises(DimensionError):
        crop_center(MagnitudeImage(np.zeros((4, 4))), 5, 4)


def test_crop_center_idempotent(rng):
    img = ComplexImage(rng.normal(size=(37, 41)) + 0j)
    once = crop_center(img, 20, 17)
    np.testing.assert_array_equal(crop_center(once, 20, 17).data, once.data)


def test_image_energy(rng):
    assert image_energy(ComplexImage(np.zeros((3, 3)))) == 0
    assert image_energy(ComplexImage(np.array([[3 + 4j]]))) == 25.0
    z = rng.normal(size=(9, 7)) + 1j * rng.normal(size=(9, 7))
    oracle = 0.0
    for v in z.ravel():
        oracle += v.real * v.real + v.imag * v.imag
    assert image_energy(ComplexImage(z)) == pytest.approx(oracle, rel=1e-13)


def test_csar_round_trip_is_byte_exact(tmp_path, rng):
    cfg = RadarConfig(nf=16, nphi=12, aspect_center=0.3, squint=0.01)
    img = ComplexImage(rng.normal(size=(16, 12)) + 1j * rng.normal(size=(16, 12)), cfg)
    raw = csar_bytes(img)
    header = raw[:raw.index(b"\n")].decode()
    assert header.startswith('{"rows": 16, "cols": 12, "dtype": "c64le-interleaved-f32"')
    assert len(raw) - len(header) - 1 == 16 * 12 * 8

    path = tmp_path / "a.csar"
    write_csar(path, img)
    back = read_csar(path)
    assert csar_bytes(back) == raw
    np.testing.assert_array_equal(back.data, img.data.astype(np.complex64))
    assert back.config.fc == cfg.fc and back.config.aspect_center == cfg.aspect_center
    assert back.pixel_spacing == img.pixel_spacing
    assert csar_bytes(csar_from_bytes(csar_bytes(back))) == raw
