import numpy as np
import pytest

from viewx.errors import ParseError
from viewx.imageio import (
    float_to_image,
    image_to_float,
    read_pfm,
    read_pgm,
    read_ppm,
    write_pfm,
    write_pgm,
    write_ppm,
)


def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    image = rng.integers(0, 256, size=(6, 9, 3), dtype=np.uint8)
    write_ppm(tmp_path / "a.ppm", image)
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), image)


def test_ppm_header_comments(tmp_path):
    pixels = bytes(range(12))
    (tmp_path / "c.ppm").write_bytes(b"P6\n# a comment\n2 2\n# another\n255\n" + pixels)
    image = read_ppm(tmp_path / "c.ppm")
    assert image.shape == (2, 2, 3)
    assert image.tobytes() == pixels


def test_ppm_rejects_wrong_maxval(tmp_path):
    (tmp_path / "d.ppm").write_bytes(b"P6\n1 1\n65535\n" + b"\x00" * 6)
    with pytest.raises(ParseError):
        read_ppm(tmp_path / "d.ppm")


def test_ppm_truncated(tmp_path):
    (tmp_path / "e.ppm").write_bytes(b"P6\n2 2\n255\n\x00\x00")
    with pytest.raises(ParseError):
        read_ppm(tmp_path / "e.ppm")


def test_pgm_round_trip(tmp_path):
    mask = (np.arange(20, dtype=np.uint8).reshape(4, 5) % 2) * 255
    write_pgm(tmp_path / "m.pgm", mask)
    np.testing.assert_array_equal(read_pgm(tmp_path / "m.pgm"), mask)


def test_pfm_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    depth = rng.normal(size=(5, 7)).astype(np.float32)
    depth[0, 0] = np.float32(-0.0)
    depth[1, 2] = np.inf
    write_pfm(tmp_path / "d.pfm", depth)
    back = read_pfm(tmp_path / "d.pfm")
    np.testing.assert_array_equal(back.view(np.uint32), depth.view(np.uint32))


def test_pfm_rejects_big_endian(tmp_path):
    (tmp_path / "b.pfm").write_bytes(b"Pf\n1 1\n1.0\n" + b"\x00" * 4)
    with pytest.raises(ParseError):
        read_pfm(tmp_path / "b.pfm")


def test_pfm_bottom_up_storage(tmp_path):
    depth = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    write_pfm(tmp_path / "o.pfm", depth)
    raw = (tmp_path / "o.pfm").read_bytes()
    payload = np.frombuffer(raw.rsplit(b"\n-1.0\n", 1)[1], dtype="<f4")
    np.testing.assert_array_equal(payload, [3.0, 4.0, 1.0, 2.0])
    np.testing.assert_array_equal(read_pfm(tmp_path / "o.pfm"), depth)


def test_uint8_float_conversion_is_exact():
    levels = np.arange(256, dtype=np.uint8).reshape(16, 16, 1).repeat(3, axis=2)
    np.testing.assert_array_equal(float_to_image(image_to_float(levels)), levels)
