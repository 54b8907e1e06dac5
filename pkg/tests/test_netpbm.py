"""PPM/PGM round trips and malformed-file handling."""

import numpy as np
import pytest

from segattack.netpbm import NetpbmError, read_pgm, read_ppm, write_pgm, write_ppm
from segattack.prng import SplitMix64


def test_ppm_round_trip_bit_exact(tmp_path):
    rng = SplitMix64(1)
    img = np.floor(rng.fill_uniform((3, 9, 13), 0, 256)).astype(np.float32)
    p = str(tmp_path / "a.ppm")
    write_ppm(p, img)
    np.testing.assert_array_equal(read_ppm(p), img)


def test_pgm_round_trip_bit_exact(tmp_path):
    rng = SplitMix64(2)
    lab = (rng.fill_u64(7 * 5).reshape(7, 5) % 4).astype(np.int64)
    p = str(tmp_path / "a.pgm")
    write_pgm(p, lab)
    np.testing.assert_array_equal(read_pgm(p), lab)


def test_float_rounding_on_write(tmp_path):
    p = str(tmp_path / "r.pgm")
    write_pgm(p, np.array([[0.4, 0.6], [254.5, 255.0]]))
    # rint rounds half to even: 254.5 -> 254
    np.testing.assert_array_equal(read_pgm(p), [[0, 1], [254, 255]])


def test_smallest_ppm(tmp_path):
    p = tmp_path / "one.ppm"
    p.write_bytes(b"P6\n1 1\n255\n\xff\x00\x00")
    img = read_ppm(str(p))
    assert img.shape == (3, 1, 1)
    assert (img[0, 0, 0], img[1, 0, 0], img[2, 0, 0]) == (255.0, 0.0, 0.0)


def test_header_comments_and_whitespace(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5 # comment\n# another\n 2\t1 #x\n255\n\x07\x09")
    np.testing.assert_array_equal(read_pgm(str(p)), [[7, 9]])


def test_unsupported_maxval(tmp_path):
    p = tmp_path / "wide.pgm"
    p.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
    with pytest.raises(NetpbmError, match="maxval 65535"):
        read_pgm(str(p))


def test_bad_magic_reports_offset_zero(tmp_path):
    p = tmp_path / "bad.ppm"
    p.write_bytes(b"P3\n1 1\n255\n1 2 3")
    with pytest.raises(NetpbmError, match="offset 0"):
        read_ppm(str(p))


def test_truncated_payload_reports_offset(tmp_path):
    p = tmp_path / "short.ppm"
    p.write_bytes(b"P6\n2 2\n255\n\x01\x02\x03")
    with pytest.raises(NetpbmError, match=r"3 bytes, needs 12.*offset 14"):
        read_ppm(str(p))


def test_non_numeric_header_token(tmp_path):
    p = tmp_path / "tok.pgm"
    p.write_bytes(b"P5\nxx 1\n255\n\x00")
    with pytest.raises(NetpbmError, match="bad header token"):
        read_pgm(str(p))


def test_write_rejects_out_of_range():
    with pytest.raises(ValueError, match=r"\[0, 255\]"):
        write_pgm("/dev/null", np.array([[300.0]]))
    with pytest.raises(ValueError, match="expected"):
        write_ppm("/dev/null", np.zeros((1, 4, 4)))
