import numpy as np
import pytest

from srde import FormatError, Tensor, load_image, save_image


def write(tmp_path, name, payload: bytes):
    p = tmp_path / name
    p.write_bytes(payload)
    return p


class TestLoad:
    def test_p2_maxval_scaling(self, tmp_path):
        p = write(tmp_path, "a.pgm", b"P2\n2 2\n255\n0 255 0 255\n")
        t = load_image(p)
        assert (t.n, t.c, t.h, t.w) == (1, 1, 2, 2)
        assert np.array_equal(t.data[0, 0], [[0.0, 1.0], [0.0, 1.0]])

    def test_p5_binary(self, tmp_path):
        p = write(tmp_path, "a.pgm", b"P5\n3 1\n255\n" + bytes([0, 128, 255]))
        t = load_image(p)
        assert np.allclose(t.data[0, 0], [[0.0, 128 / 255.0, 1.0]])

    def test_p6_white_is_exactly_one(self, tmp_path):
        p = write(tmp_path, "a.ppm", b"P6\n1 1\n255\n" + bytes([255, 255, 255]))
        assert load_image(p).data[0, 0, 0, 0] == 1.0

    def test_p6_red_gives_bt601_weight(self, tmp_path):
        p = write(tmp_path, "a.ppm", b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
        assert abs(load_image(p).data[0, 0, 0, 0] - 0.299) < 1e-7

    def test_p3_ascii_rgb(self, tmp_path):
        p = write(tmp_path, "a.ppm", b"P3\n1 2\n255\n0 255 0\n255 255 255\n")
        t = load_image(p)
        assert abs(t.data[0, 0, 0, 0] - 0.587) < 1e-7
        assert t.data[0, 0, 1, 0] == 1.0

    def test_header_comments(self, tmp_path):
        p = write(tmp_path, "a.pgm", b"P2 # format\n# full line\n2 1 # dims\n255\n7 9\n")
        t = load_image(p)
        assert np.allclose(t.data[0, 0], [[7 / 255.0, 9 / 255.0]])

    def test_unsupported_maxval_names_offset(self, tmp_path):
        p = write(tmp_path, "a.pgm", b"P2\n2 2\n65535\n0 0 0 0\n")
        with pytest.raises(FormatError, match="maxval 65535") as exc:
            load_image(p)
        assert exc.value.offset == 7  # start of the maxval token

    def test_truncated_binary_payload_offset(self, tmp_path):
        p = write(tmp_path, "a.pgm", b"P5\n2 2\n255\n" + bytes([1, 2]))
        with pytest.raises(FormatError, match="truncated pixel payload"):
            load_image(p)

    def test_truncated_ascii_payload(self, tmp_path):
        p = write(tmp_path, "a.pgm", b"P2\n2 2\n255\n0 1 2\n")
        with pytest.raises(FormatError, match="pixel 3"):
            load_image(p)

    def test_malformed_header(self, tmp_path):
        p = write(tmp_path, "a.pgm", b"P2\nxx 2\n255\n0 0 0 0\n")
        with pytest.raises(FormatError, match="malformed width"):
            load_image(p)

    def test_unknown_magic(self, tmp_path):
        p = write(tmp_path, "a.pgm", b"P7\n2 2\n255\n")
        with pytest.raises(FormatError, match="unsupported format"):
            load_image(p)

    def test_ascii_value_out_of_range(self, tmp_path):
        p = write(tmp_path, "a.pgm", b"P2\n2 1\n255\n0 300\n")
        with pytest.raises(FormatError, match="out of range"):
            load_image(p)


class TestSave:
    def test_full_scale_and_clamping(self, tmp_path):
        t = Tensor(np.array([[[[1.0, -0.2], [0.5, 2.0]]]], dtype=np.float32))
        p = tmp_path / "out.pgm"
        save_image(t, p)
        raw = p.read_bytes()
        assert raw.startswith(b"P5\n2 2\n255\n")
        assert list(raw[-4:]) == [255, 0, 128, 255]

    def test_round_trip_quantization_bound(self, tmp_path):
        rng = np.random.default_rng(0)
        t = Tensor(rng.random((1, 1, 7, 5), dtype=np.float32))
        p = tmp_path / "rt.pgm"
        save_image(t, p)
        back = load_image(p)
        assert np.max(np.abs(back.data - t.data)) <= 1.0 / 510 + 1e-9

    def test_rejects_multichannel(self, tmp_path):
        t = Tensor(np.zeros((1, 3, 2, 2), dtype=np.float32))
        with pytest.raises(ValueError, match="single-channel"):
            save_image(t, tmp_path / "x.pgm")
