import numpy as np
import pytest

from monops import ResidualConvNet
from monops.fileio import (FileFormatError, load_checkpoint, load_kernel,
                           read_f32t, read_image, read_pgm, save_checkpoint,
                           save_kernel, write_f32t, write_pgm)


class TestPgm:
    def test_round_trip_quantized(self, rng, tmp_path):
        img = rng.uniform(0, 1, (6, 9))
        path = tmp_path / "img.pgm"
        write_pgm(path, img)
        back = read_pgm(path)
        assert back.shape == img.shape
        # the format quantizes to 8 bits through round(255 * clamp(v, 0, 1))
        np.testing.assert_allclose(back, np.rint(255 * img) / 255, atol=1e-12)

    def test_clamps_out_of_range(self, tmp_path):
        img = np.array([[-0.5, 0.5], [1.5, 1.0]])
        path = tmp_path / "img.pgm"
        write_pgm(path, img)
        back = read_pgm(path)
        np.testing.assert_allclose(back, [[0.0, 0.5], [1.0, 1.0]], atol=0.002)

    def test_header_format(self, tmp_path):
        write_pgm(tmp_path / "img.pgm", np.zeros((2, 3)))
        raw = (tmp_path / "img.pgm").read_bytes()
        assert raw.startswith(b"P5\n3 2\n255\n")
        assert len(raw) == len(b"P5\n3 2\n255\n") + 6

    def test_rejects_non_pgm(self, tmp_path):
        (tmp_path / "x.pgm").write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(FileFormatError):
            read_pgm(tmp_path / "x.pgm")


class TestF32t:
    def test_round_trip_exact_float32(self, rng, tmp_path):
        arr = rng.standard_normal((3, 4, 5))
        path = tmp_path / "t.f32t"
        write_f32t(path, arr)
        back = read_f32t(path)
        np.testing.assert_array_equal(back, arr.astype(np.float32).astype(np.float64))
        assert back.shape == arr.shape

    def test_magic_and_header(self, tmp_path):
        write_f32t(tmp_path / "t.f32t", np.zeros((2, 3)))
        raw = (tmp_path / "t.f32t").read_bytes()
        assert raw.startswith(b"F32T\n2 2 3\n")
        assert len(raw) == len(b"F32T\n2 2 3\n") + 4 * 6

    def test_little_endian_payload(self, tmp_path):
        write_f32t(tmp_path / "t.f32t", np.array([1.0]))
        raw = (tmp_path / "t.f32t").read_bytes()
        assert raw.endswith(np.array([1.0], dtype="<f4").tobytes())

    def test_truncated_payload_rejected(self, tmp_path):
        write_f32t(tmp_path / "t.f32t", np.zeros(4))
        data = (tmp_path / "t.f32t").read_bytes()
        (tmp_path / "bad.f32t").write_bytes(data[:-3])
        with pytest.raises(FileFormatError):
            read_f32t(tmp_path / "bad.f32t")

    def test_read_image_dispatches_on_suffix(self, rng, tmp_path):
        img = rng.uniform(0, 1, (4, 4))
        write_f32t(tmp_path / "a.f32t", img)
        write_pgm(tmp_path / "a.pgm", img)
        assert read_image(tmp_path / "a.f32t").shape == (4, 4)
        assert read_image(tmp_path / "a.pgm").shape == (4, 4)
        with pytest.raises(FileFormatError):
            read_image(tmp_path / "a.txt")


class TestKernelFiles:
    def test_round_trip_with_sidecar(self, rng, tmp_path):
        k = rng.uniform(0, 1, (5, 5))
        k /= k.sum()
        save_kernel(tmp_path / "k.f32t", k, normalized=True)
        back, meta = load_kernel(tmp_path / "k.f32t")
        assert meta["normalized"] is True
        assert meta["shape"] == [5, 5]
        np.testing.assert_allclose(back, k, atol=1e-7)


class TestCheckpoints:
    def test_round_trip(self, rng, tmp_path):
        net = ResidualConvNet(seed=3)
        save_checkpoint(tmp_path / "model.json", net, metadata={"note": "t"})
        back, meta = load_checkpoint(tmp_path / "model.json")
        assert meta == {"note": "t"}
        assert back.architecture() == net.architecture()
        # params survive the float32 blob round trip
        np.testing.assert_allclose(back.get_params(), net.get_params(),
                                   atol=1e-7)

    def test_forward_agreement_after_reload(self, rng, tmp_path):
        net = ResidualConvNet(seed=4)
        save_checkpoint(tmp_path / "model.json", net)
        back, _ = load_checkpoint(tmp_path / "model.json")
        x = rng.uniform(0, 1, (8, 8))
        np.testing.assert_allclose(back.forward(x), net.forward(x), atol=1e-6)

    def test_rejects_foreign_json(self, tmp_path):
        (tmp_path / "other.json").write_text('{"hello": 1}')
        with pytest.raises(FileFormatError):
            load_checkpoint(tmp_path / "other.json")
