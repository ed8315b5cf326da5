import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdlab.errors import (AllZeroCoefficients, BadMagic, DataError, InvariantViolation,
                          TruncatedFile, VersionMismatch)
from mdlab.fiber_modes import ModeCoefficients, solve_lp11
from mdlab.dataset import (DatasetHeader, check_label, conjugate_labels, decode_labels,
                           decode_many, encode_labels, generate_dataset, load_dataset,
                           read_header, render_sample, sample_coefficients, sample_rng,
                           save_dataset, seed_material, threads_from_env, write_dataset)
from mdlab.imaging import render_half
from mdlab.polarimetry import PRESETS


@st.composite
def labels(draw):
    z = np.array([draw(st.floats(0, 1))] + [draw(st.floats(-1, 1)) for _ in range(6)])
    if np.max(np.abs(z)) < 1e-3:
        z[0] = 1.0
    return z / np.max(np.abs(z))


class TestLabels:
    def test_encode_examples(self):
        np.testing.assert_array_equal(encode_labels(ModeCoefficients([1, 0, 0, 0])),
                                      [1, 0, 0, 0, 0, 0, 0])
        np.testing.assert_array_equal(encode_labels(ModeCoefficients([0.5, 0.5j, 0, 0])),
                                      [1, 0, 1, 0, 0, 0, 0])

    def test_layout(self):
        z = encode_labels(ModeCoefficients([0.1, 0.2 + 0.3j, 0.4 + 0.5j, 0.6 - 1.0j]))
        np.testing.assert_allclose(z, [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, -1.0], rtol=1e-15)

    def test_encode_all_zero(self):
        with pytest.raises(AllZeroCoefficients):
            encode_labels(np.zeros(4, complex))

    def test_decode_examples(self):
        c = decode_labels([1, 0, 0, 0, 0, 0, 0])
        np.testing.assert_array_equal(c.rho, [1, 0, 0, 0])
        assert c.phi[0] == 0
        c = decode_labels([1, 0, 1, 0, 0, 0, 0])
        assert c.rho[1] == 1 and c.phi[1] == pytest.approx(np.pi / 2)

    def test_decode_length(self):
        with pytest.raises(DataError):
            decode_labels(np.zeros(6))

    @settings(max_examples=100)
    @given(labels())
    def test_round_trip(self, z):
        np.testing.assert_allclose(encode_labels(decode_labels(z)), z, rtol=0, atol=1e-15)
        np.testing.assert_array_equal(decode_many(z[None])[0], decode_labels(z).c)

    def test_decode_encode_scales(self, rng):
        c = sample_coefficients(rng)
        z = encode_labels(c)
        peak = np.max(np.abs(np.concatenate([c.x, c.y[1:]])))
        np.testing.assert_allclose(decode_labels(z).c, c.c / peak, rtol=1e-14)

    def test_conjugate(self):
        z = np.arange(1, 8) / 7
        zc = conjugate_labels(z)
        np.testing.assert_array_equal(decode_labels(zc).c, decode_labels(z).conj().c)

    @pytest.mark.parametrize("bad", [[-0.1, 1, 0, 0, 0, 0, 0], [0.5, 0.2, 0, 0, 0, 0, 0],
                                     [1, 1.5, 0, 0, 0, 0, 0], [np.nan] * 7, [1, 0, 0]])
    def test_check_label(self, bad):
        with pytest.raises(InvariantViolation):
            check_label(np.array(bad))


class TestSampling:
    def test_gauge(self):
        for i in range(200):
            c = sample_coefficients(sample_rng(3, i))
            assert c.y[0] == 0 and 0 < c.x[0] <= 1

    def test_streams_are_reproducible(self):
        a = [sample_coefficients(sample_rng(9, i)).c for i in range(20)]
        b = [sample_coefficients(sample_rng(9, i)).c for i in range(20)]
        np.testing.assert_array_equal(a, b)
        assert seed_material(9, 3) == seed_material(9, 3)
        assert len(seed_material(9, 3)) == 16
        assert seed_material(9, 3) != seed_material(9, 4)

    def test_marginal_of_x2(self):
        rng = np.random.default_rng(42)
        x2 = np.array([sample_coefficients(rng).x[1] for _ in range(100_000)])
        assert abs(x2.mean()) < 0.01
        assert x2.min() >= -1 and x2.max() <= 1
        # uniform on [-1, 1] has variance 1/3
        assert abs(x2.var() - 1 / 3) < 0.01

    def test_labels_normalized(self):
        z = np.array([encode_labels(sample_coefficients(sample_rng(0, i)))
                      for i in range(10_000)])
        np.testing.assert_array_equal(np.max(np.abs(z), axis=1), 1.0)
        assert np.all(z[:, 0] >= 0)


class TestGenerate:
    def test_shapes(self):
        ds = generate_dataset(100, 0, PRESETS["n4"])
        assert ds.images.shape == (100, 121, 61, 4)
        assert ds.labels.shape == (100, 7)
        assert ds.images.dtype == np.float32
        assert np.all(ds.images.max(axis=(1, 2, 3)) == 1.0)

    def test_single_sample_determinism(self):
        a = generate_dataset(1, 77, PRESETS["n7"], threads=1)
        b = generate_dataset(1, 77, PRESETS["n7"], threads=3)
        assert a.images.tobytes() == b.images.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_independent_of_threads_and_chunking(self):
        a = generate_dataset(40, 5, PRESETS["n3"], threads=1, chunk=40)
        b = generate_dataset(40, 5, PRESETS["n3"], threads=4, chunk=7)
        assert a.images.tobytes() == b.images.tobytes()
        # sample i does not depend on how many samples are generated
        c = generate_dataset(10, 5, PRESETS["n3"])
        assert c.images.tobytes() == a.images[:10].tobytes()

    def test_render_consistency(self, spec):
        ds = generate_dataset(8, 11, PRESETS["n4"])
        basis = solve_lp11(spec)
        for img, z in zip(ds.images, ds.labels):
            again = render_half(basis, decode_labels(z), PRESETS["n4"], dtype=np.float32)
            assert again.tobytes() == img.tobytes()

    def test_render_sample_matches(self):
        ds = generate_dataset(3, 2, PRESETS["n3"])
        stack, label = render_sample(ds.header, 2)
        np.testing.assert_array_equal(stack, ds.images[2])
        np.testing.assert_array_equal(label, ds.labels[2])

    def test_bad_size(self):
        with pytest.raises(DataError):
            generate_dataset(0, 0, PRESETS["n3"])

    def test_threads_env(self, monkeypatch):
        monkeypatch.setenv("MDLAB_THREADS", "3")
        assert threads_from_env() == 3
        for bad in ("0", "x", "-2"):
            monkeypatch.setenv("MDLAB_THREADS", bad)
            with pytest.raises(DataError):
                threads_from_env()


@pytest.fixture(scope="module")
def ds():
    return generate_dataset(12, 4, PRESETS["n4"])


class TestFileFormat:
    def test_round_trip(self, ds, tmp_path):
        path = tmp_path / "d.bin"
        save_dataset(ds, path)
        for mmap in (False, True):
            back = load_dataset(path, mmap=mmap)
            assert back.header == ds.header
            assert np.asarray(back.images).tobytes() == ds.images.tobytes()
            assert back.labels.tobytes() == ds.labels.tobytes()

    def test_write_matches_save(self, ds, tmp_path):
        save_dataset(ds, tmp_path / "a.bin")
        write_dataset(tmp_path / "b.bin", 12, 4, PRESETS["n4"], threads=2, chunk=5)
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_layout(self, ds, tmp_path):
        path = tmp_path / "d.bin"
        save_dataset(ds, path)
        raw = path.read_bytes()
        line, rest = raw.split(b"\n", 1)
        header = json.loads(line)
        assert header["magic"] == "MDLP11\0"
        assert header["channels"] == ["LP0", "LP45", "LP90", "RHCP"]
        assert (header["n"], header["height"], header["width"]) == (12, 121, 61)
        assert header["label_len"] == 7 and header["seed"] == 4
        assert header["fiber"] == {"a_um": 12.5, "na": 0.1, "lambda_um": 1.064}
        assert header["grid"] == {"pixels": 121, "pitch_over_a": 0.02}
        assert "RHCP" in header["handedness"]
        n_img = 12 * 121 * 61 * 4
        images = np.frombuffer(rest[:4 * n_img], dtype="<f4")
        lbl = np.frombuffer(rest[4 * n_img:], dtype="<f4")
        np.testing.assert_array_equal(images.reshape(ds.images.shape), ds.images)
        np.testing.assert_array_equal(lbl.reshape(12, 7), ds.labels)

    def test_truncated(self, ds, tmp_path):
        path = tmp_path / "d.bin"
        save_dataset(ds, path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(TruncatedFile):
            load_dataset(path)
        path.write_bytes(b'{"magic": "MDLP11\\u0000"')
        with pytest.raises(TruncatedFile):
            read_header(path)

    def test_trailing_bytes(self, ds, tmp_path):
        path = tmp_path / "d.bin"
        save_dataset(ds, path)
        path.write_bytes(path.read_bytes() + b"\0\0\0\0")
        with pytest.raises(InvariantViolation):
            load_dataset(path)

    def _rewrite_header(self, ds, tmp_path, edit):
        path = tmp_path / "d.bin"
        save_dataset(ds, path)
        line, rest = path.read_bytes().split(b"\n", 1)
        header = json.loads(line)
        edit(header)
        path.write_bytes(json.dumps(header).encode() + b"\n" + rest)
        return path

    def test_bad_magic(self, ds, tmp_path):
        path = self._rewrite_header(ds, tmp_path, lambda h: h.update(magic="NOPE"))
        with pytest.raises(BadMagic):
            load_dataset(path)
        (tmp_path / "junk").write_bytes(b"\x89PNG\r\n")
        with pytest.raises(BadMagic):
            load_dataset(tmp_path / "junk")

    def test_version(self, ds, tmp_path):
        path = self._rewrite_header(ds, tmp_path, lambda h: h.update(version=2))
        with pytest.raises(VersionMismatch):
            load_dataset(path)

    def test_channel_list_mismatch(self, ds, tmp_path):
        path = self._rewrite_header(ds, tmp_path, lambda h: h.update(channels=["LP0", "LP45"]))
        with pytest.raises(InvariantViolation):
            load_dataset(path)

    def test_invalid_label_rejected(self, ds, tmp_path):
        bad = generate_dataset(12, 4, PRESETS["n4"])
        bad.labels = bad.labels.copy()
        bad.labels[3] *= 0.5
        save_dataset(bad, tmp_path / "d.bin")
        with pytest.raises(InvariantViolation):
            load_dataset(tmp_path / "d.bin")
        load_dataset(tmp_path / "d.bin", validate=False)

    def test_header_round_trip(self):
        h = DatasetHeader(n=5, channels=PRESETS["n7"], seed=123)
        assert DatasetHeader.from_json(h.to_json()) == h
