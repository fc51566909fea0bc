import numpy as np
import pytest

from sensemat.fileio import (
    CorruptedFileError,
    UnsupportedVersionError,
    load_dataset_file,
    load_matrix_file,
    save_dataset_file,
    save_matrix_file,
    write_atomic,
)


class TestAtomicWrite:
    def test_writes_bytes(self, tmp_path):
        path = tmp_path / "x.bin"
        write_atomic(path, b"hello")
        assert path.read_bytes() == b"hello"

    def test_no_partial_files_left(self, tmp_path):
        write_atomic(tmp_path / "x.bin", b"data")
        leftovers = [p for p in tmp_path.iterdir() if p.name.startswith(".tmp_")]
        assert leftovers == []


class TestDatasetContainer:
    def payload(self):
        rng = np.random.default_rng(0)
        return rng.standard_normal((7, 5, 2))

    def test_round_trip(self, tmp_path):
        samples = self.payload()
        path = tmp_path / "d.smd"
        save_dataset_file(path, samples, 3, (5, 1, 1), {"note": "x"})
        got, sparsity, counts, meta = load_dataset_file(path)
        assert got.tobytes() == samples.tobytes()
        assert sparsity == 3
        assert counts == (5, 1, 1)
        assert meta == {"note": "x"}

    def test_bad_counts_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            save_dataset_file(tmp_path / "d.smd", self.payload(), 3, (5, 1, 2), {})

    def test_trailing_garbage_detected(self, tmp_path):
        path = tmp_path / "d.smd"
        save_dataset_file(path, self.payload(), 3, (5, 1, 1), {})
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(CorruptedFileError):
            load_dataset_file(path)

    def test_corrupt_metadata(self, tmp_path):
        path = tmp_path / "d.smd"
        save_dataset_file(path, self.payload(), 3, (5, 1, 1), {"k": 1})
        blob = bytearray(path.read_bytes())
        # metadata JSON starts right after the fixed header (5 + 36 bytes + 4 len)
        blob[45] = 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptedFileError):
            load_dataset_file(path)


class TestMatrixContainer:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        data = rng.standard_normal((3, 9))
        path = tmp_path / "m.smmx"
        save_matrix_file(path, data, kind="gae", normalized=False, alpha=0.25,
                         meta={"depth": 4})
        got, kind, normalized, alpha, meta = load_matrix_file(path)
        assert got.tobytes() == data.tobytes()
        assert (kind, normalized, alpha) == ("gae", False, 0.25)
        assert meta == {"depth": 4}

    def test_nan_alpha_round_trips(self, tmp_path):
        path = tmp_path / "m.smmx"
        save_matrix_file(path, np.ones((1, 2)), kind="gaussian",
                         normalized=True, alpha=float("nan"), meta={})
        _, _, _, alpha, _ = load_matrix_file(path)
        assert np.isnan(alpha)

    def test_version_check(self, tmp_path):
        path = tmp_path / "m.smmx"
        save_matrix_file(path, np.ones((1, 2)), kind="g", normalized=False,
                         alpha=1.0, meta={})
        blob = bytearray(path.read_bytes())
        blob[4] = 2
        path.write_bytes(bytes(blob))
        with pytest.raises(UnsupportedVersionError):
            load_matrix_file(path)

    def test_truncation(self, tmp_path):
        path = tmp_path / "m.smmx"
        save_matrix_file(path, np.ones((2, 4)), kind="g", normalized=False,
                         alpha=1.0, meta={})
        blob = path.read_bytes()
        path.write_bytes(blob[:-5])
        with pytest.raises(CorruptedFileError):
            load_matrix_file(path)
