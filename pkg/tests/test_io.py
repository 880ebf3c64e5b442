"""On-disk formats: checkpoint roundtrip and byte determinism, header
validation, history records, and the run manifest."""

import json

import numpy as np
import pytest

from diffcd.errors import DataError
from diffcd.io import (MAGIC, append_history, load_checkpoint, read_history,
                       save_checkpoint, write_manifest)


def sample_arrays(rng):
    return {
        "weights": rng.normal(size=(4, 3)),
        "steps": np.arange(5, dtype=np.int64),
        "scalar": np.float64(2.5),
    }


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, rng):
        path = str(tmp_path / "ck.bin")
        arrays = sample_arrays(rng)
        meta = {"epoch": 7, "config_hash": "abc"}
        save_checkpoint(path, arrays, meta)
        loaded, got_meta = load_checkpoint(path)
        assert got_meta == meta
        assert set(loaded) == set(arrays)
        for name in arrays:
            np.testing.assert_array_equal(loaded[name], np.asarray(arrays[name]))
            assert loaded[name].dtype == np.asarray(arrays[name]).dtype

    def test_byte_determinism(self, tmp_path, rng):
        arrays = sample_arrays(rng)
        p1, p2 = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
        save_checkpoint(p1, arrays, {"epoch": 1})
        save_checkpoint(p2, {k: v.copy() if hasattr(v, "copy") else v
                             for k, v in arrays.items()}, {"epoch": 1})
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_magic_checked(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
        with pytest.raises(DataError, match="not a checkpoint"):
            load_checkpoint(str(path))

    def test_version_checked(self, tmp_path, rng):
        path = str(tmp_path / "ck.bin")
        save_checkpoint(path, sample_arrays(rng), {})
        raw = bytearray(open(path, "rb").read())
        raw[len(MAGIC)] = 99
        open(path, "wb").write(bytes(raw))
        with pytest.raises(DataError, match="version"):
            load_checkpoint(str(path))

    def test_no_tmp_file_left(self, tmp_path, rng):
        path = str(tmp_path / "ck.bin")
        save_checkpoint(path, sample_arrays(rng), {})
        assert [p.name for p in tmp_path.iterdir()] == ["ck.bin"]

    def test_loaded_arrays_writable(self, tmp_path, rng):
        path = str(tmp_path / "ck.bin")
        save_checkpoint(path, sample_arrays(rng), {})
        loaded, _ = load_checkpoint(path)
        loaded["weights"][0, 0] = 42.0  # must not raise (owns its buffer)


class TestHistory:
    def test_append_and_read(self, tmp_path):
        path = str(tmp_path / "history.jsonl")
        append_history(path, {"epoch": 0, "total": 1.5})
        append_history(path, {"epoch": 1, "total": 1.2})
        records = read_history(path)
        assert records == [{"epoch": 0, "total": 1.5}, {"epoch": 1, "total": 1.2}]

    def test_records_are_sorted_json_lines(self, tmp_path):
        path = str(tmp_path / "history.jsonl")
        append_history(path, {"b": 1, "a": 2})
        line = open(path).readline().rstrip("\n")
        assert line == '{"a": 2, "b": 1}'


class TestManifest:
    def test_write(self, tmp_path):
        path = str(tmp_path / "manifest.json")
        write_manifest(path, {"lr": 0.04, "seed": 0})
        with open(path) as fh:
            assert json.load(fh) == {"lr": 0.04, "seed": 0}
