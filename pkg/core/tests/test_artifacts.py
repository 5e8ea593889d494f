import tempfile
from pathlib import Path

import joblib
import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from core.artifacts import (
    atomic_path,
    load_model,
    read_arrays,
    read_csv,
    read_json,
    save_model,
    write_arrays,
    write_csv,
    write_json,
)
from core.exceptions import ArtifactError


class ArtifactFileTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_failed_write_leaves_nothing_behind(self):
        target = self.root / "out.json"
        write_json(target, {"ok": True})
        with self.assertRaises(RuntimeError):
            with atomic_path(target) as tmp:
                tmp.write_text("partial")
                raise RuntimeError("boom")
        self.assertEqual(read_json(target), {"ok": True})
        self.assertEqual([p.name for p in self.root.iterdir()], ["out.json"])

    def test_json_handles_numpy_values(self):
        path = write_json(self.root / "nested" / "m.json", {"n": np.int64(3), "x": np.float32(0.5), "a": np.arange(2)})
        self.assertEqual(read_json(path), {"a": [0, 1], "n": 3, "x": 0.5})

    def test_csv_required_columns(self):
        path = write_csv(self.root / "f.csv", pd.DataFrame({"a": [1, 2]}))
        self.assertEqual(list(read_csv(path, required_columns=["a"])["a"]), [1, 2])
        with self.assertRaises(ArtifactError):
            read_csv(path, required_columns=["a", "b"])

    def test_missing_files(self):
        for reader in (read_json, read_csv, read_arrays):
            with self.subTest(reader=reader.__name__), self.assertRaises(ArtifactError):
                reader(self.root / "absent")

    def test_arrays(self):
        path = write_arrays(self.root / "a.npz", x=np.eye(2), label=np.array(["REAL", "FAKE"]))
        arrays = read_arrays(path)
        np.testing.assert_array_equal(arrays["x"], np.eye(2))
        self.assertEqual(list(arrays["label"]), ["REAL", "FAKE"])


class ModelEnvelopeTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.path = Path(self._tmp.name) / "model.joblib"

    def tearDown(self):
        self._tmp.cleanup()

    def test_envelope_fields(self):
        save_model(self.path, "head", {"weights": [1, 2]}, seed=7)
        envelope = load_model(self.path, expected_kind="head")
        self.assertEqual(envelope["seed"], 7)
        self.assertEqual(envelope["payload"], {"weights": [1, 2]})

    def test_kind_mismatch(self):
        save_model(self.path, "detectors", {}, seed=0)
        with self.assertRaises(ArtifactError):
            load_model(self.path, expected_kind="head")

    def test_foreign_pickle(self):
        joblib.dump([1, 2, 3], self.path)
        with self.assertRaises(ArtifactError):
            load_model(self.path)

    def test_unreadable_file(self):
        self.path.write_bytes(b"not a pickle")
        with self.assertRaises(ArtifactError):
            load_model(self.path)
