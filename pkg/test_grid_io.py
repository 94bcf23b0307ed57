import json

import numpy as np
import pytest

import settings
from grid_io import (
    PGM_MAXVAL,
    read_heatmap,
    read_pgm,
    write_heatmap,
    write_manifest,
    write_pgm,
)


def test_pgm_header_and_scaling(tmp_path):
    values = np.array([[0.0, 0.5], [1.0, 0.25]])
    path = write_pgm(tmp_path / "h.pgm", values)
    data = path.read_bytes()
    assert data.startswith(b"P5\n2 2\n65535\n")
    back = read_pgm(path)
    np.testing.assert_allclose(back, values, atol=1.0 / PGM_MAXVAL)


def test_pgm_zero_grid(tmp_path):
    back = read_pgm(write_pgm(tmp_path / "z.pgm", np.zeros((3, 4))))
    assert back.shape == (3, 4)
    assert not back.any()


def test_pgm_rejects_negative(tmp_path):
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "bad.pgm", np.array([[-1.0]]))


def test_pgm_comment_in_header(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([0, 255]))
    np.testing.assert_allclose(read_pgm(path), [[0.0, 1.0]])


def test_csv_heatmap_is_exact(tmp_path):
    values = np.random.default_rng(0).random((3, 5))
    path = write_heatmap(tmp_path / "h.csv", values)
    np.testing.assert_array_equal(read_heatmap(path), values)


def test_unknown_extension(tmp_path):
    with pytest.raises(ValueError):
        write_heatmap(tmp_path / "h.png", np.ones((2, 2)))
    with pytest.raises(ValueError):
        read_heatmap(tmp_path / "h.txt")


def test_manifest_contents(tmp_path):
    path = write_manifest(tmp_path, "run", {"seed": 7, "eps": 1.0}, [tmp_path / "a.csv"])
    assert path.name == "run.manifest.json"
    doc = json.loads(path.read_text(encoding="utf-8"))
    assert doc["project"] == settings.PROJECT_NAME
    assert doc["seed"] == 7
    assert {"python", "numpy", "scipy", "ortools"} <= set(doc["libraries"])
    assert doc["outputs"] == [str(tmp_path / "a.csv")]
