import json
import math
import struct

import numpy as np
import pytest

import spg


def test_importance_of_simple_gradient():
    imp = spg.raw_importance(np.array([1.0, 2.0, 3.0]))
    assert imp[1] == 0.0
    assert imp[0] == pytest.approx(math.tanh(math.sqrt(1.5)))
    assert np.all(spg.raw_importance(np.full(5, 2.0)) == 0.0)


def test_metrics():
    acc = np.array([[0.9, 0.8], [np.nan, 0.7]])
    assert spg.avg_accuracy(acc) == pytest.approx(0.75)
    assert spg.backward_transfer(acc) == pytest.approx(-0.1)
    assert spg.forward_transfer(acc, [0.9, 0.6]) == pytest.approx(0.05)
    assert spg.backward_transfer(np.array([[0.5]])) is None
    with pytest.raises(ValueError):
        spg.forward_transfer(acc, [0.9])


def test_stream_shapes():
    tasks = spg.make_stream("dissimilar", n_tasks=2, classes_per_task=3, dim=4, samples_per_class=20, seed=1)
    assert len(tasks) == 2
    assert tasks[0]["train"]["inputs"].shape == (48, 4)
    assert set(tasks[1]["test"]["labels"]) <= {0, 1, 2}


def test_run_spg_beats_nothing_and_is_deterministic():
    kwargs = dict(n_tasks=2, dim=8, samples_per_class=60, hidden=[8], epochs=20, patience=5, lr=0.3, batch_size=32)
    a = spg.run_continual("SPG", **kwargs)
    b = spg.run_continual("SPG", **kwargs)
    assert a["accuracy"].shape == (2, 2)
    assert math.isnan(a["accuracy"][1, 0])
    assert np.array_equal(a["accuracy"], b["accuracy"], equal_nan=True)
    assert 0.0 <= a["avg_accuracy"] <= 1.0
    assert len(a["blocked"]) == 2


def test_load_idx(tmp_path):
    images = struct.pack(">IIII", 0x803, 1, 2, 2) + bytes([0, 51, 204, 255])
    labels = struct.pack(">II", 0x801, 1) + bytes([3])
    (tmp_path / "img").write_bytes(images)
    (tmp_path / "lab").write_bytes(labels)
    x, y = spg.load_idx(str(tmp_path / "img"), str(tmp_path / "lab"))
    assert x.tolist() == [[0.0, 0.2, 0.8, 1.0]]
    assert y == [3]
    with pytest.raises(spg.IdxError):
        spg.load_idx(str(tmp_path / "lab"), str(tmp_path / "lab"))


def test_cli_run_and_bad_config(tmp_path):
    cfg = {
        "stream": {"kind": "dissimilar", "n_tasks": 2, "classes_per_task": 2, "dim": 4, "samples_per_class": 30},
        "hidden": [4],
        "methods": ["NCL", "SPG"],
        "train": {"lr": 0.3, "epochs": 5, "batch_size": 16, "patience": 3},
        "seeds": [0, 1],
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, log = spg.cli("run", str(path), out=str(tmp_path / "out"))
    assert code == 0, log
    assert len(list((tmp_path / "out" / "runs").iterdir())) == 4
    cfg["typo"] = 1
    path.write_text(json.dumps(cfg))
    code, log = spg.cli("run", str(path), out=str(tmp_path / "out"))
    assert code == 2
    assert "typo" in log
