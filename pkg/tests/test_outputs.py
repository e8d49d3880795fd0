"""Delimited tables and JSON documents round-trip bitwise."""

import json

import numpy as np
import pytest

from qmeas.outputs import format_value, read_csv, write_csv, write_json


def test_format_value():
    assert format_value(True) == "true"
    assert format_value(False) == "false"
    assert format_value(3) == "3"
    assert format_value(np.int64(-7)) == "-7"
    assert format_value(0.1) == "1.0000000000000001e-01"
    assert format_value(np.float64(2.0)) == "2.0000000000000000e+00"
    assert format_value("phi") == "phi"


def test_csv_round_trip_is_bitwise(tmp_path):
    path = tmp_path / "out" / "table.csv"
    values = np.array([[0.1, 1.0 / 3.0], [1e-300, -2.5e17]])
    write_csv(path, ["a", "b"], values.tolist(),
              provenance={"sigma": 2.0, "scenario": "mini"})
    prov, columns, data = read_csv(path)
    assert columns == ["a", "b"]
    assert prov == {"sigma": "2.0", "scenario": "mini"}
    # 17 significant digits reproduce the doubles exactly
    assert data.shape == values.shape
    assert np.array_equal(data, values)


def test_csv_provenance_is_sorted(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["x"], [[1.0]],
                     provenance={"zeta": 1, "alpha": 2})
    lines = open(path).read().splitlines()
    assert lines[0] == "# alpha: 2"
    assert lines[1] == "# zeta: 1"
    assert lines[2] == "x"


def test_csv_rejects_ragged_rows(tmp_path):
    with pytest.raises(ValueError, match="width 3 against 2 columns"):
        write_csv(tmp_path / "t.csv", ["a", "b"], [[1.0, 2.0, 3.0]])


def test_csv_empty_body(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["a", "b"], [])
    prov, columns, data = read_csv(path)
    assert prov == {}
    assert columns == ["a", "b"]
    assert data.shape == (0, 2)


def test_json_document(tmp_path):
    payload = {
        "b": np.float64(0.5),
        "a": np.arange(3),
        "c": {"nested": (1, 2)},
        "z": 1.5 + 0.25j,
        "flag": True,
    }
    path = write_json(tmp_path / "doc.json", payload)
    text = open(path).read()
    assert text.endswith("\n")
    doc = json.loads(text)
    assert doc["a"] == [0, 1, 2]
    assert doc["b"] == 0.5
    assert doc["c"] == {"nested": [1, 2]}
    assert doc["z"] == {"re": 1.5, "im": 0.25}
    assert doc["flag"] is True
    # keys come out sorted, so identical payloads give identical bytes
    assert list(json.loads(text).keys()) == sorted(doc.keys())
    path2 = write_json(tmp_path / "doc2.json", payload)
    assert open(path2, "rb").read() == open(path, "rb").read()
