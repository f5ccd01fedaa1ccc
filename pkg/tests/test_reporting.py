import numpy as np

from keldysh_lab.reporting import (CSV_HEADER_LINE, fmt_float, to_json_text,
                                   write_csv, write_json)
from keldysh_lab.linalg import matrix_from_json, matrix_to_json


def test_float_formatting():
    assert fmt_float(1.0) == "1"
    assert fmt_float(1.0 / 3.0) == "0.33333333333333331"


def test_json_sorted_and_stable(tmp_path):
    payload = {"b": 2, "a": [1.5, {"z": True, "y": None}],
               "c": complex(1.0, -2.0), "m": np.float64(0.1)}
    t1 = to_json_text(payload)
    t2 = to_json_text(dict(reversed(list(payload.items()))))
    assert t1 == t2
    assert '"a"' in t1.splitlines()[1]
    import json
    decoded = json.loads(t1)
    assert decoded["schema"] == "keldysh-lab/1"
    assert decoded["c"] == [1.0, -2.0]


def test_write_json_byte_identical(tmp_path):
    payload = {"value": 0.1 + 0.2, "seed": 42, "list": [1, 2, 3]}
    p1 = write_json(str(tmp_path / "a.json"), payload)
    p2 = write_json(str(tmp_path / "b.json"), payload)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_write_csv_schema_and_bytes(tmp_path):
    rows = [(1, 0.5, "x"), (2, 1.0 / 7.0, "y")]
    p1 = write_csv(str(tmp_path / "a.csv"), ["n", "v", "tag"], rows)
    p2 = write_csv(str(tmp_path / "b.csv"), ["n", "v", "tag"], rows)
    b1 = open(p1).read()
    assert b1 == open(p2).read()
    lines = b1.strip().splitlines()
    assert lines[0] == CSV_HEADER_LINE
    assert lines[1] == "n,v,tag"
    assert lines[2].startswith("1,0.5,")


def test_matrix_json_roundtrip():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    back = matrix_from_json(matrix_to_json(M))
    assert np.abs(back - M).max() == 0.0
