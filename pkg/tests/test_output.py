import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvsfde import output
from mvsfde.output import atomic_write_text, csv_text, fmt_number, json_text, line_plot_svg


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_formatting_round_trips(x):
    assert float(fmt_number(x)) == x


def test_csv_rfc4180():
    text = csv_text(["t", "note"], [[0.5, 'a,"b"'], [1, "plain"]])
    assert text == 't,note\n0.5,"a,""b"""\n1,plain\n'
    assert "\r" not in text


def test_csv_row_length_checked():
    with pytest.raises(ValueError):
        csv_text(["a", "b"], [[1]])


def test_json_is_deterministic_and_valid():
    obj = {"b": [1.0, 0.1, np.float64(1 / 3)], "a": {"nan": float("nan"), "flag": True, "n": np.int64(4)}}
    text = json_text(obj)
    assert text == json_text(dict(reversed(list(obj.items()))))
    back = json.loads(text)
    assert back["b"][2] == 1 / 3
    assert back["a"]["nan"] is None and back["a"]["flag"] is True
    assert text.index('"a"') < text.index('"b"')


def test_atomic_write_replaces_whole_file(tmp_path):
    path = tmp_path / "x.csv"
    atomic_write_text(path, "old\n")
    atomic_write_text(path, "new\n")
    assert path.read_text() == "new\n"
    assert os.listdir(tmp_path) == ["x.csv"]


def test_failed_write_leaves_previous_file(tmp_path, monkeypatch):
    path = tmp_path / "x.csv"
    atomic_write_text(path, "old\n")

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(output.os, "replace", boom)
    with pytest.raises(OSError):
        atomic_write_text(path, "partial")
    assert path.read_text() == "old\n"
    assert os.listdir(tmp_path) == ["x.csv"]


def test_svg_plot_is_well_formed():
    import xml.etree.ElementTree as ET

    svg = line_plot_svg([("m2", [0, 1, 2], [1, 0.1, 0.0])], "t", logy=True)
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 1
