import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sseweak.fileio import (
    ConfigError,
    RunManifest,
    finish_run,
    load_config,
    read_csv,
    read_operator,
    render_csv,
    write_csv,
    write_operator,
)

finite = st.floats(allow_nan=False, allow_infinity=False)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.data())
def test_operator_round_trip_is_lossless(rows, cols, data):
    vals = data.draw(st.lists(st.tuples(finite, finite), min_size=rows * cols, max_size=rows * cols))
    m = np.array([complex(a, b) for a, b in vals]).reshape(rows, cols)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "m.txt"
        write_operator(path, m)
        assert np.array_equal(read_operator(path), m)


def test_operator_file_format(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("# comment\n2 2\n1,0 0,-1\n\n0,1 2.5,0\n")
    assert np.array_equal(read_operator(path), np.array([[1, -1j], [1j, 2.5]]))


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("", "empty"),
        ("2\n", ":1: header"),
        ("2 2\n1,0 0,0\n", "expected 2 data rows"),
        ("1 2\n1,0\n", ":2: expected 2 entries"),
        ("1 1\n1;0\n", ":2: bad entry"),
        ("1 1\nnan,0\n", "non-finite"),
    ],
)
def test_operator_errors(tmp_path, text, fragment):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(ConfigError, match=fragment):
        read_operator(path)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=1, max_size=20))
def test_csv_round_trip_is_lossless(xs):
    text = render_csv(["x"], [(x,) for x in xs])
    vals = [float(v) for v in text.splitlines()[1:]]
    assert vals == [float(x) for x in xs]


def test_csv_manifest(tmp_path):
    m = RunManifest(command="simulate", problem={"model": "example1"}, run={"steps": 10})
    path = tmp_path / "out.csv"
    write_csv(path, ["t", "v"], [(0.0, 1.0), (0.1, 1 / 3)], m)
    back = read_csv(path)
    assert back.manifest == m.deterministic()
    assert back["v"][1] == 1 / 3
    text = path.read_text()
    assert f"# manifest_id: {m.manifest_id}" in text
    side = (tmp_path / "out.csv.manifest.json").read_text()
    assert m.timestamp in side and m.manifest_id in side
    assert m.timestamp not in text


def write_ini(tmp_path, body):
    path = tmp_path / "run.ini"
    path.write_text(body)
    return path


def test_example1_config(tmp_path):
    path = write_ini(
        tmp_path,
        "[problem]\nmodel = example1\nlevel = 10\n[run]\nhorizon = 5\nsteps = 100\n"
        "output_points = 50\ntrajectories = 200\nseed = 0x10\n[convergence]\nsteps = 50, 100 200\nJ = 0\n",
    )
    spec = load_config(path)
    assert spec.problem.dim == 11
    cfg = finish_run(spec)
    assert cfg.seed == 16 and cfg.steps == 100 and cfg.horizon == 5.0
    assert spec.convergence_steps == [50, 100, 200]
    assert finish_run(spec, steps=200, seed=None).steps == 200


def test_operator_config(tmp_path):
    write_operator(tmp_path / "h.txt", np.zeros((2, 2)))
    write_operator(tmp_path / "a.txt", np.diag([1.0, -1.0]))
    write_operator(tmp_path / "z.txt", np.array([[1.0], [0.0]]))
    write_operator(tmp_path / "l.txt", np.array([[0, 1], [0, 0]]))
    path = write_ini(
        tmp_path,
        "[problem]\nmodel = operators\nhamiltonian = h.txt\nobservable = a.txt\n"
        "initial_state = z.txt\nlindblads = l.txt\n[run]\nsteps = 100\n",
    )
    spec = load_config(path)
    assert spec.problem.noise_dim == 1
    assert spec.problem_spec["lindblads"] == ["l.txt"]


def test_missing_observable_names_key(tmp_path):
    write_operator(tmp_path / "h.txt", np.zeros((2, 2)))
    path = write_ini(tmp_path, "[problem]\nmodel = operators\nhamiltonian = h.txt\ninitial_state = h.txt\n")
    with pytest.raises(ConfigError, match="'observable'"):
        load_config(path)


@pytest.mark.parametrize(
    "body, fragment",
    [
        ("[problem]\nlevel = ten\n", "run.ini:2: .*level"),
        ("[problem]\n[run]\n\nsteps = 1.5\n", "run.ini:4: .*steps"),
        ("[problem]\n[run]\nscheme = rk4\n", "run.ini:3: .*valid schemes: scheme2, scheme3, explicit_euler"),
        ("[problem]\n[run]\nnoise = cauchy\n", "run.ini:3"),
        ("[problem]\nmodel = spin\n", "run.ini:2: .*unknown model"),
        ("[run]\nsteps = 10\n", "missing section \\[problem\\]"),
        ("[problem]\nstray line\n", "run.ini:2: cannot parse"),
        ("level = 3\n", "run.ini:1"),
        ("[problem]\nlevel = 3\nlevel = 4\n", "run.ini:3"),
        ("[problem]\nlevel = 3\n", "run.ini:2"),
    ],
)
def test_config_errors_carry_line_numbers(tmp_path, body, fragment):
    path = write_ini(tmp_path, body)
    with pytest.raises(ConfigError, match=fragment):
        load_config(path)


def test_run_validation_is_a_config_error(tmp_path):
    spec = load_config(write_ini(tmp_path, "[problem]\nlevel = 6\n[run]\nsteps = 7\n"))
    with pytest.raises(ConfigError, match="divisible"):
        finish_run(spec)
