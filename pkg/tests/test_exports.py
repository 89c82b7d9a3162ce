import csv
import json

import numpy as np
import pytest

from src.exports import (
    RESULT_COLUMNS,
    fmt,
    read_csv_header,
    read_observation_jsonl,
    result_rows,
    write_csv,
    write_kernel_csv,
    write_observation_jsonl,
    write_report_csv,
    write_study_csv,
)
from src.harness import StudyConfig, run_study
from src.models import ObservationSet
from src.simulator import simulate_tree


def _rows(path):
    with open(path, encoding="utf-8") as f:
        return list(csv.reader(line for line in f if not line.startswith("# ")))


class TestFmt:
    @pytest.mark.parametrize(
        "value, text",
        [
            (None, ""),
            (True, "true"),
            (np.bool_(False), "false"),
            (np.int64(3), "3"),
            (0.1, "0.1"),
            (np.float64(1e-3), "0.001"),
            ("binary-uniform", "binary-uniform"),
        ],
    )
    def test_values(self, value, text):
        assert fmt(value) == text

    def test_floats_round_trip(self):
        x = 1.0 / 3.0
        assert float(fmt(x)) == x


class TestCsv:
    def test_header_and_rows(self, tmp_path):
        path = write_csv(tmp_path / "sub" / "t.csv", ("x", "y"), [(1, 0.5), (2, None)], {"b": 1, "a": [1, 2]})
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[:3] == ["# a=1,2", "# b=1", "x,y"]
        assert lines[3:] == ["1,0.5", "2,"]
        assert read_csv_header(path) == {"a": "1,2", "b": "1"}

    def test_report_rows_sorted(self, tmp_path):
        path = write_report_csv(tmp_path / "r.csv", {"z": 1, "a": 2.5})
        assert _rows(path) == [["key", "value"], ["a", "2.5"], ["z", "1"]]

    def test_kernel_dump(self, tmp_path):
        grid = np.column_stack([np.linspace(0, 1, 3), np.zeros(3), np.zeros(3)])
        rows = _rows(write_kernel_csv(tmp_path / "k.csv", grid))
        assert rows[0] == ["a", "phi", "dphi"]
        assert rows[2] == ["0.5", "0.0", "0.0"]


class TestJsonl:
    def test_tree_observation(self, tmp_path, uniform_law):
        obs = simulate_tree(uniform_law, 1e-2, seed=1)
        lines = read_observation_jsonl(write_observation_jsonl(obs, tmp_path / "o.jsonl"))
        header = lines[0]["header"]
        assert header["count"] == len(obs) == len(lines) - 1
        assert header["epsilon"] == 0.01 and header["sigma"] == 0.0
        first = lines[1]
        assert set(first) == {"label", "size", "noisy_size", "parent_size", "birth_time", "lifetime", "truncated"}
        assert first["size"] < 0.01 <= first["parent_size"]

    def test_sorted_keys(self, tmp_path):
        path = write_observation_jsonl(ObservationSet.from_sizes(0.1, [0.05]), tmp_path / "o.jsonl")
        record = path.read_text(encoding="utf-8").splitlines()[1]
        assert list(json.loads(record)) == sorted(json.loads(record))
        assert json.loads(record)["label"] == []


class TestStudyCsv:
    cfg = StudyConfig(law="binary-uniform", estimator="measure", fn="cutoff:0.4",
                      epsilons=(0.1, 0.05, 0.02), reps=4, seed=2)

    def test_rows(self):
        study = run_study(self.cfg)
        rows = result_rows(study.results)
        assert len(rows) == 3 * (4 + 1)
        assert [r[0] for r in rows[:5]] == ["replicate"] * 4 + ["summary"]
        assert all(len(r) == len(RESULT_COLUMNS) for r in rows)

    def test_byte_identical(self, tmp_path):
        a = write_study_csv(tmp_path / "a.csv", run_study(self.cfg))
        b = write_study_csv(tmp_path / "b.csv", run_study(self.cfg))
        assert a.read_bytes() == b.read_bytes()
        header = read_csv_header(a)
        assert header["config_hash"] == self.cfg.resolved().config_hash()
        assert header["root_seed"] == "2"
        assert header["cfg.epsilons"] == "0.1,0.05,0.02"
        assert "fit_slope" in header
