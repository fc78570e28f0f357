"""Tests for zsnpg.io module."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from zsnpg.errors import GameValidationError
from zsnpg.generators import random_game
from zsnpg.io import (
    TRACE_HEADER,
    game_from_dict,
    game_to_dict,
    load_game,
    read_json,
    read_trace,
    save_game,
    write_json,
    write_trace,
)


def _one_state_dict(**overrides) -> dict:
    data = {
        "n_states": 1,
        "n_actions": 2,
        "gamma": 0.9,
        "reward": [[[1.0, 0.0], [0.0, 1.0]]],
        "transition": [[[[1.0], [1.0]], [[1.0], [1.0]]]],
    }
    data.update(overrides)
    return data


# ---------------------------------------------------------------------------
# Game files
# ---------------------------------------------------------------------------


class TestGameFiles:
    def test_save_then_load(self, tmp_path: Path):
        game = random_game(3, 2, 0.8, seed=0)
        path = tmp_path / "games" / "g.json"
        save_game(game, path)
        loaded = load_game(path)
        assert np.array_equal(loaded.transition, game.transition)
        assert np.array_equal(loaded.reward, game.reward)
        assert loaded.gamma == 0.8

    def test_minimal_dict(self):
        game = game_from_dict(_one_state_dict())
        assert game.n_states == 1
        assert game.n_actions == 2
        assert game_to_dict(game)["reward"] == [[[1.0, 0.0], [0.0, 1.0]]]

    def test_parse_error_has_position(self, tmp_path: Path):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "n_states": ,\n}\n')
        with pytest.raises(GameValidationError) as excinfo:
            load_game(path)
        assert excinfo.value.line == 2
        assert excinfo.value.column > 0
        assert "line 2" in str(excinfo.value)

    def test_not_an_object(self):
        with pytest.raises(GameValidationError, match="JSON object"):
            game_from_dict([1, 2, 3])

    def test_missing_keys_listed(self):
        data = _one_state_dict()
        del data["gamma"], data["transition"]
        with pytest.raises(GameValidationError) as excinfo:
            game_from_dict(data)
        assert excinfo.value.problems == ["gamma: required", "transition: required"]

    def test_every_bad_entry_reported(self):
        data = _one_state_dict(
            reward=[[[1.5, 0.0], [0.0, -0.2]]],
            transition=[[[[1.0], [0.5]], [[1.0], [1.0]]]],
        )
        with pytest.raises(GameValidationError) as excinfo:
            game_from_dict(data)
        problems = excinfo.value.problems
        assert len(problems) == 3
        assert any(p.startswith("reward[0][0][0]") for p in problems)
        assert any(p.startswith("reward[0][1][1]") for p in problems)
        assert any(p.startswith("transition[0][0][1]") for p in problems)

    def test_declared_shape_must_match(self):
        with pytest.raises(GameValidationError) as excinfo:
            game_from_dict(_one_state_dict(n_states=2))
        assert any("does not match declared" in p for p in excinfo.value.problems)

    def test_ragged_lists(self):
        with pytest.raises(GameValidationError) as excinfo:
            game_from_dict(_one_state_dict(reward=[[[1.0, 0.0], [0.0]]]))
        assert excinfo.value.problems[0].startswith("reward:")

    def test_gamma_must_be_number(self):
        with pytest.raises(GameValidationError) as excinfo:
            game_from_dict(_one_state_dict(gamma="0.9"))
        assert excinfo.value.problems == ["gamma: must be a number, got '0.9'"]

    def test_gamma_out_of_range(self):
        with pytest.raises(GameValidationError) as excinfo:
            game_from_dict(_one_state_dict(gamma=1.0))
        assert excinfo.value.problems == ["gamma: must lie in [0, 1), got 1.0"]

    def test_invariant_violations_carry_lines(self, tmp_path: Path):
        path = tmp_path / "bad.json"
        path.write_text(
            "{\n"
            '  "n_states": 1,\n'
            '  "n_actions": 2,\n'
            '  "gamma": 0.9,\n'
            '  "reward": [[[1.0, 0.0], [0.0, 1.0]]],\n'
            '  "transition": [\n'
            "    [\n"
            "      [[1.0], [0.5]],\n"
            "      [[1.0], [-1.0]]\n"
            "    ]\n"
            "  ]\n"
            "}\n"
        )
        with pytest.raises(GameValidationError) as excinfo:
            load_game(path)
        assert excinfo.value.problems == [
            "line 9: transition[0][1][1][0] = -1.0 is negative or not finite",
            "line 8: transition[0][0][1] sums to 0.5, expected 1",
            "line 9: transition[0][1][1] sums to -1.0, expected 1",
        ]
        assert (excinfo.value.line, excinfo.value.column) == (9, 16)
        assert str(excinfo.value).startswith("line 9, column 16: invalid game file")

    def test_scalar_and_shape_problems_point_at_their_keys(self, tmp_path: Path):
        path = tmp_path / "bad.json"
        data = _one_state_dict(gamma=1.5)
        path.write_text(json.dumps(data, indent=2))
        with pytest.raises(GameValidationError) as excinfo:
            load_game(path)
        assert excinfo.value.problems == ["line 4: gamma: must lie in [0, 1), got 1.5"]

        path.write_text(json.dumps(_one_state_dict(n_states=2), indent=2))
        with pytest.raises(GameValidationError) as excinfo:
            load_game(path)
        assert excinfo.value.problems[0].startswith("line 5: reward: shape")

    def test_missing_file(self, tmp_path: Path):
        with pytest.raises(FileNotFoundError):
            load_game(tmp_path / "absent.json")


class TestJson:
    def test_write_creates_parents(self, tmp_path: Path):
        path = tmp_path / "a" / "b" / "report.json"
        write_json(path, {"x": 1})
        assert read_json(path) == {"x": 1}
        assert path.read_text().endswith("\n")

    def test_read_error_is_validation_error(self, tmp_path: Path):
        path = tmp_path / "bad.json"
        path.write_text("not json")
        with pytest.raises(GameValidationError, match="line 1"):
            read_json(path)


# ---------------------------------------------------------------------------
# Trace CSVs
# ---------------------------------------------------------------------------


class TestTraces:
    def _trace(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "k": [1, 2],
                "exploitability": [0.25, 1.0 / 3.0],
                "wallclock_ms": [12.5, 30.1],
            }
        )

    def test_header_line(self, tmp_path: Path):
        path = write_trace(self._trace(), tmp_path / "trace.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == TRACE_HEADER
        assert lines[1] == "k,exploitability"

    def test_wallclock_dropped_by_default(self, tmp_path: Path):
        df = read_trace(write_trace(self._trace(), tmp_path / "trace.csv"))
        assert list(df.columns) == ["k", "exploitability"]
        assert df["exploitability"].iloc[1] == pytest.approx(1.0 / 3.0, rel=1e-11)

    def test_wallclock_kept_with_timing(self, tmp_path: Path):
        df = read_trace(write_trace(self._trace(), tmp_path / "trace.csv", timing=True))
        assert "wallclock_ms" in df.columns

    def test_repeated_writes_are_identical(self, tmp_path: Path):
        first = write_trace(self._trace(), tmp_path / "one.csv").read_bytes()
        second = write_trace(self._trace(), tmp_path / "two.csv").read_bytes()
        assert first == second

    def test_input_frame_untouched(self, tmp_path: Path):
        trace = self._trace()
        write_trace(trace, tmp_path / "trace.csv")
        assert "wallclock_ms" in trace.columns

    def test_read_rejects_foreign_csv(self, tmp_path: Path):
        path = tmp_path / "plain.csv"
        path.write_text("k,exploitability\n1,0.5\n")
        with pytest.raises(ValueError, match="expected trace header"):
            read_trace(path)
