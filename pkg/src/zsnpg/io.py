"""Game files, trace CSVs and JSON reports."""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .errors import GameValidationError
from .game import MarkovGame, validate_game_arrays

SCHEMA_VERSION = "v1"
TRACE_HEADER = f"# zsnpg trace schema {SCHEMA_VERSION}"
GAME_KEYS = ("n_states", "n_actions", "gamma", "reward", "transition")
PROBLEM_PATH = re.compile(r"^(\w+)((?:\[\d+\])*)")
WHITESPACE = re.compile(r"[ \t\n\r]*")


def _parse_json(text: str, source: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise GameValidationError(f"{source}: {exc.msg}", line=exc.lineno, column=exc.colno) from exc


def _skip(text: str, idx: int) -> int:
    return WHITESPACE.match(text, idx).end()


def _locate(text: str, path: list[str | int]) -> int | None:
    """Character offset of the value at `path` in a JSON document, or None if absent."""
    decoder = json.JSONDecoder()
    idx = _skip(text, 0)
    try:
        for step in path:
            if isinstance(step, str) and text[idx] == "{":
                idx = _skip(text, idx + 1)
                while text[idx] != "}":
                    key, idx = decoder.raw_decode(text, idx)
                    idx = _skip(text, _skip(text, idx) + 1)
                    if key == step:
                        break
                    _, idx = decoder.raw_decode(text, idx)
                    idx = _skip(text, idx)
                    if text[idx] == ",":
                        idx = _skip(text, idx + 1)
                else:
                    return None
            elif isinstance(step, int) and text[idx] == "[":
                idx = _skip(text, idx + 1)
                for _ in range(step):
                    if text[idx] == "]":
                        return None
                    _, idx = decoder.raw_decode(text, idx)
                    idx = _skip(text, idx)
                    if text[idx] == ",":
                        idx = _skip(text, idx + 1)
                if text[idx] == "]":
                    return None
            else:
                return None
    except (IndexError, json.JSONDecodeError):
        return None
    return idx


def _position(text: str, problem: str) -> tuple[int, int] | None:
    """1-based (line, column) of the key or element a problem message starts with."""
    match = PROBLEM_PATH.match(problem)
    if match is None:
        return None
    path: list[str | int] = [match.group(1)] + [int(i) for i in re.findall(r"\d+", match.group(2))]
    offset = _locate(text, path)
    if offset is None:
        return None
    return text.count("\n", 0, offset) + 1, offset - text.rfind("\n", 0, offset)


def _invalid(message: str, problems: list[str], text: str | None) -> GameValidationError:
    """Validation error whose problems carry source lines when the file text is known."""
    if text is None:
        return GameValidationError(message, problems)
    positions = [_position(text, problem) for problem in problems]
    located = [f"line {pos[0]}: {problem}" if pos else problem for pos, problem in zip(positions, problems)]
    first = next((pos for pos in positions if pos), (None, None))
    return GameValidationError(message, located, line=first[0], column=first[1])


def _as_array(data: dict, key: str, ndim: int) -> tuple[np.ndarray | None, str | None]:
    try:
        array = np.asarray(data[key], dtype=float)
    except (TypeError, ValueError):
        return None, f"{key}: must be a rectangular nested list of numbers"
    if array.ndim != ndim:
        return None, f"{key}: expected {ndim} nested levels, got {array.ndim}"
    return array, None


def game_from_dict(data: Any, *, text: str | None = None) -> MarkovGame:
    """Build a game from the JSON schema, collecting every problem before raising.

    With the source `text` each problem is prefixed with the line of the
    offending key or element.
    """
    if not isinstance(data, dict):
        raise GameValidationError("game file must contain a JSON object")
    missing = [key for key in GAME_KEYS if key not in data]
    if missing:
        raise GameValidationError("game file is missing required keys", [f"{key}: required" for key in missing])

    problems = []
    for key, kinds in (("n_states", int), ("n_actions", int), ("gamma", (int, float))):
        value = data[key]
        if isinstance(value, bool) or not isinstance(value, kinds):
            problems.append(f"{key}: must be a number, got {value!r}")
    if problems:
        raise _invalid("invalid game file", problems, text)

    reward, problem = _as_array(data, "reward", 3)
    if problem:
        problems.append(problem)
    transition, problem = _as_array(data, "transition", 4)
    if problem:
        problems.append(problem)
    if problems:
        raise _invalid("invalid game file", problems, text)

    n_states, n_actions = data["n_states"], data["n_actions"]
    expected = {"reward": (n_states, n_actions, n_actions), "transition": (n_states, n_actions, n_actions, n_states)}
    for key, array in (("reward", reward), ("transition", transition)):
        if array.shape != expected[key]:
            problems.append(f"{key}: shape {array.shape} does not match declared n_states/n_actions {expected[key]}")
    if problems:
        raise _invalid("invalid game file", problems, text)

    problems = validate_game_arrays(transition, reward, data["gamma"])
    if problems:
        raise _invalid("invalid game file", problems, text)
    return MarkovGame(transition=transition, reward=reward, gamma=float(data["gamma"]))


def game_to_dict(game: MarkovGame) -> dict:
    return {
        "n_states": game.n_states,
        "n_actions": game.n_actions,
        "gamma": game.gamma,
        "reward": game.reward.tolist(),
        "transition": game.transition.tolist(),
    }


def load_game(path: Path) -> MarkovGame:
    """Read and validate a game JSON file."""
    text = Path(path).read_text()
    return game_from_dict(_parse_json(text, str(path)), text=text)


def save_game(game: MarkovGame, path: Path) -> None:
    write_json(path, game_to_dict(game))


def write_json(path: Path, data: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2) + "\n")


def read_json(path: Path) -> Any:
    path = Path(path)
    return _parse_json(path.read_text(), str(path))


def write_trace(df: pd.DataFrame, path: Path, *, timing: bool = False) -> Path:
    """Write a trace CSV behind the schema header line.

    The wallclock column is dropped unless `timing` is set, so repeated
    runs produce byte-identical files.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not timing:
        df = df.drop(columns=["wallclock_ms"], errors="ignore")
    with path.open("w", newline="") as handle:
        handle.write(TRACE_HEADER + "\n")
        df.to_csv(handle, index=False, float_format="%.12g", lineterminator="\n")
    return path


def read_trace(path: Path) -> pd.DataFrame:
    path = Path(path)
    with path.open() as handle:
        header = handle.readline().rstrip("\n")
    if header != TRACE_HEADER:
        raise ValueError(f"{path}: expected trace header {TRACE_HEADER!r}, got {header!r}")
    return pd.read_csv(path, skiprows=1)
