"""Experiment configuration files (JSON).

Example::

    {
      "game": {"type": "rps", "a": 1.0, "b": 2.0},
      "delays": "abs-diff",
      "rho": 0.25,
      "lambda0": 1.0,
      "tuner": true,
      "delta": 0.25,
      "x0": [0.6, 0.2, 0.2],
      "h": 0.001,
      "T": 500
    }
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .delayed_dynamics import SCHEMES, DelayMatrix, default_stride
from .games import Game, linear_game, rps, with_ne_set
from .revision import ProtocolParams, auto_rho
from .tuner import TunerConfig

DEFAULT_RHO_WHEN_UNCONSTRAINED = 1.0


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source:
            where = f"{source}:{line}: " if line else f"{source}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)


@dataclass
class ExperimentConfig:
    game: dict
    x0: list | None = None
    T: float | None = None
    delays: Any = "abs-diff"
    rho: Any = "auto"
    lambda0: float = 1.0
    delta: float = 0.25
    tuner: bool = False
    h: float | None = None
    stride: int | None = None
    scheme: str = "euler"
    out: str = "out"
    label: str = ""
    tail_fraction: float = 0.5
    thresholds: dict = field(default_factory=lambda: {"ne_dist": 1e-2, "transit": 1e-2})

    def to_dict(self) -> dict:
        return asdict(self)


_KNOWN = {f.name for f in fields(ExperimentConfig)}
_RUN_KEYS = {"x0", "T"}


def _line_of(text: str | None, key: str) -> int | None:
    if not text:
        return None
    pat = re.compile(r'"' + re.escape(key) + r'"\s*:')
    for i, line in enumerate(text.splitlines(), 1):
        if pat.search(line):
            return i
    return None


def _num(v, key, err, *, positive=False, nonneg=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise err(f"'{key}' must be a number, got {v!r}", key)
    if not math.isfinite(v):
        raise err(f"'{key}' must be finite", key)
    if positive and not v > 0:
        raise err(f"'{key}' must be positive, got {v!r}", key)
    if nonneg and v < 0:
        raise err(f"'{key}' must be non-negative, got {v!r}", key)
    if integer and int(v) != v:
        raise err(f"'{key}' must be an integer, got {v!r}", key)
    return int(v) if integer else float(v)


def _matrix(v, key, err, n=None):
    try:
        a = np.array(v, dtype=float)
    except (TypeError, ValueError):
        raise err(f"'{key}' must be a numeric matrix", key) from None
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise err(f"'{key}' must be a square matrix", key)
    if n is not None and a.shape[0] != n:
        raise err(f"'{key}' must be {n}x{n}, got {a.shape[0]}x{a.shape[1]}", key)
    return a


def parse_config(data: dict, text: str | None = None, source: str | None = None,
                 require_run: bool = True) -> ExperimentConfig:
    """Validate a decoded config mapping; ``text`` is used to point at offending lines.

    With ``require_run=False`` only the game description is mandatory.
    """

    def err(msg, key=None):
        return ConfigError(msg, _line_of(text, key) if key else None, source)

    if not isinstance(data, dict):
        raise err("top level must be a JSON object")
    unknown = sorted(set(data) - _KNOWN)
    if unknown:
        raise err(f"unknown key(s): {', '.join(unknown)}", unknown[0])
    missing = sorted(({"game"} | (_RUN_KEYS if require_run else set())) - set(data))
    if missing:
        raise err(f"missing required key(s): {', '.join(missing)}")

    game = data["game"]
    if not isinstance(game, dict) or "type" not in game:
        raise err("'game' must be an object with a 'type'", "game")
    gtype = game["type"]
    if gtype == "rps":
        extra = set(game) - {"type", "a", "b"}
        if extra:
            raise err(f"unknown game key(s): {', '.join(sorted(extra))}", sorted(extra)[0])
        _num(game.get("a", 1.0), "a", err, positive=True)
        _num(game.get("b", 2.0), "b", err, positive=True)
        n = 3
    elif gtype == "linear":
        extra = set(game) - {"type", "matrix", "ne"}
        if extra:
            raise err(f"unknown game key(s): {', '.join(sorted(extra))}", sorted(extra)[0])
        if "matrix" not in game:
            raise err("linear game needs a 'matrix'", "game")
        n = _matrix(game["matrix"], "matrix", err).shape[0]
        for z in game.get("ne", []) or []:
            if len(z) != n:
                raise err("each 'ne' point must have one entry per strategy", "ne")
    else:
        raise err(f"unknown game type {gtype!r}", "type")

    xs = None
    if "x0" in data:
        x0 = data["x0"]
        if not isinstance(x0, list) or len(x0) != n:
            raise err(f"'x0' must be a list of {n} numbers", "x0")
        xs = [_num(v, "x0", err, nonneg=True) for v in x0]
        if abs(sum(xs) - 1.0) > 1e-9:
            raise err(f"'x0' must sum to 1, got {sum(xs)!r}", "x0")

    delays = data.get("delays", "abs-diff")
    if isinstance(delays, str):
        if delays != "abs-diff":
            raise err(f"unknown delay generator {delays!r}", "delays")
    else:
        d = _matrix(delays, "delays", err, n)
        if np.any(d < 0) or np.any(np.diag(d) != 0):
            raise err("'delays' must be non-negative with a zero diagonal", "delays")

    rho = data.get("rho", "auto")
    if rho != "auto":
        _num(rho, "rho", err, positive=True)

    cfg = ExperimentConfig(
        game=dict(game),
        x0=xs,
        T=_num(data["T"], "T", err, nonneg=True) if "T" in data else None,
        delays=delays,
        rho=rho if rho == "auto" else float(rho),
        lambda0=_num(data.get("lambda0", 1.0), "lambda0", err, positive=True),
        delta=_num(data.get("delta", 0.25), "delta", err),
        tuner=data.get("tuner", False),
        h=None if data.get("h") is None else _num(data["h"], "h", err, positive=True),
        stride=None if data.get("stride") is None else _num(data["stride"], "stride", err, positive=True, integer=True),
        scheme=data.get("scheme", "euler"),
        out=data.get("out", "out"),
        label=data.get("label", ""),
        tail_fraction=_num(data.get("tail_fraction", 0.5), "tail_fraction", err, positive=True),
        thresholds=data.get("thresholds", {"ne_dist": 1e-2, "transit": 1e-2}),
    )
    if not isinstance(cfg.tuner, bool):
        raise err("'tuner' must be true or false", "tuner")
    if not 0.0 < cfg.delta < 0.5:
        raise err(f"'delta' must lie strictly between 0 and 0.5, got {cfg.delta!r}", "delta")
    if cfg.scheme not in SCHEMES:
        raise err(f"'scheme' must be one of {sorted(SCHEMES)}", "scheme")
    if cfg.tail_fraction > 1.0:
        raise err("'tail_fraction' must be at most 1", "tail_fraction")
    if not isinstance(cfg.out, str) or not isinstance(cfg.label, str):
        raise err("'out' and 'label' must be strings", "out")
    th = cfg.thresholds
    if not isinstance(th, dict) or set(th) - {"ne_dist", "transit"}:
        raise err("'thresholds' accepts only 'ne_dist' and 'transit'", "thresholds")
    cfg.thresholds = {"ne_dist": _num(th.get("ne_dist", 1e-2), "ne_dist", err, nonneg=True),
                      "transit": _num(th.get("transit", 1e-2), "transit", err, nonneg=True)}
    return cfg


def load_config(path: str | Path, require_run: bool = True) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", source=str(path)) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg} (column {e.colno})", e.lineno, str(path)) from None
    cfg = parse_config(data, text, str(path), require_run)
    if not cfg.label:
        cfg.label = path.stem
    return cfg


@dataclass
class Experiment:
    """A config with every derived quantity materialised."""

    config: ExperimentConfig
    game: Game
    params: ProtocolParams
    delays: DelayMatrix
    tuner: TunerConfig
    h: float
    stride: int


def build_game(spec: dict) -> Game:
    if spec["type"] == "rps":
        return rps(float(spec.get("a", 1.0)), float(spec.get("b", 2.0)))
    return linear_game(spec["matrix"], spec.get("ne"))


def resolve(cfg: ExperimentConfig) -> Experiment:
    """Materialise ``cfg``; the returned config has no 'auto' or generator entries left."""
    game = with_ne_set(build_game(cfg.game))
    n = game.n
    if cfg.delays == "abs-diff":
        delays = DelayMatrix.abs_diff(n)
    else:
        delays = DelayMatrix(np.array(cfg.delays, dtype=float))
    if cfg.rho == "auto":
        rho = auto_rho(game)
        if math.isinf(rho):
            rho = DEFAULT_RHO_WHEN_UNCONSTRAINED
    else:
        rho = float(cfg.rho)
    h = delays.default_step() if cfg.h is None else float(cfg.h)
    stride = default_stride(h) if cfg.stride is None else int(cfg.stride)
    game_spec = dict(cfg.game)
    if game_spec["type"] == "linear" and not game_spec.get("ne"):
        game_spec["ne"] = [z.tolist() for z in game.ne_set]
    resolved = replace(cfg, game=game_spec, delays=delays.d.tolist(), rho=rho, h=h, stride=stride)
    return Experiment(
        config=resolved,
        game=game,
        params=ProtocolParams(rho, n),
        delays=delays,
        tuner=TunerConfig(delta=cfg.delta, lambda0=cfg.lambda0, enabled=cfg.tuner),
        h=h,
        stride=stride,
    )
