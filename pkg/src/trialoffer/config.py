"""JSON run configurations for the command-line tools.

A config is a JSON object with ``schema_version`` set to 1. Unknown keys
are rejected so that typos fail loudly. Relative paths are resolved against
the directory of the config file.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .market import MarketConfig

SCHEMA_VERSION = 1

MODES = ("equilibrium", "simulate", "verify", "experiment")

MARKET_KEYS = {"weights", "visibility", "quality", "feedback"}

COMMON_KEYS = {"schema_version", "mode", "market", "seeds", "T", "record_every", "tol",
               "output_dir"}
MODE_KEYS = {
    "equilibrium": {"max_iter", "damping"},
    "simulate": {"dynamics", "initial_counts", "log_events", "max_iter", "damping"},
    "verify": {"n_random_markets", "verify_seed"},
    "experiment": {"preferences", "format", "mask", "normalize", "groups", "M",
                   "cluster_seed", "iota", "cutoff", "strategies", "r", "unseen_only",
                   "window"},
}

DEFAULTS = {
    "seeds": [0],
    "T": 1000,
    "record_every": 1,
    "tol": 1e-10,
    "output_dir": "out",
    "max_iter": 100_000,
    "damping": 0.5,
    "dynamics": "stochastic",
    "initial_counts": None,
    "log_events": False,
    "n_random_markets": 20,
    "verify_seed": 0,
    "format": "TripletCsv",
    "mask": None,
    "normalize": False,
    "groups": None,
    "M": None,
    "cluster_seed": 0,
    "iota": None,
    "cutoff": 50,
    "strategies": ["Random", "Popularity", "Quality"],
    "r": None,
    "unseen_only": False,
    "window": 1000,
}

PATH_KEYS = ("preferences", "mask", "groups", "iota", "output_dir")


@dataclass
class RunConfig:
    mode: str
    values: dict
    base_dir: Path
    market: MarketConfig = None
    defaults_applied: list = field(default_factory=list)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def path(self, key):
        val = self.values.get(key)
        if val is None:
            return None
        p = Path(val)
        return p if p.is_absolute() else self.base_dir / p

    def to_dict(self):
        out = dict(self.values)
        if self.market is not None:
            out["market"] = market_to_dict(self.market)
        return out


def market_to_dict(cfg):
    return {"weights": cfg.weights.tolist(), "visibility": cfg.visibility.tolist(),
            "quality": cfg.quality.tolist(), "feedback": cfg.feedback.tolist()}


def parse_market(spec, base_dir=Path(".")):
    """Build a MarketConfig from a dict or a path to a JSON file holding one.

    ``visibility`` and ``quality`` may be vectors (a single user type);
    ``weights`` may then be omitted and ``feedback`` may be a scalar.
    """
    if isinstance(spec, str):
        path = Path(spec)
        path = path if path.is_absolute() else base_dir / path
        try:
            spec = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read market file {path}: {exc}", key="market") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"market file {path} is not valid JSON: {exc}", key="market") from None
    if not isinstance(spec, dict):
        raise ConfigError("market must be an object or a path", key="market")
    unknown = set(spec) - MARKET_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown market key {key!r}", key=key)
    for key in ("visibility", "quality", "feedback"):
        if key not in spec:
            raise ConfigError(f"market is missing required key {key!r}", key=key)
    try:
        v = np.atleast_2d(np.asarray(spec["visibility"], dtype=float))
        q = np.atleast_2d(np.asarray(spec["quality"], dtype=float))
        n_types = v.shape[0]
        r = np.asarray(spec["feedback"], dtype=float)
        r = np.full(n_types, float(r)) if r.ndim == 0 else r
        if "weights" in spec:
            w = np.asarray(spec["weights"], dtype=float)
        elif n_types == 1:
            w = np.ones(1)
        else:
            raise ConfigError("market with several types needs 'weights'", key="weights")
        return MarketConfig(w, v, q, r)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid market: {exc}", key="market") from None


def _check_types(values):
    ints = ("T", "record_every", "max_iter", "n_random_markets", "verify_seed", "M",
            "cluster_seed", "cutoff", "window")
    for key in ints:
        val = values.get(key)
        if val is not None and (isinstance(val, bool) or not isinstance(val, int)):
            raise ConfigError(f"{key!r} must be an integer", key=key)
    seeds = values.get("seeds")
    if seeds is not None:
        if not isinstance(seeds, list) or not seeds or not all(
                isinstance(s, int) and not isinstance(s, bool) for s in seeds):
            raise ConfigError("'seeds' must be a non-empty list of integers", key="seeds")
    for key in ("tol", "damping", "r"):
        val = values.get(key)
        if val is not None and (isinstance(val, bool) or not isinstance(val, (int, float))):
            raise ConfigError(f"{key!r} must be a number", key=key)
    if values.get("T") is not None and values["T"] < 1:
        raise ConfigError("'T' must be >= 1", key="T")
    if values.get("record_every") is not None and values["record_every"] < 1:
        raise ConfigError("'record_every' must be >= 1", key="record_every")
    if values.get("tol") is not None and values["tol"] <= 0:
        raise ConfigError("'tol' must be positive", key="tol")


def build_config(raw, mode, base_dir=Path(".")):
    """Validate a parsed config object for ``mode`` and fill defaults."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}", key="mode")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if "schema_version" not in raw:
        raise ConfigError("config is missing 'schema_version'", key="schema_version")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {raw['schema_version']!r} "
                          f"(expected {SCHEMA_VERSION})", key="schema_version")
    if raw.get("mode", mode) != mode:
        raise ConfigError(f"config is for mode {raw['mode']!r}, not {mode!r}", key="mode")
    allowed = COMMON_KEYS | MODE_KEYS[mode]
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} for mode {mode!r}", key=unknown[0])
    values = {}
    applied = []
    for key in sorted(allowed - {"schema_version", "mode", "market"}):
        if key in raw:
            values[key] = raw[key]
        elif key in DEFAULTS:
            values[key] = DEFAULTS[key]
            applied.append(key)
    _check_types(values)
    market = None
    if mode == "experiment":
        if "preferences" not in raw:
            raise ConfigError("experiment config needs 'preferences'", key="preferences")
        if raw.get("r") is None:
            raise ConfigError("experiment config needs the feedback exponent 'r'", key="r")
        if "market" in raw:
            raise ConfigError("experiment builds its market from 'preferences'", key="market")
    else:
        if "market" not in raw:
            raise ConfigError("config is missing 'market'", key="market")
        market = parse_market(raw["market"], base_dir)
    return RunConfig(mode, values, Path(base_dir), market, applied)


def load_config(path, mode):
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return build_config(raw, mode, path.parent)
