"""Method registry: names, parameter schemas, grids, and CLI param parsing.

A MethodSpec is the serializable description of one decoder cell (method
name plus concrete parameter values). Grid files hold the same shape with
list-valued parameters; expansion takes the cartesian product per method
entry. Everything downstream (harness dispatch, sweep checkpoints, CLI)
speaks MethodSpec.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .lm import ConfigError, fixture_path


def _as_int(v: Any) -> int:
    if isinstance(v, bool):
        raise ConfigError(f"expected integer, got {v!r}")
    if isinstance(v, int):
        return v
    if isinstance(v, float) and v.is_integer():
        return int(v)
    if isinstance(v, str):
        try:
            return int(v)
        except ValueError as exc:
            raise ConfigError(f"expected integer, got {v!r}") from exc
    raise ConfigError(f"expected integer, got {v!r}")


def _as_float(v: Any) -> float:
    if isinstance(v, bool):
        raise ConfigError(f"expected number, got {v!r}")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError as exc:
            raise ConfigError(f"expected number, got {v!r}") from exc
    raise ConfigError(f"expected number, got {v!r}")


def _as_bool(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("true", "false"):
        return v.lower() == "true"
    raise ConfigError(f"expected boolean, got {v!r}")


def _as_layers(v: Any) -> Any:
    """Layer candidates: a bucket name ('lo'/'hi') or explicit layer ids."""
    if isinstance(v, str):
        if v in ("lo", "hi"):
            return v
        raise ConfigError(f"unknown layer bucket: {v!r}")
    if isinstance(v, int):
        return (v,)
    if isinstance(v, (list, tuple)) and v and all(isinstance(x, int) for x in v):
        return tuple(v)
    raise ConfigError(f"expected 'lo', 'hi', or layer ids, got {v!r}")


PARAM_SCHEMAS: dict[str, dict[str, Any]] = {
    "greedy": {},
    "beam": {"k": _as_int},
    "dbs": {"k": _as_int, "groups": _as_int, "lam": _as_float},
    "cs": {"k": _as_int, "alpha": _as_float},
    "cd": {"alpha": _as_float, "beta": _as_float},
    "fsd": {"alpha": _as_float, "k": _as_int, "n": _as_int},
    "fsd_d": {"alpha": _as_float, "k": _as_int, "n": _as_int},
    "dola": {"layers": _as_layers, "alpha_apc": _as_float},
    "temp": {"tau": _as_float},
    "top_k": {"k": _as_int, "temperature": _as_float},
    "top_p": {"p": _as_float, "temperature": _as_float},
    "eta": {"eta": _as_float, "strict_paper_formula": _as_bool, "temperature": _as_float},
    "typical": {"p": _as_float, "temperature": _as_float},
    "mirostat": {"tau": _as_float, "lr": _as_float, "temperature": _as_float},
}

METHOD_NAMES: tuple[str, ...] = tuple(PARAM_SCHEMAS)

STOCHASTIC_METHODS = frozenset(
    {"temp", "top_k", "top_p", "eta", "typical", "mirostat"}
)


@dataclass(frozen=True)
class MethodSpec:
    """One concrete decoder configuration, serializable and hashable."""

    method: str
    params: tuple[tuple[str, Any], ...] = field(default=())

    def __post_init__(self) -> None:
        if self.method not in PARAM_SCHEMAS:
            raise ConfigError(f"unknown method: {self.method!r}")
        schema = PARAM_SCHEMAS[self.method]
        for key, _ in self.params:
            if key not in schema:
                raise ConfigError(f"{self.method} has no parameter {key!r}")

    @property
    def param_dict(self) -> dict[str, Any]:
        return dict(self.params)

    @property
    def stochastic(self) -> bool:
        return self.method in STOCHASTIC_METHODS

    def key(self) -> str:
        """Stable cell identifier used by checkpoints and reports."""
        return json.dumps(
            {"method": self.method, "params": self.param_dict},
            sort_keys=True,
            separators=(",", ":"),
        )

    def param_label(self) -> str:
        if not self.params:
            return "-"
        return ",".join(f"{k}={v}" for k, v in self.params)


def make_spec(method: str, params: Mapping[str, Any] | None = None) -> MethodSpec:
    """Validate and coerce raw parameter values against the method schema."""
    if method not in PARAM_SCHEMAS:
        raise ConfigError(f"unknown method: {method!r}")
    schema = PARAM_SCHEMAS[method]
    coerced: list[tuple[str, Any]] = []
    for key, value in (params or {}).items():
        if key not in schema:
            raise ConfigError(f"{method} has no parameter {key!r}")
        coerced.append((key, schema[key](value)))
    coerced.sort()
    return MethodSpec(method=method, params=tuple(coerced))


def parse_params(text: str) -> dict[str, Any]:
    """Parse a CLI `--param k=v,...` string; values stay raw for coercion."""
    out: dict[str, Any] = {}
    if not text:
        return out
    for item in text.split(","):
        if "=" not in item:
            raise ConfigError(f"parameter {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def expand_grid(doc: Mapping[str, Any]) -> list[MethodSpec]:
    """Expand a grid document into concrete specs.

    The document holds {"methods": [{"method": name, param: value-or-list,
    ...}, ...]}; list-valued parameters expand as a cartesian product within
    their entry. Order is preserved: methods in file order, value
    combinations in list order.
    """
    entries = doc.get("methods")
    if not isinstance(entries, list) or not entries:
        raise ConfigError("grid document needs a non-empty 'methods' list")
    specs: list[MethodSpec] = []
    for entry in entries:
        if not isinstance(entry, Mapping) or "method" not in entry:
            raise ConfigError(f"grid entry missing 'method': {entry!r}")
        method = entry["method"]
        fixed: list[tuple[str, Any]] = []
        swept: list[tuple[str, list[Any]]] = []
        for key, value in entry.items():
            if key == "method":
                continue
            # A list value is a sweep axis except for dola's explicit
            # layer-id lists, which are a single value.
            if isinstance(value, list) and not (
                method == "dola"
                and key == "layers"
                and all(isinstance(x, int) for x in value)
            ):
                if not value:
                    raise ConfigError(f"{method}.{key} sweep list is empty")
                swept.append((key, value))
            else:
                fixed.append((key, value))
        if not swept:
            specs.append(make_spec(method, dict(fixed)))
            continue
        keys = [k for k, _ in swept]
        for combo in itertools.product(*(v for _, v in swept)):
            params = dict(fixed)
            params.update(zip(keys, combo))
            specs.append(make_spec(method, params))
    return specs


def load_grid_file(path: str) -> list[MethodSpec]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read grid file {path}: {exc}") from exc
    return expand_grid(doc)


def default_grid_path() -> Path:
    return fixture_path("grids/paper.json")
