# fofiv/config.py
"""
Frozen pydantic models for every configurable object of the laboratory.

The CLI builds these from flags and flat JSON files; the library only ever
sees validated instances.
"""
import hashlib
import json
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from fofiv.errors import ConfigError

DEFAULT_ZERO_MASS = 1.0 - 0.9458333
DEFAULT_SEED = 20240101
DENSE_CAP = 4096


class Scaling(str, Enum):
    UNSCALED = "unscaled"
    SCALED = "scaled"


class Kernel(str, Enum):
    RECTANGULAR = "rectangular"
    BARTLETT = "bartlett"


class StabilityFlag(str, Enum):
    STABLE = "stable"
    NEAR_BOUNDARY = "near_boundary"
    UNSTABLE = "unstable"


class ModelParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = 0.7683
    beta: float = 0.4666
    gamma: float = 0.0834
    delta: float = 0.1507
    sigma_eps: float = Field(default=1.0, ge=0.0)


class CovariateSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    zero_mass: float = Field(default=DEFAULT_ZERO_MASS, ge=0.0, le=1.0)
    lognormal_mu: float = 1.0
    # sigma = 0 is accepted as the degenerate constant-covariate case
    lognormal_sigma: float = Field(default=3.0, ge=0.0)
    demean: bool = False


class HacConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kernel: Kernel = Kernel.BARTLETT
    bandwidth: int = Field(default=2, ge=0)


# name -> (required params, defaults for the optional trailing params)
_REGIME_ARITY: Dict[str, Tuple[int, Tuple[float, ...]]] = {
    "constant": (1, ()),
    "loglog": (1, ()),
    "vanishing": (1, (0.5,)),
    "dense": (1, (0.5,)),
}


class Regime(BaseModel):
    """Named average-degree schedule d_n(n)."""

    model_config = ConfigDict(frozen=True)

    name: str
    params: Tuple[float, ...]

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        name = data.get("name")
        params = tuple(data.get("params", ()))
        if name not in _REGIME_ARITY:
            raise ValueError(f"unknown regime '{name}' (expected one of {sorted(_REGIME_ARITY)})")
        required, optional = _REGIME_ARITY[name]
        if not required <= len(params) <= required + len(optional):
            raise ValueError(
                f"regime '{name}' takes {required} to {required + len(optional)} parameters, got {len(params)}"
            )
        return {**data, "params": params + optional[len(params) - required:]}

    @classmethod
    def parse(cls, text: str) -> "Regime":
        name, sep, rest = text.partition(":")
        if not sep or not rest.strip():
            raise ConfigError("regime", f"'{text}' is missing its parameters (e.g. constant:1)")
        try:
            params = tuple(float(p) for p in rest.split(","))
            return cls(name=name.strip(), params=params)
        except ValueError as e:
            raise ConfigError("regime", str(e)) from e

    def degree(self, n: int) -> float:
        c = self.params[0]
        if self.name == "constant":
            return c
        if self.name == "loglog":
            return c * math.log(math.log(n)) if n > math.e else 0.0
        if self.name == "vanishing":
            return c * n ** (-self.params[1])
        return c * n ** self.params[1]

    def link_probability(self, n: int) -> float:
        return self.degree(n) / n if n > 0 else 0.0

    @property
    def label(self) -> str:
        return f"{self.name}:" + ",".join(f"{p:g}" for p in self.params)


class CellConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=1)
    regime: Regime
    beta_true: float
    scaling: Scaling = Scaling.SCALED
    reps: int = Field(default=1000, ge=1)
    master_seed: int = DEFAULT_SEED
    params: ModelParams = ModelParams()
    covariates: CovariateSpec = CovariateSpec()
    hac: HacConfig = HacConfig()
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    dense_cap: int = Field(default=DENSE_CAP, ge=1)

    @model_validator(mode="after")
    def _check_probability(self) -> "CellConfig":
        p = self.regime.link_probability(self.n)
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"derived link probability {p:.6g} is outside [0, 1]")
        return self

    @property
    def model_params(self) -> ModelParams:
        return self.params.model_copy(update={"beta": self.beta_true})

    @property
    def cell_id(self) -> str:
        return f"n={self.n}|{self.regime.label}|beta={self.beta_true:g}|{self.scaling.value}"

    def id_columns(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "regime": self.regime.label,
            "d_n": self.regime.degree(self.n),
            "beta": self.beta_true,
            "scaling": self.scaling.value,
        }


# --------------------------------------------------------------------------
# Flat key-value run options (CLI flags and JSON config files)
# --------------------------------------------------------------------------

class RunOptions(BaseModel):
    """Flat mirror of the simulate flags; JSON config files use the same keys."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    reproduce: Optional[str] = None
    n: Optional[List[int]] = None
    regime: Optional[List[str]] = None
    beta: Optional[List[float]] = None
    scaled: Optional[bool] = None
    reps: int = Field(default=1000, ge=1)
    seed: int = DEFAULT_SEED
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    hac_kernel: Kernel = Kernel.BARTLETT
    hac_bandwidth: int = Field(default=2, ge=0)
    out_dir: str = "results"
    threads: int = Field(default=1, ge=1)
    draws: bool = False

    @field_validator("reproduce")
    @classmethod
    def _known_preset(cls, v: Optional[str]) -> Optional[str]:
        if v is not None and v not in {"paper-grid", "table2", "table3", "bounds"}:
            raise ValueError(f"unknown preset '{v}'")
        return v


def load_run_options(path: Optional[str], overrides: Dict[str, Any]) -> RunOptions:
    """Merge a flat JSON config file with CLI overrides (overrides win)."""
    merged: Dict[str, Any] = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError("config", f"cannot read {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be a JSON object")
        for key, value in raw.items():
            key = key.replace("-", "_")
            if key not in RunOptions.model_fields:
                raise ConfigError(key, "unknown configuration key")
            if key in {"n", "regime", "beta"} and not isinstance(value, list):
                value = [value]
            merged[key] = value
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunOptions(**merged)
    except ValueError as e:
        errors = getattr(e, "errors", None)
        key = str(errors()[0]["loc"][0]) if callable(errors) and errors() else "config"
        raise ConfigError(key, str(e)) from e


# --------------------------------------------------------------------------
# Seed derivation
# --------------------------------------------------------------------------

def derive_seed(master: int, *tags: Any) -> int:
    """64-bit seed from sha256 over the master seed and the ordered tags."""
    h = hashlib.sha256(str(int(master)).encode())
    for tag in tags:
        h.update(b"\x1f")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(master: int, *tags: Any) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *tags))
