"""Run configuration (JSON) with validation."""
import json
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .phase_space import InitialDatum


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridConfig(_Strict):
    L: Optional[float] = Field(None, gt=0)
    n: int = 64

    @field_validator("n")
    @classmethod
    def _power_of_two(cls, v):
        if v < 16 or v & (v - 1):
            raise ValueError(f"n={v} must be a power of two >= 16")
        return v


class DatumConfig(_Strict):
    amplitude: float = Field(0.01, ge=0)
    spatial_radius: float = Field(1.0, gt=0)
    momentum_radius: Optional[float] = Field(None, gt=0)
    center_x: tuple[float, float, float] = (0.25, 0.0, 0.0)
    center_p: tuple[float, float, float] = (0.0, 0.25, 0.0)
    layout: Literal["mirror", "identical", "single"] = "mirror"

    def build(self):
        return InitialDatum(self.amplitude, self.spatial_radius, self.momentum_radius,
                            tuple(self.center_x), tuple(self.center_p), self.layout)


class PicardConfig(_Strict):
    iterations: int = Field(10, ge=2)
    max_markers: int = Field(4096, ge=1)
    horizon_fraction: float = Field(0.25, gt=0, lt=1)


class RunConfig(_Strict):
    mode: Literal["rvprd", "reduction21", "vlasov_poisson"] = "rvprd"
    epsilon: float = 0.0
    dt: Optional[float] = Field(None, gt=0)
    T: Optional[float] = Field(None, ge=0)
    grid: GridConfig = GridConfig()
    m: int = Field(12, ge=4)
    datum: DatumConfig = DatumConfig()
    cadence: int = Field(1, ge=1)
    output_dir: Optional[str] = None
    override_horizon: bool = False
    snapshots: bool = False
    field_check: bool = True
    particle_budget: int = Field(20_000_000, ge=1)
    picard: PicardConfig = PicardConfig()
    sweep_epsilons: tuple[float, ...] = (0.0, 0.1, 0.5, 1.0)

    @field_validator("epsilon")
    @classmethod
    def _eps_range(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"epsilon={v} is outside the allowed range [0, 1]")
        return v

    @field_validator("sweep_epsilons")
    @classmethod
    def _sweep_range(cls, v):
        for e in v:
            if not 0.0 <= e <= 1.0:
                raise ValueError(f"epsilon={e} is outside the allowed range [0, 1]")
        return v

    def replace(self, **changes):
        data = self.model_dump()
        for key, val in changes.items():
            if isinstance(val, BaseModel):
                val = val.model_dump()
            if isinstance(val, dict) and isinstance(data.get(key), dict):
                data[key] = {**data[key], **val}
            else:
                data[key] = val
        return RunConfig.model_validate(data)

    def to_json(self):
        return self.model_dump_json(indent=2)


def _format_errors(exc):
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        msg = err["msg"].removeprefix("Value error, ")
        parts.append(f"{loc}: {msg}")
    return "; ".join(parts)


def parse_config(text):
    """Parse a JSON object into a validated RunConfig."""
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from exc
