"""Resource-manager configurations and their unit-box vector encoding.

Each tenant carries five tunable parameters; a configuration maps affinely
into [0, 1]^m (m = 5 x tenants) so the optimizer can treat it as a point.
Decoding rounds the container limits back to integers, so
decode(encode(cfg)) == cfg whenever the limits are integral.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .formats import FormatError, format_number, read_blocks, write_blocks

PARAM_ORDER = ("share_weight", "min_limit", "max_limit",
               "preempt_timeout_share", "preempt_timeout_min")
INT_PARAMS = frozenset({"min_limit", "max_limit"})


class RmSimError(Exception):
    """Base for simulator-side failures."""


class ConfigError(RmSimError):
    """A configuration violates its own invariants or the workload's needs."""


@dataclass(frozen=True)
class TenantConfig:
    """Per-tenant scheduling knobs.

    share_weight drives proportional allocation; min_limit containers are
    guaranteed (via preemption after preempt_timeout_min seconds of
    starvation); max_limit caps the tenant; preempt_timeout_share triggers
    preemption after that long below the tenant's entitled share.
    """

    share_weight: float
    min_limit: int
    max_limit: int
    preempt_timeout_share: float
    preempt_timeout_min: float

    def __post_init__(self):
        if not (self.share_weight > 0):
            raise ConfigError(f"share_weight must be positive, got {self.share_weight}")
        if self.min_limit < 0:
            raise ConfigError(f"min_limit must be >= 0, got {self.min_limit}")
        if self.max_limit < self.min_limit:
            raise ConfigError(f"max_limit {self.max_limit} below min_limit {self.min_limit}")
        if not (self.preempt_timeout_share > 0):
            raise ConfigError("preempt_timeout_share must be positive")
        if not (self.preempt_timeout_min > 0):
            raise ConfigError("preempt_timeout_min must be positive")

    def param(self, name: str) -> float:
        return getattr(self, name)


def default_bounds(capacity: int) -> dict[str, tuple[float, float]]:
    return {
        "share_weight": (0.05, 20.0),
        "min_limit": (0, capacity),
        "max_limit": (1, capacity),
        "preempt_timeout_share": (1.0, 3600.0),
        "preempt_timeout_min": (1.0, 3600.0),
    }


@dataclass(frozen=True)
class RMConfig:
    """Cluster capacity plus per-tenant knobs and their tuning bounds."""

    tenants: Mapping[str, TenantConfig]
    capacity: int
    bounds: Mapping[str, Mapping[str, tuple[float, float]]] = field(default_factory=dict)

    def __post_init__(self):
        if not (isinstance(self.capacity, int) and self.capacity > 0):
            raise ConfigError(f"capacity must be a positive integer, got {self.capacity}")
        if not self.tenants:
            raise ConfigError("config needs at least one tenant")
        filled = {}
        for name in self.tenants:
            per = dict(default_bounds(self.capacity))
            per.update(self.bounds.get(name, {}))
            for key, (lo, hi) in per.items():
                if key not in PARAM_ORDER:
                    raise ConfigError(f"tenant {name}: unknown bounded parameter {key!r}")
                if lo > hi:
                    raise ConfigError(f"tenant {name}: bound for {key} has lo > hi")
            filled[name] = per
        object.__setattr__(self, "bounds", filled)

    @property
    def tenant_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.tenants))

    def space(self) -> "ConfigSpace":
        return ConfigSpace(self)


def validate_config(cfg: RMConfig) -> None:
    """Raise ConfigError unless the config is internally consistent."""
    total_min = sum(tc.min_limit for tc in cfg.tenants.values())
    if total_min > cfg.capacity:
        raise ConfigError(f"guaranteed minimums total {total_min}, exceeding capacity {cfg.capacity}")
    for name in cfg.tenant_ids:
        tc = cfg.tenants[name]
        for key in PARAM_ORDER:
            lo, hi = cfg.bounds[name][key]
            v = tc.param(key)
            if not (lo <= v <= hi):
                raise ConfigError(f"tenant {name}: {key}={v} outside bounds [{lo}, {hi}]")


class ConfigSpace:
    """The affine map between RMConfigs and points of the unit box."""

    def __init__(self, template: RMConfig):
        self.capacity = template.capacity
        self.tenant_ids = template.tenant_ids
        self.bounds = template.bounds
        self.dim = len(self.tenant_ids) * len(PARAM_ORDER)
        self._lo = np.empty(self.dim)
        self._hi = np.empty(self.dim)
        i = 0
        for name in self.tenant_ids:
            for key in PARAM_ORDER:
                self._lo[i], self._hi[i] = self.bounds[name][key]
                i += 1

    def encode(self, cfg: RMConfig) -> np.ndarray:
        if tuple(sorted(cfg.tenants)) != self.tenant_ids:
            raise ConfigError("config tenants differ from the space's tenants")
        x = np.empty(self.dim)
        i = 0
        for name in self.tenant_ids:
            tc = cfg.tenants[name]
            for key in PARAM_ORDER:
                lo, hi = self._lo[i], self._hi[i]
                v = tc.param(key)
                if not (lo <= v <= hi):
                    raise ConfigError(f"tenant {name}: {key}={v} outside bounds [{lo}, {hi}]")
                x[i] = 0.0 if hi == lo else (v - lo) / (hi - lo)
                i += 1
        return x

    def decode(self, x: np.ndarray) -> RMConfig:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ConfigError(f"expected a vector of length {self.dim}, got shape {x.shape}")
        x = np.clip(x, 0.0, 1.0)
        values = self._lo + x * (self._hi - self._lo)
        tenants = {}
        i = 0
        for name in self.tenant_ids:
            kwargs = {}
            for key in PARAM_ORDER:
                v = values[i]
                if key in INT_PARAMS:
                    v = int(np.floor(v + 0.5))
                    lo, hi = self._lo[i], self._hi[i]
                    v = int(min(max(v, int(np.ceil(lo))), int(np.floor(hi))))
                kwargs[key] = v
                i += 1
            tenants[name] = TenantConfig(**kwargs)
        return RMConfig(tenants, self.capacity, self.bounds)

    def with_capacity(self, capacity: int) -> "ConfigSpace":
        clone = ConfigSpace.__new__(ConfigSpace)
        clone.capacity = capacity
        clone.tenant_ids = self.tenant_ids
        clone.bounds = self.bounds
        clone.dim = self.dim
        clone._lo = self._lo
        clone._hi = self._hi
        return clone


def encode(cfg: RMConfig) -> np.ndarray:
    return cfg.space().encode(cfg)


def decode(vector: np.ndarray, space: ConfigSpace) -> RMConfig:
    return space.decode(vector)


def read_config(source) -> RMConfig:
    _, blocks = read_blocks(source, "rmconfig")
    capacity = None
    tenants: dict[str, TenantConfig] = {}
    bounds: dict[str, dict[str, tuple[float, float]]] = {}
    for section, fields, line_no in blocks:
        if section == "global":
            try:
                capacity = int(fields["capacity"])
            except (KeyError, ValueError):
                raise FormatError("global section needs an integer capacity", line_no=line_no) from None
            continue
        if not section.startswith("tenant "):
            raise FormatError(f"unexpected section [{section}] in config file", line_no=line_no)
        name = section[len("tenant "):].strip()
        try:
            kwargs = {}
            per_bounds = {}
            for key in PARAM_ORDER:
                raw = fields[key]
                kwargs[key] = int(raw) if key in INT_PARAMS else float(raw)
                if f"{key}_bounds" in fields:
                    lo_s, hi_s = fields[f"{key}_bounds"].split()
                    per_bounds[key] = (float(lo_s), float(hi_s))
            tenants[name] = TenantConfig(**kwargs)
            if per_bounds:
                bounds[name] = per_bounds
        except KeyError as exc:
            raise FormatError(f"tenant {name}: missing field {exc}", line_no=line_no) from None
        except (ValueError, ConfigError) as exc:
            raise FormatError(f"tenant {name}: {exc}", line_no=line_no) from None
    if capacity is None:
        raise FormatError("config file lacks a [global] capacity")
    cfg = RMConfig(tenants, capacity, bounds)
    validate_config(cfg)
    return cfg


def write_config(cfg: RMConfig, dest) -> None:
    from .workload import _open_write
    stream, _, owned = _open_write(dest)
    try:
        blocks: list[tuple[str, dict]] = [("global", {"capacity": cfg.capacity})]
        for name in cfg.tenant_ids:
            tc = cfg.tenants[name]
            fields: dict = {key: tc.param(key) for key in PARAM_ORDER}
            for key in PARAM_ORDER:
                lo, hi = cfg.bounds[name][key]
                fields[f"{key}_bounds"] = f"{format_number(lo)} {format_number(hi)}"
            blocks.append((f"tenant {name}", fields))
        write_blocks(stream, "rmconfig", blocks)
    finally:
        if owned:
            stream.close()
