"""Weighted fair allocation of integer containers with min/max limits.

Water-filling: guaranteed minimums are granted first, then remaining capacity
is split proportionally to share weights among tenants with unmet demand,
capped by demand and max limit, redistributing released quota until no more
containers can be placed.  Integer apportionment uses largest remainders;
ties break on lexicographic tenant id.
"""

from __future__ import annotations

from math import floor
from typing import Mapping

from .rmconfig import RMConfig, validate_config


def water_fill(demands: list[int], weights: list[float], mins: list[int],
               maxs: list[int], capacity: int) -> list[int]:
    """Index-based core; all lists are parallel over tenants in a fixed order."""
    n = len(demands)
    alloc = [0] * n
    remaining = capacity
    for i in range(n):
        g = demands[i] if demands[i] < mins[i] else mins[i]
        if g > 0:
            alloc[i] = g
            remaining -= g
    while remaining > 0:
        active = [i for i in range(n)
                  if alloc[i] < (demands[i] if demands[i] < maxs[i] else maxs[i])]
        if not active:
            break
        total_w = 0.0
        for i in active:
            total_w += weights[i]
        # Apportion the remainder by weight (largest-remainder rounding), then
        # cap by each tenant's room; freed quota goes around again.
        quotas = []
        base_sum = 0
        for i in active:
            q = remaining * weights[i] / total_w
            b = floor(q)
            quotas.append([q - b, i, b])
            base_sum += b
        extras = remaining - base_sum
        if extras:
            quotas.sort(key=lambda rec: (-rec[0], rec[1]))
            for rec in quotas[:extras]:
                rec[2] += 1
        placed = 0
        for _, i, give in quotas:
            cap_i = demands[i] if demands[i] < maxs[i] else maxs[i]
            room = cap_i - alloc[i]
            if give > room:
                give = room
            if give > 0:
                alloc[i] += give
                placed += give
        if placed == 0:
            break
        remaining -= placed
    return alloc


def fair_allocation(demands: Mapping[str, int], cfg: RMConfig) -> dict[str, int]:
    """Entitled container counts per tenant for the given instantaneous demand."""
    validate_config(cfg)
    names = cfg.tenant_ids
    for t, d in demands.items():
        if t not in cfg.tenants:
            raise KeyError(f"demand for unknown tenant {t!r}")
        if d < 0:
            raise ValueError(f"tenant {t}: demand must be >= 0")
    dem = [int(demands.get(t, 0)) for t in names]
    w = [cfg.tenants[t].share_weight for t in names]
    lo = [cfg.tenants[t].min_limit for t in names]
    hi = [cfg.tenants[t].max_limit for t in names]
    alloc = water_fill(dem, w, lo, hi, cfg.capacity)
    return {t: a for t, a in zip(names, alloc)}
