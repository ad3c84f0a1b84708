"""Declarative SLOs and their quality-score (QS) metrics.

Every metric is oriented so that smaller is better, which lets the optimizer
treat the whole QS vector uniformly:

  * AJR: mean job response time (finish minus submit) over jobs submitted
    and completed inside the window;
  * DL: fraction of those jobs finishing later than allowed by their deadline
    plus a gamma fraction of their own runtime as slack;
  * UTIL: negated cluster utilization from useful (non-preempted) work;
  * THR: negated completed-job count;
  * FAIR: absolute deviation of the tenant's utilization from a desired
    share of the cluster.

Jobs spanning the window boundary are excluded from the job sets, but their
tasks' resource area still counts toward utilization.  A window with no
completed jobs yields None for the job-based metrics so the caller can tell
"no data" from a genuine zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt
from typing import Mapping, Sequence

import numpy as np

from .formats import FormatError, format_number, read_blocks, write_blocks
from .simulator import TaskSchedule, _area
from .workload import _open_write

METRICS = ("AJR", "DL", "UTIL", "THR", "FAIR")


class SLOError(ValueError):
    """An SLO is malformed or incompatible with the schedule it is applied to."""


@dataclass(frozen=True)
class SLOSpec:
    """One service-level objective on one tenant's QS metric."""

    tenant: str
    metric: str
    gamma: float | None = None        # DL: allowed slack fraction of runtime
    desired_share: float | None = None  # FAIR: target fraction of capacity
    priority: float = 1.0
    threshold: float | None = None    # hard QS bound; None means best effort

    def __post_init__(self):
        if self.metric not in METRICS:
            raise SLOError(f"unknown metric {self.metric!r}, expected one of {METRICS}")
        if self.priority < 1:
            raise SLOError("priority must be >= 1")
        if self.metric == "DL":
            if self.gamma is None or self.gamma < 0:
                raise SLOError("DL needs gamma >= 0")
        elif self.gamma is not None:
            raise SLOError(f"{self.metric} does not take gamma")
        if self.metric == "FAIR":
            if self.desired_share is None or not (0 <= self.desired_share <= 1):
                raise SLOError("FAIR needs desired_share in [0, 1]")
        elif self.desired_share is not None:
            raise SLOError(f"{self.metric} does not take desired_share")


@dataclass(frozen=True)
class QSVector:
    """QS values in SLO registration order; None marks a no-data window."""

    values: tuple[float | None, ...]
    window: tuple[float, float]

    def finite(self) -> np.ndarray:
        if any(v is None for v in self.values):
            raise ValueError("QS vector has no-data entries")
        return np.asarray(self.values, dtype=float)


def _window_jobs(s: TaskSchedule, tenant: str, window: tuple[float, float]) -> list[str]:
    t0, t1 = window
    return [j for j, fin in s.job_finish.items()
            if s.job_tenant[j] == tenant and t0 <= s.job_submit[j] <= t1 and fin <= t1]


def _check_window(window: tuple[float, float]) -> None:
    t0, t1 = window
    if not (t1 > t0):
        raise ValueError(f"window must have positive length, got {window}")


def qs_ajr(s: TaskSchedule, tenant: str, window: tuple[float, float]) -> float | None:
    """Mean response time of jobs submitted and completed inside the window."""
    _check_window(window)
    jobs = _window_jobs(s, tenant, window)
    if not jobs:
        return None
    return sum(s.job_finish[j] - s.job_submit[j] for j in jobs) / len(jobs)


def qs_dl(s: TaskSchedule, tenant: str, gamma: float, window: tuple[float, float]) -> float | None:
    """Fraction of jobs missing deadline + gamma * runtime slack."""
    _check_window(window)
    jobs = _window_jobs(s, tenant, window)
    if not jobs:
        return None
    missed = 0
    for j in jobs:
        if s.job_deadline[j] is None:
            raise SLOError(f"job {j} has no deadline but tenant {tenant} carries a DL objective")
        fin = s.job_finish[j]
        runtime = fin - s.job_launch[j]
        if fin > gamma * runtime + s.job_deadline[j]:
            missed += 1
    return missed / len(jobs)


def qs_util(s: TaskSchedule, tenant: str, window: tuple[float, float],
            capacity: int, include_preempted: bool = False) -> float:
    """Negated share of cluster capacity-time used by the tenant's work."""
    _check_window(window)
    t0, t1 = window
    area = _area(s, window, include_preempted=include_preempted, tenant=tenant)
    return -area / (capacity * (t1 - t0))


def qs_thr(s: TaskSchedule, tenant: str, window: tuple[float, float]) -> float:
    """Negated number of jobs submitted and completed inside the window."""
    _check_window(window)
    return -float(len(_window_jobs(s, tenant, window)))


def qs_fair(s: TaskSchedule, tenant: str, desired_share: float,
            window: tuple[float, float], capacity: int) -> float:
    """Absolute gap between attained utilization and the desired share."""
    return abs(desired_share + qs_util(s, tenant, window, capacity))


def evaluate(slos: Sequence[SLOSpec], s: TaskSchedule,
             window: tuple[float, float]) -> QSVector:
    """QS vector over the SLO list, each scaled by its priority."""
    _check_window(window)
    values: list[float | None] = []
    for slo in slos:
        if slo.metric == "AJR":
            v = qs_ajr(s, slo.tenant, window)
        elif slo.metric == "DL":
            v = qs_dl(s, slo.tenant, slo.gamma, window)
        elif slo.metric == "UTIL":
            v = qs_util(s, slo.tenant, window, s.capacity)
        elif slo.metric == "THR":
            v = qs_thr(s, slo.tenant, window)
        else:
            v = qs_fair(s, slo.tenant, slo.desired_share, window, s.capacity)
        values.append(None if v is None else slo.priority * v)
    return QSVector(tuple(values), window)


def prediction_error(predicted: Mapping[str, float], observed: Mapping[str, float],
                     job_tenant: Mapping[str, str]) -> dict[str, tuple[float | None, float | None]]:
    """Per-tenant (relative absolute error, relative squared error) of finish times.

    Errors are normalized by the spread of the observed values around their
    per-tenant mean; a tenant whose observed values are all identical has no
    spread, so its errors are undefined (None).
    """
    if set(predicted) != set(observed):
        missing = set(predicted) ^ set(observed)
        raise ValueError(f"predicted and observed job sets differ, for example {sorted(missing)[:4]}")
    by_tenant: dict[str, list[str]] = {}
    for job in observed:
        by_tenant.setdefault(job_tenant[job], []).append(job)
    out: dict[str, tuple[float | None, float | None]] = {}
    for tenant in sorted(by_tenant):
        jobs = by_tenant[tenant]
        obs = np.array([observed[j] for j in jobs])
        pred = np.array([predicted[j] for j in jobs])
        centre = obs.mean()
        abs_spread = np.abs(obs - centre).sum()
        sq_spread = ((obs - centre) ** 2).sum()
        rae = float(np.abs(pred - obs).sum() / abs_spread) if abs_spread > 0 else None
        rse = sqrt(float(((pred - obs) ** 2).sum() / sq_spread)) if sq_spread > 0 else None
        out[tenant] = (rae, rse)
    return out


def read_slos(source) -> list[SLOSpec]:
    _, blocks = read_blocks(source, "slos")
    slos = []
    for section, fields, line_no in blocks:
        if section != "slo":
            raise FormatError(f"unexpected section [{section}] in SLO file", line_no=line_no)
        try:
            slos.append(SLOSpec(
                tenant=fields["tenant"],
                metric=fields["metric"],
                gamma=float(fields["gamma"]) if "gamma" in fields else None,
                desired_share=float(fields["desired_share"]) if "desired_share" in fields else None,
                priority=float(fields.get("priority", 1.0)),
                threshold=float(fields["threshold"]) if "threshold" in fields else None,
            ))
        except KeyError as exc:
            raise FormatError(f"SLO block missing field {exc}", line_no=line_no) from None
        except (ValueError, SLOError) as exc:
            raise FormatError(str(exc), line_no=line_no) from None
    if not slos:
        raise FormatError("SLO file declares no objectives")
    return slos


def write_slos(slos: Sequence[SLOSpec], dest) -> None:
    stream, _, owned = _open_write(dest)
    try:
        blocks = []
        for slo in slos:
            fields: dict = {"tenant": slo.tenant, "metric": slo.metric}
            if slo.gamma is not None:
                fields["gamma"] = slo.gamma
            if slo.desired_share is not None:
                fields["desired_share"] = slo.desired_share
            if slo.priority != 1.0:
                fields["priority"] = slo.priority
            if slo.threshold is not None:
                fields["threshold"] = slo.threshold
            blocks.append(("slo", fields))
        write_blocks(stream, "slos", blocks)
    finally:
        if owned:
            stream.close()
