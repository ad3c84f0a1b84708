"""Workload traces and statistical workload models.

A trace is a set of jobs, each a bag of independent fixed-size tasks arriving
at a submit time, optionally carrying a completion deadline.  A fitted model
captures, per tenant, a Poisson arrival process, a lognormal task duration
distribution, a task-count histogram, and an empirical deadline-offset
distribution, which is enough to synthesize statistically similar traces at
arbitrary horizons and scales.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Mapping

import numpy as np

from .formats import (FormatError, format_number, iter_records, open_text,
                      parse_header, read_blocks, write_blocks, write_header)

log = logging.getLogger(__name__)

TRACE_FORMAT = "trace-v1"


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    duration: float
    demand: int = 1

    def __post_init__(self):
        if not self.task_id:
            raise ValueError("task_id must be non-empty")
        if not (self.duration > 0):
            raise ValueError(f"task {self.task_id}: duration must be positive, got {self.duration}")
        if not (isinstance(self.demand, int) and self.demand >= 1):
            raise ValueError(f"task {self.task_id}: demand must be an integer >= 1, got {self.demand}")


@dataclass(frozen=True)
class JobSpec:
    job_id: str
    tenant: str
    submit_time: float
    deadline: float | None
    tasks: tuple[TaskSpec, ...]

    def __post_init__(self):
        if not self.job_id:
            raise ValueError("job_id must be non-empty")
        if not self.tenant:
            raise ValueError(f"job {self.job_id}: tenant must be non-empty")
        if self.submit_time < 0:
            raise ValueError(f"job {self.job_id}: submit_time must be >= 0")
        if self.deadline is not None and self.deadline <= self.submit_time:
            raise ValueError(f"job {self.job_id}: deadline must be after submission")
        if not self.tasks:
            raise ValueError(f"job {self.job_id}: needs at least one task")

    @property
    def total_work(self) -> float:
        return sum(t.duration for t in self.tasks)


@dataclass(frozen=True)
class Workload:
    """Jobs sorted by (submit_time, job_id); horizon bounds every submit."""

    jobs: tuple[JobSpec, ...]
    horizon: float

    def __post_init__(self):
        ordered = tuple(sorted(self.jobs, key=lambda j: (j.submit_time, j.job_id)))
        object.__setattr__(self, "jobs", ordered)
        seen = set()
        for job in ordered:
            if job.job_id in seen:
                raise ValueError(f"duplicate job_id {job.job_id!r}")
            seen.add(job.job_id)
            if job.submit_time > self.horizon:
                raise ValueError(f"job {job.job_id} submitted after horizon")

    @property
    def tenants(self) -> tuple[str, ...]:
        return tuple(sorted({j.tenant for j in self.jobs}))

    @property
    def n_tasks(self) -> int:
        return sum(len(j.tasks) for j in self.jobs)


@dataclass(frozen=True)
class TenantModel:
    arrival_rate: float
    duration_log_mean: float
    duration_log_sd: float
    tasks_per_job: Mapping[int, float]
    deadline_offsets: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (self.arrival_rate > 0):
            raise ValueError("arrival_rate must be positive")
        if self.duration_log_sd < 0:
            raise ValueError("duration_log_sd must be >= 0")
        total = sum(self.tasks_per_job.values())
        if not math.isclose(total, 1.0, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError(f"tasks_per_job histogram must sum to 1, sums to {total}")


@dataclass(frozen=True)
class WorkloadModel:
    tenants: Mapping[str, TenantModel] = field(default_factory=dict)

    def __post_init__(self):
        if not self.tenants:
            raise ValueError("model needs at least one tenant")


def _default_horizon(jobs: Iterable[JobSpec]) -> float:
    # Generous enough that serial execution of any single job fits.
    bound = 0.0
    for job in jobs:
        bound = max(bound, job.submit_time + job.total_work)
        if job.deadline is not None:
            bound = max(bound, job.deadline)
    return bound


def parse_trace(source, format: str = TRACE_FORMAT) -> Workload:
    """Parse a trace file (path or stream) into a Workload.

    Records: ``job_id,tenant,submit_s,deadline_s,durations_s,demands`` with
    semicolon-separated per-task lists; deadline and demands may be empty.
    """
    if format != TRACE_FORMAT:
        raise ValueError(f"unknown trace format {format!r}")
    stream, path, owned = open_text(source)
    try:
        meta = parse_header(stream.readline(), "trace", path=path)
        jobs = []
        for line_no, line in iter_records(stream):
            fields = [f.strip() for f in line.split(",")]
            if len(fields) not in (5, 6):
                raise FormatError(f"expected 5 or 6 fields, got {len(fields)}",
                                  path=path, line_no=line_no)
            job_id, tenant, submit_s, deadline_s, durations_s = fields[:5]
            demands_s = fields[5] if len(fields) == 6 else ""
            if not job_id:
                raise FormatError("missing job_id", path=path, line_no=line_no)
            if not tenant:
                raise FormatError("missing tenant", path=path, line_no=line_no)
            if not submit_s:
                raise FormatError("missing submit time", path=path, line_no=line_no)
            if not durations_s:
                raise FormatError("missing task durations", path=path, line_no=line_no)
            try:
                submit = float(submit_s)
                deadline = float(deadline_s) if deadline_s else None
                durations = [float(d) for d in durations_s.split(";")]
                demands = [int(d) for d in demands_s.split(";")] if demands_s else [1] * len(durations)
            except ValueError as exc:
                raise FormatError(f"malformed number: {exc}", path=path, line_no=line_no) from None
            if len(demands) != len(durations):
                raise FormatError("task demand list length differs from duration list",
                                  path=path, line_no=line_no)
            try:
                tasks = tuple(TaskSpec(f"{job_id}-t{i}", dur, dem)
                              for i, (dur, dem) in enumerate(zip(durations, demands)))
                jobs.append(JobSpec(job_id, tenant, submit, deadline, tasks))
            except ValueError as exc:
                raise FormatError(str(exc), path=path, line_no=line_no) from None
        if not jobs:
            raise FormatError("trace contains no jobs", path=path, line_no=2)
        horizon = float(meta["horizon"]) if "horizon" in meta else _default_horizon(jobs)
        return Workload(tuple(jobs), horizon)
    finally:
        if owned:
            stream.close()


def write_trace(w: Workload, dest) -> None:
    stream, _, owned = _open_write(dest)
    try:
        write_header(stream, "trace", horizon=w.horizon)
        for job in w.jobs:
            deadline = format_number(job.deadline) if job.deadline is not None else ""
            durations = ";".join(format_number(t.duration) for t in job.tasks)
            demands = ";".join(str(t.demand) for t in job.tasks)
            stream.write(f"{job.job_id},{job.tenant},{format_number(job.submit_time)},"
                         f"{deadline},{durations},{demands}\n")
    finally:
        if owned:
            stream.close()


def _open_write(dest) -> tuple[IO[str], str, bool]:
    import os
    if isinstance(dest, (str, os.PathLike)):
        return open(dest, "w", encoding="utf-8"), os.fspath(dest), True
    return dest, getattr(dest, "name", "<stream>"), False


def fit_model(w: Workload) -> WorkloadModel:
    """Fit per-tenant arrival, duration, and shape distributions from a trace."""
    tenants: dict[str, TenantModel] = {}
    for tenant in w.tenants:
        jobs = [j for j in w.jobs if j.tenant == tenant]
        if len(jobs) < 2:
            log.warning("tenant %s has %d job(s); need 2 to fit arrivals, skipping",
                        tenant, len(jobs))
            continue
        span = jobs[-1].submit_time - jobs[0].submit_time
        if span <= 0:
            raise ValueError(f"tenant {tenant}: all jobs submitted at the same instant, "
                             "cannot fit an arrival rate")
        rate = (len(jobs) - 1) / span
        log_durs = np.log([t.duration for j in jobs for t in j.tasks])
        counts: dict[int, int] = {}
        for j in jobs:
            counts[len(j.tasks)] = counts.get(len(j.tasks), 0) + 1
        hist = {n: c / len(jobs) for n, c in sorted(counts.items())}
        offsets = tuple(sorted(j.deadline - j.submit_time for j in jobs if j.deadline is not None))
        tenants[tenant] = TenantModel(
            arrival_rate=rate,
            duration_log_mean=float(np.mean(log_durs)),
            duration_log_sd=float(np.std(log_durs)),  # MLE, population sd
            tasks_per_job=hist,
            deadline_offsets=offsets or None,
        )
    if not tenants:
        raise ValueError("no tenant had enough jobs to fit a model")
    return WorkloadModel(tenants)


def synthesize(m: WorkloadModel, horizon: float, seed: int) -> Workload:
    """Draw a fresh trace from the model; identical for identical seeds."""
    if not (horizon > 0):
        raise ValueError("horizon must be positive")
    names = sorted(m.tenants)
    streams = np.random.SeedSequence(seed).spawn(len(names))
    jobs: list[JobSpec] = []
    for name, child in zip(names, streams):
        tm = m.tenants[name]
        rng = np.random.Generator(np.random.PCG64(child))
        counts = np.array(sorted(tm.tasks_per_job))
        probs = np.array([tm.tasks_per_job[c] for c in counts], dtype=float)
        probs = probs / probs.sum()
        t = 0.0
        k = 0
        while True:
            t += rng.exponential(1.0 / tm.arrival_rate)
            if t > horizon:
                break
            n_tasks = int(rng.choice(counts, p=probs))
            durations = np.exp(rng.normal(tm.duration_log_mean, tm.duration_log_sd, n_tasks))
            job_id = f"{name}-j{k:06d}"
            deadline = None
            if tm.deadline_offsets:
                deadline = t + float(rng.choice(np.asarray(tm.deadline_offsets)))
            tasks = tuple(TaskSpec(f"{job_id}-t{i}", float(d)) for i, d in enumerate(durations))
            jobs.append(JobSpec(job_id, name, t, deadline, tasks))
            k += 1
    if not jobs:
        raise ValueError("horizon too short: no job arrivals were drawn")
    return Workload(tuple(jobs), horizon)


def scale_workload(w: Workload, duration_factor: float, arrival_factor: float) -> Workload:
    """Stretch task durations and compress inter-arrival gaps.

    Durations multiply by duration_factor; submit times divide by
    arrival_factor (equivalently every inter-arrival gap does); deadline
    offsets from submission are preserved.
    """
    if not (duration_factor > 0 and arrival_factor > 0):
        raise ValueError("scale factors must be positive")
    jobs = []
    for job in w.jobs:
        submit = job.submit_time / arrival_factor
        deadline = None if job.deadline is None else submit + (job.deadline - job.submit_time)
        tasks = tuple(replace(t, duration=t.duration * duration_factor) for t in job.tasks)
        jobs.append(JobSpec(job.job_id, job.tenant, submit, deadline, tasks))
    return Workload(tuple(jobs), w.horizon / arrival_factor)


def read_model(source) -> WorkloadModel:
    _, blocks = read_blocks(source, "model")
    tenants: dict[str, TenantModel] = {}
    for section, fields, line_no in blocks:
        if not section.startswith("tenant "):
            raise FormatError(f"unexpected section [{section}] in model file", line_no=line_no)
        name = section[len("tenant "):].strip()
        try:
            hist = {}
            for pair in fields["tasks_per_job"].split():
                count, _, prob = pair.partition(":")
                hist[int(count)] = float(prob)
            offsets = None
            if fields.get("deadline_offset"):
                offsets = tuple(float(v) for v in fields["deadline_offset"].split())
            tenants[name] = TenantModel(
                arrival_rate=float(fields["arrival_rate"]),
                duration_log_mean=float(fields["duration_log_mean"]),
                duration_log_sd=float(fields["duration_log_sd"]),
                tasks_per_job=hist,
                deadline_offsets=offsets,
            )
        except KeyError as exc:
            raise FormatError(f"tenant {name}: missing field {exc}", line_no=line_no) from None
        except ValueError as exc:
            raise FormatError(f"tenant {name}: {exc}", line_no=line_no) from None
    return WorkloadModel(tenants)


def write_model(m: WorkloadModel, dest) -> None:
    stream, _, owned = _open_write(dest)
    try:
        blocks = []
        for name in sorted(m.tenants):
            tm = m.tenants[name]
            fields = {
                "arrival_rate": tm.arrival_rate,
                "duration_log_mean": tm.duration_log_mean,
                "duration_log_sd": tm.duration_log_sd,
                "tasks_per_job": " ".join(f"{c}:{format_number(p)}"
                                          for c, p in sorted(tm.tasks_per_job.items())),
            }
            if tm.deadline_offsets:
                fields["deadline_offset"] = " ".join(format_number(v) for v in tm.deadline_offsets)
            blocks.append((f"tenant {name}", fields))
        write_blocks(stream, "model", blocks)
    finally:
        if owned:
            stream.close()
