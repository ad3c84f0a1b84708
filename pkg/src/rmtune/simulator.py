"""Event-driven multi-tenant container scheduler simulation.

Jobs submit bags of fixed-duration tasks; tasks launch FIFO per tenant into
containers granted by the weighted fair allocator.  A tenant starved below its
entitled share (or below its guaranteed minimum) for longer than the
configured timeout triggers preemption: the most recently launched tasks of
the most over-allocated tenants are killed, losing all progress, and re-enter
their queue head.  Events are job submissions, task finishes, and starvation
timer expiries; the allocation is recomputed at every event and total usage
never exceeds capacity.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from math import floor, inf, isnan, nan
from typing import Iterable

import numpy as np

from .fairshare import water_fill
from .formats import (FormatError, format_number, iter_records, open_text,
                      parse_header, write_header)
from .rmconfig import ConfigError, RMConfig, RmSimError, validate_config
from .workload import Workload, _open_write

_SUBMIT, _FINISH, _TIMER = 0, 1, 2
_SHARE, _MIN = 0, 1


class SimulationError(RmSimError):
    """The simulation cannot make progress (for example preemption livelock)."""


@dataclass(frozen=True)
class ScheduleEntry:
    """One launch attempt of one task."""

    task_id: str
    job_id: str
    tenant: str
    launch_time: float
    finish_time: float | None
    allocation: int
    preempted: bool = False
    preempt_time: float | None = None


class TaskSchedule:
    """Simulation output: task attempts plus per-job summary times.

    Attempt data is held in parallel arrays (``att_*``); ``entries`` is
    materialized on first use.  ``job_finish`` only lists jobs whose every
    task finished; ``job_launch`` lists the first launch per job.
    """

    def __init__(self, *, capacity: int, horizon: float,
                 task_ids: list[str], task_job: list[str],
                 att_task: np.ndarray, att_tenant: np.ndarray,
                 att_launch: np.ndarray, att_finish: np.ndarray,
                 att_preempt: np.ndarray, att_alloc: np.ndarray,
                 tenant_ids: tuple[str, ...],
                 job_tenant: dict[str, str], job_submit: dict[str, float],
                 job_deadline: dict[str, float | None], job_ntasks: dict[str, int],
                 job_finish: dict[str, float], job_launch: dict[str, float]):
        self.capacity = capacity
        self.horizon = horizon
        self.task_ids = task_ids
        self.task_job = task_job
        self.att_task = att_task
        self.att_tenant = att_tenant
        self.att_launch = att_launch
        self.att_finish = att_finish
        self.att_preempt = att_preempt
        self.att_alloc = att_alloc
        self.tenant_ids = tenant_ids
        self.job_tenant = job_tenant
        self.job_submit = job_submit
        self.job_deadline = job_deadline
        self.job_ntasks = job_ntasks
        self.job_finish = job_finish
        self.job_launch = job_launch
        self._entries: list[ScheduleEntry] | None = None

    @property
    def entries(self) -> list[ScheduleEntry]:
        if self._entries is None:
            out = []
            for a in range(len(self.att_task)):
                ti = int(self.att_task[a])
                task_id = self.task_ids[ti]
                preempted = bool(self.att_preempt[a] == self.att_preempt[a])  # not nan
                finish = float(self.att_finish[a])
                out.append(ScheduleEntry(
                    task_id=task_id,
                    job_id=self.task_job[ti],
                    tenant=self.tenant_ids[int(self.att_tenant[a])],
                    launch_time=float(self.att_launch[a]),
                    finish_time=None if isnan(finish) else finish,
                    allocation=int(self.att_alloc[a]),
                    preempted=preempted,
                    preempt_time=float(self.att_preempt[a]) if preempted else None,
                ))
            self._entries = out
        return self._entries

    def preemption_count(self, tenant: str | None = None) -> int:
        mask = self.att_preempt == self.att_preempt
        if tenant is not None:
            mask &= self.att_tenant == self.tenant_ids.index(tenant)
        return int(mask.sum())

    def completed_jobs(self, tenant: str | None = None) -> list[str]:
        jobs = self.job_finish
        if tenant is None:
            return sorted(jobs)
        return sorted(j for j in jobs if self.job_tenant[j] == tenant)


def simulate(w: Workload, cfg: RMConfig, until: float | None = None) -> TaskSchedule:
    """Run the scheduler over a workload; deterministic for equal inputs."""
    validate_config(cfg)
    names = cfg.tenant_ids
    tenant_index = {t: i for i, t in enumerate(names)}
    for job in w.jobs:
        if job.tenant not in tenant_index:
            raise ConfigError(f"workload tenant {job.tenant!r} missing from config")
    n = len(names)
    weights = [cfg.tenants[t].share_weight for t in names]
    mins = [cfg.tenants[t].min_limit for t in names]
    maxs = [cfg.tenants[t].max_limit for t in names]
    tmo = [(cfg.tenants[t].preempt_timeout_share, cfg.tenants[t].preempt_timeout_min)
           for t in names]
    capacity = cfg.capacity

    # Flatten tasks; handles are integers into these lists.
    task_ids: list[str] = []
    task_job: list[str] = []
    task_dur: list[float] = []
    task_dem: list[int] = []
    task_tenant: list[int] = []
    task_jobidx: list[int] = []
    job_ids: list[str] = []
    job_task_handles: list[list[int]] = []
    job_remaining: list[int] = []
    for job in w.jobs:
        ji = len(job_ids)
        job_ids.append(job.job_id)
        handles = []
        ti = tenant_index[job.tenant]
        for task in job.tasks:
            if task.demand > capacity:
                raise ConfigError(f"task {task.task_id} demands {task.demand} containers, "
                                  f"capacity is {capacity}")
            if task.demand > maxs[ti]:
                raise ConfigError(f"task {task.task_id} demands {task.demand} containers, "
                                  f"above tenant {job.tenant}'s max_limit {maxs[ti]}")
            handles.append(len(task_ids))
            task_ids.append(task.task_id)
            task_job.append(job.job_id)
            task_dur.append(task.duration)
            task_dem.append(task.demand)
            task_tenant.append(ti)
            task_jobidx.append(ji)
        job_task_handles.append(handles)
        job_remaining.append(len(handles))

    n_tasks = len(task_ids)
    kill_budget = 100 * n_tasks + 1000

    from collections import deque
    pending: list[deque[int]] = [deque() for _ in range(n)]
    pending_dem = [0] * n
    running: list[dict[int, tuple[int, float, int, int]]] = [{} for _ in range(n)]
    # running[t][handle] = (launch_seq, launch_time, demand, attempt_idx)
    alloc = [0] * n
    used = 0

    att_task: list[int] = []
    att_tenant: list[int] = []
    att_launch: list[float] = []
    att_finish: list[float] = []
    att_preempt: list[float] = []
    att_alloc: list[int] = []

    job_first_launch: list[float] = [nan] * len(job_ids)
    job_finish_time: list[float] = [nan] * len(job_ids)

    heap: list[tuple[float, int, int, int, int]] = []
    seq = 0
    for ji, job in enumerate(w.jobs):
        heap.append((job.submit_time, seq, _SUBMIT, ji, 0))
        seq += 1
    heapq.heapify(heap)

    starve_since: list[list[float]] = [[nan, nan] for _ in range(n)]
    stamp: list[list[int]] = [[0, 0] for _ in range(n)]
    launch_seq = 0
    kills = 0
    pending_total = 0

    def targets_now() -> list[int]:
        demands = [alloc[i] + pending_dem[i] for i in range(n)]
        return water_fill(demands, weights, mins, maxs, capacity)

    def preempt_for(i: int, level: int, now: float) -> None:
        nonlocal used, kills, pending_total
        tgt = targets_now()
        if level == _MIN:
            want = mins[i]
            if alloc[i] + pending_dem[i] < want:
                want = alloc[i] + pending_dem[i]
        else:
            want = tgt[i]
        need = want - alloc[i]
        while need > 0:
            victim = -1
            worst = 0
            for v in range(n):
                if v == i:
                    continue
                over = alloc[v] - tgt[v]
                if over > worst:
                    worst = over
                    victim = v
            if victim < 0:
                break
            run = running[victim]
            handle = max(run, key=lambda h: run[h][0])
            _, _, dem, attempt = run.pop(handle)
            att_preempt[attempt] = now
            alloc[victim] -= dem
            used -= dem
            pending[victim].appendleft(handle)
            pending_dem[victim] += dem
            pending_total += dem
            need -= dem
            kills += 1
            if kills > kill_budget:
                raise SimulationError(
                    f"{kills} preemptions for {n_tasks} tasks; giving up on a config "
                    "that cannot stop thrashing")

    while heap:
        now = heap[0][0]
        if until is not None and now > until:
            break
        # Apply every event at this instant before rescheduling once.
        batch: list[tuple[float, int, int, int, int]] = []
        while heap and heap[0][0] == now:
            batch.append(heapq.heappop(heap))
        batch.sort(key=lambda e: (e[2], e[1]))
        for _, _, kind, a, b in batch:
            if kind == _SUBMIT:
                for h in job_task_handles[a]:
                    pending[task_tenant[h]].append(h)
                    d = task_dem[h]
                    pending_dem[task_tenant[h]] += d
                    pending_total += d
            elif kind == _FINISH:
                h = a
                ti = task_tenant[h]
                rec = running[ti].get(h)
                if rec is None or rec[3] != b:
                    continue  # the attempt this event belonged to was preempted
                del running[ti][h]
                att_finish[rec[3]] = now
                alloc[ti] -= rec[2]
                used -= rec[2]
                ji = task_jobidx[h]
                job_remaining[ji] -= 1
                if job_remaining[ji] == 0:
                    job_finish_time[ji] = now
            else:  # _TIMER: a = tenant*2 + level, b = stamp
                i, level = divmod(a, 2)
                if stamp[i][level] == b:
                    stamp[i][level] += 1
                    starve_since[i][level] = nan
                    preempt_for(i, level, now)

        # Scheduling pass: launch FIFO heads up to entitled targets,
        # most-starved tenant first.
        if pending_total:
            tgt = targets_now()
            order = sorted(range(n), key=lambda i: alloc[i] - tgt[i])
            for i in order:
                q = pending[i]
                while q:
                    h = q[0]
                    d = task_dem[h]
                    if alloc[i] + d > tgt[i] or used + d > capacity:
                        break
                    q.popleft()
                    pending_dem[i] -= d
                    pending_total -= d
                    attempt = len(att_task)
                    att_task.append(h)
                    att_tenant.append(i)
                    att_launch.append(now)
                    att_finish.append(nan)
                    att_preempt.append(nan)
                    att_alloc.append(d)
                    running[i][h] = (launch_seq, now, d, attempt)
                    launch_seq += 1
                    alloc[i] += d
                    used += d
                    ji = task_jobidx[h]
                    if isnan(job_first_launch[ji]):
                        job_first_launch[ji] = now
                    heapq.heappush(heap, (now + task_dur[h], seq, _FINISH, h, attempt))
                    seq += 1
            # Update starvation timers against the fresh targets.
            for i in range(n):
                starving_share = pending_dem[i] > 0 and alloc[i] < tgt[i]
                starving_min = pending_dem[i] > 0 and alloc[i] < mins[i]
                for level, starving in ((_SHARE, starving_share), (_MIN, starving_min)):
                    if starving:
                        if isnan(starve_since[i][level]) and tmo[i][level] != inf:
                            starve_since[i][level] = now
                            stamp[i][level] += 1
                            heapq.heappush(
                                heap, (now + tmo[i][level], seq, _TIMER,
                                       i * 2 + level, stamp[i][level]))
                            seq += 1
                    elif not isnan(starve_since[i][level]):
                        starve_since[i][level] = nan
                        stamp[i][level] += 1
        else:
            for i in range(n):
                for level in (_SHARE, _MIN):
                    if not isnan(starve_since[i][level]):
                        starve_since[i][level] = nan
                        stamp[i][level] += 1

        if __debug__:
            assert used <= capacity, f"capacity exceeded at t={now}"
            assert used == sum(alloc), "allocation accounting out of sync"

    job_finish = {}
    job_launch = {}
    for ji, jid in enumerate(job_ids):
        if not isnan(job_finish_time[ji]):
            job_finish[jid] = job_finish_time[ji]
        if not isnan(job_first_launch[ji]):
            job_launch[jid] = job_first_launch[ji]

    return TaskSchedule(
        capacity=capacity,
        horizon=w.horizon,
        task_ids=task_ids,
        task_job=task_job,
        att_task=np.asarray(att_task, dtype=np.int64),
        att_tenant=np.asarray(att_tenant, dtype=np.int64),
        att_launch=np.asarray(att_launch, dtype=float),
        att_finish=np.asarray(att_finish, dtype=float),
        att_preempt=np.asarray(att_preempt, dtype=float),
        att_alloc=np.asarray(att_alloc, dtype=np.int64),
        tenant_ids=names,
        job_tenant={j.job_id: j.tenant for j in w.jobs},
        job_submit={j.job_id: j.submit_time for j in w.jobs},
        job_deadline={j.job_id: j.deadline for j in w.jobs},
        job_ntasks={j.job_id: len(j.tasks) for j in w.jobs},
        job_finish=job_finish,
        job_launch=job_launch,
    )


def _area(s: TaskSchedule, window: tuple[float, float], include_preempted: bool,
          tenant: str | None = None) -> float:
    t0, t1 = window
    end = np.where(np.isnan(s.att_preempt),
                   np.where(np.isnan(s.att_finish), inf, s.att_finish),
                   s.att_preempt)
    overlap = np.minimum(end, t1) - np.maximum(s.att_launch, t0)
    np.clip(overlap, 0.0, None, out=overlap)
    mask = np.ones(len(overlap), dtype=bool)
    if not include_preempted:
        mask &= np.isnan(s.att_preempt)
    if tenant is not None:
        mask &= s.att_tenant == s.tenant_ids.index(tenant)
    return float(np.sum(overlap[mask] * s.att_alloc[mask]))


def effective_utilization(s: TaskSchedule, window: tuple[float, float], cfg: RMConfig) -> float:
    """Fraction of capacity-time spent on work that was not thrown away."""
    t0, t1 = window
    if not (t1 > t0):
        raise ValueError("window must have positive length")
    return _area(s, window, include_preempted=False) / (cfg.capacity * (t1 - t0))


def raw_utilization(s: TaskSchedule, window: tuple[float, float], cfg: RMConfig) -> float:
    """Utilization counting preempted attempts' occupancy as well."""
    t0, t1 = window
    if not (t1 > t0):
        raise ValueError("window must have positive length")
    return _area(s, window, include_preempted=True) / (cfg.capacity * (t1 - t0))


def write_schedule(s: TaskSchedule, dest) -> None:
    stream, _, owned = _open_write(dest)
    try:
        write_header(stream, "schedule", capacity=s.capacity, horizon=s.horizon)
        for jid in sorted(s.job_submit):
            deadline = s.job_deadline[jid]
            stream.write(f"#job {jid},{s.job_tenant[jid]},{format_number(s.job_submit[jid])},"
                         f"{format_number(deadline) if deadline is not None else ''},"
                         f"{s.job_ntasks[jid]}\n")
        for e in s.entries:
            if e.preempted:
                end = f"PREEMPTED@{format_number(e.preempt_time)}"
            elif e.finish_time is None:
                end = "RUNNING"
            else:
                end = format_number(e.finish_time)
            stream.write(f"{e.task_id},{e.job_id},{e.tenant},"
                         f"{format_number(e.launch_time)},{end},{e.allocation}\n")
    finally:
        if owned:
            stream.close()


def read_schedule(source) -> TaskSchedule:
    stream, path, owned = open_text(source)
    try:
        meta = parse_header(stream.readline(), "schedule", path=path)
        try:
            capacity = int(float(meta["capacity"]))
            horizon = float(meta["horizon"])
        except (KeyError, ValueError):
            raise FormatError("schedule header needs capacity= and horizon=", path=path, line_no=1) from None
        job_tenant: dict[str, str] = {}
        job_submit: dict[str, float] = {}
        job_deadline: dict[str, float | None] = {}
        job_ntasks: dict[str, int] = {}
        rows = []
        for line_no, line in iter_records(stream, keep_comments=True):
            if line.startswith("#job "):
                fields = [f.strip() for f in line[len("#job "):].split(",")]
                if len(fields) != 5:
                    raise FormatError("expected '#job id,tenant,submit,deadline,ntasks'",
                                      path=path, line_no=line_no)
                jid, tenant, submit_s, deadline_s, ntasks_s = fields
                job_tenant[jid] = tenant
                job_submit[jid] = float(submit_s)
                job_deadline[jid] = float(deadline_s) if deadline_s else None
                job_ntasks[jid] = int(ntasks_s)
                continue
            if line.startswith("#"):
                continue
            fields = [f.strip() for f in line.split(",")]
            if len(fields) != 6:
                raise FormatError(f"expected 6 fields, got {len(fields)}", path=path, line_no=line_no)
            task_id, jid, tenant, launch_s, end_s, alloc_s = fields
            try:
                launch = float(launch_s)
                allocation = int(alloc_s)
                if end_s.startswith("PREEMPTED@"):
                    finish, preempt = nan, float(end_s[len("PREEMPTED@"):])
                elif end_s == "RUNNING":
                    finish, preempt = nan, nan
                else:
                    finish, preempt = float(end_s), nan
            except ValueError as exc:
                raise FormatError(f"malformed number: {exc}", path=path, line_no=line_no) from None
            rows.append((task_id, jid, tenant, launch, finish, preempt, allocation))
        tenant_ids = tuple(sorted({t for t in job_tenant.values()} | {r[2] for r in rows}))
        tindex = {t: i for i, t in enumerate(tenant_ids)}
        task_ids: list[str] = []
        task_job: list[str] = []
        tid_index: dict[str, int] = {}
        att = {k: [] for k in ("task", "tenant", "launch", "finish", "preempt", "alloc")}
        finished_tasks: dict[str, set[str]] = {}
        job_finish: dict[str, float] = {}
        job_launch: dict[str, float] = {}
        for task_id, jid, tenant, launch, finish, preempt, allocation in rows:
            if task_id not in tid_index:
                tid_index[task_id] = len(task_ids)
                task_ids.append(task_id)
                task_job.append(jid)
            att["task"].append(tid_index[task_id])
            att["tenant"].append(tindex[tenant])
            att["launch"].append(launch)
            att["finish"].append(finish)
            att["preempt"].append(preempt)
            att["alloc"].append(allocation)
            if jid not in job_tenant:
                raise FormatError(f"task {task_id} references job {jid} with no #job line", path=path)
            job_launch[jid] = min(job_launch.get(jid, inf), launch)
            if not isnan(finish):
                finished_tasks.setdefault(jid, set()).add(task_id)
                job_finish[jid] = max(job_finish.get(jid, -inf), finish)
        for jid in list(job_finish):
            if len(finished_tasks.get(jid, ())) != job_ntasks.get(jid, -1):
                del job_finish[jid]
        return TaskSchedule(
            capacity=capacity, horizon=horizon,
            task_ids=task_ids, task_job=task_job,
            att_task=np.asarray(att["task"], dtype=np.int64),
            att_tenant=np.asarray(att["tenant"], dtype=np.int64),
            att_launch=np.asarray(att["launch"], dtype=float),
            att_finish=np.asarray(att["finish"], dtype=float),
            att_preempt=np.asarray(att["preempt"], dtype=float),
            att_alloc=np.asarray(att["alloc"], dtype=np.int64),
            tenant_ids=tenant_ids,
            job_tenant=job_tenant, job_submit=job_submit,
            job_deadline=job_deadline, job_ntasks=job_ntasks,
            job_finish=job_finish, job_launch=job_launch,
        )
    finally:
        if owned:
            stream.close()
