"""Shared fixtures and builders for the rmtune test suite."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rmtune.rmconfig import RMConfig, TenantConfig

settings.register_profile(
    "repeatable",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repeatable")
from rmtune.simulator import simulate
from rmtune.workload import JobSpec, TaskSpec, Workload


def make_tenant(
    share_weight=1.0,
    min_limit=0,
    max_limit=12,
    preempt_timeout_share=3600.0,
    preempt_timeout_min=3600.0,
):
    return TenantConfig(
        share_weight=share_weight,
        min_limit=min_limit,
        max_limit=max_limit,
        preempt_timeout_share=preempt_timeout_share,
        preempt_timeout_min=preempt_timeout_min,
    )


def make_config(tenants: dict, capacity=12, bounds=None):
    return RMConfig(tenants=tenants, capacity=capacity, bounds=bounds or {})


def make_job(job_id, tenant, submit, n_tasks, duration, demand=1, deadline=None):
    tasks = tuple(
        TaskSpec(task_id=f"{job_id}-t{i}", duration=float(duration), demand=demand)
        for i in range(n_tasks)
    )
    return JobSpec(
        job_id=job_id,
        tenant=tenant,
        submit_time=float(submit),
        deadline=deadline,
        tasks=tasks,
    )


@pytest.fixture
def preemption_scenario():
    """Two tenants on 5 containers where a timer preempts the hog.

    Tenant A floods all 5 containers at t=0 with 10s tasks. Tenant B
    arrives at t=1 with two 5s tasks and a 1s share timeout. Hand trace:

    - t=0: A launches 5 tasks (attempts 0..4), each finishing at 10.
    - t=1: B submits. Water-fill targets become {A: 3, B: 2}. B cannot
      launch (no free slots), so its 1s share timer arms for t=2.
    - t=2: timer fires. A is 2 over target; its two most recent
      launches (attempts 4 then 3) are killed at t=2. B launches both
      tasks (attempts 5, 6), finishing at t=7.
    - t=7: B done. A relaunches its two preempted tasks (attempts 7, 8)
      which run 7..17.
    - t=10: A's three surviving originals finish.

    Frozen facts: job A finishes at 17, job B at 7, 9 attempts total,
    2 preemptions, and over the window [1, 3] the raw utilization is
    1.0 while the effective utilization is 0.8 (the two killed
    container-seconds are 20% of the window's capacity-time).
    """
    tenants = {
        "A": make_tenant(max_limit=5),
        "B": make_tenant(max_limit=5, preempt_timeout_share=1.0),
    }
    cfg = make_config(tenants, capacity=5)
    jobs = (
        make_job("A-j0", "A", 0.0, 5, 10.0),
        make_job("B-j0", "B", 1.0, 2, 5.0),
    )
    workload = Workload(jobs=jobs, horizon=20.0)
    schedule = simulate(workload, cfg)
    return workload, cfg, schedule


@pytest.fixture
def rng():
    return np.random.default_rng(20260819)
