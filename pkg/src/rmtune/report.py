"""Figure rendering for CLI reports.

Every CLI command that writes delimited output can also drop a PNG next to
it.  All plotting happens on the Agg backend so reports render the same on
headless machines.
"""

from __future__ import annotations

import logging

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .control import IterationRecord, ProvisionRow  # noqa: E402
from .metrics import SLOSpec  # noqa: E402
from .simulator import TaskSchedule  # noqa: E402

log = logging.getLogger(__name__)


def _slo_label(spec: SLOSpec) -> str:
    extra = ""
    if spec.metric == "DL":
        extra = f" g={spec.gamma:g}"
    elif spec.metric == "FAIR":
        extra = f" s={spec.desired_share:g}"
    return f"{spec.tenant}:{spec.metric}{extra}"


def plot_journal(records: list[IterationRecord], slos: list[SLOSpec], path: str) -> None:
    """Per-objective QS trajectories plus step size, acceptance marks included."""
    if not records:
        log.warning("no iterations to plot")
        return
    iters = [r.iteration for r in records]
    k = len(records[0].observed.values)
    fig, (ax_qs, ax_step) = plt.subplots(
        2, 1, figsize=(8, 6), sharex=True, height_ratios=[3, 1])
    for i in range(k):
        ys = [r.observed.values[i] for r in records]
        xs = [t for t, y in zip(iters, ys) if y is not None]
        ys = [y for y in ys if y is not None]
        label = _slo_label(slos[i]) if i < len(slos) else f"objective {i}"
        ax_qs.plot(xs, ys, marker="o", markersize=3, label=label)
    rejected = [r.iteration for r in records if not r.accepted]
    for t in rejected:
        ax_qs.axvline(t, color="0.8", linestyle=":", linewidth=1, zorder=0)
    if rejected:
        ax_qs.plot([], [], color="0.8", linestyle=":", label="rejected")
    ax_qs.set_ylabel("QS (smaller is better)")
    ax_qs.legend(fontsize=8)
    ax_qs.grid(alpha=0.3)

    ax_step.plot(iters, [r.step_norm for r in records], color="tab:gray", label="step norm")
    ax_step.plot(iters, [r.alpha for r in records], color="tab:orange",
                 linestyle="--", label="step size")
    ax_step.set_yscale("symlog", linthresh=1e-5)
    ax_step.set_xlabel("iteration")
    ax_step.legend(fontsize=8)
    ax_step.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_provision(rows: list[ProvisionRow], slos: list[SLOSpec], path: str) -> None:
    """QS per objective and utilization across candidate capacities."""
    feasible = [r for r in rows if r.feasible and r.qs is not None]
    fig, (ax_qs, ax_util) = plt.subplots(
        2, 1, figsize=(8, 6), sharex=True, height_ratios=[2, 1])
    if feasible:
        caps = [r.capacity for r in feasible]
        k = len(feasible[0].qs.values)
        for i in range(k):
            ys = [r.qs.values[i] for r in feasible]
            xs = [c for c, y in zip(caps, ys) if y is not None]
            ys = [y for y in ys if y is not None]
            label = _slo_label(slos[i]) if i < len(slos) else f"objective {i}"
            ax_qs.plot(xs, ys, marker="o", label=label)
        ax_util.bar(caps, [r.utilization or 0.0 for r in feasible],
                    color="tab:blue", width=0.6)
    for r in rows:
        if not r.feasible:
            ax_qs.axvline(r.capacity, color="tab:red", linestyle=":", linewidth=1)
    ax_qs.set_ylabel("QS (smaller is better)")
    ax_qs.legend(fontsize=8)
    ax_qs.grid(alpha=0.3)
    ax_util.set_xlabel("capacity")
    ax_util.set_ylabel("utilization")
    ax_util.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_validation(errors: dict[str, tuple[float | None, float | None]], path: str) -> None:
    """Relative absolute and squared prediction error per tenant."""
    tenants = sorted(errors)
    rae = [errors[t][0] for t in tenants]
    rse = [errors[t][1] for t in tenants]
    x = np.arange(len(tenants))
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(tenants)), 4))
    ax.bar(x - 0.2, [v if v is not None else 0.0 for v in rae], width=0.4, label="RAE")
    ax.bar(x + 0.2, [v if v is not None else 0.0 for v in rse], width=0.4, label="RSE")
    for i, (a, s) in enumerate(zip(rae, rse)):
        if a is None and s is None:
            ax.text(i, 0.02, "no spread", ha="center", fontsize=8, rotation=90)
    ax.axhline(1.0, color="0.5", linestyle="--", linewidth=1)
    ax.set_xticks(x, tenants)
    ax.set_ylabel("error relative to observed spread")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_schedule(schedule: TaskSchedule, path: str) -> None:
    """Stacked per-tenant allocation over time."""
    tenants = sorted(schedule.tenant_ids)
    idx = {t: i for i, t in enumerate(tenants)}
    events: list[tuple[float, int, int]] = []  # time, tenant index, delta
    horizon = schedule.horizon
    for a in range(len(schedule.att_task)):
        launch = schedule.att_launch[a]
        if np.isnan(launch):
            continue
        end = schedule.att_preempt[a]
        if np.isnan(end):
            end = schedule.att_finish[a]
        if np.isnan(end):
            end = horizon
        ti = idx[schedule.tenant_ids[int(schedule.att_tenant[a])]]
        alloc = int(schedule.att_alloc[a])
        events.append((float(launch), ti, alloc))
        events.append((float(end), ti, -alloc))
    events.sort(key=lambda e: e[0])
    times = [0.0]
    levels = [[0] * len(tenants)]
    cur = [0] * len(tenants)
    for t, ti, d in events:
        cur[ti] += d
        if t == times[-1]:
            levels[-1] = cur.copy()
        else:
            times.append(t)
            levels.append(cur.copy())
    arr = np.array(levels).T if levels else np.zeros((len(tenants), 1))
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.stackplot(times, arr, labels=tenants, step="post", alpha=0.8)
    ax.axhline(schedule.capacity, color="tab:red", linestyle="--",
               linewidth=1, label="capacity")
    ax.set_xlabel("time")
    ax.set_ylabel("allocated units")
    ax.set_xlim(0, horizon)
    ax.legend(fontsize=8, loc="upper right")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
