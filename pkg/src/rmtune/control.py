"""The observe / roll back / propose / what-if / descend / apply loop.

Each iteration observes the QS vector attained by the applied configuration
on a workload window.  A newly applied proposal must dominate the last
accepted observation (never worse anywhere, strictly better somewhere) or it
is reverted, and the following interval runs the incumbent configuration
again; steps are only taken from accepted configurations, so a bad proposal
costs at most one interval.  Iteration 0 only measures: it pins the
best-effort thresholds to the QS levels the starting configuration actually
attains.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .descent import (DescentState, NeedMoreSamples, Sample, choose_rho,
                      choose_weights, estimate_jacobian, proxy_gradient,
                      sample_ball, step_point, violated_objectives)
from .formats import (FormatError, format_number, iter_records, open_text,
                      parse_header, read_blocks, write_header)
from .metrics import QSVector, SLOSpec, evaluate
from .rmconfig import ConfigSpace, RMConfig, RmSimError, validate_config
from .simulator import effective_utilization, simulate
from .workload import Workload, WorkloadModel, _open_write, synthesize

log = logging.getLogger(__name__)

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERATIONS = "max_iterations"
STATUS_ABORTED = "aborted"


@dataclass(frozen=True)
class LoopConfig:
    """Loop tuning knobs.

    max_iterations counts iterations after the bootstrap observation, so the
    journal ends up with max_iterations + 1 lines.  noise_sigma adds
    zero-mean Gaussian measurement noise scaled by each QS value's magnitude
    (averaged over n_measures measurements), for studying robustness with a
    deterministic simulator underneath.
    """

    window_length: float
    max_iterations: int = 30
    candidates_per_iter: int = 5
    d_max: float = 0.1
    alpha: float = 0.1
    n_measures: int = 1
    dominance_tolerance: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0
    step_tolerance: float = 1e-4
    step_patience: int = 3

    def __post_init__(self):
        if not (self.window_length > 0):
            raise ValueError("window_length must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.candidates_per_iter < 1:
            raise ValueError("candidates_per_iter must be >= 1")
        if not (0 < self.d_max <= 1):
            raise ValueError("d_max must be in (0, 1]")
        if self.n_measures < 1:
            raise ValueError("n_measures must be >= 1")
        if self.dominance_tolerance < 0:
            raise ValueError("dominance_tolerance must be >= 0")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    applied_x: np.ndarray          # the vector whose QS was observed
    observed: QSVector
    accepted: bool
    predicted: tuple[QSVector | None, ...]  # per candidate; None = infeasible
    step_norm: float
    alpha: float
    rho: float


@dataclass
class LoopResult:
    records: list[IterationRecord]
    status: str
    final_x: np.ndarray
    final_config: RMConfig
    state: DescentState

    @property
    def iterations(self) -> int:
        return len(self.records)


def dominance_check(new, old, tolerance: float = 0.0) -> bool:
    """True when new is no worse than old everywhere and better somewhere."""
    new = np.asarray(new, dtype=float)
    old = np.asarray(old, dtype=float)
    if new.shape != old.shape:
        raise ValueError(f"QS vectors differ in length: {new.shape} vs {old.shape}")
    return bool(np.all(new <= old + tolerance) and np.any(new < old - tolerance))


def propose_candidates(x: np.ndarray, d_max: float, count: int, seed: int) -> list[np.ndarray]:
    """Deterministic exploration candidates around x within the trust region."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return sample_ball(x, d_max, count, rng)


def whatif(w: Workload, x: np.ndarray, space: ConfigSpace, slos: Sequence[SLOSpec],
           window: tuple[float, float]) -> QSVector | None:
    """Predicted QS vector for a candidate vector; None if it cannot be run."""
    try:
        cfg = space.decode(x)
        validate_config(cfg)
        schedule = simulate(w, cfg, until=window[1])
    except RmSimError as exc:
        log.debug("candidate rejected as infeasible: %s", exc)
        return None
    return evaluate(slos, schedule, window)


def _workload_source(source, loop_cfg: LoopConfig) -> Callable[[int], Workload]:
    if isinstance(source, Workload):
        return lambda it: source
    if isinstance(source, WorkloadModel):
        base = loop_cfg.seed
        return lambda it: synthesize(source, loop_cfg.window_length,
                                     seed=(base * 1_000_003 + it))
    if callable(source):
        return source
    raise TypeError("workload source must be a Workload, a WorkloadModel, or a callable")


def run_loop(source, initial: RMConfig, slos: Sequence[SLOSpec], loop_cfg: LoopConfig,
             step_hook: Callable[[int, np.ndarray], np.ndarray] | None = None) -> LoopResult:
    """Drive the full control loop against the simulator as the live system.

    ``source`` supplies the per-iteration observation window: a fixed
    Workload to replay, a WorkloadModel to synthesize from, or a callable
    iteration -> Workload.  ``step_hook`` (mainly for tests) may replace the
    computed next configuration vector; the loop clips it into the unit box
    but otherwise trusts it, which is exactly what the rollback must defend
    against.
    """
    validate_config(initial)
    space = initial.space()
    window = (0.0, loop_cfg.window_length)
    k = len(slos)
    if k == 0:
        raise ValueError("need at least one SLO to optimize")
    get_window = _workload_source(source, loop_cfg)

    thresholds = np.array([np.nan if s.threshold is None else float(s.threshold)
                           for s in slos])
    best_effort = [i for i, s in enumerate(slos) if s.threshold is None]
    state = DescentState(
        current_x=space.encode(initial),
        thresholds=thresholds,
        d_max=loop_cfg.d_max,
        alpha=loop_cfg.alpha,
    )
    applied = state.current_x.copy()
    last_known: list[float | None] = [None] * k
    last_accepted: np.ndarray | None = None
    last_accepted_x = applied.copy()
    records: list[IterationRecord] = []
    status = STATUS_MAX_ITERATIONS
    rejected_run = 0
    small_steps = 0
    widened = False
    proposal_radius = loop_cfg.d_max

    def observe(w: Workload, x: np.ndarray, rng: np.random.Generator) -> QSVector:
        cfg = space.decode(x)
        schedule = simulate(w, cfg, until=window[1])
        qs = evaluate(slos, schedule, window)
        if loop_cfg.noise_sigma <= 0:
            return qs
        noisy: list[float | None] = []
        for v in qs.values:
            if v is None:
                noisy.append(None)
                continue
            draws = v + rng.normal(0.0, loop_cfg.noise_sigma * abs(v),
                                   size=loop_cfg.n_measures)
            noisy.append(float(draws.mean()))
        return QSVector(tuple(noisy), qs.window)

    for it in range(loop_cfg.max_iterations + 1):
        w_it = get_window(it)
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=loop_cfg.seed, spawn_key=(7, it))))
        observed_x = applied.copy()
        qs_obs = observe(w_it, applied, rng)
        merged: list[float] = []
        missing = []
        for i, v in enumerate(qs_obs.values):
            if v is not None:
                last_known[i] = v
            if last_known[i] is None:
                missing.append(i)
            else:
                merged.append(last_known[i])
        if missing:
            raise RuntimeError(
                f"no QS data for objectives {missing} in the bootstrap window; "
                "lengthen the window or seed the workload with more jobs")
        f_obs = np.array(merged)

        # Rollback decision.  Re-observing the incumbent is trivially
        # accepted; only a newly applied proposal must dominate to survive.
        incumbent = bool(np.array_equal(applied, last_accepted_x))
        if last_accepted is None or incumbent:
            accepted = True
        else:
            accepted = dominance_check(f_obs, last_accepted, loop_cfg.dominance_tolerance)
        if accepted:
            last_accepted = f_obs.copy()
            last_accepted_x = applied.copy()
            for i in best_effort:
                state.thresholds[i] = f_obs[i]
            if not incumbent:
                rejected_run = 0
        else:
            rejected_run += 1
            if rejected_run >= 2:
                state.alpha = state.alpha / 2.0
                rejected_run = 0
                log.info("iteration %d: halving step size to %.4g after repeated "
                         "non-dominating proposals", it, state.alpha)
            applied = last_accepted_x.copy()
        state.remember(Sample(observed_x, f_obs, loop_cfg.n_measures))

        cand_rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=loop_cfg.seed, spawn_key=(11, it))))
        cands = sample_ball(applied, proposal_radius, loop_cfg.candidates_per_iter, cand_rng)
        predicted: list[QSVector | None] = []
        for cand in cands:
            pred = whatif(w_it, cand, space, slos, window)
            predicted.append(pred)
            if pred is None:
                continue
            filled = [v if v is not None else last_known[i]
                      for i, v in enumerate(pred.values)]
            state.remember(Sample(cand, np.array(filled), 1))

        # Descend only from an accepted configuration, never at bootstrap.
        step_norm = 0.0
        modelled = False
        next_x = applied
        if accepted and it > 0:
            try:
                jac = estimate_jacobian(state.history, applied, radius=2 * state.d_max)
                violated = violated_objectives(last_accepted, state.thresholds)
                choice = choose_weights(jac, violated)
                state.weights = choice.weights
                state.rho = choose_rho(jac, choice.weights, violated)
                grad = proxy_gradient(jac, last_accepted, state.thresholds,
                                      choice.weights, state.rho)
                next_x = step_point(applied, grad, state.alpha, state.d_max)
                modelled = True
                proposal_radius = loop_cfg.d_max
                widened = False
                log.debug("iteration %d: rho=%.4g |grad|=%.4g accepted=%s",
                          it, state.rho, float(np.linalg.norm(grad)), accepted)
            except NeedMoreSamples as exc:
                if len(state.history) < state.current_x.size + 1:
                    log.debug("iteration %d: still collecting samples (%s)", it, exc)
                elif not widened:
                    widened = True
                    proposal_radius = 2 * loop_cfg.d_max
                    log.info("iteration %d: widening candidate radius to %.3g (%s)",
                             it, proposal_radius, exc)
                else:
                    records.append(IterationRecord(it, observed_x, qs_obs, accepted,
                                                   tuple(predicted), 0.0, state.alpha,
                                                   state.rho))
                    status = STATUS_ABORTED
                    log.error("iteration %d: local model still starved after widening "
                              "the search radius (%s); aborting", it, exc)
                    break
            if modelled and step_hook is not None:
                next_x = np.clip(np.asarray(step_hook(it, next_x), dtype=float), 0.0, 1.0)
            step_norm = float(np.linalg.norm(next_x - applied))

        records.append(IterationRecord(it, observed_x, qs_obs, accepted,
                                       tuple(predicted), step_norm, state.alpha, state.rho))

        if it > 0:
            if modelled or not accepted:
                small_steps = small_steps + 1 if step_norm < loop_cfg.step_tolerance else 0
            else:
                small_steps = 0
            if small_steps >= loop_cfg.step_patience:
                status = STATUS_CONVERGED
                applied = next_x
                state.current_x = applied
                break
        applied = next_x
        state.current_x = applied

    final_x = last_accepted_x
    return LoopResult(records, status, final_x, space.decode(final_x), state)


@dataclass(frozen=True)
class ProvisionRow:
    capacity: int
    feasible: bool
    qs: QSVector | None
    utilization: float | None


def provision(w: Workload, cfg: RMConfig, slos: Sequence[SLOSpec],
              capacities: Sequence[int]) -> list[ProvisionRow]:
    """Evaluate the same configuration and workload at alternative capacities."""
    rows = []
    window = (0.0, w.horizon)
    for cap in capacities:
        if cap < 1:
            raise ValueError(f"capacity must be >= 1, got {cap}")
        scaled = RMConfig(cfg.tenants, int(cap), cfg.bounds)
        try:
            validate_config(scaled)
            schedule = simulate(w, scaled)
        except RmSimError as exc:
            log.warning("capacity %d infeasible: %s", cap, exc)
            rows.append(ProvisionRow(int(cap), False, None, None))
            continue
        rows.append(ProvisionRow(
            int(cap), True, evaluate(slos, schedule, window),
            effective_utilization(schedule, window, scaled)))
    return rows


def write_journal(result: LoopResult, dest) -> None:
    stream, _, owned = _open_write(dest)
    try:
        write_header(stream, "journal", status=result.status,
                     slos=len(result.records[0].observed.values) if result.records else 0)
        for rec in result.records:
            obs = ";".join("NA" if v is None else format_number(v)
                           for v in rec.observed.values)
            xs = ";".join(format_number(v) for v in rec.applied_x)
            preds = "|".join(
                "X" if p is None else ";".join("NA" if v is None else format_number(v)
                                               for v in p.values)
                for p in rec.predicted)
            stream.write(f"{rec.iteration},{int(rec.accepted)},{format_number(rec.step_norm)},"
                         f"{format_number(rec.alpha)},{format_number(rec.rho)},"
                         f"{xs},{obs},{preds}\n")
    finally:
        if owned:
            stream.close()


def read_journal(source) -> tuple[list[IterationRecord], str]:
    stream, path, owned = open_text(source)
    try:
        meta = parse_header(stream.readline(), "journal", path=path)
        status = meta.get("status", STATUS_MAX_ITERATIONS)
        records = []
        for line_no, line in iter_records(stream):
            fields = line.split(",")
            if len(fields) != 8:
                raise FormatError(f"expected 8 fields, got {len(fields)}",
                                  path=path, line_no=line_no)
            it_s, acc_s, step_s, alpha_s, rho_s, xs, obs, preds = fields
            x = np.array([float(v) for v in xs.split(";")])
            values = tuple(None if v == "NA" else float(v) for v in obs.split(";"))
            predicted = tuple(
                None if grp == "X" else QSVector(
                    tuple(None if v == "NA" else float(v) for v in grp.split(";")), (0.0, 0.0))
                for grp in preds.split("|")) if preds else ()
            records.append(IterationRecord(
                iteration=int(it_s), applied_x=x,
                observed=QSVector(values, (0.0, 0.0)),
                accepted=acc_s == "1", predicted=predicted,
                step_norm=float(step_s), alpha=float(alpha_s), rho=float(rho_s)))
        return records, status
    finally:
        if owned:
            stream.close()


def read_loop_config(source) -> LoopConfig:
    _, blocks = read_blocks(source, "loopconfig")
    fields: dict[str, str] = {}
    for section, body, line_no in blocks:
        if section != "loop":
            raise FormatError(f"unexpected section [{section}] in loop config", line_no=line_no)
        fields.update(body)
    try:
        kwargs: dict = {"window_length": float(fields["window_length"])}
        for name, conv in (("max_iterations", int), ("candidates_per_iter", int),
                           ("d_max", float), ("alpha", float), ("n_measures", int),
                           ("dominance_tolerance", float), ("noise_sigma", float),
                           ("seed", int), ("step_tolerance", float), ("step_patience", int)):
            if name in fields:
                kwargs[name] = conv(fields[name])
    except KeyError as exc:
        raise FormatError(f"loop config missing field {exc}") from None
    except ValueError as exc:
        raise FormatError(f"loop config: {exc}") from None
    return LoopConfig(**kwargs)


def write_loop_config(cfg: LoopConfig, dest) -> None:
    from .formats import write_blocks
    stream, _, owned = _open_write(dest)
    try:
        fields = {name: getattr(cfg, name) for name in (
            "window_length", "max_iterations", "candidates_per_iter", "d_max",
            "alpha", "n_measures", "dominance_tolerance", "noise_sigma", "seed",
            "step_tolerance", "step_patience")}
        write_blocks(stream, "loopconfig", [("loop", fields)])
    finally:
        if owned:
            stream.close()


def with_seed(cfg: LoopConfig, seed: int | None) -> LoopConfig:
    return cfg if seed is None else replace(cfg, seed=seed)
