"""Self-tuning resource management for a multi-tenant scheduler.

The package bundles a deterministic container-scheduler simulator, a
declarative service-level-objective layer that scores schedules as
quality-of-service vectors, and a noise-tolerant multi-objective descent
loop that tunes scheduler configurations against those objectives with
dominance-checked rollback.
"""

from .control import (IterationRecord, LoopConfig, LoopResult, ProvisionRow,
                      STATUS_ABORTED, STATUS_CONVERGED, STATUS_MAX_ITERATIONS,
                      dominance_check, propose_candidates, provision,
                      read_journal, read_loop_config, run_loop, whatif,
                      write_journal, write_loop_config)
from .descent import (DescentState, NeedMoreSamples, Sample, choose_rho,
                      choose_weights, estimate_jacobian, mgda_weights,
                      minimize_noisy, proxy_gradient, proxy_objective,
                      sample_ball, step, step_point, violated_objectives)
from .fairshare import fair_allocation, water_fill
from .formats import FormatError
from .metrics import (METRICS, QSVector, SLOError, SLOSpec, evaluate,
                      prediction_error, qs_ajr, qs_dl, qs_fair, qs_thr,
                      qs_util, read_slos, write_slos)
from .rmconfig import (ConfigError, ConfigSpace, PARAM_ORDER, RMConfig,
                       RmSimError, TenantConfig, decode, default_bounds,
                       encode, read_config, validate_config, write_config)
from .simulator import (ScheduleEntry, SimulationError, TaskSchedule,
                        effective_utilization, raw_utilization, read_schedule,
                        simulate, write_schedule)
from .workload import (JobSpec, TaskSpec, TenantModel, Workload,
                       WorkloadModel, fit_model, parse_trace, read_model,
                       scale_workload, synthesize, write_model, write_trace)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConfigSpace", "DescentState", "FormatError",
    "IterationRecord", "JobSpec", "LoopConfig", "LoopResult", "METRICS",
    "NeedMoreSamples", "PARAM_ORDER", "ProvisionRow", "QSVector", "RMConfig",
    "RmSimError", "SLOError", "SLOSpec", "Sample", "ScheduleEntry",
    "SimulationError", "STATUS_ABORTED", "STATUS_CONVERGED",
    "STATUS_MAX_ITERATIONS", "TaskSchedule", "TaskSpec", "TenantConfig",
    "TenantModel", "Workload", "WorkloadModel", "choose_rho", "choose_weights",
    "decode", "default_bounds", "dominance_check", "effective_utilization",
    "encode", "estimate_jacobian", "evaluate", "fair_allocation", "fit_model",
    "mgda_weights", "minimize_noisy", "parse_trace", "prediction_error",
    "propose_candidates", "provision", "proxy_gradient", "proxy_objective",
    "qs_ajr", "qs_dl", "qs_fair", "qs_thr", "qs_util", "raw_utilization",
    "read_config", "read_journal", "read_loop_config", "read_model",
    "read_schedule", "read_slos", "run_loop", "sample_ball", "scale_workload",
    "simulate", "step", "step_point", "synthesize", "validate_config",
    "violated_objectives", "water_fill", "whatif", "write_config",
    "write_journal", "write_loop_config", "write_model", "write_schedule",
    "write_slos", "write_trace",
]
