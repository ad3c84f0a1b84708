"""Noise-tolerant multi-objective local descent with threshold constraints.

The optimizer never sees analytic gradients.  It keeps a history of sampled
(configuration vector, averaged objective vector) pairs, fits a local linear
model around the current point (tricube-weighted ridge regression) to get a
Jacobian estimate, and descends a scalar proxy

    s(f) = sum_i  c_i * (f_i - rho * max(f_i, r_i))

where r_i are the objective thresholds.  With every c_i > 0 and rho < 1 the
proxy is strictly increasing in each objective, so any minimizer of s is
weakly Pareto-optimal; rho < 0 additionally rewards points that push
objectives below their thresholds even at some cost to already-satisfied
ones, which a plain weighted sum cannot express.

Weights c come from a max-min fairness LP over the violated objectives'
gradient products (or from a minimum-norm convex combination when nothing is
violated), and rho from closed-form bounds derived from the subgradient range
of s at threshold crossings.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import lp
from .formats import FormatError, format_number, read_blocks, write_blocks
from .workload import _open_write

log = logging.getLogger(__name__)

EPSILON = 1.0          # LP cap on the fairness level; any positive value works
RHO_MAX = 1.0 - 1e-6   # the proxy stops being strictly monotone at rho = 1
MGDA_TOL = 1e-8


class NeedMoreSamples(Exception):
    """The sample neighborhood cannot support a local linear fit yet."""

    def __init__(self, have: int, needed: int, reason: str = ""):
        detail = reason or f"{have} usable sample(s), need {needed}"
        super().__init__(detail)
        self.have = have
        self.needed = needed


@dataclass(frozen=True)
class Sample:
    """One sampled configuration with its noise-averaged objective values."""

    x: np.ndarray
    values: np.ndarray
    n_measures: int = 1

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.n_measures < 1:
            raise ValueError("n_measures must be >= 1")


@dataclass
class DescentState:
    """Everything the optimizer carries between iterations."""

    current_x: np.ndarray
    thresholds: np.ndarray
    d_max: float = 0.1
    alpha: float = 0.1
    rho: float = 0.0
    weights: np.ndarray | None = None
    history: list[Sample] = field(default_factory=list)
    history_cap: int = 512

    def __post_init__(self):
        self.current_x = np.asarray(self.current_x, dtype=float)
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        if not (0 < self.d_max):
            raise ValueError("d_max must be positive")
        if not (self.alpha > 0):
            raise ValueError("alpha must be positive")
        if np.any(self.current_x < 0) or np.any(self.current_x > 1):
            raise ValueError("current_x must lie in the unit box")

    def remember(self, sample: Sample) -> None:
        self.history.append(sample)
        if len(self.history) > self.history_cap:
            del self.history[:len(self.history) - self.history_cap]


def tricube(u: np.ndarray) -> np.ndarray:
    w = np.zeros_like(u)
    inside = u < 1.0
    w[inside] = (1.0 - u[inside] ** 3) ** 3
    return w


def estimate_jacobian(history: Sequence[Sample], x0: np.ndarray,
                      radius: float | None = None, ridge: float = 1e-6) -> np.ndarray:
    """Local linear Jacobian at x0 from weighted history samples.

    Uses every sample within ``radius`` of x0 (all of them when None),
    tricube-weighted by distance relative to the neighborhood span, and a
    degree-1 fit with a small ridge term for numerical safety.  Raises
    NeedMoreSamples when fewer than m + 1 samples qualify or the
    neighborhood has zero spread.
    """
    x0 = np.asarray(x0, dtype=float)
    m = x0.size
    if not history:
        raise NeedMoreSamples(0, m + 1)
    pts = np.stack([s.x for s in history])
    vals = np.stack([s.values for s in history])
    dist = np.linalg.norm(pts - x0, axis=1)
    if radius is not None:
        keep = dist <= radius + 1e-12
        pts, vals, dist = pts[keep], vals[keep], dist[keep]
    if len(pts) < m + 1:
        raise NeedMoreSamples(len(pts), m + 1)
    span = float(dist.max())
    if span <= 1e-12:
        raise NeedMoreSamples(len(pts), m + 1, "neighborhood has zero spread")
    w = tricube(dist / span)
    design = np.hstack([np.ones((len(pts), 1)), pts - x0])
    wd = design * w[:, None]
    normal = design.T @ wd + ridge * np.eye(m + 1)
    beta = np.linalg.solve(normal, wd.T @ vals)
    return beta[1:].T.copy()


@dataclass(frozen=True)
class WeightChoice:
    weights: np.ndarray       # l2-normalized, componentwise >= 0
    level: float              # attained max-min descent level (LP z)
    common_descent: bool      # False when no direction improves every violated objective


def choose_weights(jacobian: np.ndarray, violated: Sequence[int],
                   epsilon: float = EPSILON) -> WeightChoice:
    """Max-min fair objective weights.

    With violated objectives: maximize z subject to (J_V J^T) c >= z, c on the
    probability simplex, z <= epsilon; the simplex constraint pins the scale
    that the LP otherwise leaves free, and c is l2-normalized afterwards.
    Without violations: minimum-norm convex combination of the gradient rows
    (Frank-Wolfe on the Gramian).
    """
    jac = np.asarray(jacobian, dtype=float)
    k = jac.shape[0]
    violated = sorted(set(violated))
    if violated:
        g = jac[violated] @ jac.T          # |V| x k gradient products
        # Variables: c_1..c_k, z_pos, z_neg (z = z_pos - z_neg, free sign).
        n_var = k + 2
        a_ub = np.zeros((len(violated) + 1, n_var))
        b_ub = np.zeros(len(violated) + 1)
        for row, _ in enumerate(violated):
            a_ub[row, :k] = -g[row]
            a_ub[row, k] = 1.0
            a_ub[row, k + 1] = -1.0
        a_ub[-1, k] = 1.0
        a_ub[-1, k + 1] = -1.0
        b_ub[-1] = epsilon
        a_eq = np.zeros((1, n_var))
        a_eq[0, :k] = 1.0
        objective = np.zeros(n_var)
        objective[k] = 1.0
        objective[k + 1] = -1.0
        x, z = lp.solve_lp(objective, a_ub, b_ub, a_eq, np.ones(1))
        c = np.clip(x[:k], 0.0, None)
        if z <= 1e-12:
            log.warning("no common descent direction for violated objectives %s (level %.3g)",
                        violated, z)
    else:
        c = mgda_weights(jac)
        z = 0.0
    norm = float(np.linalg.norm(c))
    if norm <= 0:
        c = np.ones(k)
        norm = float(np.linalg.norm(c))
    return WeightChoice(c / norm, float(z), not violated or z > 1e-12)


def mgda_weights(jacobian: np.ndarray, tol: float = MGDA_TOL,
                 max_iter: int = 5000) -> np.ndarray:
    """Convex weights minimizing the norm of the combined gradient (Frank-Wolfe)."""
    k = jacobian.shape[0]
    if k == 1:
        return np.ones(1)
    gram = jacobian @ jacobian.T
    c = np.full(k, 1.0 / k)
    for _ in range(max_iter):
        gc = gram @ c
        t = int(np.argmin(gc))
        gap = float(c @ gc - gc[t])
        if gap <= tol:
            break
        d = -c.copy()
        d[t] += 1.0
        denom = float(d @ gram @ d)
        if denom <= 0:
            c = np.zeros(k)
            c[t] = 1.0
            continue
        step = min(1.0, max(0.0, float(-(d @ gc) / denom)))
        if step <= 0:
            break
        c = c + step * d
    return c


def violated_objectives(values: np.ndarray, thresholds: np.ndarray) -> list[int]:
    """Indices whose objective sits at or above its threshold."""
    values = np.asarray(values, dtype=float)
    thresholds = np.asarray(thresholds, dtype=float)
    return [i for i in range(values.size) if values[i] >= thresholds[i]]


def choose_rho(jacobian: np.ndarray, weights: np.ndarray,
               violated: Sequence[int]) -> float:
    """Pick the proxy's threshold penalty from closed-form subgradient bounds.

    For each violated objective the requirement that the descent direction
    not increase it bounds rho from above (when the cross products resist)
    or below (when they help); both boundary candidates are evaluated
    against the worst-case directional-derivative objective and the better
    one wins, preferring the nonnegative branch on ties.
    """
    violated = sorted(set(violated))
    if not violated:
        return 0.0
    jac = np.asarray(jacobian, dtype=float)
    c = np.asarray(weights, dtype=float)
    gram = jac @ jac.T
    active = [i for i in violated if gram[i, i] > 1e-18]
    if not active:
        return 0.0
    num = {}
    pos_den = {}
    neg_den = {}
    for i in active:
        prod = c * gram[i]
        num[i] = float(prod.sum())
        pos_den[i] = float(prod[gram[i] >= 0].sum())
        neg_den[i] = float(prod[gram[i] < 0].sum())
    if any(num[i] < -1e-12 for i in active):
        log.warning("weighted gradient products are negative for some violated "
                    "objective; falling back to rho = 0")
        return 0.0

    candidates = []
    pos_bounds = [num[i] / pos_den[i] for i in active if pos_den[i] > 1e-15]
    if pos_bounds:
        candidates.append(min(min(pos_bounds), RHO_MAX))
    neg_bounds = [num[i] / neg_den[i] for i in active if neg_den[i] < -1e-15]
    if neg_bounds:
        candidates.append(max(neg_bounds))
    if not candidates:
        return 0.0

    def worst_case_level(rho: float) -> float:
        den = pos_den if rho >= 0 else neg_den
        return min(num[i] - rho * den[i] for i in active)

    best = 0.0
    best_level = -math.inf
    for rho in sorted(candidates, reverse=True):  # nonnegative branch first
        level = worst_case_level(rho)
        if level > best_level + 1e-12:
            best_level = level
            best = rho
    return float(min(best, RHO_MAX))


def proxy_objective(values: np.ndarray, thresholds: np.ndarray,
                    weights: np.ndarray, rho: float) -> float:
    """The scalar stand-in s(f) the descent minimizes."""
    f = np.asarray(values, dtype=float)
    r = np.asarray(thresholds, dtype=float)
    c = np.asarray(weights, dtype=float)
    return float(np.sum(c * (f - rho * np.maximum(f, r))))


def proxy_gradient(jacobian: np.ndarray, values: np.ndarray, thresholds: np.ndarray,
                   weights: np.ndarray, rho: float) -> np.ndarray:
    """Gradient of the proxy through the estimated Jacobian.

    Rows at or above threshold contribute c_i (1 - rho) (the subgradient
    choice on the boundary), the rest contribute c_i.
    """
    jac = np.asarray(jacobian, dtype=float)
    f = np.asarray(values, dtype=float)
    r = np.asarray(thresholds, dtype=float)
    c = np.asarray(weights, dtype=float)
    w = np.where(f >= r, c * (1.0 - rho), c)
    return w @ jac


def step_point(x: np.ndarray, gradient: np.ndarray, alpha: float, d_max: float) -> np.ndarray:
    """One projected gradient step, trust-region limited.

    The raw step is clipped to the unit box, then shrunk radially toward x
    until its length is at most d_max (shrinking stays inside the box
    because the box is convex).
    """
    x = np.asarray(x, dtype=float)
    candidate = np.clip(x - alpha * np.asarray(gradient, dtype=float), 0.0, 1.0)
    delta = candidate - x
    norm = float(np.linalg.norm(delta))
    if norm > d_max:
        candidate = x + delta * (d_max / norm)
    return candidate


def step(state: DescentState, gradient: np.ndarray) -> np.ndarray:
    return step_point(state.current_x, gradient, state.alpha, state.d_max)


def sample_ball(x: np.ndarray, d_max: float, count: int,
                rng: np.random.Generator) -> list[np.ndarray]:
    """Candidate points around x: uniform directions, radii stratified over
    (0, d_max], clipped to the unit box (which can only shorten them)."""
    x = np.asarray(x, dtype=float)
    out = []
    for i in range(count):
        direction = rng.normal(size=x.size)
        norm = float(np.linalg.norm(direction))
        if norm < 1e-12:
            direction = np.zeros(x.size)
            direction[0] = 1.0
            norm = 1.0
        radius = d_max * (i + 1) / count
        out.append(np.clip(x + direction * (radius / norm), 0.0, 1.0))
    return out


@dataclass
class DescentResult:
    x: np.ndarray
    state: DescentState
    path: list[np.ndarray]


def minimize_noisy(measure: Callable[[np.ndarray, np.random.Generator], np.ndarray],
                   x0: np.ndarray, thresholds: np.ndarray, *,
                   iterations: int = 60, d_max: float = 0.1, alpha: float = 0.1,
                   n_measures: int = 1, candidates: int = 5,
                   seed: int = 0) -> DescentResult:
    """Reference descent driver for plain numeric objective functions.

    ``measure(x, rng)`` returns one noisy objective vector; each sampled
    point is measured ``n_measures`` times and averaged.  Useful on its own
    and as the oracle-style harness the control loop mirrors.
    """
    state = DescentState(current_x=np.asarray(x0, dtype=float),
                         thresholds=np.asarray(thresholds, dtype=float),
                         d_max=d_max, alpha=alpha)
    path = [state.current_x.copy()]
    for it in range(iterations):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=seed, spawn_key=(it,))))
        f_here = np.mean([measure(state.current_x, rng) for _ in range(n_measures)], axis=0)
        state.remember(Sample(state.current_x.copy(), f_here, n_measures))
        for cand in sample_ball(state.current_x, state.d_max, candidates, rng):
            f_cand = np.mean([measure(cand, rng) for _ in range(n_measures)], axis=0)
            state.remember(Sample(cand, f_cand, n_measures))
        try:
            jac = estimate_jacobian(state.history, state.current_x, radius=2 * state.d_max)
        except NeedMoreSamples:
            continue
        violated = violated_objectives(f_here, state.thresholds)
        choice = choose_weights(jac, violated)
        state.weights = choice.weights
        state.rho = choose_rho(jac, choice.weights, violated)
        grad = proxy_gradient(jac, f_here, state.thresholds, choice.weights, state.rho)
        state.current_x = step(state, grad)
        path.append(state.current_x.copy())
    return DescentResult(state.current_x, state, path)


def save_state(state: DescentState, dest) -> None:
    stream, _, owned = _open_write(dest)
    try:
        fields: dict = {
            "current_x": _vec(state.current_x),
            "thresholds": _vec(state.thresholds),
            "d_max": state.d_max,
            "alpha": state.alpha,
            "rho": state.rho,
            "history_cap": state.history_cap,
        }
        if state.weights is not None:
            fields["weights"] = _vec(state.weights)
        blocks = [("state", fields)]
        for s in state.history:
            blocks.append(("sample", {
                "x": _vec(s.x), "values": _vec(s.values), "n_measures": s.n_measures,
            }))
        write_blocks(stream, "optstate", blocks)
    finally:
        if owned:
            stream.close()


def load_state(source) -> DescentState:
    _, blocks = read_blocks(source, "optstate")
    state: DescentState | None = None
    samples: list[Sample] = []
    for section, fields, line_no in blocks:
        try:
            if section == "state":
                state = DescentState(
                    current_x=_unvec(fields["current_x"]),
                    thresholds=_unvec(fields["thresholds"]),
                    d_max=float(fields["d_max"]),
                    alpha=float(fields["alpha"]),
                    rho=float(fields["rho"]),
                    weights=_unvec(fields["weights"]) if "weights" in fields else None,
                    history_cap=int(fields.get("history_cap", 512)),
                )
            elif section == "sample":
                samples.append(Sample(_unvec(fields["x"]), _unvec(fields["values"]),
                                      int(fields.get("n_measures", 1))))
            else:
                raise FormatError(f"unexpected section [{section}] in optimizer state",
                                  line_no=line_no)
        except (KeyError, ValueError) as exc:
            raise FormatError(f"[{section}]: {exc}", line_no=line_no) from None
    if state is None:
        raise FormatError("optimizer state file has no [state] block")
    state.history = samples
    return state


def _vec(v: np.ndarray) -> str:
    return " ".join(format_number(float(t)) for t in np.asarray(v, dtype=float))


def _unvec(text: str) -> np.ndarray:
    return np.array([float(t) for t in text.split()], dtype=float)
