"""Machine-repair study: warm-up, per-window policy synthesis, evaluation and error curves."""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .belief import HistoryWindow, as_belief, filter_from_history, window_from_index, window_index
from .diagnostics import alpha as contraction_alpha
from .errors import CapacityExceeded, DegenerateNormalization, ModelError, ZeroLikelihood
from .finite_mdp import WindowPolicy, solve_window, window_state
from .model import PomdpModel, machine_repair_case
from .stability import (
    Policy,
    as_policy,
    sample_generator,
    stability_prior_set,
    worst_case_filter_stability,
)

DEFAULT_TAIL = 1e-4
DEFAULT_CAPACITY = 10 ** 7
WARMUP_STEPS = 5


def tail_bound(model: PomdpModel, horizon: int) -> float:
    """Largest possible discounted cost after ``horizon`` steps."""
    beta = model.discount
    return beta ** horizon * model.cost_sup / (1.0 - beta)


def default_horizon(model: PomdpModel, tail: float = DEFAULT_TAIL) -> int:
    """Smallest horizon whose tail bound is at most ``tail``."""
    if model.cost_sup == 0.0:
        return 1
    beta = model.discount
    h = math.ceil(math.log(tail * (1.0 - beta) / model.cost_sup) / math.log(beta))
    h = max(h, 1)
    while tail_bound(model, h) > tail:
        h += 1
    return h


def thread_count() -> int:
    """Worker threads from FW_POMDP_THREADS (0 or unset: automatic)."""
    try:
        n = int(os.environ.get("FW_POMDP_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


# --- exact evaluation of a window policy ------------------------------------

@dataclass
class WindowChain:
    """Reachable windows of a window policy with their actions and shifts."""

    windows: np.ndarray  # enumeration index of each reachable window
    actions: np.ndarray
    successor: np.ndarray  # (R, Y) position of the shifted window
    position: Dict[int, int]


def reachable_windows(model: PomdpModel, policy: WindowPolicy, start: Sequence[HistoryWindow],
                      capacity: int = DEFAULT_CAPACITY) -> WindowChain:
    """Windows reachable from ``start`` when the policy drives the shifts."""
    ny, nu = model.n_obs, model.n_actions
    n = policy.window_size
    position: Dict[int, int] = {}
    order: List[int] = []
    stack = []
    for w in start:
        key = window_index(w, ny, nu)
        if key not in position:
            position[key] = len(order)
            order.append(key)
            stack.append(key)
    actions: Dict[int, int] = {}
    succ: Dict[int, List[int]] = {}
    while stack:
        key = stack.pop()
        w = window_from_index(key, n, ny, nu)
        a = policy.action_for_window(w)
        actions[key] = a
        nxt = []
        for y in range(ny):
            k2 = window_index(w.shifted(a, y), ny, nu)
            if k2 not in position:
                if len(order) * model.n_states >= capacity:
                    raise CapacityExceeded(len(order) * model.n_states, capacity, "state-window pairs")
                position[k2] = len(order)
                order.append(k2)
                stack.append(k2)
            nxt.append(k2)
        succ[key] = nxt
    windows = np.array(order, dtype=np.int64)
    return WindowChain(
        windows=windows,
        actions=np.array([actions[k] for k in order], dtype=np.intp),
        successor=np.array([[position[k2] for k2 in succ[k]] for k in order], dtype=np.intp),
        position=position,
    )


def window_chain_values(model: PomdpModel, chain: WindowChain, horizon: int) -> np.ndarray:
    """Truncated discounted cost V[x, r] of starting in state x with window r."""
    a = chain.actions
    Ta = model.transition[a]  # (R, X, X)
    ca = model.cost[:, a]  # (X, R)
    Q = model.channel
    V = np.zeros((model.n_states, len(a)))
    for _ in range(horizon):
        G = np.einsum("xry,xy->xr", V[:, chain.successor], Q)
        V = ca + model.discount * np.einsum("rxz,zr->xr", Ta, G)
    return V


def _fixed_action_values(model: PomdpModel, action: int, horizon: int) -> np.ndarray:
    V = np.zeros(model.n_states)
    for _ in range(horizon):
        V = model.cost[:, action] + model.discount * model.transition[action] @ V
    return V


def _window_of(history, n: int) -> HistoryWindow:
    obs, acts = history
    if len(acts) < n or len(obs) != len(acts) + 1:
        raise ModelError("history too short for the policy window")
    return HistoryWindow(tuple(obs[len(obs) - n - 1:]), tuple(acts[len(acts) - n:]) if n else ())


def evaluate_policy_cost(model: PomdpModel, policy: Policy, initial_belief, horizon: Optional[int] = None,
                         mode: str = "exact", samples: int = 10_000, seed: int = 0,
                         history: Optional[Tuple[Sequence[int], Sequence[int]]] = None,
                         capacity: int = DEFAULT_CAPACITY, stream: Tuple[int, ...] = ()):
    """Discounted cost of ``policy`` from ``initial_belief`` truncated at ``horizon``.

    ``history`` holds the observations (including the current one) and
    actions seen so far; window policies read their first window from it.
    Exact mode returns (cost, tail bound) and needs a fixed action or a
    :class:`WindowPolicy`; Monte Carlo mode returns (mean, standard error).
    """
    horizon = default_horizon(model) if horizon is None else int(horizon)
    if horizon < 1:
        raise ModelError("horizon must be at least 1")
    z = as_belief(initial_belief, model.n_states)
    if mode == "exact":
        if isinstance(policy, WindowPolicy):
            if history is None:
                raise ModelError("exact evaluation of a window policy needs the history so far")
            start = _window_of(history, policy.window_size)
            chain = reachable_windows(model, policy, [start], capacity)
            V = window_chain_values(model, chain, horizon)
            cost = float(z @ V[:, chain.position[window_index(start, model.n_obs, model.n_actions)]])
        elif callable(policy):
            raise ModelError("exact evaluation supports fixed actions and window policies")
        else:
            cost = float(z @ _fixed_action_values(model, int(policy), horizon))
        return cost, tail_bound(model, horizon)
    if mode in ("mc", "monte_carlo"):
        costs = rollout_costs(model, policy, z, horizon, samples, seed, history, stream)
        se = float(costs.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
        return float(costs.mean()), se
    raise ModelError(f"unknown evaluation mode {mode!r}")


def rollout_costs(model: PomdpModel, policy: Policy, initial_belief, horizon: int, samples: int,
                  seed: int, history=None, stream: Tuple[int, ...] = ()) -> np.ndarray:
    """Discounted cost of each of ``samples`` independent rollouts."""
    if samples < 1:
        raise ModelError("samples must be at least 1")
    obs0, acts0 = ((), ()) if history is None else (tuple(history[0]), tuple(history[1]))
    U = np.stack([_stream(seed, stream, i).random(2 * horizon + 1) for i in range(samples)])
    x = _inverse_cdf(np.broadcast_to(np.cumsum(initial_belief), (samples, model.n_states)), U[:, 0])
    Tcdf = np.cumsum(model.transition, axis=2)
    Qcdf = np.cumsum(model.channel, axis=1)
    total = np.zeros(samples)
    disc = 1.0

    fast = isinstance(policy, WindowPolicy) and len(acts0) >= policy.window_size and obs0
    if fast:
        start = _window_of((obs0, acts0), policy.window_size)
        chain = reachable_windows(model, policy, [start])
        r = np.full(samples, chain.position[window_index(start, model.n_obs, model.n_actions)])
    else:
        pol = as_policy(policy)
        obs = [list(obs0) for _ in range(samples)]
        acts = [list(acts0) for _ in range(samples)]
    for t in range(horizon):
        if fast:
            a = chain.actions[r]
        else:
            a = np.array([pol(tuple(obs[s]), tuple(acts[s])) for s in range(samples)], dtype=np.intp)
        total += disc * model.cost[x, a]
        disc *= model.discount
        x = _inverse_cdf(Tcdf[a, x], U[:, 1 + 2 * t])
        y = _inverse_cdf(Qcdf[x], U[:, 2 + 2 * t])
        if fast:
            r = chain.successor[r, y]
        else:
            for s in range(samples):
                obs[s].append(int(y[s]))
                acts[s].append(int(a[s]))
    return total


def _stream(seed: int, stream: Tuple[int, ...], i: int) -> np.random.Generator:
    if not stream:
        return sample_generator(seed, i)
    key = tuple(int(k) for k in stream) + (int(i),)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def _inverse_cdf(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.minimum((cdf_rows < u[:, None]).sum(axis=1), cdf_rows.shape[1] - 1)


# --- the study ----------------------------------------------------------------

@dataclass
class WarmupPath:
    observations: Tuple[int, ...]
    actions: Tuple[int, ...]
    probability: float
    belief: np.ndarray


def warmup_paths(model: PomdpModel, prior, steps: int = WARMUP_STEPS, action: int = 0) -> List[WarmupPath]:
    """Every observation sequence of the warm-up phase with its probability and final belief."""
    prior = as_belief(prior, model.n_states)
    acts = (int(action),) * steps
    out = []
    for obs in product(range(model.n_obs), repeat=steps + 1):
        try:
            b, p = filter_from_history(prior, HistoryWindow(obs, acts), model)
        except ZeroLikelihood:
            continue
        out.append(WarmupPath(obs, acts, p, b))
    return out


@dataclass
class ExperimentRecord:
    N: int
    approx_value: float
    realized_cost: float
    value_error: float
    robustness_error: float
    filter_stability_term: float
    alpha_pow_N: float
    realized_se: float = 0.0
    n_states: int = 0


@dataclass
class ExperimentResult:
    case_id: Optional[int]
    records: List[ExperimentRecord]
    mode: str
    horizon: int
    truncation_bound: float
    alpha: float
    warmup_steps: int
    warmup_mass: float
    baseline_N: int
    notes: List[str] = field(default_factory=list)

    def record(self, N: int) -> ExperimentRecord:
        for r in self.records:
            if r.N == N:
                return r
        raise KeyError(N)


@dataclass
class _Leg:
    N: int
    approx: np.ndarray
    realized: np.ndarray
    realized_se: np.ndarray
    stability: float
    n_states: int


def _run_leg(model, N, paths, mode, horizon, samples, seed, prior_set, tolerance, capacity):
    mdp, solved = solve_window(model, N, tolerance=tolerance, capacity=capacity)
    policy = WindowPolicy(solved, mdp)
    qset = mdp.states
    approx = np.empty(len(paths))
    realized = np.empty(len(paths))
    se = np.zeros(len(paths))
    starts = [_window_of((p.observations, p.actions), N) for p in paths]
    for i, w in enumerate(starts):
        approx[i] = solved.values[window_state(mdp, w)]
    if mode == "exact":
        chain = reachable_windows(model, policy, starts, capacity)
        V = window_chain_values(model, chain, horizon)
        for i, (p, w) in enumerate(zip(paths, starts)):
            realized[i] = float(p.belief @ V[:, chain.position[window_index(w, model.n_obs, model.n_actions)]])
    else:
        for i, p in enumerate(paths):
            realized[i], se[i] = evaluate_policy_cost(
                model, policy, p.belief, horizon, "mc", samples, seed,
                history=(p.observations, p.actions), stream=(N, i))
    stab = max(worst_case_filter_stability(model, pr, model.reference_prior, N, "bl", capacity)
               for pr in prior_set)
    return _Leg(N, approx, realized, se, stab, len(qset))


def run_study(model: PomdpModel, N_range: Sequence[int] = range(6), mode: str = "exact",
              horizon: Optional[int] = None, samples: int = 10_000, seed: int = 0,
              warmup_steps: int = WARMUP_STEPS, warmup_action: int = 0, prior=None,
              tolerance: float = 1e-8, capacity: int = DEFAULT_CAPACITY,
              case_id: Optional[int] = None, threads: Optional[int] = None) -> ExperimentResult:
    """Synthesize and evaluate finite-window policies for every N in ``N_range``.

    The system first runs ``warmup_steps`` steps under ``warmup_action``
    from ``prior`` (default: the model's reference prior); all warm-up
    observation sequences are enumerated exactly.  The largest N serves as
    the baseline standing in for the optimal value.
    """
    Ns = sorted(set(int(n) for n in N_range))
    if not Ns:
        raise ModelError("N_range is empty")
    if Ns[-1] > warmup_steps:
        raise ModelError("window sizes cannot exceed the warm-up length")
    if mode not in ("exact", "mc", "monte_carlo"):
        raise ModelError(f"unknown evaluation mode {mode!r}")
    mode = "monte_carlo" if mode == "mc" else mode
    horizon = default_horizon(model) if horizon is None else int(horizon)
    prior = model.reference_prior if prior is None else as_belief(prior, model.n_states)
    paths = warmup_paths(model, prior, warmup_steps, warmup_action)
    probs = np.array([p.probability for p in paths])
    prior_set = stability_prior_set(model, [prior])

    def leg(n):
        return _run_leg(model, n, paths, mode, horizon, samples, seed, prior_set, tolerance, capacity)

    workers = min(len(Ns), thread_count() if threads is None else max(1, threads))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            legs = list(pool.map(leg, Ns))
    else:
        legs = [leg(n) for n in Ns]

    a = contraction_alpha(model)
    base = legs[-1]
    records = []
    for lg in legs:
        records.append(ExperimentRecord(
            N=lg.N,
            approx_value=math.fsum(probs * lg.approx),
            realized_cost=math.fsum(probs * lg.realized),
            value_error=math.fsum(probs * np.abs(lg.approx - base.approx)),
            robustness_error=math.fsum(probs * np.abs(lg.realized - base.realized)),
            filter_stability_term=lg.stability,
            alpha_pow_N=a ** lg.N,
            realized_se=math.sqrt(math.fsum(probs ** 2 * lg.realized_se ** 2)),
            n_states=lg.n_states,
        ))
    notes = [f"optimal value proxied by the N={base.N} results"]
    if mode == "exact":
        notes.append("realized costs from the exact joint state-window chain")
    return ExperimentResult(
        case_id=case_id,
        records=records,
        mode=mode,
        horizon=horizon,
        truncation_bound=tail_bound(model, horizon),
        alpha=a,
        warmup_steps=warmup_steps,
        warmup_mass=math.fsum(probs),
        baseline_N=base.N,
        notes=notes,
    )


def run_machine_repair(case_id: int, N_range: Sequence[int] = range(6), mode: str = "exact",
                       horizon: Optional[int] = None, samples: int = 10_000, seed: int = 0,
                       **kwargs) -> ExperimentResult:
    """Study for one of the three machine-repair parameter sets."""
    model = machine_repair_case(case_id)
    return run_study(model, N_range, mode, horizon, samples, seed, case_id=case_id, **kwargs)


# --- curves and CSV -------------------------------------------------------------

CURVE_NAMES = ("value_error", "robustness_error", "filter_stability_term", "alpha_pow_N")


def error_curves(result: ExperimentResult, keep_zero_curves: bool = False) -> List[Dict[str, float]]:
    """Errors, stability term and alpha^N rescaled to share their N=0 value.

    Each curve is multiplied by stability_term(0) / curve(0).  A curve that
    vanishes at N=0 raises DegenerateNormalization, unless it vanishes for
    every N and ``keep_zero_curves`` is set, in which case it stays zero.
    """
    Ns = [r.N for r in result.records]
    if 0 not in Ns:
        raise ModelError("error curves need the N=0 record")
    r0 = result.record(0)
    anchor = r0.filter_stability_term
    scale = {}
    for name in CURVE_NAMES:
        v0 = getattr(r0, name)
        if v0 == 0.0:
            flat = all(getattr(r, name) == 0.0 for r in result.records)
            if not (keep_zero_curves and flat):
                raise DegenerateNormalization(f"{name} vanishes at N=0")
            scale[name] = 0.0
        else:
            scale[name] = anchor / v0
    rows = []
    for r in result.records:
        row = {"N": r.N}
        for name in CURVE_NAMES:
            row[name] = getattr(r, name) * scale[name]
        rows.append(row)
    return rows


def relative_error_decay(result: ExperimentResult, N: int, name: str = "value_error") -> float:
    """Error at ``N`` as a fraction of the error at N=0."""
    e0 = getattr(result.record(0), name)
    if e0 == 0.0:
        raise DegenerateNormalization(f"{name} vanishes at N=0")
    return getattr(result.record(N), name) / e0


RECORD_FIELDS = ("N", "approx_value", "realized_cost", "value_error", "robustness_error",
                 "stability_term", "alpha_pow_N")


def result_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS + ("realized_se", "n_states"))
    for r in result.records:
        w.writerow([r.N, repr(r.approx_value), repr(r.realized_cost), repr(r.value_error),
                    repr(r.robustness_error), repr(r.filter_stability_term), repr(r.alpha_pow_N),
                    repr(r.realized_se), r.n_states])
    return buf.getvalue()


def curves_csv(result: ExperimentResult, keep_zero_curves: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("N",) + CURVE_NAMES)
    for row in error_curves(result, keep_zero_curves):
        w.writerow([row["N"]] + [repr(row[k]) for k in CURVE_NAMES])
    return buf.getvalue()


def result_to_dict(result: ExperimentResult) -> dict:
    return asdict(result)
