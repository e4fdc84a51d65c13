"""Distance between correctly and incorrectly initialised filters.

Policies are either an action index (played at every step) or a callable
``policy(observations, actions) -> action`` receiving the history so far.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from . import _backend
from .belief import ZERO_LIKELIHOOD, as_belief
from .diagnostics import alpha as contraction_alpha
from .errors import AbsoluteContinuityViolated, CapacityExceeded, ModelError, ZeroLikelihood
from .model import PomdpModel

DEFAULT_CAPACITY = 10 ** 7
Policy = Union[int, Callable[[Sequence[int], Sequence[int]], int]]


@dataclass(frozen=True)
class StabilityEstimate:
    N: int
    mean_tv: float
    mean_bl: float
    std_error_tv: float
    std_error_bl: float
    mode: str
    samples: int
    total_mass: float = 1.0


def as_policy(policy: Policy) -> Callable[[Sequence[int], Sequence[int]], int]:
    if callable(policy):
        return policy
    action = int(policy)
    return lambda observations, actions: action


def check_absolute_continuity(prior, anchor) -> None:
    """Raise if ``prior`` charges a state the anchor gives zero mass."""
    bad = np.nonzero((np.asarray(anchor) == 0.0) & (np.asarray(prior) > 0.0))[0]
    if bad.size:
        raise AbsoluteContinuityViolated(int(bad[0]))


def _correct_rows(B: np.ndarray, Qy: np.ndarray):
    un = B * Qy
    lik = un.sum(axis=1)
    ok = lik >= ZERO_LIKELIHOOD
    out = np.divide(un, lik[:, None], out=np.zeros_like(un), where=ok[:, None])
    return out, lik, ok


def _distances(P: np.ndarray, A: np.ndarray, metric):
    tv = np.abs(P - A).sum(axis=1)
    bl = np.array([_backend.bl_distance(P[i], A[i], metric) for i in range(P.shape[0])])
    # tv bounds bl; the LP can overshoot it only by round-off
    return tv, np.minimum(bl, tv)


def _anchor_failure(step):
    return ZeroLikelihood("history possible under the prior is impossible under the anchor", step)


def exact_filter_stability(model: PomdpModel, prior, anchor, policy: Policy, N: int,
                           capacity: int = DEFAULT_CAPACITY, metric=None) -> StabilityEstimate:
    """Expected distance between the two filters at time N, by enumeration.

    Every observation sequence y_0..y_N with positive probability under the
    prior is visited; actions come from ``policy`` along each sequence and
    both filters see the same inputs.
    """
    if N < 0:
        raise ModelError("N must be nonnegative")
    need = model.n_obs ** (N + 1)
    if need > capacity:
        raise CapacityExceeded(need, capacity)
    prior = as_belief(prior, model.n_states)
    anchor = as_belief(anchor, model.n_states)
    metric = model.state_metric if metric is None else np.asarray(metric, dtype=np.float64)
    pol = as_policy(policy)
    Q, T = model.channel, model.transition
    ny = model.n_obs

    P, lik, ok = _correct_rows(np.repeat(prior[None], ny, 0), Q.T)
    A, _, ok_a = _correct_rows(np.repeat(anchor[None], ny, 0), Q.T)
    if np.any(ok & ~ok_a):
        raise _anchor_failure(0)
    P, A, prob = P[ok], A[ok], lik[ok]
    obs = [(y,) for y in np.nonzero(ok)[0].tolist()]
    acts: List[tuple] = [() for _ in obs]

    for k in range(1, N + 1):
        u = np.array([pol(o, a) for o, a in zip(obs, acts)], dtype=np.intp)
        Pp = np.einsum("mx,mxz->mz", P, T[u])
        Ap = np.einsum("mx,mxz->mz", A, T[u])
        newP, newA, newprob, newobs, newacts = [], [], [], [], []
        for y in range(ny):
            Py, ly, oy = _correct_rows(Pp, Q[:, y][None, :])
            Ay, _, oay = _correct_rows(Ap, Q[:, y][None, :])
            if np.any(oy & ~oay):
                raise _anchor_failure(k)
            idx = np.nonzero(oy)[0]
            newP.append(Py[idx])
            newA.append(Ay[idx])
            newprob.append(prob[idx] * ly[idx])
            newobs.extend(obs[i] + (y,) for i in idx)
            newacts.extend(acts[i] + (int(u[i]),) for i in idx)
        # keep the lexicographic observation order
        order = sorted(range(len(newobs)), key=newobs.__getitem__)
        P = np.concatenate(newP)[order]
        A = np.concatenate(newA)[order]
        prob = np.concatenate(newprob)[order]
        obs = [newobs[i] for i in order]
        acts = [newacts[i] for i in order]

    tv, bl = _distances(P, A, metric)
    return StabilityEstimate(
        N=N,
        mean_tv=math.fsum(prob * tv),
        mean_bl=math.fsum(prob * bl),
        std_error_tv=0.0,
        std_error_bl=0.0,
        mode="exact",
        samples=len(obs),
        total_mass=math.fsum(prob),
    )


def sample_generator(seed: int, index: int) -> np.random.Generator:
    """Independent stream for sample ``index``; depends only on (seed, index)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def _draw(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = (cdf_rows < u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def simulate_paths(model: PomdpModel, initial, policy: Policy, steps: int, samples: int, seed: int,
                   uniforms: Optional[np.ndarray] = None):
    """Simulate ``samples`` trajectories of the hidden chain for ``steps`` actions.

    Returns (states, observations, actions) with shapes (S, steps+1),
    (S, steps+1) and (S, steps).  Sample ``i`` uses only its own stream.
    """
    pol = as_policy(policy)
    if uniforms is None:
        uniforms = np.stack([sample_generator(seed, i).random(2 * steps + 2) for i in range(samples)])
    init_cdf = np.cumsum(initial)
    Tcdf = np.cumsum(model.transition, axis=2)
    Qcdf = np.cumsum(model.channel, axis=1)
    x = np.zeros((samples, steps + 1), dtype=np.intp)
    y = np.zeros((samples, steps + 1), dtype=np.intp)
    a = np.zeros((samples, steps), dtype=np.intp)
    x[:, 0] = _draw(np.broadcast_to(init_cdf, (samples, init_cdf.size)), uniforms[:, 0])
    y[:, 0] = _draw(Qcdf[x[:, 0]], uniforms[:, 1])
    for k in range(steps):
        a[:, k] = [pol(tuple(y[s, :k + 1]), tuple(a[s, :k])) for s in range(samples)]
        x[:, k + 1] = _draw(Tcdf[a[:, k], x[:, k]], uniforms[:, 2 + 2 * k])
        y[:, k + 1] = _draw(Qcdf[x[:, k + 1]], uniforms[:, 3 + 2 * k])
    return x, y, a


def run_filters(model: PomdpModel, initial, observations: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Batched filter: final beliefs for each row of (observations, actions)."""
    S = observations.shape[0]
    B, _, ok = _correct_rows(np.repeat(np.asarray(initial, dtype=np.float64)[None], S, 0),
                             model.channel[:, observations[:, 0]].T)
    if not ok.all():
        raise ZeroLikelihood("observation impossible under this prior", 0)
    for k in range(actions.shape[1]):
        pred = np.einsum("sx,sxz->sz", B, model.transition[actions[:, k]])
        B, _, ok = _correct_rows(pred, model.channel[:, observations[:, k + 1]].T)
        if not ok.all():
            raise ZeroLikelihood("observation impossible under this prior", k + 1)
    return B


def mc_filter_stability(model: PomdpModel, prior, anchor, policy: Policy, N: int, samples: int,
                        seed: int, metric=None) -> StabilityEstimate:
    """Monte Carlo version of :func:`exact_filter_stability`."""
    if samples < 1:
        raise ModelError("samples must be at least 1")
    prior = as_belief(prior, model.n_states)
    anchor = as_belief(anchor, model.n_states)
    metric = model.state_metric if metric is None else np.asarray(metric, dtype=np.float64)
    _, y, a = simulate_paths(model, prior, policy, N, samples, seed)
    P = run_filters(model, prior, y, a)
    A = run_filters(model, anchor, y, a)
    tv, bl = _distances(P, A, metric)

    def se(v):
        return float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0

    return StabilityEstimate(N, float(tv.mean()), float(bl.mean()), se(tv), se(bl), "monte_carlo", samples)


@dataclass(frozen=True)
class DecayPoint:
    N: int
    mean_tv: float
    se_tv: float
    mean_bl: float
    se_bl: float
    envelope: float


def stability_decay_curve(model: PomdpModel, prior, anchor, policy: Policy, N_max: int,
                          mode: str = "exact", samples: int = 10_000, seed: int = 0,
                          capacity: int = DEFAULT_CAPACITY) -> List[DecayPoint]:
    """Per-N filter mismatch alongside the envelope 2 alpha^N."""
    check_absolute_continuity(prior, anchor)
    a = contraction_alpha(model)
    out = []
    for n in range(N_max + 1):
        if mode == "exact":
            est = exact_filter_stability(model, prior, anchor, policy, n, capacity)
        elif mode in ("mc", "monte_carlo"):
            est = mc_filter_stability(model, prior, anchor, policy, n, samples, seed)
        else:
            raise ModelError(f"unknown mode {mode!r}")
        out.append(DecayPoint(n, est.mean_tv, est.std_error_tv, est.mean_bl, est.std_error_bl, 2.0 * a ** n))
    return out


def _pair_tree(model: PomdpModel, prior, anchor, N: int, capacity: int):
    """Both filters along every (observation, action) window, in enumeration order.

    Rows at depth k are ordered ((parent * U + u) * Y + y).  Returns the
    per-depth observation likelihoods under the prior filter (zero on
    impossible branches) and the final pair of belief arrays.
    """
    need = model.n_obs ** (N + 1) * model.n_actions ** N
    if need > capacity:
        raise CapacityExceeded(need, capacity)
    Q, T = model.channel, model.transition
    nx = model.n_states
    P, lik, ok = _correct_rows(np.repeat(prior[None], model.n_obs, 0), Q.T)
    A, _, ok_a = _correct_rows(np.repeat(anchor[None], model.n_obs, 0), Q.T)
    if np.any(ok & ~ok_a):
        raise _anchor_failure(0)
    liks = [np.where(ok, lik, 0.0)]
    alive = ok
    for k in range(1, N + 1):
        Pp = np.einsum("mx,uxz->muz", P, T)[:, :, None, :] * Q.T[None, None]
        Ap = np.einsum("mx,uxz->muz", A, T)[:, :, None, :] * Q.T[None, None]
        lp = Pp.sum(-1)
        la = Ap.sum(-1)
        okp = (lp >= ZERO_LIKELIHOOD) & alive[:, None, None]
        if np.any(okp & (la < ZERO_LIKELIHOOD)):
            raise _anchor_failure(k)
        P = np.divide(Pp, lp[..., None], out=np.zeros_like(Pp), where=okp[..., None]).reshape(-1, nx)
        A = np.divide(Ap, la[..., None], out=np.zeros_like(Ap), where=okp[..., None]).reshape(-1, nx)
        liks.append(np.where(okp, lp, 0.0).reshape(-1))
        alive = okp.reshape(-1)
    return liks, P, A, alive


def approx_uniform_L_TV(model: PomdpModel, anchor, N: int, prior_set: Sequence,
                        capacity: int = DEFAULT_CAPACITY) -> float:
    """Worst TV mismatch at time N over the given priors, all action
    sequences and all observation sequences possible under the prior.

    The prior set is finite, so this under-approximates the supremum over
    all priors.
    """
    if len(prior_set) == 0:
        raise ModelError("prior_set must be non-empty")
    anchor = as_belief(anchor, model.n_states)
    worst = 0.0
    for p in prior_set:
        p = as_belief(p, model.n_states)
        check_absolute_continuity(p, anchor)
        _, P, A, alive = _pair_tree(model, p, anchor, N, capacity)
        if alive.any():
            worst = max(worst, float(np.abs(P[alive] - A[alive]).sum(axis=1).max()))
    return min(worst, 2.0)


def worst_case_filter_stability(model: PomdpModel, prior, anchor, N: int, distance: str = "bl",
                                capacity: int = DEFAULT_CAPACITY, metric=None) -> float:
    """Expected filter mismatch at time N maximised over history-dependent policies.

    Backward induction on the window tree: at each node the action
    maximising the expected terminal distance is chosen.
    """
    prior = as_belief(prior, model.n_states)
    anchor = as_belief(anchor, model.n_states)
    check_absolute_continuity(prior, anchor)
    metric = model.state_metric if metric is None else np.asarray(metric, dtype=np.float64)
    liks, P, A, alive = _pair_tree(model, prior, anchor, N, capacity)
    if distance == "tv":
        val = np.abs(P - A).sum(axis=1)
    elif distance == "bl":
        tv, bl = _distances(P[alive], A[alive], metric)
        val = np.zeros(P.shape[0])
        val[alive] = bl
    else:
        raise ModelError("distance must be 'bl' or 'tv'")
    nu, ny = model.n_actions, model.n_obs
    for k in range(N, 0, -1):
        w = (liks[k] * val).reshape(-1, nu, ny).sum(axis=2)
        val = w.max(axis=1)
    return float(np.dot(liks[0], val))


def stability_prior_set(model: PomdpModel, extra: Sequence = ()) -> List[np.ndarray]:
    """Point masses on every state the anchor charges, plus any extra priors."""
    anchor = model.reference_prior
    out = [np.eye(model.n_states)[x] for x in range(model.n_states) if anchor[x] > 0]
    out.extend(np.asarray(p, dtype=np.float64) for p in extra)
    return out
