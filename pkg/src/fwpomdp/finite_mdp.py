"""Finite approximate belief-MDP on a quantized belief set, solved by value iteration."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .belief import ZERO_LIKELIHOOD, HistoryWindow, filter_from_history, window_index
from .errors import EmptySet, ModelError, NotConverged, ZeroLikelihood
from .model import PomdpModel
from .quantizer import (
    DEFAULT_CAPACITY,
    QuantizedBeliefSet,
    build_quantized_set,
    nearest_neighbor,
    nearest_neighbors,
)

# relative slack when comparing Q-values; scale free so cost scaling keeps ties
ARGMIN_RTOL = 1e-10


@dataclass(eq=False)
class FiniteBeliefMdp:
    """Quantized transition structure.

    ``probs[i, u, y]`` is the probability of observing ``y`` after taking
    ``u`` in state ``i`` and ``succ[i, u, y]`` the quantized successor, with
    -1 marking zero-likelihood branches (whose probability is 0).
    """

    states: QuantizedBeliefSet
    model: PomdpModel
    costs: np.ndarray
    probs: np.ndarray
    succ: np.ndarray

    @property
    def discount(self) -> float:
        return self.model.discount

    @property
    def n_states(self) -> int:
        return self.costs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.costs.shape[1]

    def branches(self, i: int, u: int):
        """(probability, successor) pairs for the non-omitted observations."""
        return [(float(self.probs[i, u, y]), int(self.succ[i, u, y]))
                for y in range(self.probs.shape[2]) if self.succ[i, u, y] >= 0]

    def bellman(self, values: np.ndarray) -> np.ndarray:
        """Q-values c(i,u) + beta * E[v(successor)]."""
        nxt = np.where(self.succ >= 0, values[np.maximum(self.succ, 0)], 0.0)
        return self.costs + self.discount * np.einsum("iuy,iuy->iu", self.probs, nxt)


def build_finite_mdp(qset: QuantizedBeliefSet, model: PomdpModel, metric=None) -> FiniteBeliefMdp:
    """Push every (state, action, observation) successor through the quantizer."""
    if len(qset) == 0:
        raise EmptySet("quantized belief set is empty")
    metric = model.state_metric if metric is None else np.asarray(metric, dtype=np.float64)
    B = qset.beliefs
    k, nu, ny = B.shape[0], model.n_actions, model.n_obs
    costs = B @ model.cost
    probs = np.zeros((k, nu, ny))
    succ = np.full((k, nu, ny), -1, dtype=np.int64)
    for u in range(nu):
        pred = B @ model.transition[u]
        un = pred[:, None, :] * model.channel.T[None, :, :]  # (K, Y, X)
        lik = un.sum(axis=-1)
        ok = lik >= ZERO_LIKELIHOOD
        post = un[ok] / lik[ok][:, None]
        idx, _ = nearest_neighbors(post, qset, metric)
        probs[:, u, :] = np.where(ok, lik, 0.0)
        s = succ[:, u, :]
        s[ok] = idx
    return FiniteBeliefMdp(qset, model, costs, probs, succ)


@dataclass
class SolvedPolicy:
    values: np.ndarray
    policy: np.ndarray
    iteration_count: int
    residual: float
    tolerance: float
    residual_history: List[float] = field(default_factory=list)


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Argmin per row, ties (within a relative 1e-10) to the lowest action."""
    qmin = q.min(axis=1, keepdims=True)
    near = q <= qmin + ARGMIN_RTOL * np.abs(qmin)
    return np.argmax(near, axis=1)


def value_iteration(mdp: FiniteBeliefMdp, tolerance: float = 1e-8, max_iter: int = 10_000) -> SolvedPolicy:
    """Bellman iteration from zero until the sup-norm change certifies ``tolerance``.

    Stops once ``||v_k - v_{k-1}|| <= tolerance (1 - beta) / beta``, which
    bounds the distance to the fixed point by ``tolerance``.
    """
    if not tolerance > 0:
        raise ModelError("tolerance must be positive")
    beta = mdp.discount
    stop = tolerance * (1.0 - beta) / beta
    v = np.zeros(mdp.n_states)
    history: List[float] = []
    for k in range(1, max_iter + 1):
        v_new = mdp.bellman(v).min(axis=1)
        res = float(np.max(np.abs(v_new - v)))
        history.append(res)
        v = v_new
        if res <= stop:
            policy = greedy_policy(mdp.bellman(v))
            return SolvedPolicy(v, policy, k, res, tolerance, history)
    raise NotConverged(max_iter, history[-1] if history else float("inf"))


def window_state(mdp: FiniteBeliefMdp, window: HistoryWindow) -> int:
    """Index of the finite state used for ``window``, or -1 if no prior explains it.

    Stored windows map to their own entry.  Dropped windows go to the
    BL-nearest entry of their filtered belief, filtered from the anchor or,
    when the anchor cannot explain them, from the uniform prior.
    """
    qset = mdp.states
    window.check(mdp.model)
    i = qset.lookup(window)
    if i >= 0:
        return i
    uniform = np.full(mdp.model.n_states, 1.0 / mdp.model.n_states)
    for start in (qset.anchor, uniform):
        try:
            b, _ = filter_from_history(start, window, mdp.model)
        except ZeroLikelihood:
            continue
        return nearest_neighbor(b, qset, mdp.model.state_metric)
    return -1


def finite_window_action(solved: SolvedPolicy, mdp: FiniteBeliefMdp, window: HistoryWindow) -> int:
    """Policy action for a window; windows that can never occur get action 0."""
    i = window_state(mdp, window)
    return int(solved.policy[i]) if i >= 0 else 0


class WindowPolicy:
    """Stationary finite-window controller.

    Called with the full history so far (observations y_0..y_t and actions
    u_0..u_{t-1}); it reads only the last N+1 observations and N actions and
    plays ``warmup_action`` while fewer than N actions have been taken.
    """

    def __init__(self, solved: SolvedPolicy, mdp: FiniteBeliefMdp, warmup_action: int = 0):
        self.solved = solved
        self.mdp = mdp
        self.window_size = mdp.states.window_size
        self.warmup_action = int(warmup_action)
        self._cache: Dict[int, int] = {}

    def action_for_window(self, window: HistoryWindow) -> int:
        key = window_index(window, self.mdp.model.n_obs, self.mdp.model.n_actions)
        a = self._cache.get(key)
        if a is None:
            a = finite_window_action(self.solved, self.mdp, window)
            self._cache[key] = a
        return a

    def __call__(self, observations: Sequence[int], actions: Sequence[int]) -> int:
        n = self.window_size
        if len(actions) < n:
            return self.warmup_action
        obs = tuple(observations[len(observations) - n - 1:])
        acts = tuple(actions[len(actions) - n:]) if n else ()
        return self.action_for_window(HistoryWindow(obs, acts))


def solve_window(model: PomdpModel, N: int, tolerance: float = 1e-8, max_iter: int = 10_000,
                 prune_threshold: float = 0.0, capacity: Optional[int] = None, dedup: bool = False):
    """Quantize, build and solve in one call; returns (mdp, solved)."""
    qset = build_quantized_set(model, N, prune_threshold,
                               DEFAULT_CAPACITY if capacity is None else capacity, dedup)
    mdp = build_finite_mdp(qset, model)
    return mdp, value_iteration(mdp, tolerance, max_iter)
