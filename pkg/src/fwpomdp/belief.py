"""Belief vectors, Bayesian filter recursions and probability metrics.

Beliefs are plain float64 numpy vectors over the state space.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from . import _backend
from .errors import ModelError, ZeroLikelihood
from .model import PomdpModel

ZERO_LIKELIHOOD = 1e-300
BELIEF_TOL = 1e-10


def as_belief(weights, n_states=None) -> np.ndarray:
    """Validate and copy a probability vector."""
    b = np.array(weights, dtype=np.float64).reshape(-1)
    if n_states is not None and b.shape[0] != n_states:
        raise ModelError(f"belief has {b.shape[0]} entries, expected {n_states}")
    if np.any(b < 0) or abs(b.sum() - 1.0) > BELIEF_TOL:
        raise ModelError(f"not a probability vector: {b}")
    return b


@dataclass(frozen=True)
class HistoryWindow:
    """Observations y_0..y_N and the N actions taken between them."""

    observations: Tuple[int, ...]
    actions: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(int(y) for y in self.observations))
        object.__setattr__(self, "actions", tuple(int(u) for u in self.actions))
        if len(self.observations) != len(self.actions) + 1:
            raise ModelError("a window holds exactly one more observation than actions")

    @property
    def size(self) -> int:
        return len(self.actions)

    def check(self, model: PomdpModel) -> "HistoryWindow":
        if any(not 0 <= y < model.n_obs for y in self.observations):
            raise ModelError(f"observation index out of range in {self.observations}")
        if any(not 0 <= u < model.n_actions for u in self.actions):
            raise ModelError(f"action index out of range in {self.actions}")
        return self

    def shifted(self, action: int, observation: int) -> "HistoryWindow":
        """Window after taking ``action`` and then observing ``observation``."""
        if self.size == 0:
            return HistoryWindow((observation,), ())
        return HistoryWindow(self.observations[1:] + (observation,), self.actions[1:] + (action,))


def window_index(window: HistoryWindow, n_obs: int, n_actions: int) -> int:
    """Position of ``window`` in the lexicographic history enumeration.

    Observations form the outer (most significant) digits, actions the inner
    ones, both ascending with the earliest element most significant.
    """
    obs = 0
    for y in window.observations:
        obs = obs * n_obs + y
    act = 0
    for u in window.actions:
        act = act * n_actions + u
    return obs * n_actions ** window.size + act


def window_from_index(index: int, size: int, n_obs: int, n_actions: int) -> HistoryWindow:
    obs_code, act_code = divmod(index, n_actions ** size)
    obs = []
    for _ in range(size + 1):
        obs_code, y = divmod(obs_code, n_obs)
        obs.append(y)
    acts = []
    for _ in range(size):
        act_code, u = divmod(act_code, n_actions)
        acts.append(u)
    return HistoryWindow(tuple(reversed(obs)), tuple(reversed(acts)))


def predict(belief, action: int, model: PomdpModel) -> np.ndarray:
    """One-step predictor: push the belief through T(.|., action)."""
    out = np.asarray(belief, dtype=np.float64) @ model.transition[action]
    return out / out.sum()


def correct(belief, observation: int, model: PomdpModel, step=None):
    """Condition a (predicted) belief on an observation; returns (belief, likelihood)."""
    unnorm = np.asarray(belief, dtype=np.float64) * model.channel[:, observation]
    lik = float(unnorm.sum())
    if lik < ZERO_LIKELIHOOD:
        raise ZeroLikelihood(f"observation {observation} has likelihood {lik:.3g}", step, lik)
    return unnorm / lik, lik


def bayes_update(belief, action: int, observation: int, model: PomdpModel):
    """Filter update F(z, u, y); returns (posterior, P(y | z, u))."""
    pred = np.asarray(belief, dtype=np.float64) @ model.transition[action]
    return correct(pred, observation, model)


def obs_likelihoods(belief, action: int, model: PomdpModel) -> np.ndarray:
    """Distribution of the next observation given belief and action."""
    pred = np.asarray(belief, dtype=np.float64) @ model.transition[action]
    return pred @ model.channel


def filter_from_history(prior, window: HistoryWindow, model: PomdpModel):
    """Posterior of the last state given a window started from ``prior``.

    y_0 corrects the prior directly; each later observation follows a
    prediction through the preceding action.  Returns (belief, path
    probability), the latter being the product of per-step likelihoods.
    """
    b, path = correct(prior, window.observations[0], model, step=0)
    for k, u in enumerate(window.actions):
        b, lik = bayes_update(b, u, window.observations[k + 1], model)
        path *= lik
    return b, path


def expected_cost(belief, action: int, model: PomdpModel) -> float:
    return float(np.dot(model.cost[:, action], belief))


def tv_distance(a, b) -> float:
    """Total variation in the sup-over-functions convention (L1 norm)."""
    return float(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)).sum())


def bl_distance(a, b, metric) -> float:
    """Bounded-Lipschitz distance, solved exactly as a small linear program."""
    return _backend.bl_distance(a, b, metric)


def bl_distance_bounds(tv, metric) -> Tuple[np.ndarray, np.ndarray]:
    """Cheap two-sided bounds on the BL distance from total variation.

    A sign function scaled to be feasible gives the lower bound and the
    oscillation of any feasible function the upper one; both coincide on
    two-point spaces.
    """
    d = np.asarray(metric)
    n = d.shape[0]
    if n < 2:
        z = np.zeros_like(np.asarray(tv, dtype=np.float64))
        return z, z
    off = d[~np.eye(n, dtype=bool)]
    dmin, dmax = float(off.min()), float(off.max())
    tv = np.asarray(tv, dtype=np.float64)
    return tv * (dmin / (2.0 + dmin)), tv * (dmax / (2.0 + dmax))


def histories(n_obs: int, n_actions: int, size: int) -> Sequence[HistoryWindow]:
    """All windows of the given size in enumeration order."""
    total = n_obs ** (size + 1) * n_actions ** size
    return [window_from_index(i, size, n_obs, n_actions) for i in range(total)]
