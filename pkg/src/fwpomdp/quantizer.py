"""Finite belief set grown from an anchor prior, and the nearest-neighbour quantizer."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from . import _backend
from .belief import (
    ZERO_LIKELIHOOD,
    HistoryWindow,
    bl_distance_bounds,
    window_from_index,
    window_index,
)
from .errors import CapacityExceeded, EmptySet, ModelError
from .model import PomdpModel

DEFAULT_CAPACITY = 10 ** 7
TIE_TOL = 1e-12
# slack on the screening test, per unit of the largest distance; it must exceed
# twice the LP kernel's error (at most 2**-30 of the largest distance, from
# snapping the metric) so the minimiser is never screened out
SCREEN_SLACK = 1e-8
DEDUP_TOL = 1e-10


@dataclass(eq=False)
class QuantizedBeliefSet:
    """Posterior beliefs indexed by the windows that produce them.

    Entry ``i`` holds ``histories[i]``, ``beliefs[i]`` and
    ``reach[i]`` (probability of the window's observations when started from
    the anchor with the window's actions fixed).  ``position`` maps every
    window index of the full enumeration to its entry, or -1 when the window
    was dropped.
    """

    window_size: int
    n_obs: int
    n_actions: int
    anchor: np.ndarray
    histories: List[HistoryWindow]
    beliefs: np.ndarray
    reach: np.ndarray
    window_indices: np.ndarray
    position: np.ndarray

    def __len__(self):
        return len(self.histories)

    @property
    def entries(self) -> List[Tuple[HistoryWindow, np.ndarray, float]]:
        return [(h, self.beliefs[i], float(self.reach[i])) for i, h in enumerate(self.histories)]

    def lookup(self, window: HistoryWindow) -> int:
        """Entry index of ``window``, or -1 if it was pruned or dropped."""
        if window.size != self.window_size:
            raise ModelError(f"window of size {window.size} for a size-{self.window_size} set")
        return int(self.position[window_index(window, self.n_obs, self.n_actions)])

    def subset(self, keep: np.ndarray) -> "QuantizedBeliefSet":
        """Set restricted to the entries in ``keep`` (ascending indices)."""
        keep = np.asarray(keep, dtype=np.intp)
        position = np.full_like(self.position, -1)
        position[self.window_indices[keep]] = np.arange(keep.size)
        return QuantizedBeliefSet(
            self.window_size, self.n_obs, self.n_actions, self.anchor,
            [self.histories[i] for i in keep], self.beliefs[keep], self.reach[keep],
            self.window_indices[keep], position,
        )


def history_count(model: PomdpModel, N: int) -> int:
    return model.n_obs ** (N + 1) * model.n_actions ** N


def build_quantized_set(
    model: PomdpModel,
    N: int,
    prune_threshold: float = 0.0,
    capacity: int = DEFAULT_CAPACITY,
    dedup: bool = False,
    metric=None,
) -> QuantizedBeliefSet:
    """Bayes-update the reference prior along every window of size ``N``.

    Windows whose observations are impossible from the anchor are dropped;
    windows with reach probability not above ``prune_threshold`` are pruned.
    With ``dedup`` a window whose posterior lies within 1e-10 (BL) of an
    earlier entry is mapped onto that entry instead of getting its own.
    """
    if N < 0:
        raise ModelError("window size must be nonnegative")
    if not 0.0 <= prune_threshold < 1.0:
        raise ModelError("prune threshold must lie in [0, 1)")
    total = history_count(model, N)
    if total > capacity:
        raise CapacityExceeded(total, capacity)

    T, Q = model.transition, model.channel
    ny, nu, nx = model.n_obs, model.n_actions, model.n_states

    unnorm = model.reference_prior[None, :] * Q.T  # (Y, X)
    lik = unnorm.sum(axis=1)
    alive = lik >= ZERO_LIKELIHOOD
    B = np.divide(unnorm, lik[:, None], out=np.zeros_like(unnorm), where=alive[:, None])
    path = np.where(alive, lik, 0.0)
    obs_code = np.arange(ny)
    act_code = np.zeros(ny, dtype=np.int64)

    for _ in range(N):
        m = B.shape[0]
        pred = np.einsum("mx,uxz->muz", B, T)  # (M, U, X)
        un = pred[:, :, None, :] * Q.T[None, None, :, :]  # (M, U, Y, X)
        lk = un.sum(axis=-1)
        ok = (lk >= ZERO_LIKELIHOOD) & alive[:, None, None]
        B = np.divide(un, lk[..., None], out=np.zeros_like(un), where=ok[..., None]).reshape(-1, nx)
        path = (path[:, None, None] * np.where(ok, lk, 0.0)).reshape(-1)
        alive = ok.reshape(-1)
        u_idx = np.broadcast_to(np.arange(nu)[None, :, None], (m, nu, ny)).reshape(-1)
        y_idx = np.broadcast_to(np.arange(ny)[None, None, :], (m, nu, ny)).reshape(-1)
        obs_code = (np.repeat(obs_code, nu * ny) * ny + y_idx)
        act_code = (np.repeat(act_code, nu * ny) * nu + u_idx)

    index = obs_code * nu ** N + act_code
    order = np.argsort(index, kind="stable")
    index, B, path, alive = index[order], B[order], path[order], alive[order]
    keep = alive & (path > prune_threshold)
    index, B, path = index[keep], B[keep], path[keep]

    position = np.full(total, -1, dtype=np.int64)
    position[index] = np.arange(index.size)
    qset = QuantizedBeliefSet(
        window_size=N,
        n_obs=ny,
        n_actions=nu,
        anchor=model.reference_prior.copy(),
        histories=[window_from_index(int(i), N, ny, nu) for i in index],
        beliefs=B,
        reach=path,
        window_indices=index,
        position=position,
    )
    if dedup and len(qset):
        qset = _dedup(qset, model.state_metric if metric is None else metric)
    return qset


def _dedup(qset: QuantizedBeliefSet, metric) -> QuantizedBeliefSet:
    keep: List[int] = []
    target = np.empty(len(qset), dtype=np.int64)
    for i in range(len(qset)):
        j = -1
        if keep:
            kb = qset.beliefs[keep]
            close = np.nonzero(np.abs(kb - qset.beliefs[i]).sum(axis=1) <= 2 * DEDUP_TOL + 1e-15)[0]
            for c in close:
                if _backend.bl_distance(qset.beliefs[i], kb[c], metric) < DEDUP_TOL:
                    j = int(c)
                    break
        if j < 0:
            keep.append(i)
            j = len(keep) - 1
        target[i] = j
    reduced = qset.subset(np.array(keep))
    # merged windows point at their representative
    position = np.full_like(qset.position, -1)
    position[qset.window_indices] = target
    reduced.position = position
    return reduced


def _nearest_rows(queries: np.ndarray, beliefs: np.ndarray, metric) -> Tuple[np.ndarray, np.ndarray]:
    nq, k = queries.shape[0], beliefs.shape[0]
    idx = np.empty(nq, dtype=np.int64)
    dist = np.empty(nq)
    chunk = max(1, 4_000_000 // max(1, k * beliefs.shape[1]))
    slack = SCREEN_SLACK * max(1.0, float(np.max(metric)))
    for start in range(0, nq, chunk):
        q = queries[start:start + chunk]
        tv = np.abs(q[:, None, :] - beliefs[None, :, :]).sum(axis=-1)
        lb, ub = bl_distance_bounds(tv, metric)
        cutoff = ub.min(axis=1) + slack
        for r in range(q.shape[0]):
            cand = np.nonzero(lb[r] <= cutoff[r])[0]
            vals = _backend.bl_distances(q[r], beliefs[cand], metric)
            best = vals.min()
            pick = int(np.nonzero(vals <= best + TIE_TOL)[0][0])
            idx[start + r] = cand[pick]
            dist[start + r] = vals[pick]
    return idx, dist


def nearest_neighbors(queries, qset: QuantizedBeliefSet, metric) -> Tuple[np.ndarray, np.ndarray]:
    """Batched quantizer: entry indices and BL distances for each query row."""
    if len(qset) == 0:
        raise EmptySet("quantized belief set is empty")
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    return _nearest_rows(queries, qset.beliefs, np.asarray(metric, dtype=np.float64))


def nearest_neighbor(z, qset: QuantizedBeliefSet, metric) -> int:
    """Index of the entry closest to ``z`` in BL distance (lowest index on ties)."""
    idx, _ = nearest_neighbors(z, qset, metric)
    return int(idx[0])


def quantization_loss(z, qset: QuantizedBeliefSet, metric) -> float:
    """BL distance from ``z`` to its quantized image."""
    _, dist = nearest_neighbors(z, qset, metric)
    return float(dist[0])
