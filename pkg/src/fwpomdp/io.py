"""JSON and CSV serialization with atomic file writes."""
from __future__ import annotations

import json
import os
import tempfile
from typing import Any

import numpy as np

from .belief import HistoryWindow
from .errors import ModelError
from .finite_mdp import FiniteBeliefMdp, SolvedPolicy
from .model import PomdpModel
from .quantizer import QuantizedBeliefSet

MODEL_KEYS = ("n_states", "n_obs", "n_actions", "transition", "channel", "cost", "discount",
              "state_metric", "prior", "reference_prior")


def _plain(obj: Any):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any) -> str:
    """Deterministic JSON; floats use the shortest exact round-trip form."""
    return json.dumps(obj, indent=2, default=_plain, allow_nan=False) + "\n"


def atomic_write_text(path: str, text: str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- models ---------------------------------------------------------------------

def model_to_dict(model: PomdpModel) -> dict:
    return {
        "n_states": model.n_states,
        "n_obs": model.n_obs,
        "n_actions": model.n_actions,
        "transition": model.transition.tolist(),
        "channel": model.channel.tolist(),
        "cost": model.cost.tolist(),
        "discount": float(model.discount),
        "state_metric": model.state_metric.tolist(),
        "prior": model.prior.tolist(),
        "reference_prior": model.reference_prior.tolist(),
    }


def model_from_dict(data: dict) -> PomdpModel:
    """Parse a model document; unknown or missing keys are errors."""
    if not isinstance(data, dict):
        raise ModelError("model document must be a JSON object")
    unknown = sorted(set(data) - set(MODEL_KEYS))
    if unknown:
        raise ModelError(f"unknown model keys: {', '.join(unknown)}")
    missing = [k for k in MODEL_KEYS if k not in data]
    if missing:
        raise ModelError(f"missing model keys: {', '.join(missing)}")
    try:
        model = PomdpModel(
            transition=np.array(data["transition"], dtype=np.float64),
            channel=np.array(data["channel"], dtype=np.float64),
            cost=np.array(data["cost"], dtype=np.float64),
            discount=float(data["discount"]),
            state_metric=np.array(data["state_metric"], dtype=np.float64),
            prior=np.array(data["prior"], dtype=np.float64),
            reference_prior=np.array(data["reference_prior"], dtype=np.float64),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"malformed model arrays: {exc}") from None
    declared = (data["n_states"], data["n_obs"], data["n_actions"])
    actual = (model.transition.shape[1] if model.transition.ndim == 3 else None,
              model.channel.shape[1] if model.channel.ndim == 2 else None,
              model.transition.shape[0] if model.transition.ndim == 3 else None)
    if tuple(declared) != actual:
        raise ModelError(f"declared sizes {declared} do not match the arrays {actual}")
    return model


def load_model(path: str) -> PomdpModel:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"{path}: invalid JSON ({exc})") from None
    return model_from_dict(data)


def save_model(model: PomdpModel, path: str) -> None:
    atomic_write_text(path, dumps(model_to_dict(model)))


# --- quantized sets and policies ----------------------------------------------------

def qset_to_dict(qset: QuantizedBeliefSet) -> dict:
    return {
        "window_size": qset.window_size,
        "n_obs": qset.n_obs,
        "n_actions": qset.n_actions,
        "anchor": qset.anchor.tolist(),
        "entries": [
            {"observations": list(h.observations), "actions": list(h.actions),
             "belief": qset.beliefs[i].tolist(), "reach": float(qset.reach[i])}
            for i, h in enumerate(qset.histories)
        ],
    }


def qset_from_dict(data: dict) -> QuantizedBeliefSet:
    from .belief import window_index

    n, ny, nu = data["window_size"], data["n_obs"], data["n_actions"]
    hist = [HistoryWindow(tuple(e["observations"]), tuple(e["actions"])) for e in data["entries"]]
    idx = np.array([window_index(h, ny, nu) for h in hist], dtype=np.int64)
    position = np.full(ny ** (n + 1) * nu ** n, -1, dtype=np.int64)
    position[idx] = np.arange(idx.size)
    nx = len(data["anchor"])
    return QuantizedBeliefSet(
        window_size=n, n_obs=ny, n_actions=nu,
        anchor=np.array(data["anchor"], dtype=np.float64),
        histories=hist,
        beliefs=np.array([e["belief"] for e in data["entries"]], dtype=np.float64).reshape(-1, nx),
        reach=np.array([e["reach"] for e in data["entries"]], dtype=np.float64),
        window_indices=idx,
        position=position,
    )


def solved_to_dict(solved: SolvedPolicy, mdp: FiniteBeliefMdp) -> dict:
    return {
        "window_size": mdp.states.window_size,
        "n_states": mdp.n_states,
        "iteration_count": solved.iteration_count,
        "residual": solved.residual,
        "tolerance": solved.tolerance,
        "values": solved.values.tolist(),
        "policy": solved.policy.tolist(),
        "states": qset_to_dict(mdp.states),
    }


def solved_from_dict(data: dict) -> SolvedPolicy:
    return SolvedPolicy(
        values=np.array(data["values"], dtype=np.float64),
        policy=np.array(data["policy"], dtype=np.int64),
        iteration_count=int(data["iteration_count"]),
        residual=float(data["residual"]),
        tolerance=float(data["tolerance"]),
    )
