import json

import numpy as np
import pytest
from hypothesis import given, settings
from strategies import small_models

from fwpomdp.errors import ModelError
from fwpomdp.finite_mdp import solve_window
from fwpomdp.io import (
    atomic_write_text,
    dumps,
    load_model,
    model_from_dict,
    model_to_dict,
    qset_from_dict,
    qset_to_dict,
    save_model,
    solved_from_dict,
    solved_to_dict,
)
from fwpomdp.model import validate_model
from fwpomdp.quantizer import build_quantized_set


def assert_models_equal(a, b):
    for name in ("transition", "channel", "cost", "state_metric", "prior", "reference_prior"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert a.discount == b.discount


@settings(max_examples=100)
@given(small_models(sparsity=0.3))
def test_model_round_trip_is_exact(model):
    back = model_from_dict(json.loads(dumps(model_to_dict(model))))
    assert_models_equal(model, back)
    assert validate_model(back) == validate_model(model)


def test_model_file_round_trip(tmp_path, case3):
    path = tmp_path / "m.json"
    save_model(case3, str(path))
    assert_models_equal(load_model(str(path)), case3)
    first = path.read_bytes()
    save_model(case3, str(path))
    assert path.read_bytes() == first


def test_unknown_and_missing_keys_rejected(case1):
    data = model_to_dict(case1)
    with pytest.raises(ModelError, match="unknown"):
        model_from_dict(dict(data, colour="red"))
    partial = dict(data)
    del partial["channel"]
    with pytest.raises(ModelError, match="missing"):
        model_from_dict(partial)
    with pytest.raises(ModelError):
        model_from_dict([1, 2])


def test_declared_sizes_must_match(case1):
    data = model_to_dict(case1)
    data["n_obs"] = 3
    with pytest.raises(ModelError, match="declared"):
        model_from_dict(data)


def test_malformed_arrays_rejected(case1):
    data = model_to_dict(case1)
    data["transition"] = [[[0.5, 0.5], [1.0]], [[1.0, 0.0], [0.0, 1.0]]]
    with pytest.raises(ModelError):
        model_from_dict(data)


def test_invalid_json_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ModelError, match="invalid JSON"):
        load_model(str(path))


@pytest.mark.parametrize("N", [0, 2])
def test_qset_round_trip(case1, N):
    q = build_quantized_set(case1, N, prune_threshold=0.02)
    back = qset_from_dict(json.loads(dumps(qset_to_dict(q))))
    assert back.histories == q.histories
    np.testing.assert_array_equal(back.beliefs, q.beliefs)
    np.testing.assert_array_equal(back.reach, q.reach)
    for h in q.histories:
        assert back.lookup(h) == q.lookup(h)


def test_solved_round_trip(case1):
    mdp, solved = solve_window(case1, 2)
    data = json.loads(dumps(solved_to_dict(solved, mdp)))
    back = solved_from_dict(data)
    np.testing.assert_array_equal(back.values, solved.values)
    np.testing.assert_array_equal(back.policy, solved.policy)
    assert back.residual == solved.residual
    assert data["n_states"] == mdp.n_states


def test_dumps_is_deterministic_and_rejects_nan():
    obj = {"a": np.arange(3), "b": np.float64(0.1), "c": np.int64(4), "d": np.bool_(True)}
    assert dumps(obj) == dumps(obj)
    assert json.loads(dumps(obj)) == {"a": [0, 1, 2], "b": 0.1, "c": 4, "d": True}
    with pytest.raises(ValueError):
        dumps({"x": float("nan")})
    with pytest.raises(TypeError):
        dumps({"x": object()})


def test_atomic_write_leaves_no_temporaries(tmp_path):
    path = tmp_path / "sub" / "out.txt"
    atomic_write_text(str(path), "hello\n")
    atomic_write_text(str(path), "again\n")
    assert path.read_text() == "again\n"
    assert [p.name for p in path.parent.iterdir()] == ["out.txt"]
