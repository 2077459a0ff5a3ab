"""Round-trip tests for the JSON model interchange format."""
import json

import numpy as np
import pytest

from fedsurv.cox import CoxFitConfig, fit_cox, predict_risk_batch
from fedsurv.forest import ForestConfig, fit_forest, predict_mortality_batch, rank_trees
from fedsurv.neural import TrainConfig, fit_neural, score_batch
from fedsurv.serialize import (
    FORMAT_VERSION,
    deserialize_model,
    serialize_model,
    snapshot_id,
)

from conftest import random_dataset


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(77)
    return random_dataset(rng, n=130, p=3, censor_frac=0.3, beta=np.array([0.8, -0.5, 0.0]))


def test_cox_round_trip_is_bit_exact(data):
    model = fit_cox(data, CoxFitConfig())
    clone = deserialize_model(serialize_model(model))
    assert np.array_equal(clone.beta, model.beta)
    assert np.array_equal(clone.feature_means, model.feature_means)
    assert np.array_equal(clone.feature_scales, model.feature_scales)
    assert np.array_equal(clone.baseline.times, model.baseline.times)
    assert np.array_equal(clone.baseline.values, model.baseline.values)
    assert clone.converged == model.converged
    assert np.array_equal(predict_risk_batch(clone, data), predict_risk_batch(model, data))


@pytest.mark.parametrize("variant", ["deepsurv", "coxnnet", "linear"])
def test_neural_round_trip_is_bit_exact(data, variant):
    model = fit_neural(data, variant, TrainConfig(epochs=15, seed=3))
    clone = deserialize_model(serialize_model(model))
    assert clone.variant == variant
    assert clone.layer_specs == model.layer_specs
    assert np.array_equal(clone.flatten_weights(), model.flatten_weights())
    if model.norm_means is None:
        assert clone.norm_means is None
    else:
        for a, b in zip(clone.norm_means, model.norm_means):
            assert np.array_equal(a, b)
        for a, b in zip(clone.norm_vars, model.norm_vars):
            assert np.array_equal(a, b)
    assert np.array_equal(score_batch(clone, data), score_batch(model, data))


def test_forest_round_trip_is_bit_exact(data):
    fit_part = data.subset(np.arange(100))
    rank_part = data.subset(np.arange(100, len(data)))
    forest = rank_trees(fit_forest(fit_part, ForestConfig(n_trees=6, seed=5), client_tag="z"), rank_part)
    clone = deserialize_model(serialize_model(forest))
    assert len(clone.trees) == len(forest.trees)
    assert np.array_equal(clone.grid, forest.grid)
    for a, b in zip(clone.trees, forest.trees):
        assert np.array_equal(a.feature, b.feature)
        assert np.array_equal(a.threshold, b.threshold, equal_nan=True)
        assert np.array_equal(a.children_left, b.children_left)
        assert np.array_equal(a.children_right, b.children_right)
        assert a.importance == b.importance
        assert a.client_tag == b.client_tag
        assert a.bootstrap_seed == b.bootstrap_seed
    assert np.array_equal(
        predict_mortality_batch(clone, data.features),
        predict_mortality_batch(forest, data.features),
    )


def test_serialized_form_is_canonical(data):
    model = fit_cox(data, CoxFitConfig())
    blob = serialize_model(model)
    assert serialize_model(deserialize_model(blob)) == blob


def test_blob_structure(data):
    model = fit_cox(data, CoxFitConfig())
    payload = json.loads(serialize_model(model))
    assert payload["format_version"] == FORMAT_VERSION
    assert payload["family"] == "cox"


def test_rejects_unknown_version(data):
    payload = json.loads(serialize_model(fit_cox(data, CoxFitConfig())))
    payload["format_version"] = FORMAT_VERSION + 1
    with pytest.raises(ValueError, match="unsupported format version"):
        deserialize_model(json.dumps(payload))
    del payload["format_version"]
    with pytest.raises(ValueError, match="unsupported format version"):
        deserialize_model(json.dumps(payload))


def test_rejects_unknown_family(data):
    payload = json.loads(serialize_model(fit_cox(data, CoxFitConfig())))
    payload["family"] = "gbm"
    with pytest.raises(ValueError, match="unknown model family 'gbm'"):
        deserialize_model(json.dumps(payload))


def test_rejects_unsupported_object():
    with pytest.raises(TypeError, match="cannot serialize"):
        serialize_model({"beta": [1.0]})


def test_rejects_malformed_tree(data):
    forest = rank_trees(
        fit_forest(data.subset(np.arange(100)), ForestConfig(n_trees=1, seed=5)),
        data.subset(np.arange(100, len(data))),
    )
    payload = json.loads(serialize_model(forest))
    payload["trees"][0]["nodes"].append(["l", [1.0], [0.5]])
    with pytest.raises(ValueError, match="malformed tree: trailing nodes"):
        deserialize_model(json.dumps(payload))


def test_snapshot_id_tracks_content(data):
    model_a = fit_cox(data, CoxFitConfig())
    model_b = fit_cox(data, CoxFitConfig())
    assert snapshot_id(model_a) == snapshot_id(model_b)
    assert len(snapshot_id(model_a)) == 12
    other = fit_cox(data.subset(np.arange(100)), CoxFitConfig())
    assert snapshot_id(other) != snapshot_id(model_a)
