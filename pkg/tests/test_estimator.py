import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from convemo.data import synth_generate, write_dataset
from convemo.estimator import ConversationEmotionRecognizer


def small_estimator(**overrides):
    params = dict(latent_dim=8, d_fusion=8, proj_dim=4, n_heads=2, n_layers=1, jacobi_order_R=2, steps=30)
    params.update(overrides)
    return ConversationEmotionRecognizer(**params)


@pytest.fixture(scope="module")
def toy():
    return synth_generate(4, 4, 3, 2, (6, 5, 4), seed=3)


@pytest.fixture(scope="module")
def fitted(toy):
    return small_estimator().fit(toy)


def test_get_set_params_roundtrip():
    est = small_estimator(alpha=0.9)
    params = est.get_params()
    assert params["alpha"] == 0.9
    est.set_params(alpha=0.2)
    assert est.alpha == 0.2


def test_clone_preserves_params():
    est = small_estimator(window_k=3, disable_decoupler=True)
    copy = clone(est)
    assert copy.get_params() == est.get_params()


def test_predict_before_fit_raises(toy):
    with pytest.raises(NotFittedError):
        small_estimator().predict(toy)


def test_fit_predict_shapes(fitted, toy):
    labels = fitted.predict(toy)
    assert labels.shape == (toy.total_utterances,)
    assert set(labels) <= set(range(toy.num_classes))
    probs = fitted.predict_proba(toy)
    assert probs.shape == (toy.total_utterances, toy.num_classes)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(np.argmax(probs, axis=1), labels)


def test_fitted_attributes(fitted, toy):
    np.testing.assert_array_equal(fitted.classes_, np.arange(toy.num_classes))
    assert fitted.n_features_in_ == sum(toy.dims)
    assert len(fitted.history_) == 30
    assert fitted.checkpoint_.step == 30


def test_score_matches_evaluate(fitted, toy):
    assert fitted.score(toy) == fitted.evaluate(toy).accuracy


def test_accepts_dataset_path(tmp_path, toy):
    path = tmp_path / "toy.txt"
    write_dataset(toy, path)
    est = small_estimator(steps=5).fit(str(path))
    assert est.predict(str(path)).shape == (toy.total_utterances,)


def test_rejects_external_labels(toy):
    with pytest.raises(ValueError, match="y=None"):
        small_estimator().fit(toy, y=[0, 1])


def test_rejects_wrong_type():
    with pytest.raises(TypeError, match="Dataset"):
        small_estimator().fit(np.zeros((3, 4)))


def test_overfits_small_data(toy):
    est = small_estimator(steps=300).fit(toy)
    assert est.score(toy) >= 0.9
