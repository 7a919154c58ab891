import numpy as np
import pytest

from parcelsense import labeler
from parcelsense.sampler import PatchSample


def _patch(color, size=20):
    pixels = np.zeros((size, size, 3), dtype=np.uint8)
    pixels[:, :] = color
    return PatchSample(parcel_id=0, x=0, y=0, pixels=pixels)


def test_featurize_constant_patch():
    v = labeler.featurize_patch(_patch((100, 100, 100)))
    assert v.shape == (labeler.feature_length(3),)
    resampled = v[: 3 * 256]
    assert np.allclose(resampled, 100 / 255)
    hist = v[3 * 256 :].reshape(3, 16)
    for band_hist in hist:
        assert band_hist[100 >> 4] == 1.0
        assert band_hist.sum() == pytest.approx(1.0, abs=1e-9)


def test_featurize_is_deterministic():
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, (33, 33, 3)).astype(np.uint8)
    p = PatchSample(parcel_id=0, x=0, y=0, pixels=pixels)
    assert np.array_equal(labeler.featurize_patch(p), labeler.featurize_patch(p))


def test_featurize_size_invariant_for_constant_content():
    small = labeler.featurize_patch(_patch((30, 200, 7), size=20))
    large = labeler.featurize_patch(_patch((30, 200, 7), size=40))
    assert np.array_equal(small, large)


def test_histogram_blocks_sum_to_one():
    rng = np.random.default_rng(5)
    pixels = rng.integers(0, 256, (17, 11, 3)).astype(np.uint8)
    v = labeler.featurize_patch(PatchSample(parcel_id=0, x=0, y=0, pixels=pixels))
    hist = v[3 * 256 :].reshape(3, 16)
    assert np.allclose(hist.sum(axis=1), 1.0, atol=1e-9)


def test_softmax_symmetry():
    assert labeler.softmax(np.array([0.0, 0.0])).tolist() == [0.5, 0.5]


def test_softmax_reference_values():
    # independent high-precision evaluation of e^z_j / sum e^z_k at (1,2,3)
    out = labeler.softmax(np.array([1.0, 2.0, 3.0]))
    assert out == pytest.approx([0.09003057, 0.24472847, 0.66524096], abs=1e-8)


def test_softmax_shift_invariance():
    z = np.array([0.3, -1.2, 4.0])
    for c in (-50.0, 2.5, 300.0):
        shifted = labeler.softmax(z + c)
        assert shifted == pytest.approx(labeler.softmax(z), abs=1e-12)
        assert np.argmax(shifted) == np.argmax(labeler.softmax(z))


def test_softmax_overflow_safe_and_normalized():
    rng = np.random.default_rng(1)
    for _ in range(50):
        z = rng.uniform(-500, 500, size=rng.integers(2, 8))
        out = labeler.softmax(z)
        assert np.isfinite(out).all()
        assert out.sum() == pytest.approx(1.0, abs=1e-9)
        assert (out >= 0).all()


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(3)
    for _ in range(10):
        k, f, n = 3, 4, 6
        weights = rng.normal(size=(k, f + 1))
        x = rng.normal(size=(n, f))
        y = rng.integers(0, k, size=n)
        _, grad = labeler.loss_and_gradient(weights, x, y)
        eps = 1e-6
        for i in range(k):
            for j in range(f + 1):
                up = weights.copy()
                up[i, j] += eps
                down = weights.copy()
                down[i, j] -= eps
                numeric = (labeler.loss_and_gradient(up, x, y)[0] - labeler.loss_and_gradient(down, x, y)[0]) / (2 * eps)
                denom = max(abs(numeric), abs(grad[i, j]), 1e-8)
                assert abs(numeric - grad[i, j]) / denom < 1e-5


def _color_dataset(n_per_class=30, seed=0):
    rng = np.random.default_rng(seed)
    features, words = [], []
    for color, word in [((200, 30, 30), "red"), ((30, 200, 30), "green")]:
        for _ in range(n_per_class):
            noisy = np.clip(
                np.asarray(color, dtype=np.int16) + rng.integers(-10, 11, size=3), 0, 255
            )
            features.append(labeler.featurize_patch(_patch(tuple(noisy))))
            words.append(word)
    return np.stack(features), words


def test_train_softmax_separable_classes():
    features, words = _color_dataset()
    # verify separability first: class means differ in the red/green blocks
    red = features[np.asarray(words) == "red"].mean(axis=0)
    green = features[np.asarray(words) == "green"].mean(axis=0)
    assert np.abs(red - green).max() > 0.3
    result = labeler.train_softmax(
        features, words, iterations=300, batch_size=16, rng=np.random.default_rng(7)
    )
    assert result.train_accuracy >= 0.99


def test_train_softmax_zero_learning_rate_keeps_weights():
    features, words = _color_dataset(n_per_class=5)
    result = labeler.train_softmax(
        features, words, learning_rate=0.0, iterations=20, rng=np.random.default_rng(0)
    )
    assert not result.model.weights.any()


def test_train_softmax_is_deterministic():
    features, words = _color_dataset(n_per_class=8)
    runs = [
        labeler.train_softmax(features, words, iterations=50, rng=np.random.default_rng(42))
        for _ in range(2)
    ]
    assert np.array_equal(runs[0].model.weights, runs[1].model.weights)
    # duplicating every sample is a new dataset, but remains deterministic
    doubled = np.concatenate([features, features])
    runs2 = [
        labeler.train_softmax(doubled, words + words, iterations=50, rng=np.random.default_rng(42))
        for _ in range(2)
    ]
    assert np.array_equal(runs2[0].model.weights, runs2[1].model.weights)


def test_train_softmax_rejects_degenerate_input():
    features, words = _color_dataset(n_per_class=4)
    with pytest.raises(ValueError):
        labeler.train_softmax(features, ["red"] * len(words))
    with pytest.raises(ValueError):
        labeler.train_softmax(features[:, :10], words[:3])


def test_split_dataset_sizes_ten_items():
    train, val, test = labeler.split_dataset(list(range(10)), rng=np.random.default_rng(0))
    assert (len(train), len(val), len(test)) == (8, 1, 1)


def test_split_dataset_three_items_floor_rule():
    # floor for the first two fractions, remainder to the last
    train, val, test = labeler.split_dataset(list(range(3)), rng=np.random.default_rng(0))
    assert (len(train), len(val), len(test)) == (2, 0, 1)


def test_split_dataset_partition_is_exact():
    items = list(range(23))
    parts = labeler.split_dataset(items, rng=np.random.default_rng(3))
    merged = sorted(parts[0] + parts[1] + parts[2])
    assert merged == items


def test_split_dataset_errors():
    with pytest.raises(ValueError):
        labeler.split_dataset([], rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        labeler.split_dataset([1], fractions=(0.5, 0.2, 0.2), rng=np.random.default_rng(0))


def test_predict_word_zero_weights_ties_to_first_class():
    model = labeler.SoftmaxModel(
        classes=("a", "b"), weights=np.zeros((2, labeler.feature_length(3) + 1))
    )
    assert labeler.predict_word(model, _patch((9, 9, 9))) == "a"


def test_predict_word_recovers_training_color():
    features, words = _color_dataset()
    result = labeler.train_softmax(
        features, words, iterations=300, batch_size=16, rng=np.random.default_rng(1)
    )
    assert labeler.predict_word(result.model, _patch((200, 30, 30))) == "red"
    assert labeler.predict_word(result.model, _patch((30, 200, 30))) == "green"


def test_predict_invariant_under_uniform_bias_shift():
    features, words = _color_dataset(n_per_class=10)
    model = labeler.train_softmax(
        features, words, iterations=60, rng=np.random.default_rng(2)
    ).model
    shifted = labeler.SoftmaxModel(
        classes=model.classes,
        weights=model.weights + np.eye(1, model.weights.shape[1], model.weights.shape[1] - 1)[0] * 13.5,
    )
    base = labeler.predict_indices(model, features)
    assert np.array_equal(base, labeler.predict_indices(shifted, features))


def test_model_save_load_round_trip(tmp_path):
    features, words = _color_dataset(n_per_class=6)
    model = labeler.train_softmax(features, words, iterations=30, rng=np.random.default_rng(0)).model
    labeler.save_model(model, tmp_path / "model.json")
    back = labeler.load_model(tmp_path / "model.json")
    assert back.classes == model.classes
    assert np.array_equal(back.weights, model.weights)
