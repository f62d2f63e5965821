import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skyrmion_rc.errors import DimensionMismatch, FormatError, SingularSystem, SplitError
from skyrmion_rc.readout import (
    REFERENCE_MNIST_ACCURACY,
    ReadoutWeights,
    binarize_waveform,
    classify_digit,
    default_ridge,
    evaluate_mnist,
    evaluate_waveform,
    fit_readout,
    gradient_residual,
    load_weights,
    one_hot,
    predict_series,
    save_weights,
    segment_accuracy,
    with_bias,
)


def gd_oracle(X, L, lam, tol=1e-12, max_iter=2_000_000):
    """Plain gradient descent on ||Xw - L||^2 + lam ||w||^2 with the optimal fixed step."""
    A = X.T @ X + lam * np.eye(X.shape[1])
    b = X.T @ L
    eig = np.linalg.eigvalsh(A)
    step = 2.0 / (eig[0] + eig[-1])
    w = np.zeros((X.shape[1], L.shape[1]))
    for _ in range(max_iter):
        g = A @ w - b
        if np.linalg.norm(2 * g) < tol:
            break
        w -= step * g
    return w


def assert_optimal(weights, X, L):
    g, ref = gradient_residual(weights, X, L)
    assert g < 1e-8 * ref


class TestFit:
    def test_identity_interpolates(self):
        L = np.arange(12.0).reshape(4, 3)
        w = fit_readout(np.eye(4), L, 0.0)
        assert np.allclose(w.w, L, atol=1e-14)

    def test_duplicated_column_is_singular(self, rng):
        X = rng.standard_normal((20, 3))
        X = np.column_stack([X, X[:, 1]])
        with pytest.raises(SingularSystem):
            fit_readout(X, rng.standard_normal(20), 0.0)

    def test_matches_gradient_descent(self, rng):
        X = rng.standard_normal((50, 10))
        L = rng.standard_normal((50, 3))
        w = fit_readout(X, L, 0.1)
        ref = gd_oracle(X, L, 0.1)
        assert np.linalg.norm(w.w - ref) <= 1e-6 * np.linalg.norm(ref)
        assert_optimal(w, X, L)

    @given(st.integers(0, 2**31 - 1), st.integers(0, 1))
    def test_optimality_property(self, seed, zero):
        rng = np.random.default_rng(seed)
        K, F = rng.integers(20, 120), rng.integers(1, 15)
        X = rng.standard_normal((K, F)) * rng.uniform(0.1, 10, F)
        L = rng.standard_normal((K, 2))
        w = fit_readout(X, L, 0.0 if zero else None)
        assert_optimal(w, X, L)

    def test_default_ridge(self, rng):
        X = rng.standard_normal((30, 4))
        assert default_ridge(X) == pytest.approx(1e-6 * np.trace(X.T @ X) / 4)
        assert fit_readout(X, rng.standard_normal(30)).ridge_lambda == default_ridge(X)

    def test_input_validation(self, rng):
        X = rng.standard_normal((10, 2))
        with pytest.raises(DimensionMismatch):
            fit_readout(X, np.zeros(9))
        with pytest.raises(ValueError):
            fit_readout(X, np.zeros(10), -1.0)
        with pytest.raises(ValueError):
            fit_readout(np.full((10, 2), np.nan), np.zeros(10))

    def test_weights_reject_nan(self):
        with pytest.raises(ValueError):
            ReadoutWeights(np.array([np.nan]), 0.0)


class TestPredict:
    def test_zero_weights(self, rng):
        assert np.all(predict_series(ReadoutWeights(np.zeros(3), 0.0), rng.standard_normal((5, 3))) == 0)

    @given(st.floats(0.125, 8.0), st.integers(0, 1000))
    def test_bilinear_scaling(self, c, seed):
        rng = np.random.default_rng(seed)
        X, w = rng.standard_normal((6, 3)), rng.standard_normal(3)
        c = 2.0 ** np.round(np.log2(c))  # exact scaling
        y = predict_series(ReadoutWeights(w, 0.0), X)
        assert np.array_equal(predict_series(ReadoutWeights(w / c, 0.0), X * c), y)

    def test_interpolation(self, rng):
        X = rng.standard_normal((6, 6))
        L = rng.standard_normal(6)
        w = fit_readout(X, L, 0.0)
        assert np.allclose(predict_series(w, X)[:, 0], L, atol=1e-10)

    def test_feature_count_checked(self):
        with pytest.raises(DimensionMismatch):
            predict_series(ReadoutWeights(np.zeros(3), 0.0), np.zeros((2, 4)))


class TestDecisions:
    def test_binarize(self):
        assert binarize_waveform([0.3, -0.2]).tolist() == [1.0, -1.0]
        assert binarize_waveform([0.0]).tolist() == [1.0]
        with pytest.raises(ValueError):
            binarize_waveform([np.nan])

    def test_classify_unique_max(self):
        w = ReadoutWeights(np.eye(10), 0.0)
        x = np.zeros(10)
        x[5] = 1.0
        assert classify_digit(w, x)[0] == 5

    def test_classify_tie_goes_low(self):
        w = ReadoutWeights(np.eye(10), 0.0)
        x = np.zeros(10)
        x[[2, 7]] = 1.0
        assert classify_digit(w, x)[0] == 2

    @given(st.integers(0, 1000), st.floats(-50, 50))
    def test_offset_invariance_with_bias(self, seed, shift):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((60, 5))
        y = rng.integers(0, 10, 60)
        w = fit_readout(with_bias(X), one_hot(y), 0.0)
        Xs = X.copy()
        Xs[:, 2] += shift
        ws = fit_readout(with_bias(Xs), one_hot(y), 0.0)
        a = [classify_digit(w, r)[0] for r in with_bias(X)]
        b = [classify_digit(ws, r)[0] for r in with_bias(Xs)]
        assert a == b

    def test_segment_accuracy(self):
        labels = np.repeat([1.0, -1.0, 1.0], 4)
        pred = labels.copy()
        pred[[0, 1]] = -1  # 50%: not counted correct
        pred[4] = 1  # 75%: correct
        assert segment_accuracy(pred, labels, 4) == pytest.approx(2 / 3)


class TestEvaluate:
    def test_waveform_split(self, rng):
        labels = np.repeat(rng.choice([-1.0, 1.0], 10), 10)
        X = np.column_stack([labels + 0.1 * rng.standard_normal(100), np.ones(100)])
        w, rep = evaluate_waveform(X, labels, 10)
        assert rep.n_train == 50 and rep.n_test == 50
        assert rep.segment_accuracy == 1.0 and rep.train_sample_accuracy >= 0.99
        with pytest.raises(SplitError):
            evaluate_waveform(X[:10], labels[:10], 10)

    def test_waveform_single_class_training_rejected(self, rng):
        labels = np.repeat([1.0, 1.0, -1.0, -1.0], 10)
        with pytest.raises(SplitError, match="one waveform class"):
            evaluate_waveform(rng.standard_normal((40, 3)), labels, 10)

    def test_interpolation_regime(self, rng):
        # train = test = the same 50 digits, lambda = 0, F = K >= classes
        X = rng.standard_normal((50, 50))
        y = np.arange(50) % 10
        w = fit_readout(X, one_hot(y), 0.0)
        assert np.mean(np.argmax(predict_series(w, X), axis=1) == y) == 1.0

    def test_shuffled_labels_at_chance(self, rng):
        X = rng.standard_normal((2500, 40))
        y = rng.integers(0, 10, 2500)
        rep = evaluate_mnist(X, y, 2000, 500, 5, seed=1)
        assert rep.accuracy == pytest.approx(0.1, abs=0.02)

    def test_deterministic_and_reported(self, rng, tmp_path):
        X = rng.standard_normal((300, 12))
        y = rng.integers(0, 10, 300)
        a = evaluate_mnist(X, y, 200, 100, 3, seed=7)
        b = evaluate_mnist(X, y, 200, 100, 3, seed=7)
        assert a.to_dict() == b.to_dict()
        assert a.confusion.sum() == 300
        assert a.reference["physical_device_accuracy"] == REFERENCE_MNIST_ACCURACY[0]
        a.write(tmp_path)
        assert np.array_equal(np.loadtxt(tmp_path / "confusion.csv", delimiter=","), a.confusion)

    def test_split_errors(self, rng):
        with pytest.raises(SplitError):
            evaluate_mnist(rng.standard_normal((10, 2)), np.zeros(10), 8, 5)
        with pytest.raises(DimensionMismatch):
            evaluate_mnist(rng.standard_normal((10, 2)), np.zeros(9), 5, 4)


class TestPersistence:
    def test_round_trip(self, tmp_path, rng):
        w = ReadoutWeights(rng.standard_normal((7, 3)), 0.25)
        save_weights(tmp_path / "w.csv", w, "abc")
        back, header = load_weights(tmp_path / "w.csv")
        assert np.array_equal(back.w, w.w) and back.ridge_lambda == 0.25
        assert header["manifest_hash"] == "abc" and header["F"] == 7 and header["C"] == 3

    def test_shape_mismatch(self, tmp_path, rng):
        save_weights(tmp_path / "w.csv", ReadoutWeights(rng.standard_normal((4, 2)), 0.0))
        lines = (tmp_path / "w.csv").read_text().splitlines()
        (tmp_path / "bad.csv").write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(FormatError):
            load_weights(tmp_path / "bad.csv")
