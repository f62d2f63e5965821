"""Linear readout: ridge least squares, waveform binarization, digit classification."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, FormatError, SingularSystem, SplitError
from .texture import rng_stream

WEIGHTS_VERSION = 1
REFERENCE_MNIST_ACCURACY = (0.947, 0.003)  # reference only, physical device


@dataclass
class ReadoutWeights:
    w: np.ndarray  # F x C
    ridge_lambda: float

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        self.w = w[:, None] if w.ndim == 1 else w
        if not np.all(np.isfinite(self.w)):
            raise ValueError("weights contain NaN or Inf")

    @property
    def n_features(self) -> int:
        return self.w.shape[0]

    @property
    def n_targets(self) -> int:
        return self.w.shape[1]


DEFAULT_RIDGE_SCALE = 1e-6


def default_ridge(X: np.ndarray, scale: float = DEFAULT_RIDGE_SCALE) -> float:
    """``scale`` times the mean diagonal of X^T X (trace / F)."""
    X = np.asarray(X, dtype=float)
    return scale * float(np.sum(X * X)) / X.shape[1]


def _as_targets(L):
    L = np.asarray(L, dtype=float)
    return L[:, None] if L.ndim == 1 else L


def fit_readout(features, labels, ridge_lambda: float | None = None, rank_rtol: float | None = None) -> ReadoutWeights:
    """Solve (X^T X + lambda I) w = X^T L by Cholesky, with one refinement pass.

    ``ridge_lambda=None`` uses :func:`default_ridge`.  With ``lambda = 0`` the
    system must be full rank: singular values of X below ``rank_rtol`` times
    the largest (default ``max(K, F) * eps``) raise :class:`SingularSystem`.
    """
    X = np.asarray(features, dtype=float)
    L = _as_targets(labels)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("features must be a non-empty K x F matrix")
    if L.shape[0] != X.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} feature rows but {L.shape[0]} label rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(L))):
        raise ValueError("features and labels must be finite")
    lam = default_ridge(X) if ridge_lambda is None else float(ridge_lambda)
    if lam < 0:
        raise ValueError("ridge_lambda must be non-negative")
    F = X.shape[1]
    if lam == 0:
        s = linalg.svdvals(X)
        tol = (max(X.shape) * np.finfo(float).eps) if rank_rtol is None else rank_rtol
        if s.size < F or s[0] == 0 or s[-1] <= tol * s[0]:
            raise SingularSystem("X^T X is rank deficient; use ridge_lambda > 0")
    A = X.T @ X
    A[np.diag_indices(F)] += lam
    rhs = X.T @ L
    try:
        factor = linalg.cho_factor(A, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularSystem("normal-equation matrix is not positive definite") from exc
    w = linalg.cho_solve(factor, rhs, check_finite=False)
    w += linalg.cho_solve(factor, rhs - A @ w, check_finite=False)
    return ReadoutWeights(w, lam)


def gradient_residual(weights: ReadoutWeights, features, labels) -> tuple[float, float]:
    """``(||2X^T(Xw - L) + 2 lambda w||, ||X^T L||)`` for the optimality check."""
    X = np.asarray(features, dtype=float)
    L = _as_targets(labels)
    g = 2 * X.T @ (X @ weights.w - L) + 2 * weights.ridge_lambda * weights.w
    return float(np.linalg.norm(g)), float(np.linalg.norm(X.T @ L))


def predict_series(weights: ReadoutWeights, features) -> np.ndarray:
    X = np.atleast_2d(np.asarray(features, dtype=float))
    if X.shape[1] != weights.n_features:
        raise DimensionMismatch(f"weights expect {weights.n_features} features, got {X.shape[1]}")
    return X @ weights.w


def binarize_waveform(y) -> np.ndarray:
    """Sign with sign(0) = +1."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("outputs must be finite")
    return np.where(y >= 0, 1.0, -1.0)


def classify_digit(weights: ReadoutWeights, features) -> tuple[int, np.ndarray]:
    """Argmax digit and score vector; ties go to the smallest digit."""
    x = np.asarray(features, dtype=float).reshape(1, -1)
    scores = predict_series(weights, x)[0]
    return int(np.argmax(scores)), scores


def one_hot(labels, n_classes: int = 10) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def with_bias(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.column_stack([X, np.ones(X.shape[0])])


# ---------------------------------------------------------------- waveform task


@dataclass
class WaveformReport:
    sample_accuracy: float
    segment_accuracy: float
    train_sample_accuracy: float
    train_segment_accuracy: float
    n_train: int
    n_test: int
    ridge_lambda: float

    def to_dict(self):
        return asdict(self)


def segment_accuracy(pred, labels, samples_per_segment: int) -> float:
    """Fraction of segments in which more than half the samples are correct."""
    pred = np.asarray(pred).ravel()
    labels = np.asarray(labels).ravel()
    n_seg = pred.size // samples_per_segment
    if n_seg == 0:
        raise ValueError("fewer samples than one segment")
    ok = (pred[: n_seg * samples_per_segment] == labels[: n_seg * samples_per_segment]).reshape(n_seg, -1)
    return float(np.mean(ok.mean(axis=1) > 0.5))


def evaluate_waveform(
    design, labels, samples_per_segment: int, ridge_lambda: float | None = None, train_fraction: float = 0.5
) -> tuple[ReadoutWeights, WaveformReport]:
    """Fit on the first part of the run (whole segments) and test on the rest."""
    X = np.asarray(design, dtype=float)
    L = np.asarray(labels, dtype=float).ravel()
    if X.shape[0] != L.size:
        raise DimensionMismatch(f"{X.shape[0]} samples but {L.size} labels")
    n_seg = L.size // samples_per_segment
    n_train_seg = int(round(n_seg * train_fraction))
    if not 0 < n_train_seg < n_seg:
        raise SplitError("need at least one training and one test segment")
    cut = n_train_seg * samples_per_segment
    if np.unique(L[:cut]).size < 2:
        raise SplitError("training segments contain only one waveform class")
    weights = fit_readout(X[:cut], L[:cut], ridge_lambda)
    pred = binarize_waveform(predict_series(weights, X)[:, 0])
    report = WaveformReport(
        sample_accuracy=float(np.mean(pred[cut:] == L[cut:])),
        segment_accuracy=segment_accuracy(pred[cut:], L[cut:], samples_per_segment),
        train_sample_accuracy=float(np.mean(pred[:cut] == L[:cut])),
        train_segment_accuracy=segment_accuracy(pred[:cut], L[:cut], samples_per_segment),
        n_train=cut,
        n_test=L.size - cut,
        ridge_lambda=weights.ridge_lambda,
    )
    return weights, report


# ---------------------------------------------------------------- MNIST task


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray
    per_repeat: list
    train_n: int = 0
    test_n: int = 0
    ridge_lambda: float | None = None
    reference: dict = field(default_factory=dict)
    weights: ReadoutWeights | None = field(default=None, repr=False, compare=False)  # last repeat

    def __post_init__(self):
        self.confusion = np.asarray(self.confusion, dtype=np.int64)

    @property
    def accuracy_std(self) -> float:
        return float(np.std(self.per_repeat))

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "accuracy_std": self.accuracy_std,
            "per_repeat": list(self.per_repeat),
            "train_n": self.train_n,
            "test_n": self.test_n,
            "ridge_lambda": self.ridge_lambda,
            "confusion": self.confusion.tolist(),
            "reference": self.reference,
        }

    def write(self, directory, stem: str = "report") -> None:
        directory = Path(directory)
        (directory / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        np.savetxt(directory / "confusion.csv", self.confusion, delimiter=",", fmt="%d")


def evaluate_mnist(
    features,
    labels,
    train_n: int,
    test_n: int,
    repeats: int = 1,
    ridge_lambda: float | None = None,
    seed: int = 0,
    add_bias: bool = True,
    n_classes: int = 10,
    ridge_scale: float = DEFAULT_RIDGE_SCALE,
) -> EvalReport:
    """Repeated random disjoint train/test splits; confusion is summed over repeats.

    ``features`` is ``(n_images, F)`` (flattened per digit).  Repeat ``r``
    draws its permutation from the stream ``(seed, r)``.  With
    ``ridge_lambda=None`` each fit uses :func:`default_ridge` of its training
    rows at ``ridge_scale``.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    if X.shape[0] != y.size:
        raise DimensionMismatch(f"{X.shape[0]} feature rows but {y.size} labels")
    if train_n < 1 or test_n < 1 or repeats < 1:
        raise SplitError("train_n, test_n and repeats must be positive")
    if train_n + test_n > y.size:
        raise SplitError(f"train_n + test_n = {train_n + test_n} exceeds {y.size} samples")
    if add_bias:
        X = with_bias(X)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    accs = []
    lam_used = None
    for r in range(repeats):
        perm = rng_stream(seed, r).permutation(y.size)
        tr, te = perm[:train_n], perm[train_n : train_n + test_n]
        lam = default_ridge(X[tr], ridge_scale) if ridge_lambda is None else ridge_lambda
        weights = fit_readout(X[tr], one_hot(y[tr], n_classes), lam)
        lam_used = weights.ridge_lambda
        pred = np.argmax(predict_series(weights, X[te]), axis=1)
        np.add.at(confusion, (y[te], pred), 1)
        accs.append(float(np.mean(pred == y[te])))
    return EvalReport(
        accuracy=float(np.mean(accs)),
        confusion=confusion,
        per_repeat=accs,
        train_n=train_n,
        test_n=test_n,
        ridge_lambda=lam_used,
        weights=weights,
        reference={"physical_device_accuracy": REFERENCE_MNIST_ACCURACY[0], "physical_device_std": REFERENCE_MNIST_ACCURACY[1]},
    )


# ---------------------------------------------------------------- persistence


def save_weights(path, weights: ReadoutWeights, manifest_hash: str = "") -> None:
    header = {
        "format": "skyrmion_rc.weights",
        "version": WEIGHTS_VERSION,
        "F": weights.n_features,
        "C": weights.n_targets,
        "ridge_lambda": weights.ridge_lambda,
        "manifest_hash": manifest_hash,
    }
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        np.savetxt(fh, weights.w, delimiter=",", fmt="%.17g")


def load_weights(path) -> tuple[ReadoutWeights, dict]:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise FormatError(f"{path}: missing weights header")
        header = json.loads(first[2:])
        w = np.loadtxt(fh, delimiter=",", ndmin=2)
    if header.get("format") != "skyrmion_rc.weights" or header.get("version") != WEIGHTS_VERSION:
        raise FormatError(f"{path}: unsupported weights format")
    if w.shape != (header["F"], header["C"]):
        raise FormatError(f"{path}: expected {header['F']}x{header['C']} weights, found {w.shape}")
    return ReadoutWeights(w, header["ridge_lambda"]), header
