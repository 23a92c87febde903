"""Readouts: kernel classifiers and linear ridge regression.

Both learners here are closed-form.  The classifier is one-vs-rest
kernel ridge with a Gaussian kernel; with a small ridge it interpolates
its training set, which is exactly what the stack-machine training
recipe needs (the recorded actions must be reproduced verbatim).  The
regressor is plain ridge with an unpenalized intercept.

Class labels are nonnegative integers throughout.  Callers that work
with symbols map them to indices first; prediction ties break toward
the lower class index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg


class ZeroVarianceError(ValueError):
    """Gamma heuristic is undefined on constant features."""


def pairwise_sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of A (N, d) and B (M, d)."""
    aa = np.einsum("ij,ij->i", A, A)[:, None]
    bb = np.einsum("ij,ij->i", B, B)[None, :]
    d2 = aa + bb - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * ||a - b||^2) for all row pairs."""
    K = pairwise_sq_dists(A, B)
    K *= -gamma
    np.exp(K, out=K)
    return K


def rbf_gamma_scale(X: np.ndarray) -> float:
    """Bandwidth heuristic 1 / (d * var).

    ``var`` is the mean over columns of the population variance, so the
    kernel's length scale tracks the overall spread of the data.  Raises
    :class:`ZeroVarianceError` on constant input.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be (N, d)")
    var = float(np.var(X, axis=0).mean())
    if var <= 0.0:
        raise ZeroVarianceError("features have zero variance; gamma undefined")
    return 1.0 / (X.shape[1] * var)


@dataclass
class KernelClassifier:
    """One-vs-rest kernel ridge classifier with an RBF kernel.

    ``dual_coef`` has one column per class, aligned with ``classes``
    (sorted ascending).  Prediction scores a point against every class
    and returns the argmax, first (lowest) class on ties.
    """

    support_points: np.ndarray
    dual_coef: np.ndarray
    gamma: float
    regularization: float
    classes: np.ndarray

    def decision_values(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return rbf_kernel(X, self.support_points, self.gamma) @ self.dual_coef

    def predict(self, X: np.ndarray) -> np.ndarray:
        scores = self.decision_values(X)
        return self.classes[np.argmax(scores, axis=1)]

    def to_json(self) -> str:
        return json.dumps({
            "support_points": self.support_points.tolist(),
            "dual_coef": self.dual_coef.tolist(),
            "gamma": self.gamma,
            "regularization": self.regularization,
            "classes": self.classes.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "KernelClassifier":
        d = json.loads(text)
        return cls(support_points=np.array(d["support_points"], dtype=float),
                   dual_coef=np.array(d["dual_coef"], dtype=float),
                   gamma=float(d["gamma"]), regularization=float(d["regularization"]),
                   classes=np.array(d["classes"], dtype=int))


def fit_kernel_classifier(X: np.ndarray, y: np.ndarray, regularization: float = 1e-6,
                          gamma: float | None = None) -> KernelClassifier:
    """Fit one-vs-rest kernel ridge on integer labels.

    Solves (K + reg*I) alpha = T once with a Cholesky factorization,
    where T holds +1/-1 one-vs-rest targets, one column per class.
    ``gamma`` defaults to :func:`rbf_gamma_scale` of X.
    """
    return fit_kernel_classifiers_shared(X, [y], regularization, gamma)[0]


def fit_kernel_classifiers_shared(X: np.ndarray, label_sets: list[np.ndarray],
                                  regularization: float = 1e-6,
                                  gamma: float | None = None) -> list[KernelClassifier]:
    """Fit several classifiers on the same rows with one factorization.

    The kernel matrix depends only on X and gamma, so classifiers that
    share their training rows (pop and push deciders do) cost one
    Cholesky solve together.  The returned classifiers share one support
    array object.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("need X (N, d)")
    if regularization <= 0:
        raise ValueError("regularization must be positive")
    if gamma is None:
        gamma = rbf_gamma_scale(X)
    ys = [np.asarray(y, dtype=int) for y in label_sets]
    for y in ys:
        if y.shape != (X.shape[0],):
            raise ValueError("each label set must have one label per row of X")
    class_sets = [np.unique(y) for y in ys]
    T = np.concatenate([np.where(y[:, None] == cs[None, :], 1.0, -1.0)
                        for y, cs in zip(ys, class_sets)], axis=1)
    K = rbf_kernel(X, X, gamma)
    K[np.diag_indices_from(K)] += regularization
    factor = scipy.linalg.cho_factor(K, lower=True, overwrite_a=True, check_finite=False)
    alpha = scipy.linalg.cho_solve(factor, T, check_finite=False)
    support = X.copy()
    out, col = [], 0
    for cs in class_sets:
        out.append(KernelClassifier(support_points=support, dual_coef=alpha[:, col:col + len(cs)],
                                    gamma=float(gamma), regularization=float(regularization),
                                    classes=cs))
        col += len(cs)
    return out


@dataclass
class LinearReadout:
    """Affine map y = W x + b fitted by ridge regression."""

    weights: np.ndarray  # (L, d)
    bias: np.ndarray     # (L,)
    regularization: float = 0.0

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X @ self.weights.T + self.bias

    def to_json(self) -> str:
        return json.dumps({"weights": self.weights.tolist(), "bias": self.bias.tolist(),
                           "regularization": self.regularization})

    @classmethod
    def from_json(cls, text: str) -> "LinearReadout":
        d = json.loads(text)
        return cls(weights=np.array(d["weights"], dtype=float),
                   bias=np.array(d["bias"], dtype=float),
                   regularization=float(d["regularization"]))


def fit_linear_ridge(X: np.ndarray, Y: np.ndarray, regularization: float = 1e-6) -> LinearReadout:
    """Ridge regression with an unpenalized intercept.

    Centers X and Y, solves the regularized normal equations, and
    reconstructs the intercept from the means.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or Y.shape[0] != X.shape[0]:
        raise ValueError("need X (N, d) and Y (N, L)")
    if regularization < 0:
        raise ValueError("regularization must be nonnegative")
    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    Xc = X - x_mean
    Yc = Y - y_mean
    G = Xc.T @ Xc
    G[np.diag_indices_from(G)] += regularization
    Wt = np.linalg.solve(G, Xc.T @ Yc)
    bias = y_mean - x_mean @ Wt
    return LinearReadout(weights=Wt.T, bias=bias, regularization=float(regularization))
