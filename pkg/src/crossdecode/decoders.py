"""Linear decoders for discretized location: Poisson naive Bayes, multinomial
logistic regression and a one-vs-rest linear SVM, with grid cross-validation.

All decoders take a feature matrix of spike counts and integer class labels
in ``0..n_classes-1``.  Fitting never reorders rows in a way that depends on
anything other than the data, so results are reproducible.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize
from scipy.special import gammaln, logsumexp

from .data import WindowedDesign

KINDS = ("poisson", "logistic", "svm")
RATE_FLOOR = 1e-12
GRAD_TOL = 1e-6
MAX_ITER = 5000

DEFAULT_PRIOR_N = (0.0, 1.0) + tuple(float(v) for v in range(5, 101, 5)) + (500.0, 1000.0)
DEFAULT_PRIOR_RATE = tuple(0.5 * i for i in range(21))
DEFAULT_C = tuple(10.0 ** e for e in range(-4, 5))


class ConvergenceWarning(UserWarning):
    pass


class FoldSkippedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CVConfig:
    """Cross-validation settings and hyperparameter grids."""

    folds: int = 5
    prior_n: tuple[float, ...] = DEFAULT_PRIOR_N
    prior_rate: tuple[float, ...] = DEFAULT_PRIOR_RATE
    inverse_reg: tuple[float, ...] = DEFAULT_C
    seed: int = 0
    max_iter: int = MAX_ITER

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if not (self.prior_n and self.prior_rate and self.inverse_reg):
            raise ValueError("hyperparameter grids must be non-empty")
        if min(self.prior_n) < 0 or min(self.prior_rate) < 0:
            raise ValueError("prior grids must be non-negative")
        if min(self.inverse_reg) <= 0:
            raise ValueError("C grid must be positive")


# --------------------------------------------------------------------------
# Poisson naive Bayes
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PoissonNB:
    """Per-feature, per-class Poisson rates under a conjugate Gamma prior.

    ``rates`` has shape ``(n_features, n_classes)``; features are ordered
    lag block first, so ``rates[:n_neurons]`` belongs to lag 0.
    """

    rates: np.ndarray
    prior_rate: float
    prior_n: float
    n_neurons: int
    lag: int = 0
    kind: str = field(default="poisson", init=False)

    @property
    def n_classes(self) -> int:
        return self.rates.shape[1]

    def scores(self, X: np.ndarray) -> np.ndarray:
        """Class scores up to a per-row constant: ``X log(lambda) - sum(lambda)``."""
        logr = np.log(np.maximum(self.rates, RATE_FLOOR))
        return np.asarray(X, dtype=float) @ logr - self.rates.sum(axis=0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[1] != self.rates.shape[0]:
            raise ValueError(f"expected rows of width {self.rates.shape[0]}, got shape {X.shape}")
        return np.argmax(self.scores(X), axis=1)

    def to_dict(self) -> dict:
        return {
            "kind": "poisson", "rates": self.rates.tolist(), "prior_rate": self.prior_rate,
            "prior_n": self.prior_n, "n_neurons": self.n_neurons, "lag": self.lag,
        }


def log_posterior(model: PoissonNB, X: np.ndarray) -> np.ndarray:
    """Full Poisson log-likelihood of each row under each class (no class prior)."""
    X = np.asarray(X, dtype=float)
    return model.scores(X) - gammaln(X + 1).sum(axis=1, keepdims=True)


def _sufficient(X, y, n_classes):
    onehot = np.zeros((y.size, n_classes))
    onehot[np.arange(y.size), y] = 1.0
    return np.asarray(X, dtype=float).T @ onehot, onehot.sum(axis=0)


def poisson_rates(X: np.ndarray, y: np.ndarray, n_classes: int, prior_rate: float, prior_n: float) -> np.ndarray:
    """Posterior-mean rates ``(prior_rate*prior_n + S_ij) / (prior_n + N_j)``.

    A class with no rows takes the prior rate; with ``prior_n == 0`` that is
    undefined and raises ``ValueError``.
    """
    if prior_rate < 0 or prior_n < 0:
        raise ValueError("prior_rate and prior_n must be non-negative")
    y = np.asarray(y, dtype=np.int64)
    S, N = _sufficient(X, y, n_classes)
    if prior_n == 0 and np.any(N == 0):
        j = int(np.flatnonzero(N == 0)[0])
        raise ValueError(f"class {j} has no rows and the prior carries no weight")
    return (prior_rate * prior_n + S) / (prior_n + N)


def fit_poisson_arrays(X, y, n_classes: int, prior_rate: float, prior_n: float,
                       n_neurons: int | None = None, lag: int = 0) -> PoissonNB:
    X = np.asarray(X)
    if X.shape[0] == 0:
        raise ValueError("cannot fit on an empty design")
    rates = poisson_rates(X, y, n_classes, prior_rate, prior_n)
    rates.setflags(write=False)
    return PoissonNB(rates=rates, prior_rate=float(prior_rate), prior_n=float(prior_n),
                     n_neurons=X.shape[1] if n_neurons is None else n_neurons, lag=lag)


def fit_poisson(design: WindowedDesign, prior_rate: float, prior_n: float, rows=None) -> PoissonNB:
    """Fit :class:`PoissonNB` on ``design`` (optionally on a row subset, repeats allowed)."""
    X, y = _select(design, rows)
    return fit_poisson_arrays(X, y, design.n_classes, prior_rate, prior_n, design.n_neurons, design.lag)


def predict_poisson(model: PoissonNB, rows: np.ndarray) -> np.ndarray:
    """Most likely class per row; ties go to the smallest class id."""
    return model.predict(rows)


def tuning_curves(model: PoissonNB, lag: int | None = None) -> np.ndarray:
    """Lag-0 rate block, shape ``(n_neurons, n_classes)``."""
    if lag is not None and model.rates.shape[0] != model.n_neurons * (lag + 1):
        raise ValueError("lag does not match the model width")
    return np.array(model.rates[: model.n_neurons])


# --------------------------------------------------------------------------
# Linear models
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearModel:
    """Weights ``(n_classes, n_features + 1)``; the last column is the bias."""

    weights: np.ndarray
    kind: str
    inverse_reg: float
    converged: bool = True
    n_iter: int = 0
    grad_norm: float = 0.0
    n_neurons: int = 0
    lag: int = 0

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.weights.shape[1] - 1:
            raise ValueError(f"expected rows of width {self.weights.shape[1] - 1}, got shape {X.shape}")
        return X @ self.weights[:, :-1].T + self.weights[:, -1]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "weights": self.weights.tolist(), "inverse_reg": self.inverse_reg,
            "converged": self.converged, "n_neurons": self.n_neurons, "lag": self.lag,
        }


def _unpack(w, n_classes, n_features):
    W = w.reshape(n_classes, n_features + 1)
    return W[:, :-1], W[:, -1]


def logistic_loss_grad(w: np.ndarray, X: np.ndarray, y: np.ndarray, n_classes: int, C: float):
    """Mean multinomial negative log-likelihood plus ``||W||^2 / (2 C n)``.

    The bias is not penalized.  Returns ``(loss, gradient)`` with the
    gradient flattened like ``w``.
    """
    n, p = X.shape
    W, b = _unpack(w, n_classes, p)
    Z = X @ W.T + b
    lse = logsumexp(Z, axis=1)
    loss = (lse.sum() - Z[np.arange(n), y].sum()) / n + (W * W).sum() / (2 * C * n)
    prob = np.exp(Z - lse[:, None])
    prob[np.arange(n), y] -= 1.0
    gW = prob.T @ X / n + W / (C * n)
    gb = prob.sum(axis=0) / n
    return loss, np.hstack([gW, gb[:, None]]).ravel()


def svm_loss_grad(w: np.ndarray, X: np.ndarray, y: np.ndarray, n_classes: int, C: float):
    """One-vs-rest squared hinge loss, averaged over rows, plus the same penalty."""
    n, p = X.shape
    W, b = _unpack(w, n_classes, p)
    Y = -np.ones((n, n_classes))
    Y[np.arange(n), y] = 1.0
    margin = 1.0 - Y * (X @ W.T + b)
    active = np.maximum(margin, 0.0)
    loss = (active * active).sum() / n + (W * W).sum() / (2 * C * n)
    coef = -2.0 * active * Y / n
    gW = coef.T @ X + W / (C * n)
    gb = coef.sum(axis=0)
    return loss, np.hstack([gW, gb[:, None]]).ravel()


_LOSSES = {"logistic": logistic_loss_grad, "svm": svm_loss_grad}


def fit_linear_arrays(X, y, n_classes: int, kind: str, C: float, max_iter: int = MAX_ITER,
                      init: np.ndarray | None = None, n_neurons: int = 0, lag: int = 0,
                      warn: bool = True) -> LinearModel:
    if kind not in _LOSSES:
        raise ValueError(f"unknown linear decoder {kind!r}")
    if C <= 0:
        raise ValueError("C must be positive")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if np.unique(y).size < 2:
        raise ValueError("at least two classes are required")
    p = X.shape[1]
    w0 = np.zeros(n_classes * (p + 1)) if init is None else np.asarray(init, dtype=float).ravel()
    res = optimize.minimize(
        _LOSSES[kind], w0, args=(X, y, n_classes, C), jac=True, method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": GRAD_TOL * 1e-2, "ftol": 1e-15, "maxcor": 20},
    )
    gnorm = float(np.linalg.norm(res.jac))
    converged = gnorm <= GRAD_TOL
    if not converged and warn:
        warnings.warn(f"{kind} fit with C={C:g} stopped at gradient norm {gnorm:.2e}", ConvergenceWarning,
                      stacklevel=2)
    weights = res.x.reshape(n_classes, p + 1)
    weights.setflags(write=False)
    return LinearModel(weights=weights, kind=kind, inverse_reg=float(C), converged=converged,
                       n_iter=int(res.nit), grad_norm=gnorm, n_neurons=n_neurons, lag=lag)


def fit_linear(design: WindowedDesign, kind: str, C: float, max_iter: int = MAX_ITER, rows=None) -> LinearModel:
    """Fit an L2-regularized logistic or squared-hinge SVM decoder.

    Optimization runs until the gradient norm drops below ``1e-6`` or
    ``max_iter`` is reached; in the latter case ``converged`` is False and a
    :class:`ConvergenceWarning` is emitted.
    """
    X, y = _select(design, rows)
    return fit_linear_arrays(X, y, design.n_classes, kind, C, max_iter, n_neurons=design.n_neurons,
                             lag=design.lag)


# --------------------------------------------------------------------------
# Cross-validation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CVResult:
    """Selected hyperparameters with the full score grid.

    For the Poisson decoder ``scores[a, b]`` belongs to
    ``(prior_n[a], prior_rate[b])``; for linear decoders ``scores[a]`` to
    ``inverse_reg[a]``.
    """

    kind: str
    params: dict
    score: float
    scores: np.ndarray
    n_folds_used: int


def stratified_folds(y: np.ndarray, folds: int, seed) -> np.ndarray:
    """Fold id per row; each class is shuffled then dealt round-robin."""
    rng = np.random.default_rng(seed)
    y = np.asarray(y)
    fold = np.empty(y.size, dtype=np.int64)
    offset = 0
    for j in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == j))
        fold[idx] = (offset + np.arange(idx.size)) % folds
        offset += idx.size
    return fold


def _usable_folds(y, fold_id, folds, n_classes):
    out = []
    for k in range(folds):
        test = fold_id == k
        if not test.any():
            continue
        present = np.bincount(y[~test], minlength=n_classes) > 0
        if not present.all():
            warnings.warn(f"fold {k} skipped: class {int(np.flatnonzero(~present)[0])} missing from training rows",
                          FoldSkippedWarning, stacklevel=3)
            continue
        out.append(k)
    if not out:
        raise ValueError("every cross-validation fold was skipped")
    return out


def _argmax_first(flat: np.ndarray) -> int:
    return int(np.flatnonzero(flat == flat.max())[0])


def cv_poisson(X, y, n_classes: int, cfg: CVConfig) -> CVResult:
    """Grid search over ``(prior_n, prior_rate)``.

    Ties prefer the larger ``prior_n`` and then the smaller ``prior_rate``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    fold_id = stratified_folds(y, cfg.folds, cfg.seed)
    used = _usable_folds(y, fold_id, cfg.folds, n_classes)
    pn = np.asarray(cfg.prior_n, dtype=float)
    pr = np.asarray(cfg.prior_rate, dtype=float)
    acc = np.zeros((pn.size, pr.size))
    for k in used:
        train = fold_id != k
        S, N = _sufficient(X[train], y[train], n_classes)
        # rates[a, b, f, j]
        num = (pn[:, None] * pr[None, :])[:, :, None, None] + S[None, None]
        den = (pn[:, None] + N[None, :])[:, None, None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            rates = num / den
        rates = np.where(den > 0, rates, pr[None, :, None, None])
        logr = np.log(np.maximum(rates, RATE_FLOOR))
        F = X.shape[1]
        lmat = logr.transpose(2, 0, 1, 3).reshape(F, -1)
        sc = X[~train] @ lmat - rates.sum(axis=2).reshape(-1)
        pred = sc.reshape(-1, pn.size, pr.size, n_classes).argmax(axis=3)
        acc += (pred == y[~train][:, None, None]).mean(axis=0)
    acc /= len(used)
    # prefer large prior_n, then small prior_rate
    order_n = np.argsort(-pn, kind="stable")
    order_r = np.argsort(pr, kind="stable")
    view = acc[np.ix_(order_n, order_r)]
    a, b = np.unravel_index(_argmax_first(view.ravel()), view.shape)
    ia, ib = order_n[a], order_r[b]
    return CVResult("poisson", {"prior_n": float(pn[ia]), "prior_rate": float(pr[ib])},
                    float(acc[ia, ib]), acc, len(used))


def cv_linear(X, y, n_classes: int, kind: str, cfg: CVConfig, max_iter: int = MAX_ITER) -> CVResult:
    """Grid search over ``C`` with warm starts along the ascending grid.

    Ties prefer the smaller ``C``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    fold_id = stratified_folds(y, cfg.folds, cfg.seed)
    used = _usable_folds(y, fold_id, cfg.folds, n_classes)
    grid = np.asarray(cfg.inverse_reg, dtype=float)
    order = np.argsort(grid, kind="stable")
    acc = np.zeros(grid.size)
    for k in used:
        train = fold_id != k
        init = None
        for idx in order:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                model = fit_linear_arrays(X[train], y[train], n_classes, kind, grid[idx], max_iter, init=init)
            init = np.array(model.weights)
            acc[idx] += np.mean(model.predict(X[~train]) == y[~train])
    acc /= len(used)
    best = order[_argmax_first(acc[order])]
    return CVResult(kind, {"inverse_reg": float(grid[best])}, float(acc[best]), acc, len(used))


def cross_validate(design: WindowedDesign, cfg: CVConfig, kind: str, rows=None) -> CVResult:
    """Stratified k-fold selection of the decoder's hyperparameters."""
    X, y = _select(design, rows)
    if X.shape[0] < cfg.folds:
        raise ValueError(f"{X.shape[0]} rows are too few for {cfg.folds} folds")
    if kind == "poisson":
        return cv_poisson(X, y, design.n_classes, cfg)
    if kind in _LOSSES:
        return cv_linear(X, y, design.n_classes, kind, cfg, cfg.max_iter)
    raise ValueError(f"unknown decoder kind {kind!r}")


def fit_decoder(kind: str, X, y, n_classes: int, params: dict, n_neurons: int = 0, lag: int = 0):
    """Fit ``kind`` with hyperparameters as returned by :func:`cross_validate`."""
    if kind == "poisson":
        return fit_poisson_arrays(X, y, n_classes, params["prior_rate"], params["prior_n"], n_neurons or None, lag)
    if kind in _LOSSES:
        return fit_linear_arrays(X, y, n_classes, kind, params["inverse_reg"], n_neurons=n_neurons, lag=lag)
    raise ValueError(f"unknown decoder kind {kind!r}")


def _select(design: WindowedDesign, rows):
    if rows is None:
        return design.features, design.labels
    rows = np.asarray(rows, dtype=np.int64)
    return design.features[rows], design.labels[rows]


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

def model_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "poisson":
        return PoissonNB(rates=np.asarray(d["rates"], dtype=float), prior_rate=float(d["prior_rate"]),
                         prior_n=float(d["prior_n"]), n_neurons=int(d["n_neurons"]), lag=int(d["lag"]))
    if kind in _LOSSES:
        return LinearModel(weights=np.asarray(d["weights"], dtype=float), kind=kind,
                           inverse_reg=float(d["inverse_reg"]), converged=bool(d.get("converged", True)),
                           n_neurons=int(d["n_neurons"]), lag=int(d["lag"]))
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), sort_keys=True))


def load_model(path: str | Path):
    return model_from_dict(json.loads(Path(path).read_text()))
