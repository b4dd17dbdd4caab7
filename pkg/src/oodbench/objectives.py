"""Risks, the scalar-rescaling invariance penalty, the prediction-variance
bottleneck penalty, and the combined penalized objective with exact
analytic gradients for linear models.

The objective over training environments is

    sum_e [ R_e + lambda * P_e ] + n_envs * gamma * Var_pooled

where P_e is the squared derivative of R_e(s * yhat) at s = 1 and
Var_pooled is the population variance of predictions pooled over all
environments (the gamma term appears once per environment, matching the
per-environment placement in the penalized objective).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric_core import ParameterError

__all__ = [
    "LinearModel",
    "ObjectiveConfig",
    "predict",
    "risk",
    "irmv1_penalty",
    "variance_penalty",
    "objective_and_gradient",
]

LOSSES = ("square", "logistic", "exponential")


@dataclass
class LinearModel:
    w: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if not (np.all(np.isfinite(self.w)) and np.isfinite(self.b)):
            raise ParameterError("model parameters must be finite")


@dataclass
class ObjectiveConfig:
    """loss kind plus penalty weights; (0, 0) is ERM, (lam>0, 0) is IRM,
    (0, gamma>0) is IB-ERM, both positive is IB-IRM."""

    loss: str = "square"
    lam: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ParameterError(f"unknown loss {self.loss!r}")
        if self.lam < 0 or self.gamma < 0:
            raise ParameterError("penalty weights must be >= 0")


def predict(model, X):
    X = np.asarray(X, dtype=float)
    if X.shape[1] != model.w.size:
        raise ParameterError(f"X has {X.shape[1]} columns, model expects {model.w.size}")
    return X @ model.w + model.b


def _check_loss_task(loss, task):
    if task == "regression" and loss != "square":
        raise ParameterError(f"{loss} loss incompatible with regression")
    if task == "classification" and loss == "square":
        raise ParameterError("square loss incompatible with classification")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    return np.logaddexp(0.0, z)


def risk(model, env, loss):
    """Mean loss of the model on one environment."""
    _check_loss_task(loss, env.task)
    yhat = predict(model, env.X)
    return _risk_from_pred(yhat, env.Y, loss)


def _risk_from_pred(yhat, y, loss):
    if loss == "square":
        return float(np.mean((yhat - y) ** 2))
    if loss == "logistic":
        # BCE on logits with labels in {0, 1}
        return float(np.mean(_softplus(yhat) - y * yhat))
    ys = 2.0 * y - 1.0  # exponential loss uses labels in {-1, +1}
    return float(np.mean(np.exp(-ys * yhat)))


def irmv1_penalty(model, env, loss):
    """Squared derivative of the environment risk with respect to a scalar
    multiplier of the predictions, evaluated at 1."""
    _check_loss_task(loss, env.task)
    yhat = predict(model, env.X)
    return _grad_wrt_scale(yhat, env.Y, loss) ** 2


def _grad_wrt_scale(yhat, y, loss):
    if loss == "square":
        return float(2.0 * np.mean((yhat - y) * yhat))
    if loss == "logistic":
        return float(np.mean((_sigmoid(yhat) - y) * yhat))
    ys = 2.0 * y - 1.0
    return float(np.mean(-ys * yhat * np.exp(-ys * yhat)))


def variance_penalty(model, envs):
    """Population variance of predictions pooled across environments."""
    preds = [predict(model, env.X) for env in envs]
    allp = np.concatenate(preds)
    if allp.size == 0:
        raise ParameterError("variance_penalty requires at least one sample")
    return float(np.mean((allp - allp.mean()) ** 2))


def _risk_grad(yhat, y, X, loss):
    n = y.size
    if loss == "square":
        resid = 2.0 * (yhat - y) / n
    elif loss == "logistic":
        resid = (_sigmoid(yhat) - y) / n
    else:
        ys = 2.0 * y - 1.0
        resid = -ys * np.exp(-ys * yhat) / n
    return X.T @ resid, float(resid.sum())


def _scale_grad_grad(yhat, y, X, loss):
    """Gradient of g = dR(s*yhat)/ds|_{s=1} with respect to (w, b)."""
    n = y.size
    if loss == "square":
        dg = 2.0 * (2.0 * yhat - y) / n
    elif loss == "logistic":
        s = _sigmoid(yhat)
        dg = (s * (1.0 - s) * yhat + s - y) / n
    else:
        ys = 2.0 * y - 1.0
        dg = np.exp(-ys * yhat) * (yhat - ys) / n
    return X.T @ dg, float(dg.sum())


def objective_and_gradient(model, envs, cfg):
    """Penalized objective value and its exact gradient in (w, b).

    Returns ``(value, grad)`` with ``grad`` a vector of length d+1 whose
    last entry is the intercept derivative.
    """
    if not envs:
        raise ParameterError("need at least one environment")
    d = model.w.size
    value = 0.0
    grad_w = np.zeros(d)
    grad_b = 0.0
    preds = []
    for env in envs:
        _check_loss_task(cfg.loss, env.task)
        yhat = predict(model, env.X)
        preds.append(yhat)
        value += _risk_from_pred(yhat, env.Y, cfg.loss)
        gw, gb = _risk_grad(yhat, env.Y, env.X, cfg.loss)
        grad_w += gw
        grad_b += gb
        if cfg.lam > 0:
            g = _grad_wrt_scale(yhat, env.Y, cfg.loss)
            value += cfg.lam * g * g
            dgw, dgb = _scale_grad_grad(yhat, env.Y, env.X, cfg.loss)
            grad_w += cfg.lam * 2.0 * g * dgw
            grad_b += cfg.lam * 2.0 * g * dgb
    if cfg.gamma > 0:
        allp = np.concatenate(preds)
        mu = allp.mean()
        var = float(np.mean((allp - mu) ** 2))
        n_envs = len(envs)
        value += n_envs * cfg.gamma * var
        centered = allp - mu
        allx = np.vstack([env.X for env in envs])
        grad_w += n_envs * cfg.gamma * (2.0 / allp.size) * (allx.T @ centered)
        # the intercept shifts every prediction equally: no variance gradient
    return value, np.concatenate([grad_w, [grad_b]])
