"""Full-batch training, the random-search model-selection protocol, and
out-of-distribution evaluation metrics."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .numeric_core import DivergenceError, ParameterError
from .objectives import LinearModel, ObjectiveConfig, objective_and_gradient, predict, risk
from .sem_generators import EnvDataset, default_test_envs, generate_training_envs

__all__ = [
    "TrainConfig",
    "TrainResult",
    "SweepRow",
    "train_gd",
    "evaluate",
    "random_search",
    "spurious_ratio",
    "METHODS",
]

METHODS = ("ERM", "IRM", "IBERM", "IBIRM")

VAL_FRACTION = 0.2


@dataclass
class TrainConfig:
    lr: float = 0.01
    steps: int = 2000
    init: str = "zeros"          # "zeros" | "gaussian"
    init_scale: float = 0.1
    optimizer: str = "gd"        # "gd" | "adam"

    def __post_init__(self):
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise ParameterError(f"lr must be finite and > 0, got {self.lr}")
        if self.steps < 1:
            raise ParameterError("steps must be >= 1")
        if self.init not in ("zeros", "gaussian"):
            raise ParameterError(f"unknown init {self.init!r}")
        if self.optimizer not in ("gd", "adam"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainResult:
    model: LinearModel
    objective_curve: np.ndarray
    final_train_risk: float
    val_risk: float


def _split_env(env, rng):
    """Deterministic 80/20 split of one environment."""
    perm = rng.permutation(env.n)
    n_val = max(1, int(round(VAL_FRACTION * env.n)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    def take(idx):
        return EnvDataset(env_id=env.env_id, X=env.X[idx], Y=env.Y[idx],
                          task=env.task,
                          Z_inv=None if env.Z_inv is None else env.Z_inv[idx],
                          Z_spu=None if env.Z_spu is None else env.Z_spu[idx],
                          scrambler=env.scrambler)

    return take(train_idx), take(val_idx)


def train_gd(envs, cfg, tc, rng):
    """Deterministic full-batch training of a linear model.

    20% of each environment is held out (split drawn from ``rng``) and the
    average held-out risk is reported as ``val_risk``, measured with the
    task risk (classification error or mean squared error) rather than
    the training surrogate, matching how trained models are evaluated.
    Raises :class:`DivergenceError` with the step index if the objective
    leaves the finite range.
    """
    if not envs:
        raise ParameterError("need at least one environment")
    d = envs[0].X.shape[1]
    split_rng = rng.fork("split")
    train_envs, val_envs = [], []
    for env in envs:
        tr, va = _split_env(env, split_rng.fork(f"env{env.env_id}"))
        train_envs.append(tr)
        val_envs.append(va)

    if tc.init == "zeros":
        theta = np.zeros(d + 1)
    else:
        theta = np.concatenate(
            [rng.fork("init").gaussian_array((d,), std=tc.init_scale), [0.0]])

    curve = np.empty(tc.steps + 1)
    m = np.zeros(d + 1)
    v = np.zeros(d + 1)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    for step in range(tc.steps + 1):
        model = LinearModel(w=theta[:-1], b=theta[-1])
        value, grad = objective_and_gradient(model, train_envs, cfg)
        if not np.isfinite(value):
            raise DivergenceError(f"objective diverged at step {step}",
                                  last_state=theta.copy(), step=step)
        curve[step] = value
        if step == tc.steps:
            break
        if tc.optimizer == "gd":
            theta = theta - tc.lr * grad
        else:
            m = beta1 * m + (1 - beta1) * grad
            v = beta2 * v + (1 - beta2) * grad * grad
            mhat = m / (1 - beta1 ** (step + 1))
            vhat = v / (1 - beta2 ** (step + 1))
            theta = theta - tc.lr * mhat / (np.sqrt(vhat) + eps)

    model = LinearModel(w=theta[:-1], b=theta[-1])
    metric = "class_error" if envs[0].task == "classification" else "mse"
    train_risk = float(np.mean([risk(model, e, cfg.loss) for e in train_envs]))
    val_risk = float(np.mean([evaluate(model, e, metric) for e in val_envs]))
    return TrainResult(model=model, objective_curve=curve,
                       final_train_risk=train_risk, val_risk=val_risk)


def evaluate(model, env, metric):
    """mse for regression, class_error (decision threshold at 0) for
    classification."""
    yhat = predict(model, env.X)
    if metric == "mse":
        if env.task != "regression":
            raise ParameterError("mse requires a regression environment")
        return float(np.mean((yhat - env.Y) ** 2))
    if metric == "class_error":
        if env.task != "classification":
            raise ParameterError("class_error requires a classification environment")
        return float(np.mean((yhat >= 0).astype(float) != env.Y))
    raise ParameterError(f"unknown metric {metric!r}")


@dataclass
class SweepRow:
    example: str
    n_envs: int
    method: str
    data_seed: int
    hparam_id: int
    lam: float
    gamma: float
    lr: float
    val_risk: float
    test_metric: float
    test_metric_max: float


def _loss_and_metric(example):
    if example == "ex1":
        return "square", "mse"
    return "logistic", "class_error"


def _sample_hparams(method, rng):
    lr = 10.0 ** rng.fork("lr").uniform(-3.0, -1.0)
    lam = 10.0 ** rng.fork("lam").uniform(-1.0, 4.0) if "IRM" in method else 0.0
    gamma = 1.0 - 10.0 ** rng.fork("gamma").uniform(-2.0, 0.0) if method.startswith("IB") else 0.0
    return lr, lam, gamma


def _run_seed(spec, method, seed, n_queries, rng, tc_base):
    loss, metric = _loss_and_metric(spec.example)
    seed_rng = rng.fork(f"seed{seed}")
    fw, params, envs = generate_training_envs(spec, seed_rng.fork("data"))
    test_envs = default_test_envs(spec, params, fw, seed_rng.fork("data"))
    rows = []
    for q in range(n_queries):
        q_rng = seed_rng.fork(f"query{q}")
        lr, lam, gamma = _sample_hparams(method, q_rng.fork("hparams"))
        cfg = ObjectiveConfig(loss=loss, lam=lam, gamma=gamma)
        tc = replace(tc_base, lr=lr)
        try:
            result = train_gd(envs, cfg, tc, q_rng.fork("train"))
        except DivergenceError:
            rows.append(SweepRow(spec.example, spec.n_envs, method, seed, q,
                                 lam, gamma, lr, float("inf"),
                                 float("inf"), float("inf")))
            continue
        metrics = [evaluate(result.model, te, metric) for te in test_envs]
        rows.append(SweepRow(spec.example, spec.n_envs, method, seed, q,
                             lam, gamma, lr, result.val_risk,
                             float(np.mean(metrics)), float(np.max(metrics))))
    return rows


def random_search(spec, method, protocol, rng, tc_base=None):
    """Random hyperparameter search: per data seed, regenerate the
    benchmark, run ``n_queries`` trainings with sampled hyperparameters,
    and record validation risk plus the shifted-test metric per query.

    Parallelism over seeds is capped by the IBIRM_THREADS environment
    variable (default: serial); results are identical either way because
    every cell owns an independently forked stream.
    """
    if method not in METHODS:
        raise ParameterError(f"unknown method {method!r}")
    n_queries, n_seeds = protocol
    if n_queries < 1 or n_seeds < 1:
        raise ParameterError("protocol counts must be >= 1")
    if tc_base is None:
        tc_base = TrainConfig()
    n_workers = int(os.environ.get("IBIRM_THREADS", "1") or "1")
    seeds = list(range(n_seeds))
    if n_workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            per_seed = list(pool.map(
                _run_seed_star,
                [(spec, method, s, n_queries, rng, tc_base) for s in seeds]))
    else:
        per_seed = [_run_seed(spec, method, s, n_queries, rng, tc_base)
                    for s in seeds]
    return [row for rows in per_seed for row in rows]


def _run_seed_star(args):
    return _run_seed(*args)


def spurious_ratio(model, fw, m):
    """Share of the model's weight that lives in the spurious latent block.

    Maps observed-space weights to latent coordinates via S^T w (valid for
    orthogonal scramblers) and returns ||v_spu|| / ||v||.
    """
    v = fw.S.T @ model.w
    spu = float(np.linalg.norm(v[m:]))
    inv = float(np.linalg.norm(v[:m]))
    denom = np.sqrt(spu * spu + inv * inv)
    if denom == 0.0:
        return 0.0
    return spu / denom
