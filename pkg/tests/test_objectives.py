import math

import numpy as np
import pytest

from oodbench.numeric_core import ParameterError, RngStream
from oodbench.objectives import (LinearModel, ObjectiveConfig,
                                 irmv1_penalty, objective_and_gradient,
                                 predict, risk, variance_penalty)
from oodbench.sem_generators import EnvDataset, EnvParams, gen_2d


def make_env(X, Y, task):
    return EnvDataset(env_id=0, X=np.asarray(X, float),
                      Y=np.asarray(Y, float), task=task)


def random_envs(rng, n_envs=3, n=40, d=4, task="classification"):
    envs = []
    for e in range(n_envs):
        r = rng.fork(f"env{e}")
        X = r.fork("x").gaussian_array((n, d))
        if task == "classification":
            Y = r.fork("y").bernoulli_array((n,), 0.5).astype(float)
        else:
            Y = r.fork("y").gaussian_array((n,))
        envs.append(make_env(X, Y, task))
    return envs


class TestPredict:
    def test_constant_model(self):
        m = LinearModel(w=np.zeros(3), b=3.0)
        assert np.allclose(predict(m, np.ones((5, 3))), 3.0)

    def test_coordinate_selector(self):
        m = LinearModel(w=np.array([1.0, 0.0]), b=0.0)
        assert predict(m, np.array([[5.0, 9.0]]))[0] == 5.0

    def test_matches_hand_dot_products(self):
        w = np.array([0.5, -2.0])
        X = np.array([[1.0, 2.0], [3.0, -1.0], [0.0, 4.0]])
        expected = [0.5 - 4.0, 1.5 + 2.0, -8.0]
        assert np.allclose(predict(LinearModel(w=w, b=0.0), X), expected)

    def test_dimension_mismatch(self):
        with pytest.raises(ParameterError):
            predict(LinearModel(w=np.zeros(2)), np.ones((3, 5)))


class TestRisk:
    def test_perfect_square_fit(self):
        env = make_env([[1.0], [2.0]], [2.0, 4.0], "regression")
        assert risk(LinearModel(w=np.array([2.0])), env, "square") == 0.0

    def test_uniform_logit_is_ln2(self):
        env = make_env([[1.0], [2.0]], [0.0, 1.0], "classification")
        assert abs(risk(LinearModel(w=np.zeros(1)), env, "logistic") - math.log(2)) < 1e-15

    def test_two_point_square_loss(self):
        env = make_env([[2.0], [0.0]], [1.0, 0.0], "regression")
        assert risk(LinearModel(w=np.array([1.0])), env, "square") == 0.5

    def test_loss_task_compat(self):
        env = make_env([[1.0]], [1.0], "regression")
        with pytest.raises(ParameterError):
            risk(LinearModel(w=np.zeros(1)), env, "logistic")


class TestIrmv1Penalty:
    def test_zero_at_perfect_fit(self):
        env = make_env([[1.0], [2.0]], [2.0, 4.0], "regression")
        assert irmv1_penalty(LinearModel(w=np.array([2.0])), env, "square") == 0.0

    def test_single_point_hand_value(self):
        env = make_env([[2.0]], [1.0], "regression")
        # yhat = 2, y = 1: (2 * (2-1) * 2)^2 = 16
        assert irmv1_penalty(LinearModel(w=np.array([1.0])), env, "square") == 16.0

    @pytest.mark.parametrize("loss,task", [("square", "regression"),
                                           ("logistic", "classification"),
                                           ("exponential", "classification")])
    def test_matches_finite_difference_slope(self, loss, task):
        rng = RngStream(11)
        env = random_envs(rng, n_envs=1, task=task)[0]
        model = LinearModel(w=rng.fork("w").gaussian_array((4,)), b=0.3)
        yhat = predict(model, env.X)
        h = 1e-5

        def risk_scaled(s):
            scaled = make_env(env.X, env.Y, task)
            m = LinearModel(w=model.w * s, b=model.b * s)
            return risk(m, scaled, loss)

        slope = (risk_scaled(1 + h) - risk_scaled(1 - h)) / (2 * h)
        pen = irmv1_penalty(model, env, loss)
        assert abs(pen - slope ** 2) <= 1e-6 * max(1.0, abs(pen))


class TestVariancePenalty:
    def test_constant_predictor(self):
        env = make_env([[1.0], [2.0]], [0.0, 0.0], "regression")
        assert variance_penalty(LinearModel(w=np.zeros(1), b=5.0), [env]) == 0.0

    def test_population_convention(self):
        env = make_env([[0.0], [2.0]], [0.0, 0.0], "regression")
        assert variance_penalty(LinearModel(w=np.array([1.0])), [env]) == 1.0

    def test_quadratic_homogeneity(self):
        rng = RngStream(5)
        envs = random_envs(rng, task="regression")
        w = rng.fork("w").gaussian_array((4,))
        v1 = variance_penalty(LinearModel(w=w), envs)
        v3 = variance_penalty(LinearModel(w=3.0 * w), envs)
        assert abs(v3 - 9.0 * v1) < 1e-9 * max(1.0, v1)

    def test_pooled_across_envs(self):
        e1 = make_env([[1.0]], [0.0], "regression")
        e2 = make_env([[-1.0]], [0.0], "regression")
        # pooled predictions {1, -1}: population variance 1
        assert variance_penalty(LinearModel(w=np.array([1.0])), [e1, e2]) == 1.0


def numerical_gradient(model, envs, cfg, h=1e-6):
    theta = np.concatenate([model.w, [model.b]])
    grad = np.empty_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        vp, _ = objective_and_gradient(LinearModel(w=tp[:-1], b=tp[-1]), envs, cfg)
        vm, _ = objective_and_gradient(LinearModel(w=tm[:-1], b=tm[-1]), envs, cfg)
        grad[i] = (vp - vm) / (2 * h)
    return grad


class TestObjectiveAndGradient:
    def test_erm_reduction(self):
        rng = RngStream(2)
        envs = random_envs(rng, task="regression")
        model = LinearModel(w=rng.fork("w").gaussian_array((4,)), b=0.1)
        cfg = ObjectiveConfig(loss="square", lam=0.0, gamma=0.0)
        value, _ = objective_and_gradient(model, envs, cfg)
        assert abs(value - sum(risk(model, e, "square") for e in envs)) < 1e-12

    @pytest.mark.parametrize("loss,task", [("square", "regression"),
                                           ("logistic", "classification"),
                                           ("exponential", "classification")])
    @pytest.mark.parametrize("lam", [0.0, 0.1, 10.0])
    @pytest.mark.parametrize("gamma", [0.0, 0.1, 10.0])
    def test_gradient_matches_finite_differences(self, loss, task, lam, gamma):
        rng = RngStream(hash((loss, lam, gamma)) % 2 ** 31)
        envs = random_envs(rng, task=task)
        model = LinearModel(w=0.5 * rng.fork("w").gaussian_array((4,)), b=0.2)
        cfg = ObjectiveConfig(loss=loss, lam=lam, gamma=gamma)
        _, grad = objective_and_gradient(model, envs, cfg)
        num = numerical_gradient(model, envs, cfg)
        scale = max(1.0, np.max(np.abs(num)))
        assert np.max(np.abs(grad - num)) <= 1e-5 * scale

    def test_sample_permutation_invariance(self):
        rng = RngStream(3)
        env = random_envs(rng, n_envs=1, task="regression")[0]
        model = LinearModel(w=rng.fork("w").gaussian_array((4,)), b=0.0)
        cfg = ObjectiveConfig(loss="square")
        v1, _ = objective_and_gradient(model, [env], cfg)
        perm = rng.fork("perm").permutation(env.X.shape[0])
        shuffled = make_env(env.X[perm], env.Y[perm], "regression")
        v2, _ = objective_and_gradient(model, [shuffled], cfg)
        assert abs(v1 - v2) < 1e-12

    def test_penalties_nonnegative(self):
        rng = RngStream(8)
        envs = random_envs(rng, task="classification")
        for i in range(20):
            model = LinearModel(w=rng.fork(f"w{i}").gaussian_array((4,)), b=0.0)
            assert irmv1_penalty(model, envs[0], "logistic") >= 0.0
            assert variance_penalty(model, envs) >= 0.0

    def test_twod_exponential_closed_form(self):
        # signed 2D data: value should match the p-weighted exponential
        # closed form plus gamma * w^T Sigma w, within Monte Carlo error
        p, gamma, n = 0.9, 0.4, 200_000
        env = gen_2d(EnvParams(env_id=0, p=p), n, RngStream(17))
        signed = make_env(2.0 * env.X - 1.0, env.Y, "classification")
        w_inv, w_spu = 0.3, 0.1
        model = LinearModel(w=np.array([w_inv, w_spu]), b=0.0)
        cfg = ObjectiveConfig(loss="exponential", lam=0.0, gamma=gamma)
        value, _ = objective_and_gradient(model, [signed], cfg)
        sigma = np.array([[1.0, 2 * p - 1], [2 * p - 1, 1.0]])
        closed = (p * math.exp(-(w_inv + w_spu))
                  + (1 - p) * math.exp(-(w_inv - w_spu))
                  + gamma * model.w @ sigma @ model.w)
        assert abs(value - closed) < 0.01

    def test_bottleneck_ordering_on_signed_2d(self):
        # identity selector has strictly larger prediction variance than
        # either single-feature selector at equal training error
        p = 0.8
        env = gen_2d(EnvParams(env_id=0, p=p), 100_000, RngStream(23))
        signed = make_env(2.0 * env.X - 1.0, 2.0 * env.Y - 1.0, "classification")
        inv_only = LinearModel(w=np.array([1.0, 0.0]))
        spu_only = LinearModel(w=np.array([0.0, 1.0]))
        identity = LinearModel(w=np.array([1.0, 1.0]))
        v_inv = variance_penalty(inv_only, [signed])
        v_spu = variance_penalty(spu_only, [signed])
        v_id = variance_penalty(identity, [signed])
        assert abs(v_inv - 1.0) < 0.01
        assert abs(v_spu - 1.0) < 0.01
        assert abs(v_id - (2.0 + 2.0 * (2 * p - 1))) < 0.05
        assert v_id > v_inv
        assert v_id > v_spu
