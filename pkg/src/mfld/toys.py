"""Small default problems used by the studies and the test-suite.

(a) ``linear``: quadratic feature f(x) = c|x|^2 under the linear loss (L = 0);
    the minimiser is the Gaussian N(0, lam / (2 (c + lam')) I).
(b) ``regression``: 1-d tanh neurons, four points, squared loss (L = 1).
(c) ``classification``: 2-d tanh neurons, eight points, logistic loss (L = 1/4).
"""
from __future__ import annotations

import numpy as np

from .gaussian import AnalyticGaussian
from .model import Dataset, Loss, ProblemSpec, TanhLinear, quadratic_feature

TOYS = ("linear", "regression", "classification")


def linear_toy(lam: float = 1.0, lam_prime: float = 0.5, c: float = 0.5, d: int = 1) -> ProblemSpec:
    data = Dataset(z=np.zeros((1, 1)), y=np.ones(1))
    return ProblemSpec(quadratic_feature(c, d), Loss("linear"), data, lam, lam_prime)


def linear_toy_target(spec: ProblemSpec) -> AnalyticGaussian:
    c = spec.neuron.quadratic_coef * float(np.mean(spec.data.y))
    return AnalyticGaussian.isotropic(spec.dim, spec.lam / (2.0 * (c + spec.lam_prime)))


def regression_toy(lam: float = 0.5, lam_prime: float | None = None) -> ProblemSpec:
    data = Dataset(z=np.array([[-2.0], [-0.7], [0.7], [2.0]]),
                   y=np.array([-0.6, -0.3, 0.3, 0.6]))
    lp = lam / 2.0 if lam_prime is None else lam_prime
    return ProblemSpec(TanhLinear(1), Loss("squared"), data, lam, lp)


def classification_toy(lam: float = 0.5, lam_prime: float | None = None) -> ProblemSpec:
    theta = np.arange(8) * np.pi / 4
    z = 1.5 * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    y = np.where(np.cos(theta - 0.3) >= 0, 1.0, -1.0)
    lp = lam / 2.0 if lam_prime is None else lam_prime
    return ProblemSpec(TanhLinear(2), Loss("logistic"), Dataset(z=z, y=y), lam, lp)


def make_toy(name: str, lam: float | None = None, lam_prime: float | None = None) -> ProblemSpec:
    kw = {}
    if lam is not None:
        kw["lam"] = lam
    if lam_prime is not None:
        kw["lam_prime"] = lam_prime
    if name == "linear":
        return linear_toy(**kw)
    if name == "regression":
        return regression_toy(**kw)
    if name == "classification":
        return classification_toy(**kw)
    raise ValueError(f"unknown toy problem {name!r}; choose from {TOYS}")
