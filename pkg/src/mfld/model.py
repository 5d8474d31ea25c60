"""Mean-field two-layer networks: neurons, losses, datasets and the energy F.

An ensemble of ``N`` particles in ``R^d`` is stored as a float array of shape
``(N, d)`` and stands for the empirical measure ``(1/N) sum_i delta_{x_i}``.
Most functions also accept a leading batch axis, i.e. arrays of shape
``(..., N, d)``, so that many ensembles can be evaluated at once.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

# sup |tanh''| = 4 / (3 sqrt 3)
TANH_D2_MAX = 4.0 / (3.0 * math.sqrt(3.0))


class DimensionError(ValueError):
    pass


def as_ensemble(x) -> np.ndarray:
    """Validate and return an ensemble as a ``(N, d)`` float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimensionError(f"ensemble must be 2-d (N, d), got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError("ensemble must contain at least one particle")
    if not np.all(np.isfinite(arr)):
        raise ValueError("ensemble contains non-finite coordinates")
    return arr


# ---------------------------------------------------------------------------
# neurons
# ---------------------------------------------------------------------------


class Neuron:
    """Base class. ``dim`` is the parameter dimension, ``bound`` is sup |h|."""

    kind: str = ""
    dim: int
    bound: float

    def value(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """h(x, z_j) for x of shape (..., d) and z of shape (n, p) -> (..., n)."""
        raise NotImplementedError

    def grad(self, x: np.ndarray, z: np.ndarray, w: np.ndarray) -> np.ndarray:
        """sum_j w_j grad_x h(x, z_j) for x of shape (..., d) -> (..., d)."""
        raise NotImplementedError

    def check_features(self, z: np.ndarray) -> None:
        pass


@dataclass(frozen=True)
class TanhLinear(Neuron):
    """h(x, z) = tanh(<x, z>)."""

    dim: int
    kind: str = field(default="tanh-linear", init=False)
    bound: float = field(default=1.0, init=False)

    def check_features(self, z):
        if z.shape[-1] != self.dim:
            raise DimensionError(f"feature dim {z.shape[-1]} != parameter dim {self.dim}")

    def value(self, x, z):
        return np.tanh(x @ z.T)

    def grad(self, x, z, w):
        t = np.tanh(x @ z.T)
        return ((1.0 - t * t) * w) @ z

    def grad_bound(self, z):
        return float(np.max(np.linalg.norm(z, axis=1)))

    def hess_bound(self, z):
        return TANH_D2_MAX * float(np.max(np.sum(z * z, axis=1)))


@dataclass(frozen=True)
class TanhGated(Neuron):
    """h(x, z) = tanh(v * tanh(<w, z>)) with x = (v, w)."""

    dim: int
    kind: str = field(default="tanh-gated", init=False)
    bound: float = field(default=1.0, init=False)

    def check_features(self, z):
        if z.shape[-1] != self.dim - 1:
            raise DimensionError(
                f"feature dim {z.shape[-1]} != parameter dim - 1 = {self.dim - 1}")

    def value(self, x, z):
        s = np.tanh(x[..., 1:] @ z.T)
        return np.tanh(x[..., :1] * s)

    def grad(self, x, z, w):
        v = x[..., :1]
        s = np.tanh(x[..., 1:] @ z.T)
        t = np.tanh(v * s)
        outer = (1.0 - t * t) * w
        dv = np.sum(outer * s, axis=-1, keepdims=True)
        dw = (outer * v * (1.0 - s * s)) @ z
        return np.concatenate([dv, dw], axis=-1)

    # the w-gradient grows like |v| near <w, z> = 0, so no global bound exists
    def grad_bound(self, z):
        return math.inf

    def hess_bound(self, z):
        return math.inf


@dataclass(frozen=True)
class LinearFeature(Neuron):
    """h(x, z) = f(x); the features z are ignored.

    With the linear loss this realises F_0(mu) = E_mu[f] exactly.  Set
    ``quadratic_coef = c`` when ``f(x) = c |x|^2`` so that Gibbs measures of
    the problem are recognised as Gaussians.
    """

    f: Callable[[np.ndarray], np.ndarray]
    f_grad: Callable[[np.ndarray], np.ndarray]
    dim: int
    bound: float = math.inf
    lipschitz: float = math.inf
    smoothness: float = math.inf
    quadratic_coef: float | None = None
    kind: str = field(default="linear-feature", init=False)

    def value(self, x, z):
        fx = np.asarray(self.f(x), dtype=np.float64)
        return np.broadcast_to(fx[..., None], fx.shape + (z.shape[0],))

    def grad(self, x, z, w):
        return np.sum(w) * self.f_grad(x)

    def grad_bound(self, z):
        return self.lipschitz

    def hess_bound(self, z):
        return self.smoothness


def quadratic_feature(c: float, dim: int = 1) -> LinearFeature:
    """Linear-feature neuron with f(x) = c |x|^2 (unbounded)."""
    return LinearFeature(
        f=lambda x: c * np.sum(x * x, axis=-1),
        f_grad=lambda x: 2.0 * c * x,
        dim=dim,
        smoothness=2.0 * abs(c),
        quadratic_coef=c,
    )


def bounded_feature(f, f_grad, dim, bound, lipschitz=math.inf, smoothness=math.inf):
    return LinearFeature(f=f, f_grad=f_grad, dim=dim, bound=bound,
                         lipschitz=lipschitz, smoothness=smoothness)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

LOSS_SMOOTHNESS = {"squared": 1.0, "logistic": 0.25, "linear": 0.0}


@dataclass(frozen=True)
class Loss:
    kind: str

    def __post_init__(self):
        if self.kind not in LOSS_SMOOTHNESS:
            raise ValueError(f"unknown loss {self.kind!r}")

    @property
    def smoothness(self) -> float:
        return LOSS_SMOOTHNESS[self.kind]

    def value(self, a, y):
        if self.kind == "squared":
            return 0.5 * (a - y) ** 2
        if self.kind == "logistic":
            return np.logaddexp(0.0, -y * a)
        return a * y

    def deriv(self, a, y):
        if self.kind == "squared":
            return a - y
        if self.kind == "logistic":
            return -y * expit(-y * a)
        return np.broadcast_to(np.asarray(y, dtype=np.float64), np.shape(a + y)).copy()

    def deriv_bound(self, y: np.ndarray, out_bound: float) -> float:
        """sup |dl/da| over |a| <= out_bound and the given labels."""
        ymax = float(np.max(np.abs(y)))
        if self.kind == "squared":
            return out_bound + ymax
        if self.kind == "logistic":
            return 1.0
        return ymax

    def sup_value(self, y: np.ndarray, out_bound: float) -> float:
        """Average over labels of sup |l(a, y)| for |a| <= out_bound."""
        y = np.abs(np.asarray(y, dtype=np.float64))
        if self.kind == "squared":
            return float(np.mean(0.5 * (out_bound + y) ** 2))
        if self.kind == "logistic":
            return float(np.mean(np.logaddexp(0.0, y * out_bound)))
        return float(out_bound * np.mean(y))


# ---------------------------------------------------------------------------
# data and problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    z: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if z.ndim == 1:
            z = z[:, None]
        if z.shape[0] < 1:
            raise ValueError("dataset must contain at least one example")
        if z.shape[0] != y.shape[0]:
            raise DimensionError(f"{z.shape[0]} feature rows but {y.shape[0]} labels")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]


def load_dataset(path) -> Dataset:
    """Read a CSV file with a header row: feature columns first, label last."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: expected a header row and at least one example")
    data = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=np.float64)
    return Dataset(z=data[:, :-1], y=data[:, -1])


def save_dataset(data: Dataset, path) -> None:
    path = Path(path)
    header = [f"z{i + 1}" for i in range(data.z.shape[1])] + ["y"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for zj, yj in zip(data.z, data.y):
            w.writerow([repr(float(v)) for v in zj] + [repr(float(yj))])


@dataclass(frozen=True)
class ProblemSpec:
    """Entropy-regularised risk  F_0(mu) + lam' E|X|^2 + lam Ent(mu)."""

    neuron: Neuron
    loss: Loss
    data: Dataset
    lam: float
    lam_prime: float

    def __post_init__(self):
        if not self.lam > 0 or not self.lam_prime > 0:
            raise ValueError("lam and lam_prime must be positive")
        if isinstance(self.loss, str):
            object.__setattr__(self, "loss", Loss(self.loss))
        if self.loss.kind == "logistic" and not np.all(np.abs(self.data.y) == 1.0):
            raise ValueError("logistic loss requires labels in {-1, +1}")
        self.neuron.check_features(self.data.z)

    @property
    def dim(self) -> int:
        return self.neuron.dim

    @property
    def r_bound(self) -> float:
        """R with R^2 >= sup_z E|h(X, z)|^2, taken as the neuron bound."""
        return self.neuron.bound

    @property
    def smoothness(self) -> float:
        return self.loss.smoothness

    def replace(self, **changes) -> "ProblemSpec":
        kw = dict(neuron=self.neuron, loss=self.loss, data=self.data,
                  lam=self.lam, lam_prime=self.lam_prime)
        kw.update(changes)
        return ProblemSpec(**kw)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _check_points(spec: ProblemSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.dim:
        raise DimensionError(f"parameter dim {x.shape[-1]} != problem dim {spec.dim}")
    return x


def neuron_eval(neuron: Neuron, x, z) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    if x.shape[0] != neuron.dim:
        raise DimensionError(f"parameter dim {x.shape[0]} != neuron dim {neuron.dim}")
    neuron.check_features(z)
    return float(neuron.value(x, z)[0])


def predictions(spec: ProblemSpec, ens) -> np.ndarray:
    """h_mu(z_j) for every training input; ens (..., N, d) -> (..., n)."""
    ens = _check_points(spec, ens)
    if ens.ndim < 2 or ens.shape[-2] < 1:
        raise ValueError("empty ensemble")
    return np.mean(spec.neuron.value(ens, spec.data.z), axis=-2)


def model_predict(spec: ProblemSpec, ens, z) -> float:
    ens = as_ensemble(ens)
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    spec.neuron.check_features(z)
    _check_points(spec, ens)
    return float(np.mean(spec.neuron.value(ens, z)[:, 0]))


def risk_from_predictions(spec: ProblemSpec, pred: np.ndarray) -> np.ndarray:
    return np.mean(spec.loss.value(pred, spec.data.y), axis=-1)


def risk_f0(spec: ProblemSpec, ens) -> float:
    return float(risk_from_predictions(spec, predictions(spec, as_ensemble(ens))))


def mean_sq_norm(ens) -> np.ndarray:
    ens = np.asarray(ens, dtype=np.float64)
    return np.mean(np.sum(ens * ens, axis=-1), axis=-1)


def energy_f(spec: ProblemSpec, ens) -> float:
    ens = as_ensemble(ens)
    return risk_f0(spec, ens) + spec.lam_prime * float(mean_sq_norm(ens))


def batch_energy(spec: ProblemSpec, ens: np.ndarray) -> np.ndarray:
    """F(mu_x) for a stack of ensembles of shape (..., N, d)."""
    return risk_from_predictions(spec, predictions(spec, ens)) + spec.lam_prime * mean_sq_norm(ens)


def loss_weights(spec: ProblemSpec, pred: np.ndarray) -> np.ndarray:
    """(1/n) dl/da(h_mu(z_j), y_j): the data weights of the first variation."""
    return spec.loss.deriv(pred, spec.data.y) / spec.data.n


def first_variation(spec: ProblemSpec, ens, x, full: bool = True):
    """dF(mu)/dmu evaluated at x (shape (d,) or (M, d)).

    ``full=False`` drops the lam' |x|^2 term and returns dF_0/dmu.
    """
    ens = as_ensemble(ens)
    x = _check_points(spec, x)
    w = loss_weights(spec, predictions(spec, ens))
    out = spec.neuron.value(x, spec.data.z) @ w
    if full:
        out = out + spec.lam_prime * np.sum(x * x, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def wasserstein_gradient(spec: ProblemSpec, ens, x, full: bool = True):
    """grad_x dF(mu)/dmu(x); ``full=False`` keeps only the F_0 part."""
    ens = as_ensemble(ens)
    x = _check_points(spec, x)
    w = loss_weights(spec, predictions(spec, ens))
    g = spec.neuron.grad(x, spec.data.z, w)
    if full:
        g = g + 2.0 * spec.lam_prime * x
    return g


def drift(spec: ProblemSpec, ens: np.ndarray) -> np.ndarray:
    """Wasserstein gradient at every particle of ``ens``, frozen at mu_ens."""
    w = loss_weights(spec, predictions(spec, ens))
    return spec.neuron.grad(ens, spec.data.z, w) + 2.0 * spec.lam_prime * ens


# ---------------------------------------------------------------------------
# regularity surrogates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Regularity:
    """Conservative stand-ins for the abstract regularity constants.

    ``m1``: sup |grad dF_0/dmu|;  ``m2``: Lipschitz constant of the same map in
    (W_2, x);  ``f0_sup``: sup |F_0| over ensembles;  ``loss_deriv``: sup |l'|.
    ``lam_prime_eff``/``m1_eff`` are what the second-moment bound should use;
    they differ from (lam', m1) only when a quadratic feature under the linear
    loss is folded into the quadratic regulariser.
    """

    m1: float
    m2: float
    f0_sup: float
    loss_deriv: float
    r: float
    L: float
    lam_prime_eff: float
    m1_eff: float
    m2_eff: float

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def regularity(spec: ProblemSpec) -> Regularity:
    z = spec.data.z
    nb = spec.neuron
    L = spec.smoothness
    gbar = spec.loss.deriv_bound(spec.data.y, nb.bound)
    gb, hb = nb.grad_bound(z), nb.hess_bound(z)
    m1 = gbar * gb
    m2 = gbar * hb + L * gb * gb
    if not math.isfinite(m1):
        m1 = math.inf
    if not math.isfinite(m2):
        m2 = math.inf
    f0_sup = spec.loss.sup_value(spec.data.y, nb.bound)
    lpe, m1e, m2e = spec.lam_prime, m1, m2
    c = getattr(nb, "quadratic_coef", None)
    if c is not None and spec.loss.kind == "linear":
        lpe = spec.lam_prime + float(np.mean(spec.data.y)) * c
        m1e = m2e = 0.0
    return Regularity(m1=m1, m2=m2, f0_sup=f0_sup, loss_deriv=gbar, r=spec.r_bound,
                      L=L, lam_prime_eff=lpe, m1_eff=m1e, m2_eff=m2e)
