"""Closed-form particle-approximation, convergence and LSI bounds.

All functions are plain formulas.  Constants the theory leaves abstract
(``C``, ``C1``, ``C2`` of earlier propagation-of-chaos results, the LSI
constants ``alpha`` and ``alpha_bar``) are inputs, never estimated here.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

ENVELOPE_KINDS = ("continuous-N", "discrete-N", "sampling-KL", "w2-poc", "tv-poc")


def new_poc_bound(L: float, R: float, N: float) -> float:
    """L R^2 / (2N); exactly zero for a linear loss whatever R is."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if L == 0:
        return 0.0
    return L * R * R / (2.0 * N)


def prior_poc_bound(lam: float, alpha: float, N: float, C: float = 1.0) -> float:
    """lam C / (alpha N)."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if N < 1:
        raise ValueError("N must be >= 1")
    return lam * C / (alpha * N)


def prior_discrete_bound(lam, alpha, eta, k, N, C1=1.0, C2=1.0, delta0_n=0.0) -> float:
    """exp(-lam alpha eta k / 2) Delta_0^N + (lam eta + eta^2) C1 / (lam alpha) + lam C2 / (alpha N)."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    decay = 0.0 if math.isinf(k) else math.exp(-lam * alpha * eta * k / 2.0) * delta0_n
    return decay + (lam * eta + eta * eta) * C1 / (lam * alpha) + lam * C2 / (alpha * N)


def poc_ratio(L, R, lam, alpha, C=1.0) -> float:
    """new / prior bound ratio, alpha L R^2 / (2 lam C), independent of N."""
    return alpha * L * R * R / (2.0 * lam * C)


def _sq(x):
    return x * x


def delta_eta_n(eta, lam, lam_prime, d, M1, M2, m0_per_particle) -> float:
    """Discretisation term of the finite-particle discrete-time rate.

    ``m0_per_particle`` is E|X_0|^2 / N with X_0 the full (dN)-vector.
    """
    if eta == 0:
        return 0.0
    a = _sq(M2) + _sq(lam_prime)
    return (16.0 * eta * a * (eta * _sq(M1) + lam * d)
            + 64.0 * _sq(eta) * _sq(lam_prime) * a
            * (m0_per_particle + (_sq(M1) / (4.0 * lam_prime) + lam * d) / lam_prime))


def delta_eta(eta, lam, lam_prime, d, M1, M2, m0) -> float:
    """Discretisation term of the mean-field (infinite-particle) discrete-time rate."""
    if eta == 0:
        return 0.0
    a = _sq(M2) + _sq(lam_prime)
    return (8.0 * eta * a * (2.0 * eta * _sq(M1) + 2.0 * lam * d)
            + 32.0 * _sq(eta) * _sq(lam_prime) * a
            * (m0 + (_sq(M1) / (4.0 * lam_prime) + lam * d) / lam_prime))


def lsi_holley_stroock(lam, lam_prime, N, B) -> float:
    """Lower bound (2 lam'/lam) exp(-4 N B / lam) on the N-particle LSI constant."""
    if B < 0:
        raise ValueError("B must be non-negative")
    return 2.0 * lam_prime / lam * math.exp(-4.0 * N * B / lam)


def lsi_proximal_holley_stroock(lam, lam_prime, osc) -> float:
    """(2 lam'/lam) exp(-4 osc / lam) for proximal Gibbs laws with sup |dF_0/dmu| <= osc."""
    return 2.0 * lam_prime / lam * math.exp(-4.0 * osc / lam)


def second_moment_bound(m0, lam, lam_prime, d, M1) -> float:
    """Uniform-in-time bound on E|X_k^i|^2:  m0 + (M1^2/(4 lam') + lam d) / lam'."""
    return m0 + (_sq(M1) / (4.0 * lam_prime) + lam * d) / lam_prime


@dataclass
class BoundInputs:
    lam: float
    lam_prime: float
    eta: float = 0.0
    N: int = 1
    d: int = 1
    L: float = 1.0
    R: float = 1.0
    M1: float = 1.0
    M2: float = 1.0
    alpha: float | None = None
    alpha_bar: float | None = None
    B: float | None = None
    delta0_n: float = 0.0
    delta0: float = 0.0
    m0: float = 0.0
    C: float = 1.0
    C1: float = 1.0
    C2: float = 1.0

    def __post_init__(self):
        for name in ("lam", "lam_prime"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.eta < 0 or not self.eta * self.lam_prime < 0.5:
            raise ValueError("need eta >= 0 and eta * lam' < 1/2")
        if self.N < 1:
            raise ValueError("N must be >= 1")

    def resolved_alpha_bar(self) -> float:
        if self.alpha_bar is not None:
            return self.alpha_bar
        if self.B is not None:
            return lsi_holley_stroock(self.lam, self.lam_prime, self.N, self.B)
        raise ValueError("envelope needs alpha_bar (or B for the Holley-Stroock bound)")

    def resolved_alpha(self) -> float:
        if self.alpha is None:
            raise ValueError("envelope needs the uniform LSI constant alpha")
        return self.alpha

    def to_dict(self):
        return asdict(self)


@dataclass
class Envelope:
    kind: str
    variable: str
    rate: str
    grid: np.ndarray
    values: np.ndarray
    asymptote: float


def convergence_envelope(kind: str, inputs: BoundInputs, grid) -> Envelope:
    """Evaluate a displayed right-hand side on a grid of k (or t).

    continuous-N : L R^2/(2N) + exp(-2 abar lam t) D0N
    discrete-N   : L R^2/(2N) + dN/(2 abar lam) + exp(-abar lam eta k) D0N
    sampling-KL  : same as discrete-N; bounds lam * KL(first marginal || mu*)
    w2-poc       : 4/(alpha lam) (L R^2/(2N) + dN/(2 abar lam) + d/(2 alpha lam)
                   + exp(-abar lam eta k) D0N + exp(-2 alpha lam eta k) D0); bounds W2^2/N
    tv-poc       : 1/lam (L R^2/(2N) + exp(-2 abar lam t) D0N + exp(-2 alpha lam t) D0); bounds TV^2/N
    """
    if kind not in ENVELOPE_KINDS:
        raise ValueError(f"unknown envelope kind {kind!r}")
    g = np.asarray(grid, dtype=np.float64)
    if g.size == 0:
        raise ValueError("empty grid")
    p = inputs
    poc = new_poc_bound(p.L, p.R, p.N)
    abar = p.resolved_alpha_bar()
    dn = delta_eta_n(p.eta, p.lam, p.lam_prime, p.d, p.M1, p.M2, p.m0)
    if kind == "continuous-N":
        vals = poc + np.exp(-2 * abar * p.lam * g) * p.delta0_n
        return Envelope(kind, "t", "exp(-2*alpha_bar*lam*t)", g, vals, poc)
    if kind in ("discrete-N", "sampling-KL"):
        base = poc + dn / (2 * abar * p.lam)
        vals = base + np.exp(-abar * p.lam * p.eta * g) * p.delta0_n
        return Envelope(kind, "k", "exp(-alpha_bar*lam*eta*k)", g, vals, base)
    alpha = p.resolved_alpha()
    if kind == "w2-poc":
        de = delta_eta(p.eta, p.lam, p.lam_prime, p.d, p.M1, p.M2, p.m0)
        base = poc + dn / (2 * abar * p.lam) + de / (2 * alpha * p.lam)
        vals = (base + np.exp(-abar * p.lam * p.eta * g) * p.delta0_n
                + np.exp(-2 * alpha * p.lam * p.eta * g) * p.delta0)
        f = 4.0 / (alpha * p.lam)
        return Envelope(kind, "k", "exp(-alpha_bar*lam*eta*k); exp(-2*alpha*lam*eta*k)",
                        g, f * vals, f * base)
    vals = (poc + np.exp(-2 * abar * p.lam * g) * p.delta0_n
            + np.exp(-2 * alpha * p.lam * g) * p.delta0)
    return Envelope(kind, "t", "exp(-2*alpha_bar*lam*t); exp(-2*alpha*lam*t)",
                    g, vals / p.lam, poc / p.lam)


def write_bound_table(rows, path) -> None:
    """CSV with columns kind, grid value, bound value."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "grid_value", "bound_value"])
        for kind, x, v in rows:
            w.writerow([kind, repr(float(x)), repr(float(v))])


def envelope_rows(env: Envelope):
    return [(env.kind, x, v) for x, v in zip(env.grid, env.values)]
