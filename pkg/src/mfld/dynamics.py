"""Discrete-time finite-particle mean-field Langevin dynamics.

One step moves every particle along the Wasserstein gradient of F evaluated
at the frozen current ensemble and adds Gaussian noise of variance
``2 * lam * eta``:

    x_i <- x_i - eta * grad dF(mu_x)/dmu (x_i) + sqrt(2 lam eta) xi_i
"""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ProblemSpec, as_ensemble, drift, loss_weights, predictions
from .rng import NoiseStream

DIVERGENCE_LIMIT = 1e12
ENSEMBLE_MAGIC = b"MFLDENS\x00"
DIAGNOSTIC_COLUMNS = ("step", "energy_f", "risk_f0", "mean_sq_norm", "grad_norm_mean")


class DivergenceError(RuntimeError):
    def __init__(self, step: int, detail: str = ""):
        self.step = step
        super().__init__(f"run diverged at step {step}{': ' + detail if detail else ''}")


@dataclass(frozen=True)
class InitLaw:
    """Initial particles: ``mean + scale * N(0, I)`` draws, or explicit rows.

    With ``particles`` set, a system of N particles takes the first N rows.
    """

    mean: float | tuple = 0.0
    scale: float = 1.0
    particles: np.ndarray | None = None

    def draw(self, noise: NoiseStream, n: int, d: int) -> np.ndarray:
        if self.particles is not None:
            p = as_ensemble(self.particles)
            if p.shape[0] < n or p.shape[1] != d:
                raise ValueError(f"explicit init has shape {p.shape}, need at least ({n}, {d})")
            return p[:n].copy()
        mean = np.broadcast_to(np.asarray(self.mean, dtype=np.float64), (d,))
        return mean + self.scale * noise.init_normals(n, d)

    def second_moment(self, d: int) -> float:
        """E|X_0|^2 per particle (exact for the Gaussian law)."""
        if self.particles is not None:
            p = as_ensemble(self.particles)
            return float(np.mean(np.sum(p * p, axis=1)))
        mean = np.broadcast_to(np.asarray(self.mean, dtype=np.float64), (d,))
        return float(mean @ mean + d * self.scale ** 2)

    def to_dict(self):
        if self.particles is not None:
            return {"particles": np.asarray(self.particles).tolist()}
        return {"mean": np.asarray(self.mean).tolist(), "scale": self.scale}


@dataclass(frozen=True)
class IntegratorConfig:
    n_particles: int
    eta: float
    steps: int
    seed: int = 0
    init: InitLaw = field(default_factory=InitLaw)
    snapshot_every: int | None = None
    snapshot_steps: tuple | None = None
    keep_ensembles: bool = True
    stream: int = 0

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.eta < 0 or self.steps < 0:
            raise ValueError("eta and steps must be non-negative")

    def schedule(self) -> list[int]:
        if self.snapshot_steps is not None:
            steps = sorted({int(k) for k in self.snapshot_steps if 0 <= k <= self.steps})
            return steps
        every = self.snapshot_every or max(1, math.ceil(self.steps / 200))
        steps = list(range(0, self.steps + 1, every))
        if steps[-1] != self.steps:
            steps.append(self.steps)
        return steps

    def to_dict(self):
        return {
            "n_particles": self.n_particles, "eta": self.eta, "steps": self.steps,
            "seed": self.seed, "init": self.init.to_dict(),
            "snapshot_every": self.snapshot_every,
            "snapshot_steps": None if self.snapshot_steps is None else list(self.snapshot_steps),
            "stream": self.stream,
        }


@dataclass
class Snapshot:
    step: int
    ensemble: np.ndarray | None
    diagnostics: dict


@dataclass
class Trajectory:
    snapshots: list[Snapshot]
    final: np.ndarray

    @property
    def steps(self) -> list[int]:
        return [s.step for s in self.snapshots]

    def column(self, name: str) -> np.ndarray:
        return np.array([s.diagnostics[name] for s in self.snapshots])

    def ensembles(self) -> np.ndarray:
        return np.stack([s.ensemble for s in self.snapshots])


@dataclass(frozen=True)
class CouplingPlan:
    """Pair an N-particle system with an N_ref-particle reference system.

    ``shared-noise``: particle i < N of both systems reads the same initial
    draw and the same step noise.  ``independent``: the reference system uses
    its own stream of the same seed.
    """

    n_ref: int
    mode: str = "shared-noise"

    def __post_init__(self):
        if self.mode not in ("shared-noise", "independent"):
            raise ValueError(f"unknown coupling mode {self.mode!r}")


def check_step_size(spec: ProblemSpec, eta: float) -> None:
    if not eta * spec.lam_prime < 0.5:
        raise ValueError(f"step size violates eta * lam' < 1/2 (eta={eta}, lam'={spec.lam_prime})")


def mfld_step(spec: ProblemSpec, ens, eta: float, noise) -> np.ndarray:
    ens = np.asarray(ens, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    check_step_size(spec, eta)
    if noise.shape != ens.shape:
        raise ValueError(f"noise shape {noise.shape} != ensemble shape {ens.shape}")
    return ens - eta * drift(spec, ens) + math.sqrt(2.0 * spec.lam * eta) * noise


def diagnostics(spec: ProblemSpec, ens: np.ndarray) -> dict:
    pred = predictions(spec, ens)
    risk = float(np.mean(spec.loss.value(pred, spec.data.y)))
    msn = float(np.mean(np.sum(ens * ens, axis=1)))
    w = loss_weights(spec, pred)
    g = spec.neuron.grad(ens, spec.data.z, w) + 2.0 * spec.lam_prime * ens
    return {
        "energy_f": risk + spec.lam_prime * msn,
        "risk_f0": risk,
        "mean_sq_norm": msn,
        "grad_norm_mean": float(np.mean(np.linalg.norm(g, axis=1))),
    }


def _guard(x: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(x)):
        raise DivergenceError(step, "non-finite coordinate")
    if np.max(np.abs(x)) > DIVERGENCE_LIMIT:
        raise DivergenceError(step, f"coordinate magnitude above {DIVERGENCE_LIMIT:g}")


class _System:
    def __init__(self, spec, n, noise, init, keep):
        self.spec, self.n, self.noise, self.keep = spec, n, noise, keep
        self.x = init.draw(noise, n, spec.dim)
        self.snaps: list[Snapshot] = []

    def record(self, k):
        ens = self.x.copy() if self.keep else None
        self.snaps.append(Snapshot(k, ens, diagnostics(self.spec, self.x)))

    def advance(self, k, eta):
        xi = self.noise.step_normals(k, self.n, self.spec.dim)
        self.x = mfld_step(self.spec, self.x, eta, xi)
        _guard(self.x, k + 1)

    def trajectory(self):
        return Trajectory(self.snaps, self.x.copy())


def _run(spec, cfg, systems):
    check_step_size(spec, cfg.eta)
    sched = set(cfg.schedule())
    for s in systems:
        _guard(s.x, 0)
        if 0 in sched:
            s.record(0)
    for k in range(cfg.steps):
        for s in systems:
            s.advance(k, cfg.eta)
            if k + 1 in sched:
                s.record(k + 1)
    return [s.trajectory() for s in systems]


def run_mfld(spec: ProblemSpec, cfg: IntegratorConfig) -> Trajectory:
    """Iterate the particle update; deterministic in (spec, cfg)."""
    sys_ = _System(spec, cfg.n_particles, NoiseStream(cfg.seed, cfg.stream), cfg.init,
                   cfg.keep_ensembles)
    return _run(spec, cfg, [sys_])[0]


def run_coupled(spec: ProblemSpec, cfg: IntegratorConfig, plan: CouplingPlan):
    """Advance the N system and the N_ref reference system in lockstep."""
    if plan.n_ref < cfg.n_particles:
        raise ValueError(f"n_ref={plan.n_ref} must be >= n_particles={cfg.n_particles}")
    main_noise = NoiseStream(cfg.seed, cfg.stream)
    ref_noise = main_noise if plan.mode == "shared-noise" else NoiseStream(cfg.seed, cfg.stream + 1)
    a = _System(spec, cfg.n_particles, main_noise, cfg.init, cfg.keep_ensembles)
    b = _System(spec, plan.n_ref, ref_noise, cfg.init, cfg.keep_ensembles)
    ta, tb = _run(spec, cfg, [a, b])
    return ta, tb


def run_shared_noise(spec: ProblemSpec, cfg: IntegratorConfig, sizes) -> list[Trajectory]:
    """Advance systems of several sizes in lockstep on one noise stream.

    Particle i of every system reads the same initial draw and step noise, so
    the smaller systems are synchronously coupled to the largest one.
    """
    sizes = [int(n) for n in sizes]
    if not sizes or min(sizes) < 1:
        raise ValueError("need at least one positive system size")
    noise = NoiseStream(cfg.seed, cfg.stream)
    systems = [_System(spec, n, noise, cfg.init, cfg.keep_ensembles) for n in sizes]
    return _run(spec, cfg, systems)


def second_moment_trace(traj: Trajectory) -> list[tuple[int, float]]:
    if not traj.snapshots:
        raise ValueError("empty trajectory")
    return [(s.step, s.diagnostics["mean_sq_norm"]) for s in traj.snapshots]


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAGNOSTIC_COLUMNS)
        for s in traj.snapshots:
            w.writerow([_fmt(s.step)] + [_fmt(s.diagnostics[c]) for c in DIAGNOSTIC_COLUMNS[1:]])


def read_trajectory_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in rows]


def save_run(traj: Trajectory, out_dir, config: dict, name: str = "run",
             dump_final: bool = True) -> list[Path]:
    """CSV of per-snapshot diagnostics, a JSON sidecar, and the final ensemble."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / f"{name}.csv", out / f"{name}.json"]
    write_trajectory_csv(traj, files[0])
    files[1].write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    if dump_final:
        files.append(out / f"{name}_final.bin")
        write_ensemble(traj.final, files[-1])
    return files


def write_ensemble(ens, path) -> None:
    """Binary dump: 8-byte magic, uint32 N, uint32 d, then float64 rows (LE)."""
    ens = as_ensemble(ens)
    n, d = ens.shape
    with Path(path).open("wb") as fh:
        fh.write(ENSEMBLE_MAGIC + struct.pack("<II", n, d))
        fh.write(np.ascontiguousarray(ens, dtype="<f8").tobytes())


def read_ensemble(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != ENSEMBLE_MAGIC:
        raise ValueError(f"{path}: not an ensemble dump")
    n, d = struct.unpack("<II", raw[8:16])
    body = raw[16:]
    if len(body) != 8 * n * d:
        raise ValueError(f"{path}: expected {n}x{d} values, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").reshape(n, d).astype(np.float64)
