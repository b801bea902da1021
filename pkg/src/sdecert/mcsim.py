"""Euler-Maruyama simulation and empirical reach-avoid estimation.

Fixed-step integration of the closed-loop SDE

    x <- x + f(x, pi(x)) dt + g(x) sqrt(dt) xi,   xi ~ N(0, I_{n_w})

with goal membership checked before unsafe membership after every step, so
a step landing in both counts as reached (reach-before-violate at discrete
times).  Leaving the domain box counts as violated: the trajectory crossed
the unsafe frame.  A dynamics domain error mid-rollout also counts as
violated (conservative).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .errors import EvalDomainError
from .generator import ExprController, NetController
from .geometry import ReachAvoidSpec
from .sampling import sample_region
from .scenario import clopper_pearson

__all__ = ["RolloutConfig", "RolloutOutcome", "rollout",
           "estimate_reach_avoid", "write_trajectories_csv"]


@dataclass
class RolloutConfig:
    dt: float = 1e-3
    horizon: float = 50.0
    max_steps: int | None = None     # default ceil(horizon / dt)
    seed: int = 0
    record_stride: int = 0           # 0: no trajectory kept

    @property
    def steps(self) -> int:
        steps = self.max_steps if self.max_steps is not None \
            else int(np.ceil(self.horizon / self.dt))
        if self.dt <= 0 or self.horizon <= 0 or steps < 1:
            raise ValueError("need dt > 0, horizon > 0 and at least one step")
        return steps


@dataclass
class RolloutOutcome:
    status: str                      # reached | violated | timeout
    first_hit_time: float | None
    trajectory: np.ndarray | None = None
    controls: np.ndarray | None = None


def _control_fn(dynamics, controller):
    if controller is None:
        if dynamics.m_u:
            raise EvalDomainError("dynamics use controls but none was given")
        return lambda X: None
    if isinstance(controller, ExprController):
        from .expr import eval_columns

        def fn(X):
            cols = [X[:, i] for i in range(X.shape[1])]
            out = [np.broadcast_to(np.asarray(
                eval_columns(e, cols, None, dynamics.constants, dynamics.tables),
                dtype=np.float64), (X.shape[0],)) for e in controller.exprs]
            return np.stack(out, axis=1)
        return fn
    net = controller.net if isinstance(controller, NetController) else controller
    return lambda X: net.forward(X)


def _drift(dynamics, X, U):
    cols = [X[:, i] for i in range(X.shape[1])]
    u_cols = None if U is None else [U[:, j] for j in range(U.shape[1])]
    out = dynamics.drift_columns(cols, u_cols)
    return np.stack([np.broadcast_to(np.asarray(c, dtype=np.float64),
                                     (X.shape[0],)) for c in out], axis=1)


def _diffusion_apply(dynamics, X, xi):
    """g(x) @ xi for a batch; returns (B, n)."""
    cols = [X[:, i] for i in range(X.shape[1])]
    rows = dynamics.diffusion_matrix(cols)
    out = np.zeros_like(X)
    for i, row in enumerate(rows):
        for k, g in enumerate(row):
            gv = np.asarray(g, dtype=np.float64)
            if gv.ndim == 0 and gv == 0.0:
                continue
            out[:, i] += np.broadcast_to(gv, (X.shape[0],)) * xi[:, k]
    return out


def _simulate_batch(spec: ReachAvoidSpec, dynamics, controller,
                    X0: np.ndarray, cfg: RolloutConfig,
                    rng: np.random.Generator, record: bool = False):
    M = X0.shape[0]
    control = _control_fn(dynamics, controller)
    dt = cfg.dt
    sq = np.sqrt(dt)
    steps = cfg.steps
    status = np.zeros(M, dtype=np.int8)          # 0 active, 1 reached, 2 violated
    hit_time = np.full(M, np.nan)
    X = X0.copy()
    dom = spec.domain_box

    goal0 = spec.goal.contains(X)
    status[goal0] = 1
    hit_time[goal0] = 0.0
    traj = [X.copy()] if record else None
    ctrls = [] if record else None

    for step in range(1, steps + 1):
        xi = rng.standard_normal((M, dynamics.n_w))
        active = status == 0
        if not active.any():
            break
        Xa = X[active]
        try:
            U = control(Xa)
            f = _drift(dynamics, Xa, U)
            gdw = _diffusion_apply(dynamics, Xa, xi[active])
        except EvalDomainError:
            status[active] = 2
            hit_time[active] = step * dt
            break
        Xa = Xa + f * dt + gdw * sq
        X[active] = Xa
        t = step * dt
        reached = spec.goal.contains(Xa)
        out = ~dom.contains(Xa)
        unsafe = spec.unsafe.contains(Xa) | out
        idx = np.flatnonzero(active)
        hit_r = idx[reached]
        status[hit_r] = 1
        hit_time[hit_r] = t
        hit_v = idx[~reached & unsafe]
        status[hit_v] = 2
        hit_time[hit_v] = t
        if record and (cfg.record_stride and step % cfg.record_stride == 0):
            traj.append(X.copy())
            ctrls.append(U)
    if record:
        return status, hit_time, np.stack(traj, axis=0)
    return status, hit_time, None


def rollout(spec: ReachAvoidSpec, dynamics, controller, x0,
            cfg: RolloutConfig, index: int = 0) -> RolloutOutcome:
    """Single trajectory; its noise stream derives from (seed, index)."""
    x0 = np.asarray(x0, dtype=np.float64)[None, :]
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, index)))
    record = cfg.record_stride > 0
    status, hit, traj = _simulate_batch(spec, dynamics, controller, x0, cfg,
                                        rng, record=record)
    name = {0: "timeout", 1: "reached", 2: "violated"}[int(status[0])]
    t = None if np.isnan(hit[0]) else float(hit[0])
    return RolloutOutcome(name, t, traj[:, 0, :] if record else None)


def estimate_reach_avoid(spec: ReachAvoidSpec, dynamics, controller, M: int,
                         cfg: RolloutConfig, confidence: float = 0.99):
    """Empirical reach-avoid probability over M rollouts with initial states
    uniform on the initial set, plus an exact binomial confidence interval
    and the worst success rate over a per-dimension 4-way split of the
    initial set (a proxy for the infimum over initial states)."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 11000)))
    X0 = sample_region(spec, "init", rng, M)
    status, hit, _ = _simulate_batch(spec, dynamics, controller, X0, cfg, rng)
    reached = status == 1
    p_hat = float(np.mean(reached))
    ci = clopper_pearson(int(reached.sum()), M, confidence)

    ibox = spec.init.bounding_box()
    cells = np.zeros(M, dtype=np.int64)
    splits = 4
    for i in range(ibox.dim):
        w = ibox.hi[i] - ibox.lo[i]
        frac = (X0[:, i] - ibox.lo[i]) / w if w > 0 else np.zeros(M)
        cells = cells * splits + np.minimum((frac * splits).astype(np.int64),
                                            splits - 1)
    worst = 1.0
    for c in np.unique(cells):
        sel = cells == c
        if sel.sum() >= 5:
            worst = min(worst, float(np.mean(reached[sel])))
    return {
        "p_hat": p_hat,
        "ci": list(ci),
        "n_rollouts": M,
        "n_reached": int(np.sum(status == 1)),
        "n_violated": int(np.sum(status == 2)),
        "n_timeout": int(np.sum(status == 0)),
        "worst_cell_rate": worst,
        "mean_hit_time": float(np.nanmean(np.where(reached, hit, np.nan)))
        if reached.any() else None,
    }


def write_trajectories_csv(path, spec, dynamics, controller, n_traj: int,
                           cfg: RolloutConfig):
    """Export a few strided rollouts as (traj, t, x..., u...) rows."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 11000)))
    X0 = sample_region(spec, "init", rng, n_traj)
    control = _control_fn(dynamics, controller)
    stride = max(cfg.record_stride, 1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["traj", "t"] + [f"x{i+1}" for i in range(dynamics.n)]
                        + [f"u{j+1}" for j in range(dynamics.m_u)])
        for k in range(n_traj):
            sub = np.random.default_rng(np.random.SeedSequence((cfg.seed, k)))
            X = X0[k:k + 1].copy()
            for step in range(cfg.steps + 1):
                U = control(X)
                if step % stride == 0:
                    row = [k, step * cfg.dt] + list(X[0])
                    if U is not None:
                        row += list(U[0])
                    writer.writerow(row)
                xi = sub.standard_normal((1, dynamics.n_w))
                X = X + _drift(dynamics, X, U) * cfg.dt \
                    + _diffusion_apply(dynamics, X, xi) * np.sqrt(cfg.dt)
                if spec.goal.contains(X[0]) or spec.unsafe.contains(X[0]) \
                        or not spec.domain_box.contains(X[0]):
                    row = [k, (step + 1) * cfg.dt] + list(X[0])
                    if U is not None:
                        row += list(U[0])
                    writer.writerow(row)
                    break
