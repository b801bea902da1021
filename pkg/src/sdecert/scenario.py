"""Scenario training of last-layer certificate weights with PAC guarantees.

Because the certificate's output layer is linear, both V and the generator
value are linear in the last-layer weights (and output bias): with per-state
feature vectors phi and psi,

    V(x) = phi(x) . theta_L,       Phi(x) = psi(x) . theta_L.

Each sampled state then contributes linear constraints, and maximizing beta
subject to those constraints is a linear program over (theta_L, beta).  The
scenario approach turns feasibility at N i.i.d. samples into a PAC
statement: with confidence 1 - delta, the constraints hold everywhere but on
a set of probability mass at most epsilon under the sampling distribution,
with N >= 2 (log(1/delta) + d) / epsilon.

The LP is solved by constraint generation over a bespoke dense simplex: at
most d + 1 constraints bind at a vertex, so even N = 1e6 stays tractable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError, LPInfeasible, LPUnbounded
from .generator import GeneratorGraph
from .geometry import ReachAvoidSpec
from .hardsat import (CertArch, CtrlArch, HardSatConfig, _build_nets,
                      _warm_start, pointwise_h, region_label_masks)
from .nets import CertificateNet
from .sampling import sample_states
from .simplex import solve_lp_ineq
from .tape import ParamStore

__all__ = ["ScenarioConfig", "ScenarioProblem", "LPResult",
           "last_layer_features", "build_scenario_problem",
           "build_and_solve_lp", "pac_epsilon", "holdout_violation",
           "clopper_pearson", "run_scenario"]

_EK = {"optimize": True}


@dataclass
class ScenarioConfig:
    n_samples: int = 100_000
    delta: float = 1e-9
    eps_gen: float = 0.1
    holdout: int = 1_000_000
    seed: int = 0
    count_beta_in_dim: bool = True     # PAC dimension d = d_v + 1 (beta counts)
    weights: dict | None = None        # mixture weights; None = default
    warm_epochs: int = 2000
    warm_samples: int = 10000
    warm_batch: int | None = 2048
    warm_lr: float = 1e-3
    cg_seed_rows: int | None = None    # per family; None = 2 * (d + 1)
    cg_add_rows: int = 3
    cg_max_iter: int = 200
    tol: float = 1e-9


@dataclass
class ScenarioProblem:
    phi: np.ndarray                    # (N, d_v)
    psi: np.ndarray                    # (N, d_v)
    in_init: np.ndarray
    in_unsafe: np.ndarray
    in_gen: np.ndarray
    eps_gen: float
    delta: float

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    @property
    def d_v(self) -> int:
        return self.phi.shape[1]


@dataclass
class LPResult:
    theta: np.ndarray
    beta: float
    active_rows: int
    iterations: int
    max_violation: float


def last_layer_features(net: CertificateNet, gen: GeneratorGraph,
                        X: np.ndarray, chunk: int = 20000):
    """(phi, psi) feature matrices; linear-in-last-layer identities
    phi . theta_L = V(x) and psi . theta_L = Phi(x) hold by construction."""
    X = np.asarray(X, dtype=np.float64)
    phis, psis = [], []
    for s in range(0, len(X), chunk):
        Xc = X[s:s + chunk]
        q = net.layer_quantities(Xc)
        A = net.scaled_jacobian_inner(q)          # (B, m2, n)
        F = np.stack([np.broadcast_to(np.asarray(col, dtype=np.float64),
                                      (Xc.shape[0],))
                      for col in gen.drift_columns(Xc)], axis=1)
        term1 = q["d2"] * np.einsum("bi,bji->bj", F, A, **_EK)
        psi = term1
        if gen.nz_pairs:
            idx_i = [p[0] for p in gen.nz_pairs]
            idx_l = [p[1] for p in gen.nz_pairs]
            coeff = np.array([0.5 * p[2] for p in gen.nz_pairs])
            W1s = net.W1 / net.s_in[None, :]
            partA = A[:, :, idx_i] * A[:, :, idx_l]
            W11 = W1s[:, idx_i] * W1s[:, idx_l]
            inner = np.einsum("jk,bk,kp->bjp", net.W2, q["q1"], W11, **_EK)
            gw = gen.ggt_point_pairs(Xc) * coeff[None, :]
            psi = psi + q["q2"] * np.einsum("bp,bjp->bj", gw, partA, **_EK) \
                + q["d2"] * np.einsum("bp,bjp->bj", gw, inner, **_EK)
        phi_c = net.s_out * q["h2"]
        psi_c = net.s_out * psi
        if net.has_bias:
            ones = np.ones((Xc.shape[0], 1))
            phi_c = np.concatenate([phi_c, ones], axis=1)
            psi_c = np.concatenate([psi_c, np.zeros_like(ones)], axis=1)
        phis.append(phi_c)
        psis.append(psi_c)
    return np.concatenate(phis), np.concatenate(psis)


def theta_from_net(net: CertificateNet) -> np.ndarray:
    if net.has_bias:
        return np.concatenate([net.W3, [float(net.b3)]])
    return net.W3.copy()


def write_theta(net: CertificateNet, theta: np.ndarray):
    net.W3 = np.asarray(theta[:net.m2], dtype=np.float64)
    if net.has_bias:
        net.b3 = np.float64(theta[net.m2])


def build_scenario_problem(spec: ReachAvoidSpec, net: CertificateNet,
                           gen: GeneratorGraph, X: np.ndarray,
                           eps_gen: float, delta: float) -> ScenarioProblem:
    masks = region_label_masks(spec, X)
    phi, psi = last_layer_features(net, gen, X)
    return ScenarioProblem(phi, psi, masks["init"], masks["unsafe"],
                           masks["gen"], eps_gen, delta)


# ---------------------------------------------------------------------------
# LP assembly and constraint generation


def _family_rows(problem: ScenarioProblem):
    """Constraint families as (name, sample_indices, row_fn, rhs)."""
    d = problem.d_v
    all_idx = np.arange(problem.n)

    def row_nonneg(i):
        return np.concatenate([-problem.phi[i], [0.0]]), 0.0

    def row_init(i):
        return np.concatenate([problem.phi[i], [0.0]]), 1.0

    def row_unsafe(i):
        return np.concatenate([-problem.phi[i], [1.0]]), 0.0

    def row_gen(i):
        return np.concatenate([problem.psi[i], [0.0]]), -problem.eps_gen

    return [
        ("nonneg", all_idx, row_nonneg),
        ("init", np.flatnonzero(problem.in_init), row_init),
        ("unsafe", np.flatnonzero(problem.in_unsafe), row_unsafe),
        ("gen", np.flatnonzero(problem.in_gen), row_gen),
    ]


def constraint_violations(problem: ScenarioProblem, theta: np.ndarray,
                          beta: float) -> dict:
    """Per-family violation arrays (positive means violated)."""
    v = problem.phi @ theta
    g = problem.psi @ theta
    return {
        "nonneg": -v,
        "init": np.where(problem.in_init, v - 1.0, -np.inf),
        "unsafe": np.where(problem.in_unsafe, beta - v, -np.inf),
        "gen": np.where(problem.in_gen, g + problem.eps_gen, -np.inf),
    }


def max_violation(problem: ScenarioProblem, theta: np.ndarray,
                  beta: float) -> float:
    viol = constraint_violations(problem, theta, beta)
    return float(max(np.max(val) for val in viol.values()))


def build_and_solve_lp(problem: ScenarioProblem, cfg: ScenarioConfig | None = None,
                       full: bool = False) -> LPResult:
    """Maximize beta over last-layer weights subject to all sampled
    constraints (plus beta >= 1).

    Constraint generation: solve on an active subset, scan every constraint
    for violations beyond tolerance, add the worst offenders per family,
    repeat to a fixpoint; a final full scan certifies optimality.  With
    ``full=True`` all rows enter at once (small N only).
    """
    cfg = cfg or ScenarioConfig()
    d = problem.d_v
    nv = d + 1
    c = np.zeros(nv)
    c[-1] = -1.0
    families = _family_rows(problem)
    ground_row = (np.concatenate([np.zeros(d), [-1.0]]), -1.0)

    active: list = [("ground", -1)]
    if full:
        for name, idx, _ in families:
            active.extend((name, int(i)) for i in idx)
    else:
        seed_k = cfg.cg_seed_rows if cfg.cg_seed_rows is not None else 2 * nv
        for name, idx, _ in families:
            active.extend((name, int(i)) for i in idx[:seed_k])
    if not any(name == "unsafe" and i >= 0 for name, i in active):
        raise LPUnbounded("no unsafe-region samples were drawn; the program "
                          "is unbounded in beta (configuration problem)")

    row_fns = {name: fn for name, _, fn in families}

    def materialize():
        rows, rhs = [], []
        for name, i in active:
            if name == "ground":
                a, b = ground_row
            else:
                a, b = row_fns[name](i)
            rows.append(a)
            rhs.append(b)
        return np.asarray(rows), np.asarray(rhs)

    active_set = set(active)
    grow_k = max(cfg.cg_add_rows, 1)
    for it in range(cfg.cg_max_iter):
        A, b = materialize()
        sol = solve_lp_ineq(c, A, b, tol=cfg.tol)
        if sol.status == "infeasible":
            raise LPInfeasible(
                f"scenario program infeasible with {len(active)} active rows",
                worst=None)
        if sol.status == "unbounded":
            # admit more rows of every family and retry
            added = 0
            for name, idx, _ in families:
                have = sum(1 for nm, _ in active if nm == name)
                for i in idx[have:have + 2 * nv]:
                    key = (name, int(i))
                    if key not in active_set:
                        active.append(key)
                        active_set.add(key)
                        added += 1
            if added == 0:
                raise LPUnbounded("scenario program unbounded in beta")
            continue
        if sol.status != "optimal":
            raise ConfigError("simplex iteration limit hit")
        theta, beta = sol.x[:d], float(sol.x[d])
        viol = constraint_violations(problem, theta, beta)
        worst = max(np.max(v) for v in viol.values())
        if worst <= cfg.tol:
            return LPResult(theta, beta, len(active), it + 1, float(worst))
        for name, _, _ in families:
            v = viol[name]
            order = np.argsort(-v, kind="stable")[:grow_k]
            for i in order:
                if v[i] > cfg.tol:
                    key = (name, int(i))
                    if key not in active_set:
                        active.append(key)
                        active_set.add(key)
    raise ConfigError("constraint generation did not converge")


# ---------------------------------------------------------------------------
# PAC accounting and validation


def pac_epsilon(N: int, d: int, delta: float, method: str = "closed-form") -> float:
    """Scenario sample-complexity bound inverted for epsilon.

    closed-form: eps = 2 (ln(1/delta) + d) / N.
    exact: solves sum_{i<d} C(N,i) eps^i (1-eps)^(N-i) = delta by bisection
    (the classical scenario tail), always at most the closed form.
    """
    if d < 1 or N <= d:
        raise ValueError("need N > d >= 1")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0,1)")
    closed = min(1.0, 2.0 * (np.log(1.0 / delta) + d) / N)
    if method == "closed-form":
        return closed
    if method != "exact":
        raise ValueError(f"unknown method {method!r}")
    lo, hi = 0.0, 1.0

    def tail(eps):
        return stats.binom.cdf(d - 1, N, eps)

    # tail is decreasing in eps; find tail(eps) = delta
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if tail(mid) > delta:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def clopper_pearson(k: int, n: int, confidence: float = 0.99):
    """Exact binomial confidence interval for k successes in n trials."""
    alpha = 1.0 - confidence
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2.0, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1.0 - alpha / 2.0, k + 1, n - k))
    return lo, hi


def holdout_violation(spec: ReachAvoidSpec, net: CertificateNet,
                      gen: GeneratorGraph, beta: float, M: int, seed: int,
                      eps_gen: float, weights: dict | None = None,
                      tol: float = 1e-9):
    """Fraction of fresh mixture samples violating the pointwise constraint
    function, with a 99% Clopper-Pearson interval."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 9001)))
    X, _ = sample_states(spec, M, rng, weights)
    masks = region_label_masks(spec, X)
    h = pointwise_h(net, gen, X, masks, beta, eps_gen)
    k = int(np.sum(h > tol))
    rate = k / M
    return rate, clopper_pearson(k, M), k


# ---------------------------------------------------------------------------
# end-to-end pipeline


def run_scenario(spec: ReachAvoidSpec, dynamics, cert_arch: CertArch,
                 controller, cfg: ScenarioConfig) -> dict:
    """Warm start, last-layer scenario LP, PAC accounting and holdout.

    Returns a report dict with a deterministic ``result`` section and a
    separate ``timing`` section.
    """
    t0 = time.perf_counter()
    warm_cfg = HardSatConfig(seed=cfg.seed, warm_epochs=cfg.warm_epochs,
                             warm_samples=cfg.warm_samples,
                             warm_batch=cfg.warm_batch, warm_lr=cfg.warm_lr)
    mode = "synthesize" if isinstance(controller, CtrlArch) else "verify"
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 7000)))
    net, ctrl, gen, store = _build_nets(spec, dynamics, mode, cert_arch,
                                        controller, rng)
    trace: list = []
    _warm_start(spec, gen, net, ctrl, store, warm_cfg, spec.beta, cfg.eps_gen,
                rng, trace, None)
    if mode == "synthesize":
        ctrl.trainable = False        # LP optimizes last-layer weights only
    t_warm = time.perf_counter()

    sample_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 9000)))
    X, labels = sample_states(spec, cfg.n_samples, sample_rng, cfg.weights)
    problem = build_scenario_problem(spec, net, gen, X, cfg.eps_gen, cfg.delta)
    t_feat = time.perf_counter()

    theta0 = theta_from_net(net)
    pretrained_violation = max_violation(problem, theta0, spec.beta)

    lp = build_and_solve_lp(problem, cfg)
    write_theta(net, lp.theta)
    t_lp = time.perf_counter()

    d = problem.d_v + (1 if cfg.count_beta_in_dim else 0)
    eps_closed = pac_epsilon(cfg.n_samples, d, cfg.delta, "closed-form")
    eps_exact = pac_epsilon(cfg.n_samples, d, cfg.delta, "exact")

    rate, ci, k = holdout_violation(spec, net, gen, lp.beta, cfg.holdout,
                                    cfg.seed + 1, cfg.eps_gen, cfg.weights)
    t_hold = time.perf_counter()

    result = {
        "mode": "scenario",
        "n_samples": cfg.n_samples,
        "pac_dimension": d,
        "d_v": problem.d_v,
        "delta": cfg.delta,
        "eps_gen": cfg.eps_gen,
        "beta_star": lp.beta,
        "certified_p": 1.0 - 1.0 / lp.beta,
        "epsilon_closed_form": eps_closed,
        "epsilon_exact": eps_exact,
        "lp_active_rows": lp.active_rows,
        "lp_iterations": lp.iterations,
        "lp_max_violation": lp.max_violation,
        "pretrained_max_violation": pretrained_violation,
        "pretrained_feasible": bool(pretrained_violation <= cfg.tol),
        "holdout_samples": cfg.holdout,
        "holdout_violations": k,
        "holdout_rate": rate,
        "holdout_ci99": list(ci),
        "region_counts": {name: int(np.sum(labels == i))
                          for i, name in enumerate(("init", "goal", "unsafe", "rest"))},
        "seed": cfg.seed,
    }
    timing = {
        "warm_s": t_warm - t0,
        "features_s": t_feat - t_warm,
        "lp_s": t_lp - t_feat,
        "holdout_s": t_hold - t_lp,
        "total_s": t_hold - t0,
    }
    return {"result": result, "timing": timing,
            "net": net, "gen": gen, "theta": lp.theta}
