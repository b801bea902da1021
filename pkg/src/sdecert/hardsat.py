"""Bound-based certificate training with hard guarantees.

The training loss sums, over partition cells, the ReLU of each constraint's
worst-case violation according to sound interval bounds::

    L = w_nn  * sum_Q    ReLU(-V_lo(q))
      + w_0   * sum_Q0   ReLU(V_hi(q) - 1)
      + w_u   * sum_Qu   ReLU(beta - V_lo(q))
      + w_gen * sum_Qgen ReLU(Phi_hi(q) + eps_gen)

A zero loss certifies the reach-avoid probability threshold outright.  The
trainer warm-starts with a sampled pointwise loss, then iterates bound-loss
descent with periodic top-K refinement and margin merging until the loss
hits zero (SAT), the epoch cap is reached, or the cell budget overflows
(UNSAT).  In synthesis mode the controller parameters are updated jointly
through the generator term.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .bounds import CONSTRAINT_SLACK, bound_certificate, bound_generator
from .errors import CellBudgetExceeded, ConfigError
from .generator import ExprController, GeneratorGraph, NetController, build_generator
from .geometry import ReachAvoidSpec
from .nets import CertificateNet, ControllerNet, OutputChannel
from .partition import KINDS, Partition
from .sampling import sample_states
from .tape import Adam, ParamStore, Tape

__all__ = ["CertArch", "CtrlArch", "HardSatConfig", "TrainOutcome",
           "train_hard_sat", "incremental_train", "refinement_only",
           "dense_check", "bound_loss_report", "soft_loss_value"]


@dataclass
class CertArch:
    m1: int = 64
    m2: int = 64
    s_in: tuple = (1.0,)
    s_out: float = 1.0
    output_bias: bool = True

    def build(self, n: int, rng: np.random.Generator) -> CertificateNet:
        s_in = np.asarray(self.s_in, dtype=np.float64)
        if s_in.size == 1:
            s_in = np.full(n, float(s_in))
        return CertificateNet.initialize(n, self.m1, self.m2, s_in,
                                         self.s_out, rng, self.output_bias)


@dataclass
class CtrlArch:
    hidden: tuple = (16,)
    channels: tuple = ()          # OutputChannel specs
    s_in: tuple = (1.0,)

    def build(self, n: int, rng: np.random.Generator) -> ControllerNet:
        s_in = np.asarray(self.s_in, dtype=np.float64)
        if s_in.size == 1:
            s_in = np.full(n, float(s_in))
        return ControllerNet.initialize(n, list(self.hidden),
                                        list(self.channels), s_in, rng)


@dataclass
class HardSatConfig:
    """Loss weights, generator slack, cadences, budgets and optimizer knobs."""

    weights: dict = field(default_factory=lambda: {
        "nonneg": 1.0, "init": 1.0, "unsafe": 1.0, "gen": 1.0})
    eps_gen: float | None = None          # None: 1e-3 * typical |Phi| scale
    margins: dict = field(default_factory=lambda: {
        "nonneg": 0.0, "init": 0.0, "unsafe": 0.0, "gen": 0.0})
    topk: dict = field(default_factory=lambda: {
        "nonneg": 100, "init": 50, "unsafe": 100, "gen": 200})
    k_refine: int = 50
    k_merge: int = 200
    k_max: int = 20000
    max_cells: int = 500_000
    init_cells: tuple = (16,)
    refine_backoff_until: int = 0         # epochs with doubled refine period
    refine_accel_ratio: float = 0.0       # halve period once loss below ratio*initial
    merge_margins: dict | None = None     # None: defaults from beta/eps_gen
    lr: float = 1e-3
    warm_epochs: int = 2000
    warm_samples: int = 10000
    warm_batch: int | None = None
    warm_lr: float = 1e-3
    warm_margins: dict = field(default_factory=dict)
    sat_slack: float = CONSTRAINT_SLACK
    seed: int = 0
    log_every: int = 10

    def merge_margin_defaults(self, beta: float, eps_gen: float,
                              phi_scale: float) -> dict:
        if self.merge_margins is not None:
            out = dict(self.merge_margins)
        else:
            out = {"nonneg": 0.1, "init": 0.1, "unsafe": 0.1 * beta,
                   "gen": 0.1 * abs(eps_gen) + 0.01 * phi_scale}
        out["_eps_gen"] = eps_gen
        return out


@dataclass
class TrainOutcome:
    status: str                    # SAT | UNSAT
    params: ParamStore
    partition: Partition
    certified_p: float | None
    epochs_run: int
    sat_epoch: int | None
    final_sat_loss: float
    eps_gen: float
    loss_trace: list
    message: str = ""
    wall_time: float = 0.0


# ---------------------------------------------------------------------------
# losses


def _bound_terms(gen: GeneratorGraph, net: CertificateNet, arrays: dict,
                 beta: float, eps_gen: float,
                 tape: Tape | None = None, leaves: dict | None = None):
    """Raw per-cell constraint arguments (<= 0 means satisfied)."""
    lo, hi = arrays["lo"], arrays["hi"]
    VI = bound_certificate(net, lo, hi, tape=tape, leaves=leaves,
                           prefix=gen.cert_prefix)
    idx0 = np.flatnonzero(arrays["init"])
    idxu = np.flatnonzero(arrays["unsafe"])
    idxg = np.flatnonzero(arrays["gen"])
    if tape is not None:
        arg_nn = -VI.lo
        arg_0 = tape.take(VI.hi, idx0, axis=0) - 1.0
        arg_u = beta - tape.take(VI.lo, idxu, axis=0)
        if idxg.size:
            PhiI = bound_generator(gen, lo[idxg], hi[idxg], tape=tape, leaves=leaves)
            arg_g = PhiI.hi + eps_gen
        else:
            arg_g = tape.const(np.zeros(0))
    else:
        arg_nn = -VI.lo
        arg_0 = VI.hi[idx0] - 1.0
        arg_u = beta - VI.lo[idxu]
        arg_g = (bound_generator(gen, lo[idxg], hi[idxg]).hi + eps_gen
                 if idxg.size else np.zeros(0))
    return {"nonneg": (arg_nn, np.arange(len(arrays["ids"]))),
            "init": (arg_0, idx0), "unsafe": (arg_u, idxu),
            "gen": (arg_g, idxg)}


def _loss_from_terms(tape: Tape, terms: dict, cfg: HardSatConfig):
    total = None
    for kind in KINDS:
        arg, idx = terms[kind]
        if idx.size == 0:
            continue
        t = tape.sum(tape.relu(arg + cfg.margins[kind])) * cfg.weights[kind]
        total = t if total is None else total + t
    return total if total is not None else tape.const(np.zeros(()))


def _violation_report(terms: dict, arrays: dict, cfg: HardSatConfig):
    """Scores and satisfaction flags from the raw argument values."""
    ids = arrays["ids"]
    scores = {}
    kind_losses = {}
    sat_loss = 0.0
    stop_ok = True
    for kind in KINDS:
        arg, idx = terms[kind]
        vals = arg.value if hasattr(arg, "value") else np.asarray(arg)
        relu_margin = np.maximum(vals + cfg.margins[kind], 0.0)
        relu_sat = np.maximum(vals - cfg.sat_slack, 0.0)
        scores[kind] = {int(ids[i]): float(v)
                        for i, v in zip(idx, relu_margin) if v > 0.0}
        kind_losses[kind] = float(relu_margin.sum())
        sat_loss += float(relu_sat.sum()) * cfg.weights[kind]
        if np.any(vals + cfg.margins[kind] > cfg.sat_slack):
            stop_ok = False
    return scores, kind_losses, sat_loss, stop_ok


def bound_loss_report(gen: GeneratorGraph, net: CertificateNet, arrays: dict,
                      beta: float, eps_gen: float, cfg: HardSatConfig):
    """Frozen-parameter bound loss summary (no tape)."""
    terms = _bound_terms(gen, net, arrays, beta, eps_gen)
    return _violation_report(terms, arrays, cfg)


def soft_loss_value(tape: Tape, leaves: dict, gen: GeneratorGraph,
                    net: CertificateNet, X: np.ndarray, region_masks: dict,
                    beta: float, eps_gen: float, margins: dict | None = None):
    """Sampled pointwise constraint loss sum_i h(theta, beta, x_i).

    Optional margins tighten each threshold, leaving pointwise headroom
    that the interval bounds of the subsequent certified phase can consume.
    """
    m = margins or {}
    m_nn = m.get("nonneg", 0.0)
    m_0 = m.get("init", 0.0)
    m_u = m.get("unsafe", 0.0)
    m_g = m.get("gen", 0.0)
    V = net.tape_forward(tape, leaves, X, gen.cert_prefix)
    loss = tape.sum(tape.relu(m_nn - V))
    m0 = np.flatnonzero(region_masks["init"])
    if m0.size:
        loss = loss + tape.sum(tape.relu(tape.take(V, m0) - (1.0 - m_0)))
    mu = np.flatnonzero(region_masks["unsafe"])
    if mu.size:
        loss = loss + tape.sum(tape.relu((beta + m_u) - tape.take(V, mu)))
    mb = np.flatnonzero(region_masks["gen"])
    if mb.size:
        phi = gen.tape_phi_points(tape, leaves, X[mb])
        loss = loss + tape.sum(tape.relu(phi + eps_gen + m_g))
    return loss


def region_label_masks(spec: ReachAvoidSpec, X: np.ndarray) -> dict:
    """Geometric membership masks used by pointwise constraint evaluation."""
    return {
        "init": spec.init.contains(X),
        "unsafe": spec.unsafe.contains(X),
        "gen": spec.gen_region.contains(X),
    }


def pointwise_h(net: CertificateNet, gen: GeneratorGraph, X: np.ndarray,
                masks: dict, beta: float, eps_gen: float,
                chunk: int = 50000) -> np.ndarray:
    """h(theta, beta, x) per sample at the current (frozen) parameters."""
    V = np.concatenate([net.forward(X[s:s + chunk])
                        for s in range(0, len(X), chunk)]) if len(X) else np.zeros(0)
    h = np.maximum(-V, 0.0)
    h += np.where(masks["init"], np.maximum(V - 1.0, 0.0), 0.0)
    h += np.where(masks["unsafe"], np.maximum(beta - V, 0.0), 0.0)
    mb = np.flatnonzero(masks["gen"])
    if mb.size:
        phi = gen.eval(X[mb])
        h[mb] += np.maximum(phi + eps_gen, 0.0)
    return h


# ---------------------------------------------------------------------------
# training


def _build_nets(spec: ReachAvoidSpec, dynamics, mode: str, cert_arch: CertArch,
                controller, rng: np.random.Generator):
    net = cert_arch.build(spec.dim, rng)
    if mode == "verify":
        if isinstance(controller, ExprController):
            ctrl = controller
        elif isinstance(controller, ControllerNet):
            ctrl = NetController(controller, trainable=False)
        elif isinstance(controller, NetController):
            ctrl = NetController(controller.net, trainable=False)
        elif controller is None and dynamics.m_u == 0:
            ctrl = None
        else:
            raise ConfigError("verification needs a fixed controller")
    elif mode == "synthesize":
        if isinstance(controller, CtrlArch):
            ctrl = NetController(controller.build(spec.dim, rng), trainable=True)
        elif isinstance(controller, NetController) and controller.trainable:
            ctrl = controller
        else:
            raise ConfigError("synthesis needs a trainable controller architecture")
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    gen = build_generator(net, dynamics, ctrl)
    store = net.param_store()
    if isinstance(ctrl, NetController) and ctrl.trainable:
        cstore = ctrl.net.param_store("pi.")
        for name in cstore.names:
            store.add(name, cstore[name])
    return net, ctrl, gen, store


def _sync_nets(net: CertificateNet, ctrl, store: ParamStore):
    net.load_params(store)
    if isinstance(ctrl, NetController) and ctrl.trainable:
        ctrl.net.load_params(store, "pi.")


def _warm_start(spec, gen, net, ctrl, store, cfg: HardSatConfig, beta,
                eps_gen_guess, rng, trace, sink):
    if cfg.warm_epochs <= 0 or cfg.warm_samples <= 0:
        return
    X, _ = sample_states(spec, cfg.warm_samples, rng)
    masks = region_label_masks(spec, X)
    adam = Adam(store.size, lr=cfg.warm_lr)
    flat = store.pack()
    batch_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 7001)))
    for epoch in range(cfg.warm_epochs):
        if cfg.warm_batch is not None and cfg.warm_batch < len(X):
            sel = batch_rng.choice(len(X), size=cfg.warm_batch, replace=False)
            Xb = X[sel]
            mb = {k: v[sel] for k, v in masks.items()}
        else:
            Xb, mb = X, masks
        tape = Tape()
        leaves = store.leaves(tape)
        loss = soft_loss_value(tape, leaves, gen, net, Xb, mb, beta,
                               eps_gen_guess, margins=cfg.warm_margins)
        grads = tape.backward(loss)
        flat = adam.step(flat, store.grad_flat(tape, grads, leaves))
        store.unpack(flat)
        _sync_nets(net, gen.controller, store)
        if epoch % cfg.log_every == 0 or epoch == cfg.warm_epochs - 1:
            _log(trace, sink, {"phase": "warm", "epoch": epoch,
                               "loss": float(loss.value)})


def _auto_eps_gen(spec, gen, seed) -> float:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 7002)))
    from .sampling import sample_region
    X = sample_region(spec, "rest", rng, 1024)
    phi = gen.eval(X)
    return 1e-3 * max(1.0, float(np.median(np.abs(phi))))


def _log(trace, sink, record):
    trace.append(record)
    if sink is not None:
        sink.write(json.dumps(record) + "\n")


def train_hard_sat(spec: ReachAvoidSpec, dynamics, mode: str,
                   cert_arch: CertArch, controller, cfg: HardSatConfig,
                   log_path=None, beta: float | None = None) -> TrainOutcome:
    """Run the bound-based training loop; returns SAT with a certificate
    whose recomputed bound loss is zero (within the documented slack), or
    UNSAT on epoch/cell-budget exhaustion."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 7000)))
    beta = spec.beta if beta is None else beta
    net, ctrl, gen, store = _build_nets(spec, dynamics, mode, cert_arch,
                                        controller, rng)
    trace: list = []
    sink = open(log_path, "w") if log_path else None
    try:
        eps_guess = cfg.eps_gen if cfg.eps_gen is not None else 1.0
        _warm_start(spec, gen, net, ctrl, store, cfg, beta, eps_guess, rng,
                    trace, sink)
        eps_gen = cfg.eps_gen if cfg.eps_gen is not None \
            else _auto_eps_gen(spec, gen, cfg.seed)
        partition = Partition.init_grid(spec, cfg.init_cells, net.s_in,
                                        cfg.max_cells)
        return _bound_train(spec, gen, net, ctrl, store, partition, cfg, beta,
                            eps_gen, trace, sink, t0)
    finally:
        if sink is not None:
            sink.close()


def _bound_train(spec, gen, net, ctrl, store, partition, cfg, beta, eps_gen,
                 trace, sink, t0, adam=None) -> TrainOutcome:
    adam = adam or Adam(store.size, lr=cfg.lr)
    flat = store.pack()
    initial_loss = None
    sat_epoch = None
    status, message = "UNSAT", "epoch budget exhausted"
    epoch = 0
    merge_margins = cfg.merge_margin_defaults(beta, eps_gen, phi_scale=1.0)

    def numpy_bound_fn(lo, hi, need_gen):
        VI = bound_certificate(net, lo, hi, prefix=gen.cert_prefix)
        phi_hi = np.full(lo.shape[0], np.nan)
        idx = np.flatnonzero(need_gen)
        if idx.size:
            phi_hi[idx] = bound_generator(gen, lo[idx], hi[idx]).hi
        return VI.lo_val, VI.hi_val, phi_hi

    refine_period = max(1, cfg.k_refine)
    for epoch in range(cfg.k_max):
        arrays = partition.arrays()
        tape = Tape()
        leaves = store.leaves(tape)
        terms = _bound_terms(gen, net, arrays, beta, eps_gen, tape, leaves)
        scores, kind_losses, sat_loss, stop_ok = _violation_report(
            terms, arrays, cfg)
        total = sum(kind_losses[k] * cfg.weights[k] for k in KINDS)
        if initial_loss is None:
            initial_loss = max(total, 1e-30)
        if epoch % cfg.log_every == 0 or stop_ok:
            counts = partition.counts_by_kind()
            _log(trace, sink, {
                "phase": "bound", "epoch": epoch, "loss": total,
                "loss_nonneg": kind_losses["nonneg"],
                "loss_init": kind_losses["init"],
                "loss_unsafe": kind_losses["unsafe"],
                "loss_gen": kind_losses["gen"],
                "sat_loss": sat_loss, "n_cells": partition.n_cells,
                "n_init": counts["init"], "n_unsafe": counts["unsafe"],
                "n_gen": counts["gen"], "diam": partition.diam(),
                "wall": time.perf_counter() - t0})
        if stop_ok:
            status, message = "SAT", ""
            sat_epoch = epoch
            break

        loss_ref = _loss_from_terms(tape, terms, cfg)
        grads = tape.backward(loss_ref)
        flat = adam.step(flat, store.grad_flat(tape, grads, leaves))
        store.unpack(flat)
        _sync_nets(net, ctrl, store)

        period = refine_period
        if epoch < cfg.refine_backoff_until:
            period = 2 * refine_period
        elif cfg.refine_accel_ratio > 0 and total < cfg.refine_accel_ratio * initial_loss:
            period = max(refine_period // 2, 10)
        try:
            if epoch > 0 and epoch % period == 0:
                for kind in KINDS:
                    if scores[kind]:
                        partition.refine_topk(kind, scores[kind],
                                              cfg.topk.get(kind, 100))
            if cfg.k_merge > 0 and epoch > 0 and epoch % cfg.k_merge == 0:
                merged = partition.merge_siblings(merge_margins, numpy_bound_fn,
                                                  slack=cfg.sat_slack)
                if merged:
                    _log(trace, sink, {"phase": "merge", "epoch": epoch,
                                       "merged": merged,
                                       "n_cells": partition.n_cells})
        except CellBudgetExceeded as exc:
            status, message = "UNSAT", f"out of cell budget: {exc}"
            break

    final_sat = _final_sat_loss(gen, net, partition, beta, eps_gen, cfg)
    certified = spec.p_ra if (status == "SAT" and beta >= spec.beta) else (
        1.0 - 1.0 / beta if status == "SAT" else None)
    return TrainOutcome(status=status, params=store.copy(), partition=partition,
                        certified_p=certified, epochs_run=epoch,
                        sat_epoch=sat_epoch, final_sat_loss=final_sat,
                        eps_gen=eps_gen, loss_trace=trace, message=message,
                        wall_time=time.perf_counter() - t0)


def _final_sat_loss(gen, net, partition, beta, eps_gen, cfg) -> float:
    """Literal bound loss over the final partition with the documented slack
    folded into each ReLU argument."""
    arrays = partition.arrays()
    terms = _bound_terms(gen, net, arrays, beta, eps_gen)
    out = 0.0
    for kind in KINDS:
        arg, _ = terms[kind]
        out += float(np.maximum(np.asarray(arg) - cfg.sat_slack, 0.0).sum()) \
            * cfg.weights[kind]
    return out


def incremental_train(spec: ReachAvoidSpec, dynamics, mode: str,
                      cert_arch: CertArch, controller, cfg: HardSatConfig,
                      p_start: float, delta_p: float,
                      log_path=None) -> TrainOutcome:
    """Threshold schedule p_start, p_start + delta_p, ... capped at p_ra;
    each SAT stage warm-continues the next with its parameters and
    partition."""
    if not (0.0 < p_start <= spec.p_ra):
        raise ConfigError("p_start must lie in (0, p_ra]")
    if delta_p <= 0.0:
        raise ConfigError("delta_p must be positive")
    stages = [p_start]
    while stages[-1] < spec.p_ra:
        stages.append(min(stages[-1] + delta_p, spec.p_ra))

    t0 = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 7000)))
    net, ctrl, gen, store = _build_nets(spec, dynamics, mode, cert_arch,
                                        controller, rng)
    trace: list = []
    sink = open(log_path, "w") if log_path else None
    try:
        eps_guess = cfg.eps_gen if cfg.eps_gen is not None else 1.0
        _warm_start(spec, gen, net, ctrl, store, cfg, 1.0 / (1.0 - stages[0]),
                    eps_guess, rng, trace, sink)
        eps_gen = cfg.eps_gen if cfg.eps_gen is not None \
            else _auto_eps_gen(spec, gen, cfg.seed)
        partition = Partition.init_grid(spec, cfg.init_cells, net.s_in,
                                        cfg.max_cells)
        outcome = None
        for si, p in enumerate(stages):
            beta = 1.0 / (1.0 - p)
            _log(trace, sink, {"phase": "stage", "index": si, "p": p,
                               "beta": beta})
            outcome = _bound_train(spec, gen, net, ctrl, store, partition,
                                   cfg, beta, eps_gen, trace, sink, t0)
            if outcome.status != "SAT":
                outcome.message = f"stage {si} (p={p}) returned UNSAT"
                return outcome
            store = outcome.params
            _sync_nets(net, ctrl, store)
            partition = outcome.partition
        outcome.certified_p = spec.p_ra
        return outcome
    finally:
        if sink is not None:
            sink.close()


# ---------------------------------------------------------------------------
# frozen-certificate procedures


def refinement_only(spec: ReachAvoidSpec, gen: GeneratorGraph, beta: float,
                    eps_gen: float, grid_counts, max_rounds: int = 30,
                    max_cells: int = 2_000_000,
                    slack: float = CONSTRAINT_SLACK):
    """Refinement consistency loop: no parameter updates, split every
    violating cell each round; returns (reached_zero, rounds, partition).
    """
    net = gen.net
    partition = Partition.init_grid(spec, grid_counts, net.s_in, max_cells)
    cfg = HardSatConfig(sat_slack=slack)
    for rounds in range(max_rounds + 1):
        arrays = partition.arrays()
        terms = _bound_terms(gen, net, arrays, beta, eps_gen)
        ids = arrays["ids"]
        violating = set()
        for kind in KINDS:
            arg, idx = terms[kind]
            vals = np.asarray(arg)
            for i, v in zip(idx, vals):
                if v > slack:
                    violating.add(int(ids[i]))
        if not violating:
            return True, rounds, partition
        if rounds == max_rounds:
            break
        partition.refine_all_violating(violating)
    return False, max_rounds, partition


def dense_check(spec: ReachAvoidSpec, gen: GeneratorGraph, beta: float,
                eps_gen: float, n_samples: int, seed: int,
                slack: float = CONSTRAINT_SLACK, chunk: int = 100_000) -> dict:
    """Independent pointwise check of the certificate conditions on uniform
    domain samples (a necessary condition; the bound proof covers the rest).

    The generator condition is checked in its strict form Phi(x) < 0 with
    the documented slack, not against eps_gen.
    """
    net = gen.net
    rng = np.random.default_rng(np.random.SeedSequence((seed, 7003)))
    dom = spec.domain_box
    counts = {"nonneg": 0, "init": 0, "unsafe": 0, "gen": 0}
    worst = {"min_V": np.inf, "max_V_init": -np.inf, "min_V_unsafe": np.inf,
             "max_phi_gen": -np.inf}
    remaining = n_samples
    while remaining > 0:
        k = min(chunk, remaining)
        remaining -= k
        X = dom.sample(rng, k)
        V = net.forward(X)
        counts["nonneg"] += int(np.sum(V < -slack))
        worst["min_V"] = min(worst["min_V"], float(V.min()))
        m0 = spec.init.contains(X)
        if m0.any():
            counts["init"] += int(np.sum(V[m0] > 1.0 + slack))
            worst["max_V_init"] = max(worst["max_V_init"], float(V[m0].max()))
        mu = spec.unsafe.contains(X)
        if mu.any():
            counts["unsafe"] += int(np.sum(V[mu] < beta - slack))
            worst["min_V_unsafe"] = min(worst["min_V_unsafe"], float(V[mu].min()))
        mb = spec.gen_region.contains(X)
        if mb.any():
            phi = gen.eval(X[mb])
            counts["gen"] += int(np.sum(phi > slack))
            worst["max_phi_gen"] = max(worst["max_phi_gen"], float(phi.max()))
    counts["total"] = sum(counts.values())
    counts.update(worst)
    counts["n_samples"] = n_samples
    return counts
