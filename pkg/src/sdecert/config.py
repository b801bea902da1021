"""Declarative problem configuration: YAML loading, validation, defaults.

A config either names a registry system (``system: gbm2d-verify``) and
overrides fields, or spells out dynamics and regions inline.  Angles accept
a ``deg`` suffix ("20 deg").  Loading fills every default and the normalized
dump is canonical: load(dump(load(c))) == load(c).
"""

from __future__ import annotations

import csv as _csv
import hashlib
import json
from dataclasses import dataclass

import numpy as np
import yaml

from .benchmarks import registry_config
from .errors import ConfigError
from .expr import DynamicsSpec, TableFunction2D, parse_expr
from .generator import ExprController, NetController
from .geometry import Box, ReachAvoidSpec, Region
from .hardsat import CertArch, CtrlArch, HardSatConfig
from .mcsim import RolloutConfig
from .nets import ControllerNet, OutputChannel, load_checkpoint
from .scenario import ScenarioConfig

__all__ = ["ProblemConfig", "load_config", "loads_config", "parse_angle"]

_DEG = float(np.pi / 180.0)


def parse_angle(v) -> float:
    """Floats pass through; strings like '20 deg' convert to radians."""
    if isinstance(v, str):
        s = v.strip()
        if s.endswith("deg"):
            return float(s[:-3].strip()) * _DEG
        return float(s)
    return float(v)


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _boxes_from(value, what: str) -> list[list[list[float]]]:
    """Accept one box ([[lo,hi],...]) or a list of boxes."""
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{what}: expected a box or list of boxes")
    first = value[0]
    if isinstance(first, list) and first and isinstance(first[0], list):
        boxes = value
    else:
        boxes = [value]
    out = []
    for b in boxes:
        rows = []
        for pair in b:
            if not (isinstance(pair, list) and len(pair) == 2):
                raise ConfigError(f"{what}: each dimension needs [lo, hi]")
            rows.append([parse_angle(pair[0]), parse_angle(pair[1])])
        out.append(rows)
    return out


def _region_from(value, what: str) -> Region:
    if isinstance(value, dict):
        base = _boxes_from(value["base"], what)[0]
        excl = value.get("exclude", [])
        subs = [Box.from_intervals(b) for b in _boxes_from(excl, what)] if excl else []
        return Region.difference(Box.from_intervals(base), subs)
    boxes = [Box.from_intervals(b) for b in _boxes_from(value, what)]
    return Region.union(boxes)


def _load_table(path) -> TableFunction2D:
    """CSV layout: first row = b grid (first cell blank), first column =
    a grid, body = coefficient values."""
    with open(path, newline="") as fh:
        rows = list(_csv.reader(fh))
    if len(rows) < 2 or len(rows[0]) < 2:
        raise ConfigError(f"{path}: table needs a header row and column")
    b_grid = [float(v) for v in rows[0][1:]]
    a_grid = [float(r[0]) for r in rows[1:]]
    vals = [[float(v) for v in r[1:]] for r in rows[1:]]
    return TableFunction2D(a_grid, b_grid, vals)


_HARD_KEYS = ("weights", "eps_gen", "margins", "topk", "k_refine", "k_merge",
              "k_max", "max_cells", "init_cells", "refine_backoff_until",
              "refine_accel_ratio", "merge_margins", "lr", "warm_epochs",
              "warm_samples", "warm_batch", "warm_lr", "warm_margins", "log_every")
_SCEN_KEYS = ("n_samples", "delta", "eps_gen", "holdout",
              "count_beta_in_dim", "weights", "warm_epochs", "warm_samples",
              "warm_batch", "warm_lr", "cg_seed_rows", "cg_add_rows",
              "cg_max_iter")


@dataclass
class ProblemConfig:
    raw: dict                       # normalized dict (defaults filled)
    spec: ReachAvoidSpec
    dynamics: DynamicsSpec
    cert_arch: CertArch
    controller: object              # ExprController | NetController | CtrlArch
    hardsat: HardSatConfig
    scenario: ScenarioConfig
    simulate: RolloutConfig
    seed: int
    incremental: dict | None

    def normalized(self) -> dict:
        return json.loads(json.dumps(self.raw))

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path, overrides=()) -> ProblemConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return _build(data, overrides)


def loads_config(data: dict, overrides=()) -> ProblemConfig:
    return _build(json.loads(json.dumps(data)), overrides)


def _apply_override(data: dict, item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key.path=value")
    key, _, value = item.partition("=")
    node = data
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {key!r} crosses a non-dict")
    node[parts[-1]] = yaml.safe_load(value)


def _build(data: dict, overrides=()) -> ProblemConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    system = data.pop("system", None)
    if system:
        data = _deep_merge(registry_config(system), data)
        data["system_id"] = system
    for item in overrides:
        _apply_override(data, item)

    seed = int(data.get("seed", 0))
    p_ra = data.get("p_ra")
    if p_ra is None or not (0.0 < float(p_ra) < 1.0):
        raise ConfigError(f"p_ra must lie in (0,1), got {p_ra!r}")
    p_ra = float(p_ra)

    dyn_raw = data.get("dynamics")
    if not dyn_raw:
        raise ConfigError("missing dynamics block (or unknown system id)")
    tables = {}
    for name, path in (dyn_raw.get("tables") or {}).items():
        if path is None:
            raise ConfigError(
                f"dynamics table {name!r} needs a CSV path (aerodynamic "
                "coefficients are not bundled)")
        tables[name] = _load_table(path)
    try:
        dynamics = DynamicsSpec.from_strings(
            n=int(dyn_raw["n"]), m_u=int(dyn_raw.get("m_u", 0)),
            n_w=int(dyn_raw["n_w"]), drift=dyn_raw["drift"],
            diffusion=dyn_raw["diffusion"],
            constants={k: float(v) for k, v in
                       (dyn_raw.get("constants") or {}).items()},
            tables=tables)
    except KeyError as exc:
        raise ConfigError(f"dynamics block missing field {exc}") from None

    reg_raw = data.get("regions")
    if not reg_raw:
        raise ConfigError("missing regions block")
    try:
        spec = ReachAvoidSpec(
            domain=_region_from(reg_raw["domain"], "regions.domain"),
            init=_region_from(reg_raw["init"], "regions.init"),
            goal=_region_from(reg_raw["goal"], "regions.goal"),
            safe=_region_from(reg_raw["safe"], "regions.safe"),
            p_ra=p_ra)
    except KeyError as exc:
        raise ConfigError(f"regions block missing field {exc}") from None
    if spec.dim != dynamics.n:
        raise ConfigError(
            f"regions have dim {spec.dim} but dynamics declare n={dynamics.n}")

    cert_raw = dict(data.get("certificate") or {})
    s_in = cert_raw.get("s_in", [1.0] * dynamics.n)
    cert_arch = CertArch(
        m1=int(cert_raw.get("m1", 64)), m2=int(cert_raw.get("m2", 64)),
        s_in=tuple(float(v) for v in np.atleast_1d(s_in)),
        s_out=float(cert_raw.get("s_out", 1.0)),
        output_bias=bool(cert_raw.get("output_bias", True)))

    controller = _controller_from(data.get("controller"), dynamics, spec)

    hs_raw = dict(data.get("hardsat") or {})
    hs_kwargs = {k: hs_raw[k] for k in _HARD_KEYS if k in hs_raw}
    if "init_cells" in hs_kwargs:
        hs_kwargs["init_cells"] = tuple(int(c) for c in
                                        np.atleast_1d(hs_kwargs["init_cells"]))
    base_hs = HardSatConfig(seed=seed, **hs_kwargs)
    if "weights" in hs_raw:
        base_hs.weights = {**HardSatConfig().weights, **hs_raw["weights"]}
    if "margins" in hs_raw:
        base_hs.margins = {**HardSatConfig().margins, **hs_raw["margins"]}
    if "topk" in hs_raw:
        base_hs.topk = {**HardSatConfig().topk, **hs_raw["topk"]}
    incremental = hs_raw.get("incremental")

    sc_raw = dict(data.get("scenario") or {})
    sc_kwargs = {k: sc_raw[k] for k in _SCEN_KEYS if k in sc_raw}
    scenario = ScenarioConfig(seed=seed, **sc_kwargs)

    sim_raw = dict(data.get("simulate") or {})
    simulate = RolloutConfig(
        dt=float(sim_raw.get("dt", 1e-3)),
        horizon=float(sim_raw.get("horizon", 50.0)),
        max_steps=sim_raw.get("max_steps"),
        seed=seed)
    data["_rollouts"] = int(sim_raw.get("rollouts", 1000))

    normalized = _normalize_dict(data, spec, dynamics, cert_arch, base_hs,
                                 scenario, sim_raw, seed, incremental)
    return ProblemConfig(raw=normalized, spec=spec, dynamics=dynamics,
                         cert_arch=cert_arch, controller=controller,
                         hardsat=base_hs, scenario=scenario,
                         simulate=simulate, seed=seed,
                         incremental=incremental)


def _controller_from(raw, dynamics, spec):
    if raw is None:
        if dynamics.m_u == 0:
            return None
        raise ConfigError("dynamics use controls but no controller block given")
    sources = [k for k in ("expression", "checkpoint", "architecture")
               if raw.get(k) is not None]
    if len(sources) != 1:
        raise ConfigError(
            "controller block needs exactly one of expression | checkpoint "
            "| architecture")
    kind = sources[0]
    if kind == "expression":
        exprs = [parse_expr(s, set(dynamics.constants), set(dynamics.tables),
                            dynamics.n, dynamics.m_u) for s in raw["expression"]]
        if len(exprs) != dynamics.m_u:
            raise ConfigError(
                f"controller needs {dynamics.m_u} expressions, got {len(exprs)}")
        return ExprController(exprs)
    if kind == "checkpoint":
        header, store = load_checkpoint(raw["checkpoint"])
        if header.get("kind") != "controller":
            raise ConfigError(f"{raw['checkpoint']}: not a controller checkpoint")
        net = _controller_from_header(header)
        net.load_params(store, "pi.")
        return NetController(net, trainable=False)
    arch = raw["architecture"]
    channels = []
    for out in arch["outputs"]:
        act = out["activation"]
        rng_ = out.get("range")
        if rng_ is None:
            channels.append(OutputChannel(act))
        else:
            channels.append(OutputChannel(act, parse_angle(rng_[0]),
                                          parse_angle(rng_[1])))
    if len(channels) != dynamics.m_u:
        raise ConfigError(
            f"controller needs {dynamics.m_u} outputs, got {len(channels)}")
    s_in = arch.get("s_in", [1.0] * dynamics.n)
    return CtrlArch(hidden=tuple(int(h) for h in arch.get("hidden", [])),
                    channels=tuple(channels),
                    s_in=tuple(float(v) for v in np.atleast_1d(s_in)))


def _controller_from_header(header: dict) -> ControllerNet:
    arch = header["arch"]
    channels = [OutputChannel(c["activation"], c.get("low"), c.get("high"))
                for c in arch["channels"]]
    rng = np.random.default_rng(0)
    return ControllerNet.initialize(arch["n"], arch["hidden"], channels,
                                    np.asarray(arch["s_in"]), rng)


def controller_header(net: ControllerNet) -> dict:
    return {"kind": "controller", "arch": {
        "n": net.n,
        "hidden": [W.shape[0] for W in net.weights[:-1]],
        "channels": [{"activation": ch.activation, "low": ch.low,
                      "high": ch.high} for ch in net.channels],
        "s_in": list(net.s_in),
    }}


def _normalize_dict(data, spec, dynamics, cert_arch, hs, scenario, sim_raw,
                    seed, incremental) -> dict:
    hs_dict = {
        "weights": hs.weights, "eps_gen": hs.eps_gen, "margins": hs.margins,
        "topk": hs.topk, "k_refine": hs.k_refine, "k_merge": hs.k_merge,
        "k_max": hs.k_max, "max_cells": hs.max_cells,
        "init_cells": list(hs.init_cells),
        "refine_backoff_until": hs.refine_backoff_until,
        "refine_accel_ratio": hs.refine_accel_ratio,
        "merge_margins": hs.merge_margins, "lr": hs.lr,
        "warm_epochs": hs.warm_epochs, "warm_samples": hs.warm_samples,
        "warm_batch": hs.warm_batch, "warm_lr": hs.warm_lr,
        "warm_margins": hs.warm_margins,
        "log_every": hs.log_every, "incremental": incremental,
    }
    sc_dict = {
        "n_samples": scenario.n_samples, "delta": scenario.delta,
        "eps_gen": scenario.eps_gen, "holdout": scenario.holdout,
        "count_beta_in_dim": scenario.count_beta_in_dim,
        "weights": scenario.weights, "warm_epochs": scenario.warm_epochs,
        "warm_samples": scenario.warm_samples,
        "warm_batch": scenario.warm_batch, "warm_lr": scenario.warm_lr,
        "cg_seed_rows": scenario.cg_seed_rows,
        "cg_add_rows": scenario.cg_add_rows,
        "cg_max_iter": scenario.cg_max_iter,
    }
    out = {
        "system_id": data.get("system_id"),
        "seed": seed,
        "p_ra": spec.p_ra,
        "dynamics": {
            "n": dynamics.n, "m_u": dynamics.m_u, "n_w": dynamics.n_w,
            "constants": dynamics.constants,
            "drift": data["dynamics"]["drift"],
            "diffusion": data["dynamics"]["diffusion"],
            "tables": data["dynamics"].get("tables") or {},
        },
        "regions": _normalize_regions(data["regions"]),
        "certificate": {"m1": cert_arch.m1, "m2": cert_arch.m2,
                        "s_in": list(cert_arch.s_in),
                        "s_out": cert_arch.s_out,
                        "output_bias": cert_arch.output_bias},
        "controller": data.get("controller"),
        "hardsat": hs_dict,
        "scenario": sc_dict,
        "simulate": {"dt": float(sim_raw.get("dt", 1e-3)),
                     "horizon": float(sim_raw.get("horizon", 50.0)),
                     "max_steps": sim_raw.get("max_steps"),
                     "rollouts": data.get("_rollouts", 1000)},
    }
    return json.loads(json.dumps(out))


def _normalize_regions(reg_raw: dict) -> dict:
    out = {}
    for key in ("domain", "init", "goal", "safe"):
        v = reg_raw[key]
        if isinstance(v, dict):
            out[key] = {"base": _boxes_from(v["base"], key)[0],
                        "exclude": _boxes_from(v.get("exclude", []), key)
                        if v.get("exclude") else []}
        else:
            boxes = _boxes_from(v, key)
            out[key] = boxes[0] if len(boxes) == 1 else boxes
    return out
