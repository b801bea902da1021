"""Benchmark registry: reach-avoid problems with baked-in constants.

Each entry returns a full config dict in the same schema the YAML loader
accepts; user config files can reference an entry via ``system:`` and
override any field.  Angles may be written as strings with a ``deg``
suffix.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

__all__ = ["registry_ids", "registry_config"]


def _gbm_dynamics(n: int) -> dict:
    drift = []
    for i in range(1, n + 1):
        terms = [f"-0.5*x{i}"]
        if i + 1 <= n:
            terms.append(f"+ x{i+1}")
        if i - 1 >= 1:
            terms.append(f"- x{i-1}")
        terms.append(f"+ u{i}")
        drift.append(" ".join(terms))
    diffusion = [["0" if k != i else f"0.2*x{i+1}" for k in range(n)]
                 for i in range(n)]
    return {"n": n, "m_u": n, "n_w": n, "drift": drift, "diffusion": diffusion,
            "constants": {}}


def _gbm_regions(n: int) -> dict:
    init = [[45.0, 55.0], [-55.0, -45.0]]
    if n >= 3:
        init.append([50.0, 60.0])
    init += [[45.0, 55.0]] * (n - 3)
    exclude = [[-100.0, -80.0], [-100.0, 100.0]] + [[-100.0, -80.0]] * (n - 2)
    return {
        "domain": [[-100.0, 100.0]] * n,
        "init": init[:n],
        "goal": [[-25.0, 25.0]] * n,
        "safe": {"base": [[-100.0, 100.0]] * n, "exclude": [exclude]},
    }


_GBM_WIDTHS = {2: (64, 64), 3: (64, 64), 4: (64, 16), 5: (64, 16), 10: (64, 64)}


def _gbm_verify(n: int) -> dict:
    m1, m2 = _GBM_WIDTHS.get(n, (64, 64))
    init_cells = {2: [40, 40], 3: [10, 10, 10]}.get(n, [4] * n)
    return {
        "dynamics": _gbm_dynamics(n),
        "regions": _gbm_regions(n),
        "p_ra": 0.95,
        "certificate": {"m1": m1, "m2": m2, "s_in": [100.0] * n,
                        "s_out": 50.0, "output_bias": True},
        "controller": {"expression": [f"-x{i}" for i in range(1, n + 1)]},
        "hardsat": {
            "eps_gen": 0.5,
            "margins": {"nonneg": 0.02, "init": 0.02, "unsafe": 0.1,
                        "gen": 0.05},
            "topk": {"nonneg": 100, "init": 50, "unsafe": 200, "gen": 400},
            "k_refine": 40, "k_merge": 400, "k_max": 20000,
            "max_cells": 500_000, "init_cells": init_cells,
            "lr": 1e-3, "warm_epochs": 2500, "warm_samples": 10000,
            "warm_batch": 2048, "warm_lr": 1e-3,
            "warm_margins": {"nonneg": 0.2, "init": 0.5, "unsafe": 2.0,
                             "gen": 0.5},
        },
        "scenario": {"n_samples": 100_000, "delta": 1e-9, "eps_gen": 0.5,
                     "holdout": 1_000_000, "warm_epochs": 1200,
                     "warm_samples": 10000, "warm_batch": 2048,
                     "warm_lr": 2e-3},
        "simulate": {"dt": 1e-3, "horizon": 20.0, "rollouts": 1000},
        "seed": 0,
    }


def _gbm_noneq_synthesize() -> dict:
    cfg = _gbm_verify(2)
    cfg["regions"]["goal"] = [[20.0, 40.0], [-25.0, 25.0]]
    cfg["certificate"]["m1"] = 64
    cfg["certificate"]["m2"] = 64
    cfg["controller"] = {"architecture": {
        "hidden": [16],
        "outputs": [{"activation": "linear"}, {"activation": "linear"}],
        "s_in": [100.0, 100.0],
    }}
    cfg["hardsat"]["warm_epochs"] = 1500
    return cfg


def _pendulum_base() -> dict:
    pi = float(np.pi)
    return {
        "dynamics": {
            "n": 2, "m_u": 1, "n_w": 1,
            "constants": {"g": 9.81, "L": 0.5, "m": 0.15, "b": 0.1, "M": 6.0,
                          "sigma": 2.0},
            "drift": ["x2", "(g/L)*sin(x1) + (M*u1 - b*x2)/(m*L^2)"],
            "diffusion": [["0"], ["sigma"]],
        },
        "regions": {
            "domain": [[-2 * pi, 2 * pi], [-20.0, 20.0]],
            "init": [[3 * pi / 4, 5 * pi / 4], [-1.0, 1.0]],
            "goal": [[-pi / 2, pi / 2], [-4.0, 4.0]],
            "safe": {"base": [[-2 * pi, 2 * pi], [-20.0, 20.0]],
                     "exclude": [[[-2 * pi, -3 * pi / 2], [-20.0, -10.0]],
                                 [[3 * pi / 2, 2 * pi], [10.0, 20.0]]]},
        },
        "p_ra": 0.95,
        "certificate": {"m1": 64, "m2": 16, "s_in": [2 * pi, 20.0],
                        "s_out": 10.0, "output_bias": True},
        "hardsat": {
            "eps_gen": 0.2,
            "margins": {"nonneg": 0.02, "init": 0.02, "unsafe": 0.1,
                        "gen": 0.02},
            "topk": {"nonneg": 100, "init": 50, "unsafe": 200, "gen": 400},
            "k_refine": 40, "k_merge": 400, "k_max": 30000,
            "max_cells": 500_000, "init_cells": [24, 24],
            "lr": 2e-3, "warm_epochs": 2000, "warm_samples": 10000,
            "warm_batch": 2048, "warm_lr": 2e-3,
        },
        "scenario": {"n_samples": 100_000, "delta": 1e-9, "eps_gen": 0.2,
                     "holdout": 1_000_000, "warm_epochs": 2000,
                     "warm_samples": 10000, "warm_batch": 2048,
                     "warm_lr": 2e-3},
        "simulate": {"dt": 1e-3, "horizon": 20.0, "rollouts": 1000},
        "seed": 0,
    }


def _pendulum_verify() -> dict:
    cfg = _pendulum_base()
    # verification expects a pre-trained controller checkpoint from the user
    cfg["controller"] = {"checkpoint": None}
    return cfg


def _pendulum_synthesize() -> dict:
    cfg = _pendulum_base()
    cfg["certificate"]["m2"] = 64
    cfg["controller"] = {"architecture": {
        "hidden": [8],
        "outputs": [{"activation": "tanh", "range": [-1.0, 1.0]}],
        "s_in": [2 * float(np.pi), 20.0],
    }}
    return cfg


def _lorenz_synthesize() -> dict:
    # noise written as a single shared column; a diagonal 3-noise variant
    # would use n_w=3 with 0.1 on the diagonal
    return {
        "dynamics": {
            "n": 3, "m_u": 3, "n_w": 1,
            "constants": {},
            "drift": ["-10*x1 + 10*x2 + u1",
                      "x1*(28 - x3) - x2 + u2",
                      "x1*x2 - (8/3)*x3 + u3"],
            "diffusion": [["0.1"], ["0.1"], ["0.1"]],
        },
        "regions": {
            "domain": [[-6.0, 6.0]] * 3,
            "init": [[-1.0, 1.0]] * 3,
            "goal": [[-0.3, 0.3]] * 3,
            "safe": [[-5.5, 5.5]] * 3,
        },
        "p_ra": 0.95,
        "certificate": {"m1": 64, "m2": 64, "s_in": [6.0] * 3, "s_out": 10.0,
                        "output_bias": True},
        "controller": {"architecture": {
            "hidden": [],
            "outputs": [{"activation": "linear"}] * 3,
            "s_in": [6.0] * 3,
        }},
        "hardsat": {
            "eps_gen": 0.05,
            "margins": {"nonneg": 0.02, "init": 0.02, "unsafe": 0.1,
                        "gen": 0.01},
            "topk": {"nonneg": 200, "init": 100, "unsafe": 400, "gen": 800},
            "k_refine": 40, "k_merge": 400, "k_max": 40000,
            "max_cells": 500_000, "init_cells": [8, 8, 8],
            "lr": 2e-3, "warm_epochs": 2000, "warm_samples": 10000,
            "warm_batch": 2048, "warm_lr": 2e-3,
        },
        "scenario": {"n_samples": 100_000, "delta": 1e-9, "eps_gen": 0.05,
                     "holdout": 1_000_000, "warm_epochs": 2000,
                     "warm_samples": 10000, "warm_batch": 2048,
                     "warm_lr": 2e-3},
        "simulate": {"dt": 1e-3, "horizon": 20.0, "rollouts": 1000},
        "seed": 0,
    }


def _xv15_synthesize() -> dict:
    # aerodynamic lift/drag coefficient tables are not part of the registry:
    # the user must supply CL/CD CSV tables (alpha grid x beta grid), plus
    # mass and reference-area constants, before this config validates
    return {
        "dynamics": {
            "n": 3, "m_u": 3, "n_w": 1,
            "constants": {"g": 9.81, "m": 5900.0, "rho": 1.225, "S": 35.0,
                          "deg": float(np.pi / 180.0)},
            "drift": [
                "-g*sin(x2) + (cos(u2 + x3)*u1 - 0.5*rho*S*x1^2*CD(u2, x3))/m",
                "-g*cos(x2)/x1 + (sin(u2 + x3)*u1 + 0.5*rho*S*x1^2*CL(u2, x3))/(m*x1)",
                "u3",
            ],
            "diffusion": [["0.5"], ["0.1*deg"], ["0.1*deg"]],
            "tables": {"CL": None, "CD": None},
        },
        "regions": {
            "domain": [[0.5, 100.0], ["-20 deg", "20 deg"], [0.0, "90 deg"]],
            "init": [[28.0, 32.0], ["8.5 deg", "10.5 deg"],
                     ["58 deg", "62 deg"]],
            "goal": [[65.0, 85.0], ["-2 deg", "10 deg"],
                     ["25 deg", "35 deg"]],
            "safe": [[1.0, 99.5], ["-19 deg", "19 deg"],
                     ["1 deg", "89 deg"]],
        },
        "p_ra": 0.95,
        "certificate": {"m1": 64, "m2": 64,
                        "s_in": [100.0, float(np.pi / 9), float(np.pi / 2)],
                        "s_out": 10.0, "output_bias": True},
        "controller": {"architecture": {
            "hidden": [64],
            "outputs": [
                {"activation": "sigmoid", "range": [0.0, 80000.0]},
                {"activation": "tanh", "range": ["-15 deg", "15 deg"]},
                {"activation": "tanh", "range": ["-10 deg", "10 deg"]},
            ],
            "s_in": [100.0, float(np.pi / 9), float(np.pi / 2)],
        }},
        "hardsat": {
            "eps_gen": 0.05,
            "margins": {"nonneg": 0.02, "init": 0.02, "unsafe": 0.1,
                        "gen": 0.01},
            "topk": {"nonneg": 200, "init": 100, "unsafe": 400, "gen": 800},
            "k_refine": 40, "k_merge": 400, "k_max": 40000,
            "max_cells": 500_000, "init_cells": [10, 6, 8],
            "lr": 2e-3, "warm_epochs": 2000, "warm_samples": 10000,
            "warm_batch": 2048, "warm_lr": 2e-3,
        },
        "scenario": {"n_samples": 100_000, "delta": 1e-9, "eps_gen": 0.05,
                     "holdout": 1_000_000, "warm_epochs": 2000,
                     "warm_samples": 10000, "warm_batch": 2048,
                     "warm_lr": 2e-3},
        "simulate": {"dt": 1e-3, "horizon": 60.0, "rollouts": 1000},
        "seed": 0,
    }


_REGISTRY = {
    "gbm2d-verify": lambda: _gbm_verify(2),
    "gbm3d-verify": lambda: _gbm_verify(3),
    "gbm4d-verify": lambda: _gbm_verify(4),
    "gbm5d-verify": lambda: _gbm_verify(5),
    "gbm10d-verify": lambda: _gbm_verify(10),
    "gbm2d-noneq-synthesize": _gbm_noneq_synthesize,
    "pendulum-verify": _pendulum_verify,
    "pendulum-synthesize": _pendulum_synthesize,
    "lorenz-synthesize": _lorenz_synthesize,
    "xv15-synthesize": _xv15_synthesize,
}


def registry_ids() -> list[str]:
    return sorted(_REGISTRY)


def registry_config(system_id: str) -> dict:
    if system_id not in _REGISTRY:
        raise ConfigError(
            f"unknown system {system_id!r}; known: {', '.join(registry_ids())}")
    return _REGISTRY[system_id]()
