"""Command-line entry points.

    sdecert verify     --config problem.yaml --out runs/verify
    sdecert synthesize --config problem.yaml --out runs/syn
    sdecert scenario   --config problem.yaml --out runs/scen
    sdecert simulate   --config problem.yaml --out runs/sim
    sdecert export     --from runs/verify --out exported/

Exit codes: 0 = SAT/success, 2 = UNSAT, 1 = error.  Reports carry a
deterministic ``result`` section (seed and normalized-config hash included)
and a separate ``timing`` section.
"""

from __future__ import annotations

import argparse
import csv as _csv
import json
import os
import sys
import time
from pathlib import Path

__all__ = ["main", "run_verify", "run_synthesize", "run_scenario_cmd",
           "run_simulate"]


def _ensure_out(out_dir) -> Path:
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_report(out: Path, report: dict):
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)


def _outcome_report(cfg, outcome, extra=None) -> dict:
    result = {
        "mode": extra.pop("mode") if extra and "mode" in extra else "verify",
        "status": outcome.status,
        "certified_p": outcome.certified_p,
        "epochs_run": outcome.epochs_run,
        "sat_epoch": outcome.sat_epoch,
        "final_sat_loss": outcome.final_sat_loss,
        "eps_gen": outcome.eps_gen,
        "n_cells": outcome.partition.n_cells,
        "partition_counts": outcome.partition.counts_by_kind(),
        "message": outcome.message,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
    }
    if extra:
        result.update(extra)
    return {"result": result, "timing": {"total_s": outcome.wall_time}}


def _save_run_artifacts(out: Path, cfg, outcome, net, ctrl=None):
    from .config import controller_header
    from .generator import NetController
    from .nets import save_checkpoint

    outcome.partition.write_csv(out / "partition.csv")
    with open(out / "loss_trace.jsonl", "w") as fh:
        for rec in outcome.loss_trace:
            fh.write(json.dumps(rec) + "\n")
    header = {"kind": "certificate",
              "arch": {"n": net.n, "m1": net.m1, "m2": net.m2,
                       "output_bias": net.has_bias},
              "s_in": list(net.s_in), "s_out": net.s_out,
              "benchmark": cfg.raw.get("system_id"),
              "epoch": outcome.epochs_run}
    save_checkpoint(out / "certificate.ckpt", net.param_store(), header)
    if isinstance(ctrl, NetController):
        hdr = controller_header(ctrl.net)
        hdr.update({"benchmark": cfg.raw.get("system_id"),
                    "epoch": outcome.epochs_run})
        save_checkpoint(out / "controller.ckpt", ctrl.net.param_store("pi."), hdr)
    with open(out / "config.normalized.json", "w") as fh:
        json.dump(cfg.normalized(), fh, indent=2, sort_keys=True)


def _train(cfg, mode: str, out: Path | None):
    from .hardsat import incremental_train, train_hard_sat
    from .nets import CertificateNet

    log_path = (out / "loss_trace.jsonl") if out else None
    if cfg.incremental:
        outcome = incremental_train(
            cfg.spec, cfg.dynamics, mode, cfg.cert_arch, cfg.controller,
            cfg.hardsat, p_start=float(cfg.incremental["p_start"]),
            delta_p=float(cfg.incremental["delta_p"]), log_path=None)
    else:
        outcome = train_hard_sat(cfg.spec, cfg.dynamics, mode, cfg.cert_arch,
                                 cfg.controller, cfg.hardsat, log_path=None)
    net = CertificateNet.initialize(
        cfg.spec.dim, cfg.cert_arch.m1, cfg.cert_arch.m2,
        _s_in_vec(cfg), cfg.cert_arch.s_out,
        rng=__import__("numpy").random.default_rng(0),
        output_bias=cfg.cert_arch.output_bias)
    net.load_params(outcome.params)
    return outcome, net


def _s_in_vec(cfg):
    import numpy as np
    s = np.asarray(cfg.cert_arch.s_in, dtype=np.float64)
    return np.full(cfg.spec.dim, float(s)) if s.size == 1 else s


def _rebuild_controller(cfg, outcome, mode):
    """Reconstruct the (possibly trained) controller from run parameters."""
    import numpy as np
    from .generator import ExprController, NetController
    from .hardsat import CtrlArch

    ctrl_spec = cfg.controller
    if isinstance(ctrl_spec, ExprController) or ctrl_spec is None:
        return ctrl_spec
    if isinstance(ctrl_spec, NetController):
        return ctrl_spec
    if isinstance(ctrl_spec, CtrlArch):
        net = ctrl_spec.build(cfg.spec.dim, np.random.default_rng(0))
        net.load_params(outcome.params, "pi.")
        return NetController(net, trainable=(mode == "synthesize"))
    return ctrl_spec


def run_verify(cfg, out_dir=None) -> tuple[dict, int]:
    out = _ensure_out(out_dir) if out_dir else None
    outcome, net = _train(cfg, "verify", out)
    report = _outcome_report(cfg, outcome, extra={"mode": "verify"})
    if out:
        _save_run_artifacts(out, cfg, outcome, net)
        _write_report(out, report)
    return report, (0 if outcome.status == "SAT" else 2)


def run_synthesize(cfg, out_dir=None) -> tuple[dict, int]:
    from .mcsim import estimate_reach_avoid

    out = _ensure_out(out_dir) if out_dir else None
    outcome, net = _train(cfg, "synthesize", out)
    ctrl = _rebuild_controller(cfg, outcome, "synthesize")
    extra = {"mode": "synthesize"}
    if outcome.status == "SAT":
        mc = estimate_reach_avoid(cfg.spec, cfg.dynamics, ctrl,
                                  cfg.raw["simulate"]["rollouts"],
                                  cfg.simulate)
        extra["monte_carlo"] = mc
    report = _outcome_report(cfg, outcome, extra=extra)
    if out:
        _save_run_artifacts(out, cfg, outcome, net, ctrl)
        _write_report(out, report)
    return report, (0 if outcome.status == "SAT" else 2)


def run_scenario_cmd(cfg, out_dir=None) -> tuple[dict, int]:
    from .nets import save_checkpoint
    from .scenario import run_scenario

    out = _ensure_out(out_dir) if out_dir else None
    res = run_scenario(cfg.spec, cfg.dynamics, cfg.cert_arch, cfg.controller,
                       cfg.scenario)
    report = {"result": dict(res["result"]), "timing": res["timing"]}
    report["result"]["config_hash"] = cfg.config_hash()
    if out:
        header = {"kind": "certificate",
                  "arch": {"n": res["net"].n, "m1": res["net"].m1,
                           "m2": res["net"].m2,
                           "output_bias": res["net"].has_bias},
                  "s_in": list(res["net"].s_in), "s_out": res["net"].s_out,
                  "benchmark": cfg.raw.get("system_id"), "epoch": 0}
        save_checkpoint(out / "certificate.ckpt",
                        res["net"].param_store(), header)
        with open(out / "config.normalized.json", "w") as fh:
            json.dump(cfg.normalized(), fh, indent=2, sort_keys=True)
        _write_report(out, report)
    return report, 0


def run_simulate(cfg, out_dir=None) -> tuple[dict, int]:
    from .mcsim import estimate_reach_avoid, write_trajectories_csv

    out = _ensure_out(out_dir) if out_dir else None
    t0 = time.perf_counter()
    mc = estimate_reach_avoid(cfg.spec, cfg.dynamics, cfg.controller,
                              cfg.raw["simulate"]["rollouts"], cfg.simulate)
    result = {"mode": "simulate", "seed": cfg.seed,
              "config_hash": cfg.config_hash()}
    result.update(mc)
    report = {"result": result,
              "timing": {"total_s": time.perf_counter() - t0}}
    if out:
        stride_cfg = cfg.simulate
        stride_cfg.record_stride = max(1, stride_cfg.steps // 500)
        write_trajectories_csv(out / "trajectories.csv", cfg.spec,
                               cfg.dynamics, cfg.controller, 5, stride_cfg)
        _write_report(out, report)
    return report, 0


def run_export(from_dir, out_dir) -> int:
    src = Path(from_dir)
    out = _ensure_out(out_dir)
    if not src.is_dir():
        print(f"export: {src} is not a run directory", file=sys.stderr)
        return 1
    exported = []
    trace = src / "loss_trace.jsonl"
    if trace.exists():
        records = [json.loads(line) for line in trace.read_text().splitlines()
                   if line.strip()]
        if records:
            keys = sorted({k for r in records for k in r})
            with open(out / "loss_trace.csv", "w", newline="") as fh:
                writer = _csv.DictWriter(fh, fieldnames=keys)
                writer.writeheader()
                writer.writerows(records)
            exported.append("loss_trace.csv")
    for name in ("report.json", "partition.csv", "trajectories.csv",
                 "config.normalized.json"):
        p = src / name
        if p.exists():
            (out / name).write_bytes(p.read_bytes())
            exported.append(name)
    print(f"exported: {', '.join(exported) if exported else 'nothing found'}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sdecert",
        description="Neural reach-avoid certificates for SDEs")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("verify", "synthesize", "scenario", "simulate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None,
                       help="cap BLAS threads used by vectorized kernels")
        p.add_argument("--out", default=None)
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted config override")
    pe = sub.add_parser("export")
    pe.add_argument("--from", dest="from_dir", required=True)
    pe.add_argument("--out", required=True)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "export":
        return run_export(args.from_dir, args.out)
    if args.workers:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(args.workers))
    from .config import load_config
    from .errors import SdecertError

    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    try:
        cfg = load_config(args.config, overrides)
        runner = {"verify": run_verify, "synthesize": run_synthesize,
                  "scenario": run_scenario_cmd, "simulate": run_simulate}
        report, code = runner[args.command](cfg, args.out)
        print(json.dumps(report["result"], indent=2, sort_keys=True))
        return code
    except SdecertError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
