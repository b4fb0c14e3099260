"""Config-driven command line: run experiments, evaluate bounds, fit rates,
validate schedules, and generate ready-to-run template configs.

The JSON config file is the primary interface (experiments have too many
parameters for flags); flags only override. Unknown config keys are errors.
Exit codes: 0 success, 2 validation/config failure, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bounds as bounds_mod
from . import estimators as est_mod
from . import geometry, problems, schedules
from .harness import (ExperimentConfig, default_checkpoints, dominance_check,
                      fit_rate, run_multistage, run_replicates)
from .optimizers import NumericFailureError, variant_from_name

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


RUN_KEYS = {
    "problem", "domain", "noise", "variant", "qhm_v", "step", "momentum",
    "estimator", "suffix_start", "theta0", "horizon", "checkpoints",
    "replicates", "master_seed", "workers", "envelope", "recursion_bound",
    "fit_window",
}
MULTISTAGE_KEYS = {
    "problem", "domain", "noise", "variant", "qhm_v", "momentum", "stages",
    "theta0", "replicates", "master_seed", "workers",
}

RUN_DEFAULTS = {
    "estimator": "last",
    "suffix_start": 0,
    "theta0": "random-interior",
    "checkpoints": None,
    "master_seed": 0,
    "qhm_v": None,
    "envelope": None,
    "recursion_bound": None,
    "fit_window": None,
}


def _fail_closed(cfg: dict, allowed: set, required: set, where: str):
    if not isinstance(cfg, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(cfg)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def build_problem(cfg: dict) -> problems.Problem:
    domain = geometry.domain_from_config(cfg["domain"])
    noise = _build_noise(cfg["noise"])
    spec = cfg["problem"]
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError("problem: expected a single-key object")
    (kind, p), = spec.items()
    if kind == "quadratic":
        _fail_closed(p, {"hessian_diag", "theta_star"},
                     {"hessian_diag", "theta_star"}, "problem.quadratic")
        return problems.Quadratic(hessian_diag=p["hessian_diag"],
                                  theta_star=p["theta_star"],
                                  domain=domain, noise=noise)
    if kind == "quad_plus_l1":
        _fail_closed(p, {"hessian_diag", "theta_star", "l1_weight"},
                     {"hessian_diag", "theta_star", "l1_weight"},
                     "problem.quad_plus_l1")
        return problems.QuadPlusL1(hessian_diag=p["hessian_diag"],
                                   theta_star=p["theta_star"],
                                   l1_weight=float(p["l1_weight"]),
                                   domain=domain, noise=noise)
    if kind == "erm_csv":
        _fail_closed(p, {"path"}, {"path"}, "problem.erm_csv")
        return problems.load_erm_csv(p["path"], domain, noise)
    raise ConfigError(f"unknown problem kind {kind!r}")


def _build_noise(cfg: dict):
    if not isinstance(cfg, dict) or len(cfg) != 1:
        raise ConfigError("noise: expected a single-key object")
    (kind, p), = cfg.items()
    if kind == "gaussian":
        _fail_closed(p, {"sigma2"}, {"sigma2"}, "noise.gaussian")
        return problems.Gaussian(sigma2=float(p["sigma2"]))
    if kind == "bounded_rademacher":
        _fail_closed(p, {"sigma2"}, {"sigma2"}, "noise.bounded_rademacher")
        return problems.BoundedRademacher(sigma2=float(p["sigma2"]))
    if kind == "minibatch":
        _fail_closed(p, {"batch_size"}, {"batch_size"}, "noise.minibatch")
        return problems.Minibatch(batch_size=int(p["batch_size"]))
    raise ConfigError(f"unknown noise kind {kind!r}")


def resolve_run_config(cfg: dict) -> dict:
    """Fill defaults and normalize; the result reruns byte-identically."""
    _fail_closed(cfg, RUN_KEYS,
                 {"problem", "domain", "noise", "variant", "step", "momentum",
                  "horizon", "replicates"}, "config")
    resolved = dict(RUN_DEFAULTS)
    resolved["workers"] = int(os.environ.get("SGMLAB_WORKERS", "1"))
    resolved.update(cfg)
    if resolved["checkpoints"] is None:
        resolved["checkpoints"] = list(default_checkpoints(int(resolved["horizon"])))
    return resolved


def build_experiment(resolved: dict, force_schedule: bool = False) -> ExperimentConfig:
    problem = build_problem(resolved)
    try:
        return ExperimentConfig(
            problem=problem,
            variant=variant_from_name(resolved["variant"], resolved.get("qhm_v")),
            step=schedules.step_schedule_from_config(resolved["step"]),
            momentum=schedules.momentum_schedule_from_config(resolved["momentum"]),
            estimator=resolved["estimator"],
            suffix_start=int(resolved["suffix_start"]),
            theta0=resolved["theta0"],
            horizon=int(resolved["horizon"]),
            checkpoints=tuple(resolved["checkpoints"]),
            replicates=int(resolved["replicates"]),
            master_seed=int(resolved["master_seed"]),
            workers=int(resolved["workers"]),
            force_schedule=force_schedule,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _build_bound(resolved: dict, config: ExperimentConfig):
    """Optional dominance target from 'envelope' or 'recursion_bound'."""
    if resolved.get("envelope") is not None:
        e = resolved["envelope"]
        _fail_closed(e, {"case", "constant", "beta"}, {"case"}, "envelope")
        return bounds_mod.RateEnvelope(case=e["case"],
                                       constant=e.get("constant"),
                                       beta=e.get("beta"))
    if resolved.get("recursion_bound") is not None:
        r = resolved["recursion_bound"]
        _fail_closed(r, {"kind", "E0"}, {"kind"}, "recursion_bound")
        consts = config.problem.constants()
        if "E0" in r and r["E0"] is not None:
            E0 = float(r["E0"])
        elif not isinstance(config.theta0, str):
            delta = config.theta0 - consts.theta_star
            E0 = float(delta @ delta)
        else:
            raise ConfigError("recursion_bound with random theta0 needs explicit E0")
        if r["kind"] == "sg":
            return bounds_mod.sg_recursion_bound(
                E0, config.step, consts.m, consts.M, consts.sigma2,
                config.horizon)
        if r["kind"] == "sgm":
            return bounds_mod.sgm_recursion_bound(
                E0, config.step, config.momentum, consts.m, consts.M,
                consts.sigma2, consts.L, config.horizon)
        raise ConfigError(f"unknown recursion_bound kind {r['kind']!r}")
    return None


def _format_float(x: float) -> str:
    return repr(float(x))


def write_summary_csv(path: Path, summary, bound=None, report=None):
    lines = []
    if bound is None:
        lines.append("checkpoint,mse_mean,mse_sem")
        for c, mean, sem in zip(summary.checkpoints, summary.mse_mean,
                                summary.mse_sem):
            lines.append(f"{c},{_format_float(mean)},{_format_float(sem)}")
    else:
        lines.append("checkpoint,mse_mean,mse_sem,bound_value,verdict")
        values = _bound_values(bound, summary, report)
        checked = set(report.checked)
        bad = {v[0] for v in report.violations}
        for c, mean, sem, bv in zip(summary.checkpoints, summary.mse_mean,
                                    summary.mse_sem, values):
            if c not in checked:
                verdict = "calibration"
            else:
                verdict = "violation" if c in bad else "ok"
            lines.append(f"{c},{_format_float(mean)},{_format_float(sem)},"
                         f"{_format_float(bv)},{verdict}")
    path.write_text("\n".join(lines) + "\n")


def _bound_values(bound, summary, report):
    cps = np.asarray(summary.checkpoints)
    if isinstance(bound, bounds_mod.BoundSequence):
        return bound.at(cps)
    env = bound
    if env.constant is None:
        env = env.calibrated(report.calibrated_constant)
    return np.asarray(env.at(cps), dtype=float)


def _check_output(path: Path, overwrite: bool):
    if path.exists() and not overwrite:
        raise ConfigError(f"{path} exists; pass --overwrite to replace it")


def cmd_run(args) -> int:
    cfg = _load_json(args.config)
    resolved = resolve_run_config(cfg)
    if args.seed is not None:
        resolved["master_seed"] = args.seed
    if args.workers is not None:
        resolved["workers"] = args.workers
    _apply_overrides(resolved, args.override)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    targets = [out_dir / "summary.csv", out_dir / "summary.json",
               out_dir / "config.resolved.json"]
    for t in targets:
        _check_output(t, args.overwrite)

    config = build_experiment(resolved, force_schedule=args.force_schedule)
    report = schedules.validate(config.step, config.momentum,
                                config.problem.constants().m, config.horizon)
    if not report.ok:
        if not args.force_schedule:
            print(f"schedule validation failed:\n{report}", file=sys.stderr)
            return EXIT_VALIDATION
        print(f"schedule warnings (forced):\n{report}", file=sys.stderr)

    bound = _build_bound(resolved, config)
    summary = run_replicates(config)
    dom = dominance_check(summary, bound) if bound is not None else None
    fit = None
    if resolved.get("fit_window") is not None:
        lo, hi = resolved["fit_window"]
        fit = fit_rate(summary, (lo, hi))

    write_summary_csv(targets[0], summary, bound, dom)
    payload = {
        "fit": None if fit is None else {
            "exponent": fit.exponent, "log_constant": fit.log_constant,
            "r2": fit.r2,
        },
        "dominance": None if dom is None else {
            "passed": dom.passed,
            "violations": [list(v) for v in dom.violations],
            "first_violation": dom.first_violation,
            "calibrated_constant": dom.calibrated_constant,
            "checked": list(dom.checked),
        },
        "metadata": {
            "config_hash": summary.config_hash,
            "master_seed": summary.master_seed,
            "replicates": summary.replicates,
            "estimator": summary.estimator,
            "wall_time_s": summary.wall_time,
        },
    }
    targets[1].write_text(json.dumps(payload, indent=2) + "\n")
    targets[2].write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_multistage(args) -> int:
    cfg = _load_json(args.config)
    _fail_closed(cfg, MULTISTAGE_KEYS,
                 {"problem", "domain", "noise", "momentum", "stages",
                  "replicates"}, "config")
    resolved = {"variant": "sgm", "qhm_v": None, "theta0": "random-interior",
                "master_seed": 0,
                "workers": int(os.environ.get("SGMLAB_WORKERS", "1"))}
    resolved.update(cfg)
    if args.seed is not None:
        resolved["master_seed"] = args.seed
    if args.workers is not None:
        resolved["workers"] = args.workers
    _apply_overrides(resolved, args.override)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    targets = [out_dir / "stages.csv", out_dir / "config.resolved.json"]
    for t in targets:
        _check_output(t, args.overwrite)

    problem = build_problem(resolved)
    momentum = schedules.momentum_schedule_from_config(resolved["momentum"])
    stages = [(s["a"], s["n"]) for s in resolved["stages"]]
    theta0 = resolved["theta0"]
    reports = run_multistage(
        problem, stages, momentum,
        variant=variant_from_name(resolved["variant"], resolved.get("qhm_v")),
        theta0=theta0, replicates=int(resolved["replicates"]),
        master_seed=int(resolved["master_seed"]),
        workers=int(resolved["workers"]))

    lines = ["stage,step,length,burn_in,suffix_mse_mean,suffix_mse_sem,plateau"]
    for k, r in enumerate(reports):
        lines.append(f"{k},{_format_float(r.step)},{r.length},{r.burn_in},"
                     f"{_format_float(r.suffix_mse_mean)},"
                     f"{_format_float(r.suffix_mse_sem)},"
                     f"{_format_float(r.plateau)}")
    targets[0].write_text("\n".join(lines) + "\n")
    targets[1].write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_bounds(args) -> int:
    cfg = _load_json(args.config)
    _fail_closed(cfg, {"bound"}, {"bound"}, "config")
    spec = cfg["bound"]
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError("bound: expected a single-key object")
    (kind, p), = spec.items()
    if kind == "sg_recursion":
        _fail_closed(p, {"E0", "step", "m", "M", "sigma2", "N"},
                     {"E0", "step", "m", "M", "sigma2", "N"},
                     "bound.sg_recursion")
        seq = bounds_mod.sg_recursion_bound(
            float(p["E0"]), schedules.step_schedule_from_config(p["step"]),
            float(p["m"]), float(p["M"]), float(p["sigma2"]), int(p["N"]))
    elif kind == "sgm_recursion":
        _fail_closed(p, {"E0", "step", "momentum", "m", "M", "sigma2", "L", "N"},
                     {"E0", "step", "momentum", "m", "M", "sigma2", "L", "N"},
                     "bound.sgm_recursion")
        seq = bounds_mod.sgm_recursion_bound(
            float(p["E0"]), schedules.step_schedule_from_config(p["step"]),
            schedules.momentum_schedule_from_config(p["momentum"]),
            float(p["m"]), float(p["M"]), float(p["sigma2"]), float(p["L"]),
            int(p["N"]))
    else:
        raise ConfigError(f"unknown bound kind {kind!r}")
    print("j,bound")
    for j, v in enumerate(seq.values):
        print(f"{j},{_format_float(v)}")
    return EXIT_OK


def cmd_fit(args) -> int:
    text = Path(args.summary).read_text().strip().splitlines()
    header = text[0].split(",")
    rows = [line.split(",") for line in text[1:]]
    cps = tuple(int(r[0]) for r in rows)
    mse = np.asarray([float(r[1]) for r in rows])
    sem = np.asarray([float(r[2]) for r in rows])
    if header[:3] != ["checkpoint", "mse_mean", "mse_sem"]:
        raise ConfigError(f"{args.summary}: unexpected header {header[:3]}")
    from .harness import RunSummary

    summary = RunSummary(checkpoints=cps, mse_mean=mse, mse_sem=sem,
                         estimator="unknown", replicates=0, master_seed=0,
                         config_hash="", wall_time=0.0)
    fit = fit_rate(summary, (args.window[0], args.window[1]))
    print(json.dumps({"exponent": fit.exponent,
                      "log_constant": fit.log_constant, "r2": fit.r2}))
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load_json(args.config)
    resolved = resolve_run_config(cfg)
    _apply_overrides(resolved, args.override)
    config = build_experiment(resolved)
    report = schedules.validate(config.step, config.momentum,
                                config.problem.constants().m, config.horizon)
    print(report)
    return EXIT_OK if report.ok else EXIT_VALIDATION


TEMPLATES = ("lemma1", "theorem1-i", "theorem1-ii", "theorem1-iii", "plateau",
             "theorem2", "corollary1")


def gen_config(template: str) -> dict:
    """A ready-to-run config reproducing the named acceptance experiment."""
    base_problem = {
        "problem": {"quadratic": {"hessian_diag": [1.0, 1.0],
                                  "theta_star": [0.0, 0.0]}},
        "domain": {"ball": {"center": [0.0, 0.0], "radius": 2.0}},
        "noise": {"gaussian": {"sigma2": 1.0}},
        "theta0": [1.0, 0.0],
        "replicates": 2000,
        "master_seed": 20240901,
    }
    if template == "lemma1":
        return {**base_problem, "variant": "sg",
                "step": {"polynomial": {"gamma": 1.0, "alpha": 1.0}},
                "momentum": {"zero": {}},
                "horizon": 100_000, "fit_window": [1000, 100_000]}
    if template == "theorem1-i":
        return {**base_problem, "variant": "sgm",
                "step": {"polynomial": {"gamma": 1.0, "alpha": 1.0}},
                "momentum": {"polynomial": {"c": 0.9, "beta": 1.0}},
                "horizon": 100_000, "fit_window": [1000, 100_000]}
    if template == "theorem1-ii":
        return {**base_problem, "variant": "sgm",
                "step": {"polynomial": {"gamma": 1.0, "alpha": 1.0}},
                "momentum": {"polynomial": {"c": 1.0, "beta": 1.0}},
                "horizon": 100_000,
                "envelope": {"case": "log_n_over_n"}}
    if template == "theorem1-iii":
        return {**base_problem, "variant": "sgm",
                "step": {"polynomial": {"gamma": 1.0, "alpha": 1.0}},
                "momentum": {"polynomial": {"c": 1.0, "beta": 0.5}},
                "horizon": 100_000, "fit_window": [1000, 100_000],
                "envelope": {"case": "inv_n_beta", "beta": 0.5}}
    if template == "plateau":
        return {**base_problem, "variant": "sg",
                "step": {"constant": {"a": 0.1}},
                "momentum": {"zero": {}},
                "estimator": "last", "horizon": 5000,
                "recursion_bound": {"kind": "sg"}}
    if template == "theorem2":
        return {**base_problem, "variant": "sgm",
                "step": {"constant": {"a": 0.1}},
                "momentum": {"polynomial": {"c": 0.9, "beta": 0.5}},
                "estimator": "suffix", "horizon": 5000}
    if template == "corollary1":
        return {
            "problem": base_problem["problem"],
            "domain": base_problem["domain"],
            "noise": base_problem["noise"],
            "theta0": base_problem["theta0"],
            "replicates": 2000,
            "master_seed": base_problem["master_seed"],
            "momentum": {"polynomial": {"c": 0.9, "beta": 0.5}},
            "stages": [{"a": 0.1, "n": 500}, {"a": 0.05, "n": 1000},
                       {"a": 0.025, "n": 2000}, {"a": 0.0125, "n": 4000}],
        }
    raise ConfigError(f"unknown template {template!r}; "
                      f"available: {', '.join(TEMPLATES)}")


def cmd_gen_config(args) -> int:
    cfg = gen_config(args.template)
    out = Path(args.out)
    _check_output(out, args.overwrite)
    out.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}")
    return EXIT_OK


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _apply_overrides(resolved: dict, overrides):
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must be key=value")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        target = resolved
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in target or not isinstance(target[part], dict):
                raise ConfigError(f"override path {key!r} not found")
            target = target[part]
        if parts[-1] not in target:
            raise ConfigError(f"override key {key!r} not in config")
        target[parts[-1]] = value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgmlab",
        description="Stochastic gradient / momentum convergence laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", required=True, help="JSON config path")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override master_seed")
        p.add_argument("--workers", type=int, default=None,
                       help="override worker count")
        p.add_argument("--force-schedule", action="store_true",
                       help="downgrade schedule validation errors to warnings")
        p.add_argument("--overwrite", action="store_true",
                       help="allow replacing existing output files")
        p.add_argument("-O", "--override", action="append", default=[],
                       metavar="KEY=VALUE", help="config override (dotted keys)")

    common(sub.add_parser("run", help="Monte Carlo experiment"))
    common(sub.add_parser("multistage", help="constant-and-drop experiment"))

    p_bounds = sub.add_parser("bounds", help="print a bound sequence as CSV")
    p_bounds.add_argument("--config", required=True)

    p_fit = sub.add_parser("fit", help="log-log rate fit of a summary.csv")
    p_fit.add_argument("--summary", required=True)
    p_fit.add_argument("--window", nargs=2, type=float, required=True,
                       metavar=("J_LO", "J_HI"))

    p_val = sub.add_parser("validate", help="check config and schedules only")
    p_val.add_argument("--config", required=True)
    p_val.add_argument("-O", "--override", action="append", default=[],
                       metavar="KEY=VALUE")

    p_gen = sub.add_parser("gen-config", help="write a template config")
    p_gen.add_argument("template", choices=None,
                       help=f"one of: {', '.join(TEMPLATES)}")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--overwrite", action="store_true")
    return parser


COMMANDS = {
    "run": cmd_run,
    "multistage": cmd_multistage,
    "bounds": cmd_bounds,
    "fit": cmd_fit,
    "validate": cmd_validate,
    "gen-config": cmd_gen_config,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
