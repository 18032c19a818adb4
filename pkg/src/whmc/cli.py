"""Config-driven experiment runner: ``whmc {estimate,validate,rates} --config run.yaml``.

Every output carries the seed, a hash of the resolved config and a version string.
Timing columns (``wall_ms``) and the ``timestamp`` field are the only parts of an
output that change between reruns of the same config.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import subprocess
import sys
from importlib import metadata
from pathlib import Path

import jsonschema
import numba
import yaml

from .diagnostics import (
    bm_barrier_price,
    bm_barrier_price_gamma,
    bm_barrier_price_T,
    complexity_study,
    fit_rates,
    theoretical_rate_curves,
    validation_suite,
)
from .estimators import LevelPlan, mlmc_estimate, mlmc_run, pilot_levels, single_level_estimate
from .factors import BracketingError, CancellationError, SamplingError, factor_options
from .models import BetaClass, BetaParams, BrownianMotion, QuadratureError
from .payoffs import BarrierPayoff, make_payoff
from .rng import StreamFamily

log = logging.getLogger("whmc")

SCHEMA_VERSION = 1
LEVEL_COLUMNS = ("level", "n", "M", "mean", "var", "cost_units", "wall_ms")
DIAGNOSTIC_COLUMNS = ("check", "params", "estimate", "reference", "se", "z", "status")
DECAY_COLUMNS = ("level", "n", "log2_n", "var_diff", "abs_diff", "var_level", "mean_cost", "cost_per_n")
COMPLEXITY_COLUMNS = ("method", "L", "n_L", "eps", "cost", "rmse", "stat_error", "estimate")
THEORY_COLUMNS = ("method", "variation", "rho", "rate", "approximate", "provenance")

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
_NUMERICAL = (QuadratureError, BracketingError, CancellationError, SamplingError, ArithmeticError)

_POS = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["model"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "model": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["bm", "beta"]}},
            "allOf": [
                {"if": {"properties": {"kind": {"const": "bm"}}},
                 "then": {"additionalProperties": False,
                          "properties": {"kind": {}, "mu": {"type": "number"}, "sigma": _POS}}},
                {"if": {"properties": {"kind": {"const": "beta"}}},
                 "then": {"additionalProperties": False,
                          "properties": {"kind": {}, "lam": {"type": "number"},
                                         **{k: {"type": "number"} for k in
                                            ("sigma", "a", "a1", "a2", "b1", "b2", "c1", "c2",
                                             "lambda1", "lambda2")}}}},
            ],
        },
        "horizon": {"enum": ["gamma", "T"]},
        "t": _POS,
        "payoff": {"type": "object", "required": ["kind"]},
        "plan": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["single", "multilevel"]}},
            "allOf": [
                {"if": {"properties": {"kind": {"const": "single"}}},
                 "then": {"required": ["n", "M"], "additionalProperties": False,
                          "properties": {"kind": {}, "n": _POS_INT,
                                         "M": {"type": "integer", "minimum": 2}}}},
                {"if": {"properties": {"kind": {"const": "multilevel"}}},
                 "then": {"required": ["n0", "L"], "additionalProperties": False,
                          "oneOf": [{"required": ["target_error"]}, {"required": ["M"]}],
                          "properties": {"kind": {}, "n0": _POS_INT, "L": {"type": "integer", "minimum": 0},
                                         "s": {"type": "integer", "minimum": 2},
                                         "target_error": _POS, "pilot": {"type": "integer", "minimum": 2},
                                         "alpha": _POS, "extension": {"enum": ["grid", "direct"]},
                                         "M": {"type": "array", "items": {"type": "integer", "minimum": 2}}}}},
            ],
        },
        "factors": {
            "type": "object", "additionalProperties": False,
            "properties": {"truncation_N": {"anyOf": [_POS_INT, {"type": "null"}]},
                           "method": {"enum": ["series", "product"]}},
        },
        "validate": {
            "type": "object", "additionalProperties": False,
            "properties": {"samples": {"type": "integer", "minimum": 100},
                           "ns": {"type": "array", "minItems": 1, "items": _POS_INT}},
        },
        "rates": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "n0": _POS_INT, "L": {"type": "integer", "minimum": 4},
                "samples": {"type": "integer", "minimum": 2},
                "complexity": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"enabled": {"type": "boolean"}, "n0": _POS_INT,
                                   "levels": {"type": "array", "minItems": 2,
                                              "items": {"type": "integer", "minimum": 1}},
                                   "eps0": _POS, "pilot": {"type": "integer", "minimum": 2}, "alpha": _POS},
                },
            },
        },
        "output": {"type": "object", "additionalProperties": False, "properties": {"dir": {"type": "string"}}},
    },
}

DEFAULTS = {
    "seed": 0,
    "horizon": "gamma",
    "t": 1.0,
    "payoff": {"kind": "barrier", "K": 1.0, "b": 0.2, "x0": 0.0},
    "factors": {"truncation_N": None, "method": "series"},
    "validate": {"samples": 200_000, "ns": [1, 4, 16, 64]},
    "rates": {"n0": 8, "L": 7, "samples": 20_000,
              "complexity": {"enabled": True, "n0": 1, "levels": [5, 6, 7, 8, 9, 10, 11], "eps0": 0.004,
                             "pilot": 10_000, "alpha": 0.25}},
    "output": {"dir": "results"},
}


class ConfigError(ValueError):
    """The config file is missing, unreadable or fails the schema."""


# ---------------------------------------------------------------- config

def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        # a payoff given in the file replaces the default one whole
        nested = isinstance(v, dict) and isinstance(base.get(k), dict) and k != "payoff"
        out[k] = _merge(base[k], v) if nested else v
    return out


def resolve_config(raw, seed: int | None = None) -> dict:
    """Validate a parsed config and fill in defaults; ``seed`` overrides the file's."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        if seed < 0:
            raise ConfigError("--seed must be nonnegative")
        cfg["seed"] = int(seed)
    if cfg["horizon"] == "T" and cfg["model"]["kind"] != "bm":
        raise ConfigError("horizon: T is only available for model kind bm")
    plan = cfg.get("plan")
    if plan and plan["kind"] == "multilevel" and "M" in plan and len(plan["M"]) != plan["L"] + 1:
        raise ConfigError(f"plan/M: need L + 1 = {plan['L'] + 1} sample sizes")
    # constructing the objects runs their own parameter checks
    try:
        build_model(cfg["model"])
        make_payoff(cfg["payoff"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path, seed: int | None = None) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    return resolve_config(raw, seed)


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON form (output location excluded)."""
    body = {k: v for k, v in cfg.items() if k != "output"}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def build_model(spec: dict):
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "bm":
        return BrownianMotion(float(spec.get("mu", 0.0)), float(spec.get("sigma", 1.0)))
    if "lam" in spec:
        lam = float(spec.pop("lam"))
        spec.setdefault("lambda1", lam)
        spec.setdefault("lambda2", lam)
    return BetaClass(BetaParams(**{k: float(v) for k, v in spec.items()}))


def version_string() -> str:
    try:
        base = metadata.version("whmc")
    except metadata.PackageNotFoundError:
        base = "0+unknown"
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{base}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


# ---------------------------------------------------------------- output helpers

def _clean(x):
    if isinstance(x, float):
        return x if math.isfinite(x) else None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n")


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow(["" if v is None or (isinstance(v, float) and math.isnan(v)) else v
                        for v in (r[c] for c in columns)])


def _level_rows(stats):
    return [{c: getattr(s, c) for c in LEVEL_COLUMNS} for s in stats]


def _diag(check, params="", estimate=None, reference=None, se=None, z=None, status="info"):
    return {"check": check, "params": params, "estimate": estimate, "reference": reference,
            "se": se, "z": z, "status": status}


def _envelope(cfg: dict, command: str) -> dict:
    return {"command": command, "seed": cfg["seed"], "config_hash": config_hash(cfg),
            "version": version_string(), "schema_version": SCHEMA_VERSION, "config": cfg,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}


# ---------------------------------------------------------------- subcommands

def _bm_oracle(model, cfg, payoff, n):
    if not (isinstance(model, BrownianMotion) and isinstance(payoff, BarrierPayoff)):
        return None
    t = cfg["t"]
    law = bm_barrier_price_gamma if cfg["horizon"] == "gamma" else bm_barrier_price_T
    return {"horizon_price": law(model.mu, model.sigma, n, t, payoff),
            "fixed_t_price": bm_barrier_price(model.mu, model.sigma, t, payoff)}


def run_estimate(cfg: dict, out: Path) -> int:
    model, payoff = build_model(cfg["model"]), make_payoff(cfg["payoff"])
    plan = cfg.get("plan")
    if plan is None:
        raise ConfigError("plan: required for estimate")
    streams = StreamFamily(cfg["seed"])
    t, horizon = cfg["t"], cfg["horizon"]
    diags = []
    if plan["kind"] == "single":
        res = single_level_estimate(model, plan["n"], plan["M"], t, payoff, streams, horizon)
        result = {"kind": "single", "estimate": res.estimate, "stat_error": res.stat_error,
                  "variance": res.variance, "total_cost": res.cost, "n": res.n, "M": res.M}
        levels = [{"level": 0, "n": res.n, "M": res.M, "mean": res.estimate, "var": res.variance,
                   "cost_units": res.cost, "wall_ms": res.wall_ms}]
        n_fine = res.n
        estimate, se = res.estimate, res.stat_error
    else:
        s = plan.get("s", 2)
        alpha = plan.get("alpha", 0.25)
        ext = plan.get("extension", "grid")
        if "M" in plan:
            rep = mlmc_estimate(model, LevelPlan(plan["n0"], plan["L"], tuple(plan["M"]), s), t, payoff,
                                streams, horizon, ext, alpha)
        else:
            rep, _ = mlmc_run(model, plan["n0"], plan["L"], t, payoff, streams, plan["target_error"],
                              plan.get("pilot", 1000), s, horizon, ext, alpha)
        result = {"kind": "multilevel", **rep.to_dict()}
        levels = _level_rows(rep.per_level)
        n_fine = rep.per_level[-1].n
        estimate, se = rep.estimate, rep.stat_error
        diags.append(_diag("bias_proxy", f"alpha={alpha:g}", rep.bias_proxy))
        corr = rep.per_level[1:]
        if len(corr) >= 4 and all(c.var > 0 for c in corr) and all(c.abs_mean > 0 for c in corr):
            vf = fit_rates([c.n for c in corr], [c.var for c in corr])
            af = fit_rates([c.n for c in corr], [c.abs_mean for c in corr])
            result["variance_rate"] = {"beta_hat": -vf.slope, "r_squared": vf.r_squared}
            result["mean_abs_rate"] = {"alpha_hat": -af.slope, "r_squared": af.r_squared}
            diags.append(_diag("variance_decay_rate", f"levels 1..L; r2={vf.r_squared:.4f}", -vf.slope))
            diags.append(_diag("mean_abs_decay_rate", f"levels 1..L; r2={af.r_squared:.4f}", -af.slope))
    if not math.isfinite(estimate):
        raise FloatingPointError("estimate is not finite")
    oracle = _bm_oracle(model, cfg, payoff, n_fine)
    if oracle is not None:
        z = (estimate - oracle["horizon_price"]) / se if se > 0 else math.inf
        oracle["z"] = z
        result["oracle"] = oracle
        diags.append(_diag("bm_barrier_oracle", f"{horizon},n={n_fine}", estimate, oracle["horizon_price"], se, z,
                           "pass" if abs(z) <= 3 else "fail"))
    report = _envelope(cfg, "estimate")
    report["result"] = result
    write_json(out / "report.json", report)
    write_csv(out / "levels.csv", LEVEL_COLUMNS, levels)
    write_csv(out / "diagnostics.csv", DIAGNOSTIC_COLUMNS, diags)
    print(f"estimate {estimate:.6g} +- {se:.2g}")
    return EXIT_OK


def run_validate(cfg: dict, out: Path) -> int:
    model, payoff = build_model(cfg["model"]), make_payoff(cfg["payoff"])
    v = cfg["validate"]
    pay = payoff if isinstance(payoff, BarrierPayoff) else None
    rows = validation_suite(model, cfg["t"], StreamFamily(cfg["seed"]), v["samples"], tuple(v["ns"]), pay)
    table = [{"check": r.check, "params": r.params, "estimate": r.estimate, "reference": r.reference,
              "se": r.se, "z": r.z, "status": r.status} for r in rows]
    failed = [r for r in table if r["status"] == "fail"]
    report = _envelope(cfg, "validate")
    report["result"] = {"checks": len(table), "failed": len(failed),
                        "warned": sum(r["status"] == "warn" for r in table), "passed": not failed}
    write_json(out / "report.json", report)
    write_csv(out / "diagnostics.csv", DIAGNOSTIC_COLUMNS, table)
    for r in table:
        print(f"{r['status']:>4}  {r['check']:<26} {r['params']:<24} z={r['z']:.3g}")
    return EXIT_VALIDATION if failed else EXIT_OK


def run_rates(cfg: dict, out: Path) -> int:
    model, payoff = build_model(cfg["model"]), make_payoff(cfg["payoff"])
    r = cfg["rates"]
    streams = StreamFamily(cfg["seed"])
    t, horizon = cfg["t"], cfg["horizon"]
    stats = pilot_levels(model, r["n0"], r["L"], t, payoff, streams, r["samples"], 2, horizon)
    decay = []
    for st in stats:
        # plain estimator at the same n, on its own replica
        plain = single_level_estimate(model, st.n, r["samples"], t, payoff,
                                      StreamFamily(cfg["seed"], st.level, 1), horizon)
        decay.append({"level": st.level, "n": st.n, "log2_n": math.log2(st.n),
                      "var_diff": st.var if st.level else None,
                      "abs_diff": st.abs_mean if st.level else None,
                      "var_level": plain.variance, "mean_cost": st.mean_cost, "cost_per_n": st.mean_cost / st.n})
    corr = stats[1:]
    vf = fit_rates([c.n for c in corr], [c.var for c in corr])
    af = fit_rates([c.n for c in corr], [c.abs_mean for c in corr])
    lf = fit_rates([d["n"] for d in decay], [d["var_level"] for d in decay])
    cf = fit_rates([c.n for c in corr], [c.mean_cost for c in corr])
    diags = [
        _diag("variance_decay_rate", f"levels 1..L; r2={vf.r_squared:.4f}", -vf.slope),
        _diag("mean_abs_decay_rate", f"levels 1..L; r2={af.r_squared:.4f}", -af.slope),
        _diag("level_variance_slope", "levels 0..L", lf.slope, 0.0, None, None, "info"),
        _diag("cost_vs_n_slope", "levels 1..L", cf.slope, 1.0, None, None,
              "pass" if abs(cf.slope - 1.0) <= 0.1 else "fail"),
    ]
    result = {"beta_hat": -vf.slope, "beta_r_squared": vf.r_squared, "alpha_hat": -af.slope,
              "level_variance_slope": lf.slope, "cost_slope": cf.slope}
    complexity = []
    cx = r["complexity"]
    if cx["enabled"]:
        pts, ms, ss = complexity_study(model, payoff, t, cx["n0"], cx["levels"], cx["eps0"], streams,
                                       cx["alpha"], cx["pilot"])
        for p in pts:
            complexity.append({"method": "MLWH", "L": p.L, "n_L": p.n_L, "eps": p.eps, "cost": p.mlmc_cost,
                               "rmse": p.mlmc_rmse, "stat_error": p.mlmc_stat, "estimate": p.mlmc_estimate})
        for p in pts:
            complexity.append({"method": "WHMC", "L": p.L, "n_L": p.n_L, "eps": p.eps, "cost": p.single_cost,
                               "rmse": p.single_rmse, "stat_error": p.single_stat, "estimate": p.single_estimate})
        diags.append(_diag("rmse_cost_slope_mlwh", "log10", ms))
        diags.append(_diag("rmse_cost_slope_whmc", "log10", ss, None, None, None,
                           "pass" if ms < ss else "fail"))
        result.update(mlwh_slope=ms, whmc_slope=ss)
    theory = theoretical_rate_curves()
    report = _envelope(cfg, "rates")
    report["result"] = result
    write_json(out / "report.json", report)
    write_csv(out / "levels.csv", LEVEL_COLUMNS, _level_rows(stats))
    write_csv(out / "decay.csv", DECAY_COLUMNS, decay)
    write_csv(out / "complexity.csv", COMPLEXITY_COLUMNS, complexity)
    write_csv(out / "theory.csv", THEORY_COLUMNS, theory)
    write_csv(out / "diagnostics.csv", DIAGNOSTIC_COLUMNS, diags)
    print(f"beta_hat {-vf.slope:.3f} (r2 {vf.r_squared:.3f}), cost slope {cf.slope:.3f}")
    return EXIT_OK


COMMANDS = {"estimate": run_estimate, "validate": run_validate, "rates": run_rates}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="whmc", description="Wiener-Hopf Monte Carlo experiment runner.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="YAML experiment config")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory (default: output.dir from the config)")
    p.add_argument("--threads", type=int, default=None, help="worker threads for the sampling kernels")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _fail(out: Path | None, code: int, exc: BaseException) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            write_json(out / "error.json", err)
        except OSError:
            pass
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out) if args.out else None
    try:
        cfg = load_config(args.config, args.seed)
        out = out or Path(cfg["output"]["dir"])
        if args.threads is not None:
            if not 1 <= args.threads <= numba.config.NUMBA_NUM_THREADS:
                raise ConfigError(f"--threads must lie in [1, {numba.config.NUMBA_NUM_THREADS}]")
            numba.set_num_threads(args.threads)
        out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        return _fail(out, EXIT_CONFIG, exc)
    except OSError as exc:
        return _fail(None, EXIT_CONFIG, exc)
    try:
        with factor_options(**cfg["factors"]):
            return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        return _fail(out, EXIT_CONFIG, exc)
    except _NUMERICAL as exc:
        return _fail(out, EXIT_NUMERICAL, exc)
    except Exception as exc:  # any other module failure still gets an error record
        log.debug("unhandled failure", exc_info=True)
        return _fail(out, EXIT_NUMERICAL, exc)


if __name__ == "__main__":
    sys.exit(main())
