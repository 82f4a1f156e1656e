"""Config-driven experiment runner.

Subcommands: price | smile | converge | limits | compare.  Each reads a
TOML config, echoes the fully-resolved configuration (defaults made
explicit) and writes CSV files whose first line is a comment carrying the
resolved-config hash, the seed and the tool version; a rerun with the same
hash is byte-identical.

Env overrides: FWDSMILE_SEED, FWDSMILE_THREADS.  Command-line flags beat
environment variables, which beat the config file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, asymptotics, forward_smile, mc_engine
from .forward_smile import ContractSpec, atm_alpha
from .mc_engine import McConfig, SimGrid
from .models import (
    AbsClamped,
    ConstantVol,
    ExtendedSteinStein,
    Identity,
    ModelSpec,
    OuParams,
    SmoothedAbs,
)

_SCHEMA = {
    "model": {"rate", "rho", "x0", "vol", "sigma", "kappa", "m", "lam", "y0",
              "vol_fn", "eps", "sig_min", "sig_max"},
    "contract": {"t", "s", "maturity", "gaps", "alpha", "alphas"},
    "mc": {"n_paths", "steps_per_year", "seed", "chunk_size", "n_workers",
           "exact_ou", "n_outer", "n_inner", "n_u_nodes"},
    "fd": {"h"},
    "output": {"dir", "prefix"},
}

_MODEL_DEFAULTS = {"rate": 0.0, "rho": 0.0, "x0": 0.0, "vol": "stein_stein",
                   "sigma": 0.2, "kappa": 1.0, "m": 0.2, "lam": 0.25, "y0": 0.25,
                   "vol_fn": "smoothed_abs", "eps": 1e-3, "sig_min": 0.01,
                   "sig_max": 2.0}
_CONTRACT_DEFAULTS = {"t": 0.0, "s": 0.5, "maturity": None, "gaps": None,
                      "alpha": None, "alphas": None}
_FD_DEFAULTS = {"h": None}
_OUTPUT_DEFAULTS = {"dir": "out", "prefix": "fwdsmile"}


class ConfigError(ValueError):
    pass


def _validate_sections(raw):
    for section, keys in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        unknown = set(keys) - _SCHEMA[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")


def resolve_config(path, seed_override=None, out_override=None):
    """Load, validate and fully resolve a run config (defaults explicit)."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    _validate_sections(raw)

    resolved = {
        "model": {**_MODEL_DEFAULTS, **raw.get("model", {})},
        "contract": {**_CONTRACT_DEFAULTS, **raw.get("contract", {})},
        "mc": {**{f.name: f.default for f in McConfig.__dataclass_fields__.values()},
               **raw.get("mc", {})},
        "fd": {**_FD_DEFAULTS, **raw.get("fd", {})},
        "output": {**_OUTPUT_DEFAULTS, **raw.get("output", {})},
    }

    env_seed = os.environ.get("FWDSMILE_SEED")
    if env_seed is not None:
        resolved["mc"]["seed"] = int(env_seed)
    if seed_override is not None:
        resolved["mc"]["seed"] = int(seed_override)
    env_threads = os.environ.get("FWDSMILE_THREADS")
    if env_threads is not None:
        resolved["mc"]["n_workers"] = int(env_threads)
    if out_override is not None:
        resolved["output"]["dir"] = str(out_override)
    return resolved


def config_hash(resolved):
    # the output location must not change the content hash
    hashed = {k: v for k, v in resolved.items() if k != "output"}
    canonical = json.dumps(hashed, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def build_model(mcfg):
    variant = mcfg["vol"]
    if variant == "constant":
        vol = ConstantVol(sigma=mcfg["sigma"])
    elif variant == "stein_stein":
        ou = OuParams(kappa=mcfg["kappa"], m=mcfg["m"], lam=mcfg["lam"], y0=mcfg["y0"])
        fn_name = mcfg["vol_fn"]
        if fn_name == "identity":
            fn = Identity()
        elif fn_name == "abs_clamped":
            fn = AbsClamped(sig_min=mcfg["sig_min"], sig_max=mcfg["sig_max"])
        elif fn_name == "smoothed_abs":
            fn = SmoothedAbs(eps=mcfg["eps"], sig_min=mcfg["sig_min"],
                             sig_max=mcfg["sig_max"])
        else:
            raise ConfigError(f"unknown vol_fn {fn_name!r}")
        vol = ExtendedSteinStein(ou=ou, vol_fn=fn)
    else:
        raise ConfigError(f"unknown vol model {variant!r}")
    return ModelSpec(rate=mcfg["rate"], rho=mcfg["rho"], x0=mcfg["x0"], vol=vol)


def build_mc_config(mc):
    return McConfig(**mc)


def _gaps(resolved):
    contract = resolved["contract"]
    if contract["gaps"] is not None:
        return list(contract["gaps"])
    if contract["maturity"] is not None:
        return [contract["maturity"] - contract["s"]]
    raise ConfigError("contract needs either 'maturity' or 'gaps'")


def _fmt(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, resolved, columns, rows):
    header = (f"# fwdsmile={__version__} config_hash={config_hash(resolved)} "
              f"seed={resolved['mc']['seed']}\n")
    lines = [header, ",".join(columns) + "\n"]
    lines += [",".join(_fmt(v) for v in row) + "\n" for row in rows]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.writelines(lines)


def _out_path(resolved, suffix):
    out = resolved["output"]
    return Path(out["dir"]) / f"{out['prefix']}_{suffix}.csv"


def cmd_price(resolved):
    model = build_model(resolved["model"])
    cfg = build_mc_config(resolved["mc"])
    contract_cfg = resolved["contract"]
    t, s = contract_cfg["t"], contract_cfg["s"]
    rows = []
    for idx, gap in enumerate(_gaps(resolved)):
        maturity = s + gap
        alpha = contract_cfg["alpha"]
        if alpha is None:
            alpha = atm_alpha(s, maturity, model.rate)
        contract = ContractSpec(t=t, s=s, maturity=maturity, alpha=alpha)
        grid = SimGrid.build(t, s, maturity, cfg.steps_per_year)
        batch = mc_engine.simulate(model, grid, cfg.n_paths, cfg.seed + 7919 * idx,
                                   exact_ou=cfg.exact_ou, chunk_size=cfg.chunk_size,
                                   n_workers=cfg.n_workers)
        direct = mc_engine.price_forward_start(batch, contract)
        decomp = mc_engine.price_decomposition(batch, contract)
        rows.append((gap, alpha, direct.value, direct.std_error,
                     decomp.total.value, decomp.total.std_error,
                     decomp.bs_term.value, decomp.h_term.value, decomp.g_term.value,
                     direct.z_against(decomp.total), cfg.n_paths, batch.seed))
    columns = ("gap", "alpha", "direct", "direct_se", "decomp", "decomp_se",
               "bs_term", "h_term", "g_term", "z", "n_paths", "seed")
    path = _out_path(resolved, "price")
    write_csv(path, resolved, columns, rows)
    return [path], True


def cmd_smile(resolved):
    model = build_model(resolved["model"])
    cfg = build_mc_config(resolved["mc"])
    contract_cfg = resolved["contract"]
    t, s = contract_cfg["t"], contract_cfg["s"]
    gap = _gaps(resolved)[0]
    maturity = s + gap
    a_star = atm_alpha(s, maturity, model.rate)
    alphas = contract_cfg["alphas"]
    if alphas is None:
        width = 0.3 * math.sqrt(gap)
        alphas = [a_star + k * width / 5.0 for k in range(-5, 6)]
    contract = ContractSpec(t=t, s=s, maturity=maturity, alpha=a_star)
    grid = SimGrid.build(t, s, maturity, cfg.steps_per_year)
    batch = mc_engine.simulate(model, grid, cfg.n_paths, cfg.seed,
                               exact_ou=cfg.exact_ou, chunk_size=cfg.chunk_size,
                               n_workers=cfg.n_workers)
    points = forward_smile.smile_slice(batch, contract, alphas)
    rows = [(p.alpha, p.vol, p.vol_se, p.price.value, p.price.std_error,
             p.boundary, p.error or "") for p in points]
    columns = ("alpha", "vol", "vol_se", "price", "price_se", "boundary", "error")
    path = _out_path(resolved, "smile")
    write_csv(path, resolved, columns, rows)
    return [path], True


def cmd_converge(resolved):
    model = build_model(resolved["model"])
    cfg = build_mc_config(resolved["mc"])
    contract_cfg = resolved["contract"]
    study = forward_smile.convergence_study(model, contract_cfg["t"], contract_cfg["s"],
                                            _gaps(resolved), cfg,
                                            h=resolved["fd"]["h"])
    rows = forward_smile.reports_to_csv_rows(study.reports)
    # gap -> 0 extrapolation row: scaled curvature stands in for the
    # (divergent) raw curvature columns
    rows.append((0.0, study.level.value, study.level.std_error,
                 study.skew.value, study.skew.std_error, math.nan, math.nan,
                 study.scaled_curvature.value, math.nan,
                 cfg.n_paths, cfg.seed))
    path = _out_path(resolved, "converge")
    write_csv(path, resolved, forward_smile.CSV_COLUMNS, rows)
    return [path], True


def cmd_limits(resolved):
    model = build_model(resolved["model"])
    cfg = build_mc_config(resolved["mc"])
    contract_cfg = resolved["contract"]
    t, s = contract_cfg["t"], contract_cfg["s"]
    report = asymptotics.asymptotics_report(model, t, s, cfg)
    rows = [("level", report.level.value, report.level.std_error),
            ("skew", report.skew.value, report.skew.std_error),
            ("scaled_curvature", report.curvature.total.value,
             report.curvature.total.std_error)]
    path = _out_path(resolved, "limits")
    write_csv(path, resolved, ("quantity", "value", "se"), rows)

    curv = report.curvature
    breakdown_rows = [
        ("nested", curv.term_nested.value, curv.term_nested.std_error),
        ("level_uncorrelated", curv.term_level_uncorr, 0.0),
        ("level_corrected", curv.term_level_corr, 0.0),
        ("correction", curv.term_correction.value, curv.term_correction.std_error),
        ("correction_alt", curv.term_correction_alt, math.nan),
    ]
    breakdown_path = _out_path(resolved, "limits_curvature_terms")
    write_csv(breakdown_path, resolved, ("term", "value", "se"), breakdown_rows)
    return [path, breakdown_path], True


def cmd_compare(resolved):
    model = build_model(resolved["model"])
    cfg = build_mc_config(resolved["mc"])
    contract_cfg = resolved["contract"]
    rows_data, _, _ = asymptotics.compare(model, contract_cfg["t"], contract_cfg["s"],
                                          _gaps(resolved), cfg, h=resolved["fd"]["h"])
    rows = [(r.quantity, r.fd_value, r.fd_se, r.limit_value, r.limit_se,
             r.z, r.passed) for r in rows_data]
    path = _out_path(resolved, "compare")
    write_csv(path, resolved, ("quantity", "fd", "fd_se", "limit", "limit_se",
                               "z", "passed"), rows)
    return [path], all(r.passed for r in rows_data)


_COMMANDS = {"price": cmd_price, "smile": cmd_smile, "converge": cmd_converge,
             "limits": cmd_limits, "compare": cmd_compare}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="fwdsmile",
                                     description="Forward-start smile experiments")
    parser.add_argument("subcommand", choices=sorted(_COMMANDS))
    parser.add_argument("config", help="path to a TOML run config")
    parser.add_argument("--seed", type=int, default=None, help="override the seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--strict", action="store_true",
                        help="treat comparison failures as process failures")
    args = parser.parse_args(argv)

    try:
        resolved = resolve_config(args.config, seed_override=args.seed,
                                  out_override=args.out)
        print(json.dumps({"resolved_config": resolved,
                          "config_hash": config_hash(resolved)}, sort_keys=True))
        paths, comparisons_ok = _COMMANDS[args.subcommand](resolved)
    except Exception as exc:  # machine-readable error record, nonzero exit
        print(json.dumps({"error": str(exc), "type": type(exc).__name__,
                          "subcommand": args.subcommand}), file=sys.stderr)
        return 2
    for path in paths:
        print(json.dumps({"wrote": str(path)}))
    if args.strict and not comparisons_ok:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
