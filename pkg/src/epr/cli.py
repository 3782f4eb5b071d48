"""
Command-line drivers.

Each subcommand reads a JSON model config, runs one experiment and writes
CSV tables plus ``metadata.json`` and ``results.json`` into ``--out``.
Scalars carry a provenance tag (``closed_form``, ``formula_eps`` or
``binned``); infinite values are written as the literal ``inf``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .estimate import BinGrid, CSV_COLUMNS, curve_rows, ep_curve, estimate
from .exact import ep_closed_form, ep_eps, simulate_exact
from .integrate import simulate_bbk, simulate_em
from .linalg import DEFAULT_CUTOFF, RankCutoff
from .model import (
    LinearDiffusion,
    NonlinearSDE,
    Potential,
    UnderdampedLangevin,
    divergence_check,
    helmholtz_pointwise,
    langevin_as_linear,
    linear_from_drift,
    linear_from_parts,
    momentum_flip,
    momentum_flip_identity,
    potential,
    range_condition,
)

PROVENANCE = ("closed_form", "formula_eps", "binned")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# config


@dataclass
class ModelConfig:
    kind: str
    payload: dict
    rng_seed: int = 0
    cutoff: RankCutoff = DEFAULT_CUTOFF
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def digest(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


KINDS = ("linear", "langevin_quadratic", "langevin_custom", "nonlinear")


def parse_config(raw: dict) -> ModelConfig:
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ConfigError("config must be a JSON object with a 'kind' field")
    kind = raw["kind"]
    if kind not in KINDS:
        raise ConfigError(f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
    rc = raw.get("rank_cutoff")
    if rc is None:
        cutoff = DEFAULT_CUTOFF
    elif isinstance(rc, dict):
        cutoff = RankCutoff(**rc)
    else:
        cutoff = RankCutoff(relative_tolerance=float(rc))
    payload = {k: v for k, v in raw.items() if k not in ("kind", "rng_seed", "rank_cutoff")}
    cfg = ModelConfig(kind, payload, int(raw.get("rng_seed", 0)), cutoff, raw)
    build_model(cfg)  # validate eagerly
    return cfg


def _mat(p: dict, key: str, required: bool = True):
    if key not in p:
        if required:
            raise ConfigError(f"missing field {key!r}")
        return None
    return np.atleast_2d(np.asarray(p[key], dtype=float))


def _langevin(p: dict, grad_V, n: int) -> UnderdampedLangevin:
    M = np.asarray(p.get("M", np.ones(n)), dtype=float)
    M = np.diag(M) if M.ndim == 2 else np.broadcast_to(M, (n,)).copy()
    return UnderdampedLangevin(grad_V, M, float(p.get("gamma", 1.0)), float(p.get("beta", 1.0)), n)


def _registry_potential(spec) -> Potential:
    if isinstance(spec, str):
        spec = {"name": spec}
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError("potential must be a name or an object with a 'name' field")
    params = {k: v for k, v in spec.items() if k != "name"}
    if "K" in params:
        params["K"] = np.atleast_2d(np.asarray(params["K"], dtype=float))
    return potential(spec["name"], **params)


def build_model(cfg: ModelConfig):
    """Turn a config into a LinearDiffusion, UnderdampedLangevin or NonlinearSDE."""
    p = cfg.payload
    if cfg.kind == "linear":
        if "B" in p:
            return linear_from_drift(_mat(p, "B"), _mat(p, "sigma"))
        if "Pi" in p:
            return linear_from_parts(_mat(p, "Pi"), _mat(p, "D"), _mat(p, "Q"), _mat(p, "sigma", False))
        raise ConfigError("linear config needs either B and sigma or Pi, D and Q")
    if cfg.kind == "langevin_quadratic":
        K = _mat(p, "K")
        return _langevin(p, potential("quadratic", K=K), K.shape[0])
    if cfg.kind == "langevin_custom":
        pot = _registry_potential(p.get("potential"))
        n = int(p.get("n", np.atleast_2d(pot.params["K"]).shape[0] if "K" in pot.params else 1))
        return _langevin(p, pot, n)
    # nonlinear: dx = -(D + Q) grad V dt + sigma dW with density exp(-V)
    pot = _registry_potential(p.get("potential"))
    sigma = _mat(p, "sigma")
    d = sigma.shape[0]
    Q = _mat(p, "Q", False)
    Q = np.zeros((d, d)) if Q is None else Q
    if Q.shape != (d, d) or np.linalg.norm(Q + Q.T) > 1e-12:
        raise ConfigError("Q must be an antisymmetric d x d matrix")
    A = 0.5 * sigma @ sigma.T + Q
    return NonlinearSDE(lambda x: -pot.grad(x) @ A.T, sigma, d, log_density_grad=lambda x: -pot.grad(x))


def as_linear(cfg: ModelConfig, model) -> LinearDiffusion | None:
    """Linear form of the model when one exists (Langevin perturbations included)."""
    if isinstance(model, LinearDiffusion):
        return model
    if isinstance(model, UnderdampedLangevin) and cfg.kind == "langevin_quadratic":
        return langevin_as_linear(model, _mat(cfg.payload, "K"), _mat(cfg.payload, "Q1", False),
                                  _mat(cfg.payload, "Q2", False))
    return None


def load_config(path: str) -> ModelConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return parse_config(raw)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


# --------------------------------------------------------------------------
# results


def fmt(x) -> str:
    """Round-trip float text; infinities as ``inf``/``-inf``."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def _json_value(x):
    if isinstance(x, (float, np.floating)) and not math.isfinite(float(x)):
        return fmt(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


@dataclass
class ExperimentResult:
    command: str
    config_hash: str
    seed: int
    tables: dict = field(default_factory=dict)     # name -> (header, rows)
    scalars: dict = field(default_factory=dict)    # name -> (value, provenance)
    wall_time: float = 0.0

    def scalar(self, name: str, value, provenance: str):
        if provenance not in PROVENANCE:
            raise ValueError(f"unknown provenance {provenance!r}")
        self.scalars[name] = (value, provenance)

    def table(self, name: str, header, rows):
        self.tables[name] = (list(header), [list(r) for r in rows])

    def metadata(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": __version__,
            "wall_time": self.wall_time,
            "tables": sorted(self.tables),
            "conventions": {"grid": "uniform, half-open bins", "out_of_grid": "dropped",
                            "one_way_pairs": "strict mode gives inf", "inf_literal": "inf"},
        }

    def results(self) -> dict:
        return {name: {"value": _json_value(v), "provenance": prov} for name, (v, prov) in self.scalars.items()}


def table_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_result(res: ExperimentResult, out: Path) -> None:
    for name, (header, rows) in res.tables.items():
        atomic_write(out / f"{name}.csv", table_csv(header, rows))
    atomic_write(out / "results.json", json.dumps(res.results(), indent=2, sort_keys=True) + "\n")
    atomic_write(out / "metadata.json", json.dumps(res.metadata(), indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# commands


def _seed(args, cfg: ModelConfig) -> int:
    return cfg.rng_seed if args.seed is None else args.seed


def _grid(args, dim: int, default=(-4.0, 4.0), default_bins: int = 30) -> BinGrid:
    lo, hi = default
    if args.grid:
        try:
            lo, hi = (float(v) for v in args.grid.split(","))
        except ValueError as exc:
            raise ConfigError("--grid expects lo,hi") from exc
    bins = default_bins if args.bins is None else args.bins
    return BinGrid(np.full(dim, lo), np.full(dim, hi), np.broadcast_to(bins, (dim,)))


def _mode(args):
    return "strict" if args.pseudocount is None else ("pseudocount", args.pseudocount)


def _involution(args, model):
    if not getattr(args, "flip", False):
        return None
    if not isinstance(model, (UnderdampedLangevin,)) and not (isinstance(model, LinearDiffusion) and model.dim % 2 == 0):
        raise ConfigError("--flip needs a Langevin model")
    return momentum_flip(model.dim // 2)


def _eps_list(args) -> list[float]:
    if args.eps is None:
        raise ConfigError("--eps is required")
    try:
        vals = [float(v) for v in str(args.eps).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --eps value {args.eps!r}") from exc
    if not vals or any(not v > 0 for v in vals):
        raise ConfigError("time steps must be positive")
    return vals


def _verdict(lin: LinearDiffusion | None, cfg: ModelConfig, model) -> str:
    if lin is not None:
        if np.linalg.norm(lin.Q) <= 1e-12 * max(1.0, np.linalg.norm(lin.B)):
            return "reversible"
        if range_condition(lin, cutoff=cfg.cutoff) > 0:
            return "violated (e_p = +inf)"
        return "holds (e_p finite)"
    pts = _probe_points(model, cfg.rng_seed)
    if range_condition(model.as_sde(), pts, cutoff=cfg.cutoff) > 0:
        return "violated (e_p = +inf)"
    return "holds (e_p finite)"


def _probe_points(model, seed: int, n: int = 64) -> np.ndarray:
    d = model.dim
    return np.random.default_rng(seed).standard_normal((n, d))


def cmd_decompose(cfg: ModelConfig, model, args) -> ExperimentResult:
    res = ExperimentResult("decompose", cfg.digest, _seed(args, cfg))
    lin = as_linear(cfg, model)
    if lin is not None:
        d = lin.dim
        header = ["row"] + [f"c{j}" for j in range(d)]
        for name, M in (("D", lin.D), ("Q", lin.Q), ("Pi", lin.Pi), ("B", lin.B)):
            res.table(name, header, [[i, *M[i]] for i in range(d)])
        res.scalar("stationarity_residual", lin.stationarity_residual(), "closed_form")
    else:
        sde = model.as_sde()
        pts = _probe_points(model, _seed(args, cfg), 32)
        brev, birr = helmholtz_pointwise(sde, pts)
        d = sde.dim
        header = [f"x{j}" for j in range(d)] + [f"b_rev{j}" for j in range(d)] + [f"b_irr{j}" for j in range(d)]
        res.table("helmholtz", header, np.hstack([pts, brev, birr]).tolist())
        res.scalar("divergence_residual", divergence_check(sde, pts), "closed_form")
    res.scalar("range_condition", _verdict(lin, cfg, model), "closed_form")
    return res


def _perturbed(cfg: ModelConfig) -> bool:
    return cfg.kind == "langevin_quadratic" and ("Q1" in cfg.payload or "Q2" in cfg.payload)


def _target(cfg: ModelConfig, model, lin, scheme: str):
    """The object a scheme simulates: linear form for exact runs and perturbed dynamics."""
    if scheme == "exact":
        if lin is None:
            raise ConfigError("scheme exact requires a linear model")
        return lin
    if scheme == "em":
        return lin if (lin is not None and (_perturbed(cfg) or not isinstance(model, UnderdampedLangevin))) else model
    if scheme == "bbk":
        if not isinstance(model, UnderdampedLangevin):
            raise ConfigError("scheme requires langevin model")
        if _perturbed(cfg):
            raise ConfigError("bbk does not support Q1/Q2 perturbations")
        return model
    raise ConfigError(f"unknown scheme {scheme!r}; choose from exact, em, bbk")


def _simulate(target, scheme: str, eps: float, steps: int, paths: int, seed: int, x0, cutoff):
    if scheme == "exact":
        return simulate_exact(target, x0, eps, steps, paths, seed, cutoff)
    if scheme == "em":
        return simulate_em(target, x0, eps, steps, paths, seed, cutoff)
    return simulate_bbk(target, x0, eps, steps, paths, seed, cutoff=cutoff)


def _x0(cfg: ModelConfig, model, lin):
    if "x0" in cfg.payload:
        return np.asarray(cfg.payload["x0"], dtype=float)
    if lin is not None:
        return "stationary"
    return np.zeros(model.dim)


def cmd_simulate(cfg: ModelConfig, model, args) -> ExperimentResult:
    seed = _seed(args, cfg)
    eps = _eps_list(args)
    if len(eps) != 1:
        raise ConfigError("simulate takes a single --eps value")
    eps = eps[0]
    lin = as_linear(cfg, model)
    scheme = args.scheme or "exact"
    target = _target(cfg, model, lin, scheme)
    sp = _simulate(target, scheme, eps, args.steps, args.paths, seed, _x0(cfg, model, lin), cfg.cutoff)
    res = ExperimentResult("simulate", cfg.digest, seed)
    P, T1, d = sp.data.shape
    rows = []
    for i in range(P):
        for k in range(T1):
            rows.append([i, k, k * eps, *sp.data[i, k]])
    res.table("trajectories", ["path", "step", "t"] + [f"x{j}" for j in range(d)], rows)
    res.scalar("n_rows", P * T1, "closed_form")
    return res


def cmd_ep(cfg: ModelConfig, model, args) -> ExperimentResult:
    seed = _seed(args, cfg)
    lin = as_linear(cfg, model)
    res = ExperimentResult("ep", cfg.digest, seed)
    P = _involution(args, lin if lin is not None else model)
    method = args.method
    if method in ("closed_form", "eps_formula") and lin is None:
        raise ConfigError(f"method {method} requires a linear model")
    if method == "closed_form":
        res.scalar("ep", ep_closed_form(lin, cfg.cutoff, involution=P), "closed_form")
    elif method == "eps_formula":
        for e in _eps_list(args):
            res.scalar(f"ep_eps[{fmt(e)}]", ep_eps(lin, e, cfg.cutoff, involution=P), "formula_eps")
    elif method == "binned":
        eps = _eps_list(args)
        if len(eps) != 1:
            raise ConfigError("binned method takes a single --eps value")
        scheme = args.scheme or "exact"
        target = _target(cfg, model, lin, scheme)
        sp = _simulate(target, scheme, eps[0], args.steps, args.paths, seed, _x0(cfg, model, lin), cfg.cutoff)
        est = estimate(sp, _grid(args, sp.dim), _mode(args), involution=P, n_boot=args.bootstrap, seed=seed)
        res.scalar("ep", est.value, "binned")
        for name in ("bias_corrected", "stderr", "lo95", "hi95", "one_way_pairs", "occupied_bins",
                     "n_transitions", "n_dropped", "pseudocount_used"):
            res.scalar(name, getattr(est, name), "binned")
    else:
        raise ConfigError(f"unknown method {method!r}")
    return res


def cmd_ep_curve(cfg: ModelConfig, model, args) -> ExperimentResult:
    seed = _seed(args, cfg)
    lin = as_linear(cfg, model)
    scheme = args.scheme or "exact"
    target = _target(cfg, model, lin, scheme)
    P = _involution(args, target)
    grid = _grid(args, target.dim)
    pts = ep_curve(target, scheme, _eps_list(args), grid, args.paths * args.steps, seed, _mode(args),
                   involution=P, n_paths=args.paths, n_boot=args.bootstrap)
    res = ExperimentResult("ep-curve", cfg.digest, seed)
    rows = curve_rows(pts)
    res.table("curve", CSV_COLUMNS, [[r[c] for c in CSV_COLUMNS] for r in rows])
    if lin is not None:
        res.scalar("ep_closed_form", ep_closed_form(lin, cfg.cutoff, involution=P), "closed_form")
    return res


def cmd_check_range(cfg: ModelConfig, model, args) -> ExperimentResult:
    res = ExperimentResult("check-range", cfg.digest, _seed(args, cfg))
    lin = as_linear(cfg, model)
    if lin is not None:
        frac = range_condition(lin, cutoff=cfg.cutoff)
    else:
        frac = range_condition(model.as_sde(), _probe_points(model, _seed(args, cfg)), cutoff=cfg.cutoff)
    res.scalar("violation_fraction", frac, "closed_form")
    res.scalar("verdict", _verdict(lin, cfg, model), "closed_form")
    return res


def cmd_flip_check(cfg: ModelConfig, model, args) -> ExperimentResult:
    lin = as_linear(cfg, model)
    if lin is None or not isinstance(model, UnderdampedLangevin):
        raise ConfigError("flip-check requires a langevin_quadratic model")
    res = ExperimentResult("flip-check", cfg.digest, _seed(args, cfg))
    eps_list = _eps_list(args) if args.eps is not None else [0.01, 0.1, 1.0]
    rows = []
    for e in eps_list:
        fc = momentum_flip_identity(lin, e)
        rows.append([e, fc.holds, fc.mean_residual, fc.cov_residual])
    res.table("flip_check", ["eps", "holds", "mean_residual", "cov_residual"], rows)
    res.scalar("holds", all(r[1] for r in rows), "closed_form")
    return res


COMMANDS = {
    "decompose": cmd_decompose,
    "simulate": cmd_simulate,
    "ep": cmd_ep,
    "ep-curve": cmd_ep_curve,
    "check-range": cmd_check_range,
    "flip-check": cmd_flip_check,
}


# --------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="JSON model config")
    common.add_argument("--seed", type=int, default=None, help="overrides rng_seed from the config")
    common.add_argument("--out", default=None, help="output directory (default: print results only)")
    common.add_argument("--eps", default=None, help="time step or comma-separated list")
    common.add_argument("--bins", type=int, default=None, help="bins per axis")
    common.add_argument("--grid", default=None, help="lo,hi applied to every axis")
    common.add_argument("--pseudocount", type=float, default=None, help="pseudocount alpha (default: strict)")
    common.add_argument("--paths", type=int, default=10)
    common.add_argument("--steps", type=int, default=1000)
    common.add_argument("--scheme", choices=("exact", "em", "bbk"), default=None)
    common.add_argument("--bootstrap", type=int, default=0, help="bootstrap replicates for binned estimates")
    common.add_argument("--flip", action="store_true", help="generalised e_p with the momentum flip")

    parser = _Parser(prog="epr", description="Entropy production of linear and Langevin diffusions.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "ep":
            sp.add_argument("--method", choices=("closed_form", "eps_formula", "binned"), default="closed_form")
    return parser


def _fail(exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        model = build_model(cfg)
        t0 = time.perf_counter()
        res = COMMANDS[args.command](cfg, model, args)
        res.wall_time = time.perf_counter() - t0
    except ConfigError as exc:
        return _fail(exc, 2)
    except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        return _fail(exc, 1)
    if args.out:
        write_result(res, Path(args.out))
    sys.stdout.write(json.dumps({"command": res.command, "results": res.results()}, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
