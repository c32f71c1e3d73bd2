"""Command line entry point: ``mmot {solve,table,oracle,compare}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import analytic_oracles as ao
from .cost import CoulombCostSpec, build_kernel
from .densities import (
    DiscreteDensity,
    load_density,
    make_ball,
    make_gaussian,
    make_triangular,
    make_uniform,
    make_uniform_interval,
    radialize,
)
from .exceptions import InfeasibleError, InvalidParameterError, MMOTError
from .radial import radial_comotion_N2
from .recovery import map_from_plan, potential_from_scalings, relative_linf_error, sce_energy
from .refine import RefinementConfig, refine_solve
from .solver import SolverConfig, ipfp_solve, write_history

logger = logging.getLogger("mmot")

EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_FAILED = 1

DENSITIES = ("uniform", "uniform01", "triangular", "gaussian", "ball")
ORACLES = (
    "uniform --N 2",
    "uniform01 --N 2|3",
    "triangular --N 2",
    "gaussian --N 2|3",
    "ball --mode radial --d 2|3 --N 2",
    "file:PATH --N 2|3 (full mode)",
)


class ConfigError(MMOTError):
    pass


@dataclass
class RunConfig:
    command: str
    density: str = "uniform"
    a: float | None = None
    N: int = 2
    d: int = 1
    mode: str = "full"
    M: int = 1000
    epsilon: list = field(default_factory=list)
    tol: float | None = None
    max_sweeps: int = 10000
    log_domain: bool = False
    refine_levels: int = 1
    xi: float = 0.9
    out: str = "."
    threads: int | None = None
    seed: int = 0

    def validate(self):
        if self.mode not in ("full", "radial"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "radial" and self.d < 2:
            raise ConfigError("radial mode requires --d 2 or --d 3")
        if self.mode == "full" and self.d != 1:
            raise ConfigError("full mode is implemented for --d 1")
        if self.density == "ball" and self.mode != "radial":
            raise ConfigError("--density ball needs --mode radial")
        if not (self.density in DENSITIES or self.density.startswith("file:")):
            raise ConfigError(f"unknown density {self.density!r}")
        if self.N < 2:
            raise ConfigError("--N must be at least 2")
        if self.M < 2:
            raise ConfigError("--M must be at least 2")
        for e in self.epsilon:
            if not (e > 0 and math.isfinite(e)):
                raise ConfigError(f"epsilon must be positive, got {e}")
        if self.refine_levels < 1:
            raise ConfigError("--refine-levels must be >= 1")
        if not 0 < self.xi < 1:
            raise ConfigError("--xi must lie in (0, 1)")
        return self


def build_density(cfg):
    """Marginal of the configured run (radial marginal in radial mode)."""
    name, a, M = cfg.density, cfg.a, cfg.M
    if name == "uniform":
        return make_uniform(2.0 if a is None else a, M)
    if name == "uniform01":
        return make_uniform_interval(0.0, 1.0, M)
    if name == "triangular":
        return make_triangular(1.0 if a is None else a, M)
    if name == "gaussian":
        return make_gaussian(1.0 if a is None else a, M=M)
    if name == "ball":
        return make_ball(cfg.d, M, 1.0 if a is None else a)
    dens = load_density(name[len("file:"):])
    if cfg.mode == "radial":
        # radial files list (r, rho(r)); turn values into the radial marginal
        vals = dens.weights * (dens.original_mass or 1.0) / dens.total_mass
        flat = DiscreteDensity.from_unnormalized(dens.grid, vals * dens.grid.cell_weights)
        return radialize(flat, cfg.d)
    return dens


def oracle_for(cfg, density):
    """``(maps, potential values)`` or ``None`` when no oracle applies."""
    x = density.points
    name, N = cfg.density, cfg.N
    if cfg.mode == "radial":
        if N == 2:
            return [radial_comotion_N2(density)], None
        return None
    if name == "uniform" and N == 2:
        a = 2.0 if cfg.a is None else cfg.a
        return [ao.comotion_uniform_N2(a)], ao.potential_uniform_N2(a)(x)
    if name == "uniform01" and N == 3:
        return ao.comotion_multi_1d(density, 3), ao.potential_uniform_N3()(x)
    if name == "triangular" and N == 2:
        maps = [ao.comotion_triangular(1.0 if cfg.a is None else cfg.a)]
        return maps, ao.potential_from_maps(maps, density).values
    if name in ("uniform01", "gaussian") or name.startswith("file:"):
        if N in (2, 3):
            maps = ao.comotion_multi_1d(density, N)
            return maps, ao.potential_from_maps(maps, density).values
    return None


def _fmt(v):
    return f"{v:.17g}"


def _write_csv(path, header, columns):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(float(v)) if not isinstance(v, (int, np.integer)) else int(v)
                        for v in row])


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


def _write_plan(path, plan, cutoff):
    coords, vals = plan.nonzero_triplets(cutoff)
    N = coords.shape[1]
    names = ["i", "j", "k"][:N] if N <= 3 else [f"i{k}" for k in range(N)]
    cols = [coords[:, k] for k in range(N)] + [vals]
    _write_csv(path, names + ["weight"], cols)


def _solve_once(cfg, density, epsilon, out):
    """One solve (optionally refined) with all artifacts; returns the summary."""
    spec = CoulombCostSpec(N=cfg.N, d=cfg.d, mode=cfg.mode)
    solver_cfg = SolverConfig(epsilon, cfg.max_sweeps, cfg.tol,
                              "log" if cfg.log_domain else "linear", record_history=True)
    out.mkdir(parents=True, exist_ok=True)
    levels = None
    if cfg.refine_levels > 1:
        rr = refine_solve(density, spec, solver_cfg,
                          RefinementConfig(cfg.xi, cfg.refine_levels))
        final = rr.final
        result, density = final.result, final.density
        plan = final.plan()
        levels = rr.report()
        rr.write_report(out / "levels.json")
    else:
        kernel = build_kernel(spec, density.grid, epsilon)
        result = ipfp_solve(kernel, density, solver_cfg)
        plan = None
    write_history(result.history, out / "history.jsonl")
    potential = potential_from_scalings(result)
    x = density.points
    _write_csv(out / "potential.csv", ["x", "u"], [x, potential.values])

    map_cols, map_head = [x], ["x"]
    for k in range(1, cfg.N):
        src = plan if plan is not None else result
        est = map_from_plan(src, x, source_axis=0, target_axis=k)
        map_cols += [est.barycentric, est.argmax, est.spread]
        map_head += [f"f{k + 1}", f"f{k + 1}_argmax", f"spread{k + 1}"]
    _write_csv(out / "map.csv", map_head, map_cols)

    if plan is None:
        plan = result.plan()
    vals = plan.values if plan.is_sparse else plan.weights
    _write_plan(out / "plan.csv", plan, 1e-12 * float(np.max(vals)))

    energy = float(sce_energy(result, None)) if levels is None else float(
        _sparse_energy(plan, spec, density))
    summary = {
        "config": asdict(cfg) | {"epsilon_used": epsilon},
        "epsilon": epsilon,
        "sweeps": int(result.sweeps),
        "residual": float(result.residual.max_linf),
        "converged": bool(result.converged),
        "energy": energy,
        "kappa": potential.kappa,
        "gauge": "mean of u against rho equals anchor; errors use the sup norm "
                 "after the optimal constant shift",
        "anchor": potential.anchor,
        "evaluation_mode": getattr(result, "evaluation_mode", "log"),
    }
    if levels is not None:
        summary["levels"] = levels
    orc = oracle_for(cfg, density)
    if orc is not None and orc[1] is not None:
        summary["potential_error_vs_oracle"] = relative_linf_error(potential, orc[1])
    _write_json(out / "summary.json", summary)
    return summary


def _sparse_energy(plan, spec, density):
    pos = density.points[plan.coords]
    return float(np.dot(spec.tuple_cost(pos), plan.values))


def cmd_solve(cfg):
    if len(cfg.epsilon) != 1:
        raise ConfigError("solve takes exactly one --epsilon; use 'table' for ladders")
    density = build_density(cfg)
    summary = _solve_once(cfg, density, cfg.epsilon[0], Path(cfg.out))
    logger.info("sweeps=%d converged=%s energy=%.10g", summary["sweeps"],
                summary["converged"], summary["energy"])
    return 0


def cmd_table(cfg):
    if not cfg.epsilon:
        raise ConfigError("table needs at least one --epsilon")
    density = build_density(cfg)
    orc = oracle_for(cfg, density)
    if orc is None or orc[1] is None:
        raise ConfigError("no analytic potential for this density/N; supported: "
                          + "; ".join(ORACLES[:5]))
    rows = []
    for eps in cfg.epsilon:
        sub = Path(cfg.out) / f"eps_{eps:g}"
        try:
            s = _solve_once(cfg, density, eps, sub)
        except InfeasibleError as exc:
            logger.warning("epsilon=%g failed: %s", eps, exc)
            rows.append((eps, math.nan, 0, math.nan, False, "infeasible"))
            continue
        flag = "" if s["converged"] else "not-converged"
        rows.append((eps, s["potential_error_vs_oracle"], s["sweeps"], s["energy"],
                     s["converged"], flag))
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    with open(Path(cfg.out) / "table.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "error", "sweeps", "energy", "converged", "flag"])
        for eps, err, sw, en, conv, flag in rows:
            w.writerow([_fmt(eps), _fmt(err), sw, _fmt(en), str(conv).lower(), flag])
    _write_json(Path(cfg.out) / "table.json", {"config": asdict(cfg), "rows": rows})
    for r in rows:
        print(f"eps={r[0]:<8g} error={r[1]:.4g} sweeps={r[2]} flag={r[5] or 'ok'}")
    return 0


def cmd_oracle(cfg):
    density = build_density(cfg)
    orc = oracle_for(cfg, density)
    if orc is None:
        raise ConfigError("no oracle for this combination; supported: " + "; ".join(ORACLES))
    maps, u = orc
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    x = density.points
    cols, head = [x], ["x"]
    for k, f in enumerate(maps, start=2):
        cols.append(f(x))
        head.append(f"f{k}")
    if u is not None:
        cols.append(u)
        head.append("u")
    _write_csv(out / "oracle.csv", head, cols)
    _write_json(out / "oracle.json", {"config": asdict(cfg),
                                      "maps": [f.label for f in maps]})
    return 0


def _read_table(path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    head = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    return {h: data[:, k] for k, h in enumerate(head)}


def _locate(path, names):
    p = Path(path)
    if p.is_file():
        return p
    for n in names:
        if (p / n).is_file():
            return p / n
    raise ConfigError(f"no {' or '.join(names)} under {p}")


def cmd_compare(args):
    run = _read_table(_locate(args.run, ("potential.csv", "oracle.csv")))
    ref = _read_table(_locate(args.reference, ("oracle.csv", "potential.csv")))
    if run["x"].shape != ref["x"].shape or np.max(np.abs(run["x"] - ref["x"])) > 1e-12:
        raise ConfigError("grids of the two artifacts do not match")
    if "u" not in run or "u" not in ref:
        raise ConfigError("both artifacts need a potential column 'u'")
    u, v = run["u"], ref["u"]
    keep = np.isfinite(u) & np.isfinite(v)
    d = u[keep] - v[keep]
    shift = 0.5 * (d.max() + d.min())
    linf = float(np.abs(d - shift).max() / np.abs(v[keep]).max())
    d1 = d - np.median(d)
    l1 = float(np.abs(d1).sum() / np.abs(v[keep]).sum())
    report = {"relative_linf": linf, "relative_l1": l1, "constant_shift": float(shift),
              "threshold": args.threshold}
    band = _band_mass(args.run, args.reference, run["x"], args.band_cells)
    if band is not None:
        report["band_mass"] = band
    passed = args.threshold is None or linf <= args.threshold
    if args.min_band_mass is not None and band is not None:
        passed = passed and band >= args.min_band_mass
    report["passed"] = bool(passed)
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _write_json(Path(args.out) / "compare.json", report)
    return 0 if passed else EXIT_FAILED


def _band_mass(run_dir, ref_dir, x, cells):
    try:
        plan = _read_table(_locate(run_dir, ("plan.csv",)))
        orc = _read_table(_locate(ref_dir, ("oracle.csv",)))
    except ConfigError:
        return None
    if "f2" not in orc or "i" not in plan:
        return None
    i = plan["i"].astype(int)
    j = plan["j"].astype(int)
    target = np.searchsorted(x, orc["f2"])
    h = np.abs(j - np.clip(target[i], 0, x.size - 1)) <= cells
    return float(plan["weight"][h].sum() / plan["weight"].sum())


def _add_common(p):
    p.add_argument("--density", default="uniform",
                   help="uniform|uniform01|triangular|gaussian|ball|file:PATH")
    p.add_argument("--a", type=float, default=None,
                   help="width parameter (uniform: support length; ball: radius)")
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--mode", choices=("full", "radial"), default="full")
    p.add_argument("--M", type=int, default=1000)
    p.add_argument("--epsilon", type=float, action="append", default=[])
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--max-sweeps", type=int, default=10000)
    p.add_argument("--log-domain", action="store_true")
    p.add_argument("--refine-levels", type=int, default=1)
    p.add_argument("--xi", type=float, default=0.9)
    p.add_argument("--out", default=os.environ.get("MMOT_OUT", "."))
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)


def make_parser():
    parser = argparse.ArgumentParser(prog="mmot", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, hlp in (("solve", "run one entropic solve and write artifacts"),
                      ("table", "potential error against the analytic oracle per epsilon"),
                      ("oracle", "write analytic maps and potentials")):
        _add_common(sub.add_parser(name, help=hlp))
    cmp_ = sub.add_parser("compare", help="compare a run against an oracle or another run")
    cmp_.add_argument("run")
    cmp_.add_argument("reference")
    cmp_.add_argument("--threshold", type=float, default=None)
    cmp_.add_argument("--band-cells", type=int, default=2)
    cmp_.add_argument("--min-band-mass", type=float, default=None)
    cmp_.add_argument("--out", default=None)
    cmp_.add_argument("--threads", type=int, default=None)
    return parser


def _config_from(args):
    fields = {k: getattr(args, k) for k in RunConfig.__dataclass_fields__ if hasattr(args, k)}
    return RunConfig(**fields).validate()


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            if args.command == "compare":
                return cmd_compare(args)
            cfg = _config_from(args)
            return {"solve": cmd_solve, "table": cmd_table, "oracle": cmd_oracle}[
                args.command](cfg)
    except InfeasibleError as exc:
        print(f"mmot: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, InvalidParameterError, ValueError) as exc:
        print(f"mmot: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MMOTError as exc:
        print(f"mmot: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
