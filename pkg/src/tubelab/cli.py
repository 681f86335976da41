"""Configuration-driven command line for the tube laboratory.

Subcommands map one-to-one onto the study operations: `geometry` writes a
curvature and potential report, `spectrum` solves one rescaled pencil,
`converge` runs the eigenvalue ladder, `check` runs one of the inequality or
asymptotics checks, `semigroup` runs the heat-evolution comparison. Exit codes
are stable: 0 success, 2 invalid configuration, 3 solver non-convergence,
4 violated study contract. Every failure is also written to stderr as one
JSON object so scripted callers never have to parse prose.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import eigen, fermi, geometry, lab
from .errors import AcceptanceError, ConvergenceError, ValidationError

_GRID_KEYS = {"n_x", "n_fiber", "limit_n_x", "refine"}
_STUDY_KEYS = {"epsilons", "k", "alpha", "final_abs_err", "times", "datum",
               "samples"}
_SOLVER_KEYS = {"tol", "seed", "threads"}
_SECTIONS = {"geometry", "grid", "study", "solver"}


class _Parser(argparse.ArgumentParser):
    # argparse would exit(2) with prose on bad flags; route it through the
    # structured error path instead
    def error(self, message):
        raise ValidationError(message)


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        with p.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"config is not valid TOML: {exc}") from exc
    extra = set(data) - _SECTIONS
    if extra:
        raise ValidationError(f"unknown config sections: {sorted(extra)}")
    if "geometry" not in data:
        raise ValidationError("config needs a [geometry] section")
    for name, allowed in (("grid", _GRID_KEYS), ("study", _STUDY_KEYS),
                          ("solver", _SOLVER_KEYS)):
        keys = set(data.get(name, {})) - allowed
        if keys:
            raise ValidationError(
                f"unknown keys in [{name}]: {sorted(keys)}")
    return data


def _study_config(data: dict, args) -> lab.StudyConfig:
    geom = geometry.geometry_from_config(data["geometry"])
    grid = data.get("grid", {})
    study = data.get("study", {})
    solver = data.get("solver", {})
    seed = args.seed if args.seed is not None else solver.get(
        "seed", eigen.DEFAULT_SEED)
    threads = args.threads if args.threads is not None else solver.get(
        "threads", _env_threads())
    return lab.study_config(
        geom,
        epsilons=study.get("epsilons"),
        k=study.get("k", 4),
        alpha=study.get("alpha", "auto"),
        n_x=grid.get("n_x"),
        n_fiber=grid.get("n_fiber"),
        limit_n_x=grid.get("limit_n_x"),
        refine=grid.get("refine", 1.5),
        seed=seed,
        tol=solver.get("tol"),
        final_abs_err=study.get("final_abs_err", 0.05),
        threads=threads,
    )


def _env_threads() -> int:
    raw = os.environ.get("TUBE_THREADS")
    if raw is None:
        return 1
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"TUBE_THREADS is not an integer: {raw!r}")


def _report_points(geom) -> np.ndarray:
    axes = geometry.x_axes(geom)
    if len(axes) == 1:
        return np.linspace(0.0, axes[0].length, 32, endpoint=False)
    t = np.linspace(0.15, math.pi - 0.15, 8)
    p = np.linspace(0.0, 2 * math.pi, 8, endpoint=False)
    tt, pp = np.meshgrid(t, p, indexing="ij")
    return np.column_stack([tt.ravel(), pp.ravel()])


def _cmd_geometry(data, args) -> int:
    geom = geometry.geometry_from_config(data["geometry"])
    x = _report_points(geom)
    pf = fermi.potential_field(geom, x)
    weing = geometry.shape_operators(geom, x)
    tension = np.trace(weing, axis1=2, axis2=3)
    scal_sub, scal_amb, ric_normal, scal_normal = \
        geometry._ambient_scalars(geom)
    axes = geometry.x_axes(geom)
    payload = {
        "kind": geom.kind,
        "params": list(geom.params),
        "ambient_dim": geom.ambient_dim,
        "submanifold_dim": geom.submanifold_dim,
        "codim": geom.codim,
        "axes": [{"length": a.length, "periodic": a.periodic} for a in axes],
        "eps_max": geometry.eps_max(geom),
        "injectivity_bound": geometry.injectivity_bound(geom),
        "scal_sub": scal_sub,
        "scal_amb": scal_amb,
        "ric_normal": ric_normal,
        "scal_normal": scal_normal,
        "alpha_floor": pf.alpha_floor,
        "x": x.tolist(),
        "effective_potential": fermi.effective_potential(geom, x).tolist(),
        "tension_sq": (tension ** 2).sum(axis=1).tolist(),
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False)
    (out / "geometry.json").write_text(text + "\n")
    print(f"wrote {out / 'geometry.json'}")
    return 0


def _cmd_spectrum(data, args) -> int:
    from . import assembly

    cfg = _study_config(data, args)
    eps = args.eps if args.eps is not None else cfg.epsilons[0]
    if not (0.0 < eps <= geometry.eps_max(cfg.geom)):
        raise ValidationError(
            f"eps = {eps} outside (0, {geometry.eps_max(cfg.geom)}]")
    grid = assembly.build_grid(cfg.geom, cfg.n_x, cfg.n_fiber)
    alpha, _ = lab.resolve_alpha(cfg, grid)
    pencil = assembly.assemble_rescaled_form(cfg.geom, grid, eps, alpha)
    spec = eigen.lowest_eigenpairs(pencil, cfg.k, tol=cfg.tol, seed=cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [",".join(("epsilon", "k", "lambda", "residual"))]
    for j in range(cfg.k):
        lines.append(",".join((
            lab._fmt(eps), lab._fmt(j),
            lab._fmt(spec.eigenvalues[j] - alpha),
            lab._fmt(spec.residuals[j]))))
    (out / "spectrum.csv").write_bytes(("\n".join(lines) + "\n").encode())
    print(f"wrote {out / 'spectrum.csv'}")
    if args.verbose:
        for j in range(cfg.k):
            print(f"  pair {j}: {spec.eigenvalues[j] - alpha:.12g}")
    return 0


def _write(report: lab.ConvergenceReport, args) -> int:
    written = lab.write_report(report, args.out, plot=args.plot)
    for name in written:
        print(f"wrote {Path(args.out) / name}")
    return 0


def _cmd_converge(data, args) -> int:
    cfg = _study_config(data, args)
    report = lab.eigenvalue_convergence_study(cfg)
    if args.verbose:
        for row in report.rows:
            print(f"  eps={row.epsilon:g} k={row.k} err={row.abs_err:.3e}"
                  + ("  [grid-limited]" if row.grid_limited else ""))
    return _write(report, args)


def _cmd_check(data, args) -> int:
    cfg = _study_config(data, args)
    samples = data.get("study", {}).get("samples", 100)
    if args.which == "kato":
        report = lab.kato_check(cfg, samples=samples)
    elif args.which == "coercivity":
        report = lab.coercivity_check(cfg, samples=samples)
    else:
        report = lab.asymptotics_check(cfg.geom, epsilons=cfg.epsilons)
    if args.verbose:
        print(json.dumps(lab._json_safe(report.slopes), sort_keys=True))
    return _write(report, args)


def _cmd_semigroup(data, args) -> int:
    cfg = _study_config(data, args)
    study = data.get("study", {})
    times = tuple(study.get("times", (0.5, 1.0, 2.0)))
    datum = study.get("datum", "ground")
    report = lab.semigroup_convergence_study(cfg, times=times, datum=datum)
    if args.verbose:
        for row in report.semigroup_rows:
            print(f"  eps={row['epsilon']:g} t={row['t']:g} "
                  f"err={row['err']:.3e}")
    return _write(report, args)


_COMMANDS = {
    "geometry": _cmd_geometry,
    "spectrum": _cmd_spectrum,
    "converge": _cmd_converge,
    "check": _cmd_check,
    "semigroup": _cmd_semigroup,
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="tubelab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        if name == "check":
            p.add_argument("which",
                           choices=("kato", "coercivity", "asymptotics"))
        if name == "spectrum":
            p.add_argument("--eps", type=float, default=None)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default="out")
        p.add_argument("--plot", action="store_true")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--verbose", action="store_true")
    return parser


def _emit_error(kind: str, exc: Exception) -> None:
    payload = {"error": kind, "message": str(exc)}
    detail = getattr(exc, "detail", None)
    if detail is not None:
        payload["detail"] = lab._json_safe(detail)
    residuals = getattr(exc, "residuals", None)
    if residuals is not None:
        payload["residuals"] = np.asarray(residuals).tolist()
    print(json.dumps(payload, sort_keys=True, default=lab._json_fallback),
          file=sys.stderr)


def run(argv=None) -> int:
    """Parse argv, run one subcommand, map failures onto exit codes."""
    try:
        args = _build_parser().parse_args(argv)
        data = _load_config(args.config)
        return _COMMANDS[args.command](data, args)
    except ValidationError as exc:
        _emit_error("validation", exc)
        return 2
    except ConvergenceError as exc:
        _emit_error("solver", exc)
        return 3
    except AcceptanceError as exc:
        _emit_error("acceptance", exc)
        return 4


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
