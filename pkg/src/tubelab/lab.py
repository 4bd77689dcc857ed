"""Experiment driver: inequality verification, delta-sweeps with exponent
fits, config ingestion, and report emission.

The verified inequality compares the union mass |E_L| against

    rhs_core = delta^(t*eps1/2) * lambda^(1/2) * delta^((t-1)/2)
               * gamma_star^(-1/2) * sum_l |Y(l)|

and reports ratio = lhs / rhs_core.  No leading constant is assumed: sweeps
fit the exponent of the ratio against delta, and "the inequality holds" is
operationalized as ratio >= delta^0.3 at desk scales.  Hypothesis constants
(Katz-Tao and two-ends) are measured and flagged, never silently assumed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .constructions import (
    ConfigSpec,
    ConstructionError,
    build_config,
    measure_remark_bullets,
)
from .geometry import GeometryError, LineFamily, union_shadings
from .grid import GridError
from .measures import (
    MeasureError,
    density,
    frostman_constant,
    gamma_sup,
    katz_tao_constant,
    two_ends_constant,
)
from .structure import StructureError, multiscale_decompose, verify_decomposition

__all__ = [
    "LabError",
    "TheoremReport",
    "SweepResult",
    "verify_theorem",
    "verify_corollary",
    "sweep",
    "fit_exponent",
    "run_cli",
    "main",
    "CSV_COLUMNS",
]

CSV_COLUMNS = (
    "delta,k,t,t_star,eps1,lambda,gamma_star,lhs,sum_shading,rhs_core,ratio,kt_const,te_const"
)

KT_THRESHOLD = 32.0
TE_THRESHOLD = 32.0


class LabError(ValueError):
    pass


def rhs_core_value(
    delta: float,
    t: float,
    eps1: float,
    lam: float,
    gamma_star: float,
    sum_shading: float,
    with_gamma: bool = True,
) -> float:
    """The right-hand side core; reports recompute it through this exact path."""
    rhs = (
        delta ** (t * eps1 / 2.0)
        * math.sqrt(lam)
        * delta ** ((t - 1.0) / 2.0)
        * sum_shading
    )
    if with_gamma:
        rhs = rhs / math.sqrt(gamma_star)
    return rhs


@dataclass(frozen=True)
class TheoremReport:
    delta: float
    k: int
    t: float
    t_star: float
    eps1: float
    eps2: float
    n_lines: int
    lhs_mass: float
    sum_shading: float
    lam: float
    gamma_star: float
    kt_const: float
    te_const: float
    rhs_core: float
    ratio: float
    flags: tuple[str, ...]
    corollary: bool = False
    shading_kt_const: float = float("nan")

    def recompute_rhs(self) -> float:
        return rhs_core_value(
            self.delta,
            self.t,
            self.eps1,
            self.lam,
            self.gamma_star,
            self.sum_shading,
            with_gamma=not self.corollary,
        )

    def csv_row(self) -> list:
        return [
            self.delta,
            self.k,
            self.t,
            self.t_star,
            self.eps1,
            self.lam,
            self.gamma_star,
            self.lhs_mass,
            self.sum_shading,
            self.rhs_core,
            self.ratio,
            self.kt_const,
            self.te_const,
        ]

    def to_json_obj(self) -> dict:
        out = {
            "delta": self.delta,
            "k": self.k,
            "t": self.t,
            "t_star": self.t_star,
            "eps1": self.eps1,
            "eps2": self.eps2,
            "n_lines": self.n_lines,
            "lhs_mass": self.lhs_mass,
            "sum_shading": self.sum_shading,
            "lambda": self.lam,
            "gamma_star": self.gamma_star,
            "kt_const": self.kt_const,
            "te_const": self.te_const,
            "rhs_core": self.rhs_core,
            "ratio": self.ratio,
            "flags": list(self.flags),
            "corollary": self.corollary,
        }
        if self.corollary:
            out["shading_kt_const"] = self.shading_kt_const
        return out


def _family_measurements(F: LineFamily, t: float, eps1: float, eps2: float):
    if len(F) == 0:
        raise LabError("empty family")
    if not (0.0 < t < 2.0):
        raise LabError(f"t {t} outside (0, 2)")
    if not (0.0 < eps2 < eps1 < 1.0):
        raise LabError(f"need 0 < eps2 < eps1 < 1, got ({eps1}, {eps2})")
    delta = F.scale.delta
    t_star = min(t, 2.0 - t)
    lhs = union_shadings(F).mass
    sum_shading = float(sum(sh.mass for _, sh in F.entries))
    lam = float(min(density(sh) for _, sh in F.entries))
    gam = gamma_sup(F, t_star).value
    kt = katz_tao_constant(F.dual_points(), t, delta=delta).constant
    te = float(max(two_ends_constant(sh, eps1, eps2) for _, sh in F.entries))
    return delta, t_star, lhs, sum_shading, lam, gam, kt, te


def verify_theorem(F: LineFamily, t: float, eps1: float, eps2: float) -> TheoremReport:
    """Measure every component of the two-ends inequality and report the ratio."""
    delta, t_star, lhs, s_sum, lam, gam, kt, te = _family_measurements(F, t, eps1, eps2)
    flags = []
    if kt > KT_THRESHOLD:
        flags.append(f"katz_tao_constant {kt:.3g} exceeds {KT_THRESHOLD}")
    if te > TE_THRESHOLD:
        flags.append(f"two_ends_constant {te:.3g} exceeds {TE_THRESHOLD}")
    rhs = rhs_core_value(delta, t, eps1, lam, gam, s_sum, with_gamma=True)
    return TheoremReport(
        delta=delta,
        k=F.scale.k,
        t=t,
        t_star=t_star,
        eps1=eps1,
        eps2=eps2,
        n_lines=len(F),
        lhs_mass=lhs,
        sum_shading=s_sum,
        lam=lam,
        gamma_star=gam,
        kt_const=kt,
        te_const=te,
        rhs_core=rhs,
        ratio=lhs / rhs,
        flags=tuple(flags),
    )


def verify_corollary(F: LineFamily, t: float, eps1: float, eps2: float) -> TheoremReport:
    """Corollary form: the gamma factor is dropped after checking that every
    shading is itself a Katz-Tao (delta, t*)-set.

    At t = 1 this is the classical two-ends bound delta^(eps1/2) *
    lambda^(1/2) * sum; no separate verifier is exposed for that case.
    """
    delta, t_star, lhs, s_sum, lam, gam, kt, te = _family_measurements(F, t, eps1, eps2)
    sh_kt = float(
        max(katz_tao_constant(sh.cells, t_star).constant for _, sh in F.entries)
    )
    flags = []
    if kt > KT_THRESHOLD:
        flags.append(f"katz_tao_constant {kt:.3g} exceeds {KT_THRESHOLD}")
    if te > TE_THRESHOLD:
        flags.append(f"two_ends_constant {te:.3g} exceeds {TE_THRESHOLD}")
    if sh_kt > KT_THRESHOLD:
        flags.append(f"shading katz_tao_constant {sh_kt:.3g} exceeds {KT_THRESHOLD}")
    rhs = rhs_core_value(delta, t, eps1, lam, gam, s_sum, with_gamma=False)
    return TheoremReport(
        delta=delta,
        k=F.scale.k,
        t=t,
        t_star=t_star,
        eps1=eps1,
        eps2=eps2,
        n_lines=len(F),
        lhs_mass=lhs,
        sum_shading=s_sum,
        lam=lam,
        gamma_star=gam,
        kt_const=kt,
        te_const=te,
        rhs_core=rhs,
        ratio=lhs / rhs,
        flags=tuple(flags),
        corollary=True,
        shading_kt_const=sh_kt,
    )


# -- sweeps -----------------------------------------------------------------------


def fit_exponent(deltas: Sequence[float], ratios: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope of log2(ratio) against log2(delta), plus RMS residual."""
    x = np.log2(np.asarray(deltas, dtype=np.float64))
    y = np.log2(np.asarray(ratios, dtype=np.float64))
    if x.size < 3:
        raise LabError("exponent fit needs at least 3 scales")
    order = np.lexsort((y, x))  # canonical order: the fit is input-order invariant
    x, y = x[order], y[order]
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return float(coef[0]), resid


@dataclass(frozen=True)
class SweepResult:
    spec: ConfigSpec
    eps1: float
    eps2: float
    points: tuple[tuple[float, TheoremReport], ...]
    fitted_exponent: float
    residual: float
    partial: bool
    failures: tuple[str, ...]

    def to_json_obj(self) -> dict:
        return {
            "spec": self.spec.to_json_obj(),
            "eps1": self.eps1,
            "eps2": self.eps2,
            "points": [
                {"delta": d, "report": rep.to_json_obj()} for d, rep in self.points
            ],
            "fitted_exponent": self.fitted_exponent,
            "residual": self.residual,
            "partial": self.partial,
            "failures": list(self.failures),
        }


def build_sweep_family(spec: ConfigSpec, delta: float) -> LineFamily:
    """One sweep point: the spec's generator instantiated at the given delta."""
    return build_config(replace(spec, delta=delta))


def sweep(
    spec: ConfigSpec, deltas: Sequence[float], eps1: float, eps2: float
) -> SweepResult:
    """Run verify_theorem over a delta ladder and fit the ratio exponent.

    Points are pure jobs keyed by (spec, delta, seed) and merged in delta
    order, so the fit is invariant under reordering of the input list.
    """
    if len(deltas) < 3:
        raise LabError("a sweep needs at least 3 deltas")
    points: list[tuple[float, TheoremReport]] = []
    failures: list[str] = []
    for d in sorted(set(deltas), reverse=True):
        try:
            fam = build_sweep_family(spec, d)
            points.append((d, verify_theorem(fam, spec.t, eps1, eps2)))
        except (ConstructionError, GridError, GeometryError) as exc:
            failures.append(f"delta={d}: {exc}")
    if len(points) >= 3:
        slope, resid = fit_exponent(
            [d for d, _ in points], [rep.ratio for _, rep in points]
        )
    else:
        raise LabError(
            "sweep infeasible at too many scales: " + "; ".join(failures)
        )
    return SweepResult(
        spec=spec,
        eps1=eps1,
        eps2=eps2,
        points=tuple(points),
        fitted_exponent=slope,
        residual=resid,
        partial=bool(failures),
        failures=tuple(failures),
    )


# -- CLI --------------------------------------------------------------------------


def _parse_scale(text: str) -> float:
    text = text.strip()
    if "^" in text:
        base, exp = text.split("^")
        return float(base) ** float(exp)
    return float(text)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise LabError("config must be a JSON object")
    return obj


def _spec_from(cfg: dict) -> ConfigSpec:
    return ConfigSpec(
        delta=float(cfg.get("delta", 2.0**-8)),
        t=float(cfg.get("t", 1.0)),
        s=float(cfg.get("s", 1.0)),
        r=float(cfg.get("r", 2.0**-4)),
        seed=int(cfg.get("seed", 0)),
        kind=str(cfg.get("kind", "random")),
        lambda_target=float(cfg.get("lambda", cfg.get("lambda_target", 1.0))),
        max_lines=int(cfg.get("max_lines", 2048)),
    )


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_csv(path: Path, reports: Sequence[TheoremReport]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS.split(","))
    for rep in reports:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in rep.csv_row()])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config path")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--delta", type=_parse_scale, default=None, help='e.g. "2^-8"')
    p.add_argument("--deltas", default=None, help='comma list, e.g. "2^-6,2^-8"')
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--s", type=float, default=None)
    p.add_argument("--r", type=_parse_scale, default=None)
    p.add_argument("--lambda", dest="lambda_target", type=float, default=None)
    p.add_argument("--eps1", type=float, default=None)
    p.add_argument("--eps2", type=float, default=None)
    p.add_argument("--kind", default=None)
    p.add_argument("--max-lines", type=int, default=None)
    p.add_argument("--family", default=None, help="LineFamily JSON input path")
    p.add_argument("--eta", type=float, default=None)


def _merged_config(args: argparse.Namespace) -> dict:
    cfg = _load_config(args.config)
    for key in ("seed", "delta", "t", "s", "r", "lambda_target", "eps1", "eps2", "kind", "eta"):
        val = getattr(args, key, None)
        if val is not None:
            cfg["lambda" if key == "lambda_target" else key] = val
    if getattr(args, "max_lines", None) is not None:
        cfg["max_lines"] = args.max_lines
    if getattr(args, "deltas", None) is not None:
        cfg["deltas"] = [_parse_scale(v) for v in args.deltas.split(",")]
    return cfg


def _family_from(args: argparse.Namespace, cfg: dict) -> LineFamily:
    if args.family:
        with open(args.family, "r", encoding="utf-8") as fh:
            return LineFamily.from_json_obj(json.load(fh))
    return build_config(_spec_from(cfg))


def run_cli(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="tubelab",
        description="grid laboratory for line families and tube shadings",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("generate", "build a configuration and write family.json"),
        ("measure", "measure constants of a family"),
        ("decompose", "multiscale-decompose a sampled profile"),
        ("verify", "verify the main inequality on a family"),
        ("sweep", "verify across a delta ladder and fit the ratio exponent"),
    ):
        _add_common(sub.add_parser(name, help=help_text))

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        cfg = _merged_config(args)
        eps1 = float(cfg.get("eps1", 0.1))
        eps2 = float(cfg.get("eps2", 0.05))

        if args.command == "generate":
            spec = _spec_from(cfg)
            fam = build_config(spec)
            _write_json(out_dir / "family.json", fam.to_json_obj())
            report = {
                "spec": spec.to_json_obj(),
                "n_lines": len(fam),
                "union_mass": union_shadings(fam).mass,
                "sum_shading": float(sum(sh.mass for _, sh in fam.entries)),
            }
            if spec.kind in ("base", "case1", "case2"):
                report["measured"] = measure_remark_bullets(fam, spec.t, spec.s)
            _write_json(out_dir / "report.json", report)
            return 0

        if args.command == "measure":
            spec = _spec_from(cfg)
            fam = _family_from(args, cfg)
            t_star = min(spec.t, 2.0 - spec.t)
            report = {
                "spec": spec.to_json_obj(),
                "n_lines": len(fam),
                "katz_tao_constant": katz_tao_constant(
                    fam.dual_points(), spec.t, delta=fam.scale.delta
                ).to_json_obj(),
                "gamma_star": gamma_sup(fam, t_star).to_json_obj(),
                "lambda_min": float(min(density(sh) for _, sh in fam.entries)),
                "two_ends_max": float(
                    max(two_ends_constant(sh, eps1, eps2) for _, sh in fam.entries)
                ),
                "shading_frostman_max": float(
                    max(frostman_constant(sh.cells, spec.s).constant for _, sh in fam.entries)
                ),
            }
            _write_json(out_dir / "report.json", report)
            return 0

        if args.command == "decompose":
            if "f" not in cfg:
                raise LabError('decompose needs "f": [samples] in the config')
            eta = float(cfg.get("eta", 0.1))
            samples = np.asarray(cfg["f"], dtype=np.float64)
            part = multiscale_decompose(samples, eta)
            ok, msg = verify_decomposition(samples, eta, part)
            _write_json(
                out_dir / "report.json",
                {"partition": part.to_json_obj(), "verified": ok, "violation": msg},
            )
            return 0

        if args.command == "verify":
            spec = _spec_from(cfg)
            fam = _family_from(args, cfg)
            rep = verify_theorem(fam, spec.t, eps1, eps2)
            _write_json(
                out_dir / "report.json", {"spec": spec.to_json_obj(), "report": rep.to_json_obj()}
            )
            _write_csv(out_dir / "table.csv", [rep])
            if rep.flags:
                print("hypothesis flags: " + "; ".join(rep.flags), file=sys.stderr)
                return 1
            return 0

        if args.command == "sweep":
            spec = _spec_from(cfg)
            deltas = [float(v) for v in cfg.get("deltas", [])]
            if not deltas:
                raise LabError('sweep needs "deltas" in the config or --deltas')
            result = sweep(spec, deltas, eps1, eps2)
            _write_json(out_dir / "report.json", result.to_json_obj())
            _write_csv(out_dir / "table.csv", [rep for _, rep in result.points])
            flagged = result.partial or any(rep.flags for _, rep in result.points)
            if flagged:
                for msg in result.failures:
                    print("sweep failure: " + msg, file=sys.stderr)
                return 1
            return 0

        raise LabError(f"unknown subcommand {args.command!r}")
    except (
        LabError,
        ConstructionError,
        GridError,
        GeometryError,
        MeasureError,
        StructureError,
        OSError,
        json.JSONDecodeError,
        KeyError,
        TypeError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
