"""Command-line entry point: ``stablerobin <command> --config <path|catalog name>``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import verify as V
from .config import CATALOG, ConfigError, ScenarioConfig, catalog_path, load_config
from .report import RunReport, jsonable, write_convergence_csv, write_field_csv
from .solver import Solution, solve_newton, weak_residual
from .stability import is_stable

log = logging.getLogger("stablerobin")

COMMANDS = ("solve", "stability", "verify", "classify", "converge", "catalog")
STUDY_CHECKS = ("bochner", "sss", "pz", "weak")


class _Run:
    """Shared state of one command invocation."""

    def __init__(self, command: str, cfg: ScenarioConfig, out: Path, figures: bool):
        self.cfg = cfg
        self.out = out
        self.figures = figures
        self.report = RunReport(command, cfg.echo(), cfg.solve.seed)
        self._solution: Optional[Solution] = None
        self._stability = None

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except Exception as exc:  # recorded in the report, reflected in the exit status
            log.debug("stage %s failed", name, exc_info=True)
            self.report.errors.append({"stage": name, "error": type(exc).__name__, "message": str(exc)})
        finally:
            self.report.timings[name] = round(time.perf_counter() - t0, 6)

    def output(self, path: Path) -> None:
        self.report.outputs.append(path.name)

    # -- cached stages ------------------------------------------------------

    def solution(self) -> Solution:
        if self._solution is None:
            sol = solve_newton(self.cfg.problem, self.cfg.solve)
            self._solution = sol
            self.report.solve = {
                "converged": sol.converged, "steps": sol.steps, "interior_residual": sol.interior_residual,
                "boundary_residual": sol.boundary_residual, "pinned_mean": sol.pinned_mean,
                "history": sol.history, "seed": sol.seed,
                "range": [float(sol.u.values.min()), float(sol.u.values.max())]}
            if not sol.converged:
                raise RuntimeError(f"Newton did not converge in {sol.steps} steps "
                                   f"(residuals {sol.interior_residual:.3e}, {sol.boundary_residual:.3e})")
        return self._solution

    def stability(self):
        if self._stability is None:
            st = is_stable(self.cfg.problem, self.solution().u)
            self._stability = st
            self.report.stability = {"lambda_min": st.lambda_min, "verdict": st.verdict,
                                     "eps_stab": st.eps_stab, "eigen_residual": st.residual}
        return self._stability


def _add_check(run: _Run, rep: V.CheckReport) -> None:
    run.report.checks.append(jsonable(rep.to_dict()))
    print(rep.line())


def _random_fields(run: _Run, count: int) -> list[str]:
    rng = np.random.default_rng(run.cfg.solve.seed)
    return [V.random_trig_source(run.cfg.chart, rng) for _ in range(count)]


def _merge(name: str, reports: list[V.CheckReport], key: str) -> V.CheckReport:
    """One report for a check applied to several test fields."""
    worst = min(reports, key=lambda r: r.values[key] + (r.tolerance or 0.0))
    out = V.CheckReport(name, all(r.passed for r in reports), dict(worst.values), worst.tolerance,
                        mask_fraction=max((r.mask_fraction or 0.0) for r in reports))
    out.values["fields_tested"] = len(reports)
    out.values["failures"] = sum(not r.passed for r in reports)
    return out


def _study(run: _Run, name: str) -> V.CheckReport:
    cfg = run.cfg
    res = cfg.checks.resolutions
    if name == "bochner":
        return V.bochner_study(cfg.chart, cfg.checks.field_for(name), res)
    if name == "sss":
        return V.split_study(cfg.chart, cfg.checks.field_for(name), res)
    if name == "pz":
        return V.boundary_identity_study(cfg.problem, cfg.solve, res)
    if name == "weak":
        phi = cfg.checks.field_for(name)

        def at(n):
            p = cfg.problem.with_resolution(n)
            sol = solve_newton(p, cfg.solve)
            if not sol.converged:
                raise V.PreconditionFailed(f"Newton did not converge at n={n}")
            return max(p.chart.grid.spacing), abs(weak_residual(p, sol.u, phi))

        return V.convergence_study("weak", at, res)
    if name == "solution_error":
        return V.solution_error_study(cfg.problem, cfg.solve, cfg.exact, res)
    raise ValueError(f"{name} is not a refinement study")


def _coarse(run: _Run):
    cfg = run.cfg
    n = [max(8, k // 2) for k in cfg.chart.resolution]
    p = cfg.problem.with_resolution(n)
    sol = solve_newton(p, cfg.solve)
    return (p, sol.u) if sol.converged else None


def _check(run: _Run, name: str) -> V.CheckReport:
    cfg = run.cfg
    if name in STUDY_CHECKS:
        return _study(run, name)
    if name == "ricci":
        return V.check_ricci_nonnegative(cfg.chart)
    if name == "hessian_gradient":
        fields = [cfg.checks.field_for(name)] + _random_fields(run, cfg.checks.random_phi)
        return _merge(name, [V.check_hessian_gradient(cfg.chart, f) for f in fields], "min")
    u = run.solution().u
    if name == "cond0":
        return V.check_cond0(cfg.problem, u)
    if name == "cond":
        return V.check_cond(cfg.problem, u)
    if name in ("gf", "gf3"):
        st = run.stability()
        coarse = _coarse(run)
        fn = V.check_poincare_GF if name == "gf" else V.check_poincare_GF3
        fields = [cfg.checks.field_for(name)] + _random_fields(run, cfg.checks.random_phi)
        reps = []
        for f in fields:
            reps.append(fn(cfg.problem, u, f, stability=st, coarse=coarse))
        merged = _merge(name, reps, "slack")
        merged.values["first_field"] = {k: v for k, v in reps[0].values.items()}
        return merged
    raise ValueError(f"unknown check {name!r}")


# ---------------------------------------------------------------------------
# Commands


def _cmd_solve(run: _Run) -> None:
    with run.stage("solve"):
        sol = run.solution()
    if run._solution is not None:
        p = write_field_csv(run.out / "solution.csv", run._solution.u)
        run.output(p)
        run.report.checks.append({"name": "newton_converged", "passed": run._solution.converged})
        if run.figures:
            from .plotting import plot_field

            run.output(plot_field(run.out / "solution.png", run._solution.u, f"{run.cfg.name}: u"))


def _cmd_stability(run: _Run) -> None:
    _cmd_solve(run)
    with run.stage("stability"):
        st = run.stability()
        run.output(write_field_csv(run.out / "eigenfield.csv", st.eigenfield))
        print(f"lambda_min = {st.lambda_min:.10g} ({st.verdict})")
        if run.figures:
            from .plotting import plot_field

            run.output(plot_field(run.out / "eigenfield.png", st.eigenfield, f"eigenfield, λ={st.lambda_min:.4g}"))


def _cmd_verify(run: _Run) -> None:
    names = run.cfg.checks.names
    if any(n not in ("bochner", "sss", "ricci", "hessian_gradient") for n in names):
        with run.stage("solve"):
            run.solution()
    for name in names:
        with run.stage(f"check:{name}"):
            _add_check(run, _check(run, name))


def _cmd_converge(run: _Run) -> None:
    names = [n for n in run.cfg.checks.names if n in STUDY_CHECKS]
    if run.cfg.exact is not None:
        names.append("solution_error")
    for name in names:
        with run.stage(f"converge:{name}"):
            rep = _study(run, name)
            _add_check(run, rep)
            run.output(write_convergence_csv(run.out / f"converge_{name}.csv", rep.levels))
            for lv in rep.levels:
                print(f"  n={lv['n']:<5} h={lv['h']:.6g}  residual={lv['value']:.6e}")
            if run.figures:
                from .plotting import plot_convergence

                run.output(plot_convergence(run.out / f"converge_{name}.png", rep.levels, rep.order, name))


def _cmd_classify(run: _Run) -> None:
    with run.stage("classify"):
        outcomes, summary = V.classify_many(run.cfg.problem, run.cfg.solve, run.cfg.runs)
        run.report.classification = jsonable({**summary, "outcomes": [o.to_dict() for o in outcomes]})
        for o in outcomes:
            lam = "-" if o.lambda_min is None else f"{o.lambda_min:.4g}"
            print(f"  seed={o.seed:<4} {o.conclusion:<26} stability={o.stability} lambda_min={lam} "
                  f"constancy={o.constancy}")
        print(f"overall: {summary['overall']} ({summary['counts']})")
        run.report.checks.append({"name": "no_violation", "passed": summary["overall"] != "VIOLATION"})


_DISPATCH = {"solve": _cmd_solve, "stability": _cmd_stability, "verify": _cmd_verify,
             "converge": _cmd_converge, "classify": _cmd_classify}


def run(command: str, cfg: ScenarioConfig, out, figures: bool = False, normalize: bool = False) -> RunReport:
    """Execute one command and write ``report.json`` (plus CSVs) to ``out``."""
    if command not in _DISPATCH:
        raise ValueError(f"unknown command {command!r}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    r = _Run(command, cfg, out, figures)
    _DISPATCH[command](r)
    r.report.write(out / "report.json", normalize=normalize)
    return r.report


def _catalog() -> int:
    import json

    for name in CATALOG:
        desc = json.loads(catalog_path(name).read_text()).get("description", "")
        print(f"{name:<28} {desc}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stablerobin", description=__doc__)
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="scenario JSON file or built-in catalog name")
    ap.add_argument("--out", help="output directory (default runs/<scenario>/<command>)")
    ap.add_argument("--seed", type=int, help="override solve.seed")
    ap.add_argument("--resolution", type=int, help="override chart.resolution")
    ap.add_argument("--runs", type=int, help="override solve.runs (classify)")
    ap.add_argument("--normalize-report", action="store_true", help="omit timings for byte-identical reports")
    ap.add_argument("--figures", action="store_true", help="also write PNG figures (needs matplotlib)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "catalog":
        return _catalog()
    if not args.config:
        print("error: --config is required", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config, resolution=args.resolution)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.solve = replace(cfg.solve, seed=args.seed)
    if args.runs is not None:
        cfg.runs = args.runs
    out = Path(args.out or cfg.out or Path("runs") / (cfg.name or "scenario") / args.command)
    report = run(args.command, cfg, out, figures=args.figures, normalize=args.normalize_report)
    for err in report.errors:
        print(f"error in {err['stage']}: {err['error']}: {err['message']}", file=sys.stderr)
    status = "ok" if report.ok else "FAILED"
    print(f"{args.command} {cfg.name}: {status}; report written to {out / 'report.json'}")
    return 0 if report.ok else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
