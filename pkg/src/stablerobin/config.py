"""Scenario configuration files (JSON) and the built-in catalog."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from . import expr
from .geometry import DegenerateMetric, MetricChart
from .solver import Problem, SolveOptions

MIN_RESOLUTION = 8
CHECK_NAMES = ("bochner", "sss", "pz", "hessian_gradient", "gf", "gf3", "cond0", "cond", "ricci", "weak")
CATALOG = ("euclid-square-allencahn", "euclid-annulus-logr-robin", "sphere-band-allencahn",
           "cylinder-neumann", "sphere-band-robin-alpha")


class ConfigError(ValueError):
    """Invalid scenario file; the message names the offending field."""

    def __init__(self, path: str, message: str, line: Optional[int] = None):
        self.field = path
        self.line = line
        where = f"{path}" + (f" (line {line})" if line else "")
        super().__init__(f"{where}: {message}")


@dataclass
class ChecksConfig:
    names: list = field(default_factory=list)
    resolutions: list = field(default_factory=lambda: [16, 32, 64])
    phi: str = "1"
    fields: dict = field(default_factory=dict)
    random_phi: int = 10

    def field_for(self, check: str) -> str:
        return self.fields.get(check, self.phi)


@dataclass
class ScenarioConfig:
    name: str
    description: str
    chart: MetricChart
    problem: Problem
    solve: SolveOptions
    runs: int
    checks: ChecksConfig
    exact: Optional[str] = None
    out: Optional[str] = None
    raw: dict = field(default_factory=dict)

    def echo(self) -> dict:
        """The config as loaded, plus the derived derivatives ``f'`` and ``h'``."""
        out = json.loads(json.dumps(self.raw))
        out.setdefault("problem", {})
        out["derived"] = {"f_prime": expr.to_source(self.problem.df), "h_prime": expr.to_source(self.problem.dh)}
        out["solve"] = {**out.get("solve", {}), "seed": self.solve.seed, "runs": self.runs}
        return out


def catalog_names() -> list[str]:
    return list(CATALOG)


def catalog_path(name: str):
    stem = name[:-5] if name.endswith(".json") else name
    return resources.files("stablerobin") / "catalog" / f"{stem}.json"


def _line_of(text: str, value: Any) -> Optional[int]:
    if not isinstance(value, str) or not text:
        return None
    i = text.find(json.dumps(value))
    return text.count("\n", 0, i) + 1 if i >= 0 else None


class _Reader:
    def __init__(self, data: dict, text: str):
        self.data = data
        self.text = text

    def get(self, path: str, default=..., kind=None):
        node: Any = self.data
        for part in path.split("."):
            if not isinstance(node, dict) or part not in node:
                if default is ...:
                    raise ConfigError(path, "missing required field")
                return default
            node = node[part]
        if kind is not None and not isinstance(node, kind):
            raise ConfigError(path, f"expected {getattr(kind, '__name__', kind)}, got {type(node).__name__}")
        return node

    def parse(self, path: str, source, names) -> expr.Ast:
        if isinstance(source, (int, float)) and not isinstance(source, bool):
            source = repr(float(source))
        if not isinstance(source, str):
            raise ConfigError(path, f"expected an expression string, got {type(source).__name__}")
        try:
            return expr.parse(source, names)
        except expr.ParseError as exc:
            raise ConfigError(path, f"offset {exc.offset}: {exc.message}", _line_of(self.text, source)) from exc

    def number(self, path: str, source) -> float:
        ast = self.parse(path, source, [])
        return float(expr.evaluate(ast, {}))


def _parse_chart(rd: _Reader, resolution_override=None) -> MetricChart:
    coords = rd.get("chart.coords", kind=list)
    m = len(coords)
    if m < 2:
        raise ConfigError("chart.coords", "at least two coordinates are required")
    box_raw = rd.get("chart.box", kind=list)
    if len(box_raw) != m:
        raise ConfigError("chart.box", f"expected {m} intervals")
    box = []
    for k, iv in enumerate(box_raw):
        if not isinstance(iv, list) or len(iv) != 2:
            raise ConfigError(f"chart.box[{k}]", "expected [lo, hi]")
        lo, hi = (rd.number(f"chart.box[{k}][{j}]", v) for j, v in enumerate(iv))
        if not hi > lo:
            raise ConfigError(f"chart.box[{k}]", "upper bound must exceed lower bound")
        box.append((lo, hi))
    periodic = rd.get("chart.periodic", [False] * m, kind=list)
    if len(periodic) != m:
        raise ConfigError("chart.periodic", f"expected {m} flags")
    if all(periodic):
        raise ConfigError("chart.periodic", "Robin problem requires boundary (at least one non-periodic coordinate)")
    metric_raw = rd.get("chart.metric", kind=list)
    if len(metric_raw) != m or any(not isinstance(r, list) or len(r) != m for r in metric_raw):
        raise ConfigError("chart.metric", f"expected an {m}x{m} matrix")
    metric = [[rd.parse(f"chart.metric[{i}][{j}]", metric_raw[i][j], coords) for j in range(m)] for i in range(m)]
    derivs = None
    draw = rd.get("chart.metric_derivatives", None)
    if draw is not None:
        derivs = {}
        for c in coords:
            mat = draw.get(c) if isinstance(draw, dict) else None
            if not isinstance(mat, list) or len(mat) != m:
                raise ConfigError(f"chart.metric_derivatives.{c}", f"expected an {m}x{m} matrix")
            derivs[c] = [[rd.parse(f"chart.metric_derivatives.{c}[{i}][{j}]", mat[i][j], coords)
                          for j in range(m)] for i in range(m)]
    res = resolution_override if resolution_override is not None else rd.get("chart.resolution", 32)
    res_list = [res] * m if isinstance(res, int) else list(res)
    if len(res_list) != m or any(not isinstance(n, int) or n < MIN_RESOLUTION for n in res_list):
        raise ConfigError("chart.resolution", f"resolution must be an integer >= {MIN_RESOLUTION} per coordinate")
    try:
        return MetricChart(coords, box, periodic, metric, res_list, derivs, name=rd.get("name", ""))
    except DegenerateMetric as exc:
        raise ConfigError("chart.metric", str(exc)) from exc
    except ValueError as exc:
        raise ConfigError("chart", str(exc)) from exc


def parse_config(data: dict, text: str = "", resolution: Optional[int] = None) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a JSON object")
    rd = _Reader(data, text)
    chart = _parse_chart(rd, resolution)
    f = rd.parse("problem.f", rd.get("problem.f"), ["u"])
    h = rd.parse("problem.h", rd.get("problem.h"), ["u"])
    exact = rd.get("problem.exact", None)
    if exact is not None:
        rd.parse("problem.exact", exact, chart.coords)

    s = rd.get("solve", {}, kind=dict)
    init = s.get("init", 0.0)
    if isinstance(init, str) and init != "random":
        rd.parse("solve.init", init, chart.coords)
    try:
        opts = SolveOptions(init=init, amplitude=float(s.get("amplitude", 1.0)), seed=int(s.get("seed", 0)),
                            noise=float(s.get("noise", 0.0)), tol_res=float(s.get("tol_res", 1e-8)),
                            max_steps=int(s.get("max_steps", 50)), min_step=float(s.get("min_step", 2.0 ** -10)))
    except (TypeError, ValueError) as exc:
        raise ConfigError("solve", str(exc)) from exc
    if opts.tol_res <= 0 or opts.max_steps <= 0 or opts.min_step <= 0:
        raise ConfigError("solve", "tolerances and step limits must be positive")
    runs = int(s.get("runs", 1))
    if runs < 1:
        raise ConfigError("solve.runs", "must be at least 1")

    c = rd.get("checks", {}, kind=dict)
    names = list(c.get("names", []))
    for i, n in enumerate(names):
        if n not in CHECK_NAMES:
            raise ConfigError(f"checks.names[{i}]", f"unknown check {n!r}; known: {', '.join(CHECK_NAMES)}")
    resolutions = list(c.get("resolutions", [16, 32, 64]))
    if any(not isinstance(n, int) or n < MIN_RESOLUTION for n in resolutions):
        raise ConfigError("checks.resolutions", f"resolutions must be integers >= {MIN_RESOLUTION}")
    checks = ChecksConfig(names, resolutions, str(c.get("phi", "1")), dict(c.get("fields", {})),
                          int(c.get("random_phi", 10)))
    rd.parse("checks.phi", checks.phi, chart.coords)
    for k, v in checks.fields.items():
        rd.parse(f"checks.fields.{k}", v, chart.coords)

    problem = Problem(chart, f, h, label=rd.get("name", ""))
    return ScenarioConfig(rd.get("name", ""), rd.get("description", ""), chart, problem, opts, runs, checks,
                          exact, rd.get("out", None), data)


def load_config(path, resolution: Optional[int] = None) -> ScenarioConfig:
    """Read a scenario from a file path or a built-in catalog name."""
    p = Path(path)
    if p.exists():
        text = p.read_text()
    else:
        cat = catalog_path(str(path))
        if not cat.is_file():
            raise FileNotFoundError(f"no such config file or catalog scenario: {path}")
        text = cat.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", exc.msg, exc.lineno) from exc
    return parse_config(data, text, resolution)
