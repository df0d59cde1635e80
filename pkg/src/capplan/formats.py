"""On-disk formats: scenarios, capacity models, exploration reports and the
measurement CSV.

Everything persisted is JSON with a ``schema_version`` field. Unknown keys
are rejected so that a typo never silently falls back to a default.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from capplan.core import CapPlanError, JobGraph, ResourceProfile
from capplan.estimator import CeParams
from capplan.explorer import ExplorationReport, ExplorerParams, PlanResult, SearchSpace
from capplan.model import CapacityModel
from capplan.simulator import GroundTruthSpec, OperatorGroundTruth

SCHEMA_VERSION = 1

PathLike = Union[str, Path]


class FormatError(CapPlanError):
    """A document failed to parse or validate. ``key`` names the offender."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class Scenario:
    name: str
    spec: GroundTruthSpec
    ce_params: CeParams
    search_space: SearchSpace
    explorer_params: ExplorerParams
    seed: int
    description: str = ""

    @property
    def graph(self) -> JobGraph:
        return self.spec.graph


def _field_names(cls) -> Tuple[str, ...]:
    return tuple(f.name for f in dataclasses.fields(cls))


def _expect_mapping(doc: Any, key: str) -> Mapping[str, Any]:
    if not isinstance(doc, dict):
        raise FormatError(key, f"expected an object, got {type(doc).__name__}")
    return doc


def _reject_unknown(doc: Mapping[str, Any], allowed, key: str) -> None:
    for k in doc:
        if k not in allowed:
            raise FormatError(f"{key}.{k}" if key else k, "unknown key")


def _require(doc: Mapping[str, Any], name: str, key: str):
    if name not in doc:
        raise FormatError(f"{key}.{name}" if key else name, "missing required key")
    return doc[name]


def _number(v: Any, key: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise FormatError(key, f"expected a number, got {v!r}")
    if not math.isfinite(v):
        raise FormatError(key, "must be finite")
    return v


def _integer(v: Any, key: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise FormatError(key, f"expected an integer, got {v!r}")
    return v


def _build(cls, doc: Mapping[str, Any], key: str, ints=(), required=()):
    """Instantiate a frozen dataclass from ``doc``; validation errors keep the key path."""
    doc = _expect_mapping(doc, key)
    _reject_unknown(doc, _field_names(cls), key)
    for name in required:
        _require(doc, name, key)
    kwargs = {}
    for name, value in doc.items():
        path = f"{key}.{name}"
        kwargs[name] = _integer(value, path) if name in ints else _number(value, path)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise FormatError(key, str(exc)) from exc


def _check_version(doc: Mapping[str, Any], kind: Optional[str] = None) -> None:
    version = _require(doc, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise FormatError("schema_version", f"unsupported version {version!r} (expected {SCHEMA_VERSION})")
    if kind is not None and _require(doc, "kind", "") != kind:
        raise FormatError("kind", f"expected {kind!r}, got {doc['kind']!r}")


def _parse_graph(doc: Any) -> JobGraph:
    doc = _expect_mapping(doc, "graph")
    _reject_unknown(doc, ("operators", "edges", "source", "sink"), "graph")
    ops = _require(doc, "operators", "graph")
    edges = _require(doc, "edges", "graph")
    if not isinstance(ops, list) or not all(isinstance(o, str) for o in ops):
        raise FormatError("graph.operators", "expected a list of names")
    if not isinstance(edges, list):
        raise FormatError("graph.edges", "expected a list of [from, to] pairs")
    for i, e in enumerate(edges):
        if not (isinstance(e, list) and len(e) == 2 and all(isinstance(n, str) for n in e)):
            raise FormatError(f"graph.edges[{i}]", "expected a [from, to] pair of names")
    extra = {k: doc[k] for k in ("source", "sink") if k in doc}
    return JobGraph(tuple(ops), tuple(tuple(e) for e in edges), **extra)


_SCENARIO_KEYS = (
    "schema_version", "kind", "name", "description", "graph", "ground_truth",
    "testbed", "ce_params", "search_space", "explorer_params", "seed",
)
_TESTBED_KEYS = ("max_injectable_rate", "tick_seconds", "warmup_time_constant_s")


def parse_scenario(doc: Any) -> Scenario:
    doc = _expect_mapping(doc, "scenario")
    _reject_unknown(doc, _SCENARIO_KEYS, "")
    _check_version(doc, "scenario")
    graph = _parse_graph(_require(doc, "graph", ""))

    gt_doc = _expect_mapping(_require(doc, "ground_truth", ""), "ground_truth")
    per_op = {}
    for op, fields in gt_doc.items():
        if op not in graph.operators:
            raise FormatError(f"ground_truth.{op}", "not an operator of the graph")
        per_op[op] = _build(OperatorGroundTruth, fields, f"ground_truth.{op}", required=("base_rate",))

    tb = _expect_mapping(_require(doc, "testbed", ""), "testbed")
    _reject_unknown(tb, _TESTBED_KEYS, "testbed")
    testbed = {k: _number(v, f"testbed.{k}") for k, v in tb.items()}
    _require(tb, "max_injectable_rate", "testbed")
    for op in graph.operators:
        _require(gt_doc, op, "ground_truth")
    try:
        spec = GroundTruthSpec(graph, per_op, **testbed)
    except CapPlanError as exc:
        raise FormatError("graph", str(exc)) from exc
    except ValueError as exc:
        raise FormatError("ground_truth", str(exc)) from exc

    ce = _build(CeParams, doc.get("ce_params", {}), "ce_params", ints=("max_iterations",))
    ss_doc = dict(_expect_mapping(_require(doc, "search_space", ""), "search_space"))
    _reject_unknown(ss_doc, _field_names(SearchSpace), "search_space")
    memory = ss_doc.pop("memory_values", None)
    space_kwargs = {k: _integer(v, f"search_space.{k}") for k, v in ss_doc.items()}
    _require(space_kwargs, "pi_min", "search_space")
    if memory is not None:
        if not isinstance(memory, list):
            raise FormatError("search_space.memory_values", "expected a list of integers")
        space_kwargs["memory_values"] = tuple(
            _integer(m, f"search_space.memory_values[{i}]") for i, m in enumerate(memory)
        )
        for i, m in enumerate(space_kwargs["memory_values"]):
            try:
                ResourceProfile(m)
            except ValueError as exc:
                raise FormatError(f"search_space.memory_values[{i}]", str(exc)) from exc
    try:
        space = SearchSpace(**space_kwargs).check(graph)
    except ValueError as exc:
        raise FormatError("search_space", str(exc)) from exc

    ep = _build(
        ExplorerParams, doc.get("explorer_params", {}), "explorer_params",
        ints=("min_extra_measurements", "max_measurements"),
    )
    seed = _integer(doc.get("seed", 0), "seed")
    name = doc.get("name", "scenario")
    description = doc.get("description", "")
    for key, v in (("name", name), ("description", description)):
        if not isinstance(v, str):
            raise FormatError(key, "expected a string")
    return Scenario(name, spec, ce, space, ep, seed, description)


def _read_json(path: PathLike) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(str(path), f"cannot read file ({exc.strerror})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(str(path), f"invalid JSON at line {exc.lineno} column {exc.colno}") from exc


SCENARIO_DIR = Path(__file__).resolve().parent / "scenarios"


def shipped_scenarios() -> List[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.json"))


def scenario_path(name_or_path: PathLike) -> Path:
    """A shipped scenario name (``q8``) or a file path."""
    p = Path(name_or_path)
    if not p.exists() and p.suffix == "" and (SCENARIO_DIR / f"{p.name}.json").exists():
        return SCENARIO_DIR / f"{p.name}.json"
    return p


def load_scenario(name_or_path: PathLike) -> Scenario:
    return parse_scenario(_read_json(scenario_path(name_or_path)))


def dump_json(doc: Any) -> str:
    # json emits repr() for floats, which round-trips bit-exactly
    return json.dumps(doc, indent=2, sort_keys=False, allow_nan=False) + "\n"


def model_to_doc(model: CapacityModel) -> Dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "capacity_model",
        "family": model.family,
        "a": model.a,
        "b": model.b,
        "c": model.c,
    }


def parse_model(doc: Any) -> CapacityModel:
    doc = _expect_mapping(doc, "model")
    _reject_unknown(doc, ("schema_version", "kind", "family", "a", "b", "c"), "")
    _check_version(doc, "capacity_model")
    family = _require(doc, "family", "")
    coef = {k: float(_number(_require(doc, k, ""), k)) for k in ("a", "b", "c")}
    try:
        return CapacityModel(family, **coef)
    except ValueError as exc:
        raise FormatError("family", str(exc)) from exc


def save_model(model: CapacityModel, path: PathLike) -> None:
    Path(path).write_text(dump_json(model_to_doc(model)), encoding="utf-8")


def load_model(path: PathLike) -> CapacityModel:
    return parse_model(_read_json(path))


CSV_COLUMNS = ("step", "memory_mb", "task_slots", "mst", "cost_rmse", "family")


def _num(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def measurements_csv(report: ExplorationReport) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for s in report.steps:
        row = (str(s.step), str(s.memory_mb), str(s.task_slots), _num(s.mst), _num(s.cost), s.family or "")
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def report_to_doc(report: ExplorationReport, plan: Optional[PlanResult] = None, scenario: str = "") -> Dict[str, Any]:
    ops = list(report.graph.operators)
    doc: Dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "kind": "exploration_report",
        "scenario": scenario,
        "operators": ops,
        "co_calls": report.co_calls,
        "ce_calls": report.ce_calls,
        "total_sim_seconds": report.total_sim_seconds,
        "model": model_to_doc(report.model),
        "selection_scores": dict(report.selection_scores),
        "selection_fallback": report.selection_fallback,
        "steps": [
            {
                "step": s.step,
                "kind": s.kind,
                "memory_mb": s.memory_mb,
                "task_slots": s.task_slots,
                "configuration": s.configuration.as_list(report.graph),
                "predicted_rate": s.predicted_rate,
                "mst": s.mst,
                "cost_rmse": s.cost,
                "family": s.family,
                "loocv": dict(s.scores),
                "ce_calls": s.ce_calls,
                "sim_seconds": s.sim_seconds,
            }
            for s in report.steps
        ],
    }
    if plan is not None:
        doc["plan"] = plan_to_doc(plan, report.graph)
    return doc


def plan_to_doc(plan: PlanResult, graph: JobGraph) -> Dict[str, Any]:
    return {
        "requested_rate": plan.requested_rate,
        "overprovision": plan.overprovision,
        "entries": [
            {
                "memory_mb": e.memory_mb,
                "task_slots": e.task_slots,
                "configuration": e.configuration.as_list(graph),
                "predicted_rate": e.predicted_rate,
            }
            for e in plan.entries
        ],
    }


def _fmt_rate(v: float) -> str:
    return f"{v:.4g}"


def plan_table(
    scenario: str,
    graph: JobGraph,
    requested_rate: float,
    rows: List[Tuple[int, Optional[Any], str]],
) -> str:
    """Plan summary shaped like a query-by-profile slots table.

    ``rows`` holds (memory_mb, PlanEntry or None, note) per profile.
    """
    headers = ["query", "requested"] + [f"{m} MB" for m, _, _ in rows]
    cells = [scenario, _fmt_rate(requested_rate)] + [str(e.task_slots) if e else "-" for _, e, _ in rows]
    widths = [max(len(h), len(c)) for h, c in zip(headers, cells)]
    lines = [
        "  ".join(h.rjust(w) for h, w in zip(headers, widths)),
        "  ".join(c.rjust(w) for c, w in zip(cells, widths)),
        "",
        "operators: " + ", ".join(graph.operators),
    ]
    for m, e, note in rows:
        if e is None:
            lines.append(f"{m} MB: - ({note})")
        else:
            conf = " ".join(str(p) for p in e.configuration.as_list(graph))
            lines.append(f"{m} MB: slots={e.task_slots} predicted={_fmt_rate(e.predicted_rate)} config=[{conf}]")
    return "\n".join(lines) + "\n"
