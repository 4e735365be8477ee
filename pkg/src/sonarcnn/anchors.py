"""Reference-number manifest and its verification.

``anchors.json`` lists every published number the package is checked
against, with its source, tolerance and gating. Tests read their expected
values from here rather than repeating literals.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional

MANIFEST_NAME = "anchors.json"


@dataclass(frozen=True)
class Anchor:
    id: str
    kind: str
    value: Any
    tolerance: Dict[str, float]
    gating: str
    soft: bool
    source: str
    target: Dict[str, Any]

    def within(self, measured: float) -> bool:
        tol = self.tolerance
        if "min" in tol:
            return measured >= tol["min"]
        if "rel" in tol:
            return abs(measured - self.value) <= tol["rel"] * abs(self.value)
        return abs(measured - self.value) <= tol.get("abs", 0)

    def describe_tolerance(self) -> str:
        tol = self.tolerance
        if "min" in tol:
            return f">= {tol['min']}"
        if "rel" in tol:
            return f"+-{100 * tol['rel']:g}%"
        return f"+-{tol.get('abs', 0):g}"


@lru_cache(maxsize=None)
def _raw_manifest(path: Optional[str] = None) -> dict:
    if path is None:
        text = resources.files("sonarcnn").joinpath(MANIFEST_NAME).read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)


def load_manifest(path=None) -> List[Anchor]:
    data = _raw_manifest(None if path is None else str(path))
    return [Anchor(**a) for a in data["anchors"]]


def load_properties(path=None) -> Dict[str, str]:
    """Property ids (invariants checked by the test suite) and their statements."""
    data = _raw_manifest(None if path is None else str(path))
    return {p["id"]: p["statement"] for p in data.get("properties", [])}


def anchor(anchor_id: str) -> Anchor:
    for a in load_manifest():
        if a.id == anchor_id:
            return a
    raise KeyError(anchor_id)


def anchor_value(anchor_id: str):
    return anchor(anchor_id).value


@dataclass
class AnchorResult:
    id: str
    status: str          # pass | fail | soft-fail | skipped
    expected: Any
    measured: Any
    tolerance: str
    source: str
    note: str = ""

    def line(self) -> str:
        measured = "-" if self.measured is None else self.measured
        text = f"[{self.status.upper():9}] {self.id}: measured {measured} expected {self.expected} ({self.tolerance})"
        return text + (f"  {self.note}" if self.note else "")


@dataclass
class AnchorReport:
    results: List[AnchorResult]

    @property
    def ok(self) -> bool:
        return all(r.status != "fail" for r in self.results)

    def to_text(self) -> str:
        counts = {s: sum(r.status == s for r in self.results) for s in ("pass", "fail", "soft-fail", "skipped")}
        summary = ", ".join(f"{v} {k}" for k, v in counts.items())
        return "\n".join([r.line() for r in self.results] + [summary])

    def to_json(self) -> str:
        return json.dumps({"ok": self.ok, "results": [asdict(r) for r in self.results]}, indent=2) + "\n"


class _Skip(Exception):
    pass


def _cost(a: Anchor) -> float:
    from .cost import cost_report, layer_costs
    from .zoo import ArchSpec, build

    t = a.target
    graph = build(ArchSpec(t["family"], t["width"], t["size"], t["classes"]), seed=None)
    if t.get("layer"):
        params, flops = layer_costs(graph, [t["layer"]])[t["layer"]]
    else:
        report = cost_report(graph)
        params, flops = report.total_params, report.total_flops
    return params if a.kind == "params" else flops


def _dataset(root, size):
    from .data import load_dataset, sequential_split

    if root is None:
        raise _Skip("dataset not available")
    return sequential_split(load_dataset(root, size))


def _measure(a: Anchor, dataset_root, run_training: bool):
    import numpy as np

    if a.kind in ("params", "flops"):
        return _cost(a)
    if a.kind == "auscc":
        from .transfer import compute_auscc

        return round(compute_auscc(a.target["spc"], a.target["accuracy"]), 4)
    if a.kind == "selected_width":
        from .zoo import SELECTED_WIDTHS

        return SELECTED_WIDTHS[a.target["family"]]
    if a.kind == "normalize_zero":
        from .data import normalize

        return float(np.abs(normalize(np.array([[a.value]]), a.value, np.float64)).max())
    if a.kind == "recipe":
        from .train import TrainConfig

        return getattr(TrainConfig(), a.target["field"])
    if a.kind == "dataset_pixel_mean":
        from .data import compute_pixel_mean

        train, _ = _dataset(dataset_root, a.target["size"])
        return round(compute_pixel_mean(train), 4)
    if a.kind == "dataset_split":
        train, test = _dataset(dataset_root, 32)
        return [len(train), len(test)]
    if a.kind == "dataset_accuracy":
        if not run_training:
            _dataset(dataset_root, a.target["size"])
            raise _Skip("long training run; enable it explicitly")
        from .train import TrainConfig, evaluate_accuracy, train_classifier
        from .zoo import ArchSpec, build

        train, test = _dataset(dataset_root, a.target["size"])
        graph = build(ArchSpec(a.target["family"], a.target["width"], a.target["size"], train.num_classes))
        graph, log = train_classifier(graph, train, TrainConfig())
        return round(evaluate_accuracy(graph, test, log.pixel_mean), 4)
    raise ValueError(f"unknown anchor kind {a.kind!r}")


def _check(a: Anchor, measured) -> bool:
    if a.kind == "normalize_zero":
        return measured == 0
    if a.kind == "dataset_split":
        tol = a.tolerance.get("abs", 0)
        return all(abs(m - v) <= tol for m, v in zip(measured, a.value))
    return a.within(measured)


def verify_anchors(manifest=None, dataset_root=None, run_training: bool = False,
                   ids: Optional[List[str]] = None) -> AnchorReport:
    """Evaluate every anchor. Soft anchors that miss are reported as
    ``soft-fail``; dataset-gated anchors without a dataset are skipped."""
    results = []
    for a in load_manifest(manifest):
        if ids is not None and a.id not in ids:
            continue
        tol = a.describe_tolerance()
        try:
            measured = _measure(a, dataset_root, run_training)
        except _Skip as exc:
            results.append(AnchorResult(a.id, "skipped", a.value, None, tol, a.source, str(exc)))
            continue
        ok = _check(a, measured)
        status = "pass" if ok else ("soft-fail" if a.soft else "fail")
        note = ""
        if a.kind in ("params", "flops") and a.value:
            note = f"deviation {100 * (measured - a.value) / a.value:+.2f}%"
        results.append(AnchorResult(a.id, status, a.value, measured, tol, a.source, note))
    return AnchorReport(results)
