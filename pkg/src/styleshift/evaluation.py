"""IoU metric, dataset evaluation, delta computation, and report rendering."""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ContractError
from .raster import list_images, load_image, load_mask, mask_path_for


def iou(pred, gt):
    """Intersection over union of two binary masks; 1.0 when both are empty."""
    a = pred.values if hasattr(pred, "values") else np.asarray(pred)
    b = gt.values if hasattr(gt, "values") else np.asarray(gt)
    if a.shape != b.shape:
        raise ContractError(f"mask dimension mismatch: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def evaluate_dataset(adapter, manifest):
    """Mean IoU (percent) of the adapter over a manifest with masks.

    Returns (mean_percent, per_image) where per_image is a list of
    {"image", "iou", "flags"}; images with missing masks are excluded from
    the mean and flagged, as are empty-vs-empty exact agreements.
    """
    if manifest.mask_dir is None:
        raise ArgumentError(f"manifest {manifest.name!r} has no mask_dir")
    per_image = []
    values = []
    for p in list_images(manifest.image_dir):
        mp = mask_path_for(p, manifest.mask_dir)
        if mp is None:
            per_image.append({"image": p.name, "iou": None, "flags": ["missing-mask"]})
            continue
        img = load_image(p)
        gt = load_mask(mp)
        pred = adapter.predict(img)
        value = iou(pred, gt)
        flags = []
        if pred.values.sum() == 0 and gt.values.sum() == 0:
            flags.append("empty-vs-empty")
        per_image.append({"image": p.name, "iou": value, "flags": flags})
        values.append(value)
    if not values:
        raise ArgumentError(f"no evaluable image/mask pairs in {manifest.name!r}")
    return float(np.mean(values) * 100.0), per_image


@dataclass
class MethodDelta:
    method: str
    model: str
    base: float
    value: float

    def __post_init__(self):
        if not (0.0 <= self.base <= 100.0 and 0.0 <= self.value <= 100.0):
            raise ArgumentError("IoU percentages must lie in [0, 100]")

    @property
    def delta(self):
        return self.value - self.base

    @property
    def direction(self):
        if self.delta > 0:
            return "up"
        if self.delta < 0:
            return "down"
        return "tie"


def compute_delta(base, value, method="", model=""):
    return MethodDelta(method=method, model=model, base=base, value=value)


@dataclass
class EvaluationReport:
    """Per-method, per-model IoU percentages with a baseline row."""

    model_names: list
    baseline_name: str
    baseline_row: dict  # model -> percent
    rows: list  # (method name, {model -> percent})
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, values in [(self.baseline_name, self.baseline_row)] + list(self.rows):
            for model in self.model_names:
                if model not in values:
                    raise ContractError(f"row {name!r} missing model {model!r}")
                v = values[model]
                if not (0.0 <= v <= 100.0):
                    raise ContractError(f"IoU percent out of range in row {name!r}: {v}")

    def deltas(self):
        out = []
        for method, values in self.rows:
            for model in self.model_names:
                out.append(
                    compute_delta(self.baseline_row[model], values[model], method=method, model=model)
                )
        return out


_ARROWS = {"up": "↑", "down": "↓", "tie": "="}


def render_report(report, fmt="text-table"):
    """Render to 'text-table' (with up/down/= markers), 'json', or 'csv'.

    Output is byte-stable for a fixed report.
    """
    if fmt == "json":
        doc = {
            "baseline": {m: report.baseline_row[m] for m in report.model_names},
            "baseline_name": report.baseline_name,
            "methods": [
                {
                    "name": method,
                    "values": {m: values[m] for m in report.model_names},
                    "deltas": {m: values[m] - report.baseline_row[m] for m in report.model_names},
                }
                for method, values in report.rows
            ],
            "metadata": report.metadata,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "model", "base", "value", "delta", "direction"])
        for d in report.deltas():
            writer.writerow(
                [d.method, d.model, f"{d.base:.2f}", f"{d.value:.2f}", f"{d.delta:+.2f}", d.direction]
            )
        return buf.getvalue()
    if fmt == "text-table":
        width = max(
            [len(report.baseline_name)] + [len(m) for m, _ in report.rows] + [6]
        )
        col = max([len(m) for m in report.model_names] + [9])
        lines = []
        header = " " * width + " | " + " | ".join(m.rjust(col) for m in report.model_names)
        lines.append(header)
        lines.append("-" * len(header))
        base_cells = [f"{report.baseline_row[m]:.2f}".rjust(col) for m in report.model_names]
        lines.append(report.baseline_name.ljust(width) + " | " + " | ".join(base_cells))
        for method, values in report.rows:
            cells = []
            for m in report.model_names:
                d = compute_delta(report.baseline_row[m], values[m])
                cells.append(f"{values[m]:.2f}{_ARROWS[d.direction]}".rjust(col))
            lines.append(method.ljust(width) + " | " + " | ".join(cells))
        return "\n".join(lines) + "\n"
    raise ArgumentError(f"unknown report format {fmt!r}")


def report_from_json(text):
    doc = json.loads(text)
    model_names = sorted(doc["baseline"])
    return EvaluationReport(
        model_names=model_names,
        baseline_name=doc.get("baseline_name", "base"),
        baseline_row=doc["baseline"],
        rows=[(m["name"], m["values"]) for m in doc["methods"]],
        metadata=doc.get("metadata", {}),
    )
