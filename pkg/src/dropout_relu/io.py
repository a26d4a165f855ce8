"""JSON and CSV serialization for networks, distributions and result tables.

Floats are written with ``repr`` (shortest round-trip decimal), so a network
written and read back is bit-identical.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .network import ExampleDistribution, LayeredNetwork, ShapeError


class FormatError(ValueError):
    """A file or document does not follow the expected layout."""


def _floats(a) -> list:
    return np.asarray(a, dtype=np.float64).tolist()


def dumps(obj, indent: int | None = None) -> str:
    return json.dumps(obj, indent=indent, allow_nan=False)


# --------------------------------------------------------------------------
# networks


def network_to_dict(net: LayeredNetwork) -> dict:
    return {
        "input_dim": net.input_dim,
        "hidden_widths": list(net.hidden_widths),
        "weights": [_floats(w) for w in net.weights],
        "biases": [_floats(b) for b in net.biases],
        "output_weights": _floats(net.output_weights),
        "output_bias": float(net.output_bias),
    }


def network_from_dict(doc: dict) -> LayeredNetwork:
    try:
        weights = tuple(np.array(w, dtype=np.float64) for w in doc["weights"])
        biases = tuple(np.array(b, dtype=np.float64) for b in doc["biases"])
        net = LayeredNetwork(weights, biases, np.array(doc["output_weights"], dtype=np.float64),
                             float(doc["output_bias"]))
    except KeyError as e:
        raise FormatError(f"network document is missing field {e.args[0]!r}") from None
    except (TypeError, ShapeError) as e:
        raise FormatError(f"malformed network document: {e}") from None
    if "input_dim" in doc and doc["input_dim"] != net.input_dim:
        raise FormatError(f"input_dim {doc['input_dim']} disagrees with weights ({net.input_dim})")
    if "hidden_widths" in doc and list(doc["hidden_widths"]) != net.hidden_widths:
        raise FormatError(f"hidden_widths {doc['hidden_widths']} disagree with weights "
                          f"({net.hidden_widths})")
    return net


def save_network(net: LayeredNetwork, path) -> None:
    Path(path).write_text(dumps(network_to_dict(net), indent=1) + "\n")


def load_network(path) -> LayeredNetwork:
    return network_from_dict(_read_json(path))


# --------------------------------------------------------------------------
# distributions


def distribution_to_records(dist: ExampleDistribution) -> list[dict]:
    return [{"x": _floats(x), "y": y, "weight": w} for x, y, w in dist.entries()]


def distribution_from_records(records) -> ExampleDistribution:
    if not isinstance(records, list) or not records:
        raise FormatError("a distribution document must be a nonempty JSON array")
    try:
        entries = [(r["x"], r["y"], r.get("weight", 1.0)) for r in records]
    except (KeyError, TypeError, AttributeError):
        raise FormatError("each example needs fields 'x' and 'y' (and optionally 'weight')") from None
    return _from_weighted(entries)


def _from_weighted(entries) -> ExampleDistribution:
    xs, ys, ws = zip(*entries)
    if len({len(x) if isinstance(x, (list, tuple)) else -1 for x in xs}) != 1:
        raise FormatError("all examples must have the same number of features")
    w = np.array(ws, dtype=np.float64)
    if np.any(w < 0) or not w.sum() > 0:
        raise FormatError("weights must be non-negative with a positive total")
    if abs(w.sum() - 1.0) > 1e-12:
        w = w / w.sum()
    try:
        return ExampleDistribution(np.array(xs, dtype=np.float64), ys, w)
    except (ShapeError, ValueError) as e:
        raise FormatError(f"malformed distribution: {e}") from None


def distribution_to_csv(dist: ExampleDistribution) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([*(f"x{i + 1}" for i in range(dist.input_dim)), "y", "weight"])
    for x, y, w in dist.entries():
        writer.writerow([*map(repr, map(float, x)), repr(y), repr(w)])
    return buf.getvalue()


def distribution_from_csv(text: str) -> ExampleDistribution:
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 2:
        raise FormatError("distribution CSV needs a header and at least one row")
    header = [h.strip() for h in rows[0]]
    K = len(header) - 2
    if K < 1 or header != [*(f"x{i + 1}" for i in range(K)), "y", "weight"]:
        raise FormatError(f"distribution CSV header must be x1..xK,y,weight; got {','.join(header)}")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != K + 2:
            raise FormatError(f"line {lineno}: expected {K + 2} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise FormatError(f"line {lineno}: non-numeric field") from None
        entries.append((vals[:K], vals[K], vals[K + 1]))
    return _from_weighted(entries)


def save_distribution(dist: ExampleDistribution, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        path.write_text(distribution_to_csv(dist))
    else:
        path.write_text(dumps(distribution_to_records(dist), indent=1) + "\n")


def load_distribution(path) -> ExampleDistribution:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return distribution_from_csv(_read_text(path))
    return distribution_from_records(_read_json(path))


# --------------------------------------------------------------------------
# tables


def rows_to_csv(rows: Iterable[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in (row[c] for c in columns)])
    return buf.getvalue()


def csv_to_rows(text: str) -> list[dict]:
    """Parse a CSV written by :func:`rows_to_csv`, converting numeric fields."""
    def convert(v: str):
        for kind in (int, float):
            try:
                return kind(v)
            except ValueError:
                pass
        return v

    return [{k: convert(v) for k, v in row.items()} for row in csv.DictReader(io.StringIO(text))]


# --------------------------------------------------------------------------


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise OSError(f"cannot read {path}: {e.strerror or e}") from None


def _read_json(path):
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None
