"""Domain types and dataset I/O.

Prospects are n-attribute x k-scenario reward matrices; loss data enter as
negative numbers. Flattening is attribute-major: component = attribute*k +
scenario, so each attribute's scenario profile stays contiguous.

Dataset text format (UTF-8, line oriented, '#' comments allowed):

    scenarios k p1 ... pk
    attributes n name1 ... namen
    benchmark            # optional, followed by n rows of k numbers
    pair                 # repeated; two n x k matrices, preferred first
    ...

A JSON mirror with keys scenarios, probabilities, attributes, benchmark,
pairs is also accepted; round trips are exact up to 17 significant digits.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SampleSpace",
    "Prospect",
    "ComparisonPair",
    "AmbiguitySpec",
    "ThetaSet",
    "DatasetError",
    "InconsistentDataError",
    "flatten",
    "unflatten",
    "build_theta",
    "parse_dataset",
    "serialize_dataset",
]


class DatasetError(ValueError):
    """Malformed dataset text; `line` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InconsistentDataError(ValueError):
    """No nondecreasing quasi-concave function with the given Lipschitz
    modulus rationalizes the comparison data."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SampleSpace:
    """Finite scenario space with a probability mass vector."""

    scenario_labels: tuple
    probabilities: np.ndarray

    def __post_init__(self):
        p = _readonly(self.probabilities)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "scenario_labels", tuple(self.scenario_labels))
        if p.ndim != 1 or p.shape[0] < 1:
            raise ValueError("need at least one scenario")
        if len(self.scenario_labels) != p.shape[0]:
            raise ValueError("scenario label count mismatch")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and nonnegative")
        if abs(float(p.sum()) - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {float(p.sum())!r}, not 1")

    @property
    def k(self):
        return self.probabilities.shape[0]


@dataclass(frozen=True)
class Prospect:
    """n x k reward matrix; one row per attribute, one column per scenario."""

    values: np.ndarray
    attribute_labels: tuple | None = None

    def __post_init__(self):
        v = _readonly(self.values)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("prospect values must be a nonempty 2-d matrix")
        if not np.all(np.isfinite(v)):
            raise ValueError("prospect entries must be finite")
        object.__setattr__(self, "values", v)
        if self.attribute_labels is not None:
            labels = tuple(self.attribute_labels)
            if len(labels) != v.shape[0]:
                raise ValueError("attribute label count mismatch")
            object.__setattr__(self, "attribute_labels", labels)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def k(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class ComparisonPair:
    """Elicited statement: `preferred` was chosen over `other`."""

    preferred: Prospect
    other: Prospect

    def __post_init__(self):
        if self.preferred.values.shape != self.other.values.shape:
            raise ValueError("pair prospects must share dimensions")


@dataclass(frozen=True)
class AmbiguitySpec:
    """Everything that pins down the ambiguity set of choice functions.

    lipschitz_L bounds the sup-norm of admissible subgradients; the optional
    benchmark is the prospect against which worst-case values are normalized.
    """

    sample_space: SampleSpace
    pairs: tuple
    lipschitz_L: float = 1.0
    benchmark: Prospect | None = None

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if not self.lipschitz_L > 0:
            raise ValueError("lipschitz_L must be positive")
        k = self.sample_space.k
        shape = None
        for idx, pair in enumerate(self.pairs, start=1):
            if pair.preferred.k != k:
                raise ValueError(f"pair {idx}: scenario count differs from sample space")
            if shape is None:
                shape = pair.preferred.values.shape
            elif pair.preferred.values.shape != shape:
                raise ValueError(f"pair {idx}: dimensions differ from pair 1")
        if self.benchmark is not None:
            if self.benchmark.k != k:
                raise ValueError("benchmark scenario count differs from sample space")
            if shape is not None and self.benchmark.values.shape != shape:
                raise ValueError("benchmark dimensions differ from the pairs")

    @property
    def n(self):
        if self.pairs:
            return self.pairs[0].preferred.n
        if self.benchmark is not None:
            return self.benchmark.n
        return 1

    @property
    def dim(self):
        return self.n * self.sample_space.k


@dataclass(frozen=True)
class ThetaSet:
    """Anchor points of the evaluation: zero, every W_i and Y_i, benchmark.

    points: (T, n*k) array in canonical order (zero, W_1, Y_1, W_2, ...,
    benchmark); bitwise-duplicate vectors are merged and carry several roles.
    """

    points: np.ndarray
    roles: tuple
    role_index: dict

    def __post_init__(self):
        object.__setattr__(self, "points", _readonly(self.points))
        object.__setattr__(self, "roles", tuple(tuple(r) for r in self.roles))

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def zero_index(self):
        return self.role_index["zero"]

    @property
    def benchmark_index(self):
        return self.role_index.get("benchmark")

    @property
    def merge_count(self):
        return sum(len(r) for r in self.roles) - self.size


def flatten(p: Prospect) -> np.ndarray:
    """Attribute-major vector of length n*k (row-major ravel)."""
    return np.ascontiguousarray(p.values, dtype=float).ravel().copy()


def unflatten(vec, n, k, attribute_labels=None) -> Prospect:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (n * k,):
        raise ValueError("vector length does not match n*k")
    return Prospect(vec.reshape(n, k), attribute_labels)


def build_theta(spec: AmbiguitySpec) -> ThetaSet:
    """Collect the anchor set in canonical order with bitwise deduplication."""
    D = spec.dim
    entries = [("zero", np.zeros(D))]
    for i, pair in enumerate(spec.pairs, start=1):
        entries.append((f"W({i})", flatten(pair.preferred)))
        entries.append((f"Y({i})", flatten(pair.other)))
    if spec.benchmark is not None:
        entries.append(("benchmark", flatten(spec.benchmark)))
    points = []
    roles = []
    role_index = {}
    seen = {}
    for role, vec in entries:
        key = vec.tobytes()
        if key in seen:
            idx = seen[key]
            roles[idx].append(role)
        else:
            idx = len(points)
            seen[key] = idx
            points.append(vec)
            roles.append([role])
        role_index[role] = seen[key]
    return ThetaSet(np.array(points), tuple(tuple(r) for r in roles), role_index)


# ---------------------------------------------------------------------------
# dataset parsing / serialization


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def parse_dataset(text: str, lipschitz_L: float = 1.0) -> AmbiguitySpec:
    """Parse the line-oriented dataset format (or its JSON mirror).

    The file format carries no Lipschitz constant; `lipschitz_L` supplies it
    (CLI flag --lipschitz overrides the default 1.0).
    """
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return _parse_json(text, lipschitz_L)
    lines = text.splitlines()
    pos = 0

    def next_content():
        nonlocal pos
        while pos < len(lines):
            raw = lines[pos]
            pos += 1
            body = raw.split("#", 1)[0].strip()
            if body:
                return body, pos
        return None, pos

    def read_numbers(count, what):
        body, ln = next_content()
        if body is None:
            raise DatasetError(f"unexpected end of file while reading {what}")
        toks = body.split()
        if len(toks) != count:
            raise DatasetError(
                f"expected {count} numbers for {what}, got {len(toks)}", ln
            )
        try:
            vals = [float(t) for t in toks]
        except ValueError:
            raise DatasetError(f"non-numeric entry in {what}", ln) from None
        if not all(math.isfinite(v) for v in vals):
            raise DatasetError(f"non-finite entry in {what}", ln)
        return vals

    def read_matrix(n, k, what):
        return np.array([read_numbers(k, f"{what} row {r + 1}") for r in range(n)])

    body, ln = next_content()
    if body is None or not body.startswith("scenarios"):
        raise DatasetError("expected 'scenarios k p1 ... pk' header", ln)
    toks = body.split()
    try:
        k = int(toks[1])
    except (IndexError, ValueError):
        raise DatasetError("scenarios header needs an integer count", ln) from None
    if len(toks) != 2 + k:
        raise DatasetError(f"scenarios header needs {k} probabilities", ln)
    try:
        probs = [float(t) for t in toks[2:]]
    except ValueError:
        raise DatasetError("non-numeric probability", ln) from None
    if abs(sum(probs) - 1.0) > 1e-12:
        raise DatasetError(f"probabilities sum to {sum(probs)!r}, not 1", ln)
    scen_line = ln

    body, ln = next_content()
    if body is None or not body.startswith("attributes"):
        raise DatasetError("expected 'attributes n name1 ... namen' header", ln)
    toks = body.split()
    try:
        n = int(toks[1])
    except (IndexError, ValueError):
        raise DatasetError("attributes header needs an integer count", ln) from None
    if len(toks) != 2 + n:
        raise DatasetError(f"attributes header needs {n} names", ln)
    attr_names = tuple(toks[2:])

    try:
        space = SampleSpace(tuple(f"s{i + 1}" for i in range(k)), np.array(probs))
    except ValueError as e:
        raise DatasetError(str(e), scen_line) from None

    benchmark = None
    pairs = []
    while True:
        body, ln = next_content()
        if body is None:
            break
        if body == "benchmark":
            if benchmark is not None:
                raise DatasetError("duplicate benchmark block", ln)
            benchmark = Prospect(read_matrix(n, k, "benchmark"), attr_names)
        elif body == "pair":
            w = Prospect(read_matrix(n, k, f"pair {len(pairs) + 1} preferred"), attr_names)
            y = Prospect(read_matrix(n, k, f"pair {len(pairs) + 1} other"), attr_names)
            pairs.append(ComparisonPair(w, y))
        else:
            raise DatasetError(f"unexpected content {body.split()[0]!r}", ln)

    return AmbiguitySpec(space, tuple(pairs), lipschitz_L, benchmark)


def _parse_json(text: str, lipschitz_L: float) -> AmbiguitySpec:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise DatasetError(f"invalid JSON: {e.msg}", e.lineno) from None
    for key in ("scenarios", "probabilities", "attributes", "pairs"):
        if key not in obj:
            raise DatasetError(f"missing JSON key {key!r}")
    labels = tuple(str(s) for s in obj["scenarios"])
    probs = np.array(obj["probabilities"], dtype=float)
    try:
        space = SampleSpace(labels, probs)
    except ValueError as e:
        raise DatasetError(str(e)) from None
    attr_names = tuple(str(a) for a in obj["attributes"])
    n, k = len(attr_names), space.k

    def matrix(data, what):
        arr = np.array(data, dtype=float)
        if arr.shape != (n, k):
            raise DatasetError(f"{what} must be a {n} x {k} matrix")
        return arr

    benchmark = None
    if obj.get("benchmark") is not None:
        benchmark = Prospect(matrix(obj["benchmark"], "benchmark"), attr_names)
    pairs = []
    for i, entry in enumerate(obj["pairs"], start=1):
        if isinstance(entry, dict):
            w, y = entry["preferred"], entry["other"]
        else:
            w, y = entry
        pairs.append(
            ComparisonPair(
                Prospect(matrix(w, f"pair {i} preferred"), attr_names),
                Prospect(matrix(y, f"pair {i} other"), attr_names),
            )
        )
    L = float(obj.get("lipschitz_L", lipschitz_L))
    return AmbiguitySpec(space, tuple(pairs), L, benchmark)


def serialize_dataset(spec: AmbiguitySpec, fmt: str = "text") -> str:
    """Render a dataset; parse(serialize(spec)) reproduces it exactly."""
    if fmt == "json":
        obj = {
            "scenarios": list(spec.sample_space.scenario_labels),
            "probabilities": [float(p) for p in spec.sample_space.probabilities],
            "attributes": list(
                spec.pairs[0].preferred.attribute_labels
                if spec.pairs and spec.pairs[0].preferred.attribute_labels
                else (
                    spec.benchmark.attribute_labels
                    if spec.benchmark is not None and spec.benchmark.attribute_labels
                    else [f"a{i + 1}" for i in range(spec.n)]
                )
            ),
            "benchmark": (
                None
                if spec.benchmark is None
                else [[float(v) for v in row] for row in spec.benchmark.values]
            ),
            "pairs": [
                {
                    "preferred": [[float(v) for v in row] for row in p.preferred.values],
                    "other": [[float(v) for v in row] for row in p.other.values],
                }
                for p in spec.pairs
            ],
            "lipschitz_L": float(spec.lipschitz_L),
        }
        return json.dumps(obj, indent=1)
    if fmt != "text":
        raise ValueError("fmt must be 'text' or 'json'")
    out = []
    probs = " ".join(_fmt(p) for p in spec.sample_space.probabilities)
    out.append(f"scenarios {spec.sample_space.k} {probs}")
    if spec.pairs and spec.pairs[0].preferred.attribute_labels:
        names = spec.pairs[0].preferred.attribute_labels
    elif spec.benchmark is not None and spec.benchmark.attribute_labels:
        names = spec.benchmark.attribute_labels
    else:
        names = tuple(f"a{i + 1}" for i in range(spec.n))
    out.append(f"attributes {len(names)} " + " ".join(names))

    def emit(matrix):
        for row in matrix:
            out.append(" ".join(_fmt(v) for v in row))

    if spec.benchmark is not None:
        out.append("benchmark")
        emit(spec.benchmark.values)
    for pair in spec.pairs:
        out.append("pair")
        emit(pair.preferred.values)
        emit(pair.other.values)
    return "\n".join(out) + "\n"
