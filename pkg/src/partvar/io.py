"""CSV input files and JSON report output.

Input files are plain CSV with a fixed header. Numbers use a decimal point
only; thousands separators, decimal commas, underscores, ``nan`` and
``inf`` are rejected with the offending line and column.

Reports are JSON with every float written to 17 significant digits so the
echoed inputs reproduce the estimates bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FileFormatError, InvalidConfigurationError
from .model import DependenceMatrix, ParticleKind, PopulationSpec, SampleCounts

SCHEMA_VERSION = 1

POPULATION_HEADER = ["kind", "mass_g", "conc", "count_batch"]
SAMPLE_HEADER = ["kind", "mass_g", "conc", "count_sample"]
TRIPLET_HEADER = ["kind_i", "kind_j", "c"]

_FLOAT = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?")
_INT = re.compile(r"[+-]?\d+")
_VARIANT = re.compile(r"#\s*variant\s*:\s*(\S+)\s*$")


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _rows(path):
    """Yield (line_number, fields) for non-blank, non-comment rows."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise FileFormatError(path, None, None, f"cannot open: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            for fields in reader:
                if not fields or all(f.strip() == "" for f in fields):
                    continue
                if fields[0].lstrip().startswith("#"):
                    continue
                yield reader.line_num, [f.strip() for f in fields]
        except csv.Error as exc:
            raise FileFormatError(path, reader.line_num, None, f"malformed CSV: {exc}") from None


def parse_float(text: str, path, line: int, col: int, what: str) -> float:
    if not _FLOAT.fullmatch(text):
        raise FileFormatError(path, line, col, f"{what}: {text!r} is not a plain decimal number")
    return float(text)


def parse_int(text: str, path, line: int, col: int, what: str) -> int:
    if not _INT.fullmatch(text):
        raise FileFormatError(path, line, col, f"{what}: {text!r} is not an integer")
    return int(text)


def _read_kinds_file(path, header: list[str]):
    rows = iter(_rows(path))
    try:
        line, first = next(rows)
    except StopIteration:
        raise FileFormatError(path, None, None, "file is empty") from None
    if first != header:
        raise FileFormatError(path, line, 1, f"expected header {','.join(header)!r}, got {','.join(first)!r}")
    kinds, counts, seen = [], [], {}
    for line, f in rows:
        if len(f) != len(header):
            raise FileFormatError(path, line, min(len(f), len(header)) + 1, f"expected {len(header)} fields, got {len(f)}")
        kid = parse_int(f[0], path, line, 1, "kind")
        if kid in seen:
            raise FileFormatError(path, line, 1, f"kind {kid} repeats line {seen[kid]}")
        seen[kid] = line
        mass = parse_float(f[1], path, line, 2, "mass_g")
        if not mass > 0:
            raise FileFormatError(path, line, 2, f"mass_g must be > 0, got {f[1]}")
        conc = parse_float(f[2], path, line, 3, "conc")
        if not math.isfinite(conc) or not math.isfinite(mass):
            raise FileFormatError(path, line, 2, "values must be finite")
        n = parse_int(f[3], path, line, 4, header[3])
        if n < 0:
            raise FileFormatError(path, line, 4, f"{header[3]} must be >= 0, got {n}")
        kinds.append(ParticleKind(kid, mass, conc))
        counts.append(n)
    if not kinds:
        raise FileFormatError(path, None, None, "no data rows")
    return tuple(kinds), np.array(counts, dtype=np.int64)


def read_population(path) -> PopulationSpec:
    kinds, counts = _read_kinds_file(path, POPULATION_HEADER)
    return PopulationSpec(kinds, counts)


def read_sample(path) -> SampleCounts:
    kinds, counts = _read_kinds_file(path, SAMPLE_HEADER)
    return SampleCounts(kinds, counts)


def read_cmatrix(path, kind_ids) -> DependenceMatrix:
    """Read a dense or triplet dependence-matrix CSV, ordered like ``kind_ids``."""
    kind_ids = [int(k) for k in kind_ids]
    index = {k: i for i, k in enumerate(kind_ids)}
    T = len(kind_ids)
    variant = "eq1"
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            if raw.strip():
                m = _VARIANT.match(raw.strip())
                if m:
                    variant = m.group(1)
                    if variant not in ("eq1", "cprime"):
                        raise FileFormatError(path, 1, None, f"unknown variant {variant!r}; use eq1 or cprime")
                break
    rows = iter(_rows(path))
    try:
        line, header = next(rows)
    except StopIteration:
        raise FileFormatError(path, None, None, "file is empty") from None

    values = np.zeros((T, T))
    if header == TRIPLET_HEADER:
        given: dict[tuple[int, int], tuple[float, int]] = {}
        for line, f in rows:
            if len(f) != 3:
                raise FileFormatError(path, line, min(len(f), 3) + 1, f"expected 3 fields, got {len(f)}")
            a = parse_int(f[0], path, line, 1, "kind_i")
            b = parse_int(f[1], path, line, 2, "kind_j")
            for col, k in ((1, a), (2, b)):
                if k not in index:
                    raise FileFormatError(path, line, col, f"kind {k} is not in the sample/population file")
            if (index[a], index[b]) in given:
                raise FileFormatError(path, line, 1, f"entry ({a},{b}) given twice")
            given[index[a], index[b]] = (parse_float(f[2], path, line, 3, "c"), line)
        for (i, j), (v, _) in given.items():
            values[i, j] = v
            if (j, i) not in given:
                values[j, i] = v
    else:
        labels = []
        for col, text in enumerate(header[1:], start=2):
            k = parse_int(text, path, line, col, "column label")
            if k not in index:
                raise FileFormatError(path, line, col, f"kind {k} is not in the sample/population file")
            labels.append(index[k])
        if sorted(labels) != list(range(T)):
            raise FileFormatError(path, line, None, f"column labels must be exactly the kinds {kind_ids}")
        seen_rows = set()
        for line, f in rows:
            if len(f) != T + 1:
                raise FileFormatError(path, line, min(len(f), T + 1) + 1, f"expected {T + 1} fields, got {len(f)}")
            k = parse_int(f[0], path, line, 1, "row label")
            if k not in index:
                raise FileFormatError(path, line, 1, f"kind {k} is not in the sample/population file")
            i = index[k]
            if i in seen_rows:
                raise FileFormatError(path, line, 1, f"row {k} repeats")
            seen_rows.add(i)
            for col, (j, text) in enumerate(zip(labels, f[1:]), start=2):
                values[i, j] = parse_float(text, path, line, col, "c")
        if len(seen_rows) != T:
            raise FileFormatError(path, None, None, f"dense matrix needs one row per kind ({T}), got {len(seen_rows)}")
    try:
        return DependenceMatrix(values, variant)
    except InvalidConfigurationError as exc:
        raise FileFormatError(path, None, None, str(exc)) from None


def check_same_kinds(a, b, what: str) -> None:
    if a.kind_ids != b.kind_ids:
        raise InvalidConfigurationError(f"{what}: kind labels differ ({a.kind_ids} vs {b.kind_ids})")
    if not (np.array_equal(a.masses, b.masses) and np.array_equal(a.concs, b.concs)):
        raise InvalidConfigurationError(f"{what}: masses or concentrations differ between files")


# JSON ---------------------------------------------------------------------------


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or obj is True or obj is False:
        return {None: "null", True: "true", False: "false"}[obj]
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        return format(x, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_encode(str(k), indent, 0)}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, 0) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_report(report: dict) -> str:
    """Serialize with 17 significant digits for floats; NaN and inf become null."""
    return _encode(report, 2, 0) + "\n"


def report_header(command: str) -> dict:
    return {"schema_version": SCHEMA_VERSION, "tool": "partvar", "tool_version": __version__, "command": command}


def echo_kinds(obj, count_field: str, counts) -> list[dict]:
    return [
        {"kind": k.kind_id, "mass_g": k.mass, "conc": k.conc, count_field: int(n)}
        for k, n in zip(obj.kinds, counts)
    ]


def sample_from_echo(rows: list[dict]) -> SampleCounts:
    kinds = tuple(ParticleKind(int(r["kind"]), float(r["mass_g"]), float(r["conc"])) for r in rows)
    return SampleCounts(kinds, np.array([int(r["count_sample"]) for r in rows], dtype=np.int64))


def population_from_echo(rows: list[dict]) -> PopulationSpec:
    kinds = tuple(ParticleKind(int(r["kind"]), float(r["mass_g"]), float(r["conc"])) for r in rows)
    return PopulationSpec(kinds, np.array([int(r["count_batch"]) for r in rows], dtype=np.int64))


def matrix_echo(C: DependenceMatrix) -> dict:
    return {"variant": C.variant, "values": C.values.tolist()}


def matrix_from_echo(obj: dict) -> DependenceMatrix:
    return DependenceMatrix(np.array(obj["values"], dtype=np.float64), obj["variant"])
