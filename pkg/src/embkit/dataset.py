"""Embedding matrices, task bundles, and their on-disk formats.

EMB1 layout (little-endian, no padding, no footer)::

    offset  size  field
    0       4     magic b"EMB1"
    4       1     format version (1)
    5       1     prompt type (index into PROMPT_TYPES)
    6       2     reserved, must be 0
    8       4     n_rows (u32)
    12      4     n_cols (u32)
    16      ...   n_rows * n_cols float32, row-major

Values are widened to float64 in memory and never normalised on load.

A bundle directory holds the embedding files, JSONL sidecars, and a
``bundle.json`` manifest naming the task kind and the file for each role.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar

import numpy as np

from .errors import BundleValidationError, FormatError, InvalidParameterError
from .numerics import as_matrix

MAGIC = b"EMB1"
VERSION = 1
HEADER = struct.Struct("<4sBBHII")
PROMPT_TYPES = (
    "classification",
    "clustering",
    "retrieval_query",
    "retrieval_passage",
    "sts",
    "none",
)
MANIFEST = "bundle.json"


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    matrix: np.ndarray
    prompt_type: str = "none"
    source_tag: str = ""

    def __post_init__(self):
        m = as_matrix(self.matrix, name=self.source_tag or "embedding matrix")
        if m is self.matrix:
            m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if self.prompt_type not in PROMPT_TYPES:
            raise InvalidParameterError(
                f"prompt_type must be one of {PROMPT_TYPES}, got {self.prompt_type!r}"
            )

    @property
    def rows(self):
        return self.matrix.shape[0]

    @property
    def cols(self):
        return self.matrix.shape[1]

    def replace(self, matrix, **changes):
        return dataclasses.replace(self, matrix=matrix, **changes)


def load_embeddings(path) -> EmbeddingMatrix:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < HEADER.size:
        raise FormatError(f"{path}: header truncated, {len(data)} bytes", offset=len(data))
    magic, version, ptype, reserved, n_rows, n_cols = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}", offset=4)
    if ptype >= len(PROMPT_TYPES):
        raise FormatError(f"{path}: prompt type code {ptype} out of range", offset=5)
    if reserved != 0:
        raise FormatError(f"{path}: reserved field is {reserved}, expected 0", offset=6)
    if n_rows == 0 or n_cols == 0:
        raise FormatError(f"{path}: empty shape {n_rows}x{n_cols}", offset=8)
    expected = HEADER.size + 4 * n_rows * n_cols
    if len(data) < expected:
        have = (len(data) - HEADER.size) // 4
        raise FormatError(
            f"{path}: payload truncated, header declares {n_rows}x{n_cols} "
            f"= {n_rows * n_cols} floats but only {have} present",
            offset=len(data),
        )
    if len(data) > expected:
        raise FormatError(f"{path}: {len(data) - expected} trailing bytes", offset=expected)
    values = np.frombuffer(data, dtype="<f4", offset=HEADER.size, count=n_rows * n_cols)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError(f"{path}: non-finite value", offset=HEADER.size + 4 * int(bad[0]))
    matrix = values.astype(np.float64).reshape(n_rows, n_cols)
    return EmbeddingMatrix(matrix, PROMPT_TYPES[ptype], path.name)


def save_embeddings(X: EmbeddingMatrix, path) -> None:
    path = Path(path)
    m = np.asarray(X.matrix)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise InvalidParameterError(f"refusing to write empty matrix of shape {m.shape}")
    payload = m.astype("<f4")
    if not np.isfinite(payload).all():
        raise InvalidParameterError("matrix has values outside float32 range")
    header = HEADER.pack(MAGIC, VERSION, PROMPT_TYPES.index(X.prompt_type), 0, *m.shape)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + payload.tobytes(order="C"))


# ---------------------------------------------------------------------------
# task bundles


@dataclass(frozen=True, eq=False)
class ClassificationBundle:
    train: EmbeddingMatrix
    train_labels: tuple
    test: EmbeddingMatrix
    test_labels: tuple

    kind: ClassVar[str] = "classification"
    roles: ClassVar[tuple] = ("train", "test")

    def __post_init__(self):
        object.__setattr__(self, "train_labels", tuple(str(x) for x in self.train_labels))
        object.__setattr__(self, "test_labels", tuple(str(x) for x in self.test_labels))
        if len(self.train_labels) != self.train.rows:
            raise BundleValidationError(
                f"{len(self.train_labels)} train labels for {self.train.rows} rows"
            )
        if len(self.test_labels) != self.test.rows:
            raise BundleValidationError(
                f"{len(self.test_labels)} test labels for {self.test.rows} rows"
            )
        if self.train.cols != self.test.cols:
            raise BundleValidationError(
                f"train has {self.train.cols} columns, test has {self.test.cols}"
            )
        unseen = sorted(set(self.test_labels) - set(self.train_labels))
        if unseen:
            raise BundleValidationError(f"test labels absent from train: {unseen[:10]}")

    def matrices(self):
        return [self.train, self.test]

    def with_matrices(self, mats):
        return dataclasses.replace(self, train=mats[0], test=mats[1])


@dataclass(frozen=True, eq=False)
class ClusteringBundle:
    points: EmbeddingMatrix
    gold_labels: tuple

    kind: ClassVar[str] = "clustering"
    roles: ClassVar[tuple] = ("points",)

    def __post_init__(self):
        object.__setattr__(self, "gold_labels", tuple(str(x) for x in self.gold_labels))
        if len(self.gold_labels) != self.points.rows:
            raise BundleValidationError(
                f"{len(self.gold_labels)} labels for {self.points.rows} rows"
            )
        if len(set(self.gold_labels)) < 2:
            raise BundleValidationError("clustering needs at least 2 distinct gold labels")

    def matrices(self):
        return [self.points]

    def with_matrices(self, mats):
        return dataclasses.replace(self, points=mats[0])


@dataclass(frozen=True, eq=False)
class RetrievalBundle:
    queries: EmbeddingMatrix
    passages: EmbeddingMatrix
    qrels: tuple

    kind: ClassVar[str] = "retrieval"
    roles: ClassVar[tuple] = ("queries", "passages")

    def __post_init__(self):
        qrels = tuple((int(q), int(p), int(r)) for q, p, r in self.qrels)
        object.__setattr__(self, "qrels", qrels)
        if self.queries.cols != self.passages.cols:
            raise BundleValidationError(
                f"queries have {self.queries.cols} columns, passages {self.passages.cols}"
            )
        _check_qrels(qrels, self.queries.rows, self.passages.rows)

    def matrices(self):
        return [self.queries, self.passages]

    def with_matrices(self, mats):
        return dataclasses.replace(self, queries=mats[0], passages=mats[1])


@dataclass(frozen=True, eq=False)
class StsBundle:
    pairs: tuple
    points: EmbeddingMatrix

    kind: ClassVar[str] = "sts"
    roles: ClassVar[tuple] = ("points",)

    def __post_init__(self):
        pairs = tuple((int(a), int(b), float(s)) for a, b, s in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        _check_pairs(pairs, self.points.rows)

    def matrices(self):
        return [self.points]

    def with_matrices(self, mats):
        return dataclasses.replace(self, points=mats[0])


BUNDLE_TYPES = {
    cls.kind: cls for cls in (ClassificationBundle, ClusteringBundle, RetrievalBundle, StsBundle)
}
FILE_ROLES = {
    "classification": ("train", "train_labels", "test", "test_labels"),
    "clustering": ("points", "labels"),
    "retrieval": ("queries", "passages", "qrels"),
    "sts": ("points", "pairs"),
}
DEFAULT_FILES = {
    "train": "train.emb",
    "train_labels": "train_labels.jsonl",
    "test": "test.emb",
    "test_labels": "test_labels.jsonl",
    "points": "points.emb",
    "labels": "labels.jsonl",
    "queries": "queries.emb",
    "passages": "passages.emb",
    "qrels": "qrels.jsonl",
    "pairs": "pairs.jsonl",
}


def _check_qrels(qrels, n_queries, n_passages, lines=None):
    lines = lines or list(range(1, len(qrels) + 1))
    dangling, negative, dupes = [], [], []
    seen = set()
    for line, (q, p, r) in zip(lines, qrels):
        if not (0 <= q < n_queries and 0 <= p < n_passages):
            dangling.append(line)
        if r < 0:
            negative.append(line)
        if (q, p) in seen:
            dupes.append(line)
        seen.add((q, p))
    if dangling:
        raise BundleValidationError(
            f"qrels reference rows outside {n_queries} queries / {n_passages} passages",
            dangling,
        )
    if negative:
        raise BundleValidationError("negative relevance grade", negative)
    if dupes:
        raise BundleValidationError("duplicate (query, passage) judgment", dupes)
    judged = {q for q, _, _ in qrels}
    missing = [q for q in range(n_queries) if q not in judged]
    if missing:
        raise BundleValidationError(f"queries without any judgment: {missing[:10]}")


def _check_pairs(pairs, n_points, lines=None):
    lines = lines or list(range(1, len(pairs) + 1))
    bad = [ln for ln, (a, b, s) in zip(lines, pairs)
           if not (0 <= a < n_points and 0 <= b < n_points) or not np.isfinite(s)]
    if bad:
        raise BundleValidationError(f"pair indices outside {n_points} rows or bad score", bad)
    if len(pairs) < 3:
        raise BundleValidationError(f"need at least 3 STS pairs, got {len(pairs)}")


def _read_jsonl(path, fields):
    """Parse a JSONL sidecar; returns (line_numbers, records) with type-checked fields."""
    lines, records, bad = [], [], []
    with open(path, encoding="utf-8") as fh:
        for n, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
                rec = tuple(_coerce(obj[name], kind) for name, kind in fields)
            except (ValueError, KeyError, TypeError):
                bad.append(n)
                continue
            lines.append(n)
            records.append(rec)
    if bad:
        raise BundleValidationError(f"{path}: malformed records", bad)
    return lines, records


def _coerce(value, kind):
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError
        return float(value)
    if isinstance(value, (str, int)) and not isinstance(value, bool):
        return str(value)
    raise TypeError


def _read_labels(path, n_rows):
    lines, records = _read_jsonl(path, [("row", int), ("label", str)])
    labels = [None] * n_rows
    out_of_range, repeated = [], []
    for line, (row, label) in zip(lines, records):
        if not 0 <= row < n_rows:
            out_of_range.append(line)
        elif labels[row] is not None:
            repeated.append(line)
        else:
            labels[row] = label
    if out_of_range:
        raise BundleValidationError(f"{path}: label rows outside {n_rows} rows", out_of_range)
    if repeated:
        raise BundleValidationError(f"{path}: row labelled more than once", repeated)
    missing = [i for i, lab in enumerate(labels) if lab is None]
    if missing:
        raise BundleValidationError(
            f"{path}: {len(records)} labels for {n_rows} rows; unlabelled rows {missing[:10]}"
        )
    return tuple(labels)


def load_task_bundle(kind, paths):
    """Load and validate a bundle from explicit file paths keyed by role.

    Roles per kind are listed in ``FILE_ROLES``; e.g. retrieval needs
    ``queries``, ``passages`` and ``qrels``.
    """
    if kind not in FILE_ROLES:
        raise InvalidParameterError(f"unknown task kind {kind!r}")
    missing = [r for r in FILE_ROLES[kind] if r not in paths]
    if missing:
        raise InvalidParameterError(f"{kind} bundle is missing paths for {missing}")
    p = {role: Path(paths[role]) for role in FILE_ROLES[kind]}
    if kind == "classification":
        train = load_embeddings(p["train"])
        test = load_embeddings(p["test"])
        return ClassificationBundle(
            train, _read_labels(p["train_labels"], train.rows),
            test, _read_labels(p["test_labels"], test.rows),
        )
    if kind == "clustering":
        points = load_embeddings(p["points"])
        return ClusteringBundle(points, _read_labels(p["labels"], points.rows))
    if kind == "retrieval":
        queries = load_embeddings(p["queries"])
        passages = load_embeddings(p["passages"])
        lines, qrels = _read_jsonl(p["qrels"], [("query", int), ("passage", int), ("rel", int)])
        _check_qrels(qrels, queries.rows, passages.rows, lines)
        return RetrievalBundle(queries, passages, tuple(qrels))
    points = load_embeddings(p["points"])
    lines, pairs = _read_jsonl(p["pairs"], [("a", int), ("b", int), ("score", float)])
    _check_pairs(pairs, points.rows, lines)
    return StsBundle(tuple(pairs), points)


def read_manifest(directory):
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text(encoding="utf-8"))
        kind = manifest["kind"]
        files = manifest.get("files", {})
    except FileNotFoundError:
        raise FormatError(f"{directory}: no {MANIFEST}") from None
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise FormatError(f"{directory / MANIFEST}: invalid manifest ({exc})") from None
    if kind not in FILE_ROLES:
        raise FormatError(f"{directory / MANIFEST}: unknown kind {kind!r}")
    paths = {role: directory / files.get(role, DEFAULT_FILES[role]) for role in FILE_ROLES[kind]}
    return kind, paths


def load_bundle_dir(directory, overrides=None):
    kind, paths = read_manifest(directory)
    paths.update(overrides or {})
    return load_task_bundle(kind, paths)


def _write_jsonl(path, objects):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for obj in objects:
            fh.write(json.dumps(obj) + "\n")


def save_task_bundle(bundle, directory) -> Path:
    """Write ``bundle`` under ``directory`` with default file names and a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    f = {role: directory / DEFAULT_FILES[role] for role in FILE_ROLES[bundle.kind]}

    def labels(seq):
        return ({"row": i, "label": lab} for i, lab in enumerate(seq))

    if bundle.kind == "classification":
        save_embeddings(bundle.train, f["train"])
        save_embeddings(bundle.test, f["test"])
        _write_jsonl(f["train_labels"], labels(bundle.train_labels))
        _write_jsonl(f["test_labels"], labels(bundle.test_labels))
    elif bundle.kind == "clustering":
        save_embeddings(bundle.points, f["points"])
        _write_jsonl(f["labels"], labels(bundle.gold_labels))
    elif bundle.kind == "retrieval":
        save_embeddings(bundle.queries, f["queries"])
        save_embeddings(bundle.passages, f["passages"])
        _write_jsonl(f["qrels"], ({"query": q, "passage": p, "rel": r} for q, p, r in bundle.qrels))
    else:
        save_embeddings(bundle.points, f["points"])
        _write_jsonl(f["pairs"], ({"a": a, "b": b, "score": s} for a, b, s in bundle.pairs))
    manifest = {
        "format": "embkit-bundle",
        "version": 1,
        "kind": bundle.kind,
        "files": {role: DEFAULT_FILES[role] for role in FILE_ROLES[bundle.kind]},
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return directory
