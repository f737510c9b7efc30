"""Reduce-then-evaluate sweeps over methods and target dimensions.

A sweep crosses every configured reduction method with every target
dimension and every target (task bundles, and embedding matrices paired
with an estimator), plus one unreduced baseline cell per target. Cells are
isolated: a failing cell becomes an error record and the rest still run.

Config file (JSON, relative paths resolved against the file's directory)::

    {
      "methods": [{"kind": "first"}, {"kind": "random", "seed": 3},
                  {"kind": "pca"}, {"kind": "isomap", "n_neighbors": 15}],
      "dims": [2, 4, 8],                 # optional; default powers of two + D
      "tasks": [{"name": "blobs", "bundle": "blobs_cls/"},
                {"name": "qa", "kind": "retrieval",
                 "paths": {"queries": "q.emb", "passages": "p.emb", "qrels": "qrels.jsonl"}}],
      "matrices": [{"name": "wiki", "path": "wiki.emb"}],
      "estimators": {"twonn": true, "isoscore": true, "discard_fraction": 0.1},
      "seed": 0,
      "output": "report.json",
      "format": "json"
    }
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import EmbeddingMatrix, load_bundle_dir, load_embeddings, load_task_bundle
from .errors import InvalidParameterError
from .intrinsic_dim import DEFAULT_DISCARD, twonn
from .isotropy import isoscore
from .reducers import DEFAULT_NEIGHBORS, KINDS, Reducer, reduce_together
from .taskeval import evaluate

BASELINE = "none"
FORMATS = ("json", "csv")
NOTES = {
    "excluded_methods": {
        "umap": "not implemented; external algorithm outside this toolkit",
        "tsne": "not implemented; O(N^2 d) per iteration at high target dimension",
    },
    "isomap_hyperparameters": "toolkit defaults (n_neighbors=15), not published values",
    "twonn_trim": "largest ratios trimmed by discard_fraction (toolkit default 0.1)",
}


@dataclass(frozen=True)
class MethodSpec:
    kind: str
    seed: int | None = None
    n_neighbors: int = DEFAULT_NEIGHBORS

    def as_dict(self):
        out = {"kind": self.kind}
        if self.kind == "random":
            out["seed"] = self.seed
        if self.kind == "isomap":
            out["n_neighbors"] = self.n_neighbors
        return out


@dataclass(frozen=True)
class TaskSpec:
    name: str
    bundle: str | None = None
    kind: str | None = None
    paths: dict = field(default_factory=dict)

    def as_dict(self):
        if self.bundle is not None:
            return {"name": self.name, "bundle": self.bundle}
        return {"name": self.name, "kind": self.kind, "paths": dict(self.paths)}


@dataclass(frozen=True)
class SweepConfig:
    methods: tuple
    dims: tuple | None = None
    tasks: tuple = ()
    matrices: tuple = ()
    twonn: bool = True
    isoscore: bool = True
    discard_fraction: float = DEFAULT_DISCARD
    seed: int = 0
    output: str | None = None
    format: str = "json"
    base_dir: str = "."

    def __post_init__(self):
        if not self.methods:
            raise InvalidParameterError("sweep config lists no reduction methods")
        for m in self.methods:
            if m.kind not in KINDS:
                raise InvalidParameterError(f"unknown reduction method {m.kind!r}")
        if self.dims is not None:
            dims = list(self.dims)
            if not dims:
                raise InvalidParameterError("sweep config has an empty dims list")
            if any(int(d) != d or d < 1 for d in dims):
                raise InvalidParameterError("dims must be positive integers")
            if any(b <= a for a, b in zip(dims, dims[1:])):
                raise InvalidParameterError("dims must be strictly ascending")
        if not self.tasks and not (self.matrices and (self.twonn or self.isoscore)):
            raise InvalidParameterError("sweep config has no targets (tasks or matrices with estimators)")
        names = [t.name for t in self.tasks] + [m["name"] for m in self.matrices]
        if len(set(names)) != len(names):
            raise InvalidParameterError("task and matrix names must be unique")
        if self.format not in FORMATS:
            raise InvalidParameterError(f"format must be one of {FORMATS}")

    @classmethod
    def from_dict(cls, obj, base_dir="."):
        if not isinstance(obj, dict):
            raise InvalidParameterError("sweep config must be a JSON object")
        known = {"methods", "dims", "tasks", "matrices", "estimators", "seed", "output", "format"}
        unknown = set(obj) - known
        if unknown:
            raise InvalidParameterError(f"unknown sweep config keys: {sorted(unknown)}")
        seed = int(obj.get("seed", 0))
        try:
            methods = tuple(
                MethodSpec(
                    m["kind"],
                    int(m.get("seed", seed)) if m["kind"] == "random" else None,
                    int(m.get("n_neighbors", DEFAULT_NEIGHBORS)),
                )
                for m in obj.get("methods", [])
            )
            tasks = tuple(
                TaskSpec(t["name"], t.get("bundle"), t.get("kind"), dict(t.get("paths", {})))
                for t in obj.get("tasks", [])
            )
            matrices = tuple({"name": m["name"], "path": m["path"]} for m in obj.get("matrices", []))
        except (KeyError, TypeError) as exc:
            raise InvalidParameterError(f"malformed sweep config entry: {exc}") from None
        est = obj.get("estimators", {})
        dims = obj.get("dims")
        return cls(
            methods=methods,
            dims=None if dims is None else tuple(dims),
            tasks=tasks,
            matrices=matrices,
            twonn=bool(est.get("twonn", True)),
            isoscore=bool(est.get("isoscore", True)),
            discard_fraction=float(est.get("discard_fraction", DEFAULT_DISCARD)),
            seed=seed,
            output=obj.get("output"),
            format=obj.get("format", "json"),
            base_dir=str(base_dir),
        )

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise InvalidParameterError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(obj, base_dir=path.parent)

    def echo(self):
        """The config as plain JSON data (no absolute paths, no output location)."""
        return {
            "methods": [m.as_dict() for m in self.methods],
            "dims": None if self.dims is None else list(self.dims),
            "tasks": [t.as_dict() for t in self.tasks],
            "matrices": [dict(m) for m in self.matrices],
            "estimators": {
                "twonn": self.twonn,
                "isoscore": self.isoscore,
                "discard_fraction": self.discard_fraction,
            },
            "seed": self.seed,
        }


@dataclass(frozen=True)
class Record:
    method: str
    dim: int
    target: str
    metric: str
    value: float | None
    meta: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "method": self.method,
            "dim": self.dim,
            "target": self.target,
            "metric": self.metric,
            "value": self.value,
            "meta": self.meta,
        }


@dataclass(frozen=True)
class SweepReport:
    records: tuple
    averages: tuple
    config: dict
    dims: tuple
    version: str = __version__

    def as_dict(self):
        return {
            "version": self.version,
            "config": self.config,
            "dims": list(self.dims),
            "records": [r.as_dict() for r in self.records],
            "averages": [r.as_dict() for r in self.averages],
            "notes": NOTES,
        }


def default_dims(D):
    """Powers of two from 2 below D, then D itself."""
    dims, d = [], 2
    while d < D:
        dims.append(d)
        d *= 2
    dims.append(D)
    return dims


@dataclass(frozen=True, eq=False)
class _Source:
    """One thing to reduce: a task bundle or a bare matrix with its estimators."""

    name: str
    bundle: object = None
    matrix: EmbeddingMatrix | None = None
    targets: tuple = ()

    @property
    def n_cols(self):
        if self.bundle is not None:
            return self.bundle.matrices()[0].cols
        return self.matrix.cols

    def mats(self):
        return self.bundle.matrices() if self.bundle is not None else [self.matrix]


def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() else Path(base) / p


def load_sources(config: SweepConfig):
    sources = []
    for t in config.tasks:
        if t.bundle is not None:
            bundle = load_bundle_dir(_resolve(config.base_dir, t.bundle))
        else:
            paths = {k: _resolve(config.base_dir, v) for k, v in t.paths.items()}
            bundle = load_task_bundle(t.kind, paths)
        sources.append(_Source(t.name, bundle=bundle, targets=((t.name, None),)))
    for m in config.matrices:
        emb = load_embeddings(_resolve(config.base_dir, m["path"]))
        targets = []
        if config.twonn:
            targets.append((f"{m['name']}/twonn", "intrinsic_dim"))
        if config.isoscore:
            targets.append((f"{m['name']}/isoscore", "isoscore"))
        if targets:
            sources.append(_Source(m["name"], matrix=emb, targets=tuple(targets)))
    return sources


def _task_metric(bundle):
    return {
        "classification": "accuracy",
        "clustering": "v_measure",
        "retrieval": "ndcg_at_10",
        "sts": "spearman",
    }[bundle.kind]


def _evaluate_source(src: _Source, mats, method, dim, config, method_meta):
    if src.bundle is not None:
        score = evaluate(src.bundle.with_matrices(mats), seed=config.seed)
        meta = dict(score.meta, n_items=score.n_items, seed=config.seed, **method_meta)
        return [Record(method, dim, src.name, score.metric, score.value, meta)]
    out = []
    for target, metric in src.targets:
        if metric == "intrinsic_dim":
            est = twonn(mats[0], config.discard_fraction)
            meta = dict({k: v for k, v in est.as_dict().items() if k != "id"}, **method_meta)
            out.append(Record(method, dim, target, metric, est.id, meta))
        else:
            rep = isoscore(mats[0])
            meta = dict(method_meta, defect=rep.defect, raw=rep.raw, n_points=rep.n_points)
            out.append(Record(method, dim, target, metric, rep.isoscore, meta))
    return out


def _run_cell(src: _Source, method: MethodSpec | None, dim, config):
    """All records for one (method, dim, source); failures become error records."""
    name = BASELINE if method is None else method.kind
    # reducer parameters live under their own key so they cannot shadow
    # evaluator metadata such as the clustering seed
    params = {} if method is None else {k: v for k, v in method.as_dict().items() if k != "kind"}
    method_meta = {"method_params": params} if params else {}
    try:
        if method is None:
            mats = src.mats()
        else:
            r = Reducer(method.kind, dim, seed=method.seed or 0, n_neighbors=method.n_neighbors)
            mats = reduce_together(r, src.mats(), task_id=src.name)
        return _evaluate_source(src, mats, name, dim, config, method_meta)
    except Exception as exc:  # noqa: BLE001 - cell isolation
        err = dict(method_meta, error=f"{type(exc).__name__}: {exc}")
        metrics = [m or _task_metric(src.bundle) for _, m in src.targets]
        return [Record(name, dim, t, m, None, err) for (t, _), m in zip(src.targets, metrics)]


def _averages(records, sources):
    kinds = {s.name: s.bundle.kind for s in sources if s.bundle is not None}
    groups = {}
    for r in records:
        kind = kinds.get(r.target)
        if kind is None or r.value is None:
            continue
        groups.setdefault((r.method, r.dim, kind, r.metric), []).append(r.value)
    out = []
    for (method, dim, kind, metric), values in groups.items():
        out.append(Record(method, dim, f"mean:{kind}", metric, float(np.mean(values)), {"n": len(values)}))
    return out


def run_sweep(config: SweepConfig, threads=1, sources=None) -> SweepReport:
    """Run every cell of the sweep and assemble the report in a fixed order.

    Records are ordered baseline first, then by method (config order), then
    by dimension, then by target (config order). ``threads`` only changes
    how many cells run at once, never the result.
    """
    sources = load_sources(config) if sources is None else sources
    if not sources:
        raise InvalidParameterError("sweep has no targets")
    min_cols = min(s.n_cols for s in sources)
    dims = tuple(config.dims) if config.dims is not None else tuple(default_dims(min_cols))
    if dims[-1] > min_cols:
        raise InvalidParameterError(
            f"largest sweep dim {dims[-1]} exceeds the smallest source dimension {min_cols}"
        )
    jobs = [(s, None, s.n_cols) for s in sources]
    jobs += [(s, m, d) for m in config.methods for d in dims for s in sources]

    def run(job):
        return _run_cell(job[0], job[1], job[2], config)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    records = tuple(r for cell in results for r in cell)
    return SweepReport(records, tuple(_averages(records, sources)), config.echo(), dims)


def report_json(report: SweepReport) -> str:
    return json.dumps(report.as_dict(), indent=2, allow_nan=False) + "\n"


def report_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "dim", "target", "metric", "value"])
    for r in report.records:
        w.writerow([r.method, r.dim, r.target, r.metric, "" if r.value is None else repr(r.value)])
    return buf.getvalue()


def emit_report(report: SweepReport, path, format="json") -> Path:
    if format not in FORMATS:
        raise InvalidParameterError(f"format must be one of {FORMATS}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = report_json(report) if format == "json" else report_csv(report)
    path.write_bytes(text.encode("utf-8"))
    return path


# ---------------------------------------------------------------------------
# redundancy profiles (one row of an ID / IsoScore table)


@dataclass(frozen=True)
class RedundancyProfile:
    name: str
    prompt_type: str
    intrinsic_dim: float
    isoscore: float
    n_points: int
    n_dims: int

    def as_dict(self):
        return {
            "name": self.name,
            "prompt_type": self.prompt_type,
            "intrinsic_dim": self.intrinsic_dim,
            "isoscore": self.isoscore,
            "n_points": self.n_points,
            "n_dims": self.n_dims,
        }


def redundancy_profile(emb: EmbeddingMatrix, name=None, discard_fraction=DEFAULT_DISCARD, threads=1):
    est = twonn(emb, discard_fraction, threads=threads)
    iso = isoscore(emb)
    return RedundancyProfile(
        name or emb.source_tag, emb.prompt_type, est.id, iso.isoscore, emb.rows, emb.cols
    )
