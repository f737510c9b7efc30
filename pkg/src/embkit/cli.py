"""``embkit`` command line.

Exit status: 0 on success, 1 for invalid input or parameters (one-line
diagnostic on stderr), 2 for internal errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    FILE_ROLES,
    MAGIC,
    load_bundle_dir,
    load_embeddings,
    load_task_bundle,
    read_manifest,
    save_embeddings,
    save_task_bundle,
)
from .errors import BundleValidationError, EmbkitError, InvalidParameterError
from .intrinsic_dim import DEFAULT_DISCARD, twonn
from .isotropy import isoscore
from .reducers import DEFAULT_NEIGHBORS, KINDS, Reducer, apply, fit
from .sweep import SweepConfig, emit_report, load_sources, report_csv, report_json, run_sweep
from .synthgen import (
    gen_gaussian_spectrum,
    gen_labeled_blobs,
    gen_retrieval_planted,
    gen_sts_planted,
    gen_uniform_manifold,
)
from .taskeval import evaluate


class UsageError(EmbkitError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _seed(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("must be an unsigned 64-bit integer")
    return value


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _default_threads():
    env = os.environ.get("EMBKIT_THREADS")
    if env:
        try:
            return _positive_int(env)
        except argparse.ArgumentTypeError:
            raise UsageError(f"EMBKIT_THREADS: invalid value {env!r}") from None
    return os.cpu_count() or 1


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads (default: $EMBKIT_THREADS or CPU count)")

    p = _Parser(prog="embkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"embkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("reduce", parents=[common], help="reduce an embedding file")
    r.add_argument("--input", required=True, type=Path)
    r.add_argument("--output", required=True, type=Path)
    r.add_argument("--method", required=True, choices=KINDS)
    r.add_argument("--dim", required=True, type=_positive_int)
    r.add_argument("--seed", type=_seed, default=0)
    r.add_argument("--neighbors", type=_positive_int, default=DEFAULT_NEIGHBORS)
    r.add_argument("--task-id", default=None, help="random-method stream label (default: input file stem)")

    i = sub.add_parser("id", parents=[common], help="TwoNN intrinsic dimension")
    i.add_argument("--input", required=True, type=Path)
    i.add_argument("--discard-fraction", type=float, default=DEFAULT_DISCARD)

    s = sub.add_parser("isoscore", parents=[common], help="IsoScore isotropy")
    s.add_argument("--input", required=True, type=Path)

    e = sub.add_parser("eval", parents=[common], help="evaluate a task bundle")
    e.add_argument("kind", choices=tuple(FILE_ROLES))
    e.add_argument("--bundle", type=Path, help="bundle directory with bundle.json")
    e.add_argument("--path", action="append", default=[], metavar="ROLE=FILE",
                   help="file for one role, e.g. qrels=judgments.jsonl (repeatable)")
    e.add_argument("--seed", type=_seed, default=0)

    g = sub.add_parser("synth", parents=[common], help="write a synthetic fixture")
    g.add_argument("kind", choices=("uniform_manifold", "gaussian_spectrum", "labeled_blobs",
                                    "retrieval_planted", "sts_planted"))
    g.add_argument("--out", required=True, type=Path, help="output directory")
    g.add_argument("--seed", type=_seed, default=0)
    g.add_argument("--intrinsic-dim", type=_positive_int, default=5)
    g.add_argument("--ambient-dim", type=_positive_int, default=64)
    g.add_argument("--n", type=_positive_int, default=1000)
    g.add_argument("--spectrum", type=_float_list)
    g.add_argument("--classes", type=_positive_int, default=4)
    g.add_argument("--per-class", type=_positive_int, default=100)
    g.add_argument("--separation", type=float, default=10.0)
    g.add_argument("--signal-dims", type=_positive_int)
    g.add_argument("--queries", type=_positive_int, default=100)
    g.add_argument("--passages", type=_positive_int, default=1000)
    g.add_argument("--pairs", type=_positive_int, default=500)
    g.add_argument("--noise", type=float, default=0.5)

    w = sub.add_parser("sweep", parents=[common], help="run a reduction sweep")
    w.add_argument("--config", required=True, type=Path)
    w.add_argument("--output", type=Path, help="overrides the config's output")
    w.add_argument("--format", choices=("json", "csv"), help="overrides the config's format")
    w.add_argument("--seed", type=_seed, help="overrides the config's seed")

    v = sub.add_parser("validate", parents=[common], help="check any input file or bundle")
    v.add_argument("path", type=Path)
    return p


def _emit(obj):
    sys.stdout.write(json.dumps(obj) + "\n")


def _cmd_reduce(args, threads):
    emb = load_embeddings(args.input)
    reducer = Reducer(args.method, args.dim, seed=args.seed, n_neighbors=args.neighbors)
    task_id = args.task_id if args.task_id is not None else args.input.stem
    out = apply(fit(reducer, emb, task_id=task_id), emb)
    save_embeddings(out, args.output)
    _emit({"output": str(args.output), "rows": out.rows, "cols": out.cols, "method": args.method})


def _cmd_id(args, threads):
    est = twonn(load_embeddings(args.input), args.discard_fraction, threads=threads)
    _emit(est.as_dict())


def _cmd_isoscore(args, threads):
    _emit(isoscore(load_embeddings(args.input)).as_dict())


def _parse_role_paths(items):
    out = {}
    for item in items:
        role, sep, path = item.partition("=")
        if not sep or not role or not path:
            raise UsageError(f"argument --path: expected ROLE=FILE, got {item!r}")
        out[role] = Path(path)
    return out


def _cmd_eval(args, threads):
    overrides = _parse_role_paths(args.path)
    if args.bundle is not None:
        kind, _ = read_manifest(args.bundle)
        if kind != args.kind:
            raise InvalidParameterError(f"{args.bundle} holds a {kind} bundle, not {args.kind}")
        bundle = load_bundle_dir(args.bundle, overrides)
    else:
        bundle = load_task_bundle(args.kind, overrides)
    _emit(evaluate(bundle, seed=args.seed).as_dict())


def _cmd_synth(args, threads):
    out = args.out
    if args.kind == "uniform_manifold":
        emb = gen_uniform_manifold(args.intrinsic_dim, args.ambient_dim, args.n, args.seed)
        save_embeddings(emb, out / "matrix.emb")
        written = [out / "matrix.emb"]
    elif args.kind == "gaussian_spectrum":
        spectrum = args.spectrum if args.spectrum else [1.0] * args.ambient_dim
        emb = gen_gaussian_spectrum(np.asarray(spectrum), args.n, args.seed)
        save_embeddings(emb, out / "matrix.emb")
        written = [out / "matrix.emb"]
    elif args.kind == "labeled_blobs":
        cls, clu = gen_labeled_blobs(args.classes, args.ambient_dim, args.per_class,
                                     args.separation, args.seed, args.signal_dims)
        written = [save_task_bundle(cls, out / "classification"),
                   save_task_bundle(clu, out / "clustering")]
    elif args.kind == "retrieval_planted":
        b = gen_retrieval_planted(args.queries, args.passages, args.ambient_dim, args.noise, args.seed)
        written = [save_task_bundle(b, out)]
    else:
        b = gen_sts_planted(args.pairs, args.ambient_dim, args.noise, args.seed)
        written = [save_task_bundle(b, out)]
    _emit({"kind": args.kind, "written": [str(p) for p in written]})


def _cmd_sweep(args, threads):
    config = SweepConfig.from_file(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.format is not None:
        changes["format"] = args.format
    if changes:
        config = dataclasses.replace(config, **changes)
    report = run_sweep(config, threads=threads)
    output = args.output
    if output is None and config.output is not None:
        output = Path(config.base_dir) / config.output
    if output is None:
        text = report_json(report) if config.format == "json" else report_csv(report)
        sys.stdout.write(text)
    else:
        emit_report(report, output, config.format)
        n_err = sum(1 for r in report.records if r.value is None)
        _emit({"output": str(output), "records": len(report.records), "errors": n_err})


def _cmd_validate(args, threads):
    path = args.path
    if path.is_dir() or path.name == "bundle.json":
        directory = path if path.is_dir() else path.parent
        bundle = load_bundle_dir(directory)
        _emit({"valid": True, "type": "bundle", "kind": bundle.kind,
               "shapes": [list(m.matrix.shape) for m in bundle.matrices()]})
        return
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        emb = load_embeddings(path)
        _emit({"valid": True, "type": "embeddings", "rows": emb.rows, "cols": emb.cols,
               "prompt_type": emb.prompt_type})
        return
    if path.suffix == ".json":
        config = SweepConfig.from_file(path)
        n = len(load_sources(config))
        _emit({"valid": True, "type": "sweep_config", "sources": n})
        return
    if path.suffix == ".jsonl":
        _emit({"valid": True, "type": "jsonl", **_validate_jsonl(path)})
        return
    raise InvalidParameterError(f"{path}: unrecognised file type")


_SIDECAR_SCHEMAS = {
    "labels": {"row": int, "label": (str, int)},
    "qrels": {"query": int, "passage": int, "rel": int},
    "sts_pairs": {"a": int, "b": int, "score": (int, float)},
}


def _validate_jsonl(path):
    schema_name, bad, count = None, [], 0
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError:
                bad.append(n)
                continue
            if schema_name is None:
                schema_name = next((k for k, s in _SIDECAR_SCHEMAS.items()
                                    if isinstance(obj, dict) and set(obj) == set(s)), None)
                if schema_name is None:
                    raise BundleValidationError(f"{path}: unknown sidecar schema", [n])
            schema = _SIDECAR_SCHEMAS[schema_name]
            ok = (isinstance(obj, dict) and set(obj) == set(schema)
                  and all(isinstance(obj[k], t) and not isinstance(obj[k], bool) for k, t in schema.items()))
            if ok and schema_name == "qrels" and obj["rel"] < 0:
                ok = False
            if not ok:
                bad.append(n)
            count += 1
    if bad:
        raise BundleValidationError(f"{path}: malformed records", bad)
    return {"schema": schema_name, "records": count}


COMMANDS = {
    "reduce": _cmd_reduce,
    "id": _cmd_id,
    "isoscore": _cmd_isoscore,
    "eval": _cmd_eval,
    "synth": _cmd_synth,
    "sweep": _cmd_sweep,
    "validate": _cmd_validate,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        threads = args.threads if args.threads is not None else _default_threads()
        COMMANDS[args.command](args, threads)
        return 0
    except (EmbkitError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        msg = " ".join(str(exc).split())
        sys.stderr.write(f"embkit: error: {msg}\n")
        return 1
    except Exception as exc:  # noqa: BLE001
        sys.stderr.write(f"embkit: internal error: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
