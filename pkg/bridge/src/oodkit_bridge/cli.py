"""`bridge` command line: seeded UMAP/t-SNE reduction over the file contract.

    bridge reduce --method umap --components 8 --seed 0 \
        --train train.csv --test test.csv --out reduced/

Writes one [n_components] NPY per id under out/embeddings/, derived
train.csv/test.csv manifests, and bridge_meta.json. Exit code 0 on
success; on any failure a JSON error report goes to stderr and the exit
code is nonzero. `bridge probe --method umap` reports backend
availability the same way.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .io import (
    BridgeError,
    Record,
    load_embedding,
    load_manifest,
    with_embedding,
    write_embedding,
    write_manifest,
)
from .reducers import check_request, reduce_tsne, reduce_umap, umap_available


def _stack(records: list[Record]) -> np.ndarray:
    vectors = [load_embedding(r) for r in records]
    lengths = {v.shape[0] for v in vectors}
    if len(lengths) != 1:
        raise BridgeError(f"embeddings disagree in flattened length: {sorted(lengths)}")
    return np.stack(vectors)


def cmd_reduce(args) -> int:
    check_request(args.method, args.components)
    train_records = load_manifest(Path(args.train))
    test_records = load_manifest(Path(args.test))
    train_matrix = _stack(train_records)
    test_matrix = _stack(test_records)
    if test_matrix.shape[1] != train_matrix.shape[1]:
        raise BridgeError(
            f"train/test flattened lengths differ: {train_matrix.shape[1]} vs {test_matrix.shape[1]}"
        )

    if args.method == "umap":
        train_out, test_out = reduce_umap(train_matrix, test_matrix, args.components, args.seed)
    else:
        train_out, test_out = reduce_tsne(train_matrix, test_matrix, args.components, args.seed)

    out_dir = Path(args.out)
    emb_dir = out_dir / "embeddings"
    emb_dir.mkdir(parents=True, exist_ok=True)

    def materialize(records, matrix, name):
        derived = []
        for record, vector in zip(records, matrix):
            path = emb_dir / f"{record.id}.npy"
            write_embedding(vector, path)
            derived.append(with_embedding(record, path))
        write_manifest(derived, out_dir / name)

    materialize(train_records, train_out, "train.csv")
    materialize(test_records, test_out, "test.csv")

    meta = {
        "method": args.method,
        "n_components": args.components,
        "seed": args.seed,
        "n_train": len(train_records),
        "n_test": len(test_records),
        "joint_fit": args.method == "tsne",
    }
    if args.method == "tsne":
        meta["caveat"] = (
            "t-SNE has no out-of-sample transform; train and test were embedded "
            "jointly and are distinguished only by their split tags"
        )
    (out_dir / "bridge_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_probe(args) -> int:
    if args.method == "umap":
        ok, why = umap_available()
        if not ok:
            raise BridgeError(why)
    elif args.method != "tsne":
        raise BridgeError(f"unknown method {args.method!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bridge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reduce", help="reduce manifest embeddings to n components")
    p.add_argument("--method", choices=("umap", "tsne"), required=True)
    p.add_argument("--components", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", required=True, help="train manifest CSV")
    p.add_argument("--test", required=True, help="test manifest CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("probe", help="exit 0 iff the method's backend is usable")
    p.add_argument("--method", choices=("umap", "tsne"), required=True)
    p.set_defaults(func=cmd_probe)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BridgeError as exc:
        print(json.dumps({"error": "BridgeError", "message": str(exc)}), file=sys.stderr)
        return 1
    except Exception as exc:  # contract: any failure ends in a JSON report
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
