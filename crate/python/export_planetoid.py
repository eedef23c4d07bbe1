"""Convert raw Planetoid files (ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index})
into the geoformer dataset directory with the public split: the first
`len(y)` nodes train, the next 500 validate, the listed test indices test.

    python3 python/export_planetoid.py --raw path/to/raw --name cora --out data/cora

Needs numpy and scipy (the raw files are pickled scipy matrices).
"""

import argparse
import json
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load_raw(raw: Path, name: str):
    parts = {}
    for key in ("x", "y", "tx", "ty", "allx", "ally", "graph"):
        with open(raw / f"ind.{name}.{key}", "rb") as f:
            parts[key] = pickle.load(f, encoding="latin1")
    test_index = [int(line) for line in (raw / f"ind.{name}.test.index").read_text().split()]
    return parts, test_index


def assemble(parts, test_index):
    tx, ty = parts["tx"], parts["ty"]
    ordered = np.sort(test_index)
    span = ordered[-1] - ordered[0] + 1
    if span != len(test_index):
        # citeseer has isolated test nodes missing from tx/ty; pad them out.
        full_tx = sp.lil_matrix((span, tx.shape[1]))
        full_tx[ordered - ordered[0], :] = tx
        tx = full_tx
        full_ty = np.zeros((span, ty.shape[1]))
        full_ty[ordered - ordered[0], :] = ty
        ty = full_ty
    features = sp.vstack((parts["allx"], tx)).tolil()
    onehot = np.vstack((parts["ally"], ty))
    features[test_index, :] = features[ordered, :]
    onehot[test_index, :] = onehot[ordered, :]
    labels = np.where(onehot.sum(axis=1) > 0, onehot.argmax(axis=1), -1)

    n = features.shape[0]
    edges = set()
    for u, nbrs in parts["graph"].items():
        for v in nbrs:
            if u != v and u < n and v < n:
                edges.add((min(u, v), max(u, v)))

    num_train = parts["y"].shape[0]
    tested = set(int(i) for i in test_index)
    val = [i for i in range(num_train, min(num_train + 500, n)) if i not in tested]
    split = {
        "train": [i for i in range(num_train) if labels[i] >= 0],
        "val": [i for i in val if labels[i] >= 0],
        "test": sorted(int(i) for i in test_index if labels[i] >= 0),
    }
    return features.toarray(), labels.astype(int), sorted(edges), split, onehot.shape[1]


def write(out: Path, features, labels, edges, split, num_classes):
    out.mkdir(parents=True, exist_ok=True)
    meta = {"num_nodes": int(features.shape[0]), "num_features": int(features.shape[1]), "num_classes": int(num_classes)}
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    (out / "edges.tsv").write_text("".join(f"{u}\t{v}\n" for u, v in edges))
    with open(out / "features.csv", "w") as f:
        for row in features:
            f.write(",".join(repr(float(x)) for x in row) + "\n")
    (out / "labels.tsv").write_text("".join(f"{int(y)}\n" for y in labels))
    (out / "splits.json").write_text(json.dumps(split) + "\n")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--raw", type=Path, required=True, help="directory holding the ind.<name>.* files")
    p.add_argument("--name", default="cora", choices=["cora", "citeseer", "pubmed"])
    p.add_argument("--out", type=Path, required=True)
    args = p.parse_args(argv)
    parts, test_index = load_raw(args.raw, args.name)
    features, labels, edges, split, c = assemble(parts, test_index)
    write(args.out, features, labels, edges, split, c)
    print(f"{args.name}: {features.shape[0]} nodes, {len(edges)} edges, {c} classes -> {args.out}", file=sys.stderr)


if __name__ == "__main__":
    main()
