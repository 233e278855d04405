"""Convert the Cora / Citeseer / Pubmed citation graphs into TSV bundles.

Sources are the raw files shipped in the ``pgl`` source distribution on PyPI:
Cora in the LINQS ``cora.content``/``cora.cites`` layout, Citeseer and Pubmed
as Planetoid ``ind.<name>.*`` pickles.

    python scripts/convert_datasets.py --raw /path/to/pgl/data --out data
"""

import argparse
import json
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def write_bundle(out: Path, features, labels, edges, num_classes: int) -> None:
    features = sp.csr_matrix(features)
    out.mkdir(parents=True, exist_ok=True)
    n, f = features.shape
    meta = {"num_nodes": int(n), "num_features": int(f), "num_classes": int(num_classes)}
    (out / "meta.json").write_text(json.dumps(meta) + "\n", encoding="utf-8")
    with (out / "nodes.tsv").open("w", encoding="utf-8") as fh:
        for i in range(n):
            lo, hi = features.indptr[i], features.indptr[i + 1]
            pairs = " ".join(
                f"{j}:{v:.8g}" for j, v in zip(features.indices[lo:hi], features.data[lo:hi]) if v != 0
            )
            fh.write(f"{i}\t{int(labels[i])}\t{pairs}\n")
    with (out / "edges.tsv").open("w", encoding="utf-8") as fh:
        for s, d in edges:
            fh.write(f"{s}\t{d}\n")
    print(f"{out}: {n} nodes, {f} features, {num_classes} classes, {len(edges)} edge lines")


def convert_cora(src: Path, out: Path) -> None:
    ids, rows, names = [], [], []
    with (src / "cora.content").open() as fh:
        for line in fh:
            parts = line.split()
            ids.append(parts[0])
            rows.append(np.array(parts[1:-1], dtype=np.float64))
            names.append(parts[-1])
    classes = sorted(set(names))
    labels = [classes.index(c) for c in names]
    index = {pid: i for i, pid in enumerate(ids)}
    edges = []
    with (src / "cora.cites").open() as fh:
        for line in fh:
            cited, citing = line.split()
            edges.append((index[citing], index[cited]))
    write_bundle(out, np.vstack(rows), labels, edges, len(classes))


def _unpickle(path: Path):
    with path.open("rb") as fh:
        return pickle.load(fh, encoding="latin1")


def convert_planetoid(src: Path, name: str, out: Path) -> None:
    x, y, tx, ty, allx, ally, graph = (
        _unpickle(src / f"ind.{name}.{k}") for k in ("x", "y", "tx", "ty", "allx", "ally", "graph")
    )
    test_idx = [int(v) for v in (src / f"ind.{name}.test.index").read_text().split()]
    test_sorted = sorted(test_idx)
    lo, hi = test_sorted[0], test_sorted[-1]
    # Citeseer has test ids with no feature/label rows; pad them so the
    # Planetoid index arithmetic lines up, then drop them below.
    full = hi - lo + 1
    tx_ext = sp.lil_matrix((full, tx.shape[1]))
    tx_ext[np.array(test_sorted) - lo, :] = tx
    ty_ext = np.zeros((full, ty.shape[1]))
    ty_ext[np.array(test_sorted) - lo, :] = ty
    features = sp.vstack([sp.csr_matrix(allx), sp.csr_matrix(tx_ext)]).tolil()
    onehot = np.vstack([ally, ty_ext])
    features[test_idx, :] = features[test_sorted, :]
    onehot[test_idx, :] = onehot[test_sorted, :]
    features = features.tocsr()

    n = features.shape[0]
    keep = onehot.sum(axis=1) > 0
    remap = -np.ones(n, dtype=np.int64)
    remap[keep] = np.arange(int(keep.sum()))
    labels = onehot[keep].argmax(axis=1)
    edges, dropped = [], 0
    for s, nbrs in graph.items():
        for d in nbrs:
            if s >= n or d >= n or not keep[s] or not keep[d]:
                dropped += 1
                continue
            edges.append((int(remap[s]), int(remap[d])))
    if (~keep).any():
        print(f"{name}: dropped {int((~keep).sum())} unlabeled nodes and {dropped} incident edge records",
              file=sys.stderr)
    write_bundle(out, features[keep], labels, edges, onehot.shape[1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--raw", type=Path, required=True, help="directory holding cora/, citeseer/, pubmed/")
    ap.add_argument("--out", type=Path, default=Path("data"))
    args = ap.parse_args(argv)
    convert_cora(args.raw / "cora", args.out / "cora")
    for name in ("citeseer", "pubmed"):
        convert_planetoid(args.raw / name, name, args.out / name)
    return 0


if __name__ == "__main__":
    sys.exit(main())
