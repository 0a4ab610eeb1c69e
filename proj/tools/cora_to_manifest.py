#!/usr/bin/env python3
"""Convert the LINQS Cora release (cora.content, cora.cites) to a bgnn dataset.

    python3 tools/cora_to_manifest.py path/to/cora out/cora

Writes nodes.csv, edges.csv and manifest.json into the output directory.
Citations are treated as undirected; duplicate pairs and self-citations are
dropped, and every link gets probability 1.
"""

import argparse
import csv
import json
from pathlib import Path


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source", type=Path, help="directory holding cora.content and cora.cites")
    ap.add_argument("out", type=Path)
    args = ap.parse_args()

    rows = []
    with open(args.source / "cora.content") as f:
        for line in f:
            parts = line.split()
            if parts:
                rows.append((parts[0], parts[1:-1], parts[-1]))
    dim = len(rows[0][1])
    classes = sorted({r[2] for r in rows})
    label_of = {c: i for i, c in enumerate(classes)}
    ids = {r[0] for r in rows}

    pairs = set()
    with open(args.source / "cora.cites") as f:
        for line in f:
            parts = line.split()
            if len(parts) != 2:
                continue
            a, b = parts
            if a == b or a not in ids or b not in ids:
                continue
            pairs.add((min(a, b), max(a, b)))

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "nodes.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["node_id", "label"] + [f"w{i}" for i in range(dim)])
        for node, feats, label in rows:
            w.writerow([node, label_of[label]] + feats)
    with open(args.out / "edges.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["src", "dst"])
        for a, b in sorted(pairs):
            w.writerow([a, b])
    manifest = {
        "name": "cora",
        "nodes_file": "nodes.csv",
        "edges_file": "edges.csv",
        "feature_dim": dim,
        "class_count": len(classes),
        "directed": False,
    }
    (args.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"{len(rows)} nodes, {len(pairs)} links, {dim} features, {len(classes)} classes")


if __name__ == "__main__":
    main()
