"""Synthetic detection fixtures shared by pipeline, CLI, and acceptance tests.

Train embeddings are standard normal; OOD test embeddings are shifted by a
constant vector, so any sane detector separates them. DSC values are
assigned so the OOD images are exactly the shifted ones.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from oodkit.tensor_io import MANIFEST_COLUMNS, write_npy


def make_detection_fixture(
    root: Path,
    n_train: int = 400,
    n_id: int = 50,
    n_ood: int = 50,
    dim: tuple[int, ...] = (16,),
    shift: float = 3.0,
    seed: int = 1234,
    id_dsc: float = 0.98,
    ood_dsc: float = 0.5,
) -> tuple[Path, Path]:
    """Write embeddings + manifests under root; returns (train_csv, test_csv)."""
    rng = np.random.default_rng(seed)
    emb = root / "emb"
    emb.mkdir(parents=True, exist_ok=True)

    def rows_for(prefix, n, split, offset, dsc, hd, nsd):
        rows = []
        for i in range(n):
            name = f"{prefix}{i:03d}"
            t = rng.standard_normal(dim) + offset
            write_npy(t, emb / f"{name}.npy")
            rows.append([name, split, f"emb/{name}.npy", dsc, hd, nsd, "", ""])
        return rows

    train_rows = rows_for("tr", n_train, "train", 0.0, "", "", "")
    id_rows = rows_for("id", n_id, "test", 0.0, repr(id_dsc), repr(5.0), repr(0.9))
    ood_rows = rows_for("ood", n_ood, "test", shift, repr(ood_dsc), repr(40.0), repr(0.3))

    def write(path, rows):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MANIFEST_COLUMNS)
            w.writerows(rows)

    train_csv = root / "train.csv"
    test_csv = root / "test.csv"
    write(train_csv, train_rows)
    write(test_csv, id_rows + ood_rows)
    return train_csv, test_csv
