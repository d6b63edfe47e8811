"""Deterministic synthetic datasets: a small mixed-type tabular fixture for
pipeline tests and a planted-shortcut dataset for steering evaluation."""

from __future__ import annotations

import csv

import numpy as np

from .data import TABULAR, Dataset, Instance, TabularSchema

TOY_HEADER = ["color", "shape", "size", "weight", "texture", "label"]


def toy_rows(n: int = 500, seed: int = 7) -> list[list[str]]:
    """Mixed categorical/numeric rows with a learnable two-clause concept."""
    rng = np.random.default_rng(seed)
    colors = rng.choice(["red", "green", "blue"], size=n)
    shapes = rng.choice(["circle", "square", "triangle"], size=n)
    sizes = rng.integers(0, 101, size=n)
    weights = np.round(rng.uniform(0.0, 100.0, size=n), 2)
    textures = rng.choice(["smooth", "rough"], size=n)
    labels = ((colors == "red") & (sizes >= 60)) | ((shapes == "circle") & (weights >= 70.0))
    flips = rng.random(n) < 0.08
    labels = labels ^ flips
    rows = []
    for i in range(n):
        rows.append(
            [
                str(colors[i]),
                str(shapes[i]),
                str(int(sizes[i])),
                f"{weights[i]:.2f}",
                str(textures[i]),
                "yes" if labels[i] else "no",
            ]
        )
    return rows


def write_toy_csv(path, n: int = 500, seed: int = 7) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(TOY_HEADER)
        w.writerows(toy_rows(n=n, seed=seed))


def make_spurious_dataset(
    n_train: int = 1600, n_val: int = 200, n_test: int = 400, seed: int = 11
) -> Dataset:
    """Binary dataset whose true concept is signal_a == hi AND signal_b == hi.

    On the train split a shortcut feature equals "on" exactly when the label
    is positive, so a rule generator can latch onto the single shortcut atom.
    On validation/test the shortcut is an independent coin, which is what
    makes it spurious. Distractor features are independent everywhere.
    """
    rng = np.random.default_rng(seed)
    n = n_train + n_val + n_test
    a = rng.choice(["hi", "lo"], size=n, p=[0.6, 0.4])
    b = rng.choice(["hi", "lo"], size=n, p=[0.6, 0.4])
    dist_c = rng.choice(["c0", "c1", "c2"], size=n)
    dist_d = rng.choice(["d0", "d1"], size=n)
    y = (a == "hi") & (b == "hi")
    shortcut = np.empty(n, dtype=object)
    shortcut[:n_train] = np.where(y[:n_train], "on", "off")
    coin = rng.random(n - n_train) < y[:n_train].mean()
    shortcut[n_train:] = np.where(coin, "on", "off")

    instances = []
    for i in range(n):
        raw = {
            "signal_a": str(a[i]),
            "signal_b": str(b[i]),
            "shortcut": str(shortcut[i]),
            "dist_c": str(dist_c[i]),
            "dist_d": str(dist_d[i]),
        }
        instances.append(Instance(id=i, raw=raw, label=int(y[i])))

    train_idx = np.arange(n_train)
    features = tuple(
        (name, "categorical") for name in ["signal_a", "signal_b", "shortcut", "dist_c", "dist_d"]
    )
    categories = {
        name: tuple(sorted({instances[i].raw[name] for i in train_idx}))
        for name, _ in features
    }
    schema = TabularSchema(
        label_column="label",
        label_names=("no", "yes"),
        features=features,
        categories=categories,
        thresholds={},
        numeric_stats={},
    )
    return Dataset(
        kind=TABULAR,
        instances=instances,
        K=2,
        schema=schema,
        train_idx=train_idx,
        val_idx=np.arange(n_train, n_train + n_val),
        test_idx=np.arange(n_train + n_val, n),
        seed=seed,
        ratios=(n_train / n, n_val / n, n_test / n),
    )
