"""Candidate atom pool: typed literal predicates over a dataset schema,
satisfaction evaluation, embedding initialization, and redundancy stripping."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import TABULAR, TEXT, Dataset, Instance

NULL_ID = 0

KIND_NULL = "null"
KIND_WORD = "word"
KIND_CAT = "cat"
KIND_GE = "num_ge"
KIND_LT = "num_lt"


class AtomError(Exception):
    pass


def format_threshold(t: float) -> str:
    return str(int(t)) if float(t) == int(t) else repr(float(t))


@dataclass
class Atom:
    id: int
    kind: str
    feature: str | None
    value: object  # word, category string, or float threshold
    display: str
    coverage: int = 0
    embedding: np.ndarray | None = field(default=None, repr=False)

    def descriptor(self) -> tuple:
        return (self.kind, self.feature, self.value)


def parse_display(display: str) -> tuple:
    """Inverse of the display formatting; returns (kind, feature, value)."""
    if display == "NULL":
        return (KIND_NULL, None, None)
    if " ≥ " in display:
        feature, raw = display.split(" ≥ ", 1)
        return (KIND_GE, feature, float(raw))
    if " < " in display:
        feature, raw = display.split(" < ", 1)
        return (KIND_LT, feature, float(raw))
    if " == " in display:
        feature, value = display.split(" == ", 1)
        return (KIND_CAT, feature, value)
    return (KIND_WORD, None, display)


def _make_display(kind: str, feature, value) -> str:
    if kind == KIND_NULL:
        return "NULL"
    if kind == KIND_WORD:
        return str(value)
    if kind == KIND_CAT:
        return f"{feature} == {value}"
    op = "≥" if kind == KIND_GE else "<"
    return f"{feature} {op} {format_threshold(value)}"


@dataclass
class AtomPool:
    dataset_kind: str
    atoms: list[Atom]
    feature_index: dict  # feature name -> tuple of atom ids (tabular only)

    @property
    def size(self) -> int:
        return len(self.atoms)

    def __len__(self) -> int:
        return len(self.atoms)

    def atom(self, atom_id: int) -> Atom:
        if not 0 <= atom_id < len(self.atoms):
            raise AtomError(f"unknown atom id {atom_id} (pool size {len(self.atoms)})")
        return self.atoms[atom_id]

    def by_display(self, display: str) -> Atom:
        for a in self.atoms:
            if a.display == display:
                return a
        raise AtomError(f"no atom with display '{display}'")

    @property
    def embedding_matrix(self) -> np.ndarray:
        if self.atoms[0].embedding is None:
            raise AtomError("atom embeddings not initialized")
        return np.vstack([a.embedding for a in self.atoms])

    def to_json_obj(self) -> dict:
        return {
            "dataset_kind": self.dataset_kind,
            "atoms": [
                {
                    "id": a.id,
                    "kind": a.kind,
                    "feature": a.feature,
                    "value": a.value,
                    "display": a.display,
                    "coverage": a.coverage,
                }
                for a in self.atoms
            ],
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json_obj(), f, sort_keys=True)
            f.write("\n")

    @classmethod
    def from_json_obj(cls, obj: dict) -> "AtomPool":
        atoms = [
            Atom(
                id=rec["id"],
                kind=rec["kind"],
                feature=rec["feature"],
                value=rec["value"],
                display=rec["display"],
                coverage=rec["coverage"],
            )
            for rec in obj["atoms"]
        ]
        if not atoms or [a.id for a in atoms] != list(range(len(atoms))):
            raise AtomError("atom ids must be dense starting at 0")
        if atoms[0].kind != KIND_NULL or any(a.kind == KIND_NULL for a in atoms[1:]):
            raise AtomError("exactly one NULL atom required, at id 0")
        return cls(
            dataset_kind=obj["dataset_kind"],
            atoms=atoms,
            feature_index=_build_feature_index(atoms),
        )

    @classmethod
    def load(cls, path) -> "AtomPool":
        with open(path, encoding="utf-8") as f:
            return cls.from_json_obj(json.load(f))


def _build_feature_index(atoms: list[Atom]) -> dict:
    index: dict = {}
    for a in atoms:
        if a.feature is not None:
            index.setdefault(a.feature, []).append(a.id)
    return {k: tuple(v) for k, v in index.items()}


def satisfies(atom: Atom, instance: Instance) -> bool:
    if atom.kind == KIND_NULL:
        return True
    if atom.kind == KIND_WORD:
        count = instance.raw.get(atom.value, 0)
        if not isinstance(count, int):
            raise AtomError(
                f"word atom '{atom.display}' evaluated against a non-text instance"
            )
        return count >= 1
    if atom.feature not in instance.raw:
        raise AtomError(
            f"atom '{atom.display}' references feature '{atom.feature}' "
            "missing from the instance"
        )
    v = instance.raw[atom.feature]
    if atom.kind == KIND_CAT:
        return v == atom.value
    if atom.kind == KIND_GE:
        return float(v) >= atom.value
    if atom.kind == KIND_LT:
        return float(v) < atom.value
    raise AtomError(f"unknown atom kind '{atom.kind}'")


def truth_table(pool: AtomPool, instances: list[Instance]) -> np.ndarray:
    """Boolean satisfaction matrix, shape (pool size, len(instances))."""
    n = len(instances)
    out = np.zeros((pool.size, n), dtype=bool)
    out[NULL_ID] = True
    if pool.dataset_kind == TEXT:
        doc_words = [frozenset(inst.raw) for inst in instances]
        for a in pool.atoms[1:]:
            out[a.id] = np.fromiter((a.value in s for s in doc_words), dtype=bool, count=n)
        return out
    columns: dict = {}
    for a in pool.atoms[1:]:
        if a.feature not in columns:
            vals = [inst.raw[a.feature] for inst in instances]
            if a.kind in (KIND_GE, KIND_LT):
                columns[a.feature] = np.asarray(vals, dtype=np.float64)
            else:
                columns[a.feature] = np.asarray(vals, dtype=object)
        col = columns[a.feature]
        if a.kind == KIND_GE:
            out[a.id] = col >= a.value
        elif a.kind == KIND_LT:
            out[a.id] = col < a.value
        else:
            out[a.id] = col == a.value
    return out


def build_pool(dataset: Dataset, num_atoms: int = 5000) -> AtomPool:
    """Enumerate candidate atoms from the schema and count train coverage.

    text: one word-exists atom per vocabulary word, capped at num_atoms.
    tabular: categorical-equals per (feature, category) and numeric ge/lt per
    (feature, threshold). A NULL atom is prepended at id 0.
    """
    atoms = [Atom(id=NULL_ID, kind=KIND_NULL, feature=None, value=None, display="NULL")]
    if dataset.kind == TEXT:
        for w in dataset.schema.vocab[:num_atoms]:
            atoms.append(
                Atom(id=len(atoms), kind=KIND_WORD, feature=None, value=w, display=w)
            )
    else:
        for name, kind in dataset.schema.features:
            if kind == "numeric":
                for t in dataset.schema.thresholds[name]:
                    for k in (KIND_GE, KIND_LT):
                        atoms.append(
                            Atom(
                                id=len(atoms),
                                kind=k,
                                feature=name,
                                value=float(t),
                                display=_make_display(k, name, t),
                            )
                        )
            else:
                for cat in dataset.schema.categories[name]:
                    atoms.append(
                        Atom(
                            id=len(atoms),
                            kind=KIND_CAT,
                            feature=name,
                            value=cat,
                            display=_make_display(KIND_CAT, name, cat),
                        )
                    )
    if len(atoms) == 1:
        raise AtomError("empty atom pool: schema produced no candidate atoms")
    pool = AtomPool(
        dataset_kind=dataset.kind, atoms=atoms, feature_index=_build_feature_index(atoms)
    )
    train_instances = [dataset.instances[i] for i in dataset.train_idx]
    truth = truth_table(pool, train_instances)
    counts = truth.sum(axis=1)
    for a in pool.atoms:
        a.coverage = int(counts[a.id])
    return pool


def init_embeddings(pool: AtomPool, representations: np.ndarray, truth: np.ndarray) -> AtomPool:
    """Set each atom's embedding to the mean representation of the train
    instances satisfying it. NULL and zero-coverage atoms get zero vectors."""
    reps = np.asarray(representations, dtype=np.float64)
    if reps.ndim != 2:
        raise AtomError(f"representations must be 2-d, got shape {reps.shape}")
    if truth.shape != (pool.size, reps.shape[0]):
        raise AtomError(
            f"dimension mismatch: truth {truth.shape} vs "
            f"(pool {pool.size}, instances {reps.shape[0]})"
        )
    counts = truth.sum(axis=1).astype(np.float64)
    sums = truth.astype(np.float64) @ reps
    emb = np.zeros_like(sums)
    live = counts > 0
    emb[live] = sums[live] / counts[live, None]
    emb[NULL_ID] = 0.0
    for a in pool.atoms:
        a.embedding = emb[a.id]
    return pool


def strip_redundant(atoms: list[Atom]) -> list[Atom]:
    """Drop same-feature same-direction numeric atoms dominated by a tighter
    one (keep the largest ge-threshold, the smallest lt-threshold) and exact
    duplicates. Survivor order is preserved."""
    tightest: dict = {}
    for a in atoms:
        if a.kind in (KIND_GE, KIND_LT):
            key = (a.feature, a.kind)
            best = tightest.get(key)
            if (
                best is None
                or (a.kind == KIND_GE and a.value > best.value)
                or (a.kind == KIND_LT and a.value < best.value)
            ):
                tightest[key] = a
    out, seen = [], set()
    for a in atoms:
        if a.kind in (KIND_GE, KIND_LT) and tightest[(a.feature, a.kind)] is not a:
            if a.descriptor() != tightest[(a.feature, a.kind)].descriptor():
                continue
        if a.descriptor() in seen:
            continue
        seen.add(a.descriptor())
        out.append(a)
    return out


def conflicting_numeric_pairs(atoms: list[Atom]) -> list[tuple[Atom, Atom]]:
    """Unsatisfiable (ge t, lt t') pairs with t >= t' on the same feature."""
    pairs = []
    for i, a in enumerate(atoms):
        for b in atoms[i + 1 :]:
            if a.feature is None or a.feature != b.feature:
                continue
            ge, lt = None, None
            for x in (a, b):
                if x.kind == KIND_GE:
                    ge = x
                elif x.kind == KIND_LT:
                    lt = x
            if ge is not None and lt is not None and ge.value >= lt.value:
                pairs.append((a, b))
    return pairs


def canonical_key(atom_ids) -> tuple:
    """Sorted, deduplicated non-NULL atom ids: the identity of an antecedent."""
    ids = {int(i) for i in atom_ids}
    ids.discard(NULL_ID)
    return tuple(sorted(ids))
