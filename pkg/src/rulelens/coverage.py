"""Exact coverage engine: bitset true matrix over (atoms x train instances),
empirical consequent statistics, and the frequency-thresholded rule sampler."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .atoms import NULL_ID, AtomPool, canonical_key, truth_table
from .data import Dataset

logger = logging.getLogger(__name__)


class CoverageError(Exception):
    pass


class CoverageStats(NamedTuple):
    n_alpha: int
    n_alpha_y: tuple[int, ...]
    p_hat: tuple[float, ...] | None  # defined iff n_alpha > 0

    @classmethod
    def from_counts(cls, counts) -> "CoverageStats":
        counts = tuple(int(c) for c in counts)
        n = sum(counts)
        p = tuple(c / n for c in counts) if n > 0 else None
        return cls(n_alpha=n, n_alpha_y=counts, p_hat=p)


def _pack_row(row: np.ndarray) -> int:
    return int.from_bytes(np.packbits(row, bitorder="little").tobytes(), "little")


class TrueMatrix:
    """One immutable bigint bitset per atom; bit j is train instance j."""

    def __init__(self, rows: list[int], class_masks: list[int], n: int, K: int):
        self.rows = rows
        self.class_masks = class_masks
        self.n = n
        self.K = K
        self.popcounts = [r.bit_count() for r in rows]

    @classmethod
    def build(cls, pool: AtomPool, dataset: Dataset) -> "TrueMatrix":
        train = [dataset.instances[i] for i in dataset.train_idx]
        truth = truth_table(pool, train)
        return cls.from_truth(truth, dataset.labels("train"), dataset.K)

    @classmethod
    def from_truth(cls, truth: np.ndarray, labels: np.ndarray, K: int) -> "TrueMatrix":
        rows = [_pack_row(truth[i]) for i in range(truth.shape[0])]
        masks = [_pack_row(labels == y) for y in range(K)]
        return cls(rows=rows, class_masks=masks, n=truth.shape[1], K=K)

    def intersection_bits(self, atom_ids) -> int:
        key = canonical_key(atom_ids)
        if not key:
            return (1 << self.n) - 1
        if key[-1] >= len(self.rows):
            raise CoverageError(f"atom id {key[-1]} outside pool of {len(self.rows)}")
        bits = self.rows[key[0]]
        for i in key[1:]:
            bits &= self.rows[i]
        return bits

    def coverage(self, atom_ids) -> CoverageStats:
        bits = self.intersection_bits(atom_ids)
        n = bits.bit_count()
        # last class count follows from the total: one fewer mask AND
        counts = [(bits & m).bit_count() for m in self.class_masks[:-1]]
        counts.append(n - sum(counts))
        p = tuple(c / n for c in counts) if n > 0 else None
        return CoverageStats(n_alpha=n, n_alpha_y=tuple(counts), p_hat=p)


@dataclass(frozen=True)
class RuleRecord:
    atom_ids: tuple[int, ...]
    n_alpha: int
    n_alpha_y: tuple[int, ...]

    @property
    def p_hat(self) -> tuple[float, ...]:
        return tuple(c / self.n_alpha for c in self.n_alpha_y)


@dataclass
class SampledRuleSet:
    per_length: dict[int, list[RuleRecord]]
    config: dict

    def records(self) -> list[RuleRecord]:
        out = []
        for length in sorted(self.per_length):
            out.extend(self.per_length[length])
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for rec in self.records():
                f.write(
                    json.dumps(
                        {
                            "atom_ids": list(rec.atom_ids),
                            "n_alpha": rec.n_alpha,
                            "n_alpha_y": list(rec.n_alpha_y),
                            "p_hat": list(rec.p_hat),
                        }
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path) -> "SampledRuleSet":
        per_length: dict[int, list[RuleRecord]] = {}
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                rec = RuleRecord(
                    atom_ids=tuple(obj["atom_ids"]),
                    n_alpha=int(obj["n_alpha"]),
                    n_alpha_y=tuple(int(c) for c in obj["n_alpha_y"]),
                )
                per_length.setdefault(len(rec.atom_ids), []).append(rec)
        return cls(per_length=per_length, config={})


def _pair_class_counts(truth: np.ndarray, labels: np.ndarray, K: int) -> np.ndarray:
    """Exact pair co-coverage per class via blockwise float32 products.

    Returns an array of shape (K, |O|, |O|); entries are exact because every
    count is far below 2**24.
    """
    n_atoms = truth.shape[0]
    out = np.zeros((K, n_atoms, n_atoms), dtype=np.int64)
    block = 1024
    for y in range(K):
        t = truth[:, labels == y].astype(np.float32)
        for lo in range(0, n_atoms, block):
            hi = min(lo + block, n_atoms)
            out[y, lo:hi] = np.rint(t[lo:hi] @ t.T).astype(np.int64)
    return out


def sample_rules(
    tm: TrueMatrix,
    min_df: int = 200,
    num_rules: int = 10000,
    k: int | None = None,
    max_len: int = 4,
    seed: int = 0,
    truth: np.ndarray | None = None,
    labels: np.ndarray | None = None,
) -> SampledRuleSet:
    """Sample up to num_rules antecedents per length in [1, max_len], every one
    with exact coverage at least min_df.

    Lengths >= 2 grow iteratively: survivors are capped at k * num_rules,
    extended by one atom id above their current maximum, and re-filtered.
    The final per-length subsample stratifies on the majority empirical label
    and round-robins across classes.
    """
    if min_df < 1:
        raise CoverageError(f"min_df must be >= 1, got {min_df}")
    if k is None:
        k = min_df
    if k < 1:
        raise CoverageError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    K = tm.K
    eligible = [
        i for i in range(1, len(tm.rows)) if tm.popcounts[i] >= min_df
    ]

    def class_counts(bits: int) -> tuple[int, ...]:
        return tuple((bits & m).bit_count() for m in tm.class_masks)

    per_length: dict[int, list[RuleRecord]] = {}
    per_length[1] = [
        RuleRecord((i,), tm.popcounts[i], class_counts(tm.rows[i])) for i in eligible
    ]

    survivors: list[RuleRecord] = []
    if max_len >= 2:
        if truth is not None and labels is not None:
            counts = _pair_class_counts(truth, np.asarray(labels), K)
            totals = counts.sum(axis=0)
            for ai in range(len(eligible)):
                i = eligible[ai]
                for j in eligible[ai + 1 :]:
                    n = int(totals[i, j])
                    if n >= min_df:
                        survivors.append(
                            RuleRecord((i, j), n, tuple(int(counts[y, i, j]) for y in range(K)))
                        )
        else:
            for ai, i in enumerate(eligible):
                for j in eligible[ai + 1 :]:
                    bits = tm.rows[i] & tm.rows[j]
                    n = bits.bit_count()
                    if n >= min_df:
                        survivors.append(RuleRecord((i, j), n, class_counts(bits)))
        per_length[2] = survivors

    for length in range(3, max_len + 1):
        if len(survivors) > k * num_rules:
            pick = rng.choice(len(survivors), size=k * num_rules, replace=False)
            survivors = [survivors[int(i)] for i in np.sort(pick)]
        extended: list[RuleRecord] = []
        for rec in survivors:
            bits = tm.intersection_bits(rec.atom_ids)
            last = rec.atom_ids[-1]
            for a in eligible:
                if a <= last:
                    continue
                nb = bits & tm.rows[a]
                n = nb.bit_count()
                if n >= min_df:
                    extended.append(RuleRecord(rec.atom_ids + (a,), n, class_counts(nb)))
        survivors = extended
        per_length[length] = survivors

    for length in sorted(per_length):
        recs = per_length[length]
        if len(recs) < num_rules:
            logger.warning(
                "length-%d survivors: %d < requested %d; keeping all",
                length, len(recs), num_rules,
            )
            continue
        strata: list[list[RuleRecord]] = [[] for _ in range(K)]
        for rec in recs:
            strata[int(np.argmax(rec.n_alpha_y))].append(rec)
        for s in strata:
            rng.shuffle(s)
        chosen: list[RuleRecord] = []
        while len(chosen) < num_rules:
            progressed = False
            for s in strata:
                if s and len(chosen) < num_rules:
                    chosen.append(s.pop())
                    progressed = True
            if not progressed:
                break
        per_length[length] = chosen

    return SampledRuleSet(
        per_length=per_length,
        config={
            "min_df": min_df,
            "num_rules": num_rules,
            "k": k,
            "max_len": max_len,
            "seed": seed,
        },
    )
