"""Inference-time explanation extraction, explanation clustering
diagnostics, and test-time steering through atom exclusion."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .atoms import NULL_ID, AtomPool, strip_redundant, truth_table
from .coverage import TrueMatrix
from .data import Dataset, Instance, encode_instances
from .estimator import smooth
from .generator import RuleModel

_TOP_ATOMS = 5


class ExplainError(Exception):
    pass


@dataclass(frozen=True)
class Explanation:
    instance_id: int
    atoms: tuple[str, ...]
    atom_ids: tuple[int, ...]
    predicted_class: int
    predicted_label: str
    confidence: float
    distribution: tuple[float, ...]
    coverage_n: int
    coverage_pct: float
    null_count: int

    def __post_init__(self):
        if not 0.0 < self.confidence < 1.0:
            raise ExplainError(f"confidence must lie inside (0, 1), got {self.confidence}")

    def to_json_obj(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "atoms": list(self.atoms),
            "atom_ids": list(self.atom_ids),
            "predicted_class": self.predicted_class,
            "predicted_label": self.predicted_label,
            "confidence": self.confidence,
            "distribution": list(self.distribution),
            "coverage_n": self.coverage_n,
            "coverage_pct": self.coverage_pct,
            "null_count": self.null_count,
        }


def write_explanations_jsonl(path, explanations) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in explanations:
            f.write(json.dumps(e.to_json_obj(), sort_keys=True))
            f.write("\n")


def load_explanations_jsonl(path) -> list[Explanation]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            obj = json.loads(line)
            out.append(
                Explanation(
                    instance_id=obj["instance_id"],
                    atoms=tuple(obj["atoms"]),
                    atom_ids=tuple(obj["atom_ids"]),
                    predicted_class=obj["predicted_class"],
                    predicted_label=obj["predicted_label"],
                    confidence=obj["confidence"],
                    distribution=tuple(obj["distribution"]),
                    coverage_n=obj["coverage_n"],
                    coverage_pct=obj["coverage_pct"],
                    null_count=obj["null_count"],
                )
            )
    return out


class Explainer:
    """Greedy explanation service over a trained rule model plus the exact
    coverage engine. Read-only with respect to model parameters."""

    def __init__(
        self,
        model: RuleModel,
        matrix: TrueMatrix,
        dataset: Dataset,
        trained: bool = True,
    ):
        self.model = model
        self.pool: AtomPool = model.pool
        self.matrix = matrix
        self.dataset = dataset
        self.trained = trained
        self._baseline: dict[str, list[Explanation]] = {}

    def explain_instances(
        self,
        instances: list[Instance],
        exclusions=frozenset(),
        force: bool = False,
        batch_size: int = 256,
    ) -> list[Explanation]:
        if not self.trained and not force:
            raise ExplainError(
                "model is not marked trained; pass force=True to explain anyway"
            )
        if not instances:
            return []
        X = encode_instances(self.dataset, instances)
        truth = truth_table(self.pool, instances).T.astype(bool)
        out = []
        for start in range(0, len(instances), batch_size):
            sl = slice(start, start + batch_size)
            result = self.model.explain_ids(X[sl], truth[sl], exclusions=exclusions)
            out.extend(self._post_process(instances[sl], result.ids))
        return out

    def explain_instance(self, instance: Instance, exclusions=frozenset(), force: bool = False) -> Explanation:
        return self.explain_instances([instance], exclusions, force)[0]

    def explain_split(self, split: str, exclusions=frozenset(), force: bool = False) -> list[Explanation]:
        instances = [self.dataset.instances[i] for i in self.dataset.split(split)]
        return self.explain_instances(instances, exclusions, force)

    def baseline_explanations(self, split: str) -> list[Explanation]:
        """Unsteered explanations for a named split, computed once."""
        if split not in self._baseline:
            self._baseline[split] = self.explain_split(split)
        return self._baseline[split]

    def _post_process(self, instances: list[Instance], id_rows: np.ndarray) -> list[Explanation]:
        est = self.model.est
        K = self.model.K
        stripped_rows = []
        for row in id_rows:
            atoms = strip_redundant([self.pool.atom(int(i)) for i in row if i != NULL_ID])
            stripped_rows.append([a.id for a in atoms])

        padded = np.zeros((len(stripped_rows), self.model.config.L), dtype=np.int64)
        for r, ids in enumerate(stripped_rows):
            padded[r, : len(ids)] = ids
        p, c = est.forward_ids(padded)
        beta = est.beta_value()

        out = []
        for r, (inst, ids) in enumerate(zip(instances, stripped_rows)):
            if ids:
                n_tilde = float(c.data[r, 0]) * est.N
                dist = smooth(p.data[r], n_tilde, beta, K)
            else:
                # all-NULL antecedent: the smoothed exact train prior
                cov = self.matrix.coverage(())
                dist = smooth(np.asarray(cov.p_hat), cov.n_alpha, beta, K)
            cov = self.matrix.coverage(ids)
            predicted = int(dist.argmax())
            out.append(
                Explanation(
                    instance_id=inst.id,
                    atoms=tuple(self.pool.atom(i).display for i in ids),
                    atom_ids=tuple(ids),
                    predicted_class=predicted,
                    predicted_label=self.dataset.schema.label_names[predicted],
                    confidence=float(dist[predicted]),
                    distribution=tuple(float(v) for v in dist),
                    coverage_n=cov.n_alpha,
                    coverage_pct=100.0 * cov.n_alpha / self.matrix.n,
                    null_count=int((np.asarray(id_rows[r]) == NULL_ID).sum()),
                )
            )
        return out


# ---------------------------------------------------------------------------
# clustering diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterInfo:
    cluster_id: int
    size: int
    pct: float
    accuracy: float
    majority_label: str
    majority_ratio: float
    mean_len: float | None
    top_atoms: tuple[tuple[str, int], ...]

    def to_json_obj(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "size": self.size,
            "pct": self.pct,
            "accuracy": self.accuracy,
            "majority_label": self.majority_label,
            "majority_ratio": self.majority_ratio,
            "mean_len": self.mean_len,
            "top_atoms": [[a, c] for a, c in self.top_atoms],
        }


@dataclass(frozen=True)
class ClusterReport:
    k: int
    total: int
    clusters: tuple[ClusterInfo, ...]

    def __post_init__(self):
        if sum(c.size for c in self.clusters) != self.total:
            raise ExplainError("cluster sizes must sum to the sample count")
        if abs(sum(c.pct for c in self.clusters) - 100.0) > 0.1:
            raise ExplainError("cluster percentages must sum to 100")

    def to_json_obj(self) -> dict:
        return {
            "k": self.k,
            "total": self.total,
            "clusters": [c.to_json_obj() for c in self.clusters],
        }

    def render_text(self) -> str:
        has_len = any(c.mean_len is not None for c in self.clusters)
        header = ["cluster", "acc", "label (ratio)", "num (%)"]
        if has_len:
            header.append("len")
        header.append("atoms (by frequency)")
        rows = [header]
        for c in self.clusters:
            row = [
                str(c.cluster_id),
                f"{c.accuracy:.3f}",
                f"{c.majority_label} ({c.majority_ratio:.2f})",
                f"{c.size} ({c.pct:.1f}%)",
            ]
            if has_len:
                row.append("-" if c.mean_len is None else f"{c.mean_len:.1f}")
            row.append(", ".join(f"{a} [{n}]" for a, n in c.top_atoms))
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = []
        for i, r in enumerate(rows):
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines)


def _center_dists(points: np.ndarray, centers: np.ndarray, pnorm: np.ndarray) -> np.ndarray:
    # squared distances via the norm expansion; avoids an (n, k, d) temporary
    cnorm = (centers * centers).sum(axis=1)
    d2 = pnorm[:, None] - 2.0 * (points @ centers.T) + cnorm[None, :]
    return np.maximum(d2, 0.0)


def _kmeans(points: np.ndarray, k: int, seed: int, max_iter: int = 100) -> np.ndarray:
    """Seeded k-means++ initialization followed by Lloyd iterations."""
    rng = np.random.default_rng(seed)
    n = points.shape[0]
    pnorm = (points * points).sum(axis=1)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = _center_dists(points, centers[:1], pnorm)[:, 0]
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j] = points[rng.integers(n)]
        else:
            centers[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, _center_dists(points, centers[j:j + 1], pnorm)[:, 0])
    assign = None
    for _ in range(max_iter):
        new_assign = _center_dists(points, centers, pnorm).argmin(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = points[assign == j]
            if members.size:
                centers[j] = members.mean(axis=0)
    return assign


def explanation_embeddings(explanations, pool: AtomPool) -> np.ndarray:
    """Mean atom embedding per explanation; zero vector for empty ones."""
    table = pool.embedding_matrix
    out = np.zeros((len(explanations), table.shape[1]))
    for r, e in enumerate(explanations):
        if e.atom_ids:
            out[r] = table[list(e.atom_ids)].mean(axis=0)
    return out


def cluster_explanations(
    explanations: list[Explanation],
    pool: AtomPool,
    dataset: Dataset,
    k: int = 10,
    seed: int = 0,
) -> ClusterReport:
    if k < 1:
        raise ExplainError(f"k must be >= 1, got {k}")
    if k > len(explanations):
        raise ExplainError(
            f"k={k} exceeds the number of explanations ({len(explanations)})"
        )
    points = explanation_embeddings(explanations, pool)
    assign = _kmeans(points, k, seed)

    total = len(explanations)
    infos = []
    for j in range(k):
        members = [e for e, a in zip(explanations, assign) if a == j]
        if not members:
            infos.append(
                ClusterInfo(j, 0, 0.0, 0.0, "-", 0.0, None, ())
            )
            continue
        true_labels = [dataset.instances[e.instance_id].label for e in members]
        correct = sum(
            int(e.predicted_class == t) for e, t in zip(members, true_labels)
        )
        counts = Counter(true_labels)
        maj, maj_n = counts.most_common(1)[0]
        mean_len = None
        if dataset.kind == "text":
            lengths = [
                len(dataset.instances[e.instance_id].raw) for e in members
            ]
            mean_len = float(np.mean(lengths))
        atom_counts = Counter(a for e in members for a in e.atoms)
        infos.append(
            ClusterInfo(
                cluster_id=j,
                size=len(members),
                pct=100.0 * len(members) / total,
                accuracy=correct / len(members),
                majority_label=dataset.schema.label_names[maj],
                majority_ratio=maj_n / len(members),
                mean_len=mean_len,
                top_atoms=tuple(atom_counts.most_common(_TOP_ATOMS)),
            )
        )
    return ClusterReport(k=k, total=total, clusters=tuple(infos))


# ---------------------------------------------------------------------------
# test-time steering
# ---------------------------------------------------------------------------


@dataclass
class SteerReport:
    excluded: tuple[int, ...]
    affected: dict[str, list[int]]
    replacement_histogram: tuple[tuple[str, int], ...]
    accuracy_before: dict[str, float | None]
    accuracy_after: dict[str, float | None]
    confidence_deltas: dict[str, dict[int, float]]

    def to_json_obj(self) -> dict:
        return {
            "excluded": list(self.excluded),
            "affected": {s: list(v) for s, v in self.affected.items()},
            "affected_counts": {s: len(v) for s, v in self.affected.items()},
            "replacement_histogram": [[a, c] for a, c in self.replacement_histogram],
            "accuracy_before": self.accuracy_before,
            "accuracy_after": self.accuracy_after,
            "confidence_deltas": {
                s: {str(i): d for i, d in v.items()}
                for s, v in self.confidence_deltas.items()
            },
        }


@dataclass
class SteeringSession:
    """Session-scoped exclusion state. Steering never touches model
    parameters; it only subtracts atoms from candidate masks."""

    explainer: Explainer
    splits: tuple[str, ...] = ("train", "test")
    excluded: frozenset = frozenset()
    current: dict[str, dict[int, Explanation]] = field(default_factory=dict)
    last_report: SteerReport | None = None

    def __post_init__(self):
        self._ensure_current()

    def _ensure_current(self):
        for split in self.splits:
            if split not in self.current:
                self.current[split] = {
                    e.instance_id: e
                    for e in self.explainer.baseline_explanations(split)
                }

    def explanations(self, split: str) -> list[Explanation]:
        return list(self.current[split].values())


def steer_exclude(session: SteeringSession, atom_ids) -> SteerReport:
    """Exclude atoms from the session's candidate masks, re-explain every
    instance whose current explanation used one, and report the deltas."""
    pool = session.explainer.pool
    new_ids = frozenset(int(i) for i in atom_ids)
    if not new_ids:
        raise ExplainError("no atoms given to exclude")
    if NULL_ID in new_ids:
        raise ExplainError("the NULL atom can never be excluded")
    for i in new_ids:
        if not 0 <= i < pool.size:
            raise ExplainError(f"unknown atom id {i}")

    exclusions = session.excluded | new_ids
    dataset = session.explainer.dataset
    affected: dict[str, list[int]] = {}
    acc_before: dict[str, float] = {}
    acc_after: dict[str, float] = {}
    deltas: dict[str, dict[int, float]] = {}
    replaced = Counter()

    for split in session.splits:
        current = session.current[split]
        hit = [
            iid
            for iid, e in current.items()
            if new_ids.intersection(e.atom_ids)
        ]
        affected[split] = hit
        if not hit:
            acc_before[split] = acc_after[split] = None
            deltas[split] = {}
            continue
        instances = [dataset.instances[i] for i in hit]
        fresh = session.explainer.explain_instances(instances, exclusions=exclusions)
        before = [current[i] for i in hit]
        labels = [inst.label for inst in instances]
        acc_before[split] = float(
            np.mean([e.predicted_class == t for e, t in zip(before, labels)])
        )
        acc_after[split] = float(
            np.mean([e.predicted_class == t for e, t in zip(fresh, labels)])
        )
        deltas[split] = {
            iid: f.confidence - b.confidence
            for iid, b, f in zip(hit, before, fresh)
        }
        for b, f in zip(before, fresh):
            for atom in f.atoms:
                if atom not in b.atoms:
                    replaced[atom] += 1
        for iid, f in zip(hit, fresh):
            current[iid] = f

    session.excluded = exclusions
    report = SteerReport(
        excluded=tuple(sorted(exclusions)),
        affected=affected,
        replacement_histogram=tuple(replaced.most_common()),
        accuracy_before=acc_before,
        accuracy_after=acc_after,
        confidence_deltas=deltas,
    )
    session.last_report = report
    return report


def reset_steering(session: SteeringSession) -> None:
    """Restore the hard-prior candidate masks and baseline explanations."""
    session.excluded = frozenset()
    session.current = {}
    session.last_report = None
    session._ensure_current()
