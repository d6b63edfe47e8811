"""Explanation extraction, clustering diagnostics, and steering sessions."""

import hashlib

import numpy as np
import pytest

from rulelens.atoms import satisfies
from rulelens.coverage import TrueMatrix
from rulelens.data import load_tabular
from rulelens.estimator import PretrainConfig, smooth
from rulelens.explain import (
    Explainer,
    ExplainError,
    SteeringSession,
    _kmeans,
    cluster_explanations,
    explanation_embeddings,
    load_explanations_jsonl,
    reset_steering,
    steer_exclude,
    write_explanations_jsonl,
)
from rulelens.fixtures import write_toy_csv
from rulelens.training import TrainConfig, run_pipeline


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    path = tmp_path_factory.mktemp("explain") / "toy.csv"
    write_toy_csv(path, n=500, seed=7)
    ds = load_tabular(path, label_column="label", seed=0)
    cfg = TrainConfig(epochs=3, batch_size=16, lr=1e-3, seed=0, min_df=5, pretrain_samples=200)
    return run_pipeline(ds, cfg, pretrain_config=PretrainConfig(epochs=3, batch_size=32, lr=1e-3, seed=0))


@pytest.fixture(scope="module")
def explainer(pipeline):
    return Explainer(pipeline.model, pipeline.matrix, pipeline.dataset)


def param_digest(model):
    h = hashlib.sha256()
    for name, p in sorted(model.parameters().items()):
        h.update(name.encode())
        h.update(p.data.tobytes())
    return h.hexdigest()


class TestExplain:
    def test_deterministic(self, pipeline, explainer):
        inst = pipeline.dataset.instances[pipeline.dataset.test_idx[0]]
        a = explainer.explain_instance(inst)
        b = explainer.explain_instance(inst)
        assert a == b

    def test_local_coherency(self, pipeline, explainer):
        insts = [pipeline.dataset.instances[i] for i in pipeline.dataset.test_idx[:40]]
        for inst, e in zip(insts, explainer.explain_instances(insts)):
            for atom_id in e.atom_ids:
                assert satisfies(pipeline.pool.atom(atom_id), inst)

    def test_confidence_recomputable(self, pipeline, explainer):
        insts = [pipeline.dataset.instances[i] for i in pipeline.dataset.test_idx[:40]]
        est = pipeline.model.est
        for e in explainer.explain_instances(insts):
            if not e.atom_ids:
                continue
            padded = np.zeros((1, 4), dtype=np.int64)
            padded[0, : len(e.atom_ids)] = e.atom_ids
            p, c = est.forward_ids(padded)
            dist = smooth(p.data[0], float(c.data[0, 0]) * est.N, est.beta_value(), 2)
            np.testing.assert_allclose(e.distribution, dist, atol=1e-9)
            np.testing.assert_allclose(e.confidence, dist[e.predicted_class], atol=1e-9)

    def test_exact_coverage_against_naive_count(self, pipeline, explainer):
        ds = pipeline.dataset
        inst = ds.instances[ds.test_idx[3]]
        e = explainer.explain_instance(inst)
        atoms = [pipeline.pool.atom(i) for i in e.atom_ids]
        train = [ds.instances[i] for i in ds.train_idx]
        naive = sum(all(satisfies(a, t) for a in atoms) for t in train)
        assert e.coverage_n == naive
        np.testing.assert_allclose(e.coverage_pct, 100.0 * naive / len(train))

    def test_all_null_antecedent_uses_train_prior(self, pipeline, explainer):
        ds = pipeline.dataset
        inst = ds.instances[ds.test_idx[0]]
        satisfied = [
            a.id for a in pipeline.pool.atoms
            if a.id != 0 and satisfies(a, inst) and pipeline.model.candidate_base[a.id]
        ]
        e = explainer.explain_instance(inst, exclusions=frozenset(satisfied))
        assert e.atoms == ()
        assert e.null_count == 4
        assert e.coverage_n == len(ds.train_idx)
        labels = ds.labels("train")
        prior = np.bincount(labels, minlength=2) / labels.size
        expected = smooth(prior, labels.size, pipeline.model.est.beta_value(), 2)
        np.testing.assert_allclose(e.distribution, expected, atol=1e-12)

    def test_redundant_atoms_stripped(self, pipeline, explainer):
        pool = pipeline.pool
        ds = pipeline.dataset
        ge = sorted(
            (a for a in pool.atoms if a.kind == "num_ge" and a.feature == "size"),
            key=lambda a: a.value,
        )
        assert len(ge) >= 2
        small, big = ge[0], ge[-1]
        inst = next(
            ds.instances[i] for i in ds.train_idx
            if satisfies(big, ds.instances[i])
        )
        rows = np.array([[small.id, 0, big.id, 0]])
        e = explainer._post_process([inst], rows)[0]
        assert e.atom_ids == (big.id,)
        assert e.null_count == 2

    def test_untrained_refusal(self, pipeline):
        cold = Explainer(pipeline.model, pipeline.matrix, pipeline.dataset, trained=False)
        inst = pipeline.dataset.instances[0]
        with pytest.raises(ExplainError):
            cold.explain_instance(inst)
        assert cold.explain_instance(inst, force=True).instance_id == 0

    def test_jsonl_round_trip(self, pipeline, explainer, tmp_path):
        insts = [pipeline.dataset.instances[i] for i in pipeline.dataset.test_idx[:10]]
        out = explainer.explain_instances(insts)
        path = tmp_path / "explanations.jsonl"
        write_explanations_jsonl(path, out)
        assert load_explanations_jsonl(path) == out


class TestCluster:
    def test_kmeans_separates_blobs(self):
        rng = np.random.default_rng(0)
        a = rng.normal(0.0, 0.05, size=(40, 3))
        b = rng.normal(5.0, 0.05, size=(40, 3))
        assign = _kmeans(np.vstack([a, b]), k=2, seed=1)
        assert len(set(assign[:40])) == 1
        assert len(set(assign[40:])) == 1
        assert assign[0] != assign[40]

    def test_k1_single_cluster_global_accuracy(self, pipeline, explainer):
        exps = explainer.baseline_explanations("train")
        report = cluster_explanations(exps, pipeline.pool, pipeline.dataset, k=1, seed=0)
        assert report.k == 1
        assert report.clusters[0].size == len(exps)
        labels = [pipeline.dataset.instances[e.instance_id].label for e in exps]
        acc = np.mean([e.predicted_class == t for e, t in zip(exps, labels)])
        np.testing.assert_allclose(report.clusters[0].accuracy, acc)

    def test_report_invariants(self, pipeline, explainer):
        exps = explainer.baseline_explanations("train")
        report = cluster_explanations(exps, pipeline.pool, pipeline.dataset, k=5, seed=0)
        assert sum(c.size for c in report.clusters) == len(exps)
        np.testing.assert_allclose(sum(c.pct for c in report.clusters), 100.0, atol=0.1)
        for c in report.clusters:
            assert c.mean_len is None
            for display, count in c.top_atoms:
                assert count >= 1
                assert pipeline.pool.by_display(display) is not None

    def test_render_text_table(self, pipeline, explainer):
        exps = explainer.baseline_explanations("train")
        report = cluster_explanations(exps, pipeline.pool, pipeline.dataset, k=3, seed=0)
        text = report.render_text()
        assert "acc" in text and "label (ratio)" in text and "num (%)" in text
        assert len(text.splitlines()) == 3 + 2

    def test_seeded_determinism(self, pipeline, explainer):
        exps = explainer.baseline_explanations("train")
        a = cluster_explanations(exps, pipeline.pool, pipeline.dataset, k=4, seed=9)
        b = cluster_explanations(exps, pipeline.pool, pipeline.dataset, k=4, seed=9)
        assert a == b

    def test_bad_k(self, pipeline, explainer):
        exps = explainer.baseline_explanations("train")[:5]
        with pytest.raises(ExplainError):
            cluster_explanations(exps, pipeline.pool, pipeline.dataset, k=0)
        with pytest.raises(ExplainError):
            cluster_explanations(exps, pipeline.pool, pipeline.dataset, k=6)

    def test_embeddings_mean_of_atoms(self, pipeline, explainer):
        exps = [e for e in explainer.baseline_explanations("train") if len(e.atom_ids) >= 2][:3]
        table = pipeline.pool.embedding_matrix
        points = explanation_embeddings(exps, pipeline.pool)
        for r, e in enumerate(exps):
            np.testing.assert_allclose(points[r], table[list(e.atom_ids)].mean(axis=0))


class TestSteer:
    def most_common_atom(self, explainer):
        from collections import Counter

        counts = Counter(
            i for e in explainer.baseline_explanations("test") for i in e.atom_ids
        )
        return counts.most_common(1)[0][0]

    def test_exclusion_removes_atom_everywhere(self, explainer):
        session = SteeringSession(explainer)
        target = self.most_common_atom(explainer)
        report = steer_exclude(session, [target])
        assert report.affected["test"]
        for split in session.splits:
            for e in session.explanations(split):
                assert target not in e.atom_ids
        assert report.accuracy_before["test"] is not None

    def test_parameters_untouched(self, pipeline, explainer):
        before = param_digest(pipeline.model)
        session = SteeringSession(explainer)
        steer_exclude(session, [self.most_common_atom(explainer)])
        reset_steering(session)
        assert param_digest(pipeline.model) == before

    def test_absent_atom_zero_affected(self, pipeline, explainer):
        used = {i for e in explainer.baseline_explanations("test") for i in e.atom_ids}
        used |= {i for e in explainer.baseline_explanations("train") for i in e.atom_ids}
        unused = next(
            a.id for a in pipeline.pool.atoms if a.id != 0 and a.id not in used
        )
        session = SteeringSession(explainer)
        report = steer_exclude(session, [unused])
        assert report.affected == {"train": [], "test": []}
        assert report.accuracy_before["test"] is None
        assert report.replacement_histogram == ()

    def test_null_and_unknown_rejected(self, explainer):
        session = SteeringSession(explainer)
        with pytest.raises(ExplainError):
            steer_exclude(session, [0])
        with pytest.raises(ExplainError):
            steer_exclude(session, [10**6])
        with pytest.raises(ExplainError):
            steer_exclude(session, [])

    def test_reset_restores_baseline(self, explainer):
        session = SteeringSession(explainer)
        baseline = [e.to_json_obj() for e in session.explanations("test")]
        steer_exclude(session, [self.most_common_atom(explainer)])
        assert [e.to_json_obj() for e in session.explanations("test")] != baseline
        reset_steering(session)
        assert [e.to_json_obj() for e in session.explanations("test")] == baseline
        assert session.excluded == frozenset()

    def test_reset_fresh_session_noop(self, explainer):
        session = SteeringSession(explainer)
        baseline = [e.to_json_obj() for e in session.explanations("test")]
        reset_steering(session)
        assert [e.to_json_obj() for e in session.explanations("test")] == baseline

    def test_cumulative_exclusions(self, pipeline, explainer):
        session = SteeringSession(explainer)
        first = self.most_common_atom(explainer)
        steer_exclude(session, [first])
        second = next(
            i for e in session.explanations("test") for i in e.atom_ids if i != first
        )
        report = steer_exclude(session, [second])
        assert session.excluded == {first, second}
        assert set(report.excluded) == {first, second}
        for e in session.explanations("test"):
            assert first not in e.atom_ids
            assert second not in e.atom_ids

    def test_replacement_histogram_counts_new_atoms(self, explainer):
        session = SteeringSession(explainer)
        target = self.most_common_atom(explainer)
        report = steer_exclude(session, [target])
        target_display = explainer.pool.atom(target).display
        for display, count in report.replacement_histogram:
            assert display != target_display
            assert count >= 1

    def test_sessions_isolated(self, explainer):
        a = SteeringSession(explainer)
        b = SteeringSession(explainer)
        target = self.most_common_atom(explainer)
        steer_exclude(a, [target])
        assert any(target in e.atom_ids for e in b.explanations("test"))
        assert b.excluded == frozenset()
