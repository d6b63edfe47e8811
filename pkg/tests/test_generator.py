"""Antecedent generator: backbone encoding, masked step distributions,
straight-through Gumbel selection, and constraint-respecting generation."""

import numpy as np
import pytest

import rulelens.diffcore as dc
from rulelens.atoms import build_pool, truth_table
from rulelens.data import load_tabular
from rulelens.diffcore import Tensor
from rulelens.estimator import EstimatorModel
from rulelens.fixtures import write_toy_csv
from rulelens.generator import (
    Backbone,
    GeneratorError,
    HardPriorConfig,
    RuleModel,
    gumbel_select,
)

from conftest import assert_grads_match


@pytest.fixture(scope="module")
def stack(tmp_path_factory):
    path = tmp_path_factory.mktemp("gen") / "toy.csv"
    write_toy_csv(path, n=150, seed=7)
    ds = load_tabular(path, label_column="label", seed=0)
    pool = build_pool(ds)
    train = [ds.instances[i] for i in ds.train_idx]
    truth = truth_table(pool, train).T.astype(bool)  # (B, |O|)
    rng = np.random.default_rng(3)
    table = Tensor(rng.standard_normal((pool.size, 16)) * 0.3)
    table.data[0] = 0.0
    est = EstimatorModel(rng, table, K=2, L=4, N=ds.N)
    model = RuleModel(rng, pool, est, in_dim=ds.input_dim)
    X = ds.encoded("train")
    return model, pool, X, truth


class TestBackbone:
    def test_deterministic_and_shaped(self):
        rng = np.random.default_rng(0)
        bb = Backbone(rng, in_dim=7, hidden=512)
        x = Tensor(np.random.default_rng(1).standard_normal((3, 7)))
        a, b = bb(x), bb(x)
        assert a.data.shape == (3, 512)
        np.testing.assert_array_equal(a.data, b.data)

    def test_zero_final_layer_yields_bias(self):
        rng = np.random.default_rng(0)
        bb = Backbone(rng, in_dim=4, hidden=8)
        bb.fc3.w.data[:] = 0.0
        z = bb(Tensor(np.zeros((2, 4))))
        np.testing.assert_allclose(z.data, np.broadcast_to(bb.fc3.b.data, (2, 8)))


class TestStepDistribution:
    def test_masked_simplex(self, stack):
        model, pool, X, truth = stack
        z = model.encode(X[:5])
        mask = model.base_mask(truth[:5])
        probs = model.step_distribution(z, np.zeros((5, 0), dtype=np.int64), mask)
        np.testing.assert_allclose(probs.data.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(probs.data[mask == 0.0] == 0.0)
        assert np.all(probs.data[:, 0] > 0.0)

    def test_single_candidate_gets_probability_one(self, stack):
        model, pool, X, truth = stack
        z = model.encode(X[:2])
        mask = np.zeros((2, pool.size))
        mask[:, 0] = 1.0
        probs = model.step_distribution(z, np.zeros((2, 0), dtype=np.int64), mask)
        np.testing.assert_array_equal(probs.data[:, 0], 1.0)

    def test_matches_exp_normalize_oracle(self, stack):
        model, pool, X, truth = stack
        z = model.encode(X[:3])
        mask = model.base_mask(truth[:3])
        prefix = np.zeros((3, 0), dtype=np.int64)
        probs = model.step_distribution(z, prefix, mask)
        # independent exp-normalize of the h . o logits
        h = model.gru(z, model.gru.initial_state(3))
        logits = h.data @ model.table.data.T
        e = np.where(mask > 0, np.exp(logits - logits.max(axis=1, keepdims=True)), 0.0)
        expected = e / e.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(probs.data, expected, atol=1e-9)

    def test_empty_mask_rejected(self, stack):
        model, pool, X, truth = stack
        z = model.encode(X[:1])
        with pytest.raises(GeneratorError):
            model.step_distribution(z, np.zeros((1, 0), dtype=np.int64), np.zeros((1, pool.size)))

    def test_prefix_length_validated(self, stack):
        model, pool, X, truth = stack
        z = model.encode(X[:1])
        mask = model.base_mask(truth[:1])
        with pytest.raises(GeneratorError):
            model.step_distribution(z, np.zeros((1, 4), dtype=np.int64), mask)

    def test_gradients_through_backbone_gru_table(self, stack):
        model, pool, X, truth = stack
        mask = model.base_mask(truth[:2])
        weights = np.random.default_rng(9).standard_normal((2, pool.size))
        tensors = [
            model.backbone.fc1.w, model.backbone.fc3.b,
            model.gru.w, model.gru.u, model.table,
        ]

        def build():
            z = model.encode(X[:2])
            probs = model.step_distribution(z, np.zeros((2, 0), dtype=np.int64), mask)
            return dc.sum_to_scalar(probs * weights)

        assert_grads_match(build, tensors)


class TestGumbelSelect:
    def test_always_one_hot(self):
        rng = np.random.default_rng(0)
        probs = Tensor(np.array([[0.2, 0.5, 0.3], [0.9, 0.05, 0.05]]))
        mask = np.ones((2, 3))
        for _ in range(500):
            y, idx = gumbel_select(probs, mask, 1.0, rng)
            np.testing.assert_array_equal(y.data.sum(axis=1), 1.0)
            assert np.all(y.data.max(axis=1) == 1.0)
            np.testing.assert_array_equal(y.data.argmax(axis=1), idx)

    def test_single_candidate_deterministic(self):
        rng = np.random.default_rng(1)
        probs = Tensor(np.array([[0.0, 1.0, 0.0]]))
        mask = np.array([[0.0, 1.0, 0.0]])
        for _ in range(50):
            y, idx = gumbel_select(probs, mask, 1.0, rng)
            assert idx[0] == 1
            np.testing.assert_array_equal(y.data, [[0.0, 1.0, 0.0]])

    def test_monte_carlo_frequencies(self):
        rng = np.random.default_rng(2)
        probs = Tensor(np.array([[0.9, 0.1]]))
        mask = np.ones((1, 2))
        hits = 0
        for _ in range(10**4):
            _, idx = gumbel_select(probs, mask, 1.0, rng)
            hits += int(idx[0] == 0)
        assert 0.88 <= hits / 10**4 <= 0.92

    def test_backward_equals_soft_softmax_gradient(self):
        logits = Tensor(np.array([[0.3, -0.7, 1.1, 0.0]]), requires_grad=True)
        mask = np.array([[1.0, 1.0, 0.0, 1.0]])
        w = np.array([[0.5, -1.5, 2.0, 0.7]])
        tau = 0.8

        probs = dc.masked_softmax(logits, mask)
        y, idx = gumbel_select(probs, mask, tau, np.random.default_rng(42))
        dc.backward(dc.sum_to_scalar(y * w))
        st_grad = logits.grad.copy()

        logits2 = Tensor(logits.data.copy(), requires_grad=True)
        probs2 = dc.masked_softmax(logits2, mask)
        noise = np.random.default_rng(42).gumbel(size=probs2.data.shape)
        soft_scores = (dc.log(dc.clamp_min(probs2, 1e-30)) + noise) * (1.0 / tau)
        soft = dc.masked_softmax(soft_scores, mask)
        dc.backward(dc.sum_to_scalar(soft * w))
        np.testing.assert_allclose(st_grad, logits2.grad, atol=1e-6, rtol=0)


class TestGenerate:
    def test_local_coherency_and_no_duplicates(self, stack):
        model, pool, X, truth = stack
        rng = np.random.default_rng(4)
        result = model.generate(X[:64], truth[:64], rng=rng)
        for r in range(64):
            nonnull = [i for i in result.ids[r] if i != 0]
            assert len(nonnull) == len(set(nonnull))
            for atom_id in nonnull:
                assert truth[r, atom_id]

    def test_greedy_coherency(self, stack):
        model, pool, X, truth = stack
        result = model.explain_ids(X[:64], truth[:64])
        for r in range(64):
            for atom_id in result.ids[r]:
                if atom_id != 0:
                    assert truth[r, atom_id]

    def test_greedy_deterministic(self, stack):
        model, pool, X, truth = stack
        a = model.explain_ids(X[:16], truth[:16])
        b = model.explain_ids(X[:16], truth[:16])
        np.testing.assert_array_equal(a.ids, b.ids)
        np.testing.assert_array_equal(a.chosen_probs, b.chosen_probs)

    def test_sampling_seed_reproducible(self, stack):
        model, pool, X, truth = stack
        a = model.generate(X[:16], truth[:16], rng=np.random.default_rng(11))
        b = model.generate(X[:16], truth[:16], rng=np.random.default_rng(11))
        np.testing.assert_array_equal(a.ids, b.ids)

    def test_mask_exhaustion_forces_null(self, stack):
        model, pool, X, truth = stack
        only = np.zeros((1, pool.size), dtype=bool)
        only[0, 0] = True
        only[0, 5] = True
        rng = np.random.default_rng(5)
        result = model.generate(X[:1], only, rng=rng)
        nonnull = [i for i in result.ids[0] if i != 0]
        assert set(nonnull) <= {5}
        assert len(nonnull) <= 1

    def test_exclusions_respected(self, stack):
        model, pool, X, truth = stack
        sat = np.flatnonzero(truth[:64].sum(axis=0))
        target = int(sat[1]) if sat[0] == 0 else int(sat[0])
        rng = np.random.default_rng(6)
        result = model.generate(X[:64], truth[:64], rng=rng, exclusions={target})
        assert target not in set(result.ids.ravel().tolist())

    def test_null_never_excludable(self, stack):
        model, pool, X, truth = stack
        with pytest.raises(GeneratorError):
            model.generate(X[:1], truth[:1], rng=np.random.default_rng(0), exclusions={0})
        with pytest.raises(GeneratorError):
            HardPriorConfig(exclusions=frozenset({0}))

    def test_unknown_exclusion_rejected(self, stack):
        model, pool, X, truth = stack
        with pytest.raises(GeneratorError):
            model.generate(X[:1], truth[:1], rng=np.random.default_rng(0),
                           exclusions={pool.size + 7})

    def test_zero_coverage_atoms_never_candidates(self, stack):
        model, pool, X, truth = stack
        dead = [a.id for a in pool.atoms if a.coverage == 0 and a.id != 0]
        if not dead:
            starved = next(a.id for a in pool.atoms if a.id != 0)
            before = pool.atoms[starved].coverage
            pool.atoms[starved].coverage = 0
            try:
                rebuilt = RuleModel(
                    np.random.default_rng(0), pool, model.est, in_dim=X.shape[1]
                )
                assert not rebuilt.candidate_base[starved]
            finally:
                pool.atoms[starved].coverage = before
        else:
            assert not model.candidate_base[dead].any()

    def test_product_probability(self, stack):
        model, pool, X, truth = stack
        result = model.generate(X[:8], truth[:8], rng=np.random.default_rng(8))
        np.testing.assert_allclose(
            result.product_prob, result.chosen_probs.prod(axis=1)
        )
        assert np.all(result.product_prob > 0.0)
        assert np.all(result.product_prob <= 1.0)

    def test_requires_rng_when_sampling(self, stack):
        model, pool, X, truth = stack
        with pytest.raises(GeneratorError):
            model.generate(X[:1], truth[:1])

    def test_gradient_reaches_backbone_and_table(self, stack):
        model, pool, X, truth = stack
        for p in model.parameters().values():
            p.grad = None
        result = model.generate(X[:4], truth[:4], rng=np.random.default_rng(10))
        p, c = model.est.forward_tokens(result.tokens, result.est_mask)
        dc.backward(dc.sum_to_scalar(p * np.array([[1.0, 2.5]])))
        assert model.backbone.fc1.w.grad is not None
        assert np.any(model.backbone.fc1.w.grad != 0.0)
        assert model.table.grad is not None

    def test_estimator_consumes_generated_tokens(self, stack):
        model, pool, X, truth = stack
        result = model.explain_ids(X[:6], truth[:6])
        p, c = model.est.forward_tokens(result.tokens, result.est_mask)
        np.testing.assert_allclose(p.data.sum(axis=1), 1.0, atol=1e-9)
        assert c.data.shape == (6, 1)
