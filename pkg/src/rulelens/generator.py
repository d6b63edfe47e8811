"""Antecedent generator: backbone representation, recurrent step encoder,
masked candidate distributions, and straight-through Gumbel selection under
instance-local constraints."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .atoms import NULL_ID, AtomPool
from .diffcore import Tensor
from .estimator import EstimatorModel

_PROB_FLOOR = 1e-30


class GeneratorError(Exception):
    pass


class Backbone(dc.Module):
    """Three affine layers with two rectifier activations; the final affine
    output is the instance representation z."""

    def __init__(self, rng: np.random.Generator, in_dim: int, hidden: int):
        super().__init__()
        self.fc1 = self.add_child("fc1", dc.Linear(rng, in_dim, hidden))
        self.fc2 = self.add_child("fc2", dc.Linear(rng, hidden, hidden))
        self.fc3 = self.add_child("fc3", dc.Linear(rng, hidden, hidden))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc3(dc.relu(self.fc2(dc.relu(self.fc1(x)))))


@dataclass(frozen=True)
class HardPriorConfig:
    L: int = 4
    tau: float = 1.0
    exclusions: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.L < 1:
            raise GeneratorError(f"L must be >= 1, got {self.L}")
        if self.tau <= 0:
            raise GeneratorError(f"temperature must be positive, got {self.tau}")
        if NULL_ID in self.exclusions:
            raise GeneratorError("the NULL atom can never be excluded")


def gumbel_select(
    probs: Tensor, mask: np.ndarray, tau: float, rng: np.random.Generator
) -> tuple[Tensor, np.ndarray]:
    """Straight-through Gumbel selection from a masked distribution.

    Forward: exact one-hot at argmax(log p + Gumbel noise) over allowed
    entries. Backward: the gradient of the tau-softened softmax of the same
    perturbed scores.
    """
    p = probs.data
    noise = rng.gumbel(size=p.shape)
    scores = np.where(mask > 0, np.log(np.maximum(p, _PROB_FLOOR)) + noise, -np.inf)
    idx = scores.argmax(axis=-1)
    # same perturbed scores, softened in-graph; the clamp keeps log() off
    # masked zeros and the re-mask zeroes them exactly
    soft_scores = (dc.log(dc.clamp_min(probs, _PROB_FLOOR)) + noise) * (1.0 / tau)
    y_soft = dc.masked_softmax(soft_scores, mask)
    return dc.st_select(y_soft, idx), idx


@dataclass
class GenerationResult:
    ids: np.ndarray  # (B, L) chosen atom ids, in selection order
    chosen_probs: np.ndarray  # (B, L) noiseless step probability of each pick
    product_prob: np.ndarray  # (B,) product over steps
    tokens: Tensor  # (B, L, h) chosen atom embeddings, graph-connected
    est_mask: np.ndarray  # (B, L) non-NULL position indicator


class RuleModel(dc.Module):
    """Backbone + GRU step encoder + shared atom table + frozen estimator:
    the full self-explaining classifier."""

    def __init__(
        self,
        rng: np.random.Generator,
        pool: AtomPool,
        estimator: EstimatorModel,
        in_dim: int,
        config: HardPriorConfig | None = None,
    ):
        super().__init__()
        self.pool = pool
        self.config = config or HardPriorConfig()
        self.K = estimator.K
        self.N = estimator.N
        self.h = estimator.h
        self.backbone = self.add_child("backbone", Backbone(rng, in_dim, self.h))
        self.gru = self.add_child("gru", dc.GRUCell(rng, self.h, self.h))
        self.est = self.add_child("est", estimator)
        self.table = estimator.table
        # zero-coverage atoms can never satisfy an instance alongside real
        # evidence; drop them from every candidate mask
        self.candidate_base = np.array(
            [a.coverage > 0 or a.id == NULL_ID for a in pool.atoms], dtype=bool
        )

    def encode(self, x: np.ndarray) -> Tensor:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise GeneratorError(f"encode expects a (B, d) batch, got {x.shape}")
        return self.backbone(Tensor(x))

    def base_mask(self, truth_rows: np.ndarray, exclusions=frozenset()) -> np.ndarray:
        """Per-instance candidate mask: satisfied atoms with live coverage,
        minus exclusions, with NULL always allowed."""
        if NULL_ID in exclusions:
            raise GeneratorError("the NULL atom can never be excluded")
        mask = np.asarray(truth_rows, dtype=bool) & self.candidate_base
        for e in exclusions:
            if not 0 <= e < self.pool.size:
                raise GeneratorError(f"unknown atom id {e} in exclusion set")
            mask[:, e] = False
        mask[:, NULL_ID] = True
        return mask.astype(np.float64)

    def step_distribution(self, z: Tensor, prefix_ids: np.ndarray, mask: np.ndarray) -> Tensor:
        """Candidate distribution for the next step given chosen prefix ids."""
        prefix_ids = np.asarray(prefix_ids, dtype=np.int64)
        if prefix_ids.ndim != 2:
            raise GeneratorError("prefix_ids must be (B, i)")
        if prefix_ids.shape[1] >= self.config.L:
            raise GeneratorError(
                f"prefix length {prefix_ids.shape[1]} must stay below L={self.config.L}"
            )
        if not np.any(mask > 0, axis=-1).all():
            raise GeneratorError("invariant violation: empty candidate mask row")
        h = self.gru.initial_state(z.data.shape[0])
        h = self.gru(z, h)
        for i in range(prefix_ids.shape[1]):
            token = Tensor(self.table.data[prefix_ids[:, i]])
            h = self.gru(token, h)
        logits = dc.matmul_t(h, self.table)
        return dc.masked_softmax(logits, mask)

    def generate(
        self,
        x: np.ndarray,
        truth_rows: np.ndarray,
        rng: np.random.Generator | None = None,
        exclusions=frozenset(),
        greedy: bool = False,
    ) -> GenerationResult:
        """Run L selection steps. Training mode (greedy=False) draws with
        Gumbel noise and keeps the graph differentiable through the one-hot
        embedding products; greedy mode decodes the argmax deterministically."""
        if not greedy and rng is None:
            raise GeneratorError("sampling generation requires a random generator")
        B = x.shape[0]
        L = self.config.L
        exclusions = frozenset(exclusions) | self.config.exclusions
        mask = self.base_mask(truth_rows, exclusions)

        z = self.encode(x)
        h = self.gru.initial_state(B)
        h = self.gru(z, h)
        ids = np.zeros((B, L), dtype=np.int64)
        chosen = np.zeros((B, L))
        token_steps = []
        rows = np.arange(B)
        for i in range(L):
            if not np.any(mask > 0, axis=-1).all():
                raise GeneratorError("invariant violation: empty candidate mask row")
            logits = dc.matmul_t(h, self.table)
            probs = dc.masked_softmax(logits, mask)
            if greedy:
                idx = probs.data.argmax(axis=-1)
                token = Tensor(self.table.data[idx])
            else:
                onehot, idx = gumbel_select(probs, mask, self.config.tau, rng)
                token = dc.matmul(onehot, self.table)
            ids[:, i] = idx
            chosen[:, i] = probs.data[rows, idx]
            token_steps.append(token)
            nonnull = idx != NULL_ID
            mask[rows[nonnull], idx[nonnull]] = 0.0
            if i + 1 < L:
                h = self.gru(token, h)
        return GenerationResult(
            ids=ids,
            chosen_probs=chosen,
            product_prob=chosen.prod(axis=1),
            tokens=dc.stack1(token_steps),
            est_mask=(ids != NULL_ID).astype(np.float64),
        )

    def explain_ids(self, x, truth_rows, exclusions=frozenset()) -> GenerationResult:
        return self.generate(x, truth_rows, exclusions=exclusions, greedy=True)
