"""Consequent estimator: a neural surrogate for a rule's empirical class
distribution and coverage, plus the smoothed posterior confidence with a
learnable concentration."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

LOG_SIGMA_FLOOR = -6.0
RAW_BETA_UNIT = math.log(math.e - 1.0)  # softplus(raw) == 1


class EstimatorError(Exception):
    pass


def smooth(p_hat, n_alpha: float, beta: float, K: int) -> np.ndarray:
    """Posterior-predictive smoothing of an empirical class distribution:
    (p_hat * n + beta) / (n + K * beta). Uniform at n=0, converges to p_hat
    as n grows."""
    p = np.asarray(p_hat, dtype=np.float64)
    if p.shape != (K,):
        raise EstimatorError(f"p_hat must have shape ({K},), got {p.shape}")
    if beta <= 0:
        raise EstimatorError(f"beta must be positive, got {beta}")
    if n_alpha < 0:
        raise EstimatorError(f"n_alpha must be non-negative, got {n_alpha}")
    if abs(p.sum() - 1.0) > 1e-6:
        raise EstimatorError(f"p_hat must sum to 1, got {p.sum()}")
    if n_alpha == 0:
        # beta / (K * beta) can land an ulp off uniform; the limit is exact
        return np.full(K, 1.0 / K)
    return (p * n_alpha + beta) / (n_alpha + K * beta)


def smooth_in_graph(p_tilde: Tensor, n_tilde: Tensor, beta: Tensor, K: int) -> Tensor:
    """Differentiable smoothing: p_tilde (B, K), n_tilde (B, 1), beta scalar."""
    num = p_tilde * n_tilde + beta
    den = n_tilde + beta * float(K)
    return num / den


@dataclass(frozen=True)
class ConsequentEstimate:
    p_tilde: tuple[float, ...]
    c_tilde: float
    n_tilde: float
    smoothed: tuple[float, ...]
    beta: float


class EstimatorModel(dc.Module):
    """Self-attention over atom embeddings, masked mean-pool, an MLP, and two
    heads: class distribution and normalized coverage.

    The atom embedding table is registered here ("table") and shared by
    reference with the antecedent generator; it stays frozen while the
    estimator pretrains. raw_beta parameterizes the smoothing concentration
    via softplus and only trains in the second stage.
    """

    def __init__(self, rng: np.random.Generator, table: Tensor, K: int, L: int, N: int):
        super().__init__()
        self.K = K
        self.L = L
        self.N = N
        self.h = table.data.shape[1]
        self.table = self.register("table", table)
        self.attn = self.add_child("attn", dc.SelfAttention(rng, self.h))
        self.mlp = self.add_child("mlp", dc.Linear(rng, self.h, self.h))
        out_dim = 1 if K == 2 else K
        self.class_head = self.add_child("class_head", dc.Linear(rng, self.h, out_dim))
        self.cov_head = self.add_child("cov_head", dc.Linear(rng, self.h, 1))
        self.log_sigma_p = self.register("log_sigma_p", Tensor(np.array(0.0)))
        self.log_sigma_n = self.register("log_sigma_n", Tensor(np.array(0.0)))
        self.raw_beta = self.register("raw_beta", Tensor(np.array(RAW_BETA_UNIT)))

    def beta(self) -> Tensor:
        return dc.log(dc.exp(self.raw_beta) + 1.0)

    def beta_value(self) -> float:
        return float(math.log(1.0 + math.exp(float(self.raw_beta.data))))

    def pad_ids(self, atom_ids) -> np.ndarray:
        ids = [int(i) for i in atom_ids]
        if len(ids) > self.L:
            raise EstimatorError(f"antecedent length {len(ids)} exceeds limit {self.L}")
        if any(not 0 <= i < self.table.data.shape[0] for i in ids):
            raise EstimatorError(f"atom id outside pool range in {ids}")
        return np.array(ids + [0] * (self.L - len(ids)), dtype=np.int64)

    def tokens_from_ids(self, ids: np.ndarray) -> tuple[Tensor, np.ndarray]:
        """Constant embedding lookup for (B, L) id arrays; the differentiable
        path into the table goes through one-hot matmuls in the generator."""
        tokens = Tensor(self.table.data[ids])
        mask = (ids != 0).astype(np.float64)
        return tokens, mask

    def forward_tokens(self, tokens: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        attended = self.attn(tokens, mask)
        pooled = dc.mean_pool(tokens + attended, mask)
        feat = dc.relu(self.mlp(pooled))
        if self.K == 2:
            p1 = dc.sigmoid(self.class_head(feat))
            p = dc.concat([1.0 - p1, p1], axis=1)
        else:
            p = dc.softmax(self.class_head(feat))
        c = dc.sigmoid(self.cov_head(feat))
        return p, c

    def forward_ids(self, ids: np.ndarray) -> tuple[Tensor, Tensor]:
        tokens, mask = self.tokens_from_ids(ids)
        return self.forward_tokens(tokens, mask)

    def predict(self, atom_ids) -> ConsequentEstimate:
        ids = self.pad_ids(atom_ids)[None, :]
        p, c = self.forward_ids(ids)
        p_tilde = p.data[0]
        c_tilde = float(c.data[0, 0])
        n_tilde = c_tilde * self.N
        beta = self.beta_value()
        return ConsequentEstimate(
            p_tilde=tuple(float(v) for v in p_tilde),
            c_tilde=c_tilde,
            n_tilde=n_tilde,
            smoothed=tuple(float(v) for v in smooth(p_tilde, n_tilde, beta, self.K)),
            beta=beta,
        )


def pretrain_loss(
    model: EstimatorModel,
    tokens: Tensor,
    mask: np.ndarray,
    target_p: np.ndarray,
    target_c: np.ndarray,
) -> Tensor:
    """Multi-task uncertainty loss: mean per-rule squared errors weighted by
    learned variances plus the log-variance penalty."""
    p, c = model.forward_tokens(tokens, mask)
    B = float(tokens.data.shape[0])
    lsp = dc.clamp_min(model.log_sigma_p, LOG_SIGMA_FLOOR)
    lsn = dc.clamp_min(model.log_sigma_n, LOG_SIGMA_FLOOR)
    half_inv_var_p = dc.exp(lsp * -2.0) * 0.5
    half_inv_var_n = dc.exp(lsn * -2.0) * 0.5
    loss_p = dc.sse(p, target_p) * (1.0 / B) * half_inv_var_p
    loss_c = dc.sse(c, target_c) * (1.0 / B) * half_inv_var_n
    return loss_p + loss_c + lsp + lsn


@dataclass
class PretrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    val_fraction: float = 0.1
    seed: int = 0
    lengths: tuple[int, ...] | None = None  # None trains on every rule length
    log_csv: str | None = None


def _corpus_arrays(model: EstimatorModel, records) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ids = np.zeros((len(records), model.L), dtype=np.int64)
    target_p = np.zeros((len(records), model.K))
    target_c = np.zeros((len(records), 1))
    for r, rec in enumerate(records):
        ids[r] = model.pad_ids(rec.atom_ids)
        target_p[r] = rec.p_hat
        target_c[r, 0] = rec.n_alpha / model.N
    return ids, target_p, target_c


def evaluate_mae(model: EstimatorModel, records) -> dict:
    """Mean absolute errors of the class-distribution and coverage heads."""
    if not records:
        raise EstimatorError("cannot evaluate on an empty record list")
    ids, target_p, target_c = _corpus_arrays(model, records)
    p, c = model.forward_ids(ids)
    return {
        "mae_p": float(np.abs(p.data - target_p).mean()),
        "mae_c": float(np.abs(c.data - target_c).mean()),
    }


def pretrain(model: EstimatorModel, records, config: PretrainConfig) -> list[dict]:
    """Fit the estimator heads on sampled-rule statistics; the embedding table
    and raw_beta stay out of the optimizer. Returns per-epoch history rows."""
    if config.lengths is not None:
        records = [r for r in records if len(r.atom_ids) in config.lengths]
    if not records:
        raise EstimatorError("pretraining corpus is empty")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(records))
    n_val = max(1, int(round(config.val_fraction * len(records)))) if len(records) > 1 else 0
    val_records = [records[i] for i in perm[:n_val]]
    train_records = [records[i] for i in perm[n_val:]]
    if not train_records:
        train_records, val_records = val_records, train_records

    ids, target_p, target_c = _corpus_arrays(model, train_records)
    params = {
        name: p
        for name, p in model.parameters().items()
        if name not in ("table", "raw_beta")
    }
    model.table.requires_grad = False
    model.raw_beta.requires_grad = False
    opt = dc.Adam(params, lr=config.lr)

    history: list[dict] = []
    n = len(train_records)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for lo in range(0, n, config.batch_size):
            sel = order[lo : lo + config.batch_size]
            tokens, mask = model.tokens_from_ids(ids[sel])
            loss = pretrain_loss(model, tokens, mask, target_p[sel], target_c[sel])
            value = loss.item()
            if not np.isfinite(value):
                raise EstimatorError(
                    f"pretraining diverged: non-finite loss {value} "
                    f"at epoch {epoch}, batch {lo // config.batch_size}"
                )
            for p in params.values():
                p.grad = None
            dc.backward(loss)
            opt.step()
            total += value
            batches += 1
        mae = evaluate_mae(model, val_records or train_records)
        history.append(
            {
                "epoch": epoch,
                "L_c": total / batches,
                "MAE_p": mae["mae_p"],
                "MAE_c": mae["mae_c"],
                "sigma_p": float(np.exp(max(model.log_sigma_p.data, LOG_SIGMA_FLOOR))),
                "sigma_n": float(np.exp(max(model.log_sigma_n.data, LOG_SIGMA_FLOOR))),
            }
        )
    if config.log_csv:
        write_history_csv(config.log_csv, history)
    return history


def write_history_csv(path, history: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(
            f, fieldnames=["epoch", "L_c", "MAE_p", "MAE_c", "sigma_p", "sigma_n"]
        )
        writer.writeheader()
        writer.writerows(history)
