"""Two-step optimization: a plain cross-entropy base model, then the
rule model trained end to end against the smoothed confidence of its own
generated antecedents. Also hosts the metric report and the noisy-label
comparison grid."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import average_precision_score, f1_score

from . import diffcore as dc
from .atoms import AtomPool, build_pool, init_embeddings, truth_table
from .coverage import SampledRuleSet, TrueMatrix, sample_rules
from .data import Dataset, inject_symmetric_noise
from .diffcore import Tensor
from .estimator import EstimatorModel, PretrainConfig, pretrain, smooth_in_graph
from .generator import Backbone, HardPriorConfig, RuleModel

_PICK_FLOOR = 1e-12


class TrainError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-5
    gamma: float = 0.95
    seed: int = 0
    L: int = 4
    num_atoms: int = 5000
    min_df: int = 200
    pretrain_samples: int = 10000
    noise_ratio: float = 0.0
    tau: float = 1.0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "L", "num_atoms", "min_df", "pretrain_samples"):
            if getattr(self, name) < 1:
                raise TrainError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr <= 0 or self.gamma <= 0 or self.tau <= 0:
            raise TrainError("lr, gamma, and tau must be positive")
        if not 0.0 <= self.noise_ratio <= 0.5:
            raise TrainError(f"noise_ratio must be within [0, 0.5], got {self.noise_ratio}")

    def to_json_obj(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class MetricsReport:
    model: str
    pr_auc: float | None
    f1: float
    accuracy: float
    epoch_losses: list[float] = field(default_factory=list)
    epoch_val_scores: list[float] = field(default_factory=list)
    wall_clock: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.pr_auc is not None and not 0.0 <= self.pr_auc <= 1.0:
            raise TrainError(f"PR-AUC out of range: {self.pr_auc}")
        if not 0.0 <= self.f1 <= 1.0:
            raise TrainError(f"F1 out of range: {self.f1}")

    def to_json_obj(self) -> dict:
        return {
            "model": self.model,
            "pr_auc": self.pr_auc,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "epoch_losses": self.epoch_losses,
            "epoch_val_scores": self.epoch_val_scores,
            "wall_clock": self.wall_clock,
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json_obj(), f, indent=2, sort_keys=True)
            f.write("\n")

    def write_csv(self, path) -> None:
        import csv

        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss", "val_score"])
            for i, (loss, val) in enumerate(zip(self.epoch_losses, self.epoch_val_scores)):
                w.writerow([i, f"{loss:.10g}", f"{val:.10g}"])


def default_hidden(kind: str) -> int:
    return 512 if kind == "tabular" else 768


def positive_class(dataset: Dataset) -> int:
    """Positive class for PR-AUC: the train-split minority class."""
    counts = np.bincount(dataset.labels("train"), minlength=dataset.K)
    return int(counts.argmin())


def pr_auc(labels: np.ndarray, scores: np.ndarray, positive: int = 1) -> float:
    return float(average_precision_score((np.asarray(labels) == positive).astype(int), scores))


def classification_metrics(dataset: Dataset, probs: np.ndarray, split: str) -> dict:
    labels = dataset.labels(split)
    preds = probs.argmax(axis=1)
    out = {
        "accuracy": float((preds == labels).mean()),
        "f1": float(f1_score(labels, preds, average="macro")),
        "pr_auc": None,
    }
    if dataset.K == 2:
        pos = positive_class(dataset)
        out["pr_auc"] = pr_auc(labels, probs[:, pos], positive=pos)
    return out


class BaseModel(dc.Module):
    """Backbone plus a linear class head; no explanations."""

    def __init__(self, rng: np.random.Generator, in_dim: int, hidden: int, K: int):
        super().__init__()
        self.backbone = self.add_child("backbone", Backbone(rng, in_dim, hidden))
        self.head = self.add_child("head", dc.Linear(rng, hidden, K))

    def logits(self, x: Tensor) -> Tensor:
        return self.head(self.backbone(x))


def base_scores(model: BaseModel, X: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    out = []
    for start in range(0, X.shape[0], batch_size):
        logits = model.logits(Tensor(X[start:start + batch_size])).data
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        out.append(e / e.sum(axis=1, keepdims=True))
    return np.vstack(out)


def extract_representations(backbone: Backbone, X: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Final-affine outputs z for every row; used to seed atom embeddings."""
    out = []
    for start in range(0, X.shape[0], batch_size):
        out.append(backbone(Tensor(X[start:start + batch_size])).data)
    return np.vstack(out)


def train_base(dataset: Dataset, config: TrainConfig) -> tuple[BaseModel, MetricsReport]:
    rng = np.random.default_rng(config.seed)
    hidden = default_hidden(dataset.kind)
    model = BaseModel(rng, dataset.input_dim, hidden, dataset.K)
    X = dataset.encoded("train")
    y = dataset.labels("train")
    X_val = dataset.encoded("val")
    opt = dc.Adam(model.parameters(), lr=config.lr)

    t0 = time.perf_counter()
    epoch_losses, epoch_val = [], []
    for epoch in range(config.epochs):
        order = rng.permutation(X.shape[0])
        total, batches = 0.0, 0
        for start in range(0, order.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss = dc.cross_entropy(model.logits(Tensor(X[idx])), y[idx])
            if not np.isfinite(loss.data):
                raise TrainError(f"base training diverged at epoch {epoch}")
            dc.backward(loss)
            opt.step()
            opt.zero_grad()
            total += float(loss.data)
            batches += 1
        opt.scale_lr(config.gamma)
        epoch_losses.append(total / batches)
        val = classification_metrics(dataset, base_scores(model, X_val), "val")
        epoch_val.append(val["pr_auc"] if val["pr_auc"] is not None else val["accuracy"])
    train_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    test = classification_metrics(dataset, base_scores(model, dataset.encoded("test")), "test")
    report = MetricsReport(
        model="base",
        pr_auc=test["pr_auc"],
        f1=test["f1"],
        accuracy=test["accuracy"],
        epoch_losses=epoch_losses,
        epoch_val_scores=epoch_val,
        wall_clock={"train": train_s, "eval": time.perf_counter() - t0},
    )
    return model, report


def predict_from_estimates(p: Tensor, c: Tensor, beta: Tensor, N: int, K: int) -> Tensor:
    """Class distribution from estimator outputs alone: the classifier sees
    the antecedent's estimated consequent, never the raw input."""
    return smooth_in_graph(p, c * float(N), beta, K)


def nll_of_probs(probs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under a probability
    tensor (not logits)."""
    B, K = probs.data.shape
    onehot = np.zeros((B, K))
    onehot[np.arange(B), np.asarray(targets, dtype=np.int64)] = 1.0
    picked = dc.tsum(probs * onehot, axis=-1)
    return dc.sum_to_scalar(dc.log(dc.clamp_min(picked, _PICK_FLOOR))) * (-1.0 / B)


def rule_scores(
    model: RuleModel, X: np.ndarray, truth_rows: np.ndarray, batch_size: int = 256
) -> np.ndarray:
    """Greedy-decoded smoothed class distributions for every row."""
    out = []
    for start in range(0, X.shape[0], batch_size):
        sl = slice(start, start + batch_size)
        result = model.explain_ids(X[sl], truth_rows[sl])
        p, c = model.est.forward_tokens(result.tokens, result.est_mask)
        dist = predict_from_estimates(p, c, model.est.beta(), model.N, model.K)
        out.append(dist.data)
    return np.vstack(out)


def train_rule_model(
    dataset: Dataset,
    pool: AtomPool,
    estimator: EstimatorModel,
    config: TrainConfig,
    truth_train: np.ndarray | None = None,
    l_b: float = 0.0,
) -> tuple[RuleModel, MetricsReport]:
    """Step two: backbone, sequence encoder, shared atom table, and the
    smoothing concentration train jointly; the rest of the estimator stays
    frozen. `l_b` is an additive soft-prior penalty (positive penalizes)."""
    rng = np.random.default_rng(config.seed)
    model = RuleModel(
        rng,
        pool,
        estimator,
        in_dim=dataset.input_dim,
        config=HardPriorConfig(L=config.L, tau=config.tau),
    )
    model.est.set_trainable(False)
    model.est.table.requires_grad = True
    model.est.raw_beta.requires_grad = True
    trainable = {n: p for n, p in model.parameters().items() if p.requires_grad}

    X = dataset.encoded("train")
    y = dataset.labels("train")
    train_insts = [dataset.instances[i] for i in dataset.train_idx]
    if truth_train is None:
        truth_train = truth_table(pool, train_insts).T.astype(bool)
    else:
        truth_train = np.asarray(truth_train, dtype=bool)
        if truth_train.shape != (len(train_insts), pool.size):
            raise TrainError(
                f"truth_train must be (n_train, pool), got {truth_train.shape}"
            )
    val_insts = [dataset.instances[i] for i in dataset.val_idx]
    truth_val = truth_table(pool, val_insts).T.astype(bool)
    X_val = dataset.encoded("val")
    opt = dc.Adam(trainable, lr=config.lr)

    t0 = time.perf_counter()
    epoch_losses, epoch_val = [], []
    for epoch in range(config.epochs):
        order = rng.permutation(X.shape[0])
        total, batches = 0.0, 0
        for start in range(0, order.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            result = model.generate(X[idx], truth_train[idx], rng=rng)
            p, c = model.est.forward_tokens(result.tokens, result.est_mask)
            dist = predict_from_estimates(p, c, model.est.beta(), model.N, model.K)
            loss = nll_of_probs(dist, y[idx]) + l_b
            if not np.isfinite(loss.data):
                raise TrainError(f"rule-model training diverged at epoch {epoch}")
            dc.backward(loss)
            opt.step()
            opt.zero_grad()
            total += float(loss.data)
            batches += 1
        opt.scale_lr(config.gamma)
        epoch_losses.append(total / batches)
        val = classification_metrics(dataset, rule_scores(model, X_val, truth_val), "val")
        epoch_val.append(val["pr_auc"] if val["pr_auc"] is not None else val["accuracy"])
    train_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    test_insts = [dataset.instances[i] for i in dataset.test_idx]
    truth_test = truth_table(pool, test_insts).T.astype(bool)
    test = classification_metrics(
        dataset, rule_scores(model, dataset.encoded("test"), truth_test), "test"
    )
    report = MetricsReport(
        model="rule",
        pr_auc=test["pr_auc"],
        f1=test["f1"],
        accuracy=test["accuracy"],
        epoch_losses=epoch_losses,
        epoch_val_scores=epoch_val,
        wall_clock={"train": train_s, "eval": time.perf_counter() - t0},
    )
    return model, report


@dataclass
class PipelineResult:
    dataset: Dataset
    base: BaseModel
    base_report: MetricsReport
    pool: AtomPool
    matrix: TrueMatrix
    rules: SampledRuleSet
    estimator: EstimatorModel
    pretrain_history: list[dict]
    model: RuleModel
    report: MetricsReport


def run_pipeline(
    dataset: Dataset,
    config: TrainConfig,
    pretrain_config: PretrainConfig | None = None,
) -> PipelineResult:
    """The full in-memory chain: base model, representations, atom pool,
    exact coverage, rule corpus, estimator pretraining, rule model."""
    base, base_report = train_base(dataset, config)
    X = dataset.encoded("train")
    reps = extract_representations(base.backbone, X)

    pool = build_pool(dataset, num_atoms=config.num_atoms)
    train_insts = [dataset.instances[i] for i in dataset.train_idx]
    truth = truth_table(pool, train_insts)
    init_embeddings(pool, reps, truth)

    y = dataset.labels("train")
    matrix = TrueMatrix.from_truth(truth, y, dataset.K)
    rules = sample_rules(
        matrix,
        min_df=config.min_df,
        num_rules=config.pretrain_samples,
        max_len=config.L,
        seed=config.seed,
        truth=truth,
        labels=y,
    )

    rng = np.random.default_rng(config.seed)
    table = Tensor(pool.embedding_matrix.copy())
    estimator = EstimatorModel(rng, table, K=dataset.K, L=config.L, N=len(train_insts))
    pcfg = pretrain_config or PretrainConfig(seed=config.seed)
    history = pretrain(estimator, rules.records(), pcfg)

    model, report = train_rule_model(
        dataset, pool, estimator, config, truth_train=truth.T.astype(bool)
    )
    return PipelineResult(
        dataset=dataset,
        base=base,
        base_report=base_report,
        pool=pool,
        matrix=matrix,
        rules=rules,
        estimator=estimator,
        pretrain_history=history,
        model=model,
        report=report,
    )


def run_noise_grid(
    make_dataset,
    config: TrainConfig,
    ratios=(0.05, 0.10, 0.15, 0.20),
    pretrain_config: PretrainConfig | None = None,
) -> list[dict]:
    """Train both models on symmetric-noise-corrupted labels at each ratio;
    evaluate on the untouched test split. Returns 2 x len(ratios) rows."""
    rows = []
    for ratio in ratios:
        ds = inject_symmetric_noise(make_dataset(), ratio, seed=config.seed)
        result = run_pipeline(
            ds, dataclasses.replace(config, noise_ratio=ratio), pretrain_config
        )
        for report in (result.base_report, result.report):
            rows.append(
                {
                    "ratio": ratio,
                    "model": report.model,
                    "pr_auc": report.pr_auc,
                    "f1": report.f1,
                    "accuracy": report.accuracy,
                }
            )
    return rows
