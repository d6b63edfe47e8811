"""Staged pipeline driver. Each subcommand reads and writes one run
directory; completed stages leave markers with artifact hashes so re-runs
are verified no-ops."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import persist
from .atoms import AtomError, AtomPool, build_pool, init_embeddings, truth_table
from .coverage import CoverageError, SampledRuleSet, TrueMatrix, sample_rules
from .data import (
    DataError,
    Dataset,
    inject_symmetric_noise,
    load_adult,
    load_tabular,
    load_text,
)
from .diffcore import Tensor
from .estimator import EstimatorError, EstimatorModel, PretrainConfig, pretrain
from .explain import (
    ExplainError,
    Explainer,
    cluster_explanations,
    load_explanations_jsonl,
    write_explanations_jsonl,
)
from .fixtures import write_toy_csv
from .generator import GeneratorError, HardPriorConfig, RuleModel
from .training import (
    BaseModel,
    TrainConfig,
    TrainError,
    default_hidden,
    extract_representations,
    run_noise_grid,
    train_base,
    train_rule_model,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PREREQ = 3
EXIT_RUNTIME = 4

# fixed chain; markers gate each stage on its predecessor
STAGE_COMMAND = {
    "base": "train-base",
    "embeddings": "extract-embeddings",
    "atoms": "build-atoms",
    "rules": "sample-rules",
    "estimator": "pretrain-ce",
    "model": "train",
    "explanations": "explain",
    "clusters": "cluster",
    "noise_grid": "noise-grid",
}
_STAGE_OFFSET = {name: i + 1 for i, name in enumerate(STAGE_COMMAND)}

DATA_DIR_ENV = "RULELENS_DATA_DIR"


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_RUNTIME):
        super().__init__(message)
        self.code = code


def stage_seed(seed: int, stage: str) -> int:
    """Expand the one user-facing seed into a distinct seed per stage."""
    return seed * 1000 + _STAGE_OFFSET[stage]


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")
    os.replace(tmp, path)


class RunDir:
    def __init__(self, root: str):
        self.root = os.path.abspath(root)
        os.makedirs(self.root, exist_ok=True)
        os.makedirs(self.path("markers"), exist_ok=True)

    def path(self, *parts) -> str:
        return os.path.join(self.root, *parts)

    def ensure(self, subdir: str) -> str:
        p = self.path(subdir)
        os.makedirs(p, exist_ok=True)
        return p

    # per-run config, shared by every stage
    def read_config(self) -> dict:
        p = self.path("config.json")
        if not os.path.exists(p):
            return {}
        with open(p, encoding="utf-8") as f:
            return json.load(f)

    def write_config(self, cfg: dict) -> None:
        _write_json(self.path("config.json"), cfg)

    def marker_path(self, stage: str) -> str:
        return self.path("markers", f"{stage}.json")

    def read_marker(self, stage: str) -> dict | None:
        p = self.marker_path(stage)
        if not os.path.exists(p):
            return None
        with open(p, encoding="utf-8") as f:
            return json.load(f)

    def write_marker(self, stage: str, config: dict, artifacts: list) -> None:
        rels = {}
        for a in artifacts:
            rel = os.path.relpath(a, self.root)
            rels[rel] = _sha256(a)
        _write_json(
            self.marker_path(stage),
            {
                "stage": stage,
                "config": config,
                "artifacts": rels,
                "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
            },
        )

    def artifacts_match(self, marker: dict) -> bool:
        for rel, digest in marker["artifacts"].items():
            p = self.path(rel)
            if not os.path.exists(p) or _sha256(p) != digest:
                return False
        return True

    def require(self, stage: str) -> dict:
        marker = self.read_marker(stage)
        if marker is None:
            raise CliError(
                f"stage '{stage}' has not been run in {self.root}; "
                f"run `rulelens {STAGE_COMMAND[stage]}` first",
                EXIT_PREREQ,
            )
        return marker


class RunLock:
    """One CLI invocation per run directory."""

    def __init__(self, run: RunDir):
        self.path = run.path("run.lock")
        self.acquired = False

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            with open(self.path, encoding="utf-8") as f:
                holder = f.read().strip()
            if holder.isdigit() and not _pid_alive(int(holder)):
                os.unlink(self.path)
                return self.__enter__()
            raise CliError(
                f"run directory is locked by pid {holder or '?'} ({self.path}); "
                "remove the lock file if that process is gone",
                EXIT_RUNTIME,
            ) from None
        with os.fdopen(fd, "w") as f:
            f.write(str(os.getpid()))
        self.acquired = True
        return self

    def __exit__(self, *exc):
        if self.acquired and os.path.exists(self.path):
            os.unlink(self.path)
        return False


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


# ---------------------------------------------------------------------------
# dataset resolution
# ---------------------------------------------------------------------------


def _dataset_config(run: RunDir, args) -> dict:
    cfg = run.read_config()
    stored = cfg.get("dataset")
    name = getattr(args, "dataset", None)
    if name is None:
        if stored is None:
            raise CliError(
                "no dataset configured for this run directory; pass --dataset",
                EXIT_USAGE,
            )
        return stored
    data_dir = (
        getattr(args, "data_dir", None)
        or os.environ.get(DATA_DIR_ENV)
        or run.path("data")
    )
    ds_cfg = {
        "name": name,
        "data_dir": os.path.abspath(data_dir),
        "label_column": getattr(args, "label_column", "label"),
        "seed": args.seed if args.seed is not None else 0,
        "noise_ratio": float(getattr(args, "noise_ratio", 0.0) or 0.0),
    }
    if stored is not None and stored != ds_cfg:
        raise CliError(
            "run directory is already configured for a different dataset; "
            "use a fresh --run-dir or pass --force with matching flags",
            EXIT_USAGE,
        )
    if stored is None:
        cfg["dataset"] = ds_cfg
        cfg.setdefault("seed", ds_cfg["seed"])
        run.write_config(cfg)
    return ds_cfg


def load_dataset(ds_cfg: dict) -> Dataset:
    name = ds_cfg["name"]
    data_dir = ds_cfg["data_dir"]
    seed = ds_cfg["seed"]
    if name == "toy":
        os.makedirs(data_dir, exist_ok=True)
        path = os.path.join(data_dir, "toy.csv")
        if not os.path.exists(path):
            write_toy_csv(path, n=500, seed=7)
        ds = load_tabular(path, label_column="label", seed=seed)
    elif name == "adult":
        path = os.path.join(data_dir, "adult.csv")
        if not os.path.exists(path):
            raise CliError(
                f"adult.csv not found in {data_dir}; set --data-dir or "
                f"{DATA_DIR_ENV} to the directory holding it",
                EXIT_RUNTIME,
            )
        ds = load_adult(path, seed=seed)
    elif name.endswith(".csv"):
        ds = load_tabular(name, label_column=ds_cfg["label_column"], seed=seed)
    elif name.endswith(".jsonl"):
        ds = load_text(name, seed=seed)
    else:
        raise CliError(
            f"unknown dataset '{name}': expected toy, adult, or a .csv/.jsonl path",
            EXIT_USAGE,
        )
    if ds_cfg.get("noise_ratio"):
        ds = inject_symmetric_noise(ds, ds_cfg["noise_ratio"], seed=seed)
    return ds


def _manifest_digest(ds: Dataset) -> str:
    return hashlib.sha256(
        json.dumps(ds.manifest(), sort_keys=True).encode("utf-8")
    ).hexdigest()


def _checked_dataset(run: RunDir, ds_cfg: dict) -> Dataset:
    ds = load_dataset(ds_cfg)
    cfg = run.read_config()
    digest = _manifest_digest(ds)
    stored = cfg.get("dataset_manifest")
    if stored is None:
        cfg["dataset_manifest"] = digest
        run.write_config(cfg)
    elif stored != digest:
        raise CliError(
            "dataset on disk no longer matches the one this run was built from",
            EXIT_RUNTIME,
        )
    return ds


def _run_seed(run: RunDir, args) -> int:
    if args.seed is not None:
        return args.seed
    return run.read_config().get("seed", 0)


# ---------------------------------------------------------------------------
# stage runner
# ---------------------------------------------------------------------------


def _run_stage(run: RunDir, stage: str, stage_cfg: dict, force: bool, build) -> None:
    marker = run.read_marker(stage)
    if marker is not None and not force:
        if marker["config"] != stage_cfg:
            raise CliError(
                f"stage '{stage}' was built with a different config; "
                "pass --force to rebuild (downstream stages must be redone too)",
                EXIT_USAGE,
            )
        if not run.artifacts_match(marker):
            raise CliError(
                f"stage '{stage}' artifacts were modified on disk; "
                "pass --force to rebuild",
                EXIT_RUNTIME,
            )
        print(f"{stage}: already complete, artifacts verified; skipping (--force to redo)")
        return
    started = time.monotonic()
    artifacts = build()
    run.write_marker(stage, stage_cfg, artifacts)
    print(f"{stage}: done in {time.monotonic() - started:.1f}s "
          f"({len(artifacts)} artifacts)")


# ---------------------------------------------------------------------------
# artifact loading between stages
# ---------------------------------------------------------------------------


def _load_pool(run: RunDir) -> AtomPool:
    pool = AtomPool.load(run.path("atoms", "pool.json"))
    emb = np.load(run.path("atoms", "embeddings.npy"))
    for a in pool.atoms:
        a.embedding = emb[a.id]
    return pool


def _load_truth(run: RunDir) -> np.ndarray:
    return persist.load_bitmatrix(run.path("atoms", "truth.bits"))


def _load_base(run: RunDir) -> BaseModel:
    meta, arrays = persist.load_params(run.path("base", "params.ckpt"))
    model = BaseModel(
        np.random.default_rng(0), meta["in_dim"], meta["hidden"], meta["K"]
    )
    model.load_state(arrays)
    return model


def _load_estimator(run: RunDir, pool: AtomPool) -> EstimatorModel:
    meta, arrays = persist.load_params(run.path("estimator", "params.ckpt"))
    table = Tensor(np.zeros((pool.size, meta["h"])))
    est = EstimatorModel(
        np.random.default_rng(0), table, meta["K"], meta["L"], meta["N"]
    )
    est.load_state(arrays)
    return est


def _load_rule_model(run: RunDir, pool: AtomPool, ds: Dataset) -> RuleModel:
    est = _load_estimator(run, pool)
    meta, arrays = persist.load_params(run.path("model", "params.ckpt"))
    model = RuleModel(
        np.random.default_rng(0),
        pool,
        est,
        meta["in_dim"],
        HardPriorConfig(L=meta["L"], tau=meta["tau"]),
    )
    model.load_state(arrays)
    return model


def _report_files(run: RunDir, subdir: str, report) -> list:
    out = run.ensure(subdir)
    obj = report.to_json_obj()
    timings = {"wall_clock": obj.pop("wall_clock", {})}
    metrics_path = os.path.join(out, "metrics.json")
    _write_json(metrics_path, obj)
    _write_json(os.path.join(out, "timings.json"), timings)
    csv_path = os.path.join(out, "metrics.csv")
    report.write_csv(csv_path)
    return [metrics_path, csv_path]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train_base(args) -> int:
    run = RunDir(args.run_dir)
    with RunLock(run):
        ds_cfg = _dataset_config(run, args)
        seed = _run_seed(run, args)
        stage_cfg = {
            "seed": stage_seed(seed, "base"),
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "lr": args.lr,
            "dataset": ds_cfg,
        }

        def build():
            ds = _checked_dataset(run, ds_cfg)
            cfg = TrainConfig(
                epochs=args.epochs,
                batch_size=args.batch_size,
                lr=args.lr,
                seed=stage_cfg["seed"],
                noise_ratio=ds_cfg["noise_ratio"],
            )
            model, report = train_base(ds, cfg)
            out = run.ensure("base")
            params_path = os.path.join(out, "params.ckpt")
            persist.save_params(
                params_path,
                model.state(),
                meta={
                    "in_dim": ds.input_dim,
                    "hidden": default_hidden(ds.kind),
                    "K": ds.K,
                },
            )
            return [params_path] + _report_files(run, "base", report)

        _run_stage(run, "base", stage_cfg, args.force, build)
    return EXIT_OK


def cmd_extract_embeddings(args) -> int:
    run = RunDir(args.run_dir)
    with RunLock(run):
        run.require("base")
        ds_cfg = _dataset_config(run, args)
        stage_cfg = {"source": "base"}

        def build():
            ds = _checked_dataset(run, ds_cfg)
            model = _load_base(run)
            reps = extract_representations(model.backbone, ds.encoded("train"))
            out = run.ensure("embeddings")
            path = os.path.join(out, "train.npy")
            np.save(path, reps)
            return [path]

        _run_stage(run, "embeddings", stage_cfg, args.force, build)
    return EXIT_OK


def cmd_build_atoms(args) -> int:
    run = RunDir(args.run_dir)
    with RunLock(run):
        run.require("embeddings")
        ds_cfg = _dataset_config(run, args)
        stage_cfg = {"num_atoms": args.num_atoms}

        def build():
            ds = _checked_dataset(run, ds_cfg)
            pool = build_pool(ds, num_atoms=args.num_atoms)
            instances = [ds.instances[i] for i in ds.train_idx]
            truth = truth_table(pool, instances)
            reps = np.load(run.path("embeddings", "train.npy"))
            init_embeddings(pool, reps, truth)
            out = run.ensure("atoms")
            pool_path = os.path.join(out, "pool.json")
            emb_path = os.path.join(out, "embeddings.npy")
            truth_path = os.path.join(out, "truth.bits")
            pool.save(pool_path)
            np.save(emb_path, pool.embedding_matrix)
            persist.save_bitmatrix(truth_path, truth.astype(bool))
            return [pool_path, emb_path, truth_path]

        _run_stage(run, "atoms", stage_cfg, args.force, build)
    return EXIT_OK


def cmd_sample_rules(args) -> int:
    run = RunDir(args.run_dir)
    with RunLock(run):
        run.require("atoms")
        ds_cfg = _dataset_config(run, args)
        seed = _run_seed(run, args)
        stage_cfg = {
            "seed": stage_seed(seed, "rules"),
            "min_df": args.min_df,
            "pretrain_samples": args.pretrain_samples,
            "max_rule_len": args.max_rule_len,
        }

        def build():
            ds = _checked_dataset(run, ds_cfg)
            truth = _load_truth(run)
            labels = ds.labels("train")
            tm = TrueMatrix.from_truth(truth, labels, ds.K)
            rules = sample_rules(
                tm,
                min_df=args.min_df,
                num_rules=args.pretrain_samples,
                max_len=args.max_rule_len,
                seed=stage_cfg["seed"],
                truth=truth,
                labels=labels,
            )
            out = run.ensure("rules")
            path = os.path.join(out, "rules.jsonl")
            rules.save(path)
            return [path]

        _run_stage(run, "rules", stage_cfg, args.force, build)
    return EXIT_OK


def cmd_pretrain_ce(args) -> int:
    run = RunDir(args.run_dir)
    with RunLock(run):
        run.require("rules")
        ds_cfg = _dataset_config(run, args)
        seed = _run_seed(run, args)
        stage_cfg = {
            "seed": stage_seed(seed, "estimator"),
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "lr": args.lr,
            "max_rule_len": args.max_rule_len,
        }

        def build():
            ds = _checked_dataset(run, ds_cfg)
            pool = _load_pool(run)
            rules = SampledRuleSet.load(run.path("rules", "rules.jsonl"))
            table = Tensor(pool.embedding_matrix.copy())
            est = EstimatorModel(
                np.random.default_rng(stage_cfg["seed"]),
                table,
                ds.K,
                args.max_rule_len,
                len(ds.train_idx),
            )
            out = run.ensure("estimator")
            history_path = os.path.join(out, "history.csv")
            cfg = PretrainConfig(
                epochs=args.epochs,
                batch_size=args.batch_size,
                lr=args.lr,
                seed=stage_cfg["seed"],
                log_csv=history_path,
            )
            history = pretrain(est, rules.records(), cfg)
            params_path = os.path.join(out, "params.ckpt")
            persist.save_params(
                params_path,
                est.state(),
                meta={
                    "K": ds.K,
                    "L": args.max_rule_len,
                    "N": len(ds.train_idx),
                    "h": est.h,
                },
            )
            metrics_path = os.path.join(out, "metrics.json")
            _write_json(metrics_path, history[-1])
            return [params_path, history_path, metrics_path]

        _run_stage(run, "estimator", stage_cfg, args.force, build)
    return EXIT_OK


def cmd_train(args) -> int:
    run = RunDir(args.run_dir)
    with RunLock(run):
        run.require("estimator")
        ds_cfg = _dataset_config(run, args)
        seed = _run_seed(run, args)
        stage_cfg = {
            "seed": stage_seed(seed, "model"),
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "lr": args.lr,
            "tau": args.tau,
        }

        def build():
            ds = _checked_dataset(run, ds_cfg)
            pool = _load_pool(run)
            truth = _load_truth(run)
            est = _load_estimator(run, pool)
            cfg = TrainConfig(
                epochs=args.epochs,
                batch_size=args.batch_size,
                lr=args.lr,
                seed=stage_cfg["seed"],
                L=est.L,
                tau=args.tau,
                noise_ratio=ds_cfg["noise_ratio"],
            )
            model, report = train_rule_model(
                ds, pool, est, cfg, truth_train=truth.T
            )
            out = run.ensure("model")
            params_path = os.path.join(out, "params.ckpt")
            persist.save_params(
                params_path,
                model.state(),
                meta={"in_dim": ds.input_dim, "L": est.L, "tau": args.tau},
            )
            return [params_path] + _report_files(run, "model", report)

        _run_stage(run, "model", stage_cfg, args.force, build)
    return EXIT_OK


def cmd_explain(args) -> int:
    run = RunDir(args.run_dir)
    with RunLock(run):
        run.require("model")
        ds_cfg = _dataset_config(run, args)
        stage_cfg = {"splits": ["train", "test"]}

        def build():
            ds = _checked_dataset(run, ds_cfg)
            pool = _load_pool(run)
            truth = _load_truth(run)
            model = _load_rule_model(run, pool, ds)
            matrix = TrueMatrix.from_truth(truth, ds.labels("train"), ds.K)
            explainer = Explainer(model, matrix, ds)
            out = run.ensure("explanations")
            paths = []
            for split in stage_cfg["splits"]:
                path = os.path.join(out, f"{split}.jsonl")
                write_explanations_jsonl(path, explainer.explain_split(split))
                paths.append(path)
            return paths

        _run_stage(run, "explanations", stage_cfg, args.force, build)
    return EXIT_OK


def cmd_cluster(args) -> int:
    run = RunDir(args.run_dir)
    with RunLock(run):
        run.require("explanations")
        ds_cfg = _dataset_config(run, args)
        seed = _run_seed(run, args)
        stage_cfg = {"k": args.k, "seed": stage_seed(seed, "clusters")}

        def build():
            ds = _checked_dataset(run, ds_cfg)
            pool = _load_pool(run)
            exps = load_explanations_jsonl(run.path("explanations", "train.jsonl"))
            report = cluster_explanations(
                exps, pool, ds, k=args.k, seed=stage_cfg["seed"]
            )
            out = run.ensure("clusters")
            json_path = os.path.join(out, f"k{args.k}.json")
            text_path = os.path.join(out, f"k{args.k}.txt")
            _write_json(json_path, report.to_json_obj())
            with open(text_path, "w", encoding="utf-8") as f:
                f.write(report.render_text() + "\n")
            print(report.render_text())
            return [json_path, text_path]

        _run_stage(run, "clusters", stage_cfg, args.force, build)
    return EXIT_OK


def cmd_noise_grid(args) -> int:
    run = RunDir(args.run_dir)
    with RunLock(run):
        ds_cfg = _dataset_config(run, args)
        seed = _run_seed(run, args)
        ratios = [float(r) for r in args.ratios.split(",") if r.strip()]
        stage_cfg = {
            "seed": stage_seed(seed, "noise_grid"),
            "ratios": ratios,
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "lr": args.lr,
            "num_atoms": args.num_atoms,
            "min_df": args.min_df,
            "pretrain_samples": args.pretrain_samples,
            "max_rule_len": args.max_rule_len,
        }

        def build():
            base_cfg = {k: v for k, v in ds_cfg.items() if k != "noise_ratio"}
            base_cfg["noise_ratio"] = 0.0

            def make_dataset():
                return load_dataset(base_cfg)

            cfg = TrainConfig(
                epochs=args.epochs,
                batch_size=args.batch_size,
                lr=args.lr,
                seed=stage_cfg["seed"],
                L=args.max_rule_len,
                num_atoms=args.num_atoms,
                min_df=args.min_df,
                pretrain_samples=args.pretrain_samples,
            )
            rows = run_noise_grid(
                make_dataset,
                cfg,
                ratios=tuple(ratios),
                pretrain_config=PretrainConfig(
                    epochs=args.pretrain_epochs, seed=stage_cfg["seed"]
                ),
            )
            out = run.ensure("noise")
            paths = []
            by_ratio: dict[float, list] = {}
            for row in rows:
                by_ratio.setdefault(row["ratio"], []).append(row)
            for ratio, ratio_rows in by_ratio.items():
                child = run.ensure(os.path.join("noise", f"r{int(round(ratio * 100)):03d}"))
                p = os.path.join(child, "metrics.json")
                _write_json(p, ratio_rows)
                paths.append(p)
            summary = os.path.join(out, "summary.json")
            _write_json(summary, rows)
            paths.append(summary)
            return paths

        _run_stage(run, "noise_grid", stage_cfg, args.force, build)
    return EXIT_OK


def build_service_app(run: RunDir, args):
    """Assemble the HTTP app from a completed run directory."""
    from .api import create_app

    run.require("model")
    ds_cfg = _dataset_config(run, args)
    ds = _checked_dataset(run, ds_cfg)
    pool = _load_pool(run)
    truth = _load_truth(run)
    model = _load_rule_model(run, pool, ds)
    matrix = TrueMatrix.from_truth(truth, ds.labels("train"), ds.K)
    explainer = Explainer(model, matrix, ds)
    if run.read_marker("explanations") is not None:
        for split in ("train", "test"):
            path = run.path("explanations", f"{split}.jsonl")
            if os.path.exists(path):
                explainer._baseline[split] = load_explanations_jsonl(path)
    metrics = {}
    for section in ("base", "model"):
        p = run.path(section, "metrics.json")
        if os.path.exists(p):
            with open(p, encoding="utf-8") as f:
                metrics[section] = json.load(f)
    static_dir = args.static_dir
    if static_dir is None:
        bundled = os.path.join(os.path.dirname(__file__), "console")
        if os.path.isdir(bundled):
            static_dir = bundled
    return create_app(explainer, metrics, static_dir=static_dir)


def cmd_serve(args) -> int:
    run = RunDir(args.run_dir)
    with RunLock(run):
        app = build_service_app(run, args)
        import uvicorn

        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--run-dir", required=True, help="run directory for artifacts")
    p.add_argument("--seed", type=int, default=None,
                   help="run seed, expanded deterministically per stage (default: 0)")
    p.add_argument("--force", action="store_true", help="rebuild even if the stage is complete")


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", default=None,
                   help="toy | adult | path to a .csv or .jsonl corpus")
    p.add_argument("--data-dir", default=None,
                   help=f"directory holding named datasets (default: ${DATA_DIR_ENV} or RUN_DIR/data)")
    p.add_argument("--label-column", default="label", help="label column for .csv datasets")
    p.add_argument("--noise-ratio", type=float, default=0.0,
                   help="fraction of train labels to flip symmetrically")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rulelens",
        description="Train, explain, and steer rule-based classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, helptext):
        p = sub.add_parser(name, help=helptext,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        _add_common(p)
        p.set_defaults(fn=fn)
        return p

    p = add("train-base", cmd_train_base, "train the plain classifier")
    _add_dataset_flags(p)
    p.add_argument("--epochs", type=int, default=10, help="training epochs")
    p.add_argument("--batch-size", type=int, default=16, help="minibatch size")
    p.add_argument("--lr", type=float, default=1e-5, help="learning rate")

    add("extract-embeddings", cmd_extract_embeddings,
        "compute train-split representations from the base model")

    p = add("build-atoms", cmd_build_atoms, "build the atom pool")
    p.add_argument("--num-atoms", type=int, default=5000, help="maximum atom pool size")

    p = add("sample-rules", cmd_sample_rules, "sample rules for estimator pretraining")
    p.add_argument("--min-df", type=int, default=200, help="minimum rule coverage")
    p.add_argument("--pretrain-samples", type=int, default=10000,
                   help="rules sampled per antecedent length")
    p.add_argument("--max-rule-len", type=int, default=4, help="maximum antecedent length")

    p = add("pretrain-ce", cmd_pretrain_ce, "pretrain the consequent estimator")
    p.add_argument("--epochs", type=int, default=30, help="pretraining epochs")
    p.add_argument("--batch-size", type=int, default=64, help="minibatch size")
    p.add_argument("--lr", type=float, default=1e-3, help="learning rate")
    p.add_argument("--max-rule-len", type=int, default=4, help="maximum antecedent length")

    p = add("train", cmd_train, "train the rule model end to end")
    p.add_argument("--epochs", type=int, default=10, help="training epochs")
    p.add_argument("--batch-size", type=int, default=16, help="minibatch size")
    p.add_argument("--lr", type=float, default=1e-5, help="learning rate")
    p.add_argument("--tau", type=float, default=1.0, help="relaxation temperature")

    p = add("noise-grid", cmd_noise_grid,
            "train base and rule models across label-noise ratios")
    _add_dataset_flags(p)
    p.add_argument("--ratios", default="0.05,0.1,0.15,0.2",
                   help="comma-separated noise ratios")
    p.add_argument("--epochs", type=int, default=10, help="training epochs")
    p.add_argument("--batch-size", type=int, default=16, help="minibatch size")
    p.add_argument("--lr", type=float, default=1e-5, help="learning rate")
    p.add_argument("--num-atoms", type=int, default=5000, help="maximum atom pool size")
    p.add_argument("--min-df", type=int, default=200, help="minimum rule coverage")
    p.add_argument("--pretrain-samples", type=int, default=10000,
                   help="rules sampled per antecedent length")
    p.add_argument("--max-rule-len", type=int, default=4, help="maximum antecedent length")
    p.add_argument("--pretrain-epochs", type=int, default=30, help="estimator pretraining epochs")

    add("explain", cmd_explain, "write explanations for the train and test splits")

    p = add("cluster", cmd_cluster, "cluster the train-split explanations")
    p.add_argument("--k", type=int, default=10, help="number of clusters")

    p = add("serve", cmd_serve, "serve the steering console API")
    p.add_argument("--host", default="127.0.0.1", help="bind address")
    p.add_argument("--port", type=int, default=8000, help="bind port")
    p.add_argument("--static-dir", default=None, help="console asset directory")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (DataError, AtomError, CoverageError, TrainError, EstimatorError,
            GeneratorError, ExplainError, persist.PersistError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
