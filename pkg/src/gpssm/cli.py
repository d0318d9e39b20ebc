"""Command-line driver: train models, aggregate benchmarks, sweep sequence
lengths, predict open loop and simulate datasets.

Configuration lives in a TOML file with ``[dataset]``, ``[train]`` and
``[evaluation]`` sections; every field has a default and unknown keys are
rejected. Results are appended as line-delimited JSON records next to CSV
exports under ``<out>/<experiment>/``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:                      # Python 3.10
    import tomli as tomllib

import numpy as np

from .data import (
    Dataset,
    DubinsParams,
    load_csv,
    load_manifest,
    save_csv,
    simulate_dubins,
    simulate_linear,
)
from .inference import (
    TrainConfig,
    evaluate_on_dataset,
    predict_open_loop,
    train,
)
from .ssm import SSMModel

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class DatasetSpec:
    """Where the data comes from: a CSV manifest or a named simulator."""

    kind: str = "dubins"              # 'csv' | 'dubins' | 'linear'
    path: str = ""
    u_cols: list = dataclasses.field(default_factory=list)
    y_cols: list = dataclasses.field(default_factory=list)
    seq_col: str | None = None
    train_fraction: float = 0.5
    test_path: str | None = None
    # simulator settings
    T: int = 300
    n_traj: int = 8
    n_test: int = 4
    seed: int = 0
    dt: float = 0.3
    process_noise: float = 0.02
    obs_noise: float = 0.02
    observe_heading: bool = False
    spectral_radius: float = 1.05
    noise_q: float = 0.01
    noise_r: float = 0.0004


@dataclasses.dataclass
class EvalSpec:
    n_samples: int = 100
    seed: int = 1
    horizon: int | None = None        # None: full test-trajectory length


@dataclasses.dataclass
class ExperimentConfig:
    """One experiment: dataset + training + evaluation + output settings."""

    name: str = "experiment"
    out_dir: str = "outputs"
    repeats: int = 1
    dataset: DatasetSpec = dataclasses.field(default_factory=DatasetSpec)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    evaluation: EvalSpec = dataclasses.field(default_factory=EvalSpec)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as err:
            raise ConfigError(f"config file not found: {path}") from err
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"config parse error in {path}: {err}") from err
        return cls.from_dict(raw, origin=str(path))

    @classmethod
    def from_dict(cls, raw: dict, origin: str = "<dict>") -> "ExperimentConfig":
        def build(dc_type, section, data):
            fields = {f.name: f for f in dataclasses.fields(dc_type)}
            unknown = set(data) - set(fields)
            if unknown:
                raise ConfigError(
                    f"{origin}: unknown key(s) {sorted(unknown)} in [{section}]")
            return dc_type(**data)

        top = dict(raw)
        ds = top.pop("dataset", {})
        tr = top.pop("train", {})
        ev = top.pop("evaluation", {})
        cfg = build(cls, "top level", {
            k: v for k, v in top.items()
        } | {"dataset": build(DatasetSpec, "dataset", ds),
             "train": build(TrainConfig, "train", tr),
             "evaluation": build(EvalSpec, "evaluation", ev)})
        return cfg


def resolve_dataset(spec: DatasetSpec, lag: int) -> Dataset:
    if spec.kind == "manifest":
        return load_manifest(spec.path)
    if spec.kind == "csv":
        if not spec.u_cols or not spec.y_cols:
            raise ConfigError("[dataset] kind='csv' needs u_cols and y_cols")
        return load_csv(spec.path, spec.u_cols, spec.y_cols, seq_col=spec.seq_col,
                        train_fraction=spec.train_fraction,
                        test_path=spec.test_path, lag=lag)
    if spec.kind == "dubins":
        params = DubinsParams(dt=spec.dt, process_noise=spec.process_noise,
                              obs_noise=spec.obs_noise,
                              observe_heading=spec.observe_heading)
        return simulate_dubins(params, T=spec.T, n_traj=spec.n_traj,
                               n_test=spec.n_test, seed=spec.seed, lag=lag)
    if spec.kind == "linear":
        r = spec.spectral_radius
        return simulate_linear([[r]], [[1.0]], [[1.0]], [[spec.noise_q]],
                               [[spec.noise_r]], T=spec.T, n_traj=spec.n_traj,
                               n_test=spec.n_test, seed=spec.seed, lag=lag)
    raise ConfigError(f"unknown dataset kind {spec.kind!r}")


# --- model (de)serialization ---------------------------------------------------

def save_model(model: SSMModel, path) -> None:
    meta = {
        "d_x": model.d_x, "d_y": model.d_y, "d_u": model.d_u,
        "k_soft": model.k_soft, "beta": model.beta,
        "lag": model.recognition.lag,
        "mean_fn": "identity" if getattr(model.forward_gp, "mean_cols", None) else "zero",
        "n_inducing": getattr(model.forward_gp, "n_inducing", 0),
    }
    arrays = {k.replace(".", "__"): np.asarray(v) for k, v in model.numeric().params().items()}
    np.savez(path, __meta__=json.dumps(meta), **arrays)


def load_model(path) -> SSMModel:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        params = {k.replace("__", "."): data[k] for k in data.files if k != "__meta__"}
    model = SSMModel.create(
        d_x=meta["d_x"], d_y=meta["d_y"], d_u=meta["d_u"],
        n_inducing=meta["n_inducing"], lag=meta["lag"],
        rng=np.random.default_rng(0), mean_fn=meta["mean_fn"],
        k_soft=meta["k_soft"], beta=meta["beta"],
    )
    return model.with_params(params)


# --- result records --------------------------------------------------------------

def result_record(config: ExperimentConfig, seed: int, metrics: dict,
                  train_time: float, elbo_trace_file: str | None = None) -> dict:
    return {
        "experiment": config.name,
        "dataset": config.dataset.kind if config.dataset.kind != "csv"
        else Path(config.dataset.path).stem,
        "algorithm": config.train.algorithm,
        "seed": seed,
        "seqlen": config.train.seq_len,
        "rmse": metrics["rmse"],
        "rmse_raw": metrics["rmse_raw"],
        "log_likelihood": metrics["log_likelihood"],
        "train_time_s": train_time,
        "elbo_trace": elbo_trace_file or "",
    }


def append_records(path: Path, records: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_records(path) -> list[dict]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


# --- single training run -------------------------------------------------------

def run_single(config: ExperimentConfig, seed: int, out_dir: Path) -> dict:
    cfg = dataclasses.replace(config.train, seed=seed)
    dataset = resolve_dataset(config.dataset, lag=cfg.lag).normalize()
    t0 = time.perf_counter()
    model, history = train(dataset, cfg)
    wall = time.perf_counter() - t0
    metrics = evaluate_on_dataset(model, dataset, n_samples=config.evaluation.n_samples,
                                  seed=config.evaluation.seed, lag=cfg.lag,
                                  horizon=config.evaluation.horizon)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_file = out_dir / f"elbo_{config.train.algorithm}_seed{seed}.csv"
    with open(trace_file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "total", "likelihood", "kl_inducing_forward",
                    "kl_inducing_backward", "kl_recognition", "kl_conditioning"])
        for i, h in enumerate(history):
            w.writerow([i, h.total, h.likelihood, h.kl_inducing_forward,
                        h.kl_inducing_backward, h.kl_recognition, h.kl_conditioning])
    save_model(model, out_dir / f"model_{config.train.algorithm}_seed{seed}.npz")
    return result_record(config, seed, metrics, wall, trace_file.name)


# --- commands --------------------------------------------------------------------

def cmd_train(config: ExperimentConfig, threads: int = 1) -> list[dict]:
    """Train ``repeats`` seeds, evaluate on the test split and persist records."""
    out_dir = Path(config.out_dir) / config.name
    seeds = [config.train.seed + i for i in range(config.repeats)]
    if threads > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(_run_single_job,
                                    [(config, s, str(out_dir)) for s in seeds]))
    else:
        records = [run_single(config, s, out_dir) for s in seeds]
    append_records(out_dir / "results.jsonl", records)
    return records


def _run_single_job(args):
    config, seed, out_dir = args
    return run_single(config, seed, Path(out_dir))


def aggregate_records(records: list[dict], value_key: str = "rmse") -> list[dict]:
    """Mean and sample std (n-1) per (dataset, algorithm) cell."""
    cells: dict = {}
    for r in records:
        cells.setdefault((r["dataset"], r["algorithm"]), []).append(r[value_key])
    rows = []
    for (ds, alg), vals in sorted(cells.items()):
        arr = np.asarray(vals, dtype=np.float64)
        std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        rows.append({"dataset": ds, "algorithm": alg, "mean": float(arr.mean()),
                     "std": std, "n": len(arr)})
    return rows


def cmd_benchmark(record_files: list, out_path=None, value_key: str = "rmse") -> str:
    """Aggregate result records into a dataset x algorithm table.

    Cells are rendered ``mean (std)``; a per-row ``best`` column names the
    algorithm with the lowest mean. Missing cells are reported, not fatal.
    """
    records = []
    for f in record_files:
        records.extend(read_records(f))
    rows = aggregate_records(records, value_key)
    datasets = sorted({r["dataset"] for r in rows})
    algorithms = sorted({r["algorithm"] for r in rows})
    by_cell = {(r["dataset"], r["algorithm"]): r for r in rows}

    table_rows = []
    for ds in datasets:
        row = {"dataset": ds}
        best_alg, best_val = "", np.inf
        for alg in algorithms:
            cell = by_cell.get((ds, alg))
            if cell is None:
                row[alg] = "missing"
                continue
            row[alg] = f"{cell['mean']:.3f} ({cell['std']:.3f})"
            if cell["mean"] < best_val:
                best_alg, best_val = alg, cell["mean"]
        row["best"] = best_alg
        table_rows.append(row)

    header = ["dataset"] + algorithms + ["best"]
    widths = {h: max(len(h), *(len(str(r.get(h, ""))) for r in table_rows)) for h in header}
    lines = ["  ".join(h.ljust(widths[h]) for h in header)]
    for r in table_rows:
        lines.append("  ".join(str(r.get(h, "")).ljust(widths[h]) for h in header))
    text = "\n".join(lines)

    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=header)
            w.writeheader()
            for r in table_rows:
                w.writerow(r)
    return text


def cmd_seqlen_sweep(config: ExperimentConfig, lengths: list[int],
                     algorithms: list[str] | None = None, threads: int = 1,
                     out_path=None) -> list[dict]:
    """Train every (algorithm, length, seed) cell; emit a plot-ready CSV."""
    algorithms = algorithms or [config.train.algorithm]
    all_records = []
    for alg in algorithms:
        for length in lengths:
            sub = dataclasses.replace(
                config,
                name=f"{config.name}_{alg}_L{length}",
                train=dataclasses.replace(config.train, algorithm=alg, seq_len=length),
            )
            all_records.extend(cmd_train(sub, threads=threads))
    rows = []
    for alg in algorithms:
        for length in lengths:
            vals = [r["rmse"] for r in all_records
                    if r["algorithm"] == alg and r["seqlen"] == length]
            arr = np.asarray(vals)
            rows.append({"algorithm": alg, "seqlen": length,
                         "rmse_mean": float(arr.mean()),
                         "rmse_std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0})
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["algorithm", "seqlen", "rmse_mean", "rmse_std"])
            w.writeheader()
            for r in rows:
                w.writerow(r)
    return rows


def cmd_predict(model_path, input_csv, horizon: int, u_cols: list, y_cols: list,
                out_path, n_samples: int = 100, seed: int = 0) -> int:
    """Open-loop predictions with +-1.96 sigma bands as CSV.

    Uses the first ``lag`` rows of the input as recognition burn-in and
    predicts the next ``horizon - lag`` steps. Writes columns
    ``t, <y>_mean, <y>_lower, <y>_upper`` per output channel.
    """
    model = load_model(model_path)
    ds = load_csv(input_csv, u_cols, y_cols, train_fraction=0.9999)
    traj = ds.train[0]
    lag = model.recognition.lag
    if traj.y.shape[1] != model.d_y or traj.u.shape[1] != model.d_u:
        raise ValueError(
            f"model expects d_y={model.d_y}, d_u={model.d_u}; file has "
            f"d_y={traj.y.shape[1]}, d_u={traj.u.shape[1]}")
    horizon = min(horizon, traj.length)
    header = ["t"]
    for name in y_cols:
        header += [f"{name}_mean", f"{name}_lower", f"{name}_upper"]
    rows = []
    if horizon > lag:
        preds = predict_open_loop(model, traj.y[:lag], traj.u[:horizon],
                                  n_samples=n_samples, seed=seed, lag=lag)
        for i, g in enumerate(preds):
            std = np.sqrt(g.cov)
            row = [lag + i]
            for j in range(model.d_y):
                row += [g.mean[j], g.mean[j] - 1.96 * std[j], g.mean[j] + 1.96 * std[j]]
            rows.append(row)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return len(rows)


def cmd_simulate(config: ExperimentConfig, out_path) -> None:
    """Materialize the configured simulator as train/test CSV files."""
    ds = resolve_dataset(config.dataset, lag=config.train.lag)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_csv(out_path.with_suffix(".train.csv"), ds.train)
    save_csv(out_path.with_suffix(".test.csv"), ds.test)


# --- entry point ------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpssm",
                                description="GP state-space model training and evaluation")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", required=True, help="TOML experiment config")
        sp.add_argument("--seed", type=int, default=None, help="override train seed")
        sp.add_argument("--out", default=None, help="override output directory")
        sp.add_argument("--algorithm", default=None, choices=["PRSSM", "VCDT", "CBFSSM"])
        sp.add_argument("--k", type=float, default=None, help="soft conditioning factor")
        sp.add_argument("--beta", type=float, default=None, help="KL reweighting factor")
        sp.add_argument("--seqlen", type=int, default=None, help="training window length")
        sp.add_argument("--threads", type=int, default=1)

    sp_train = sub.add_parser("train", help="train and evaluate one configuration")
    add_common(sp_train)
    sp_train.add_argument("--repeats", type=int, default=None)

    sp_bench = sub.add_parser("benchmark", help="aggregate result records into a table")
    sp_bench.add_argument("records", nargs="+", help="results.jsonl files")
    sp_bench.add_argument("--out", default=None, help="CSV output path")
    sp_bench.add_argument("--raw", action="store_true", help="aggregate raw-scale RMSE")

    sp_sweep = sub.add_parser("seqlen-sweep", help="train across sequence lengths")
    add_common(sp_sweep)
    sp_sweep.add_argument("--lengths", type=int, nargs="+", required=True)
    sp_sweep.add_argument("--algorithms", nargs="+", default=None)

    sp_pred = sub.add_parser("predict", help="open-loop prediction bands from a model file")
    sp_pred.add_argument("--model", required=True)
    sp_pred.add_argument("--data", required=True, help="input CSV")
    sp_pred.add_argument("--horizon", type=int, required=True)
    sp_pred.add_argument("--u-cols", nargs="+", required=True)
    sp_pred.add_argument("--y-cols", nargs="+", required=True)
    sp_pred.add_argument("--out", required=True)
    sp_pred.add_argument("--samples", type=int, default=100)
    sp_pred.add_argument("--seed", type=int, default=0)

    sp_sim = sub.add_parser("simulate", help="write a simulated dataset to CSV")
    add_common(sp_sim)
    sp_sim.add_argument("--data-out", required=True, help="output CSV basename")
    return p


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    tr = config.train
    if getattr(args, "seed", None) is not None:
        tr = dataclasses.replace(tr, seed=args.seed)
    if getattr(args, "algorithm", None) is not None:
        tr = dataclasses.replace(tr, algorithm=args.algorithm)
    if getattr(args, "k", None) is not None:
        tr = dataclasses.replace(tr, k_soft=args.k)
    if getattr(args, "beta", None) is not None:
        tr = dataclasses.replace(tr, beta=args.beta)
    if getattr(args, "seqlen", None) is not None:
        tr = dataclasses.replace(tr, seq_len=args.seqlen)
    config = dataclasses.replace(config, train=tr)
    if getattr(args, "out", None) is not None:
        config = dataclasses.replace(config, out_dir=args.out)
    if getattr(args, "repeats", None) is not None:
        config = dataclasses.replace(config, repeats=args.repeats)
    return config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "benchmark":
            text = cmd_benchmark(args.records, out_path=args.out,
                                 value_key="rmse_raw" if args.raw else "rmse")
            print(text)
            return EXIT_OK
        if args.command == "predict":
            n = cmd_predict(args.model, args.data, args.horizon, args.u_cols,
                            args.y_cols, args.out, n_samples=args.samples,
                            seed=args.seed)
            print(f"wrote {n} prediction rows to {args.out}")
            return EXIT_OK
        config = _apply_overrides(ExperimentConfig.from_file(args.config), args)
        if args.command == "train":
            records = cmd_train(config, threads=args.threads)
            for r in records:
                print(json.dumps(r, sort_keys=True))
            return EXIT_OK
        if args.command == "seqlen-sweep":
            rows = cmd_seqlen_sweep(config, args.lengths, algorithms=args.algorithms,
                                    threads=args.threads,
                                    out_path=Path(config.out_dir) / f"{config.name}_seqlen.csv")
            for r in rows:
                print(json.dumps(r, sort_keys=True))
            return EXIT_OK
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (RuntimeError, np.linalg.LinAlgError, FloatingPointError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
