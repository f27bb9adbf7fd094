"""Command-line surface: generate, impute, stream, evaluate.

Model settings come from a flat JSON config whose keys name what they
set (factor counts, kernel hyperparameters, damping); the seasonal
period is configured as an angular frequency, ``2 * pi * period``, and
converted internally.  Every command is deterministic given its inputs
and seed, and writes UTF-8, LF-terminated files with floats at 17
significant digits.  Failures print a single machine-readable JSON line
on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    SeriesData,
    SplitSpec,
    apply_split,
    load_csv,
    save_csv,
    synth_generate,
)
from .engine import ModelConfig, ModelPosterior, batch_at, init, run_offline, smooth, step
from .kernels import Matern, Periodic
from .metrics import build_report, rmse
from .predictor import predict_cells, predict_grid, sample_cells

__all__ = ["main", "RunConfig", "cmd_synth", "cmd_impute", "cmd_stream", "cmd_eval"]

_MODEL_KEYS = {
    "number_of_trend_factor",
    "number_of_seasonality_factor",
    "trend_factor_smoothness",
    "trend_factor_lengthscale",
    "trend_factor_variance",
    "seasonal_factor_frequency",
    "seasonal_factor_lengthscale",
    "seasonal_factor_variance",
    "seasonal_factor_harmonics",
    "noise_prior_shape",
    "noise_prior_rate",
    "damping_epochs",
    "damping_rho",
    "jitter",
    "fix_weights",
    "fixed_noise_precision",
    "weight_init_scale",
}
_RUN_KEYS = {"observed_ratio", "split_mode", "split_seed", "truth_csv"}


class CliError(ValueError):
    """User-facing command failure with a one-line reason."""


def _parse_smoothness(raw) -> float:
    if isinstance(raw, str):
        table = {"1/2": 0.5, "3/2": 1.5}
        if raw not in table:
            raise CliError(f"trend_factor_smoothness must be 1/2 or 3/2, got {raw!r}")
        return table[raw]
    return float(raw)


def _model_config(cfg: dict, n_channels: int, seed: int) -> ModelConfig:
    n_trend = int(cfg.get("number_of_trend_factor", 0))
    n_seasonal = int(cfg.get("number_of_seasonality_factor", 0))
    trend = None
    if n_trend > 0:
        trend = Matern(
            nu=_parse_smoothness(cfg.get("trend_factor_smoothness", 1.5)),
            lengthscale=float(cfg["trend_factor_lengthscale"]),
            variance=float(cfg.get("trend_factor_variance", 1.0)),
        )
    seasonal = None
    if n_seasonal > 0:
        period = float(cfg["seasonal_factor_frequency"]) / (2.0 * math.pi)
        seasonal = Periodic(
            period=period,
            lengthscale=float(cfg["seasonal_factor_lengthscale"]),
            variance=float(cfg.get("seasonal_factor_variance", 1.0)),
            harmonics=int(cfg.get("seasonal_factor_harmonics", 7)),
        )
    fixed_tau = cfg.get("fixed_noise_precision")
    return ModelConfig(
        n_channels=n_channels,
        n_trend=n_trend,
        n_seasonal=n_seasonal,
        trend_kernel=trend,
        seasonal_kernel=seasonal,
        noise_prior_shape=float(cfg.get("noise_prior_shape", 1.0)),
        noise_prior_rate=float(cfg.get("noise_prior_rate", 1.0)),
        damping_epochs=int(cfg.get("damping_epochs", 3)),
        damping_rho=float(cfg.get("damping_rho", 0.5)),
        jitter=float(cfg.get("jitter", 1e-9)),
        fix_weights=bool(cfg.get("fix_weights", False)),
        fixed_noise_precision=None if fixed_tau is None else float(fixed_tau),
        weight_init_scale=float(cfg.get("weight_init_scale", 1.0)),
        seed=seed,
    )


@dataclass
class RunConfig:
    """Everything one imputation run needs: model, data, split, outputs."""

    model: ModelConfig
    data: SeriesData
    train: SeriesData
    test_cells: np.ndarray | None  # (M, 2) of (channel, timestamp index)
    truth: np.ndarray | None  # (D, N) values to score against
    out_dir: Path
    samples: int
    include_noise: bool
    seed: int


def _load_config(path: str) -> dict:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise CliError("config must be a flat JSON object")
    unknown = set(cfg) - _MODEL_KEYS - _RUN_KEYS
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _prepare_run(args: argparse.Namespace) -> RunConfig:
    cfg = _load_config(args.config)
    try:
        data = load_csv(args.input)
    except (OSError, ValueError) as exc:
        raise CliError(str(exc)) from None
    model = _model_config(cfg, data.n_channels, args.seed)

    train, test_cells = data, None
    if "observed_ratio" in cfg:
        split = SplitSpec(
            observed_ratio=float(cfg["observed_ratio"]),
            mode=str(cfg.get("split_mode", "pointwise")),
            seed=int(cfg.get("split_seed", 0)),
        )
        train, test_cells = apply_split(data, split)

    truth = None
    if "truth_csv" in cfg:
        truth_data = load_csv(cfg["truth_csv"])
        if truth_data.values.shape != data.values.shape:
            raise CliError("truth CSV shape does not match the input series")
        truth = truth_data.values
    elif test_cells is not None:
        truth = data.values  # held-out observations score against themselves

    if test_cells is None and truth is not None:
        # No split: every originally missing cell is a test cell.
        test_cells = np.argwhere(data.mask == 0)
        if test_cells.shape[0] == 0:
            test_cells = None

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    return RunConfig(
        model=model,
        data=data,
        train=train,
        test_cells=test_cells,
        truth=truth,
        out_dir=out_dir,
        samples=args.samples,
        include_noise=args.include_noise == "true",
        seed=args.seed,
    )


def _write_factors_csv(path: Path, timestamps: np.ndarray, components: np.ndarray) -> None:
    d, k, n = components.shape
    header = "t," + ",".join(f"c{di + 1}_f{ki + 1}" for di in range(d) for ki in range(k))
    lines = [header]
    for j in range(n):
        cells = [f"{timestamps[j]:.17g}"]
        cells.extend(
            f"{components[di, ki, j]:.17g}" for di in range(d) for ki in range(k)
        )
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _write_test_indices(path: Path, cells: np.ndarray) -> None:
    lines = ["channel,timestamp_index"]
    lines.extend(f"{int(d)},{int(n)}" for d, n in cells)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _full_series(timestamps: np.ndarray, matrix: np.ndarray) -> SeriesData:
    return SeriesData(
        timestamps=timestamps,
        values=matrix,
        mask=np.ones_like(matrix, dtype=np.uint8),
    )


def _score(run: RunConfig, posterior: ModelPosterior):
    """EvalReport over the test cells, or None when nothing is scoreable."""
    if run.test_cells is None or run.truth is None or run.test_cells.shape[0] == 0:
        return None
    means, variances = predict_cells(posterior, run.test_cells, run.include_noise)
    draws = sample_cells(
        posterior, run.test_cells, run.samples, run.seed, run.include_noise
    )
    truth_vals = run.truth[run.test_cells[:, 0], run.test_cells[:, 1]]
    return build_report(
        channels=run.test_cells[:, 0],
        truth=truth_vals,
        pred_mean=means,
        pred_var=variances,
        samples=draws,
    )


def cmd_synth(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = synth_generate(
        n_points=args.n_points,
        seed=args.seed,
        observed_count=args.observed_count,
        noise_std=args.noise_std,
    )
    save_csv(data, out_dir / "synthetic.csv")
    save_csv(_full_series(data.timestamps, data.ground_truth), out_dir / "synthetic_truth.csv")
    total = data.values.size
    meta = {
        "generator": "linear-trend plus three-sinusoid mixture benchmark",
        "seed": args.seed,
        "n_points": args.n_points,
        "observed_count": args.observed_count,
        "total_cells": total,
        "observed_fraction": args.observed_count / total,
        "noise_std": args.noise_std,
    }
    (out_dir / "synthetic.meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
    )
    return 0


def cmd_impute(args: argparse.Namespace) -> int:
    run = _prepare_run(args)
    posterior = run_offline(run.train, run.model)
    means, variances, components = predict_grid(posterior, run.data.timestamps, run.include_noise)
    save_csv(_full_series(run.data.timestamps, means), run.out_dir / "imputed_mean.csv")
    save_csv(
        _full_series(run.data.timestamps, np.sqrt(variances)),
        run.out_dir / "imputed_std.csv",
    )
    _write_factors_csv(run.out_dir / "factors.csv", run.data.timestamps, components)
    if run.test_cells is not None:
        _write_test_indices(run.out_dir / "test_indices.csv", run.test_cells)
    report = _score(run, posterior)
    if report is not None:
        (run.out_dir / "report.json").write_text(
            report.to_json(), encoding="utf-8", newline="\n"
        )
    return 0


def cmd_stream(args: argparse.Namespace) -> int:
    if args.eval_every < 1:
        raise CliError("--eval-every must be >= 1")
    run = _prepare_run(args)
    if run.test_cells is None or run.truth is None:
        raise CliError("streaming evaluation needs a split (observed_ratio) or truth_csv")
    posterior = init(run.model)
    order = np.argsort(run.test_cells[:, 1], kind="stable")
    cells_sorted = run.test_cells[order]
    truth_sorted = run.truth[cells_sorted[:, 0], cells_sorted[:, 1]]
    rows: list[tuple[int, float]] = []
    n_total = run.train.n_timestamps
    for n in range(n_total):
        step(posterior, batch_at(run.train, n))
        if (n + 1) % args.eval_every == 0:
            snapshot = posterior.copy_for_eval()
            smooth(snapshot)
            upto = int(np.searchsorted(cells_sorted[:, 1], n, side="right"))
            if upto == 0:
                rows.append((n + 1, math.nan))
                continue
            means, _ = predict_cells(snapshot, cells_sorted[:upto], run.include_noise)
            rows.append((n + 1, rmse(means, truth_sorted[:upto])))
    lines = ["processed,rmse"] + [f"{c},{r:.17g}" for c, r in rows]
    (run.out_dir / "trace.csv").write_text(
        "\n".join(lines) + "\n", encoding="utf-8", newline="\n"
    )
    return 0


def _load_test_indices(path: str) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "channel,timestamp_index":
        raise CliError(f"{path}: expected header 'channel,timestamp_index'")
    cells = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise CliError(f"{path}:{lineno}: expected two comma-separated integers")
        try:
            cells.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise CliError(f"{path}:{lineno}: non-integer index") from None
    if not cells:
        raise CliError(f"{path}: empty test set")
    return np.asarray(cells, dtype=int)


def cmd_eval(args: argparse.Namespace) -> int:
    pred = load_csv(args.pred)
    truth = load_csv(args.truth)
    cells = _load_test_indices(args.indices)
    if pred.values.shape != truth.values.shape:
        raise CliError("prediction and truth CSVs have different shapes")
    d_max, n_max = pred.values.shape
    if (cells[:, 0] >= d_max).any() or (cells[:, 1] >= n_max).any() or (cells < 0).any():
        raise CliError("test index out of bounds for the prediction grid")
    pred_vals = pred.values[cells[:, 0], cells[:, 1]]
    truth_vals = truth.values[cells[:, 0], cells[:, 1]]
    if not (np.isfinite(pred_vals).all() and np.isfinite(truth_vals).all()):
        raise CliError("test cells must be present in both CSVs")
    pred_var = None
    draws = None
    if args.std is not None:
        std = load_csv(args.std)
        if std.values.shape != pred.values.shape:
            raise CliError("std CSV shape does not match predictions")
        stds = std.values[cells[:, 0], cells[:, 1]]
        if not (np.isfinite(stds).all() and (stds > 0).all()):
            raise CliError("std CSV must hold positive values at test cells")
        pred_var = stds**2
        rng = np.random.default_rng(args.seed)
        draws = pred_vals[:, None] + stds[:, None] * rng.standard_normal(
            (cells.shape[0], args.samples)
        )
    report = build_report(
        channels=cells[:, 0],
        truth=truth_vals,
        pred_mean=pred_vals,
        pred_var=pred_var,
        samples=draws,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8", newline="\n")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamfill",
        description="Streaming Bayesian imputation of multivariate time series.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate the synthetic benchmark series")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--n-points", type=int, default=500)
    p_synth.add_argument("--observed-count", type=int, default=400)
    p_synth.add_argument("--noise-std", type=float, default=0.1)
    p_synth.set_defaults(func=cmd_synth)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="flat JSON model config")
    common.add_argument("--in", dest="input", required=True, help="input series CSV")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--samples", type=int, default=50)
    common.add_argument("--include-noise", choices=("true", "false"), default="true")

    p_impute = sub.add_parser(
        "impute", parents=[common], help="offline imputation over a whole series"
    )
    p_impute.set_defaults(func=cmd_impute)

    p_stream = sub.add_parser(
        "stream", parents=[common], help="stream timestamps with periodic evaluation"
    )
    p_stream.add_argument("--eval-every", type=int, required=True)
    p_stream.set_defaults(func=cmd_stream)

    p_eval = sub.add_parser("eval", help="score predictions at test cells")
    p_eval.add_argument("--pred", required=True, help="prediction CSV (fully observed)")
    p_eval.add_argument("--truth", required=True, help="ground-truth CSV")
    p_eval.add_argument("--indices", required=True, help="test index CSV")
    p_eval.add_argument("--std", default=None, help="optional predictive-std CSV")
    p_eval.add_argument("--out", required=True, help="output directory")
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--samples", type=int, default=50)
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
