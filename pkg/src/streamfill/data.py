"""Series containers, CSV ingestion, split protocols and a synthetic benchmark.

The wire format is a plain CSV with a header row: column 1 holds the
timestamp, columns 2..D+1 the channel values, and an empty cell marks a
missing observation.  Values are printed with 17 significant digits so a
save/load cycle is bit-exact.  Missing cells are carried internally as
NaN and masked; the inference engine never reads them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "SeriesData",
    "SplitSpec",
    "ParseError",
    "load_csv",
    "save_csv",
    "apply_split",
    "synth_generate",
    "synth_truth",
    "SYNTH_WEIGHTS",
    "SYNTH_CHANNELS",
]


class ParseError(ValueError):
    """CSV contents violate the series wire format."""


@dataclass(frozen=True, eq=False)
class SeriesData:
    """A multivariate series over strictly increasing real timestamps.

    ``values`` is channels x timestamps; ``mask`` is 1 where observed.
    ``ground_truth`` (noiseless, fully dense) is only present for
    synthetic data.
    """

    timestamps: np.ndarray  # (N,)
    values: np.ndarray  # (D, N)
    mask: np.ndarray  # (D, N) in {0, 1}
    ground_truth: np.ndarray | None = None

    def __post_init__(self) -> None:
        ts = np.asarray(self.timestamps, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask)
        if ts.ndim != 1:
            raise ValueError("timestamps must be a 1-d vector")
        if vals.ndim != 2 or vals.shape[1] != ts.shape[0]:
            raise ValueError(
                f"values shape {vals.shape} does not match {ts.shape[0]} timestamps"
            )
        if mask.shape != vals.shape:
            raise ValueError(f"mask shape {mask.shape} != values shape {vals.shape}")
        if not np.isin(mask, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        if ts.shape[0] > 1 and not (np.diff(ts) > 0).all():
            raise ValueError("timestamps must be strictly increasing")
        if not np.isfinite(ts).all():
            raise ValueError("timestamps must be finite")
        mask = mask.astype(np.uint8)
        if not np.isfinite(vals[mask == 1]).all():
            raise ValueError("observed cells must hold finite values")
        if self.ground_truth is not None:
            gt = np.asarray(self.ground_truth, dtype=float)
            if gt.shape != vals.shape:
                raise ValueError("ground_truth shape must match values")
            object.__setattr__(self, "ground_truth", gt)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "mask", mask)

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_timestamps(self) -> int:
        return self.timestamps.shape[0]

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class SplitSpec:
    """Observation-holdout protocol.

    ``pointwise`` keeps each observed cell independently with probability
    ``observed_ratio``; ``timestamp-holdout`` keeps a ratio-fraction of
    timestamps intact and strips every channel from the rest, leaving
    them in the series as evaluation-only grid points.
    """

    observed_ratio: float
    mode: str = "pointwise"
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.observed_ratio <= 1.0):
            raise ValueError(f"observed_ratio must be in (0, 1], got {self.observed_ratio}")
        mode = self.mode.replace("_", "-")
        if mode not in ("pointwise", "timestamp-holdout"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)


def _format_value(x: float) -> str:
    return f"{x:.17g}"


def load_csv(path: str | Path) -> SeriesData:
    """Read a series CSV (header row, timestamp column, empty = missing)."""
    path = Path(path)
    rows: list[tuple[float, list[float], list[int]]] = []
    width: int | None = None
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, expected a header row") from None
        if len(header) < 2:
            raise ParseError(f"{path}: header must name a timestamp and >= 1 channel")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(
                    f"{path}:{lineno}: expected {width} cells, got {len(row)}"
                )
            try:
                t = float(row[0])
            except ValueError:
                raise ParseError(
                    f"{path}:{lineno}: non-numeric timestamp {row[0]!r}"
                ) from None
            vals: list[float] = []
            obs: list[int] = []
            for j, cell in enumerate(row[1:], start=2):
                cell = cell.strip()
                if cell == "":
                    vals.append(math.nan)
                    obs.append(0)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}:{lineno}: non-numeric cell {cell!r} in column {j}"
                    ) from None
                obs.append(1)
            if rows and t <= rows[-1][0]:
                raise ParseError(
                    f"{path}:{lineno}: timestamp {t!r} not greater than previous "
                    f"{rows[-1][0]!r}"
                )
            rows.append((t, vals, obs))
    if not rows:
        raise ParseError(f"{path}: no data rows")
    timestamps = np.array([r[0] for r in rows])
    values = np.array([r[1] for r in rows]).T
    mask = np.array([r[2] for r in rows], dtype=np.uint8).T
    return SeriesData(timestamps=timestamps, values=values, mask=mask)


def save_csv(data: SeriesData, path: str | Path) -> None:
    """Write a series CSV; masked cells become empty, floats keep 17 digits."""
    path = Path(path)
    lines = ["t," + ",".join(f"c{d + 1}" for d in range(data.n_channels))]
    for n in range(data.n_timestamps):
        cells = [_format_value(float(data.timestamps[n]))]
        for d in range(data.n_channels):
            if data.mask[d, n]:
                cells.append(_format_value(float(data.values[d, n])))
            else:
                cells.append("")
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def apply_split(data: SeriesData, spec: SplitSpec) -> tuple[SeriesData, np.ndarray]:
    """Split observed cells into a training series and test-cell indices.

    Returns ``(train, test_idx)`` where ``test_idx`` is an (M, 2) array of
    (channel, timestamp-index) pairs of observations removed from the
    training mask.  The training series keeps all timestamps.
    """
    if data.n_observed == 0:
        raise ValueError("cannot split a series with no observed points")
    rng = np.random.default_rng(spec.seed)
    mask = data.mask.copy()
    if spec.mode == "pointwise":
        keep = rng.random(mask.shape) < spec.observed_ratio
        test = (mask == 1) & ~keep
        mask[test] = 0
    else:
        n = data.n_timestamps
        n_keep = int(round(spec.observed_ratio * n))
        keep_cols = np.zeros(n, dtype=bool)
        keep_cols[rng.permutation(n)[:n_keep]] = True
        test = (mask == 1) & ~keep_cols[np.newaxis, :]
        mask[:, ~keep_cols] = 0
    if mask.sum() == 0:
        raise ValueError("split left zero training points; lower the holdout")
    test_idx = np.argwhere(test)
    train = SeriesData(
        timestamps=data.timestamps,
        values=data.values,
        mask=mask,
        ground_truth=data.ground_truth,
    )
    return train, test_idx


# Built-in benchmark: four channels mixing one linear trend and three
# sinusoids of increasing frequency through a fixed weight matrix.
SYNTH_WEIGHTS = np.array(
    [
        [1.0, 1.0, -2.0, -2.0],
        [0.4, 1.0, 2.0, -1.0],
        [-0.3, 2.0, 1.0, -1.0],
        [-1.0, 1.0, 1.0, 0.5],
    ]
)
SYNTH_CHANNELS = SYNTH_WEIGHTS.shape[0]


def synth_factors(ts: np.ndarray) -> np.ndarray:
    """The four latent factor functions evaluated at ``ts``; shape (4, N)."""
    ts = np.asarray(ts, dtype=float)
    return np.stack(
        [
            10.0 * ts,
            np.sin(20.0 * np.pi * ts),
            np.cos(40.0 * np.pi * ts),
            np.sin(60.0 * np.pi * ts),
        ]
    )


def synth_truth(ts: np.ndarray) -> np.ndarray:
    """Noiseless benchmark values at ``ts``; shape (4, N)."""
    return SYNTH_WEIGHTS @ synth_factors(ts)


def synth_generate(
    n_points: int,
    seed: int,
    observed_count: int = 400,
    noise_std: float = 0.1,
) -> SeriesData:
    """Generate the benchmark series on an irregular grid over [0, 1].

    ``n_points`` timestamps are drawn uniformly then sorted; every cell
    receives independent Gaussian noise on top of the closed-form truth,
    and exactly ``observed_count`` cells (uniform without replacement)
    are marked observed.
    """
    if n_points < 4:
        raise ValueError(f"n_points must be >= 4, got {n_points}")
    total = SYNTH_CHANNELS * n_points
    if not (0 <= observed_count <= total):
        raise ValueError(
            f"observed_count must be in [0, {total}] for {n_points} timestamps, "
            f"got {observed_count}"
        )
    rng = np.random.default_rng(seed)
    ts = np.sort(rng.uniform(0.0, 1.0, size=n_points))
    while np.any(np.diff(ts) <= 0):  # vanishing chance of duplicate draws
        ts = np.sort(rng.uniform(0.0, 1.0, size=n_points))
    truth = synth_truth(ts)
    values = truth + noise_std * rng.standard_normal(truth.shape)
    mask = np.zeros(total, dtype=np.uint8)
    mask[rng.permutation(total)[:observed_count]] = 1
    return SeriesData(
        timestamps=ts,
        values=values,
        mask=mask.reshape(truth.shape),
        ground_truth=truth,
    )
