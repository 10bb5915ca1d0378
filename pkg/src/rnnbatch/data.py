"""Feature assembly, chronological splits, normalization and segmentation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

WEATHER_NAMES = ("precip", "tmin", "tmax", "srad", "wind", "rhum")
TARGET_NAMES = ("sw", "sno", "sf")
FEATURE_NAMES = WEATHER_NAMES + ("doy",)


def doy_feature(doy):
    """Distance-from-new-year encoding ``183 - |doy - 183|``."""
    d = np.asarray(doy)
    if d.size and (d.min() < 1 or d.max() > 366):
        raise ConfigError(f"day of year must be in 1..366, got {d.min()}..{d.max()}")
    out = 183 - np.abs(d - 183)
    return out.item() if out.ndim == 0 else out


@dataclass(frozen=True)
class NormStats:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    y_names: tuple[str, ...]

    def select(self, names: tuple[str, ...]) -> "NormStats":
        idx = [self.y_names.index(n) for n in names]
        return NormStats(self.x_mean, self.x_std, self.y_mean[idx], self.y_std[idx], tuple(names))


@dataclass
class TimeSeriesDataset:
    """Aligned daily inputs ``X`` (n, F) and targets ``Y`` (n, V).

    ``X`` holds the six weather drivers followed by the transformed day of
    year. ``start`` is the offset of row 0 in the full series and
    ``y_before`` is the target row preceding this slice, when it exists.
    """

    X: np.ndarray
    Y: np.ndarray
    doy: np.ndarray
    norm_stats: NormStats | None = None
    y_names: tuple[str, ...] = TARGET_NAMES
    start: int = 0
    y_before: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        self.doy = np.asarray(self.doy, dtype=np.int64)
        if not (len(self.X) == len(self.Y) == len(self.doy)):
            raise ConfigError(f"row counts differ: X={len(self.X)}, Y={len(self.Y)}, doy={len(self.doy)}")
        if self.Y.shape[1] != len(self.y_names):
            raise ConfigError(f"{self.Y.shape[1]} target columns but names {self.y_names}")

    @classmethod
    def from_raw(cls, weather: np.ndarray, targets: np.ndarray, doy) -> "TimeSeriesDataset":
        weather = np.asarray(weather, dtype=np.float64)
        if weather.ndim != 2 or weather.shape[1] != len(WEATHER_NAMES):
            raise ConfigError(f"weather must have {len(WEATHER_NAMES)} columns, got {weather.shape}")
        X = np.column_stack([weather, doy_feature(np.asarray(doy))])
        return cls(X, targets, doy)

    @property
    def n_days(self) -> int:
        return len(self.X)

    @property
    def weather(self) -> np.ndarray:
        return self.X[:, : len(WEATHER_NAMES)]

    def rows(self, a: int, b: int) -> "TimeSeriesDataset":
        """Contiguous sub-range ``[a, b)`` keeping track of the preceding target."""
        if not 0 <= a < b <= self.n_days:
            raise ConfigError(f"bad row range [{a}, {b}) for {self.n_days} days")
        before = self.Y[a - 1].copy() if a > 0 else self.y_before
        return replace(self, X=self.X[a:b], Y=self.Y[a:b], doy=self.doy[a:b],
                       start=self.start + a, y_before=before)

    def select_target(self, name: str) -> "TimeSeriesDataset":
        if name not in self.y_names:
            raise ConfigError(f"unknown target {name!r}; choose from {self.y_names}")
        j = self.y_names.index(name)
        stats = self.norm_stats.select((name,)) if self.norm_stats is not None else None
        before = None if self.y_before is None else self.y_before[j:j + 1].copy()
        return replace(self, Y=self.Y[:, j:j + 1], y_names=(name,), norm_stats=stats, y_before=before)


def split_chrono(dataset: TimeSeriesDataset, fracs=(0.5, 0.1, 0.4)):
    """Contiguous train/valid/test split; floor sizes, remainder to test."""
    fracs = tuple(float(f) for f in fracs)
    if len(fracs) != 3 or abs(sum(fracs) - 1.0) > 1e-9 or min(fracs) < 0:
        raise ConfigError(f"split fractions must be three non-negative values summing to 1, got {fracs}")
    n = dataset.n_days
    n_train = int(np.floor(fracs[0] * n + 1e-9))
    n_valid = int(np.floor(fracs[1] * n + 1e-9))
    n_test = n - n_train - n_valid
    if min(n_train, n_valid, n_test) < 1:
        raise ConfigError(f"empty split for {n} days with fractions {fracs}")
    return (dataset.rows(0, n_train),
            dataset.rows(n_train, n_train + n_valid),
            dataset.rows(n_train + n_valid, n))


def split_sizes(n: int, fracs=(0.5, 0.1, 0.4)) -> tuple[int, int, int]:
    n_train = int(np.floor(fracs[0] * n + 1e-9))
    n_valid = int(np.floor(fracs[1] * n + 1e-9))
    return n_train, n_valid, n - n_train - n_valid


def fit_norm(train: TimeSeriesDataset) -> NormStats:
    x_mean, x_std = train.X.mean(0), train.X.std(0)
    y_mean, y_std = train.Y.mean(0), train.Y.std(0)
    names = list(FEATURE_NAMES[: train.X.shape[1]]) + [f"x{i}" for i in range(len(FEATURE_NAMES), train.X.shape[1])]
    for name, s in zip(names, x_std):
        if not s > 0:
            raise ConfigError(f"feature {name!r} has zero variance in the training split")
    for name, s in zip(train.y_names, y_std):
        if not s > 0:
            raise ConfigError(f"target {name!r} has zero variance in the training split")
    return NormStats(x_mean, x_std, y_mean, y_std, tuple(train.y_names))


def apply_norm(split: TimeSeriesDataset, stats: NormStats) -> TimeSeriesDataset:
    if split.norm_stats is not None:
        raise ConfigError("split is already normalized")
    stats = stats.select(split.y_names)
    X = (split.X - stats.x_mean) / stats.x_std
    Y = (split.Y - stats.y_mean) / stats.y_std
    before = None if split.y_before is None else (split.y_before - stats.y_mean) / stats.y_std
    return replace(split, X=X, Y=Y, norm_stats=stats, y_before=before)


def denorm_targets(Yhat: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.asarray(Yhat) * stats.y_std + stats.y_mean


def norm_targets(Y: np.ndarray, stats: NormStats) -> np.ndarray:
    return (np.asarray(Y) - stats.y_mean) / stats.y_std


@dataclass(frozen=True)
class SegmentIndex:
    start: int
    length: int

    @property
    def stop(self) -> int:
        return self.start + self.length


def slice_segments(n_days: int, T: int, stride: int) -> list[SegmentIndex]:
    """Windows of length ``T`` starting at 0, stride, 2*stride, ...; the tail is dropped."""
    if isinstance(n_days, TimeSeriesDataset):
        n_days = n_days.n_days
    if T < 1 or stride < 1:
        raise ConfigError(f"T and stride must be >= 1, got T={T}, stride={stride}")
    if T > n_days:
        raise ConfigError(f"segment length {T} exceeds split length {n_days}")
    return [SegmentIndex(s, T) for s in range(0, n_days - T + 1, stride)]


def _window_index(segments: list[SegmentIndex]) -> np.ndarray:
    T = segments[0].length
    if any(s.length != T for s in segments):
        raise ConfigError("segments must share one length")
    return np.array([s.start for s in segments])[:, None] + np.arange(T)


def segment_arrays(split: TimeSeriesDataset, segments: list[SegmentIndex], X: np.ndarray | None = None):
    """Stack segments into ``(n_seg, T, F)`` inputs and ``(n_seg, T, V)`` targets."""
    idx = _window_index(segments)
    X = split.X if X is None else X
    return X[idx], split.Y[idx]


def initial_values(split: TimeSeriesDataset, segments: list[SegmentIndex]) -> np.ndarray:
    """Target on the day before each segment, ``(n_seg, V)``; 0 when the segment opens the split."""
    V = split.Y.shape[1]
    out = np.zeros((len(segments), V))
    for i, s in enumerate(segments):
        if s.start > 0:
            out[i] = split.Y[s.start - 1]
    return out


def append_feature(X: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Concatenate ``values`` (broadcast to ``X[..., :1]``'s shape) as extra input columns."""
    values = np.broadcast_to(values, X.shape[:-1] + (np.shape(values)[-1],))
    return np.concatenate([X, values], axis=-1)


def augment_initial_value(split: TimeSeriesDataset, segments: list[SegmentIndex]) -> np.ndarray:
    X, _ = segment_arrays(split, segments)
    y0 = initial_values(split, segments)
    return append_feature(X, y0[:, None, :])


def shifted_targets(split: TimeSeriesDataset) -> np.ndarray:
    """Previous day's target for every row; row 0 gets 0."""
    prev = np.zeros_like(split.Y)
    prev[1:] = split.Y[:-1]
    return prev


def augment_teacher_forcing(split: TimeSeriesDataset, segments: list[SegmentIndex]) -> np.ndarray:
    Xa = np.concatenate([split.X, shifted_targets(split)], axis=1)
    return segment_arrays(split, segments, Xa)[0]
