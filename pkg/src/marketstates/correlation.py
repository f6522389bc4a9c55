"""Per-epoch Pearson matrices, the signed power map, and epoch summary statistics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .timeseries import Epoch, Portfolio, ReturnSeries, epoch_matrix


class DegenerateSeriesError(ValueError):
    def __init__(self, coin_id: str, epoch: Epoch | None = None):
        self.coin_id = coin_id
        where = f" in epoch {epoch.index}" if epoch is not None else ""
        super().__init__(f"{coin_id}: zero variance{where}; correlation undefined")


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    epoch: Epoch
    coin_ids: tuple[str, ...]
    values: np.ndarray
    q_applied: float = 1.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "coin_ids", tuple(self.coin_ids))
        if v.shape != (len(self.coin_ids), len(self.coin_ids)):
            raise ValueError("matrix shape does not match coin_ids")

    @property
    def raw_magnitudes(self) -> np.ndarray:
        """|C| before the power map, recovered by inverting it."""
        mag = np.abs(self.values)
        return mag if self.q_applied == 1.0 else mag ** (1.0 / self.q_applied)


@dataclass(frozen=True)
class EpochStats:
    epoch_index: int
    mean_return: float
    mean_correlation: float


def correlation_from_array(X: np.ndarray, coin_ids=None, epoch: Epoch | None = None) -> np.ndarray:
    """Pearson matrix of the columns of ``X`` with population (1/T) moments."""
    X = np.asarray(X, dtype=float)
    T = X.shape[0]
    centered = X - X.sum(axis=0) / T
    sd = np.sqrt((centered**2).sum(axis=0) / T)
    flat = np.flatnonzero(sd == 0)
    if flat.size:
        name = coin_ids[flat[0]] if coin_ids is not None else f"column {flat[0]}"
        raise DegenerateSeriesError(name, epoch)
    z = centered / sd
    C = (z.T @ z) / T
    C = np.clip((C + C.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(C, 1.0)
    return C


def pearson_matrix(portfolio: Portfolio, normalized: Mapping[str, ReturnSeries]) -> CorrelationMatrix:
    X = epoch_matrix(portfolio, normalized)
    C = correlation_from_array(X, portfolio.coin_ids, portfolio.epoch)
    return CorrelationMatrix(portfolio.epoch, portfolio.coin_ids, C, 1.0)


def signed_power(values: np.ndarray, q: float) -> np.ndarray:
    out = np.sign(values) * np.abs(values) ** q
    np.fill_diagonal(out, 1.0)
    return out


def power_map(matrix: CorrelationMatrix, q: float = 1.5) -> CorrelationMatrix:
    """C -> sign(C)|C|^q element-wise; the diagonal stays 1.

    Applying it to an already mapped matrix composes: ``q_applied`` becomes
    the product of the exponents.
    """
    if q <= 0:
        raise ValueError("q must be positive")
    if q == 1.0:
        return CorrelationMatrix(matrix.epoch, matrix.coin_ids, matrix.values, matrix.q_applied)
    return CorrelationMatrix(matrix.epoch, matrix.coin_ids, signed_power(matrix.values, q), matrix.q_applied * q)


def mean_offdiagonal(values: np.ndarray) -> float:
    k = values.shape[0]
    if k < 2:
        return 0.0
    iu = np.triu_indices(k, 1)
    return float(values[iu].mean())


def epoch_stats(portfolio: Portfolio, returns: Mapping[str, ReturnSeries], matrix: CorrelationMatrix) -> EpochStats:
    """Mean raw log-return over all coins and days, and mean upper-triangle correlation."""
    R = epoch_matrix(portfolio, returns)
    return EpochStats(portfolio.epoch.index, float(R.mean()), mean_offdiagonal(matrix.values))
