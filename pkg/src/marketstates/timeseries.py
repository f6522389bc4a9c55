"""Log returns, local normalisation, epoch slicing and top-K portfolio selection."""
from __future__ import annotations

import bisect
import datetime as dt
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ._backend import core
from .ingest import PricePanel

MIN_PERIODS = 5


class ZeroVarianceError(ValueError):
    def __init__(self, coin_id: str, date: dt.date):
        self.coin_id = coin_id
        self.date = date
        super().__init__(
            f"{coin_id}: zero-variance normalisation window ending {date} "
            "(constant-price stretch; exclude it upstream)"
        )


class InsufficientBreadthError(ValueError):
    def __init__(self, epoch: "Epoch", eligible: int, k: int):
        self.epoch = epoch
        self.eligible = eligible
        self.k = k
        super().__init__(
            f"epoch {epoch.index} ({epoch.start_date}..{epoch.end_date}): "
            f"only {eligible} coins with complete returns, need {k}"
        )


@dataclass(frozen=True, eq=False)
class ReturnSeries:
    """A per-coin series on its own (possibly gappy) date axis.

    Also used for locally normalised returns, where warm-up and degenerate
    points are NaN.
    """

    coin_id: str
    dates: tuple[dt.date, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "values", values)
        if len(self.dates) != values.shape[0]:
            raise ValueError("dates and values differ in length")

    def __len__(self) -> int:
        return len(self.dates)

    def window(self, start: dt.date, end: dt.date) -> tuple[tuple[dt.date, ...], np.ndarray]:
        lo = bisect.bisect_left(self.dates, start)
        hi = bisect.bisect_right(self.dates, end)
        return self.dates[lo:hi], self.values[lo:hi]


NormalizedReturnSeries = ReturnSeries


@dataclass(frozen=True)
class Epoch:
    index: int
    start_date: dt.date
    end_date: dt.date
    length: int

    def contains(self, day: dt.date) -> bool:
        return self.start_date <= day <= self.end_date


@dataclass(frozen=True)
class Portfolio:
    epoch: Epoch
    coin_ids: tuple[str, ...]
    ranking_stat: tuple[float, ...]  # mean market cap over the epoch, aligned with coin_ids


def log_returns(panel: PricePanel) -> list[ReturnSeries]:
    """r(t) = ln S(t) - ln S(t-1), defined where both closes are present."""
    out = []
    logs = np.log(panel.close)
    for i, coin in enumerate(panel.coins):
        diff = logs[i, 1:] - logs[i, :-1]
        ok = np.flatnonzero(~np.isnan(diff))
        out.append(ReturnSeries(coin, tuple(panel.dates[j + 1] for j in ok), diff[ok]))
    return out


def local_normalize(
    series: ReturnSeries,
    n: int = 13,
    min_periods: int = MIN_PERIODS,
    on_degenerate: str = "raise",
) -> ReturnSeries:
    """Standardise each return by the mean and std of its trailing window.

    The window holds the ``n`` most recent returns up to and including ``t``
    (fewer during warm-up). Windows shorter than ``min_periods`` give NaN.
    A window whose values are all equal (or whose variance underflows to
    zero) raises ZeroVarianceError, or gives
    NaN when ``on_degenerate="missing"``.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if on_degenerate not in ("raise", "missing"):
        raise ValueError("on_degenerate must be 'raise' or 'missing'")
    min_periods = min(min_periods, n)
    values, degenerate = core.local_normalize(np.ascontiguousarray(series.values, dtype=float), n, min_periods)
    if on_degenerate == "raise" and degenerate.any():
        raise ZeroVarianceError(series.coin_id, series.dates[int(np.argmax(degenerate))])
    return ReturnSeries(series.coin_id, series.dates, values)


def slice_epochs(dates: Sequence[dt.date], T: int = 20) -> list[Epoch]:
    """Tile ``dates`` from the first one into disjoint windows of ``T`` dates; drop the remainder."""
    if T < 2:
        raise ValueError("T must be >= 2")
    dates = list(dates)
    return [Epoch(i, dates[i * T], dates[i * T + T - 1], T) for i in range(len(dates) // T)]


def normalized_dates(dates: Sequence[dt.date], min_periods: int = MIN_PERIODS) -> list[dt.date]:
    """Drop the warm-up dates on which no normalised return can exist yet."""
    return list(dates)[max(min_periods - 1, 0) :]


def _mean_cap(panel: PricePanel, row: int, epoch: Epoch) -> float:
    lo = bisect.bisect_left(panel.dates, epoch.start_date)
    hi = bisect.bisect_right(panel.dates, epoch.end_date)
    caps = panel.market_cap[row, lo:hi]
    caps = caps[~np.isnan(caps)]
    return float(caps.mean()) if caps.size else math.nan


def select_top_k(
    panel: PricePanel,
    epoch: Epoch,
    normalized: Mapping[str, ReturnSeries],
    K: int = 40,
) -> Portfolio:
    """Pick the K largest coins by mean market cap over the epoch.

    Coins lacking a finite normalised return on any epoch day are skipped,
    letting the next-ranked coin in. Ties go to the smaller coin id.
    """
    ranked = []
    for row, coin in enumerate(panel.coins):
        cap = _mean_cap(panel, row, epoch)
        if math.isnan(cap):
            continue
        ranked.append((-cap, coin))
    ranked.sort()
    chosen: list[str] = []
    stats: list[float] = []
    for neg_cap, coin in ranked:
        series = normalized.get(coin)
        if series is None:
            continue
        _, vals = series.window(epoch.start_date, epoch.end_date)
        if vals.shape[0] != epoch.length or not np.all(np.isfinite(vals)):
            continue
        chosen.append(coin)
        stats.append(-neg_cap)
        if len(chosen) == K:
            return Portfolio(epoch, tuple(chosen), tuple(stats))
    raise InsufficientBreadthError(epoch, len(chosen), K)


def epoch_matrix(portfolio: Portfolio, series: Mapping[str, ReturnSeries]) -> np.ndarray:
    """T x K array of the portfolio's values over its epoch, columns in portfolio order."""
    ep = portfolio.epoch
    cols = []
    for coin in portfolio.coin_ids:
        _, vals = series[coin].window(ep.start_date, ep.end_date)
        if vals.shape[0] != ep.length:
            raise ValueError(f"{coin} lacks data inside epoch {ep.index}")
        cols.append(vals)
    return np.column_stack(cols) if cols else np.zeros((ep.length, 0))
