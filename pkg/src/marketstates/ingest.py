"""Load daily close prices and market capitalisations into an aligned panel.

Two sources are supported: a local CSV file with the header
``date,coin_id,close,market_cap`` and a remote market-data aggregator reached
over HTTP. Remote responses are cached per coin in the same CSV format, so a
warm cache never touches the network.

Missing cells are NaN in the panel arrays and are never filled here.
"""
from __future__ import annotations

import csv
import datetime as dt
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Protocol, Sequence

import numpy as np

log = logging.getLogger(__name__)

HEADER = ("date", "coin_id", "close", "market_cap")


class IngestError(ValueError):
    """Invalid input data. ``line`` is the 1-based CSV line when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class FetchError(RuntimeError):
    """A remote request failed after all retries."""

    def __init__(self, coin_id: str, message: str):
        self.coin_id = coin_id
        super().__init__(f"{coin_id}: {message}")


class UnknownCoinError(FetchError):
    pass


class CacheError(OSError):
    pass


@dataclass(frozen=True)
class PriceRecord:
    coin_id: str
    date: dt.date
    close: float
    market_cap: float = math.nan  # NaN marks a missing cap

    def __post_init__(self):
        if not self.coin_id:
            raise IngestError("empty coin_id")
        if not (math.isfinite(self.close) and self.close > 0):
            raise IngestError(f"close must be a finite positive number, got {self.close!r} ({self.coin_id} {self.date})")
        if not math.isnan(self.market_cap) and not (math.isfinite(self.market_cap) and self.market_cap >= 0):
            raise IngestError(f"market_cap must be non-negative, got {self.market_cap!r} ({self.coin_id} {self.date})")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PricePanel:
    """Coins x dates arrays of close price and market cap; NaN = missing.

    Dates are consecutive calendar days. The arrays are read-only, so a panel
    can be shared between threads.
    """

    coins: tuple[str, ...]
    dates: tuple[dt.date, ...]
    close: np.ndarray
    market_cap: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coins", tuple(self.coins))
        object.__setattr__(self, "dates", tuple(self.dates))
        shape = (len(self.coins), len(self.dates))
        close = _frozen(np.asarray(self.close, dtype=float).reshape(shape))
        cap = _frozen(np.asarray(self.market_cap, dtype=float).reshape(shape))
        object.__setattr__(self, "close", close)
        object.__setattr__(self, "market_cap", cap)
        if len(set(self.coins)) != len(self.coins):
            raise IngestError("duplicate coin ids in panel")
        for a, b in zip(self.dates, self.dates[1:]):
            if (b - a).days != 1:
                raise IngestError(f"panel dates must be consecutive days ({a} -> {b})")
        present = ~np.isnan(close)
        if np.any(close[present] <= 0) or not np.all(np.isfinite(close[present])):
            raise IngestError("panel holds a non-positive close")
        cap_present = ~np.isnan(cap)
        if np.any(cap[cap_present] < 0):
            raise IngestError("panel holds a negative market cap")

    @classmethod
    def empty(cls) -> "PricePanel":
        return cls((), (), np.zeros((0, 0)), np.zeros((0, 0)))

    @classmethod
    def from_records(
        cls,
        records: Iterable[PriceRecord],
        span: tuple[dt.date, dt.date] | None = None,
        coins: Sequence[str] | None = None,
    ) -> "PricePanel":
        """Assemble a panel. Coins are sorted unless given; the span defaults to the records' extent."""
        records = list(records)
        seen: set[tuple[str, dt.date]] = set()
        for rec in records:
            key = (rec.coin_id, rec.date)
            if key in seen:
                raise IngestError(f"duplicate record for {rec.coin_id} on {rec.date}")
            seen.add(key)
        if coins is None:
            coins = sorted({r.coin_id for r in records})
        if span is None:
            if not records:
                return cls((), (), np.zeros((len(coins), 0)), np.zeros((len(coins), 0))) if coins else cls.empty()
            span = (min(r.date for r in records), max(r.date for r in records))
        start, end = span
        n_days = (end - start).days + 1
        if n_days < 0:
            raise IngestError(f"empty date span {start}..{end}")
        dates = tuple(start + dt.timedelta(days=i) for i in range(n_days))
        idx = {c: i for i, c in enumerate(coins)}
        close = np.full((len(coins), n_days), np.nan)
        cap = np.full((len(coins), n_days), np.nan)
        for rec in records:
            if rec.coin_id not in idx:
                continue
            d = (rec.date - start).days
            if 0 <= d < n_days:
                close[idx[rec.coin_id], d] = rec.close
                cap[idx[rec.coin_id], d] = rec.market_cap
        return cls(tuple(coins), dates, close, cap)

    @property
    def shape(self) -> tuple[int, int]:
        return self.close.shape

    def coin_index(self, coin_id: str) -> int:
        return self.coins.index(coin_id)

    def records(self) -> Iterator[PriceRecord]:
        """Present cells in (date, coin) order."""
        for j, day in enumerate(self.dates):
            for i, coin in enumerate(self.coins):
                c = self.close[i, j]
                if not math.isnan(c):
                    yield PriceRecord(coin, day, float(c), float(self.market_cap[i, j]))

    def equals(self, other: "PricePanel") -> bool:
        """Bit-exact equality, treating NaN cells as equal."""
        return (
            self.coins == other.coins
            and self.dates == other.dates
            and np.array_equal(self.close, other.close, equal_nan=True)
            and np.array_equal(self.market_cap, other.market_cap, equal_nan=True)
        )


@dataclass(frozen=True)
class ValidationReport:
    coverage: dict[str, float]
    missing_cells: int
    span: tuple[dt.date, dt.date] | None
    n_coins: int = 0
    n_dates: int = 0

    def worst(self, n: int = 5) -> list[tuple[str, float]]:
        return sorted(self.coverage.items(), key=lambda kv: (kv[1], kv[0]))[:n]


def _parse_float(text: str, what: str, line: int, path: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise IngestError(f"unparseable {what} {text!r}", line, path) from None


def parse_csv(path: str | Path) -> PricePanel:
    """Read a ``date,coin_id,close,market_cap`` file into a panel.

    The panel spans the file's min to max date; unseen (coin, date) cells are
    missing. An empty ``market_cap`` field is a missing cap.
    """
    path = Path(path)
    spath = str(path)
    records = []
    seen: dict[tuple[str, dt.date], int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("missing header row", 1, spath) from None
        if tuple(h.strip() for h in header) != HEADER:
            raise IngestError(f"header must be {','.join(HEADER)}, got {','.join(header)}", 1, spath)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 4:
                raise IngestError(f"expected 4 fields, got {len(row)}", line, spath)
            d_txt, coin, c_txt, m_txt = (f.strip() for f in row)
            try:
                day = dt.date.fromisoformat(d_txt)
            except ValueError:
                raise IngestError(f"unparseable date {d_txt!r}", line, spath) from None
            if not coin:
                raise IngestError("empty coin_id", line, spath)
            close = _parse_float(c_txt, "close", line, spath)
            if not (math.isfinite(close) and close > 0):
                raise IngestError(f"non-positive close {c_txt!r} (close must be > 0)", line, spath)
            cap = math.nan if m_txt == "" else _parse_float(m_txt, "market_cap", line, spath)
            if not math.isnan(cap) and not (math.isfinite(cap) and cap >= 0):
                raise IngestError(f"negative market_cap {m_txt!r} (market_cap must be >= 0)", line, spath)
            key = (coin, day)
            if key in seen:
                raise IngestError(f"duplicate (coin, date) {coin} {day}, first seen on line {seen[key]}", line, spath)
            seen[key] = line
            records.append(PriceRecord(coin, day, close, cap))
    return PricePanel.from_records(records)


def write_csv(panel: PricePanel, path: str | Path) -> None:
    """Write present cells; floats use repr so parse_csv round-trips bit-exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for rec in panel.records():
            cap = "" if math.isnan(rec.market_cap) else repr(rec.market_cap)
            w.writerow([rec.date.isoformat(), rec.coin_id, repr(rec.close), cap])


def validate_panel(panel: PricePanel) -> ValidationReport:
    n_coins, n_dates = panel.shape
    if n_coins == 0 or n_dates == 0:
        return ValidationReport({}, 0, None, n_coins, n_dates)
    present = ~np.isnan(panel.close)
    coverage = {c: float(present[i].sum()) / n_dates for i, c in enumerate(panel.coins)}
    return ValidationReport(
        coverage=coverage,
        missing_cells=int((~present).sum()),
        span=(panel.dates[0], panel.dates[-1]),
        n_coins=n_coins,
        n_dates=n_dates,
    )


# --- remote -----------------------------------------------------------------


@dataclass(frozen=True)
class RemoteConfig:
    """Where and how to query the aggregator.

    ``path`` may contain ``{coin_id}``. The response must be a JSON object
    holding two lists of ``[timestamp, value]`` pairs named by
    ``prices_field`` and ``caps_field``.
    """

    base_url: str = "http://127.0.0.1:8000"
    path: str = "/coins/{coin_id}/market_chart/range"
    start_param: str = "from"
    end_param: str = "to"
    time_format: str = "unix"  # unix | unix_ms | iso
    response_time_unit: str = "ms"  # ms | s | iso
    prices_field: str = "prices"
    caps_field: str = "market_caps"
    extra_params: dict[str, str] = field(default_factory=dict)
    requests_per_minute: float = 30.0
    max_retries: int = 3
    backoff_seconds: float = 1.0
    timeout_seconds: float = 30.0


class Transport(Protocol):
    def get(self, url: str, params: dict[str, str], timeout: float) -> tuple[int, object]:
        """Return (status code, decoded JSON body or None)."""


class RequestsTransport:
    def __init__(self):
        import requests

        self._session = requests.Session()

    def get(self, url, params, timeout):
        import requests

        try:
            resp = self._session.get(url, params=params, timeout=timeout)
        except requests.RequestException as exc:
            raise ConnectionError(str(exc)) from exc
        try:
            body = resp.json()
        except ValueError:
            body = None
        return resp.status_code, body


class RateLimiter:
    """Space request starts at least ``60 / requests_per_minute`` seconds apart."""

    def __init__(
        self,
        requests_per_minute: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if requests_per_minute <= 0:
            raise ValueError("requests_per_minute must be positive")
        self.interval = 60.0 / requests_per_minute
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next = None

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            if self._next is not None and now < self._next:
                self._sleep(self._next - now)
                now = self._next
            self._next = now + self.interval


def _to_param(day: dt.date, fmt: str, end: bool) -> str:
    moment = dt.datetime.combine(day, dt.time(23, 59, 59) if end else dt.time(0), tzinfo=dt.timezone.utc)
    if fmt == "unix":
        return str(int(moment.timestamp()))
    if fmt == "unix_ms":
        return str(int(moment.timestamp()) * 1000)
    if fmt == "iso":
        return day.isoformat()
    raise ValueError(f"unknown time_format {fmt!r}")


def _to_date(stamp, unit: str) -> dt.date:
    if unit == "iso":
        return dt.date.fromisoformat(str(stamp)[:10])
    seconds = float(stamp) / (1000.0 if unit == "ms" else 1.0)
    return dt.datetime.fromtimestamp(seconds, tz=dt.timezone.utc).date()


class MarketDataClient:
    """Per-coin HTTP client with bounded retries and a shared rate limit."""

    def __init__(self, config: RemoteConfig, transport: Transport | None = None, limiter: RateLimiter | None = None):
        self.config = config
        self.transport = transport if transport is not None else RequestsTransport()
        self.limiter = limiter if limiter is not None else RateLimiter(config.requests_per_minute)
        self.requests_made = 0
        self._count_lock = threading.Lock()

    def fetch_coin(self, coin_id: str, start: dt.date, end: dt.date) -> list[PriceRecord]:
        cfg = self.config
        url = cfg.base_url.rstrip("/") + cfg.path.format(coin_id=coin_id)
        params = dict(cfg.extra_params)
        params[cfg.start_param] = _to_param(start, cfg.time_format, end=False)
        params[cfg.end_param] = _to_param(end, cfg.time_format, end=True)
        last = "no attempt made"
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                time.sleep(cfg.backoff_seconds * 2 ** (attempt - 1))
            self.limiter.acquire()
            with self._count_lock:
                self.requests_made += 1
            try:
                status, body = self.transport.get(url, params, cfg.timeout_seconds)
            except ConnectionError as exc:
                last = f"connection error: {exc}"
                continue
            if status == 404:
                raise UnknownCoinError(coin_id, "unknown to the aggregator (HTTP 404)")
            if status == 429 or status >= 500:
                last = f"HTTP {status}"
                continue
            if status != 200:
                raise FetchError(coin_id, f"HTTP {status}")
            return self._records(coin_id, body, start, end)
        raise FetchError(coin_id, f"giving up after {cfg.max_retries + 1} attempts ({last})")

    def _records(self, coin_id, body, start, end) -> list[PriceRecord]:
        cfg = self.config
        if not isinstance(body, dict) or cfg.prices_field not in body:
            raise FetchError(coin_id, f"response lacks the {cfg.prices_field!r} field")
        # several quotes on one day: keep the last one as that day's close
        closes: dict[dt.date, float] = {}
        for stamp, value in body[cfg.prices_field]:
            if value is None:
                continue
            closes[_to_date(stamp, cfg.response_time_unit)] = float(value)
        caps: dict[dt.date, float] = {}
        for stamp, value in body.get(cfg.caps_field) or []:
            if value is None:
                continue
            caps[_to_date(stamp, cfg.response_time_unit)] = float(value)
        out = []
        for day in sorted(closes):
            if start <= day <= end and closes[day] > 0:
                out.append(PriceRecord(coin_id, day, closes[day], caps.get(day, math.nan)))
        return out


def _cache_path(cache_dir: Path, coin_id: str) -> Path:
    if "/" in coin_id or "\\" in coin_id or coin_id in (".", ".."):
        raise CacheError(f"coin id {coin_id!r} is not usable as a cache file name")
    return cache_dir / f"{coin_id}.csv"


def _write_coin_cache(path: Path, records: list[PriceRecord]) -> None:
    tmp = path.with_suffix(".csv.tmp")
    try:
        with tmp.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HEADER)
            for rec in records:
                cap = "" if math.isnan(rec.market_cap) else repr(rec.market_cap)
                w.writerow([rec.date.isoformat(), rec.coin_id, repr(rec.close), cap])
        tmp.replace(path)
    except OSError as exc:
        raise CacheError(f"cannot write cache file {path}: {exc}") from exc


def fetch_remote(
    coin_ids: Sequence[str],
    date_range: tuple[dt.date, dt.date],
    cache_dir: str | Path,
    client: MarketDataClient | None = None,
    config: RemoteConfig | None = None,
    jobs: int = 1,
) -> PricePanel:
    """Fetch (or load from cache) each coin and assemble a panel over ``date_range``.

    Coins with a cache file are read from disk and never requested. Fetches
    run on up to ``jobs`` threads sharing the client's rate limiter.
    """
    if not coin_ids:
        return PricePanel.empty()
    start, end = date_range
    cache_dir = Path(cache_dir)
    try:
        cache_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CacheError(f"cannot create cache directory {cache_dir}: {exc}") from exc

    cold = [c for c in coin_ids if not _cache_path(cache_dir, c).exists()]
    if cold:
        if client is None:
            client = MarketDataClient(config or RemoteConfig())

        def one(coin):
            recs = client.fetch_coin(coin, start, end)
            _write_coin_cache(_cache_path(cache_dir, coin), recs)
            log.info("fetched %s: %d days", coin, len(recs))

        if jobs > 1 and len(cold) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                list(pool.map(one, cold))
        else:
            for coin in cold:
                one(coin)

    records = []
    for coin in coin_ids:
        path = _cache_path(cache_dir, coin)
        if path.stat().st_size > 0:
            cached = parse_csv(path)
            records.extend(r for r in cached.records() if start <= r.date <= end)
    return PricePanel.from_records(records, span=(start, end), coins=list(coin_ids))
