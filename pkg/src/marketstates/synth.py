"""Synthetic price panels with planted, epoch-switching correlation regimes."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ingest import PricePanel


class RegimeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RegimeSpec:
    """A block correlation structure and the epochs it governs.

    ``blocks`` partitions coin indices 0..K-1; singletons are allowed.
    Coins sharing a block correlate at ``rho_in``, all other pairs at
    ``rho_out``. ``drift`` is the mean daily log-return under the regime.
    """

    regime_id: int
    blocks: tuple[tuple[int, ...], ...]
    rho_in: float
    rho_out: float
    epochs: tuple[int, ...]
    drift: float = 0.0

    def __post_init__(self):
        blocks = tuple(tuple(sorted(int(i) for i in b)) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "epochs", tuple(int(e) for e in self.epochs))
        flat = sorted(i for b in blocks for i in b)
        if flat != list(range(len(flat))):
            raise RegimeError(f"regime {self.regime_id}: blocks must partition 0..K-1")
        if not 0.0 <= self.rho_in < 1.0:
            raise RegimeError(f"regime {self.regime_id}: rho_in must lie in [0, 1)")
        if not 0.0 <= self.rho_out <= self.rho_in:
            raise RegimeError(f"regime {self.regime_id}: rho_out must lie in [0, rho_in]")
        w = np.linalg.eigvalsh(self.correlation())
        if w[0] < -1e-10:
            raise RegimeError(f"regime {self.regime_id}: correlation matrix is not PSD (min eigenvalue {w[0]:.3g})")

    @classmethod
    def from_groups(cls, regime_id, K, groups, rho_in, rho_out, epochs, drift=0.0) -> "RegimeSpec":
        """Build from the non-trivial blocks only; remaining coins become singletons."""
        used = {i for g in groups for i in g}
        blocks = [tuple(g) for g in groups] + [(i,) for i in range(K) if i not in used]
        return cls(regime_id, tuple(blocks), rho_in, rho_out, tuple(epochs), drift)

    @property
    def n_coins(self) -> int:
        return sum(len(b) for b in self.blocks)

    def correlation(self) -> np.ndarray:
        K = self.n_coins
        C = np.full((K, K), self.rho_out)
        for b in self.blocks:
            if len(b) > 1:
                C[np.ix_(b, b)] = self.rho_in
        np.fill_diagonal(C, 1.0)
        return C


def planted_labels(specs: Sequence[RegimeSpec], epochs: int | None = None) -> list[int]:
    """Regime id of every epoch; the schedule must cover 0..epochs-1 exactly once."""
    owner: dict[int, int] = {}
    for spec in specs:
        for e in spec.epochs:
            if e in owner:
                raise RegimeError(f"epoch {e} is claimed by regimes {owner[e]} and {spec.regime_id}")
            owner[e] = spec.regime_id
    if epochs is None:
        epochs = max(owner) + 1 if owner else 0
    missing = [e for e in range(epochs) if e not in owner]
    if missing:
        raise RegimeError(f"no regime governs epoch {missing[0]}")
    extra = [e for e in owner if not 0 <= e < epochs]
    if extra:
        raise RegimeError(f"epoch {extra[0]} lies outside 0..{epochs - 1}")
    return [owner[e] for e in range(epochs)]


def cyclic_schedule(n_regimes: int, epochs: int) -> list[tuple[int, ...]]:
    return [tuple(range(r, epochs, n_regimes)) for r in range(n_regimes)]


def decoupling_regimes(
    K: int = 40,
    epochs: int = 103,
    n_regimes: int = 4,
    rho_in: float = 0.7,
    rho_out: float = 0.1,
) -> list[RegimeSpec]:
    """Cyclic regimes that differ in which coins move with the market.

    The coins are split into ``n_regimes`` equal groups. Under regime r,
    group r trades independently (singletons at ``rho_out``) while all the
    other coins form one block at ``rho_in``.
    """
    groups = np.array_split(np.arange(K), n_regimes)
    schedule = cyclic_schedule(n_regimes, epochs)
    specs = []
    for r in range(n_regimes):
        block = [int(i) for g, grp in enumerate(groups) if g != r for i in grp]
        specs.append(RegimeSpec.from_groups(r, K, [block], rho_in, rho_out, schedule[r]))
    return specs


def uniform_regime(regime_id: int, K: int, rho: float, epochs: Sequence[int], drift: float = 0.0) -> RegimeSpec:
    """Every pair of coins correlates at ``rho``."""
    return RegimeSpec(regime_id, (tuple(range(K)),), rho, 0.0, tuple(epochs), drift)


def coin_ids(K: int) -> list[str]:
    width = max(2, len(str(K - 1)))
    return [f"c{i:0{width}d}" for i in range(K)]


def _sqrt_factor(C: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(C)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def generate_panel(
    specs: Sequence[RegimeSpec],
    K: int,
    T: int,
    epochs: int,
    seed: int,
    warmup: int = 4,
    distribution: str = "gaussian",
    df: float = 4.0,
    daily_vol: float = 0.03,
    start: dt.date = dt.date(2017, 1, 1),
) -> PricePanel:
    """Draw returns epoch by epoch from the governing regime and integrate them into prices.

    The panel covers ``1 + warmup + T * epochs`` days: one base price, then
    ``warmup`` returns (drawn under epoch 0's regime) that the local
    normalisation consumes before the first epoch, then the epochs proper.
    Market caps are constant and strictly decreasing in coin index.
    """
    if distribution not in ("gaussian", "student"):
        raise ValueError("distribution must be 'gaussian' or 'student'")
    if distribution == "student" and df <= 2:
        raise ValueError("df must exceed 2")
    labels = planted_labels(specs, epochs)
    by_id = {s.regime_id: s for s in specs}
    for s in specs:
        if s.n_coins != K:
            raise RegimeError(f"regime {s.regime_id} partitions {s.n_coins} coins, expected {K}")
    factors = {rid: _sqrt_factor(s.correlation()) for rid, s in by_id.items()}
    rng = np.random.default_rng(seed)

    def draw(rid: int, n: int) -> np.ndarray:
        Z = rng.standard_normal((n, K)) @ factors[rid]
        if distribution == "student":
            scale = np.sqrt(rng.chisquare(df, size=(n, 1)) / df)
            Z = Z / scale * np.sqrt((df - 2.0) / df)
        return by_id[rid].drift + daily_vol * Z

    chunks = [draw(labels[0], warmup)] if warmup and epochs else []
    chunks += [draw(labels[e], T) for e in range(epochs)]
    R = np.vstack(chunks) if chunks else np.zeros((0, K))
    logp = np.vstack([np.zeros((1, K)), np.cumsum(R, axis=0)]) + np.log(100.0)
    close = np.exp(logp).T
    caps = np.repeat((1e9 * (K - np.arange(K)))[:, None], close.shape[1], axis=1)
    dates = tuple(start + dt.timedelta(days=i) for i in range(close.shape[1]))
    return PricePanel(tuple(coin_ids(K)), dates, close, caps)
