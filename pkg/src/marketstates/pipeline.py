"""Stage-by-stage pipeline with file outputs, content-hash skipping and a run manifest.

Stages talk to each other only through files under the output directory, so
a stage re-run from cached upstream files produces the same bytes as a
fresh run. Each stage records a fingerprint (its parameters plus the
SHA-256 of every input file) and the hashes of its outputs in
``stages/<name>.json``; it is skipped when both still match.
"""
from __future__ import annotations

import configparser
import dataclasses
import datetime as dt
import hashlib
import json
import logging
import shutil
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from . import clustering as cl
from . import correlation as cr
from . import ingest
from . import kernel as kn
from . import network as nw
from . import timeseries as ts
from .io import read_matrix_csv, read_rows, write_matrix_csv, write_rows

log = logging.getLogger(__name__)

STAGES = ("ingest", "returns", "correlate", "network", "kernel", "cluster", "report")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


@dataclass
class PipelineConfig:
    # data source
    source: str = "csv"  # csv | remote
    csv: str | None = None
    coins: tuple[str, ...] = ()
    cache_dir: str = "cache"
    start: dt.date | None = None
    end: dt.date | None = None
    labels: str | None = None  # optional planted labels (epoch_index,regime) for ARI
    # method parameters
    epoch_length: int = 20
    top_k: int = 40
    norm_window: int = 13
    min_periods: int = ts.MIN_PERIODS
    power_q: float = 1.5
    alpha: float = 0.05
    null: str = "student"
    wl_iterations: int = 3
    uniform_labels: bool = False
    k: int | None = None
    k_max: int = 10
    neighbors: int = 10  # 0 = fully connected affinity
    seed: int = 0
    restarts: int = 50
    out: str = "out"
    # remote aggregator
    remote_base_url: str = "http://127.0.0.1:8000"
    remote_path: str = "/coins/{coin_id}/market_chart/range"
    remote_start_param: str = "from"
    remote_end_param: str = "to"
    remote_time_format: str = "unix"
    remote_response_time_unit: str = "ms"
    remote_prices_field: str = "prices"
    remote_caps_field: str = "market_caps"
    remote_extra_params: dict = field(default_factory=dict)
    remote_requests_per_minute: float = 30.0
    remote_max_retries: int = 3

    def validate(self) -> None:
        if self.source not in ("csv", "remote"):
            raise ConfigError("source must be 'csv' or 'remote'")
        if self.source == "csv" and not self.csv:
            raise ConfigError("a csv path is required when source = csv")
        if self.source == "remote" and not self.coins:
            raise ConfigError("coins are required when source = remote")
        if self.source == "remote" and (self.start is None or self.end is None):
            raise ConfigError("start and end are required when source = remote")
        if self.epoch_length < 4:
            raise ConfigError("epoch_length must be >= 4 (the white-noise null needs T >= 4)")
        if self.top_k < 2:
            raise ConfigError("top_k must be >= 2")
        if self.norm_window < 2:
            raise ConfigError("norm_window must be >= 2")
        if not 1 <= self.min_periods <= self.norm_window:
            raise ConfigError("min_periods must lie in [1, norm_window]")
        if self.power_q <= 0:
            raise ConfigError("power_q must be positive")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.null not in nw.NULL_METHODS:
            raise ConfigError(f"null must be one of {nw.NULL_METHODS}")
        if self.wl_iterations < 0:
            raise ConfigError("wl_iterations must be >= 0")
        if self.k_max < 2:
            raise ConfigError("k_max must be >= 2")
        if self.k is not None and self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.neighbors < 0:
            raise ConfigError("neighbors must be >= 0")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")

    def remote_config(self) -> ingest.RemoteConfig:
        return ingest.RemoteConfig(
            base_url=self.remote_base_url,
            path=self.remote_path,
            start_param=self.remote_start_param,
            end_param=self.remote_end_param,
            time_format=self.remote_time_format,
            response_time_unit=self.remote_response_time_unit,
            prices_field=self.remote_prices_field,
            caps_field=self.remote_caps_field,
            extra_params=dict(self.remote_extra_params),
            requests_per_minute=self.remote_requests_per_minute,
            max_retries=self.remote_max_retries,
        )

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("start", "end"):
            if d[key] is not None:
                d[key] = d[key].isoformat()
        d["coins"] = list(d["coins"])
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}
_ALIASES = {"t": "epoch_length", "k_top": "top_k", "n": "norm_window", "q": "power_q", "h": "wl_iterations"}


def coerce(key: str, value):
    """Convert a string (from a config file or flag) to the field's type."""
    key = key.strip().lower().replace("-", "_")
    key = _ALIASES.get(key, key)
    if key not in _FIELDS:
        raise ConfigError(f"unknown configuration key {key!r}")
    if not isinstance(value, str):
        return key, value
    text = value.strip()
    if key in ("start", "end"):
        return key, dt.date.fromisoformat(text) if text else None
    if key == "coins":
        return key, tuple(c.strip() for c in text.replace("\n", ",").split(",") if c.strip())
    if key == "remote_extra_params":
        pairs = [p for p in text.split(";") if p.strip()]
        return key, dict(p.split("=", 1) for p in pairs)
    if key in ("csv", "labels"):
        return key, text or None
    if key == "k":
        return key, None if text.lower() in ("", "none", "auto") else int(text)
    default = _FIELDS[key].default
    try:
        if isinstance(default, bool):
            return key, text.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return key, int(text)
        if isinstance(default, float):
            return key, float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None
    return key, text


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Read ``key = value`` lines (``#`` comments allowed); ``overrides`` win."""
    values: dict = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        parser.optionxform = str
        text = Path(path).read_text(encoding="utf-8")
        parser.read_string("[pipeline]\n" + text)
        for key, value in parser.items("pipeline"):
            k, v = coerce(key, value)
            values[k] = v
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        k, v = coerce(key, value)
        values[k] = v
    cfg = PipelineConfig(**values)
    cfg.validate()
    return cfg


# --- hashing ----------------------------------------------------------------


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fingerprint(stage: str, params: dict, inputs: list[Path], root: Path) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({"stage": stage, "version": __version__, "params": params}, sort_keys=True).encode())
    for p in sorted(inputs, key=lambda x: str(x)):
        rel = str(p.relative_to(root)) if p.is_relative_to(root) else str(p)
        h.update(rel.encode())
        h.update(sha256_file(p).encode())
    return h.hexdigest()


def _dump_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# --- the pipeline -------------------------------------------------------------


@dataclass
class StageResult:
    name: str
    skipped: bool
    fingerprint: str


class Pipeline:
    def __init__(self, config: PipelineConfig, jobs: int = 1):
        config.validate()
        self.cfg = config
        self.jobs = max(1, int(jobs))
        self.root = Path(config.out)
        self.results: list[StageResult] = []

    # helpers

    def _map(self, fn: Callable, items: list) -> list:
        if self.jobs > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.jobs) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    def _stamp_path(self, stage: str) -> Path:
        return self.root / "stages" / f"{stage}.json"

    def _up_to_date(self, stage: str, fingerprint: str) -> bool:
        stamp = self._stamp_path(stage)
        if not stamp.exists():
            return False
        try:
            data = json.loads(stamp.read_text(encoding="utf-8"))
        except ValueError:
            return False
        if data.get("fingerprint") != fingerprint:
            return False
        for rel, digest in data.get("outputs", {}).items():
            p = self.root / rel
            if not p.exists() or sha256_file(p) != digest:
                return False
        return True

    def _run_stage(self, stage: str, params: dict, inputs: list[Path], outputs: list[str], body: Callable) -> StageResult:
        try:
            fp = _fingerprint(stage, params, inputs, self.root)
        except OSError as exc:
            raise StageError(stage, exc) from exc
        if self._up_to_date(stage, fp):
            log.info("stage %s: up to date, skipped", stage)
            res = StageResult(stage, True, fp)
            self.results.append(res)
            return res
        for rel in outputs:
            target = self.root / rel
            if target.is_dir():
                shutil.rmtree(target)
            elif target.exists():
                target.unlink()
        try:
            written = body()
        except Exception as exc:
            raise StageError(stage, exc) from exc
        hashes = {}
        for p in sorted(written, key=lambda x: str(x)):
            hashes[str(p.relative_to(self.root))] = sha256_file(p)
        _dump_json(self._stamp_path(stage), {"stage": stage, "fingerprint": fp, "params": params, "outputs": hashes})
        log.info("stage %s: wrote %d files", stage, len(hashes))
        res = StageResult(stage, False, fp)
        self.results.append(res)
        return res

    def run(self) -> dict:
        self.root.mkdir(parents=True, exist_ok=True)
        self.results = []
        if self.cfg.power_q > 1.5:
            warnings.warn(
                f"power_q={self.cfg.power_q} > 1.5: strong noise suppression can leave crash-period "
                "graphs empty, which breaks the graph kernel comparison",
                stacklevel=2,
            )
        self.stage_ingest()
        self.stage_returns()
        self.stage_correlate()
        self.stage_network()
        self.stage_kernel()
        self.stage_cluster()
        self.stage_report()
        return self.write_manifest()

    # stages

    def stage_ingest(self) -> StageResult:
        cfg = self.cfg
        panel_path = self.root / "data" / "panel.csv"
        params = {"source": cfg.source, "start": cfg.as_dict()["start"], "end": cfg.as_dict()["end"]}
        if cfg.source == "csv":
            inputs = [Path(cfg.csv)]
            params["csv"] = cfg.csv
        else:
            params.update(coins=list(cfg.coins), remote=dataclasses.asdict(cfg.remote_config()))
            # warm the cache first so the fingerprint covers the fetched bytes
            try:
                ingest.fetch_remote(list(cfg.coins), (cfg.start, cfg.end), cfg.cache_dir, config=cfg.remote_config(), jobs=self.jobs)
            except (ingest.FetchError, OSError, ValueError) as exc:
                raise StageError("ingest", exc) from exc
            inputs = [Path(cfg.cache_dir) / f"{c}.csv" for c in cfg.coins]

        def body():
            if cfg.source == "csv":
                panel = ingest.parse_csv(cfg.csv)
            else:
                panel = ingest.fetch_remote(list(cfg.coins), (cfg.start, cfg.end), cfg.cache_dir, config=cfg.remote_config())
            panel = _restrict(panel, cfg.start, cfg.end)
            ingest.write_csv(panel, panel_path)
            report = ingest.validate_panel(panel)
            vpath = self.root / "data" / "validation.json"
            _dump_json(
                vpath,
                {
                    "coins": report.n_coins,
                    "dates": report.n_dates,
                    "span": None if report.span is None else [d.isoformat() for d in report.span],
                    "missing_cells": report.missing_cells,
                    "coverage": report.coverage,
                },
            )
            return [panel_path, vpath]

        return self._run_stage("ingest", params, inputs, ["data"], body)

    def stage_returns(self) -> StageResult:
        cfg = self.cfg
        panel_path = self.root / "data" / "panel.csv"
        params = {"T": cfg.epoch_length, "K": cfg.top_k, "n": cfg.norm_window, "min_periods": cfg.min_periods}

        def body():
            panel = ingest.parse_csv(panel_path)
            raw = ts.log_returns(panel)
            normalized = [
                ts.local_normalize(r, cfg.norm_window, cfg.min_periods, on_degenerate="missing") for r in raw
            ]
            out = self.root / "returns"
            write_rows(out / "log_returns.csv", ["date", "coin_id", "value"], _series_rows(raw))
            write_rows(out / "normalized.csv", ["date", "coin_id", "value"], _series_rows(normalized))
            epochs = ts.slice_epochs(ts.normalized_dates(panel.dates[1:], cfg.min_periods), cfg.epoch_length)
            norm_map = {s.coin_id: s for s in normalized}
            epoch_rows, pf_rows = [], []
            for ep in epochs:
                try:
                    pf = ts.select_top_k(panel, ep, norm_map, cfg.top_k)
                except ts.InsufficientBreadthError as exc:
                    log.warning("%s", exc)
                    epoch_rows.append([ep.index, ep.start_date.isoformat(), ep.end_date.isoformat(), f"insufficient:{exc.eligible}"])
                    continue
                epoch_rows.append([ep.index, ep.start_date.isoformat(), ep.end_date.isoformat(), "ok"])
                for rank, (coin, cap) in enumerate(zip(pf.coin_ids, pf.ranking_stat)):
                    pf_rows.append([ep.index, rank, coin, float(cap)])
            write_rows(self.root / "epochs.csv", ["index", "start", "end", "status"], epoch_rows)
            write_rows(self.root / "portfolios.csv", ["epoch_index", "rank", "coin_id", "mean_market_cap"], pf_rows)
            return [out / "log_returns.csv", out / "normalized.csv", self.root / "epochs.csv", self.root / "portfolios.csv"]

        return self._run_stage("returns", params, [panel_path], ["returns", "epochs.csv", "portfolios.csv"], body)

    def _epochs(self) -> tuple[list[ts.Epoch], dict[int, ts.Epoch]]:
        rows = read_rows(self.root / "epochs.csv")
        eps = [
            ts.Epoch(int(r["index"]), dt.date.fromisoformat(r["start"]), dt.date.fromisoformat(r["end"]), self.cfg.epoch_length)
            for r in rows
            if r["status"] == "ok"
        ]
        return eps, {e.index: e for e in eps}

    def _portfolios(self) -> list[ts.Portfolio]:
        _, by_index = self._epochs()
        members: dict[int, list] = {}
        for r in read_rows(self.root / "portfolios.csv"):
            members.setdefault(int(r["epoch_index"]), []).append((int(r["rank"]), r["coin_id"], float(r["mean_market_cap"])))
        out = []
        for idx in sorted(members):
            rows = sorted(members[idx])
            out.append(ts.Portfolio(by_index[idx], tuple(c for _, c, _ in rows), tuple(v for _, _, v in rows)))
        return out

    def stage_correlate(self) -> StageResult:
        cfg = self.cfg
        inputs = [self.root / p for p in ("returns/normalized.csv", "returns/log_returns.csv", "epochs.csv", "portfolios.csv")]
        params = {"q": cfg.power_q}

        def body():
            normalized = _read_series(self.root / "returns" / "normalized.csv")
            raw = _read_series(self.root / "returns" / "log_returns.csv")
            portfolios = self._portfolios()

            def one(pf):
                C = cr.pearson_matrix(pf, normalized)
                return pf, C, cr.power_map(C, cfg.power_q), cr.epoch_stats(pf, raw, C)

            written, stat_rows = [], []
            for pf, C, P, st in self._map(one, portfolios):
                i = pf.epoch.index
                p1 = self.root / "correlations" / f"epoch_{i}.csv"
                p2 = self.root / "correlations" / "powermap" / f"epoch_{i}.csv"
                write_matrix_csv(p1, C.coin_ids, C.values)
                write_matrix_csv(p2, P.coin_ids, P.values)
                written += [p1, p2]
                stat_rows.append([i, pf.epoch.start_date.isoformat(), pf.epoch.end_date.isoformat(), st.mean_return, st.mean_correlation])
            sp = self.root / "correlations" / "stats.csv"
            write_rows(sp, ["epoch_index", "start", "end", "mean_return", "mean_correlation"], stat_rows)
            return written + [sp]

        return self._run_stage("correlate", params, inputs, ["correlations"], body)

    def _raw_matrices(self) -> dict[int, cr.CorrelationMatrix]:
        eps, _ = self._epochs()
        out = {}
        for ep in eps:
            path = self.root / "correlations" / f"epoch_{ep.index}.csv"
            if path.exists():
                header, values = read_matrix_csv(path)
                out[ep.index] = cr.CorrelationMatrix(ep, tuple(header), values, 1.0)
        return out

    def stage_network(self) -> StageResult:
        cfg = self.cfg
        inputs = sorted((self.root / "correlations").glob("epoch_*.csv")) + [self.root / "epochs.csv"]
        params = {"alpha": cfg.alpha, "null": cfg.null, "uniform_labels": cfg.uniform_labels}

        def body():
            mats = self._raw_matrices()
            graphs = self._map(
                lambda i: nw.build_graph(mats[i], cfg.alpha, method=cfg.null, uniform_labels=cfg.uniform_labels),
                sorted(mats),
            )
            written, rows = [], []
            for g in graphs:
                stem = f"epoch_{g.epoch.index}"
                g.write(self.root / "graphs", stem)
                written += [self.root / "graphs" / f"{stem}.json", self.root / "graphs" / f"{stem}.dot"]
                m = nw.graph_metrics(g)
                rows.append([g.epoch.index, m.n_edges, m.density, m.clustering])
            mp = self.root / "graphs" / "metrics.csv"
            write_rows(mp, ["epoch_index", "edges", "density", "clustering"], rows)
            return written + [mp]

        return self._run_stage("network", params, inputs, ["graphs"], body)

    def _graphs(self) -> list[nw.MarketGraph]:
        eps, by_index = self._epochs()
        out = []
        for ep in eps:
            path = self.root / "graphs" / f"epoch_{ep.index}.json"
            if path.exists():
                out.append(nw.MarketGraph.from_json(json.loads(path.read_text(encoding="utf-8")), ep))
        return out

    def stage_kernel(self) -> StageResult:
        cfg = self.cfg
        inputs = sorted((self.root / "graphs").glob("epoch_*.json"))
        params = {"h": cfg.wl_iterations}

        def body():
            graphs = self._graphs()
            ids = [g.epoch.index for g in graphs]
            labeled = [kn.LabeledGraph.from_market_graph(g) for g in graphs]
            K = kn.kernel_matrix(labeled, cfg.wl_iterations, normalize=True, epoch_ids=ids)
            K_raw = kn.kernel_matrix(labeled, cfg.wl_iterations, normalize=False, epoch_ids=ids)
            D = kn.kernel_distance(K)
            out = self.root / "kernel"
            write_matrix_csv(out / "kernel_matrix.csv", ids, K.values)
            write_matrix_csv(out / "kernel_matrix_raw.csv", ids, K_raw.values)
            write_matrix_csv(out / "distance_matrix.csv", ids, D.values)
            return [out / "kernel_matrix.csv", out / "kernel_matrix_raw.csv", out / "distance_matrix.csv"]

        return self._run_stage("kernel", params, inputs, ["kernel"], body)

    def stage_cluster(self) -> StageResult:
        cfg = self.cfg
        inputs = [self.root / "kernel" / "kernel_matrix.csv", self.root / "kernel" / "distance_matrix.csv", self.root / "epochs.csv"]
        inputs += sorted((self.root / "correlations").glob("epoch_*.csv"))
        cluster_seed = cl.stream_seed(cfg.seed, "cluster")
        params = {
            "k": cfg.k,
            "k_max": cfg.k_max,
            "neighbors": cfg.neighbors,
            "seed": cluster_seed,
            "restarts": cfg.restarts,
        }

        def body():
            header, Kv = read_matrix_csv(self.root / "kernel" / "kernel_matrix.csv")
            _, Dv = read_matrix_csv(self.root / "kernel" / "distance_matrix.csv")
            ids = tuple(int(h) for h in header)
            m = len(ids)
            nn = cfg.neighbors or None
            w, _ = cl.laplacian_spectrum(Kv, nn)
            k_max = min(cfg.k_max, m - 1)
            chosen = cfg.k if cfg.k is not None else cl.eigengap_from_eigenvalues(w, k_max)
            if chosen > m:
                raise cl.ClusteringError(f"k={chosen} exceeds the number of epochs ({m})")
            if chosen == 1:
                state = cl.StateAssignment(ids, np.zeros(m, dtype=np.int64), 1, (), 0.0)
                state = cl.with_medoids(state, Dv)
            else:
                if chosen >= m:
                    raise cl.ClusteringError(f"k={chosen} needs more than {m} epochs")
                emb = cl.spectral_embed(Kv, chosen, nn, epoch_ids=ids)
                state = cl.kmeans(emb.coordinates, chosen, cluster_seed, cfg.restarts, ids, Dv, jobs=self.jobs)
            _, by_index = self._epochs()
            out = self.root / "states"
            rows = [[e, by_index[e].start_date.isoformat(), by_index[e].end_date.isoformat(), int(s)] for e, s in zip(ids, state.state)]
            write_rows(out / "assignments.csv", ["epoch_index", "start_date", "end_date", "state"], rows)
            gaps = np.append(np.diff(w), np.nan)
            write_rows(out / "eigenvalues.csv", ["index", "eigenvalue", "gap_to_next"], [[i + 1, float(v), float(g)] for i, (v, g) in enumerate(zip(w, gaps))])
            written = [out / "assignments.csv", out / "eigenvalues.csv"]
            mats = self._raw_matrices()
            for s, med in enumerate(state.medoid):
                p = out / f"state_{s}_medoid_matrix.csv"
                write_matrix_csv(p, mats[med].coin_ids, mats[med].values)
                written.append(p)
            meta = out / "clustering.json"
            _dump_json(
                meta,
                {
                    "k": chosen,
                    "k_source": "override" if cfg.k is not None else "eigengap",
                    "inertia": state.inertia,
                    "medoids": list(state.medoid),
                    "sizes": state.sizes(),
                    "seed": cluster_seed,
                },
            )
            return written + [meta]

        return self._run_stage("cluster", params, inputs, ["states"], body)

    def stage_report(self) -> StageResult:
        cfg = self.cfg
        inputs = [
            self.root / "correlations" / "stats.csv",
            self.root / "graphs" / "metrics.csv",
            self.root / "states" / "assignments.csv",
            self.root / "states" / "clustering.json",
            self.root / "epochs.csv",
        ]
        if cfg.labels:
            inputs.append(Path(cfg.labels))
        params = {"labels": cfg.labels}

        def body():
            stats = {int(r["epoch_index"]): r for r in read_rows(self.root / "correlations" / "stats.csv")}
            metrics = {int(r["epoch_index"]): r for r in read_rows(self.root / "graphs" / "metrics.csv")}
            assign = {int(r["epoch_index"]): int(r["state"]) for r in read_rows(self.root / "states" / "assignments.csv")}
            meta = json.loads((self.root / "states" / "clustering.json").read_text(encoding="utf-8"))
            skipped = [
                {"index": int(r["index"]), "status": r["status"]}
                for r in read_rows(self.root / "epochs.csv")
                if r["status"] != "ok"
            ]
            epochs = []
            for i in sorted(stats):
                s, g = stats[i], metrics.get(i, {})
                epochs.append(
                    {
                        "index": i,
                        "start": s["start"],
                        "end": s["end"],
                        "mean_return": float(s["mean_return"]),
                        "mean_correlation": float(s["mean_correlation"]),
                        "edges": int(g["edges"]) if g else None,
                        "density": float(g["density"]) if g else None,
                        "clustering": float(g["clustering"]) if g else None,
                        "state": assign.get(i),
                    }
                )
            states = []
            for st in range(meta["k"]):
                members = [e["index"] for e in epochs if e["state"] == st]
                states.append(
                    {
                        "state": st,
                        "size": len(members),
                        "medoid": meta["medoids"][st],
                        "mean_correlation": float(np.mean([float(stats[e]["mean_correlation"]) for e in members])),
                        "members": members,
                    }
                )
            summary = {
                "k": meta["k"],
                "k_source": meta["k_source"],
                "n_epochs": len(epochs),
                "skipped_epochs": skipped,
                "state_sizes": meta["sizes"],
                "medoids": meta["medoids"],
                "states": states,
                "epochs": epochs,
                "mean_return_vs_correlation": _corr([e["mean_return"] for e in epochs], [e["mean_correlation"] for e in epochs]),
            }
            if cfg.labels:
                planted = {int(r["epoch_index"]): int(r["regime"]) for r in read_rows(cfg.labels)}
                common = [e["index"] for e in epochs if e["index"] in planted and e["state"] is not None]
                summary["ari"] = cl.adjusted_rand_index([planted[i] for i in common], [assign[i] for i in common])
            path = self.root / "report" / "summary.json"
            _dump_json(path, summary)
            return [path]

        return self._run_stage("report", params, inputs, ["report"], body)

    def write_manifest(self) -> dict:
        cfg = self.cfg
        params = cfg.as_dict()
        del params["out"]  # output trees must not depend on where they were written
        inputs = {}
        if cfg.source == "csv":
            inputs[cfg.csv] = sha256_file(Path(cfg.csv))
        else:
            for c in cfg.coins:
                p = Path(cfg.cache_dir) / f"{c}.csv"
                inputs[str(p)] = sha256_file(p)
        if cfg.labels:
            inputs[cfg.labels] = sha256_file(Path(cfg.labels))
        manifest = {
            "version": __version__,
            "parameters": params,
            "seeds": {"config": cfg.seed, "cluster": cl.stream_seed(cfg.seed, "cluster")},
            "inputs": inputs,
            "stages": {r.name: r.fingerprint for r in self.results},
        }
        _dump_json(self.root / "manifest.json", manifest)
        return manifest


def _restrict(panel: ingest.PricePanel, start, end) -> ingest.PricePanel:
    if not panel.dates or (start is None and end is None):
        return panel
    lo = 0 if start is None else max(0, (start - panel.dates[0]).days)
    hi = len(panel.dates) if end is None else min(len(panel.dates), (end - panel.dates[0]).days + 1)
    if hi <= lo:
        raise ConfigError(f"date range {start}..{end} does not overlap the data")
    return ingest.PricePanel(panel.coins, panel.dates[lo:hi], panel.close[:, lo:hi], panel.market_cap[:, lo:hi])


def _series_rows(series: list[ts.ReturnSeries]):
    rows = []
    for s in series:
        for d, v in zip(s.dates, s.values):
            if np.isfinite(v):
                rows.append((d, s.coin_id, float(v)))
    rows.sort(key=lambda r: (r[0], r[1]))
    return ([d.isoformat(), c, v] for d, c, v in rows)


def _read_series(path: Path) -> dict[str, ts.ReturnSeries]:
    acc: dict[str, tuple[list, list]] = {}
    for r in read_rows(path):
        dates, vals = acc.setdefault(r["coin_id"], ([], []))
        dates.append(dt.date.fromisoformat(r["date"]))
        vals.append(float(r["value"]))
    return {c: ts.ReturnSeries(c, tuple(d), np.array(v)) for c, (d, v) in acc.items()}


def _corr(a: list[float], b: list[float]) -> float | None:
    if len(a) < 2:
        return None
    a_, b_ = np.asarray(a), np.asarray(b)
    if a_.std() == 0 or b_.std() == 0:
        return None
    return float(np.corrcoef(a_, b_)[0, 1])
