"""Config-driven runs: the main model comparison and the four ablation families.

Every family follows one protocol. Features, split and scaler come from the
training partition only. Deep models see train and validation windows, never
test ones. Each trained or fitted model is scored exactly once on a shared
set of (geography, target week) test keys held by :class:`HeldOutTest`.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .baselines import (
    DEFAULT_RIDGE,
    SarimaOrder,
    default_grid,
    linear_fit,
    one_step_predictions,
    order_search,
)
from .baselines.naive import MA_WINDOW
from .dataset import (
    DEFAULT_FRACTIONS,
    WARMUP_WEEKS,
    DatasetError,
    FeatureConfig,
    SplitIndex,
    build_features,
    chronological_split,
    fit_scaler,
    make_sequences,
)
from .eval_stats import MetricReport, compute_metrics, improvement_pct, paired_t_test
from .ingest import PanelSeries, load_panel
from .nn.model import DEFAULT_HIDDEN, VARIANTS, ModelSpec, count_parameters
from .nn.train import TrainConfig, TrainedModel, save_checkpoint, train
from .synth import SynthConfig, generate_panel

log = logging.getLogger(__name__)

BASELINE_MODELS = ("seasonal_naive", "moving_average", "linear", "sarima")
ALL_MODELS = BASELINE_MODELS + VARIANTS
FAMILIES = ("main", "history", "seqlen", "feature", "architecture")
SEASON = 52


class ConfigError(ValueError):
    def __init__(self, message: str, keys: list[str] | None = None) -> None:
        self.keys = keys or []
        super().__init__(message + (f": {', '.join(self.keys)}" if self.keys else ""))


class ProtocolError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration


DEFAULT_SECTIONS: dict[str, dict] = {
    "data": {"panel": None, "grain": "region", "synth": None},
    "features": {"profile": "compact"},
    "split": {"fractions": list(DEFAULT_FRACTIONS)},
    "train": {k: v for k, v in TrainConfig().to_dict().items() if k != "seed"},
    "models": {
        "list": ["seasonal_naive", "moving_average", "linear", "sarima", "lstm_attention", "bilstm"],
        "lookback": 30,
        "hidden": {},
        "dense": 32,
        "ma_window": MA_WINDOW,
        "ridge": DEFAULT_RIDGE,
        "sarima_grid": None,
        "season": SEASON,
    },
    "ablations": {
        "variant": "bilstm",
        "history_spans": ["full", 20, 10, 5],
        "weeks_per_year": 52,
        "sequence_lengths": [20, 30, 40],
        "seqlen_baseline": 30,
        "feature_groups": ["lag", "rolling", "temporal", "casualty", "geography"],
        "noise_floor_seeds": 5,
        "architectures": ["uni_lstm", "lstm_attention", "bilstm"],
        "architecture_baseline": "bilstm",
    },
}
FEATURE_KEYS = {"profile", "groups", "lag_set", "rolling_windows", "temporal_style", "geography_encoding"}


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=dict)
    features: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)
    ablations: dict = field(default_factory=dict)
    seed: int = 42

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        """Merge ``doc`` over the defaults and validate every key and value."""
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        offending = sorted(set(doc) - set(DEFAULT_SECTIONS) - {"seed"})
        resolved = copy.deepcopy(DEFAULT_SECTIONS)
        for section, defaults in resolved.items():
            given = doc.get(section, {})
            if not isinstance(given, dict):
                offending.append(section)
                continue
            allowed = FEATURE_KEYS if section == "features" else set(defaults)
            offending += [f"{section}.{k}" for k in sorted(set(given) - allowed)]
            defaults.update(given)
        if offending:
            raise ConfigError("unknown or malformed config keys", offending)
        seed = doc.get("seed", 42)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("invalid values", ["seed"])
        cfg = cls(seed=seed, **resolved)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON ({exc})") from None
        return cls.from_dict(doc)

    def validate(self) -> None:
        bad: list[str] = []
        d = self.data
        if (d.get("panel") is None) == (d.get("synth") is None):
            bad.append("data.panel|data.synth (exactly one is required)")
        if d.get("grain") not in ("region", "country"):
            bad.append("data.grain")
        if d.get("synth") is not None:
            try:
                SynthConfig.from_dict(d["synth"])
            except (ValueError, TypeError):
                bad.append("data.synth")
        try:
            self.feature_config()
        except (DatasetError, TypeError, ValueError):
            bad.append("features")
        fr = self.split.get("fractions")
        if not (isinstance(fr, list) and len(fr) == 3 and all(isinstance(v, (int, float)) and v > 0 for v in fr)
                and abs(sum(fr) - 1) < 1e-9):
            bad.append("split.fractions")
        try:
            self.train_config()
        except (TypeError, ValueError):
            bad.append("train")
        m = self.models
        if not m.get("list") or any(x not in ALL_MODELS for x in m["list"]):
            bad.append("models.list")
        if not isinstance(m.get("lookback"), int) or m["lookback"] < 1:
            bad.append("models.lookback")
        if not isinstance(m.get("hidden"), dict) or any(k not in VARIANTS for k in m["hidden"]):
            bad.append("models.hidden")
        if not isinstance(m.get("ma_window"), int) or m["ma_window"] < 1:
            bad.append("models.ma_window")
        if not isinstance(m.get("ridge"), (int, float)) or m["ridge"] < 0:
            bad.append("models.ridge")
        if m.get("sarima_grid") is not None:
            try:
                self.sarima_grid()
            except (TypeError, ValueError):
                bad.append("models.sarima_grid")
        a = self.ablations
        if a.get("variant") not in VARIANTS:
            bad.append("ablations.variant")
        spans = a.get("history_spans")
        if not isinstance(spans, list) or not spans or any(
            not (s == "full" or (isinstance(s, (int, float)) and s > 0)) for s in spans
        ):
            bad.append("ablations.history_spans")
        lens = a.get("sequence_lengths")
        if not isinstance(lens, list) or not lens or any(not isinstance(v, int) or v < 1 for v in lens):
            bad.append("ablations.sequence_lengths")
        if a.get("feature_groups") is None or any(
            g not in ("lag", "rolling", "temporal", "casualty", "geography", "dummy") for g in a["feature_groups"]
        ):
            bad.append("ablations.feature_groups")
        if not isinstance(a.get("noise_floor_seeds"), int) or a["noise_floor_seeds"] < 0:
            bad.append("ablations.noise_floor_seeds")
        if not a.get("architectures") or any(v not in VARIANTS for v in a["architectures"]):
            bad.append("ablations.architectures")
        if bad:
            raise ConfigError("invalid config values", bad)

    def to_dict(self) -> dict:
        return {
            "data": self.data,
            "features": self.features,
            "split": self.split,
            "train": self.train,
            "models": self.models,
            "ablations": self.ablations,
            "seed": self.seed,
        }

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def with_seed(self, seed: int) -> ExperimentConfig:
        out = copy.deepcopy(self)
        out.seed = seed
        return out

    def feature_config(self) -> FeatureConfig:
        doc = dict(self.features)
        name = doc.pop("profile", "compact")
        if "groups" in doc:
            doc["groups"] = frozenset(doc["groups"])
        return FeatureConfig.profile(name, **doc)

    def fractions(self) -> tuple[float, float, float]:
        return tuple(float(v) for v in self.split["fractions"])  # type: ignore[return-value]

    def train_config(self, seed: int | None = None) -> TrainConfig:
        doc = dict(self.train)
        doc["seed"] = self.seed if seed is None else seed
        return TrainConfig(**doc)

    def model_spec(self, variant: str, n_features: int, lookback: int) -> ModelSpec:
        hidden = tuple(self.models["hidden"].get(variant, DEFAULT_HIDDEN[variant]))
        return ModelSpec(
            variant=variant,
            n_features=n_features,
            lookback=lookback,
            hidden=hidden,
            dense=int(self.models["dense"]),
            dropout=float(self.train.get("dropout", 0.2)),
        )

    def sarima_grid(self) -> list[SarimaOrder]:
        s = int(self.models["season"])
        grid = self.models.get("sarima_grid")
        if grid is None:
            return default_grid(s)
        return [SarimaOrder(int(p), 0, int(q), int(P), 0, int(Q), s) for p, q, P, Q in grid]

    def load_panel(self) -> PanelSeries:
        if self.data.get("synth") is not None:
            return generate_panel(SynthConfig.from_dict(self.data["synth"])).panel
        return load_panel(self.data["panel"], grain=self.data.get("grain", "region"))


# ---------------------------------------------------------------------------
# data context and the held-out test guard


class PanelContext:
    """Features, split, train-only scaler and week lookups for one panel."""

    def __init__(self, panel: PanelSeries, feature_config: FeatureConfig, split: SplitIndex | None = None,
                 fractions=DEFAULT_FRACTIONS) -> None:
        self.panel = panel
        self.features = build_features(panel, feature_config)
        self.split = split if split is not None else chronological_split(self.features.n_rows, fractions)
        self.scaler = fit_scaler(self.features, self.split)
        self.scaled = self.scaler.transform(self.features.values)
        self.row_of_week = {w.ordinal: r for r, w in enumerate(self.features.weeks)}

    @property
    def n_features(self) -> int:
        return self.features.n_features

    def rows(self, weeks: np.ndarray) -> np.ndarray:
        try:
            return np.array([self.row_of_week[int(w)] for w in weeks], dtype=np.int64)
        except KeyError as exc:
            raise ProtocolError(f"target week {exc} is outside this panel's feature rows") from None

    def train_val(self, lookback: int, universe: int | None = None):
        """Training and validation windows; with ``universe`` only targets reachable by that lookback."""
        seqs = make_sequences(self.features, self.scaler, self.split, lookback, parts=("train", "val"))
        if universe is not None and universe > lookback:
            for name in ("train", "val"):
                lo, _ = self.split.part(name)
                seqs[name] = seqs[name].subset(seqs[name].target_row >= lo + universe)
        return seqs["train"], seqs["val"]

    def test_keys(self, lookback: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(geo index, target week ordinal, actual count) for test targets a ``lookback`` window reaches."""
        lo, hi = self.split.test
        rows = np.arange(lo + lookback, hi)
        if rows.size == 0:
            raise DatasetError(f"test partition of {hi - lo} weeks has no target reachable with lookback {lookback}")
        n_g = self.panel.n_geos
        geo = np.repeat(np.arange(n_g), rows.size)
        r = np.tile(rows, n_g)
        weeks = np.array([self.features.weeks[i].ordinal for i in r], dtype=np.int64)
        actual = self.features.current[geo, r]
        return geo, weeks, actual

    def windows(self, geo: np.ndarray, rows: np.ndarray, lookback: int) -> np.ndarray:
        """Scaled windows of feature rows ``r-L .. r-1`` for target rows ``r``."""
        if rows.size and rows.min() < lookback:
            raise ProtocolError("window would start before the first feature row")
        idx = rows[:, None] + np.arange(-lookback, 0)[None, :]
        return self.scaled[geo[:, None], idx]

    def panel_index(self, rows: np.ndarray) -> np.ndarray:
        return rows + self.features.offset


class HeldOutTest:
    """Test keys and actuals; each label may be scored once.

    Predictors receive only (geo index, target week) pairs and must return
    one forecast per pair. Nothing here exposes the actual counts.
    """

    def __init__(self, geo: np.ndarray, weeks: np.ndarray, actual: np.ndarray) -> None:
        self._geo = np.asarray(geo)
        self._weeks = np.asarray(weeks)
        self._actual = np.asarray(actual, dtype=np.float64)
        self._scored: list[str] = []

    def __len__(self) -> int:
        return int(self._geo.size)

    @property
    def scored(self) -> tuple[str, ...]:
        return tuple(self._scored)

    def evaluate(self, label: str, predict: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> MetricReport:
        if label in self._scored:
            raise ProtocolError(f"{label!r} has already been scored on the test set in this run")
        self._scored.append(label)
        preds = np.asarray(predict(self._geo.copy(), self._weeks.copy()), dtype=np.float64).ravel()
        if preds.shape != self._actual.shape:
            raise ProtocolError(f"{label!r} returned {preds.size} forecasts for {self._actual.size} test keys")
        if not np.all(np.isfinite(preds)):
            raise ProtocolError(f"{label!r} produced non-finite forecasts")
        return compute_metrics(preds, self._actual, self._geo)


# ---------------------------------------------------------------------------
# predictors


def seasonal_naive_predictor(ctx: PanelContext, s: int = SEASON):
    counts = ctx.panel.counts.astype(np.float64)

    def predict(geo, weeks):
        idx = ctx.panel_index(ctx.rows(weeks)) - s
        if idx.size and idx.min() < 0:
            raise ProtocolError(f"seasonal naive needs {s} earlier weeks")
        return counts[geo, idx]

    return predict, None


def moving_average_predictor(ctx: PanelContext, k: int = MA_WINDOW):
    counts = ctx.panel.counts.astype(np.float64)

    def predict(geo, weeks):
        idx = ctx.panel_index(ctx.rows(weeks))
        out = np.zeros(idx.size)
        for j in range(1, k + 1):
            out += counts[geo, idx - j]
        return out / k

    return predict, None


def linear_predictor(ctx: PanelContext, ridge: float = DEFAULT_RIDGE):
    """Single-row regression: features of week t predict the count of the next week.

    Training rows are the ones whose target week also lies in the training
    partition.
    """
    lo, hi = ctx.split.train
    rows = np.arange(lo, hi - 1)
    X = ctx.scaled[:, rows, :].reshape(-1, ctx.n_features)
    y = ctx.features.target[:, rows].reshape(-1)
    model = linear_fit(X, y, ridge=ridge, feature_names=ctx.features.feature_names)

    def predict(geo, weeks):
        r = ctx.rows(weeks)
        return model.predict(ctx.scaled[geo, r - 1])

    return predict, int(y.size), model


def sarima_predictor(ctx: PanelContext, grid: list[SarimaOrder], s: int = SEASON):
    """Per-geography order search on the weeks up to the end of training."""
    train_end = ctx.panel_index(np.array([ctx.split.train[1]]))[0]
    fits = []
    for g in range(ctx.panel.n_geos):
        series = ctx.panel.counts[g, :train_end].astype(np.float64)
        fits.append(order_search(series, grid=grid, s=s))

    def predict(geo, weeks):
        idx = ctx.panel_index(ctx.rows(weeks))
        out = np.zeros(idx.size)
        for g in np.unique(geo):
            sel = geo == g
            series = ctx.panel.counts[g].astype(np.float64)
            out[sel] = one_step_predictions(fits[g].best, series, idx[sel])
        return out

    return predict, int(train_end) * ctx.panel.n_geos, fits


def deep_predictor(ctx: PanelContext, model: TrainedModel):
    L = model.spec.lookback

    def predict(geo, weeks):
        X = ctx.windows(geo, ctx.rows(weeks), L)
        return model.predict(X)

    return predict


def train_deep(
    ctx: PanelContext,
    spec: ModelSpec,
    train_cfg: TrainConfig,
    universe: int | None = None,
) -> tuple[TrainedModel, int]:
    tr, va = ctx.train_val(spec.lookback, universe=universe)
    log.info("training %s (L=%d, F=%d) on %d windows", spec.variant, spec.lookback, spec.n_features, len(tr))
    model = train(spec, tr, va, train_cfg, ctx.scaler)
    return model, len(tr)


# ---------------------------------------------------------------------------
# result tables


COMMON_COLUMNS = [
    "config_label",
    "samples",
    "test_samples",
    "rmse",
    "mae",
    "mse",
    "r2",
    "rmse_pooled",
    "mae_pooled",
    "r2_pooled",
    "epochs_ran",
    "pct_change_vs_baseline",
    "status",
    "error",
]
FAMILY_COLUMNS = {
    "main": ["type", "n_params", "improvement"],
    "history": ["span_years", "train_weeks"],
    "seqlen": ["lookback", "interpretation"],
    "feature": ["dropped_group", "features_count", "delta_rmse", "within_noise_floor", "interpretation"],
    "architecture": ["n_params"],
}


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, (np.floating,)):
        return _clean(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _cell(v) -> str:
    v = _clean(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class ResultTable:
    family: str
    rows: list[dict]
    metadata: dict = field(default_factory=dict)

    @property
    def columns(self) -> list[str]:
        return COMMON_COLUMNS[:1] + FAMILY_COLUMNS[self.family] + COMMON_COLUMNS[1:]

    def row(self, label: str) -> dict:
        for r in self.rows:
            if r["config_label"] == label:
                return r
        raise KeyError(label)

    @property
    def ok(self) -> bool:
        return all(r.get("status") in ("ok", "skipped") for r in self.rows)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for r in self.rows:
            writer.writerow([_cell(r.get(c)) for c in self.columns])
        return buf.getvalue()

    def to_json_text(self) -> str:
        doc = {
            "family": self.family,
            "columns": self.columns,
            "rows": [{c: _clean(r.get(c)) for c in self.columns} for r in self.rows],
            "metadata": self.metadata,
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json_text(cls, text: str) -> ResultTable:
        doc = json.loads(text)
        return cls(family=doc["family"], rows=doc["rows"], metadata=doc.get("metadata", {}))

    def to_markdown(self) -> str:
        shown = ["config_label"] + FAMILY_COLUMNS[self.family] + [
            "samples",
            "rmse",
            "mae",
            "r2",
            "epochs_ran",
            "pct_change_vs_baseline",
            "status",
        ]
        lines = [f"### {self.family}", "", "| " + " | ".join(shown) + " |", "|" + "---|" * len(shown)]
        for r in self.rows:
            cells = []
            for c in shown:
                v = _clean(r.get(c))
                if isinstance(v, float):
                    v = f"{v:.4f}"
                cells.append("" if v is None else str(v))
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path, label: str | None = None) -> list[Path]:
        out_dir = Path(out_dir)
        stem = f"{self.family}_{label or 'results'}"
        paths = [out_dir / f"{stem}.csv", out_dir / f"{stem}.json", out_dir / f"{stem}.md"]
        paths[0].write_text(self.to_csv_text(), encoding="utf-8")
        paths[1].write_text(self.to_json_text(), encoding="utf-8")
        paths[2].write_text(self.to_markdown(), encoding="utf-8")
        return paths


def _metric_cells(rep: MetricReport) -> dict:
    return {
        "rmse": rep.macro["rmse"],
        "mae": rep.macro["mae"],
        "mse": rep.macro["mse"],
        "r2": rep.macro["r2"],
        "rmse_pooled": rep.pooled["rmse"],
        "mae_pooled": rep.pooled["mae"],
        "r2_pooled": rep.pooled["r2"],
    }


def _failed(label: str, exc: BaseException, **extra) -> dict:
    log.warning("row %s failed: %s", label, exc)
    return {"config_label": label, "status": "failed", "error": f"{type(exc).__name__}: {exc}", **extra}


def _pct_change(value, reference) -> float | None:
    if value is None or reference is None or not reference > 0:
        return None
    return 100.0 * (value / reference - 1.0)


def _metadata(cfg: ExperimentConfig, family: str, test: HeldOutTest, ctx: PanelContext, **extra) -> dict:
    weeks = sorted({int(w) for w in test._weeks})
    first = next(w for w in ctx.features.weeks if w.ordinal == weeks[0])
    last = next(w for w in ctx.features.weeks if w.ordinal == weeks[-1])
    return {
        "family": family,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "metric_averaging": "rmse/mae/mse/r2 are macro means over geographies; *_pooled use all test samples",
        "test_window": [first.isoformat(), last.isoformat()],
        "test_samples": len(test),
        "n_geographies": ctx.panel.n_geos,
        **extra,
    }


def _save(model: TrainedModel, checkpoint_dir, name: str) -> None:
    if checkpoint_dir is not None:
        save_checkpoint(model, Path(checkpoint_dir) / f"{name}.ckpt.json")


# ---------------------------------------------------------------------------
# families


def run_main_comparison(cfg: ExperimentConfig, panel: PanelSeries | None = None, checkpoint_dir=None) -> ResultTable:
    panel = panel if panel is not None else cfg.load_panel()
    ctx = PanelContext(panel, cfg.feature_config(), fractions=cfg.fractions())
    L = int(cfg.models["lookback"])
    test = HeldOutTest(*ctx.test_keys(L))
    rows: list[dict] = []
    per_geo: dict[str, list[float]] = {}
    s = int(cfg.models["season"])
    for name in cfg.models["list"]:
        kind = "Baseline" if name in BASELINE_MODELS else "Deep Learning"
        try:
            epochs = None
            n_params = None
            if name == "seasonal_naive":
                predict, samples = seasonal_naive_predictor(ctx, s)
            elif name == "moving_average":
                predict, samples = moving_average_predictor(ctx, int(cfg.models["ma_window"]))
            elif name == "linear":
                predict, samples, lin = linear_predictor(ctx, float(cfg.models["ridge"]))
                n_params = int(lin.coef.size + 1)
            elif name == "sarima":
                predict, samples, _ = sarima_predictor(ctx, cfg.sarima_grid(), s)
            else:
                spec = cfg.model_spec(name, ctx.n_features, L)
                model, samples = train_deep(ctx, spec, cfg.train_config())
                _save(model, checkpoint_dir, f"main_{name}")
                predict = deep_predictor(ctx, model)
                epochs = model.epochs_ran
                n_params = count_parameters(spec)
            rep = test.evaluate(name, predict)
        except Exception as exc:  # one failing model must not sink the run
            rows.append(_failed(name, exc, type=kind))
            continue
        per_geo[name] = [rep.per_geo[g]["rmse"] for g in sorted(rep.per_geo)]
        rows.append(
            {
                "config_label": name,
                "type": kind,
                "samples": samples,
                "test_samples": len(test),
                **_metric_cells(rep),
                "epochs_ran": epochs,
                "n_params": n_params,
                "status": "ok",
                "error": None,
            }
        )
    ok_baselines = [r for r in rows if r["type"] == "Baseline" and r["status"] == "ok"]
    best = min(ok_baselines, key=lambda r: r["rmse"]) if ok_baselines else None
    significance = {}
    for r in rows:
        if r["type"] == "Baseline" or r["status"] != "ok" or best is None:
            r["improvement"] = "-" if r["type"] == "Baseline" else None
            r["pct_change_vs_baseline"] = "-" if r["type"] == "Baseline" else None
            continue
        r["improvement"] = improvement_pct(r["rmse"], best["rmse"])
        r["pct_change_vs_baseline"] = _pct_change(r["rmse"], best["rmse"])
        if len(per_geo[r["config_label"]]) >= 2:
            significance[f"{r['config_label']}_vs_{best['config_label']}"] = paired_t_test(
                per_geo[r["config_label"]], per_geo[best["config_label"]]
            ).to_dict()
    meta = _metadata(
        cfg,
        "main",
        test,
        ctx,
        best_baseline=best["config_label"] if best else None,
        lookback=L,
        paired_tests_on_per_geo_rmse={k: {kk: _clean(vv) for kk, vv in v.items()} for k, v in significance.items()},
    )
    return ResultTable("main", rows, meta)


def _span_label(span) -> str:
    return "full" if span == "full" else f"{span:g}y"


def run_history_ablation(cfg: ExperimentConfig, panel: PanelSeries | None = None) -> ResultTable:
    """Truncate the panel's start to each span; every span is scored on the full panel's test weeks.

    Within a truncated window the test partition is the common final test
    period, validation takes floor(val_fraction * rows) weeks before it and
    training gets the rest.
    """
    panel = panel if panel is not None else cfg.load_panel()
    variant = cfg.ablations["variant"]
    L = int(cfg.models["lookback"])
    fcfg = cfg.feature_config()
    full = PanelContext(panel, fcfg, fractions=cfg.fractions())
    test = HeldOutTest(*full.test_keys(L))
    n_test = full.split.test[1] - full.split.test[0]
    val_frac = cfg.fractions()[1]
    wpy = int(cfg.ablations["weeks_per_year"])
    rows: list[dict] = []
    for span in cfg.ablations["history_spans"]:
        label = _span_label(span)
        weeks = panel.n_weeks if span == "full" else int(round(float(span) * wpy))
        extra = {"span_years": "full" if span == "full" else span, "train_weeks": None}
        if weeks > panel.n_weeks:
            rows.append({"config_label": label, "status": "skipped", **extra,
                         "error": f"span of {weeks} weeks exceeds the panel's {panel.n_weeks} weeks"})
            continue
        try:
            sub = panel.slice_weeks(panel.n_weeks - weeks)
            n_rows = sub.n_weeks - 1 - WARMUP_WEEKS
            n_val = math.floor(val_frac * n_rows + 1e-9)
            n_train = n_rows - n_test - n_val
            if n_rows <= n_test or n_train < L + 1 or n_val < L + 1:
                raise DatasetError(
                    f"{weeks}-week window leaves {max(n_train, 0)} training and {n_val} validation weeks; "
                    f"lookback {L} needs at least {L + 1} each"
                )
            split = SplitIndex((0, n_train), (n_train, n_train + n_val), (n_train + n_val, n_rows))
            ctx = PanelContext(sub, fcfg, split=split)
        except (DatasetError, ValueError) as exc:
            rows.append({"config_label": label, "status": "skipped", **extra, "error": str(exc)})
            continue
        extra["train_weeks"] = n_train
        try:
            spec = cfg.model_spec(variant, ctx.n_features, L)
            model, samples = train_deep(ctx, spec, cfg.train_config())
            rep = test.evaluate(label, deep_predictor(ctx, model))
        except Exception as exc:
            rows.append(_failed(label, exc, **extra))
            continue
        rows.append(
            {
                "config_label": label,
                **extra,
                "samples": samples,
                "test_samples": len(test),
                **_metric_cells(rep),
                "epochs_ran": model.epochs_ran,
                "status": "ok",
                "error": None,
            }
        )
    ref = next((r for r in rows if r["config_label"] == "full" and r["status"] == "ok"), None)
    for r in rows:
        r["pct_change_vs_baseline"] = _pct_change(r.get("rmse"), ref["rmse"]) if ref else None
    meta = _metadata(cfg, "history", test, full, variant=variant, lookback=L, baseline_row="full")
    return ResultTable("history", rows, meta)


def run_seqlen_ablation(cfg: ExperimentConfig, panel: PanelSeries | None = None) -> ResultTable:
    """Retrain with each lookback; all rows use the sample universe of the longest lookback."""
    panel = panel if panel is not None else cfg.load_panel()
    variant = cfg.ablations["variant"]
    lengths = [int(v) for v in cfg.ablations["sequence_lengths"]]
    base_L = int(cfg.ablations["seqlen_baseline"])
    ctx = PanelContext(panel, cfg.feature_config(), fractions=cfg.fractions())
    universe = max(lengths)
    test = HeldOutTest(*ctx.test_keys(universe))
    rows: list[dict] = []
    for L in lengths:
        label = f"L={L}"
        extra = {"lookback": L, "interpretation": "Baseline" if L == base_L else None}
        try:
            spec = cfg.model_spec(variant, ctx.n_features, L)
            model, samples = train_deep(ctx, spec, cfg.train_config(), universe=universe)
            rep = test.evaluate(label, deep_predictor(ctx, model))
        except Exception as exc:
            rows.append(_failed(label, exc, **extra))
            continue
        rows.append(
            {
                "config_label": label,
                **extra,
                "samples": samples,
                "test_samples": len(test),
                **_metric_cells(rep),
                "epochs_ran": model.epochs_ran,
                "status": "ok",
                "error": None,
            }
        )
    ref = next((r for r in rows if r.get("lookback") == base_L and r["status"] == "ok"), None)
    for r in rows:
        r["pct_change_vs_baseline"] = _pct_change(r.get("rmse"), ref["rmse"]) if ref else None
    meta = _metadata(cfg, "seqlen", test, ctx, variant=variant, sample_universe_lookback=universe,
                     baseline_row=f"L={base_L}")
    return ResultTable("seqlen", rows, meta)


def run_feature_ablation(cfg: ExperimentConfig, panel: PanelSeries | None = None) -> ResultTable:
    """Drop one feature group at a time and retrain; delta RMSE is relative to all features.

    The noise floor is the largest |delta RMSE| among reruns of the all-feature
    model that change only the seed.
    """
    panel = panel if panel is not None else cfg.load_panel()
    variant = cfg.ablations["variant"]
    L = int(cfg.models["lookback"])
    base_cfg = cfg.feature_config()
    base_ctx = PanelContext(panel, base_cfg, fractions=cfg.fractions())
    test = HeldOutTest(*base_ctx.test_keys(L))
    n_geo = panel.n_geos

    def fit_and_score(label: str, ctx: PanelContext, seed: int):
        spec = cfg.model_spec(variant, ctx.n_features, L)
        model, samples = train_deep(ctx, spec, cfg.train_config(seed=seed))
        return model, samples, test.evaluate(label, deep_predictor(ctx, model))

    rows: list[dict] = []
    base_row = None
    try:
        model, samples, rep = fit_and_score("baseline", base_ctx, cfg.seed)
        base_row = {
            "config_label": "baseline",
            "dropped_group": None,
            "features_count": base_ctx.n_features,
            "samples": samples,
            "test_samples": len(test),
            **_metric_cells(rep),
            "epochs_ran": model.epochs_ran,
            "delta_rmse": 0.0,
            "interpretation": "Full model",
            "status": "ok",
            "error": None,
        }
    except Exception as exc:
        base_row = _failed("baseline", exc, dropped_group=None, features_count=base_ctx.n_features)
    rows.append(base_row)

    floor_deltas = []
    for k in range(1, int(cfg.ablations["noise_floor_seeds"]) + 1):
        if base_row["status"] != "ok":
            break
        try:
            _, _, rep = fit_and_score(f"noise_seed_{cfg.seed + k}", base_ctx, cfg.seed + k)
            floor_deltas.append(rep.macro["rmse"] - base_row["rmse"])
        except Exception as exc:
            log.warning("noise-floor rerun %d failed: %s", k, exc)
    noise_floor = max(abs(d) for d in floor_deltas) if floor_deltas else None

    for group in cfg.ablations["feature_groups"]:
        label = f"without_{group}"
        fc = base_cfg.without(group)
        extra = {"dropped_group": group, "features_count": fc.width(n_geo)}
        if group not in base_cfg.groups:
            rows.append({"config_label": label, **extra, "status": "skipped",
                         "error": f"group {group!r} is not in the baseline feature set"})
            continue
        try:
            ctx = PanelContext(panel, fc, fractions=cfg.fractions())
            model, samples, rep = fit_and_score(label, ctx, cfg.seed)
        except Exception as exc:
            rows.append(_failed(label, exc, **extra))
            continue
        delta = rep.macro["rmse"] - base_row["rmse"] if base_row["status"] == "ok" else None
        within = None if (noise_floor is None or delta is None) else abs(delta) <= noise_floor
        if within is None:
            interp = None
        elif within:
            interp = "Within seed noise"
        else:
            interp = "Degrades without group" if delta > 0 else "Improves without group"
        rows.append(
            {
                "config_label": label,
                **extra,
                "samples": samples,
                "test_samples": len(test),
                **_metric_cells(rep),
                "epochs_ran": model.epochs_ran,
                "delta_rmse": delta,
                "within_noise_floor": within,
                "interpretation": interp,
                "status": "ok",
                "error": None,
            }
        )
    ref = base_row if base_row["status"] == "ok" else None
    for r in rows:
        r["pct_change_vs_baseline"] = _pct_change(r.get("rmse"), ref["rmse"]) if ref else None
    meta = _metadata(
        cfg,
        "feature",
        test,
        base_ctx,
        variant=variant,
        lookback=L,
        baseline_row="baseline",
        noise_floor=noise_floor,
        noise_floor_deltas=floor_deltas,
    )
    return ResultTable("feature", rows, meta)


def run_architecture_ablation(cfg: ExperimentConfig, panel: PanelSeries | None = None) -> ResultTable:
    panel = panel if panel is not None else cfg.load_panel()
    L = int(cfg.models["lookback"])
    ctx = PanelContext(panel, cfg.feature_config(), fractions=cfg.fractions())
    test = HeldOutTest(*ctx.test_keys(L))
    rows: list[dict] = []
    for variant in cfg.ablations["architectures"]:
        spec = cfg.model_spec(variant, ctx.n_features, L)
        extra = {"n_params": count_parameters(spec)}
        try:
            model, samples = train_deep(ctx, spec, cfg.train_config())
            rep = test.evaluate(variant, deep_predictor(ctx, model))
        except Exception as exc:
            rows.append(_failed(variant, exc, **extra))
            continue
        rows.append(
            {
                "config_label": variant,
                **extra,
                "samples": samples,
                "test_samples": len(test),
                **_metric_cells(rep),
                "epochs_ran": model.epochs_ran,
                "status": "ok",
                "error": None,
            }
        )
    base = cfg.ablations["architecture_baseline"]
    ref = next((r for r in rows if r["config_label"] == base and r["status"] == "ok"), None)
    for r in rows:
        r["pct_change_vs_baseline"] = _pct_change(r.get("rmse"), ref["rmse"]) if ref else None
    meta = _metadata(cfg, "architecture", test, ctx, lookback=L, baseline_row=base)
    return ResultTable("architecture", rows, meta)


RUNNERS = {
    "main": run_main_comparison,
    "history": run_history_ablation,
    "seqlen": run_seqlen_ablation,
    "feature": run_feature_ablation,
    "architecture": run_architecture_ablation,
}


def run_family(family: str, cfg: ExperimentConfig, panel: PanelSeries | None = None) -> ResultTable:
    if family not in RUNNERS:
        raise ConfigError(f"unknown ablation family {family!r}; expected one of {sorted(RUNNERS)}")
    return RUNNERS[family](cfg, panel)
