"""Command-line entry point: ``burstcast {ingest,train,baseline,ablate,synth,report}``.

Every run writes into a fresh temporary directory next to the output
directory and is moved into place only when it finishes, so a crash never
leaves partial files behind. Each output directory holds a ``manifest.json``
with the fully resolved config, seed and hash needed to re-run it.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .baselines import linear_fit, order_search
from .dataset import DatasetError
from .experiments import (
    BASELINE_MODELS,
    FAMILIES,
    ConfigError,
    ExperimentConfig,
    PanelContext,
    ResultTable,
    run_family,
    train_deep,
)
from .ingest import IngestError, aggregate_weekly, count_excluded, parse_incidents
from .nn.model import VARIANTS, count_parameters
from .nn.train import TrainingError, save_checkpoint
from .synth import SynthConfig, SynthError, generate_panel

log = logging.getLogger("burstcast")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_MISSING_INPUT = 2
EXIT_CONFIG = 3
SEED_ENV = "BURSTCAST_SEED"


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_FAILED) -> None:
        super().__init__(message)
        self.code = code


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    config_hash: str | None
    seed: int | None
    seed_source: str
    output_dir: str
    tool_version: str = __version__
    started_at: str = field(default_factory=_now)
    finished_at: str | None = None
    status: str = "running"
    argv: list = field(default_factory=list)
    resolved_config: dict | None = None
    environment: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def write(self, directory: Path) -> None:
        doc = dict(self.__dict__)
        (directory / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

    def finalize(self, directory: Path, status: str) -> None:
        self.finished_at = _now()
        self.status = status
        self.outputs = sorted(p.name for p in directory.iterdir() if p.name != "manifest.json")
        self.write(directory)


def _environment() -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "kernel_backend": kernels.BACKEND,
    }


def resolve_seed(flag: int | None, config_seed: int) -> tuple[int, str]:
    """Flag beats the environment variable, which beats the config."""
    if flag is not None:
        return flag, "flag"
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env), "env"
        except ValueError:
            raise CliError(f"{SEED_ENV}={env!r} is not an integer", EXIT_CONFIG) from None
    return config_seed, "config"


def _load_config(path: str, seed_flag: int | None) -> tuple[ExperimentConfig, str]:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {p}", EXIT_MISSING_INPUT)
    try:
        cfg = ExperimentConfig.load(p)
    except ConfigError as exc:
        raise CliError(f"invalid config {p}: {exc}", EXIT_CONFIG) from None
    seed, source = resolve_seed(seed_flag, cfg.seed)
    if seed < 0:
        raise CliError("seed must be non-negative", EXIT_CONFIG)
    cfg = cfg.with_seed(seed)
    panel = cfg.data.get("panel")
    if panel is not None and not Path(panel).is_file():
        raise CliError(f"panel file not found: {panel}", EXIT_MISSING_INPUT)
    return cfg, source


class _Staging:
    """Temporary directory beside ``dest`` that replaces its files on success."""

    def __init__(self, dest: Path) -> None:
        self.dest = dest
        dest.parent.mkdir(parents=True, exist_ok=True)
        self.path = Path(tempfile.mkdtemp(prefix=f".{dest.name}.", dir=dest.parent))

    def commit(self) -> None:
        self.dest.mkdir(parents=True, exist_ok=True)
        for item in sorted(self.path.iterdir()):
            target = self.dest / item.name
            if target.is_dir():
                shutil.rmtree(target)
            os.replace(item, target)
        self.path.rmdir()

    def discard(self) -> None:
        shutil.rmtree(self.path, ignore_errors=True)


def _default_out(command: str, cfg: ExperimentConfig) -> Path:
    return Path("runs") / f"{command}-{cfg.config_hash()[:12]}-seed{cfg.seed}"


def _run(command: str, args, body) -> int:
    """Load the config, stage outputs, run ``body(cfg, staging_dir)`` and commit or discard."""
    cfg, source = (None, "none")
    if getattr(args, "config", None):
        cfg, source = _load_config(args.config, args.seed)
    elif command != "report":
        raise CliError("--config is required", EXIT_CONFIG)
    out = Path(args.out) if args.out else _default_out(command, cfg)
    stage = _Staging(out)
    manifest = RunManifest(
        command=command,
        config_path=str(args.config) if getattr(args, "config", None) else None,
        config_hash=cfg.config_hash() if cfg else None,
        seed=cfg.seed if cfg else None,
        seed_source=source,
        output_dir=str(out),
        argv=list(sys.argv[1:]),
        resolved_config=cfg.to_dict() if cfg else None,
        environment=_environment(),
    )
    manifest.write(stage.path)
    try:
        code = body(cfg, stage.path)
        manifest.finalize(stage.path, "ok" if code == EXIT_OK else "rows_failed")
        stage.commit()
    except BaseException:
        stage.discard()
        raise
    print(f"wrote {out}")
    return code


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise CliError(f"input file not found: {src}", EXIT_MISSING_INPUT)
    try:
        with open(src, encoding="utf-8", newline="") as fh:
            records, report = parse_incidents(fh)
        panel = aggregate_weekly(records, grain=args.grain)
    except IngestError as exc:
        raise CliError(f"{src}: {exc}") from None
    except ValueError as exc:
        raise CliError(f"{src}: {exc}") from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    doc["excluded_week_records"] = count_excluded(records)
    doc["n_geographies"] = panel.n_geos
    doc["n_weeks"] = panel.n_weeks
    doc["grain"] = args.grain
    report_path = out.with_name(out.stem + ".report.json")
    tmp_panel = out.with_name(f".{out.name}.tmp")
    try:
        if out.suffix.lower() == ".csv":
            panel.to_csv(tmp_panel)
        else:
            panel.to_json(tmp_panel)
        report_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        os.replace(tmp_panel, out)
    except BaseException:
        tmp_panel.unlink(missing_ok=True)
        report_path.unlink(missing_ok=True)
        raise
    print(
        f"{doc['retained']} of {doc['total_rows']} rows kept, {doc['rejected']} rejected, "
        f"{doc['excluded_week_records']} in excluded 1993 weeks; panel {panel.n_geos}x{panel.n_weeks} -> {out}"
    )
    return EXIT_OK


def _write_history(path: Path, history: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        cols = ["epoch", "train_loss", "val_loss", "val_rmse", "lr"]
        writer.writerow(cols)
        for row in history:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])


def cmd_train(args) -> int:
    def body(cfg: ExperimentConfig, out: Path) -> int:
        variants = [m for m in cfg.models["list"] if m in VARIANTS] or [cfg.ablations["variant"]]
        ctx = PanelContext(cfg.load_panel(), cfg.feature_config(), fractions=cfg.fractions())
        L = int(cfg.models["lookback"])
        code = EXIT_OK
        for variant in variants:
            spec = cfg.model_spec(variant, ctx.n_features, L)
            try:
                model, samples = train_deep(ctx, spec, cfg.train_config())
            except (TrainingError, DatasetError) as exc:
                log.error("%s failed: %s", variant, exc)
                code = EXIT_FAILED
                continue
            save_checkpoint(
                model,
                out / f"train_{variant}.ckpt.json",
                extra={"config_hash": cfg.config_hash(), "seed": cfg.seed, "train_samples": samples},
            )
            _write_history(out / f"train_{variant}.history.csv", model.history)
            best = model.history[model.best_epoch - 1]["val_rmse"] if model.best_epoch else None
            print(
                f"{variant}: {count_parameters(spec)} params, {model.epochs_ran} epochs, "
                f"best val RMSE {best!r} at epoch {model.best_epoch}"
            )
        return code

    return _run("train", args, body)


def cmd_baseline(args) -> int:
    def body(cfg: ExperimentConfig, out: Path) -> int:
        names = [m for m in cfg.models["list"] if m in BASELINE_MODELS] or list(BASELINE_MODELS)
        ctx = PanelContext(cfg.load_panel(), cfg.feature_config(), fractions=cfg.fractions())
        lo, hi = ctx.split.train
        train_end = ctx.features.offset + hi
        code = EXIT_OK
        for name in names:
            try:
                if name == "seasonal_naive":
                    doc = {"kind": name, "season": int(cfg.models["season"])}
                elif name == "moving_average":
                    doc = {"kind": name, "window": int(cfg.models["ma_window"])}
                elif name == "linear":
                    rows = np.arange(lo, hi - 1)
                    X = ctx.scaled[:, rows, :].reshape(-1, ctx.n_features)
                    y = ctx.features.target[:, rows].reshape(-1)
                    doc = linear_fit(X, y, float(cfg.models["ridge"]), ctx.features.feature_names).to_dict()
                    doc["scaler"] = ctx.scaler.to_dict()
                else:
                    doc = {
                        "kind": "sarima_panel",
                        "train_end_week": ctx.panel.weeks[train_end - 1].isoformat(),
                        "geographies": {
                            str(gid): order_search(
                                ctx.panel.counts[g, :train_end].astype(np.float64),
                                grid=cfg.sarima_grid(),
                                s=int(cfg.models["season"]),
                            ).to_dict()
                            for g, gid in enumerate(ctx.panel.geo_ids)
                        },
                    }
            except Exception as exc:
                log.error("%s failed: %s", name, exc)
                code = EXIT_FAILED
                continue
            doc["config_hash"] = cfg.config_hash()
            (out / f"baseline_{name}.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
            print(f"{name}: fitted")
        return code

    return _run("baseline", args, body)


def cmd_ablate(args) -> int:
    families = list(FAMILIES) if args.family == "all" else [args.family]

    def body(cfg: ExperimentConfig, out: Path) -> int:
        panel = cfg.load_panel()
        code = EXIT_OK
        for family in families:
            table = run_family(family, cfg, panel)
            table.write(out, "results")
            sys.stdout.write(table.to_markdown() + "\n")
            if not table.ok:
                failed = [r["config_label"] for r in table.rows if r.get("status") == "failed"]
                log.error("%s: failed rows %s", family, failed)
                code = EXIT_FAILED
        return code

    return _run("ablate", args, body)


def cmd_synth(args) -> int:
    def body(cfg: ExperimentConfig, out: Path) -> int:
        doc = cfg.data.get("synth")
        if doc is None:
            raise CliError("synth needs a data.synth section in the config", EXIT_CONFIG)
        doc = dict(doc)
        # an explicit seed (flag or env) also seeds the generator
        if args.seed is not None or os.environ.get(SEED_ENV):
            doc["seed"] = cfg.seed
        try:
            synth_cfg = SynthConfig.from_dict(doc)
        except (SynthError, TypeError) as exc:
            raise CliError(f"invalid data.synth: {exc}", EXIT_CONFIG) from None
        res = generate_panel(synth_cfg)
        res.panel.to_json(out / "synth_panel.json")
        res.panel.to_csv(out / "synth_panel.csv")
        (out / "synth_raw.csv").write_text(res.raw_csv(), encoding="utf-8")
        (out / "synth_config.json").write_text(json.dumps(synth_cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
        print(f"{res.panel.n_geos} geographies x {res.panel.n_weeks} weeks, {len(res.records)} events")
        return EXIT_OK

    return _run("synth", args, body)


def _find_tables(roots: list[Path]) -> list[tuple[Path, ResultTable]]:
    found = []
    for root in roots:
        paths = [root] if root.is_file() else sorted(root.rglob("*.json"))
        for p in paths:
            try:
                doc = json.loads(p.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                continue
            if isinstance(doc, dict) and doc.get("family") in FAMILIES and "rows" in doc:
                found.append((p, ResultTable.from_json_text(json.dumps(doc))))
    return found


def cmd_report(args) -> int:
    roots = [Path(p) for p in (args.tables or [])]
    if not roots:
        if not args.out:
            raise CliError("report needs --tables or an --out directory holding result tables", EXIT_CONFIG)
        roots = [Path(args.out)]
    for r in roots:
        if not r.exists():
            raise CliError(f"result path not found: {r}", EXIT_MISSING_INPUT)
    tables = _find_tables(roots)
    if not tables:
        raise CliError(f"no result tables under {', '.join(map(str, roots))}", EXIT_MISSING_INPUT)
    if args.out is None:
        args.out = str(roots[0] if roots[0].is_dir() else roots[0].parent)

    def body(cfg, out: Path) -> int:
        md = io.StringIO()
        md.write("# Results\n\n")
        by_family: dict[str, list] = {}
        for path, table in tables:
            by_family.setdefault(table.family, []).append((path, table))
        for family in FAMILIES:
            for path, table in by_family.get(family, []):
                md.write(table.to_markdown())
                meta = table.metadata
                md.write(
                    f"\nsource `{path.name}`, seed {meta.get('seed')}, config {str(meta.get('config_hash'))[:12]}, "
                    f"test weeks {meta.get('test_window')}\n\n"
                )
            if family in by_family:
                merged = ResultTable(family, [r for _, t in by_family[family] for r in t.rows])
                (out / f"report_{family}.csv").write_text(merged.to_csv_text(), encoding="utf-8")
        (out / "report.md").write_text(md.getvalue(), encoding="utf-8")
        sys.stdout.write(md.getvalue())
        return EXIT_OK

    return _run("report", args, body)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="burstcast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"burstcast {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="incident CSV -> weekly panel + rejection report")
    p.add_argument("--input", required=True, help="raw incident CSV")
    p.add_argument("--grain", choices=("region", "country"), default="region")
    p.add_argument("--out", required=True, help="panel file (.json or .csv); the report goes beside it")
    p.set_defaults(func=cmd_ingest)

    def with_config(name: str, help_text: str, func, config_required: bool = True):
        q = sub.add_parser(name, help=help_text)
        q.add_argument("--config", required=config_required, help="experiment config (JSON)")
        q.add_argument("--seed", type=int, default=None, help=f"overrides {SEED_ENV} and the config seed")
        q.add_argument("--out", default=None, help="output directory (default runs/<command>-<hash>-seed<n>)")
        q.set_defaults(func=func)
        return q

    with_config("train", "train the configured deep models; writes checkpoints and histories", cmd_train)
    with_config("baseline", "fit the configured baselines; writes their parameters", cmd_baseline)
    q = with_config("ablate", "run the comparison or an ablation family; writes result tables", cmd_ablate)
    q.add_argument("--family", choices=FAMILIES + ("all",), default="main")
    with_config("synth", "generate a synthetic panel and raw incident CSV", cmd_synth)
    q = with_config("report", "merge result tables into markdown and CSV", cmd_report, config_required=False)
    q.add_argument("--tables", nargs="*", default=None, help="result-table JSON files or directories")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"burstcast {args.command}: error: {exc}", file=sys.stderr)
        return exc.code
    except (DatasetError, TrainingError, SynthError, ValueError, OSError) as exc:
        print(f"burstcast {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
