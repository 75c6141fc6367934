"""Command-line front end: ``jsvuln <subcommand> ...``.

Exit codes: 0 success, 1 fatal error, 2 configuration or usage error.
Logs go to stderr as ``level=... stage=... logger=... msg=...`` lines;
data only ever goes to files (or stdout for ``analyze``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from jsvuln import __version__
from jsvuln.advisories import IngestError, load_advisories, read_advisories, save_advisories
from jsvuln.dataset import SnapshotStore, build_dataset, emit_dataset, load_features
from jsvuln.evaluation import (
    ConfigError,
    EvalConfig,
    ResamplingSpec,
    best_results,
    grid_search,
    load_eval_config,
    make_folds,
    random_label_check,
    read_long_results,
    report,
    sweep,
    write_long_results,
    write_search_table,
    zeror_baseline,
)
from jsvuln.github import (
    FixtureClient,
    GitHubError,
    LiveClient,
    ReviewError,
    apply_review_decisions,
    export_review_queue,
    fetch_combined_patch,
    load_decisions,
    load_resolutions,
    resolve_all,
    save_resolution,
)
from jsvuln.js.functions import ExtractionError, extract_functions
from jsvuln.js.lexer import LexError, tokenize
from jsvuln.js.metrics import compute_metrics
from jsvuln.ml.core import ALGORITHMS, HyperparameterError, train
from jsvuln.pipeline import MANIFEST_NAME, PipelineManifest, Stage, StageError, run_stages

logger = logging.getLogger("jsvuln")

_current_stage = "-"


class _StageFilter(logging.Filter):
    def filter(self, record):
        if not hasattr(record, "stage"):
            record.stage = _current_stage
        return True


def setup_logging(verbose: bool = False) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("level=%(levelname)s stage=%(stage)s logger=%(name)s msg=%(message)s"))
    handler.addFilter(_StageFilter())
    root = logging.getLogger("jsvuln")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False


def _set_stage(name: str) -> None:
    global _current_stage
    _current_stage = name


# -- config -------------------------------------------------------------------


def load_config(path: str | None) -> tuple[dict, Path]:
    if not path:
        return {}, Path.cwd()
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {p} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data, p.resolve().parent


def eval_config(args) -> EvalConfig:
    cfg = load_eval_config(args.config_data.get("evaluation"))
    if args.seed is not None:
        cfg.seed = args.seed
    elif "seed" in args.config_data:
        cfg.seed = int(args.config_data["seed"])
    return cfg


def _jobs(args) -> int:
    if args.jobs is not None:
        return args.jobs
    return int(args.config_data.get("jobs", 1))


def _grid_arg(path: str | None, algo: str, cfg: EvalConfig) -> dict:
    if not path:
        return cfg.grids.get(algo, {})
    try:
        grid = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read grid {path}: {exc}") from exc
    if isinstance(grid, dict) and algo in grid and isinstance(grid[algo], dict):
        grid = grid[algo]
    if not isinstance(grid, dict):
        raise ConfigError("grid must be a JSON object of parameter -> list of values")
    return grid


def make_client(mode: str, fixtures: str | None, cache: str | None):
    if mode == "fixture":
        if not fixtures:
            raise ConfigError("--fixtures is required in fixture mode")
        return FixtureClient(fixtures)
    if mode == "live":
        return LiveClient(cache_dir=cache)
    raise ConfigError(f"unknown mode {mode!r}")


# -- stage actions ------------------------------------------------------------


def do_ingest(inputs: list[tuple[str, str]], out: Path) -> int:
    entries = []
    seen = set()
    for source, path in inputs:
        rep = read_advisories(path, source)
        logger.info("%s: %d advisories, %d skipped", path, len(rep.entries), rep.skipped)
        for e in rep.entries:
            if e.id not in seen:
                seen.add(e.id)
                entries.append(e)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_advisories(entries, out)
    return len(entries)


def _clear_resolutions(out_dir: Path) -> None:
    if out_dir.is_dir():
        for p in list(out_dir.glob("*.json")) + list(out_dir.glob("*.diff")):
            p.unlink()


def do_resolve(advisories: Path, client, out_dir: Path, jobs: int, decisions: Path | None = None) -> dict:
    entries = load_advisories(advisories)
    resolutions = resolve_all(entries, client, jobs)
    if decisions is not None:
        resolutions = _apply_decisions(resolutions, load_decisions(decisions), client)
    _clear_resolutions(out_dir)
    counts: dict[str, int] = {}
    for res in resolutions:
        save_resolution(res, out_dir)
        counts[res.status] = counts.get(res.status, 0) + 1
    logger.info("resolutions: %s", json.dumps(counts, sort_keys=True))
    return counts


def _apply_decisions(resolutions, decisions, client):
    by_id: dict[str, list] = {}
    for d in decisions:
        by_id.setdefault(d.advisory_id, []).append(d)
    known = {r.advisory_id for r in resolutions}
    for aid in by_id:
        if aid not in known:
            raise ReviewError(f"decision for unknown advisory {aid}")
    out = []
    for res in resolutions:
        if res.advisory_id in by_id:
            res = apply_review_decisions(res, by_id[res.advisory_id])
            if res.fixing_commits and res.combined_patch is None:
                res = fetch_combined_patch(res, client)
        out.append(res)
    return out


def do_build_dataset(resolutions: Path, snapshots: Path, download: bool, out: Path, jobs: int) -> dict:
    store = SnapshotStore(snapshots, download=download)
    rows = build_dataset(load_resolutions(resolutions), store, jobs)
    summary = emit_dataset(rows, out)
    logger.info("dataset: %d functions, %d vulnerable", summary["total"], summary["vulnerable"])
    return summary


def do_sweep(dataset: Path, cfg: EvalConfig, jobs: int, out_dir: Path) -> list[Path]:
    X, y, _ = load_features(dataset)
    searches = sweep(X, y, cfg.seed, cfg.algorithms, cfg.resamplings, cfg.grids, jobs, cfg.mode, cfg.fold_count)
    rand = {}
    if cfg.rand_check:
        rand = random_label_check(X, y, cfg.seed, cfg.algorithms, cfg.grids, jobs, cfg.mode, cfg.fold_count)
    plan = make_folds(len(y), y, cfg.seed, cfg.fold_count)
    results = best_results(searches, rand) + [zeror_baseline(y, plan)]
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [
        write_long_results(results, out_dir / "results_long.csv"),
        write_search_table(searches, out_dir / "search_table.csv"),
    ]
    if rand:
        paths.append(write_search_table(list(rand.values()), out_dir / "rand_table.csv"))
    return paths


# -- subcommands --------------------------------------------------------------


def cmd_ingest(args) -> int:
    _set_stage("ingest")
    n = do_ingest([(args.source, args.input)], Path(args.out))
    logger.info("wrote %d advisories to %s", n, args.out)
    return 0


def cmd_resolve(args) -> int:
    _set_stage("resolve")
    client = make_client(args.mode, args.fixtures, args.cache)
    do_resolve(Path(args.advisories), client, Path(args.out), _jobs(args), Path(args.decisions) if args.decisions else None)
    return 0


def cmd_review_export(args) -> int:
    _set_stage("review-export")
    queue = export_review_queue(load_resolutions(args.resolutions))
    Path(args.out).write_text(json.dumps(queue, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("%d candidates written to %s", len(queue), args.out)
    return 0


def cmd_review_import(args) -> int:
    _set_stage("review-import")
    client = make_client(args.mode, args.fixtures, args.cache)
    resolutions = _apply_decisions(load_resolutions(args.resolutions), load_decisions(args.decisions), client)
    out = Path(args.out or args.resolutions)
    _clear_resolutions(out)
    for res in resolutions:
        save_resolution(res, out)
    return 0


def cmd_build_dataset(args) -> int:
    _set_stage("build-dataset")
    do_build_dataset(Path(args.resolutions), Path(args.snapshots), args.download, Path(args.out), _jobs(args))
    return 0


def cmd_analyze(args) -> int:
    _set_stage("analyze")
    path = Path(args.file)
    source = path.read_text(encoding="utf-8")
    fns = extract_functions(tokenize(source), args.name or path.name)
    for fn in fns:
        rec = {
            "name": fn.short_name,
            "qualified_name": fn.qualified_name,
            "path": fn.file_path,
            "start_line": fn.start_line,
            "start_col": fn.start_col,
            "end_line": fn.end_line,
            "end_col": fn.end_col,
            "metrics": compute_metrics(fn).as_dict(),
        }
        sys.stdout.write(json.dumps(rec) + "\n")
    return 0


def cmd_train(args) -> int:
    _set_stage("train")
    cfg = eval_config(args)
    X, y, _ = load_features(args.dataset)
    resampling = ResamplingSpec.parse(args.resample)
    grid = _grid_arg(args.grid, args.algo, cfg)
    plan = make_folds(len(y), y, cfg.seed, cfg.fold_count)
    result = grid_search(args.algo, grid, X, y, plan, resampling, cfg.seed, _jobs(args), cfg.mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_search_table([result], out / "search_table.csv")
    if result.best is None:
        logger.error("every combination failed")
        return 1
    report([result.best.test], out)
    # refit the selected combination on fold 0 for inspection
    tr, dev, _ = plan.fold(0)
    model = train(result.best.spec, X[tr], y[tr], seed=cfg.seed, dev=(X[dev], y[dev]))
    (out / "model.json").write_text(model.dumps() + "\n", encoding="utf-8")
    t = result.best.test
    logger.info("selected %s: P=%.3f R=%.3f F=%.3f MCC=%.3f", result.best.spec.label(), t.precision, t.recall, t.f_measure, t.mcc)
    return 0


def cmd_sweep(args) -> int:
    _set_stage("sweep")
    cfg = eval_config(args)
    if args.algos:
        cfg.algorithms = tuple(args.algos.split(","))
    if args.no_rand:
        cfg.rand_check = False
    do_sweep(Path(args.dataset), cfg, _jobs(args), Path(args.out))
    return 0


def cmd_rand_check(args) -> int:
    _set_stage("rand-check")
    cfg = eval_config(args)
    X, y, _ = load_features(args.dataset)
    rand = random_label_check(X, y, cfg.seed, cfg.algorithms, cfg.grids, _jobs(args), cfg.mode, cfg.fold_count)
    out = Path(args.out)
    write_search_table(list(rand.values()), out / "search_table.csv")
    report(best_results([], rand), out)
    return 0


def cmd_report(args) -> int:
    _set_stage("report")
    results = []
    for path in args.results:
        results.extend(read_long_results(path))
    report(results, args.out)
    return 0


def _resolve_path(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def build_stages(config: dict, base: Path, seed: int | None, jobs: int) -> tuple[list[Stage], Path]:
    """Translate a run config into the five pipeline stages."""
    work = _resolve_path(base, config.get("workdir", "work"))
    sources = config.get("advisories")
    if not sources or not isinstance(sources, list):
        raise ConfigError("config needs a non-empty 'advisories' list of {source, input}")
    try:
        inputs = [(s["source"], _resolve_path(base, s["input"])) for s in sources]
    except (KeyError, TypeError) as exc:
        raise ConfigError("each advisories entry needs 'source' and 'input'") from exc
    rcfg = dict(config.get("resolve") or {})
    mode = rcfg.get("mode", "fixture")
    fixtures = _resolve_path(base, rcfg.get("fixtures"))
    decisions = _resolve_path(base, rcfg.get("decisions"))
    cache = _resolve_path(base, rcfg.get("cache"))
    scfg = dict(config.get("snapshots") or {})
    snapshots = _resolve_path(base, scfg.get("root", "snapshots"))
    download = bool(scfg.get("download", False))
    ecfg = load_eval_config(config.get("evaluation"))
    if seed is not None:
        ecfg.seed = seed
    elif "seed" in config:
        ecfg.seed = int(config["seed"])
    if mode == "fixture" and fixtures is None:
        raise ConfigError("resolve.fixtures is required in fixture mode")

    advisories = work / "advisories.json"
    resolutions = work / "resolutions"
    dataset = work / "dataset.csv"
    sweep_dir = work / "sweep"
    report_dir = work / "report"
    eval_settings = {
        "seed": ecfg.seed,
        "fold_count": ecfg.fold_count,
        "mode": ecfg.mode,
        "algorithms": list(ecfg.algorithms),
        "grids": ecfg.grids,
        "resamplings": [r.label for r in ecfg.resamplings],
        "rand_check": ecfg.rand_check,
    }

    def resolve_inputs():
        extra = [fixtures] if mode == "fixture" else []
        return [advisories] + extra + ([decisions] if decisions else [])

    stages = [
        Stage(
            "ingest",
            lambda: [p for _, p in inputs],
            {"sources": [s for s, _ in inputs]},
            [advisories],
            lambda: do_ingest(inputs, advisories),
        ),
        Stage(
            "resolve",
            resolve_inputs,
            {"mode": mode},
            [resolutions],
            lambda: do_resolve(advisories, make_client(mode, fixtures, cache), resolutions, jobs, decisions),
        ),
        Stage(
            "build-dataset",
            lambda: [resolutions] + ([snapshots] if snapshots.exists() or not download else []),
            {"download": download},
            [dataset],
            lambda: do_build_dataset(resolutions, snapshots, download, dataset, jobs),
        ),
        Stage(
            "sweep",
            lambda: [dataset],
            eval_settings,
            [sweep_dir / "results_long.csv", sweep_dir / "search_table.csv"],
            lambda: do_sweep(dataset, ecfg, jobs, sweep_dir),
        ),
        Stage(
            "report",
            lambda: [sweep_dir / "results_long.csv"],
            {},
            [report_dir / "f_grid.csv", report_dir / "results_long.csv"],
            lambda: report(read_long_results(sweep_dir / "results_long.csv"), report_dir),
        ),
    ]
    return stages, work


def cmd_run(args) -> int:
    if not args.config:
        raise ConfigError("run needs --config")
    stages, work = build_stages(args.config_data, args.config_base, args.seed, _jobs(args))
    manifest = PipelineManifest.load(work / MANIFEST_NAME)
    for problem in manifest.validate():
        logger.info("stale: %s", problem)
    original = {s.name: s.action for s in stages}
    for s in stages:
        s.action = _staged(s.name, original[s.name])
    status = run_stages(stages, manifest)
    _set_stage("run")
    logger.info("pipeline finished: %s", json.dumps(status))
    return 0


def _staged(name, action):
    def wrapper():
        _set_stage(name)
        return action()

    return wrapper


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def global_flags(p, default):
        # subcommands repeat the flags with SUPPRESS so they do not reset earlier values
        p.add_argument("--seed", type=int, default=default, help="random seed (overrides the config)")
        p.add_argument("--jobs", type=int, default=default, help="parallel workers")
        p.add_argument("--config", default=default, help="JSON config file")
        p.add_argument("-v", "--verbose", action="store_true", default=False if default is None else default)
        return p

    common = global_flags(argparse.ArgumentParser(add_help=False), argparse.SUPPRESS)
    parser = global_flags(argparse.ArgumentParser(prog="jsvuln", description=__doc__.splitlines()[0]), None)
    parser.add_argument("--version", action="version", version=f"jsvuln {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="normalize an advisory dump")
    p.add_argument("--source", required=True, choices=("nsp", "snyk"))
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    def client_args(p):
        p.add_argument("--mode", choices=("live", "fixture"), default="live")
        p.add_argument("--fixtures", help="fixture directory for --mode fixture")
        p.add_argument("--cache", help="response cache directory for --mode live")

    p = sub.add_parser("resolve", parents=[common], help="find fixing commits and patches")
    p.add_argument("--advisories", required=True)
    client_args(p)
    p.add_argument("--decisions", help="review decisions to apply")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("review-export", parents=[common], help="write the manual review queue")
    p.add_argument("--resolutions", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_review_export)

    p = sub.add_parser("review-import", parents=[common], help="apply review decisions")
    p.add_argument("--resolutions", required=True)
    p.add_argument("--decisions", required=True)
    client_args(p)
    p.add_argument("--out", help="output directory (default: rewrite --resolutions)")
    p.set_defaults(func=cmd_review_import)

    p = sub.add_parser("build-dataset", parents=[common], help="label functions and write the CSV")
    p.add_argument("--resolutions", required=True)
    p.add_argument("--snapshots", required=True, help="snapshot root (<owner>/<repo>/<sha>/)")
    p.add_argument("--download", action="store_true", help="fetch missing snapshots from GitHub")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("analyze", parents=[common], help="print per-function metrics as JSON lines")
    p.add_argument("--file", required=True)
    p.add_argument("--name", help="path to report for the file (default: its base name)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", parents=[common], help="grid search one algorithm")
    p.add_argument("--dataset", required=True)
    p.add_argument("--algo", required=True, choices=ALGORITHMS)
    p.add_argument("--resample", default="none", help="none | over:R | under:R with R in 0.25,0.5,0.75,1")
    p.add_argument("--grid", help="JSON grid file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", parents=[common], help="all algorithms x all resampling strategies")
    p.add_argument("--dataset", required=True)
    p.add_argument("--algos", help="comma-separated subset")
    p.add_argument("--no-rand", action="store_true", help="skip the random-label runs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("rand-check", parents=[common], help="grid search on randomly reassigned labels")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rand_check)

    p = sub.add_parser("report", parents=[common], help="F-measure grid from long-form results")
    p.add_argument("--results", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", parents=[common], help="run the whole pipeline from a config")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    try:
        args.config_data, args.config_base = load_config(args.config)
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        return args.func(args)
    except (ConfigError, HyperparameterError) as exc:
        logger.error("configuration error: %s", exc)
        return 2
    except StageError as exc:
        logger.error("stage %s failed: %s", exc.stage, exc, extra={"stage": exc.stage})
        return 1
    except (
        OSError,
        IngestError,
        GitHubError,
        ReviewError,
        LexError,
        ExtractionError,
        ValueError,
        json.JSONDecodeError,
    ) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
