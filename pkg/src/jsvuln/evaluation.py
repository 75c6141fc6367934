"""Cross-validation protocol, re-sampling, grid search and result tables.

Rows are dealt into ten stratified blocks. Fold ``i`` tests on block ``i``,
selects hyper-parameters on block ``i + 1`` and trains on the other eight.
Confusion matrices are pooled over the folds before any metric is computed.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import statistics
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Callable

import numpy as np
from joblib import Parallel, delayed

from jsvuln.ml.core import ALGORITHMS, DEFAULTS, HyperparameterError, ModelSpec, predict, train
from jsvuln.ml.scoring import confusion, f_measure, mcc, precision, recall

logger = logging.getLogger(__name__)

RATIOS = (0.25, 0.5, 0.75, 1.0)
STRATEGIES = ("none", "over", "under")
CLASSIFIERS = tuple(a for a in ALGORITHMS if a != "zeror")

DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    "knn": {"k": [1, 3, 5, 9, 15]},
    "tree": {"max_depth": [4, 8, 16, None], "min_samples_split": [2, 10]},
    "forest": {"n_trees": [50, 100], "max_depth": [8, 16, None]},
    "svm": {"C": [0.1, 1.0, 10.0]},
    "logistic": {"l2": [0.0, 0.01, 0.1]},
    "linear": {},
    "bayes": {},
    "dnn_s": {"hidden": [[32], [64, 32]], "lr": [0.1, 0.3], "epochs": [20, 50]},
    "dnn_c": {"hidden": [[32], [64, 32]], "lr": [0.1, 0.3]},
    "zeror": {},
}


class ConfigError(ValueError):
    pass


# -- results -----------------------------------------------------------------


@dataclass(frozen=True)
class ResamplingSpec:
    strategy: str = "none"
    ratio: float | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown resampling strategy {self.strategy!r}")
        if self.strategy == "none":
            if self.ratio is not None:
                raise ConfigError("strategy 'none' takes no ratio")
        elif self.ratio not in RATIOS:
            raise ConfigError(f"ratio must be one of {RATIOS}, got {self.ratio!r}")

    @classmethod
    def parse(cls, text: str) -> ResamplingSpec:
        """Read ``none``, ``over:0.5`` or ``under:1``."""
        strategy, _, ratio = text.strip().lower().partition(":")
        if strategy == "none":
            return cls("none") if not ratio else cls("none", float(ratio))
        try:
            return cls(strategy, float(ratio))
        except ValueError as exc:
            raise ConfigError(f"bad resampling {text!r}") from exc

    @property
    def label(self) -> str:
        """Column name in the result grid: ``None``, ``over25`` ... ``under100``."""
        if self.strategy == "none":
            return "None"
        return f"{self.strategy}{round(self.ratio * 100)}"


ALL_RESAMPLINGS = (ResamplingSpec(),) + tuple(
    ResamplingSpec(s, r) for s in ("over", "under") for r in RATIOS
)
GRID_COLUMNS = tuple(r.label for r in ALL_RESAMPLINGS) + ("Rand",)


@dataclass(frozen=True)
class EvalResult:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f_measure: float
    mcc: float
    spec: ModelSpec | None = None
    resampling: str = "None"

    @classmethod
    def from_counts(cls, tp, fp, tn, fn, spec=None, resampling="None") -> EvalResult:
        c = (tp, fp, tn, fn)
        return cls(*c, precision(*c), recall(*c), f_measure(*c), mcc(*c), spec, resampling)

    def to_row(self) -> dict:
        return {
            "algorithm": self.spec.algorithm if self.spec else "",
            "hyperparams": self.spec.label() if self.spec else "",
            "resampling": self.resampling,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f_measure": self.f_measure,
            "mcc": self.mcc,
        }


def aggregate(counts: list[tuple[int, int, int, int]], mode: str, spec=None, resampling="None") -> EvalResult:
    """Combine per-fold confusion counts, pooled (default) or by averaging metrics."""
    total = tuple(int(sum(c[i] for c in counts)) for i in range(4))
    if mode == "pooled":
        return EvalResult.from_counts(*total, spec=spec, resampling=resampling)
    if mode == "average":
        return EvalResult(
            *total,
            float(np.mean([precision(*c) for c in counts])),
            float(np.mean([recall(*c) for c in counts])),
            float(np.mean([f_measure(*c) for c in counts])),
            float(np.mean([mcc(*c) for c in counts])),
            spec,
            resampling,
        )
    raise ConfigError(f"unknown aggregation {mode!r}")


# -- folds and re-sampling ---------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    blocks: tuple[np.ndarray, ...]
    seed: int

    @property
    def fold_count(self) -> int:
        return len(self.blocks)

    def fold(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(train, dev, test) row indices of fold ``i``."""
        k = self.fold_count
        dev_block = (i + 1) % k
        train = np.sort(np.concatenate([b for j, b in enumerate(self.blocks) if j not in (i, dev_block)]))
        return train, self.blocks[dev_block], self.blocks[i]


def make_folds(n: int, labels, seed: int, fold_count: int = 10) -> SplitPlan:
    """Deal shuffled positives, then shuffled negatives, round-robin into blocks."""
    if n < fold_count:
        raise ValueError(f"need at least {fold_count} rows for {fold_count} folds, got {n}")
    labels = np.asarray(labels).astype(int)
    if labels.shape != (n,):
        raise ValueError("one label per row expected")
    rng = np.random.default_rng(seed)
    pos = rng.permutation(np.flatnonzero(labels == 1))
    neg = rng.permutation(np.flatnonzero(labels == 0))
    order = np.concatenate([pos, neg])
    slot = np.arange(n) % fold_count
    blocks = tuple(np.sort(order[slot == b]) for b in range(fold_count))
    return SplitPlan(blocks, seed)


def round_half_up(x: float) -> int:
    return int(Decimal(repr(x)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def resample(X, y, spec: ResamplingSpec, rng: np.random.Generator):
    """Random over- or under-sampling of a training partition."""
    X = np.asarray(X)
    y = np.asarray(y).astype(int)
    if spec.strategy == "none":
        return X, y
    counts = np.bincount(y, minlength=2)
    minority = int(np.argmin(counts)) if counts[0] != counts[1] else 1
    majority = 1 - minority
    n_min, n_maj = int(counts[minority]), int(counts[majority])
    if n_min == 0:
        raise ValueError("cannot resample: the minority class is empty")
    min_idx = np.flatnonzero(y == minority)
    maj_idx = np.flatnonzero(y == majority)
    if spec.strategy == "over":
        target = round_half_up(spec.ratio * n_maj)
        if n_min >= target:
            return X, y
        extra = rng.choice(min_idx, size=target - n_min, replace=True)
        keep = np.concatenate([np.arange(len(y)), extra])
    else:
        target = round_half_up(n_min / spec.ratio)
        if n_maj <= target:
            return X, y
        kept_maj = rng.choice(maj_idx, size=target, replace=False)
        keep = np.sort(np.concatenate([min_idx, kept_maj]))
    return X[keep], y[keep]


# -- grid search -------------------------------------------------------------


def expand_grid(algorithm: str, grid: dict[str, list] | None) -> list[ModelSpec]:
    """Every combination of ``grid`` in row-major order of its keys."""
    grid = grid or {}
    keys = list(grid)
    for key in keys:
        if not isinstance(grid[key], list) or not grid[key]:
            raise ConfigError(f"grid entry {algorithm}.{key} must be a non-empty list")
    try:
        return [ModelSpec(algorithm, dict(zip(keys, combo))) for combo in itertools.product(*(grid[k] for k in keys))]
    except HyperparameterError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class ComboResult:
    spec: ModelSpec
    dev: EvalResult | None
    test: EvalResult | None
    error: str | None = None


@dataclass
class SearchResult:
    algorithm: str
    resampling: ResamplingSpec
    best: ComboResult | None
    table: list[ComboResult] = field(default_factory=list)


Trainer = Callable[..., Callable[[np.ndarray], np.ndarray]]


def default_trainer(spec: ModelSpec, X, y, seed: int, dev):
    model = train(spec, X, y, seed=seed, dev=dev)
    return lambda rows: predict(model, rows)


def fold_seeds(seed: int, fold: int) -> tuple[np.random.Generator, int]:
    """Independent streams for re-sampling and for training in one fold."""
    ss = np.random.SeedSequence([seed, fold])
    resample_ss, train_ss = ss.spawn(2)
    return np.random.default_rng(resample_ss), int(train_ss.generate_state(1)[0])


def _run_unit(spec, X, y, plan, fold, resampling, seed, trainer):
    train_idx, dev_idx, test_idx = plan.fold(fold)
    rs_rng, train_seed = fold_seeds(seed, fold)
    try:
        Xtr, ytr = resample(X[train_idx], y[train_idx], resampling, rs_rng)
        model = trainer(spec, Xtr, ytr, train_seed, (X[dev_idx], y[dev_idx]))
        return confusion(y[dev_idx], model(X[dev_idx])), confusion(y[test_idx], model(X[test_idx])), None
    except Exception as exc:  # a failing cell drops its combination only
        return None, None, f"{type(exc).__name__}: {exc}"


def select_best(table: list[ComboResult]) -> ComboResult | None:
    """Highest dev F, then highest dev precision, then earliest in the grid."""
    best = None
    for combo in table:
        if combo.error is not None:
            continue
        if best is None or (combo.dev.f_measure, combo.dev.precision) > (best.dev.f_measure, best.dev.precision):
            best = combo
    return best


def grid_search(
    algorithm: str,
    grid: dict[str, list] | None,
    X,
    y,
    plan: SplitPlan,
    resampling: ResamplingSpec = ResamplingSpec(),
    seed: int = 0,
    jobs: int = 1,
    mode: str = "pooled",
    trainer: Trainer = default_trainer,
) -> SearchResult:
    specs = expand_grid(algorithm, grid)
    if not specs:
        raise ConfigError(f"empty grid for {algorithm}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    units = [(c, f) for c in range(len(specs)) for f in range(plan.fold_count)]
    if jobs > 1:
        outputs = Parallel(n_jobs=jobs)(
            delayed(_run_unit)(specs[c], X, y, plan, f, resampling, seed, trainer) for c, f in units
        )
    else:
        outputs = [_run_unit(specs[c], X, y, plan, f, resampling, seed, trainer) for c, f in units]
    table = []
    for c, spec in enumerate(specs):
        cells = outputs[c * plan.fold_count : (c + 1) * plan.fold_count]
        errors = [err for _, _, err in cells if err is not None]
        if errors:
            logger.warning("%s %s (%s) failed: %s", algorithm, spec.label(), resampling.label, errors[0])
            table.append(ComboResult(spec, None, None, errors[0]))
            continue
        dev = aggregate([d for d, _, _ in cells], mode, spec, resampling.label)
        test = aggregate([t for _, t, _ in cells], mode, spec, resampling.label)
        table.append(ComboResult(spec, dev, test))
    return SearchResult(algorithm, resampling, select_best(table), table)


def zeror_baseline(y, plan: SplitPlan) -> EvalResult:
    """Always-vulnerable predictor scored over the test blocks."""
    y = np.asarray(y).astype(int)
    counts = [confusion(y[plan.fold(i)[2]], np.ones(len(plan.fold(i)[2]), dtype=int)) for i in range(plan.fold_count)]
    return aggregate(counts, "pooled", ModelSpec("zeror"), "None")


def shuffle_labels(y, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).permutation(np.asarray(y).astype(int))


def random_label_check(
    X,
    y,
    seed: int,
    algorithms=CLASSIFIERS,
    grids: dict | None = None,
    jobs: int = 1,
    mode: str = "pooled",
    fold_count: int = 10,
) -> dict[str, SearchResult]:
    """Grid search every algorithm again on randomly reassigned labels."""
    grids = DEFAULT_GRIDS if grids is None else grids
    y_rand = shuffle_labels(y, seed)
    plan = make_folds(len(y_rand), y_rand, seed, fold_count)
    out = {}
    for algo in algorithms:
        res = grid_search(algo, grids.get(algo, {}), X, y_rand, plan, ResamplingSpec(), seed, jobs, mode)
        out[algo] = res
        logger.info("rand %s: F=%.3f", algo, res.best.test.f_measure if res.best else float("nan"))
    return out


def sweep(
    X,
    y,
    seed: int,
    algorithms=CLASSIFIERS,
    resamplings=ALL_RESAMPLINGS,
    grids: dict | None = None,
    jobs: int = 1,
    mode: str = "pooled",
    fold_count: int = 10,
) -> list[SearchResult]:
    grids = DEFAULT_GRIDS if grids is None else grids
    y = np.asarray(y).astype(int)
    plan = make_folds(len(y), y, seed, fold_count)
    results = []
    for algo in algorithms:
        for rs in resamplings:
            res = grid_search(algo, grids.get(algo, {}), X, y, plan, rs, seed, jobs, mode)
            logger.info("%s %s: F=%.3f", algo, rs.label, res.best.test.f_measure if res.best else float("nan"))
            results.append(res)
    return results


# -- reporting ---------------------------------------------------------------

LONG_COLUMNS = ("algorithm", "hyperparams", "resampling", "tp", "fp", "tn", "fn", "precision", "recall", "f_measure", "mcc")


def best_results(searches: list[SearchResult], rand: dict[str, SearchResult] | None = None) -> list[EvalResult]:
    """Selected test results, with random-label runs tagged ``Rand``."""
    out = [s.best.test for s in searches if s.best is not None]
    for res in (rand or {}).values():
        if res.best is not None:
            t = res.best.test
            out.append(EvalResult(t.tp, t.fp, t.tn, t.fn, t.precision, t.recall, t.f_measure, t.mcc, t.spec, "Rand"))
    return out


def f_grid(results: list[EvalResult]) -> tuple[list[str], dict[str, dict[str, float]], dict[str, float]]:
    """Algorithm x column F-measures and the column-wise medians.

    Only the nine classifiers enter the grid; the ZeroR baseline is kept out
    of the medians.
    """
    algos = [a for a in CLASSIFIERS if any(r.spec and r.spec.algorithm == a for r in results)]
    cells: dict[str, dict[str, float]] = {a: {} for a in algos}
    for r in results:
        if r.spec and r.spec.algorithm in cells:
            cells[r.spec.algorithm][r.resampling] = r.f_measure
    medians = {}
    for col in GRID_COLUMNS:
        values = [cells[a][col] for a in algos if col in cells[a]]
        if values:
            medians[col] = statistics.median(values)
    return algos, cells, medians


def _fmt(value) -> str:
    return f"{value:.6f}" if isinstance(value, float) else str(value)


def report(results: list[EvalResult], out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``f_grid.csv`` (with a Median row) and ``results_long.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid_path = out_dir / "f_grid.csv"
    long_path = out_dir / "results_long.csv"
    algos, cells, medians = f_grid(results)
    with grid_path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("algorithm",) + GRID_COLUMNS)
        for a in algos:
            w.writerow([a] + [_fmt(cells[a][c]) if c in cells[a] else "" for c in GRID_COLUMNS])
        if algos:
            w.writerow(["Median"] + [_fmt(medians[c]) if c in medians else "" for c in GRID_COLUMNS])
    write_long_results(results, long_path)
    return grid_path, long_path


def write_long_results(results: list[EvalResult], path: str | Path) -> Path:
    """One row per result with counts and P/R/F/MCC."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LONG_COLUMNS)
        for r in results:
            row = r.to_row()
            w.writerow([_fmt(row[c]) for c in LONG_COLUMNS])
    return path


SEARCH_COLUMNS = (
    "algorithm", "resampling", "hyperparams", "selected", "error",
    "dev_precision", "dev_recall", "dev_f_measure", "dev_mcc",
    "test_tp", "test_fp", "test_tn", "test_fn",
    "test_precision", "test_recall", "test_f_measure", "test_mcc",
)  # fmt: skip


def write_search_table(searches: list[SearchResult], path: str | Path) -> Path:
    """Every evaluated combination with its dev and test scores."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SEARCH_COLUMNS)
        for s in searches:
            for combo in s.table:
                row = [s.algorithm, s.resampling.label, combo.spec.label(), int(combo is s.best), combo.error or ""]
                if combo.error is None:
                    d, t = combo.dev, combo.test
                    row += [d.precision, d.recall, d.f_measure, d.mcc, t.tp, t.fp, t.tn, t.fn]
                    row += [t.precision, t.recall, t.f_measure, t.mcc]
                else:
                    row += [""] * 12
                w.writerow([_fmt(v) for v in row])
    return path


def read_long_results(path: str | Path) -> list[EvalResult]:
    out = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            spec = ModelSpec(rec["algorithm"], json.loads(rec["hyperparams"] or "{}"))
            out.append(
                EvalResult(
                    int(rec["tp"]), int(rec["fp"]), int(rec["tn"]), int(rec["fn"]),
                    float(rec["precision"]), float(rec["recall"]), float(rec["f_measure"]), float(rec["mcc"]),
                    spec, rec["resampling"],
                )
            )  # fmt: skip
    return out


# -- configuration -----------------------------------------------------------


@dataclass
class EvalConfig:
    seed: int = 0
    fold_count: int = 10
    mode: str = "pooled"
    algorithms: tuple[str, ...] = CLASSIFIERS
    grids: dict = field(default_factory=lambda: dict(DEFAULT_GRIDS))
    resamplings: tuple[ResamplingSpec, ...] = ALL_RESAMPLINGS
    rand_check: bool = True


def load_eval_config(data: dict | None) -> EvalConfig:
    """Read the ``evaluation`` section of a JSON config."""
    data = data or {}
    unknown = set(data) - {"seed", "fold_count", "mode", "algorithms", "grids", "resamplings", "rand_check"}
    if unknown:
        raise ConfigError(f"unknown evaluation settings: {sorted(unknown)}")
    cfg = EvalConfig()
    cfg.seed = int(data.get("seed", cfg.seed))
    cfg.fold_count = int(data.get("fold_count", cfg.fold_count))
    if cfg.fold_count < 3:
        raise ConfigError("fold_count must be at least 3")
    cfg.mode = data.get("mode", cfg.mode)
    if cfg.mode not in ("pooled", "average"):
        raise ConfigError(f"mode must be 'pooled' or 'average', got {cfg.mode!r}")
    algos = tuple(data.get("algorithms", cfg.algorithms))
    for a in algos:
        if a not in DEFAULTS:
            raise ConfigError(f"unknown algorithm {a!r}")
    cfg.algorithms = algos
    if "resamplings" in data:
        cfg.resamplings = tuple(ResamplingSpec.parse(r) for r in data["resamplings"])
    cfg.rand_check = bool(data.get("rand_check", cfg.rand_check))
    for algo, grid in (data.get("grids") or {}).items():
        if algo not in DEFAULTS:
            raise ConfigError(f"grid for unknown algorithm {algo!r}")
        expand_grid(algo, grid)
        cfg.grids[algo] = grid
    return cfg
