"""
Ablation Runner
Trains the feature/scheme grid over several seeds and aggregates mean, deviation and t-test p-values
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from tqdm import tqdm

from messyseg.checkpoint import save_checkpoint
from messyseg.config import ModelConfig
from messyseg.corpus import CorpusSplit, EntityType
from messyseg.errors import UsageError
from messyseg.evaluation import compare_runs, convert_scheme, evaluate_corpus
from messyseg.model import train

logger = logging.getLogger(__name__)

METRICS = ["pk", "precision", "recall", "f1"]


@dataclass(frozen=True)
class GridCell:
    """One feature/scheme combination"""

    use_contextual: bool = True
    use_static: bool = True
    use_distance: bool = True
    scheme: str = "bio"

    @property
    def features(self) -> str:
        missing = [
            name
            for name, enabled in (
                ("contextual", self.use_contextual),
                ("static", self.use_static),
                ("distance", self.use_distance),
            )
            if not enabled
        ]
        return "all" if not missing else "+".join(f"no-{name}" for name in missing)

    @property
    def name(self) -> str:
        return f"{self.features}/{self.scheme}"


BASELINE = GridCell()


def default_grid() -> List[GridCell]:
    """All features and the three single-feature ablations, under both schemes"""
    features = [(True, True, True), (False, True, True), (True, False, True), (True, True, False)]
    return [GridCell(c, s, d, scheme) for c, s, d in features for scheme in ("bio", "bi")]


def full_grid() -> List[GridCell]:
    """Every on/off combination that keeps at least one embedding source"""
    return [
        GridCell(c, s, d, scheme)
        for c in (True, False)
        for s in (True, False)
        for d in (True, False)
        for scheme in ("bio", "bi")
        if c or s
    ]


def parse_grid(grid: str) -> List[GridCell]:
    """
    Parse a grid given on the command line

    Accepts "default", "full", or comma-separated cell names such as
    "all/bio,no-contextual/bio,no-static+no-distance/bi".
    """
    if grid == "default":
        return default_grid()
    if grid == "full":
        return full_grid()
    cells = []
    for name in grid.split(","):
        features, _, scheme = name.strip().partition("/")
        if scheme not in ("bio", "bi"):
            raise UsageError(f"grid cell {name!r} needs a /bio or /bi scheme suffix")
        removed = set() if features == "all" else {part.removeprefix("no-") for part in features.split("+")}
        unknown = removed - {"contextual", "static", "distance"}
        if unknown:
            raise UsageError(f"unknown features in grid cell {name!r}: {sorted(unknown)}")
        cells.append(GridCell("contextual" not in removed, "static" not in removed, "distance" not in removed, scheme))
    return cells


@dataclass
class RunTask:
    cell: GridCell
    seed: int
    config: ModelConfig
    split: CorpusSplit
    out_dir: Optional[str] = None


@dataclass
class RunOutcome:
    cell: GridCell
    seed: int
    metrics: Dict[str, float] = field(default_factory=dict)
    best_epoch: int = 0
    protocol: str = ""
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def cell_config(base: ModelConfig, cell: GridCell, seed: int) -> ModelConfig:
    values = base.model_dump()
    values.update(
        use_contextual=cell.use_contextual,
        use_static=cell.use_static,
        use_distance=cell.use_distance,
        scheme=cell.scheme,
        seed=seed,
    )
    return ModelConfig(**values)


def run_cell(task: RunTask) -> RunOutcome:
    """Train and test one (cell, seed); errors are captured in the outcome"""
    try:
        config = task.config
        train_docs = convert_scheme(task.split.train, config.scheme, config.segment_class)
        dev_docs = convert_scheme(task.split.dev, config.scheme, config.segment_class)
        result = train(train_docs, dev_docs, config)
        predictions = [result.model.predict(doc).labels for doc in task.split.test]
        report = evaluate_corpus(
            task.split.test,
            predictions,
            config.segment_class,
            metadata={"cell": task.cell.name, "seed": task.seed, "protocol": config.protocol},
        )
        if task.out_dir:
            run_dir = Path(task.out_dir) / task.cell.name.replace("/", "_") / f"seed-{task.seed}"
            save_checkpoint(result.checkpoint, str(run_dir / "model.ckpt"))
            report.write(str(run_dir / "report.tsv"))
        aggregate = report.aggregate
        metrics = {
            "pk": report.pk_mean,
            "precision": aggregate.precision,
            "recall": aggregate.recall,
            "f1": aggregate.f1,
        }
        for entity_type, counts in report.counts.items():
            metrics[f"f1_{entity_type.value}"] = counts.f1
        return RunOutcome(task.cell, task.seed, metrics, result.best_epoch, config.protocol)
    except Exception as e:
        logger.error(f"Error in ablation run {task.cell.name} seed {task.seed}: {str(e)}")
        return RunOutcome(task.cell, task.seed, error=f"{type(e).__name__}: {str(e)}")


@dataclass
class AblationReport:
    runs: pd.DataFrame
    summary: pd.DataFrame

    def write(self, out_dir: str) -> Path:
        target = Path(out_dir)
        target.mkdir(parents=True, exist_ok=True)
        self.runs.to_csv(target / "runs.tsv", sep="\t", index=False, float_format="%.6f")
        self.summary.to_csv(target / "summary.tsv", sep="\t", index=False, float_format="%.6f")
        logger.info(f"Wrote ablation report to {target}")
        return target / "summary.tsv"


def _p_value(runs: pd.DataFrame, cell: str, metric: str) -> float:
    ok = runs[runs["error"].isna()]
    baseline = ok.loc[ok["cell"] == BASELINE.name, metric].dropna().tolist()
    other = ok.loc[ok["cell"] == cell, metric].dropna().tolist()
    if len(baseline) < 2 or len(other) < 2:
        return math.nan
    return compare_runs(baseline, other)[1]


def summarize(outcomes: Sequence[RunOutcome], grid: Sequence[GridCell]) -> AblationReport:
    """Per-run table plus one summary row per grid cell, in grid order"""
    per_type = [f"f1_{t.value}" for t in EntityType]
    rows = []
    for outcome in outcomes:
        row: Dict[str, Any] = {
            "cell": outcome.cell.name,
            "features": outcome.cell.features,
            "scheme": outcome.cell.scheme,
            "seed": outcome.seed,
            "protocol": outcome.protocol,
            "best_epoch": outcome.best_epoch,
            "error": outcome.error,
        }
        for metric in METRICS + per_type:
            row[metric] = outcome.metrics.get(metric, math.nan)
        rows.append(row)
    runs = pd.DataFrame(rows, columns=["cell", "features", "scheme", "seed", "protocol", "best_epoch", "error"] + METRICS + per_type)
    runs = runs.sort_values(["cell", "seed"], kind="stable").reset_index(drop=True)

    summary_rows = []
    for cell in grid:
        cell_runs = runs[(runs["cell"] == cell.name) & runs["error"].isna()]
        row = {
            "cell": cell.name,
            "features": cell.features,
            "scheme": cell.scheme,
            "runs": int(len(cell_runs)),
            "failed": int(((runs["cell"] == cell.name) & runs["error"].notna()).sum()),
        }
        for metric in METRICS + per_type:
            values = cell_runs[metric].dropna()
            row[f"{metric}_mean"] = float(values.mean()) if len(values) else math.nan
            row[f"{metric}_sd"] = float(values.std(ddof=1)) if len(values) > 1 else (0.0 if len(values) else math.nan)
        row["p_f1_vs_baseline"] = _p_value(runs, cell.name, "f1")
        row["p_pk_vs_baseline"] = _p_value(runs, cell.name, "pk")
        summary_rows.append(row)
    return AblationReport(runs, pd.DataFrame(summary_rows))


def run_ablation(
    split: CorpusSplit,
    base_config: ModelConfig,
    grid: Optional[Sequence[GridCell]] = None,
    seeds: Sequence[int] = (0, 1, 2),
    out_dir: Optional[str] = None,
    workers: int = 1,
    progress: bool = False,
) -> AblationReport:
    """
    Train every grid cell under every seed and aggregate the test results

    Args:
        split: Train/dev/test documents (gold labels in BIO)
        base_config: Settings shared by every run
        grid: Cells to train; defaults to default_grid()
        seeds: Model seeds, one run per cell and seed
        out_dir: Where each run writes its checkpoint and report
        workers: Worker processes (1 runs in-process)
        progress: Show a progress bar

    Returns:
        AblationReport with one summary row per cell
    """
    grid = list(grid) if grid is not None else default_grid()
    if not grid:
        raise UsageError("ablation grid is empty")
    if not split.test:
        raise UsageError("ablation needs a nonempty test split")
    tasks = [
        RunTask(cell, seed, cell_config(base_config, cell, seed), split, out_dir)
        for cell in grid
        for seed in seeds
    ]
    logger.info(f"Running {len(tasks)} ablation runs ({len(grid)} cells x {len(seeds)} seeds, {workers} workers)")

    outcomes: List[RunOutcome] = []
    with tqdm(total=len(tasks), desc="ablation", disable=not progress) as bar:
        if workers <= 1:
            for task in tasks:
                outcomes.append(_log_outcome(run_cell(task)))
                bar.update(1)
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(run_cell, task) for task in tasks]
                for future in as_completed(futures):
                    outcomes.append(_log_outcome(future.result()))
                    bar.update(1)
    return summarize(outcomes, grid)


def _log_outcome(outcome: RunOutcome) -> RunOutcome:
    if outcome.ok:
        logger.info(
            f"Finished {outcome.cell.name} seed {outcome.seed}: "
            f"P_k={outcome.metrics['pk']:.4f} F1={outcome.metrics['f1']:.4f}"
        )
    return outcome
