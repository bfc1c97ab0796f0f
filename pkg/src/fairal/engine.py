"""Passive, active and fair active learning loops.

One iteration fits the base model on the labeled set, evaluates it on the
held-out test set, checks the stopping rule, scores the pool and moves the
top-``b`` instances (labeled by the oracle) from the pool to the train set.
The fair loop additionally calibrates a :class:`FairPostProcessor` on the
current pool after every fit, evaluates the fair model too, and lets the
strategy score the pool through the fair model's distributions.

Randomness for data generation, splitting, model fitting, strategy scoring
and fairness jitter comes from independent streams of one
``SeedSequence([config.seed, simulation])``, so turning fairness on never
perturbs the other streams.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .datasets import (
    Dataset,
    SplitSpec,
    gen_two_gaussians,
    gen_two_gaussians_unfair,
    load_csv,
    make_splits,
)
from .errors import ColdStartFailure, ShapeMismatch
from .fairness import FairPostProcessor
from .metrics import EvaluationReport, evaluate
from .models import ModelConfig, fit_arrays
from .sampling import PoolContext, QueryStrategy, entropy_score, select_batch

__all__ = [
    "DatasetSpec",
    "StoppingRule",
    "FairnessConfig",
    "ExperimentConfig",
    "LoopState",
    "RunTrace",
    "AggregateCurve",
    "check_stopping",
    "run_active_learning",
    "run_passive_learning",
    "run_fair_active_learning",
    "run_simulations",
    "aggregate_runs",
    "labels_to_reach",
]

log = logging.getLogger(__name__)

COLD_START_ATTEMPTS = 10
STOPPING_KINDS = ("budget", "max_confidence", "min_error", "unfairness_plateau")


@dataclass(frozen=True)
class DatasetSpec:
    """Where the data comes from and how it is split.

    ``seed=None`` regenerates synthetic data for every simulation from the
    simulation's seed; an integer pins one dataset for all simulations.
    """

    kind: str = "two_gaussians"
    n_per_class: int = 1000
    mean_0: tuple = (-2.0, 0.0)
    mean_1: tuple = (2.0, 0.0)
    variance: float = 1.0
    p: float = 0.9
    path: str | None = None
    feature_columns: tuple = ()
    label_column: str | None = None
    sensitive_column: str | None = None
    categorical_columns: tuple = ()
    initial_train_size: int = 10
    test_size: int = 500
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("two_gaussians", "two_gaussians_unfair", "csv"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "csv" and (self.path is None or self.label_column is None):
            raise ValueError("csv datasets need 'path' and 'label_column'")
        SplitSpec(self.initial_train_size, self.test_size)

    def load(self, seed=0) -> Dataset:
        seed = self.seed if self.seed is not None else seed
        if self.kind == "two_gaussians":
            return gen_two_gaussians(self.n_per_class, self.mean_0, self.mean_1, self.variance, seed)
        if self.kind == "two_gaussians_unfair":
            return gen_two_gaussians_unfair(self.p, seed, self.n_per_class, self.mean_0,
                                            self.mean_1, self.variance)
        return load_csv(self.path, self.feature_columns, self.label_column,
                        self.sensitive_column, self.categorical_columns, standardize=False)


@dataclass(frozen=True)
class StoppingRule:
    """Extra stopping rule on top of the iteration budget and pool exhaustion.

    ``max_confidence`` stops once every pool entropy is below ``threshold``;
    ``min_error`` once the test error is at most ``target``;
    ``unfairness_plateau`` once the (fair model's) test unfairness has not
    improved for ``patience`` consecutive iterations.
    """

    kind: str = "budget"
    threshold: float = 0.001
    target: float = 0.05
    patience: int = 5

    def __post_init__(self):
        if self.kind not in STOPPING_KINDS:
            raise ValueError(f"unknown stopping rule {self.kind!r}")
        if self.threshold < 0 or not 0 <= self.target <= 1 or self.patience < 1:
            raise ValueError("stopping thresholds out of range")


@dataclass(frozen=True)
class FairnessConfig:
    jitter_u: float = 1e-5
    method: str = "subgradient"
    n_iterations: int = 2000
    step0: float = 1.0
    n_restarts: int = 8
    temperature: float = 1e-3
    identity: bool = False

    def optimizer_kwargs(self):
        return dict(method=self.method, n_iterations=self.n_iterations, step0=self.step0,
                    n_restarts=self.n_restarts, temperature=self.temperature)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    strategy: QueryStrategy = field(default_factory=QueryStrategy)
    batch_size: int = 3
    max_iterations: int = 20
    n_simulations: int = 1
    stopping: StoppingRule = field(default_factory=StoppingRule)
    fair: bool = False
    fairness: FairnessConfig = field(default_factory=FairnessConfig)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.n_simulations < 1 or self.max_iterations < 0:
            raise ValueError("n_simulations must be >= 1 and max_iterations >= 0")


@dataclass
class LoopState:
    iteration: int
    max_iterations: int
    pool_entropies: np.ndarray | None = None
    test_error: float | None = None
    unfairness_history: Sequence[float] = ()


def check_stopping(rule: StoppingRule, state: LoopState) -> str:
    """``"stop"`` or ``"continue"``; the iteration budget always applies."""
    if state.iteration >= state.max_iterations:
        return "stop"
    if rule.kind == "max_confidence" and state.pool_entropies is not None:
        if np.all(np.asarray(state.pool_entropies) < rule.threshold):
            return "stop"
    elif rule.kind == "min_error" and state.test_error is not None:
        if state.test_error <= rule.target:
            return "stop"
    elif rule.kind == "unfairness_plateau":
        hist = [u for u in state.unfairness_history if np.isfinite(u)]
        if len(hist) > rule.patience:
            if min(hist[-rule.patience:]) >= min(hist[:-rule.patience]):
                return "stop"
    return "continue"


@dataclass
class RunTrace:
    """Learning curves of one simulation.

    ``queried`` holds, per query round, the pool positions that were labeled.
    ``fair_reports`` is empty unless the fair loop ran.
    """

    strategy: str
    fair: bool
    seed: tuple
    base_reports: list = field(default_factory=list)
    fair_reports: list = field(default_factory=list)
    queried: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    final_train_rows: np.ndarray | None = None

    def reports(self, model="base"):
        return self.base_reports if model == "base" else self.fair_reports

    def metric(self, name, model="base"):
        return np.array([getattr(r, name) for r in self.reports(model)], dtype=np.float64)

    @property
    def queried_positions(self):
        return np.concatenate(self.queried) if self.queried else np.empty(0, dtype=np.int64)


def _standardize(X, fit_rows):
    mu = X[fit_rows].mean(axis=0)
    sd = X[fit_rows].std(axis=0)
    return (X - mu) / np.where(sd > 0, sd, 1.0)


def _initial_split(dataset, config, rng):
    spec = SplitSpec(config.dataset.initial_train_size, config.dataset.test_size)
    for attempt in range(COLD_START_ATTEMPTS):
        splits = make_splits(dataset, spec, rng)
        if len(np.unique(splits.train.y)) >= 2:
            return splits
        log.debug("single-class initial train set (attempt %d), resampling", attempt + 1)
    raise ColdStartFailure(
        f"no two-class initial train set after {COLD_START_ATTEMPTS} attempts")


def _run(config: ExperimentConfig, simulation: int, fair: bool) -> RunTrace:
    data_ss, split_ss, model_ss, strat_ss, fair_ss = np.random.SeedSequence(
        [config.seed, simulation]).spawn(5)
    dataset = config.dataset.load(int(data_ss.generate_state(1)[0]))
    if fair and not dataset.has_sensitive:
        raise ValueError("the fair loop needs a dataset with a sensitive attribute")
    K = dataset.n_classes
    splits = _initial_split(dataset, config, np.random.default_rng(split_ss))

    Z = _standardize(dataset.X, np.concatenate([splits.train_rows, splits.pool_rows]))
    if config.model.include_sensitive and dataset.has_sensitive:
        Z = np.hstack([Z, dataset.s[:, None].astype(np.float64)])
    s_all = dataset.s
    model_seed = int(model_ss.generate_state(1)[0])
    strat_rng = np.random.default_rng(strat_ss)
    fair_rng = np.random.default_rng(fair_ss)

    y_known = np.full(len(dataset), -1, dtype=np.int64)
    y_known[splits.train_rows] = splits.train.y
    train_rows = splits.train_rows.copy()
    remaining = np.arange(len(splits.pool_rows))
    test_rows = splits.test_rows
    X_test, y_test = Z[test_rows], dataset.y[test_rows]
    s_test = None if s_all is None else s_all[test_rows]

    trace = RunTrace(strategy=config.strategy.kind, fair=fair, seed=(config.seed, simulation))
    b = config.batch_size
    iteration = 0
    previous = None
    while True:
        X_tr, y_tr = Z[train_rows], y_known[train_rows]
        model = fit_arrays(config.model, X_tr, y_tr, K, seed=model_seed)
        pool_rows = splits.pool_rows[remaining]
        X_pool = Z[pool_rows]
        s_pool = None if s_all is None else s_all[pool_rows]

        base_pred = model.predict(X_test)
        trace.base_reports.append(
            evaluate(base_pred, y_test, K, iteration, len(train_rows), s_test))

        post = None
        if fair and len(remaining):
            P_pool = model.predict_proba(X_pool)
            post_seed = int(fair_rng.integers(2**32))
            if config.fairness.identity:
                post = FairPostProcessor.identity(s_pool, K, seed=post_seed)
            elif previous is not None and len(np.unique(s_pool)) < 2:
                # a drained pool can lose a group: keep the last calibration
                log.debug("pool holds one group at iteration %d, reusing lambda", iteration)
                post = previous
            else:
                post = FairPostProcessor.calibrate(P_pool, s_pool, config.fairness.jitter_u,
                                                   post_seed, **config.fairness.optimizer_kwargs())
            previous = post
            trace.lambdas.append(post.lambda_hat.copy())
            fair_pred = post.predict(model.predict_proba(X_test), s_test)
            trace.fair_reports.append(
                evaluate(fair_pred, y_test, K, iteration, len(train_rows), s_test))
        elif fair:
            # empty pool: nothing to calibrate on, keep the last post-processor's curve point
            trace.fair_reports.append(replace(trace.fair_reports[-1], iteration=iteration,
                                              n_labeled=len(train_rows)))

        if not len(remaining):
            break
        history = [r.unfairness_dp for r in trace.reports("fair" if fair else "base")]
        state = LoopState(
            iteration=iteration,
            max_iterations=config.max_iterations,
            pool_entropies=(entropy_score(model.predict_proba(X_pool))
                            if config.stopping.kind == "max_confidence" else None),
            test_error=1.0 - trace.base_reports[-1].accuracy,
            unfairness_history=history,
        )
        if check_stopping(config.stopping, state) == "stop":
            break

        ctx = PoolContext(
            model=model, model_config=replace(config.model, seed=model_seed),
            X_pool=X_pool, pool_indices=remaining, X_train=X_tr, y_train=y_tr,
            n_classes=K, s_pool=s_pool, adapt=post.adapt if post is not None else None,
        )
        b_eff = min(b, len(remaining))
        chosen = select_batch(config.strategy.score(ctx, strat_rng, min_candidates=b_eff), b_eff)
        for pos in chosen:
            y_known[splits.pool_rows[pos]] = splits.oracle.query(pos)
        trace.queried.append(chosen)
        train_rows = np.union1d(train_rows, splits.pool_rows[chosen])
        remaining = np.setdiff1d(remaining, chosen, assume_unique=True)
        iteration += 1

    trace.final_train_rows = train_rows
    return trace


def run_active_learning(config: ExperimentConfig, simulation: int = 0) -> RunTrace:
    """One simulation of the plain active learning loop."""
    return _run(config, simulation, fair=False)


def run_passive_learning(config: ExperimentConfig, simulation: int = 0) -> RunTrace:
    """Passive learning: the active loop with uniformly random queries."""
    return _run(replace(config, strategy=QueryStrategy(kind="random")), simulation, fair=False)


def run_fair_active_learning(config: ExperimentConfig, simulation: int = 0) -> RunTrace:
    """One simulation of the fair active learning loop."""
    return _run(config, simulation, fair=True)


def _run_one(args):
    config, simulation, fair = args
    return _run(config, simulation, fair)


def run_simulations(config: ExperimentConfig, fair: bool | None = None, jobs: int = 1) -> list:
    """``config.n_simulations`` independent runs, in simulation order."""
    fair = config.fair if fair is None else fair
    tasks = [(config, i, fair) for i in range(config.n_simulations)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_one, tasks))
    return [_run_one(t) for t in tasks]


METRICS = ("n_labeled", "accuracy", "f1", "unfairness_dp", "unfairness_rate")


@dataclass
class AggregateCurve:
    iterations: np.ndarray
    mean: dict
    std: dict
    n_runs: int


def aggregate_runs(traces, model="base", truncate=False) -> AggregateCurve:
    """Pointwise mean and population standard deviation across runs.

    Traces must share their iteration structure; ``truncate=True`` cuts all
    of them to the shortest one instead of raising :class:`ShapeMismatch`.
    NaN entries (undefined metrics) are ignored in the averages.
    """
    traces = list(traces)
    if not traces:
        raise ShapeMismatch("no traces to aggregate")
    lengths = {len(t.reports(model)) for t in traces}
    if len(lengths) > 1 and not truncate:
        raise ShapeMismatch(f"traces have different lengths {sorted(lengths)}")
    n = min(lengths)
    if n == 0:
        raise ShapeMismatch(f"traces hold no {model!r} reports")
    mean, std = {}, {}
    for name in METRICS:
        M = np.array([t.metric(name, model)[:n] for t in traces])
        with np.errstate(invalid="ignore"):
            with_nan = np.isnan(M)
            count = (~with_nan).sum(axis=0)
            filled = np.where(with_nan, 0.0, M)
            mu = np.where(count > 0, filled.sum(axis=0) / np.maximum(count, 1), np.nan)
            var = np.where(with_nan, 0.0, (M - mu) ** 2).sum(axis=0) / np.maximum(count, 1)
        mean[name] = mu
        std[name] = np.where(count > 0, np.sqrt(var), np.nan)
    return AggregateCurve(iterations=np.arange(n), mean=mean, std=std, n_runs=len(traces))


def labels_to_reach(trace: RunTrace, target: float, metric="accuracy", model="base"):
    """Labeled count at the first report with ``metric >= target`` (None if never)."""
    for r in trace.reports(model):
        if getattr(r, metric) >= target:
            return r.n_labeled
    return None
