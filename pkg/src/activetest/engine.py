"""Active-testing engine: select, vet, refit, estimate, repeat.

A run owns one or more *tasks*, each a pool plus a posterior estimator:
a single tag pool is the common case; a pair of pools over the same items
ranks two systems under shared vetting; a detection benchmark viewed at
several IoU thresholds averages into mean AP. Vetting one item id applies
to every task in the group, selection priorities sum across the group, and
the estimator of each task refits after every completed batch.

All simulation entry points are pure functions of (template, config,
master seed): rerunning them reproduces results bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import estimators as est
from . import strategies as strat
from .errors import ConfigError
from .instances import InstanceBenchmark, build_instance_benchmark
from .metrics import AveragePrecision, MeanAP, MetricSpec, PrecAtK, expected_ap_arrays
from .pool import EvaluationPool
from .synth import (
    InstanceSynthSpec,
    PairedTagSynthSpec,
    TagSynthSpec,
    synthesize_instance_dataset,
    synthesize_paired_tag_dataset,
    synthesize_tag_dataset,
)

DEFAULT_FRACTIONS = (0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

ESTIMATOR_NAMES = ("vetted_only", "naive", "learned")
STRATEGY_NAMES = ("random", "mcm", "meec")


@dataclass(frozen=True)
class RunConfig:
    metric: MetricSpec
    estimator: str
    strategy: str
    budget: int
    batch_size: int
    seed: int = 0
    report_fractions: tuple[float, ...] = DEFAULT_FRACTIONS

    def __post_init__(self):
        if self.estimator not in ESTIMATOR_NAMES:
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.strategy not in STRATEGY_NAMES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.budget < 0:
            raise ConfigError("budget must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.budget > 0 and self.batch_size > self.budget:
            raise ConfigError("batch_size must not exceed the budget")
        if not self.report_fractions or any(not (0.0 < f <= 1.0) for f in self.report_fractions):
            raise ConfigError("report fractions must lie in (0, 1]")


# -- estimator drivers ---------------------------------------------------


class NaiveDriver:
    """p_i = y_i; nothing to fit."""

    name = "naive"

    def __init__(self, pool: EvaluationPool):
        self.pool = pool

    def refit(self):
        pass

    def posterior_array(self) -> np.ndarray:
        return self.pool.noisy.astype(np.float64)


class VettedOnlyDriver:
    """No posterior; the estimate is the exact metric on the vetted subset."""

    name = "vetted_only"

    def __init__(self, pool: EvaluationPool):
        self.pool = pool

    def refit(self):
        pass

    def posterior_array(self) -> np.ndarray:
        # selection strategies still need something to rank by
        return self.pool.noisy.astype(np.float64)


class TagDriver:
    """Learned tag estimator: flip priors + per-category score calibrator."""

    name = "learned_tag"

    def __init__(self, pool: EvaluationPool, min_count: int = est.DEFAULT_MIN_VETTED, l2: float = est.DEFAULT_L2):
        self.pool = pool
        self.min_count = min_count
        self.l2 = l2
        self.priors: est.FlipPriors | None = None
        self.calibrator: est.ScoreCalibrator | None = None
        self.refit()

    def refit(self):
        self.priors = est.fit_flip_priors(self.pool, min_count=self.min_count)
        self.calibrator = est.fit_score_calibrator(self.pool, min_count=self.min_count, l2=self.l2)

    def posterior_array(self) -> np.ndarray:
        p_full = np.zeros(len(self.pool))
        for code, cat in enumerate(self.pool.categories):
            idx = np.flatnonzero(self.pool.cat_codes == code)
            p_full[idx] = est._tag_posterior_vector(
                self.pool.noisy[idx],
                self.pool.scores[idx],
                self.priors.for_category(cat),
                self.calibrator.for_category(cat),
            )
        return p_full


class MatchDriver:
    """Learned instance-match estimator on frozen pair-feature rows."""

    name = "learned_match"

    def __init__(self, benchmark: InstanceBenchmark, image_area: float, l2: float = est.DEFAULT_L2):
        self.pool = benchmark.pool
        self.predictor: est.MatchPredictor | None = None
        self.l2 = l2
        categories = tuple(self.pool.categories)
        template = est.MatchPredictor(
            categories=categories,
            feature_means=np.zeros(5 + len(categories)),
            feature_scales=np.ones(5 + len(categories)),
            weights=np.zeros(5 + len(categories)),
            bias=0.0,
            converged=False,
        )
        n = len(self.pool)
        self.rows = np.zeros((n, 5 + len(categories)))
        self.has_gt = np.zeros(n, dtype=bool)
        for i, item_id in enumerate(self.pool.ids):
            pair = benchmark.pairs[item_id]
            if pair.gt is not None:
                self.rows[i] = template.features(pair, image_area)
                self.has_gt[i] = True
        self.categories = categories
        self.refit()

    def refit(self):
        train = self.pool.vetted_mask & self.has_gt
        self.predictor = est.fit_match_predictor(
            self.rows[train],
            self.pool.truth[train].astype(np.float64),
            self.categories,
            l2=self.l2,
        )

    def posterior_array(self) -> np.ndarray:
        p_full = np.zeros(len(self.pool))
        model = self.predictor
        if model.constant_rate is not None:
            p_full[self.has_gt] = model.constant_rate
            return p_full
        k = len(est.MatchPredictor.NUMERIC)
        X = self.rows[self.has_gt].copy()
        X[:, :k] = (X[:, :k] - model.feature_means[:k]) / model.feature_scales[:k]
        p_full[self.has_gt] = est.sigmoid(X @ model.weights + model.bias)
        return p_full


@dataclass
class PoolTask:
    """One pool under one estimator, with an optional fixed positive count."""

    pool: EvaluationPool
    driver: object
    fixed_np: dict[str, float] | None = None


def _make_driver(name: str, pool: EvaluationPool, benchmark: InstanceBenchmark | None, image_area: float):
    if name == "naive":
        return NaiveDriver(pool)
    if name == "vetted_only":
        return VettedOnlyDriver(pool)
    if benchmark is not None:
        return MatchDriver(benchmark, image_area)
    return TagDriver(pool)


def make_tasks(source, config: RunConfig, image_area: float = 0.0) -> list[PoolTask]:
    """Normalize a run source into its task list.

    Accepts an :class:`EvaluationPool`, an :class:`InstanceBenchmark`, a
    (detections, ground_truth) tuple, or a list of pools sharing ids (the
    ranking case). A MeanAP metric on instance data expands into one task
    per IoU threshold.
    """
    if isinstance(source, EvaluationPool):
        pool = source.clone()  # runs never mutate their input
        return [PoolTask(pool, _make_driver(config.estimator, pool, None, image_area))]
    if isinstance(source, InstanceBenchmark):
        area = image_area or _benchmark_image_area(source)
        bench = InstanceBenchmark(
            pool=source.pool.clone(),
            pairs=source.pairs,
            gt_count=source.gt_count,
            iou_threshold=source.iou_threshold,
        )
        return [
            PoolTask(
                bench.pool,
                _make_driver(config.estimator, bench.pool, bench, area),
                fixed_np=dict(bench.gt_count),
            )
        ]
    if isinstance(source, tuple) and len(source) == 2 and not isinstance(source[0], EvaluationPool):
        detections, ground_truth = source
        thresholds = (
            config.metric.iou_thresholds if isinstance(config.metric, MeanAP) else (0.5,)
        )
        tasks = []
        for t in thresholds:
            bench = build_instance_benchmark(detections, ground_truth, t)
            tasks.append(make_tasks(bench, config)[0])
        return tasks
    if isinstance(source, (list, tuple)):
        return [task for p in source for task in make_tasks(p, config, image_area)]
    raise ConfigError(f"cannot build tasks from {type(source).__name__}")


def _benchmark_image_area(benchmark: InstanceBenchmark) -> float:
    for pair in benchmark.pairs.values():
        return float(pair.det.mask.width * pair.det.mask.height)
    return 1.0


# -- per-category metric evaluation --------------------------------------


def _per_task_metric_spec(metric: MetricSpec) -> MetricSpec:
    # MeanAP averages per-threshold AP tasks; within a task it is plain AP
    return AveragePrecision() if isinstance(metric, MeanAP) else metric


def category_estimates(task: PoolTask, metric: MetricSpec, p_full: np.ndarray | None) -> dict[str, float | None]:
    """Expected metric per category; vetted-only when ``p_full`` is None."""
    pool = task.pool
    spec = _per_task_metric_spec(metric)
    out: dict[str, float | None] = {}
    if p_full is None:
        for cat in pool.categories:
            fixed = task.fixed_np.get(cat) if task.fixed_np else None
            try:
                out[cat] = est.vetted_only_metric(pool, spec, cat, fixed_np=fixed)
            except est.NotApplicable:
                out[cat] = None
        return out
    vetted = pool.vetted_mask
    q_all = np.where(vetted, pool.truth, p_full)
    for cat in pool.categories:
        order = pool.per_category_order(cat)
        q = q_all[order]
        if isinstance(spec, PrecAtK):
            if q.shape[0] < spec.k:
                raise ConfigError(
                    f"category {cat!r} has {q.shape[0]} items; Prec@{spec.k} needs more"
                )
            out[cat] = float(q[: spec.k].mean())
        else:
            n_p = task.fixed_np.get(cat) if task.fixed_np else float(q.sum())
            out[cat] = expected_ap_arrays(q, n_p) if n_p and n_p > 0 else None
    return out


def true_category_metrics(task: PoolTask, metric: MetricSpec) -> dict[str, float | None]:
    """Exact metric per category from hidden plus vetted truths."""
    pool = task.pool
    spec = _per_task_metric_spec(metric)
    z = np.where(pool.vetted_mask, pool.truth, pool.sim_truth).astype(np.float64)
    if np.any(z < 0):
        raise ConfigError("true metric needs sim_truth on every unvetted item")
    out: dict[str, float | None] = {}
    for cat in pool.categories:
        order = pool.per_category_order(cat)
        labels = z[order]
        if isinstance(spec, PrecAtK):
            if labels.shape[0] < spec.k:
                raise ConfigError(
                    f"category {cat!r} has {labels.shape[0]} items; Prec@{spec.k} needs {spec.k}"
                )
            out[cat] = float(labels[: spec.k].mean())
        else:
            n_p = task.fixed_np.get(cat) if task.fixed_np else float(labels.sum())
            out[cat] = expected_ap_arrays(labels, n_p) if n_p and n_p > 0 else None
    return out


def _aggregate(per_task: list[dict[str, float | None]]) -> dict[str, float | None]:
    """Mean across tasks per category; None if any task lacks the value."""
    cats = per_task[0].keys()
    out: dict[str, float | None] = {}
    for cat in cats:
        vals = [t.get(cat) for t in per_task]
        out[cat] = None if any(v is None for v in vals) else float(np.mean(vals))
    return out


def _overall(per_category: dict[str, float | None]) -> float | None:
    vals = [v for v in per_category.values() if v is not None]
    return float(np.mean(vals)) if vals else None


def mean_abs_error(estimates: dict[str, float | None], truths: dict[str, float | None]) -> float:
    """Mean over categories of |estimate - truth|, skipping undefined ones."""
    diffs = [
        abs(estimates[c] - truths[c])
        for c in truths
        if truths[c] is not None and estimates.get(c) is not None
    ]
    return float(np.mean(diffs)) if diffs else float("nan")


# -- oracles ---------------------------------------------------------------


class OracleSuspend(Exception):
    """Raised by an external oracle when an answer is not yet available."""

    def __init__(self, item_id: str):
        super().__init__(f"awaiting oracle answer for {item_id!r}")
        self.item_id = item_id


class SimulatedOracle:
    """Answers instantly from each pool's hidden sim_truth."""

    def vet(self, tasks: list[PoolTask], item_id: str) -> int:
        truth = None
        for task in tasks:
            truth = task.pool.vet(item_id)
        return truth


class QueueOracle:
    """External oracle backed by a preloaded answer map.

    Missing answers raise :class:`OracleSuspend`, which makes the engine
    return a resumable partial run instead of failing.
    """

    def __init__(self, answers: dict[str, int] | None = None):
        self.answers = dict(answers or {})

    def provide(self, item_id: str, truth: int):
        self.answers[item_id] = int(truth)

    def vet(self, tasks: list[PoolTask], item_id: str) -> int:
        if item_id not in self.answers:
            raise OracleSuspend(item_id)
        truth = self.answers[item_id]
        for task in tasks:
            task.pool.vet(item_id, truth)
        return truth


# -- the run ----------------------------------------------------------------


@dataclass
class RunStep:
    n_vetted: int
    vetted_fraction: float
    estimate_per_category: dict[str, float | None]
    true_metric_per_category: dict[str, float | None]
    mean_abs_error: float
    per_task_overall: list[float | None]
    overall: float | None


@dataclass
class RunResult:
    config: RunConfig
    steps: list[RunStep]
    per_task_true_overall: list[float | None]
    final_posterior: dict[str, float] = field(default_factory=dict)
    exhausted: bool = False
    suspended: bool = False
    resume: object | None = None  # ActiveRun, set when suspended
    pending: list[str] = field(default_factory=list)

    @property
    def final_error(self) -> float:
        return self.steps[-1].mean_abs_error


class ActiveRun:
    """Resumable state of one active-testing loop over a task group."""

    def __init__(self, tasks: list[PoolTask], config: RunConfig):
        if not tasks:
            raise ConfigError("need at least one task")
        self.tasks = tasks
        self.config = config
        head = tasks[0].pool
        for task in tasks[1:]:
            if set(task.pool.ids) != set(head.ids):
                raise ConfigError("task pools must share item ids")
        if isinstance(config.metric, PrecAtK):
            for task in tasks:
                for cat in task.pool.categories:
                    size = task.pool.per_category_order(cat).shape[0]
                    if size < config.metric.k:
                        raise ConfigError(
                            f"category {cat!r} has {size} items; Prec@{config.metric.k} needs more"
                        )
        self.initial_unvetted = head.n_unvetted
        if config.budget > self.initial_unvetted:
            raise ConfigError(
                f"budget {config.budget} exceeds the {self.initial_unvetted} unvetted items"
            )
        self.vets_done = 0
        self.truths = [true_category_metrics(t, config.metric) for t in tasks] if all(
            t.pool.has_full_sim_truth() for t in tasks
        ) else None
        self.strategy_kind = self._resolve_strategy()

    def _resolve_strategy(self):
        name = self.config.strategy
        if name == "random":
            return strat.RandomHierarchical(self.config.seed)
        if name == "mcm":
            return strat.MostConfidentMistake()
        metric = self.config.metric
        if isinstance(metric, PrecAtK):
            return strat.MeecPrec(metric.k)
        return strat.MeecAP()

    # posteriors for estimation: None means vetted-only

    def _estimation_posteriors(self) -> list[np.ndarray | None]:
        if self.config.estimator == "vetted_only":
            return [None for _ in self.tasks]
        return [t.driver.posterior_array() for t in self.tasks]

    def _selection_posteriors(self) -> list[np.ndarray]:
        # vetted-only has no posterior; MEEC falls back to the naive one
        return [t.driver.posterior_array() for t in self.tasks]

    def select_next_batch(self, batch_size: int) -> list[str]:
        kind = self.strategy_kind
        pools = [t.pool for t in self.tasks]
        if isinstance(kind, strat.RandomHierarchical):
            rng = np.random.default_rng([kind.seed, self.tasks[0].pool.n_vetted])
            return strat.select_random_hierarchical(pools[0], batch_size, rng)
        if isinstance(kind, strat.MostConfidentMistake):
            return strat.select_mcm(pools, batch_size)
        n_p = [t.fixed_np for t in self.tasks]
        return strat.select_meec(
            pools, self._selection_posteriors(), kind, batch_size, n_p_by_cat=n_p
        )

    def vet(self, oracle, item_id: str) -> int:
        truth = oracle.vet(self.tasks, item_id)
        self.vets_done += 1
        return truth

    def refit(self):
        for task in self.tasks:
            task.driver.refit()

    def snapshot_step(self) -> RunStep:
        posts = self._estimation_posteriors()
        per_task = [
            category_estimates(t, self.config.metric, p)
            for t, p in zip(self.tasks, posts)
        ]
        agg = _aggregate(per_task)
        truths = (
            _aggregate(self.truths)
            if self.truths is not None
            else {c: None for c in agg}
        )
        head = self.tasks[0].pool
        return RunStep(
            n_vetted=head.n_vetted,
            vetted_fraction=head.vetted_fraction(),
            estimate_per_category=agg,
            true_metric_per_category=truths,
            mean_abs_error=mean_abs_error(agg, truths),
            per_task_overall=[_overall(p) for p in per_task],
            overall=_overall(agg),
        )

    def final_posterior(self) -> dict[str, float]:
        pool = self.tasks[0].pool
        if self.config.estimator == "vetted_only":
            return {}
        p_full = self.tasks[0].driver.posterior_array()
        return {
            pool.ids[i]: float(p_full[i])
            for i in np.flatnonzero(~pool.vetted_mask)
        }


def budget_checkpoints(budget: int, initial_unvetted: int, fractions) -> list[int]:
    """Vet-count checkpoints: requested fractions of the initial unvetted set."""
    cps = {
        c
        for f in fractions
        for c in (int(round(f * initial_unvetted)),)
        if 1 <= c <= budget
    }
    if budget >= 1:
        cps.add(budget)
    return sorted(cps)


def run_active_testing(source, config: RunConfig, oracle=None) -> RunResult:
    """Run the active-testing loop: select, vet, refit, estimate.

    Stops when the budget is spent, the strategy exhausts its candidates,
    or (external oracles only) an answer is missing, in which case the
    partial result comes back marked ``suspended`` with a ``resume`` handle.
    """
    tasks = source if isinstance(source, list) and source and isinstance(source[0], PoolTask) else make_tasks(source, config)
    run = ActiveRun(tasks, config)
    oracle = oracle or SimulatedOracle()
    result = RunResult(config=config, steps=[run.snapshot_step()], per_task_true_overall=[])
    if run.truths is not None:
        result.per_task_true_overall = [_overall(t) for t in run.truths]

    checkpoints = budget_checkpoints(config.budget, run.initial_unvetted, config.report_fractions)
    pending: list[str] = []
    try:
        for cp in checkpoints:
            progressed = False
            while run.vets_done < cp:
                want = min(config.batch_size, cp - run.vets_done)
                batch = run.select_next_batch(want)
                if not batch:
                    result.exhausted = True
                    break
                pending = list(batch)
                for item_id in batch:
                    run.vet(oracle, item_id)
                    pending.remove(item_id)
                run.refit()
                progressed = True
            if progressed:
                result.steps.append(run.snapshot_step())
            if result.exhausted:
                break
    except OracleSuspend:
        result.suspended = True
        result.resume = run
        result.pending = pending
        return result

    result.final_posterior = run.final_posterior()
    return result


# -- simulation harness ------------------------------------------------------


def _materialize(template, run_seed: int):
    """Instantiate a run source from a template, reseeded per run."""
    if isinstance(template, EvaluationPool):
        return template.clone()
    if isinstance(template, TagSynthSpec):
        return synthesize_tag_dataset(replace(template, seed=run_seed))
    if isinstance(template, InstanceSynthSpec):
        return synthesize_instance_dataset(replace(template, seed=run_seed))
    if isinstance(template, PairedTagSynthSpec):
        spec = replace(template, base=replace(template.base, seed=run_seed))
        return list(synthesize_paired_tag_dataset(spec))
    if isinstance(template, tuple) and len(template) == 2:
        return template
    if isinstance(template, list):
        return [p.clone() for p in template]
    raise ConfigError(f"cannot materialize template {type(template).__name__}")


def _run_seed(master_seed: int, run_index: int) -> int:
    return int(np.random.SeedSequence(entropy=(master_seed, run_index)).generate_state(1)[0])


def _one_simulation(template, config: RunConfig, master_seed: int, run_index: int) -> RunResult:
    seed = _run_seed(master_seed, run_index)
    source = _materialize(template, seed)
    cfg = replace(config, seed=seed)
    if isinstance(template, InstanceSynthSpec):
        # reseeded instance sets jitter in size; keep the budget feasible
        budget = min(cfg.budget, len(source[0]))
        cfg = replace(cfg, budget=budget, batch_size=min(cfg.batch_size, budget))
    return run_active_testing(source, cfg)


@dataclass
class SimulationAggregate:
    config: RunConfig
    n_runs: int
    n_vetted: list[int]
    vetted_fraction: list[float]
    mean_error: list[float]
    std_error: list[float]
    runs: list[RunResult]


def simulate_runs(template, config: RunConfig, n_runs: int, jobs: int = 1) -> SimulationAggregate:
    """Repeat a run ``n_runs`` times; runs differ only in their derived seeds.

    A pool template replays the same data with fresh strategy randomness; a
    synthesis spec regenerates the data per run. Aggregates align runs on
    the checkpoint schedule, carrying a run's final value forward where a
    strategy exhausted early.
    """
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    indices = list(range(n_runs))
    if jobs > 1 and n_runs > 1:
        import concurrent.futures as cf

        with cf.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_one_simulation, template, config, config.seed, i)
                for i in indices
            ]
            runs = [f.result() for f in futures]
    else:
        runs = [_one_simulation(template, config, config.seed, i) for i in indices]

    n_steps = max(len(r.steps) for r in runs)
    mean_error, std_error, n_vetted, fractions = [], [], [], []
    for s in range(n_steps):
        errs = np.array(
            [r.steps[min(s, len(r.steps) - 1)].mean_abs_error for r in runs]
        )
        mean_error.append(float(np.mean(errs)))
        std_error.append(float(np.std(errs)))
        n_vetted.append(int(np.max([r.steps[min(s, len(r.steps) - 1)].n_vetted for r in runs])))
        fractions.append(
            float(np.mean([r.steps[min(s, len(r.steps) - 1)].vetted_fraction for r in runs]))
        )
    return SimulationAggregate(
        config=config,
        n_runs=n_runs,
        n_vetted=n_vetted,
        vetted_fraction=fractions,
        mean_error=mean_error,
        std_error=std_error,
        runs=runs,
    )


# -- decoupling analysis -------------------------------------------------------


@dataclass
class DecouplingStep:
    n_vetted: int
    vetted_fraction: float
    error_before_refit: float
    error_after_refit: float


def decoupling_analysis(source, config: RunConfig, oracle=None) -> list[DecouplingStep]:
    """Split each step's error reduction into vetting and refitting parts.

    At every checkpoint the estimate is taken twice: once with the
    estimator fitted at the previous checkpoint applied to the newly vetted
    labels (the slope: value of fresh labels), and once after refitting
    (the vertical drop: value of a better estimator). Estimators refit per
    checkpoint here so the two effects are cleanly separated.
    """
    tasks = make_tasks(source, config)
    run = ActiveRun(tasks, config)
    oracle = oracle or SimulatedOracle()
    steps: list[DecouplingStep] = []
    checkpoints = budget_checkpoints(config.budget, run.initial_unvetted, config.report_fractions)
    for cp in checkpoints:
        progressed = False
        while run.vets_done < cp:
            want = min(config.batch_size, cp - run.vets_done)
            batch = run.select_next_batch(want)
            if not batch:
                break
            for item_id in batch:
                run.vet(oracle, item_id)
            progressed = True
        if not progressed:
            break
        before = run.snapshot_step()
        run.refit()
        after = run.snapshot_step()
        steps.append(
            DecouplingStep(
                n_vetted=after.n_vetted,
                vetted_fraction=after.vetted_fraction,
                error_before_refit=before.mean_abs_error,
                error_after_refit=after.mean_abs_error,
            )
        )
        if run.vets_done < cp:
            break
    return steps


# -- ranking experiment ----------------------------------------------------------


@dataclass
class RankingStep:
    n_vetted: int
    vetted_fraction: float
    gap_mse: float
    flip_rate: float
    n_flipped: int
    n_excluded: int
    n_trials: int


@dataclass
class RankingResult:
    config: RunConfig
    n_trials: int
    steps: list[RankingStep]
    trials: list[list[tuple[float | None, float]]]  # per trial, per step: (est gap, true gap)


def _one_ranking_trial(template, config: RunConfig, master_seed: int, trial: int):
    seed = _run_seed(master_seed, trial)
    source = _materialize(template, seed)
    cfg = replace(config, seed=seed)
    result = run_active_testing(source, cfg)
    if len(result.per_task_true_overall) != 2:
        raise ConfigError("ranking needs exactly two systems with known truth")
    true_a, true_b = result.per_task_true_overall
    true_gap = (true_a or 0.0) - (true_b or 0.0)
    rows = []
    for step in result.steps:
        est_a, est_b = step.per_task_overall
        gap = None if est_a is None or est_b is None else est_a - est_b
        rows.append((step.n_vetted, step.vetted_fraction, gap, true_gap))
    return rows


def ranking_experiment(template, config: RunConfig, n_trials: int, jobs: int = 1) -> RankingResult:
    """Estimate the metric gap between two systems under shared vetting.

    Per trial and budget step, records the estimated and true gap; a trial
    flips at a step when the estimated gap's sign disagrees with the true
    gap's. Trials with an exactly zero true gap (or an undefined estimate at
    that step) are excluded from the flip rate and counted separately.
    """
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")
    if jobs > 1 and n_trials > 1:
        import concurrent.futures as cf

        with cf.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_one_ranking_trial, template, config, config.seed, t)
                for t in range(n_trials)
            ]
            trials = [f.result() for f in futures]
    else:
        trials = [_one_ranking_trial(template, config, config.seed, t) for t in range(n_trials)]

    n_steps = max(len(t) for t in trials)
    steps: list[RankingStep] = []
    for s in range(n_steps):
        sq, flips, excluded, counted = [], 0, 0, 0
        n_vetted, fraction = 0, 0.0
        for rows in trials:
            nv, fr, gap, true_gap = rows[min(s, len(rows) - 1)]
            n_vetted = max(n_vetted, nv)
            fraction = max(fraction, fr)
            if gap is None or true_gap == 0.0:
                excluded += 1
                continue
            counted += 1
            sq.append((gap - true_gap) ** 2)
            if np.sign(gap) != np.sign(true_gap):
                flips += 1
        steps.append(
            RankingStep(
                n_vetted=n_vetted,
                vetted_fraction=fraction,
                gap_mse=float(np.mean(sq)) if sq else float("nan"),
                flip_rate=flips / counted if counted else float("nan"),
                n_flipped=flips,
                n_excluded=excluded,
                n_trials=len(trials),
            )
        )
    simplified = [[(gap, true) for _, _, gap, true in rows] for rows in trials]
    return RankingResult(config=config, n_trials=n_trials, steps=steps, trials=simplified)
