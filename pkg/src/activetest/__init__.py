"""Active testing: estimate benchmark metrics on partially vetted test sets.

The package evaluates Prec@K and average precision when only part of the
test set has human-verified labels, maintains a posterior over the rest,
and actively picks which labels to verify next so the estimate improves as
fast as possible per unit of annotation effort.
"""

from .engine import (
    RunConfig,
    RunResult,
    SimulatedOracle,
    decoupling_analysis,
    ranking_experiment,
    run_active_testing,
    simulate_runs,
)
from .errors import ActiveTestError, ConfigError, MetricError, NotApplicable, ParseError, VettingError
from .estimators import (
    FlipPriors,
    MatchPredictor,
    ScoreCalibrator,
    fit_flip_priors,
    fit_match_predictor,
    fit_score_calibrator,
    match_probability,
    naive_posterior,
    tag_posterior,
    vetted_only_metric,
)
from .geometry import Box, Mask
from .instances import (
    DetectionInstance,
    GroundTruthInstance,
    InstancePair,
    build_instance_benchmark,
)
from .io import load_instance_dataset, load_tag_dataset, write_instance_dataset, write_tag_dataset
from .metrics import (
    AveragePrecision,
    MatchSpec,
    MeanAP,
    PosteriorEstimate,
    PrecAtK,
    average_precision,
    box_iou,
    exact_expected_metric_oracle,
    expected_ap,
    expected_prec_at_k,
    mask_box_iou,
    mask_iou,
    match_detections,
    prec_at_k,
)
from .pool import EvaluationPool, LabelState, TestItem
from .strategies import (
    MeecAP,
    MeecPrec,
    MostConfidentMistake,
    RandomHierarchical,
    meec_score_ap,
    meec_score_prec,
    select_mcm,
    select_meec,
    select_random_hierarchical,
)
from .synth import (
    FlipSpec,
    InstanceSynthSpec,
    PairedTagSynthSpec,
    TagSynthSpec,
    synthesize_instance_dataset,
    synthesize_paired_tag_dataset,
    synthesize_tag_dataset,
)

__version__ = "0.1.0"
