"""Acceptance suite: one test per release criterion, at pinned tolerances.

Each test prints a single ``[ACCEPTANCE] <criterion>: PASS|FAIL`` line
(run with ``pytest tests/test_acceptance.py -s`` to see them live). The
closed-form layers are held to 1e-12 against independent oracles; the
simulation layers reproduce the qualitative trends on synthetic data at
fixed seeds and must finish inside their stated runtime budgets.
"""

import json
import time

import numpy as np
import pytest
from click.testing import CliRunner

from activetest.cli import main as cli_main
from activetest.engine import (
    RunConfig,
    decoupling_analysis,
    ranking_experiment,
    run_active_testing,
    simulate_runs,
)
from activetest.estimators import (
    CategoryCalibrator,
    CategoryPriors,
    FlipPriors,
    ScoreCalibrator,
    tag_posterior,
)
from activetest.geometry import Mask
from activetest.instances import (
    DetectionInstance,
    GroundTruthInstance,
    build_instance_benchmark,
)
from activetest.metrics import (
    AveragePrecision,
    MatchSpec,
    PosteriorEstimate,
    PrecAtK,
    average_precision,
    exact_expected_metric_oracle,
    expected_ap,
    expected_prec_at_k,
    match_detections,
)
from activetest.pool import LabelState, TestItem
from activetest.strategies import meec_score_prec
from activetest.synth import (
    FlipSpec,
    InstanceSynthSpec,
    PairedTagSynthSpec,
    TagSynthSpec,
    synthesize_instance_dataset,
    synthesize_tag_dataset,
)


def report(name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[ACCEPTANCE] {name}: {status}{suffix}")
    assert ok, f"{name}: {detail}"


def random_states(rng, n, p_vetted=0.5):
    states, probs = [], {}
    for j in range(n):
        if rng.random() < p_vetted:
            states.append((f"i{j}", LabelState(0, truth=int(rng.random() < 0.5))))
        else:
            states.append((f"i{j}", LabelState(0)))
            probs[f"i{j}"] = float(rng.random())
    return states, probs


def spearman(xs, ys):
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)

    def ranks(v):
        order = np.argsort(v)
        r = np.empty(len(v))
        r[order] = np.arange(1, len(v) + 1)
        return r

    rx, ry = ranks(xs) - (len(xs) + 1) / 2, ranks(ys) - (len(ys) + 1) / 2
    return float((rx * ry).sum() / np.sqrt((rx * rx).sum() * (ry * ry).sum()))


# -- criterion 1: expected Prec@K equals the enumeration oracle ------------


def test_expected_prec_at_k_oracle_equivalence():
    rng = np.random.default_rng(20240501)
    start = time.time()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 13))
        k = int(rng.integers(1, n + 1))
        states, probs = random_states(rng, n)
        post = PosteriorEstimate(probs)
        lhs = expected_prec_at_k(states, post, k)
        rhs = exact_expected_metric_oracle(states, post, PrecAtK(k))
        worst = max(worst, abs(lhs - rhs))
    elapsed = time.time() - start
    report(
        "expected-prec@k oracle equivalence",
        worst <= 1e-12 and elapsed < 10.0,
        f"max|Δ|={worst:.2e}, {elapsed:.1f}s over 1000 instances",
    )


# -- criterion 2: expected AP reductions ------------------------------------


def test_expected_ap_reductions():
    rng = np.random.default_rng(20240502)
    worst_exact = 0.0
    worst_degenerate = 0.0
    n_exact = n_degenerate = 0
    while n_exact < 500:
        # fully vetted: expected AP must equal the exact metric
        n = int(rng.integers(1, 13))
        labels = (rng.random(n) < 0.5).astype(int)
        if labels.sum() == 0:
            labels[int(rng.integers(0, n))] = 1
        states = [(f"i{j}", LabelState(0, truth=int(labels[j]))) for j in range(n)]
        lhs = expected_ap(states, PosteriorEstimate({}), float(labels.sum()))
        rhs = average_precision(labels, float(labels.sum()))
        worst_exact = max(worst_exact, abs(lhs - rhs))
        n_exact += 1
    while n_degenerate < 500:
        # 0/1 posteriors: expected AP must equal the enumeration oracle
        n = int(rng.integers(1, 13))
        states, probs = random_states(rng, n)
        probs = {k: float(round(v)) for k, v in probs.items()}
        post = PosteriorEstimate(probs)
        n_p = sum(
            1.0 for _, s in states if s.vetted and s.truth == 1
        ) + sum(probs.values())
        if n_p == 0:
            continue
        lhs = expected_ap(states, post, n_p)
        rhs = exact_expected_metric_oracle(states, post, AveragePrecision())
        worst_degenerate = max(worst_degenerate, abs(lhs - rhs))
        n_degenerate += 1
    ok = worst_exact <= 1e-12 and worst_degenerate <= 1e-12
    report(
        "expected-AP reduction",
        ok,
        f"exact max|Δ|={worst_exact:.2e} over {n_exact}, "
        f"degenerate max|Δ|={worst_degenerate:.2e} over {n_degenerate}",
    )


# -- criterion 3: MEEC-Prec matches brute-force expected change --------------


def test_meec_prec_brute_force_equivalence():
    rng = np.random.default_rng(20240503)
    worst = 0.0
    checked = 0
    while checked < 1000:
        n = int(rng.integers(1, 13))
        k = int(rng.integers(1, n + 1))
        states, probs = random_states(rng, n, p_vetted=0.3)
        post = PosteriorEstimate(probs)
        base = expected_prec_at_k(states, post, k)
        for item_id, st in states[:k]:
            if st.vetted:
                continue
            p = probs[item_id]
            brute = 0.0
            for outcome, weight in ((1.0, p), (0.0, 1.0 - p)):
                alt = dict(probs)
                alt[item_id] = outcome
                brute += weight * abs(
                    expected_prec_at_k(states, PosteriorEstimate(alt), k) - base
                )
            worst = max(worst, abs(brute - meec_score_prec(p, k)))
            checked += 1
    report(
        "MEEC-Prec brute-force equivalence",
        worst <= 1e-12,
        f"max|Δ|={worst:.2e} over {checked} (p, K) instances",
    )


# -- criterion 4: Bayes posterior spot values ---------------------------------


def test_tag_posterior_spot_values():
    priors = FlipPriors(
        per_category={"c": CategoryPriors(0.38, 0.01, 100, 100)},
        pooled=CategoryPriors(0.38, 0.01, 100, 100),
    )
    cal = ScoreCalibrator(
        per_category={"c": CategoryCalibrator(0.0, 0.0, True, 100)},  # p(z|s) = 0.5
        pooled=CategoryCalibrator(0.0, 0.0, True, 100),
    )
    p_pos = tag_posterior(TestItem("x", "c", 0.0, LabelState(1)), priors, cal)
    p_neg = tag_posterior(TestItem("x", "c", 0.0, LabelState(0)), priors, cal)
    ok = abs(p_pos - 0.9744) <= 1e-4 and abs(p_neg - 0.3851) <= 1e-4
    report("Bayes posterior spot values", ok, f"y=1→{p_pos:.6f}, y=0→{p_neg:.6f}")


# -- criterion 5: full-vetting convergence ------------------------------------


TAG_2000 = TagSynthSpec(n_categories=4, items_per_category=500, seed=31)
INSTANCE_2000 = InstanceSynthSpec(
    n_images=300, instances_per_image=5, distractor_rate=0.3, seed=32
)


@pytest.fixture(scope="module")
def instance_benchmark():
    dets, gts = synthesize_instance_dataset(INSTANCE_2000)
    return build_instance_benchmark(dets, gts, 0.5)


def test_full_vetting_convergence_tag_and_instance(instance_benchmark):
    failures = []
    slowest = 0.0
    tag_pool = synthesize_tag_dataset(TAG_2000)
    for estimator in ("vetted_only", "naive", "learned"):
        for strategy in ("random", "mcm", "meec"):
            for label, source, metric in (
                ("tag", tag_pool, PrecAtK(48)),
                ("instance", instance_benchmark, AveragePrecision()),
            ):
                pool = source.pool if label == "instance" else source
                cfg = RunConfig(
                    metric=metric,
                    estimator=estimator,
                    strategy=strategy,
                    budget=pool.n_unvetted,
                    batch_size=max(pool.n_unvetted // 10, 1),
                    seed=7,
                    report_fractions=(0.5, 1.0),
                )
                start = time.time()
                res = run_active_testing(source, cfg)
                slowest = max(slowest, time.time() - start)
                if res.final_error != 0.0:
                    failures.append(f"{label}/{estimator}/{strategy}={res.final_error}")
    report(
        "full-vetting convergence",
        not failures and slowest < 60.0,
        f"18 pairs, slowest {slowest:.1f}s" + (f"; failures: {failures}" if failures else ""),
    )


# -- criterion 6: zero-noise degeneracy ----------------------------------------


def test_zero_noise_naive_error_zero():
    spec = TagSynthSpec(
        n_categories=4, items_per_category=250, flip=FlipSpec(1.0, 0.0), seed=33
    )
    pool = synthesize_tag_dataset(spec)
    cfg = RunConfig(
        metric=PrecAtK(48), estimator="naive", strategy="random",
        budget=1000, batch_size=100, seed=3,
        report_fractions=tuple((i + 1) / 10 for i in range(10)),
    )
    res = run_active_testing(pool, cfg)
    errors = [s.mean_abs_error for s in res.steps]
    ok = all(e == 0.0 for e in errors)
    report("zero-noise naive degeneracy", ok, f"max step error {max(errors)}")


# -- criterion 7: error-curve trend (Fig. 4 analog) ------------------------------


def test_error_curve_trend():
    start = time.time()
    spec = TagSynthSpec(n_categories=20, items_per_category=500, seed=0)
    fractions = tuple((i + 1) / 10 for i in range(10))
    budget = 20 * 500
    cfg_naive = RunConfig(
        metric=PrecAtK(48), estimator="naive", strategy="random",
        budget=budget, batch_size=500, seed=2024, report_fractions=fractions,
    )
    agg_naive = simulate_runs(spec, cfg_naive, 50)
    cfg_meec = RunConfig(
        metric=PrecAtK(48), estimator="learned", strategy="meec",
        budget=budget, batch_size=500, seed=2024, report_fractions=fractions,
    )
    agg_meec = simulate_runs(spec, cfg_meec, 50)
    elapsed = time.time() - start

    naive_steps = agg_naive.mean_error[1:]  # skip the pre-vetting step
    rho = spearman(range(len(naive_steps)), naive_steps)
    idx_half = 5  # fractions[4] = 0.5 -> step index 5 with step 0 in front
    naive_half = agg_naive.mean_error[idx_half]
    meec_half = agg_meec.mean_error[min(idx_half, len(agg_meec.mean_error) - 1)]
    ok = rho <= -0.9 and meec_half <= naive_half and elapsed < 300.0
    report(
        "error-curve trend",
        ok,
        f"spearman={rho:.3f}, err@50% learned+meec={meec_half:.4f} "
        f"vs random+naive={naive_half:.4f}, {elapsed:.0f}s for 2x50 runs",
    )


# -- criterion 8: ranking trend (Fig. 6 analog) ------------------------------------


def test_ranking_trend():
    start = time.time()
    paired = PairedTagSynthSpec(
        base=TagSynthSpec(n_categories=4, items_per_category=500, seed=0),
        mu_pos_gap=0.1,
        score_correlation=0.9,
    )
    fractions = (0.5, 1.0)

    def run(estimator, strategy):
        cfg = RunConfig(
            metric=PrecAtK(48), estimator=estimator, strategy=strategy,
            budget=2000, batch_size=200, seed=77, report_fractions=fractions,
        )
        return ranking_experiment(paired, cfg, 200)

    baseline = run("vetted_only", "random")
    active = run("learned", "meec")
    elapsed = time.time() - start

    def at_fraction(result, frac):
        steps = [s for s in result.steps if s.vetted_fraction <= frac + 1e-9]
        return steps[-1]

    base_half = at_fraction(baseline, 0.5).flip_rate
    active_half = at_fraction(active, 0.5).flip_rate
    base_full = baseline.steps[-1].flip_rate
    active_full = active.steps[-1].flip_rate
    ok = (
        active_half <= base_half
        and base_full == 0.0
        and active_full == 0.0
        and elapsed < 600.0
    )
    report(
        "ranking trend",
        ok,
        f"flip@50% learned+meec={active_half:.3f} vs vetted-only+random={base_half:.3f}, "
        f"flip@100%={active_full}/{base_full}, {elapsed:.0f}s for 2x200 trials",
    )


# -- criterion 9: decoupling analysis (Fig. 5 analog) --------------------------------


def test_decoupling_analysis():
    spec = TagSynthSpec(n_categories=10, items_per_category=300, seed=1)
    pool = synthesize_tag_dataset(spec)
    fractions = tuple((i + 1) / 10 for i in range(10))

    def drops(estimator):
        cfg = RunConfig(
            metric=PrecAtK(48), estimator=estimator, strategy="random",
            budget=3000, batch_size=300, seed=9, report_fractions=fractions,
        )
        steps = decoupling_analysis(pool, cfg)
        return [s.error_before_refit - s.error_after_refit for s in steps]

    naive_drops = drops("naive")
    learned_drops = drops("learned")
    half = len(learned_drops) // 2
    learned_first_half = sum(learned_drops[:half])
    ok = all(d == 0.0 for d in naive_drops) and learned_first_half >= 0.0
    report(
        "decoupling analysis",
        ok,
        f"naive max drop {max(map(abs, naive_drops)):.1e}, "
        f"learned first-half cumulative drop {learned_first_half:.4f}",
    )


# -- criterion 10: one-to-one matching semantics --------------------------------------


def test_matching_single_true_positive():
    grid = np.zeros((16, 16), dtype=bool)
    grid[2:8, 2:8] = True
    gt_mask = Mask.encode(grid)
    gt = GroundTruthInstance("g", "img", "c", gt_mask.tight_box(), mask=gt_mask)
    shifted = np.zeros((16, 16), dtype=bool)
    shifted[3:9, 3:9] = True
    det_hi = DetectionInstance("hi", "img", "c", 0.9, gt_mask, gt_mask.tight_box())
    lo_mask = Mask.encode(shifted)
    det_lo = DetectionInstance("lo", "img", "c", 0.8, lo_mask, lo_mask.tight_box())
    records = match_detections([det_hi, det_lo], [gt], MatchSpec(0.3), "true")
    n_tp = sum(r.matched for r in records)
    winner = next(r for r in records if r.matched)
    ok = n_tp == 1 and winner.det_id == "hi"
    report("one-to-one matching", ok, f"{n_tp} true positive, winner={winner.det_id}")


# -- criterion 11: byte-identical reruns -----------------------------------------------


def test_simulate_and_rank_byte_identical(tmp_path):
    runner = CliRunner()
    sim_manifest = tmp_path / "sim.json"
    sim_manifest.write_text(
        json.dumps(
            {
                "synth": {"task": "tag", "n_categories": 3, "items_per_category": 80},
                "metric": {"kind": "prec_at_k", "k": 10},
                "estimators": ["naive", "learned"],
                "strategies": ["random", "meec"],
                "budget_fractions": [0.2, 0.6, 1.0],
                "batch_size": 48,
                "n_runs": 3,
                "seed": 99,
            }
        )
    )
    rank_manifest = tmp_path / "rank.json"
    rank_manifest.write_text(
        json.dumps(
            {
                "synth": {"task": "tag", "n_categories": 3, "items_per_category": 80, "mu_pos_gap": 0.2},
                "metric": {"kind": "average_precision"},
                "estimator": "learned",
                "strategy": "meec",
                "budget_fractions": [0.5, 1.0],
                "batch_size": 60,
                "n_trials": 3,
                "seed": 41,
            }
        )
    )
    mismatches = []
    for name, manifest in (("simulate", sim_manifest), ("rank", rank_manifest)):
        out_a, out_b = tmp_path / f"{name}_a", tmp_path / f"{name}_b"
        for out in (out_a, out_b):
            result = runner.invoke(
                cli_main, [name, "--manifest", str(manifest), "--out", str(out)]
            )
            assert result.exit_code == 0, result.output
        for path in sorted(out_a.iterdir()):
            if path.read_bytes() != (out_b / path.name).read_bytes():
                mismatches.append(f"{name}/{path.name}")
    report("byte-identical reruns", not mismatches, f"mismatches: {mismatches or 'none'}")
