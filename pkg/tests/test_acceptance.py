"""Acceptance gate: one test per release criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. The campaign-level criteria share one batch of simulated campaigns
(module-scoped fixture), so the whole module stays inside its time budgets.
"""

import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from pal import simulator
from pal.engine import combine_score, run_round
from pal.records import DetectionRecord, SelectionConfig
from pal.scoring import (
    ClassifierModel,
    ClassStats,
    allocate_budgets,
    compute_class_ratios,
    lius_score,
    predict_tp_probability,
    train_clc,
)
from pal.signals import ImageSignals, cwie, minmax_normalize, rcdi, rcsp
from pal.scoring import Candidate

from .conftest import make_embeddings
from .oracle import oracle_round
from .worlds import assert_matches_oracle, random_miniature

LN2 = math.log(2.0)
FIXTURE = Path(__file__).parent / "fixtures" / "mini"

CAMPAIGN_SEEDS = list(range(10))
CAMPAIGN_ROUNDS = 4
CAMPAIGN_BUDGET = 150
CAMPAIGN_INITIAL = 150


def _announce(name, elapsed=None, limit=None):
    note = ""
    if elapsed is not None:
        note = f" ({elapsed:.2f}s" + (f" < {limit:.0f}s limit)" if limit else ")")
    print(f"ACCEPTANCE {name}: PASS{note}")


def test_formula_unit_suite():
    start = time.monotonic()
    tol = 1e-9

    # TP-probability sigmoid
    flat = ClassifierModel(0, 0.0, 0.0, 0.0, (0.0, 0.0), (1.0, 1.0), trained=True)
    assert abs(predict_tp_probability(flat, 7.0, 0.3) - 0.5) <= tol
    steep = ClassifierModel(0, 0.0, 0.0, 10.0, (0.0, 0.0), (1.0, 1.0), trained=True)
    assert abs(predict_tp_probability(steep, 0.0, 1.0) - 1.0 / (1.0 + math.exp(-10.0))) <= tol

    # binary entropy
    assert abs(lius_score(0.5) - LN2) <= tol
    assert lius_score(0.0) == 0.0 and lius_score(1.0) == 0.0

    # class ratio boundary cases and hand value
    def det(c):
        return DetectionRecord(image_id=0, class_id=c, bbox=(0, 0, 1, 1), confidence=0.5)

    stats_out = compute_class_ratios([det(0)], [det(0)], num_classes=2)
    assert abs(stats_out[1].r_c - 1.0) <= tol  # absent from both pools
    mono = compute_class_ratios([det(0)] * 3, [det(0)] * 5, num_classes=1)
    assert abs(mono[0].r_c - 0.0) <= tol  # the only class everywhere
    hand = compute_class_ratios(
        [det(0)] * 2 + [det(1)] * 8, [det(0)] * 4 + [det(1)] * 6, num_classes=2
    )
    assert abs(hand[0].r_c - 0.7) <= tol

    # budget split and capacity clamp
    st = [ClassStats(0, 0, 50, 0.6), ClassStats(1, 0, 50, 0.4)]
    assert allocate_budgets(st, {0: 99, 1: 99}, 10).per_class == {0: 6, 1: 4}
    assert allocate_budgets(st, {0: 2, 1: 99}, 10).per_class == {0: 2, 1: 8}

    # class-weighted image entropy
    even = DetectionRecord(image_id=0, class_id=0, bbox=(0, 0, 1, 1),
                           confidence=0.5, class_probabilities=(0.5, 0.5))
    assert abs(cwie([even], {0: 1.0, 1: 1.0}) - LN2) <= tol

    # min-max scaling with the minimum anchored at zero
    normed = minmax_normalize([0.0, 2.0, 4.0])
    assert max(abs(a - b) for a, b in zip(normed, [0.0, 0.5, 1.0])) <= tol

    # diversity index over distinct classes
    pair = [det(0), det(1)]
    assert abs(rcdi(pair, {0: 0.7, 1: 0.3}) - 1.0) <= tol
    assert abs(rcdi([det(0), det(0)], {0: 0.7, 1: 0.3}) - 0.7) <= tol

    # similarity penalty: full credit at rank 1, zero for a duplicate
    emb = make_embeddings({1: [1.0, 0.0], 2: [1.0, 0.0]})
    cands = [Candidate(1, 0, 0.6, 0), Candidate(2, 0, 0.5, 0)]
    penalties = rcsp(cands, emb)
    assert abs(penalties[0] - 1.0) <= tol and abs(penalties[1] - 0.0) <= tol

    # fused selection score at the default weights
    ones = ImageSignals(image_id=0, cwie_raw=1.0, cwie_norm=1.0, rcdi_raw=1.0, rcdi_norm=1.0, rcsp=1.0)
    assert abs(combine_score(1.0, ones, SelectionConfig()) - 1.0) <= tol

    elapsed = time.monotonic() - start
    assert elapsed < 1.0
    _announce("formula unit suite", elapsed, 1.0)


def test_oracle_equivalence():
    start = time.monotonic()
    cases = 120
    for seed in range(cases):
        gt, lab, unl, emb, cfg, state = random_miniature(seed)
        manifest = run_round(gt, lab, unl, emb, cfg, state)
        expected = oracle_round(gt, lab, unl, emb, cfg, state)
        assert_matches_oracle(manifest, expected, state)
    elapsed = time.monotonic() - start
    assert elapsed < 30.0
    _announce(f"oracle equivalence ({cases} seeded miniatures)", elapsed, 30.0)


def test_classifier_recovery():
    start = time.monotonic()
    cfg = SelectionConfig()
    rng = np.random.default_rng(2718)

    def sample(n_per_side):
        records = []
        for _ in range(n_per_side):
            records.append(DetectionRecord(
                image_id=0, class_id=0, bbox=(0, 0, 1, 1),
                confidence=float(np.clip(rng.normal(0.8, 0.05), 0, 1)),
                pre_nms_count=int(rng.poisson(10)) + 4, tp_label=True,
            ))
            records.append(DetectionRecord(
                image_id=0, class_id=0, bbox=(0, 0, 1, 1),
                confidence=float(np.clip(rng.normal(0.2, 0.05), 0, 1)),
                pre_nms_count=int(rng.poisson(2)), tp_label=False,
            ))
        return records

    train = sample(500)
    held_out = sample(500)
    model = train_clc(train, cfg)
    assert model.trained and model.beta2 > 0
    correct = sum(
        1 for r in held_out
        if (predict_tp_probability(model, r.pre_nms_count, r.confidence) >= 0.5) == r.tp_label
    )
    accuracy = correct / len(held_out)
    assert accuracy >= 0.95

    # under shuffled labels, fitted slopes are statistically zero
    labels = [r.tp_label for r in train]
    b1s, b2s = [], []
    for _ in range(100):
        shuffled = [bool(v) for v in rng.permutation(labels)]
        for r, lab in zip(train, shuffled):
            r.tp_label = lab
        refit = train_clc(train, cfg)
        b1s.append(refit.beta1)
        b2s.append(refit.beta2)
    for values in (b1s, b2s):
        arr = np.array(values)
        se = arr.std(ddof=1)
        assert abs(arr.mean()) <= 3.0 * se / math.sqrt(len(arr))
        assert np.mean(np.abs(arr) < 3.0 * se) >= 0.95

    elapsed = time.monotonic() - start
    assert elapsed < 10.0
    _announce(f"classifier recovery (held-out acc {accuracy:.3f})", elapsed, 10.0)


def test_budget_invariants():
    start = time.monotonic()
    rng = np.random.default_rng(99)
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        stats_in = [
            ClassStats(class_id=i, n_c_l=0, n_c_u=int(rng.integers(0, 100)), r_c=float(rng.uniform()))
            for i in range(n)
        ]
        caps = {i: int(rng.integers(0, 50)) for i in range(n)}
        b = int(rng.integers(1, 200))
        plan = allocate_budgets(stats_in, caps, b)
        assert sum(plan.per_class.values()) == min(b, sum(caps.values()))
        for cid, b_c in plan.per_class.items():
            assert 0 <= b_c <= caps[cid]
    elapsed = time.monotonic() - start
    assert elapsed < 5.0
    _announce("budget invariants (1000 randomized cases)", elapsed, 5.0)


def _run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "pal", *map(str, args)], capture_output=True, text=True,
    )


def test_determinism():
    start = time.monotonic()
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        select = [
            "select",
            "--gt", FIXTURE / "gt.txt",
            "--labelled-dump", FIXTURE / "labelled_dump.txt",
            "--unlabelled-dump", FIXTURE / "unlabelled_dump.txt",
            "--embeddings", FIXTURE / "embeddings.bin",
            "--state", FIXTURE / "state.txt",
            "--config", FIXTURE / "config.json",
        ]
        for out in ("m1.txt", "m2.txt"):
            res = _run_cli(*select, "--out", tmp / out)
            assert res.returncode == 0, res.stderr
        assert (tmp / "m1.txt").read_bytes() == (tmp / "m2.txt").read_bytes()

        sim = [
            "simulate", "--strategy", "pal", "--rounds", "2", "--budget", "6",
            "--seed", "3", "--images", "40", "--classes", "4", "--initial", "10",
        ]
        for out in ("r1.txt", "r2.txt"):
            res = _run_cli(*sim, "--out", tmp / out)
            assert res.returncode == 0, res.stderr
        assert (tmp / "r1.txt").read_bytes() == (tmp / "r2.txt").read_bytes()

    elapsed = time.monotonic() - start
    assert elapsed < 10.0
    _announce("determinism (select + simulate byte-identical)", elapsed, 10.0)


@pytest.fixture(scope="module")
def campaign_batch():
    start = time.monotonic()
    params = simulator.WorldParams()  # 2000 images, 10 power-law classes
    reports = {}
    for seed in CAMPAIGN_SEEDS:
        world = simulator.generate_world(params, seed=seed)
        for strategy in simulator.STRATEGIES:
            reports[(seed, strategy)] = simulator.run_campaign(
                world, strategy, rounds=CAMPAIGN_ROUNDS, budget=CAMPAIGN_BUDGET,
                seed=seed, initial_labelled=CAMPAIGN_INITIAL,
            )
    return reports, time.monotonic() - start


def test_campaign_direction(campaign_batch):
    reports, build_time = campaign_batch
    start = time.monotonic()

    def final(strategy, field):
        return [getattr(reports[(s, strategy)].rows[-1], field) for s in CAMPAIGN_SEEDS]

    pal_proxy = float(np.mean(final("pal", "proxy")))
    ent_proxy = float(np.mean(final("entropy", "proxy")))
    rnd_proxy = float(np.mean(final("random", "proxy")))
    assert pal_proxy >= ent_proxy >= rnd_proxy, (pal_proxy, ent_proxy, rnd_proxy)

    pal_rare = final("pal", "rare_share")
    rnd_rare = final("random", "rare_share")
    wins = sum(1 for a, b in zip(pal_rare, rnd_rare) if a > b)
    p_value = stats.binomtest(wins, len(CAMPAIGN_SEEDS), 0.5, alternative="greater").pvalue
    assert p_value < 0.05, (wins, p_value)

    elapsed = build_time + (time.monotonic() - start)
    assert elapsed < 300.0
    _announce(
        f"campaign direction (proxy {pal_proxy:.4f} >= {ent_proxy:.4f} >= {rnd_proxy:.4f};"
        f" rare-share sign test p={p_value:.4f})",
        elapsed, 300.0,
    )


def test_fig2_qualitative_separation(campaign_batch):
    reports, _ = campaign_batch
    by_round = []
    for r in range(1, CAMPAIGN_ROUNDS + 1):
        accs = [reports[(s, "pal")].rows[r].clc_accuracy for s in CAMPAIGN_SEEDS]
        assert all(a is not None for a in accs)
        by_round.append(float(np.mean(accs)))
    for earlier, later in zip(by_round, by_round[1:]):
        assert later >= earlier, by_round
    _announce(
        "rare-class classifier separation nondecreasing "
        f"({' -> '.join(f'{a:.4f}' for a in by_round)})"
    )
