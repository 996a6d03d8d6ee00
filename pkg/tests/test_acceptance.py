"""Acceptance criteria, each at its stated tolerance and time budget.

Every test prints one PASS/FAIL line; the lines are repeated in the
"acceptance criteria" section of the pytest summary.
"""

import io
import itertools
import math
import time

import numpy as np
import pytest

from msoattn.attention import frozen_mha_params, multi_head_attention, simplified_attention
from msoattn.bench import init_naive_block
from msoattn.cli import main as cli_main
from msoattn.config import RunConfig
from msoattn.encoder import build_encoder, EncoderConfig
from msoattn.metrics import episode_metrics, gt_rank, mean_rank, mrr, ndcg, recall_at_k
from msoattn.model import Model
from msoattn.paramcount import (
    REFERENCE_NAIVE, REFERENCE_PROPOSED, count_model, count_naive_layer, count_proposed_layer,
)
from msoattn.task import make_split
from msoattn.tensor import make_rng
from msoattn.training import evaluate, model_grad_check, train

from conftest import verdict

SEEDS = range(5)


# ---------------------------------------------------------------------------
# shared training runs (criteria 6 and 7)
# ---------------------------------------------------------------------------

class _Runs:
    def __init__(self):
        self.cfg = RunConfig()
        self.data = None
        self.cache = {}
        self.seconds = {}

    def splits(self):
        if self.data is None:
            self.data = {s: make_split(self.cfg.task, s) for s in ("train", "val", "test")}
        return self.data

    def get(self, seed: int, self_attention: bool = True):
        key = (seed, self_attention)
        if key not in self.cache:
            cfg = RunConfig.from_flat({**self.cfg.to_flat(), "use_self_attention": self_attention})
            t0 = time.perf_counter()
            data = self.splits()
            res = train(cfg.model, cfg.task, cfg.schedule, seed=seed, eval_mode="disc",
                        data={"train": data["train"], "val": data["val"]})
            test = evaluate(res.model, data["test"], "disc")
            self.seconds[key] = time.perf_counter() - t0
            self.cache[key] = (res, test)
        return self.cache[key]


@pytest.fixture(scope="module")
def runs():
    return _Runs()


# ---------------------------------------------------------------------------
# 1. parameter counts
# ---------------------------------------------------------------------------

def test_criterion_1_parameter_counts():
    t0 = time.perf_counter()
    prop = count_proposed_layer(3, 512).total
    naive = count_naive_layer(3, 512, 4).total
    enumerated_prop = count_model(build_encoder(EncoderConfig(d=512, l=1), make_rng(0)).block_parameters())[0]
    enumerated_naive = 9 * init_naive_block(512, make_rng(0)).size
    seconds = time.perf_counter() - t0
    ratio = prop / naive
    ok = (
        prop == 2_363_904 == enumerated_prop
        and naive == 28_371_456 == enumerated_naive
        and abs(prop / REFERENCE_PROPOSED - 1) <= 0.02
        and abs(naive / REFERENCE_NAIVE - 1) <= 0.02
        and ratio < 0.10
        and seconds < 1.0
    )
    verdict(1, "parameter counts", ok,
            f"proposed {prop:,} naive {naive:,} ratio {ratio:.4f}, "
            f"off reference by {100 * (prop / REFERENCE_PROPOSED - 1):+.2f}% / {100 * (naive / REFERENCE_NAIVE - 1):+.2f}%, "
            f"{seconds:.2f}s")


# ---------------------------------------------------------------------------
# 2. frozen-weight equivalence
# ---------------------------------------------------------------------------

def test_criterion_2_frozen_equivalence():
    rng = make_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        m, n = rng.integers(1, 33, size=2)
        d = int(rng.choice([8, 16, 64]))
        h = int(rng.choice([1, 2, 4]))
        x, y = rng.normal(size=(m, d)), rng.normal(size=(n, d))
        ref = multi_head_attention(x, y, y, frozen_mha_params(h, d)).value
        worst = max(worst, float(np.max(np.abs(simplified_attention(x, y, h).value - ref))))
    seconds = time.perf_counter() - t0
    verdict(2, "simplified == frozen multi-head", worst < 1e-12 and seconds < 10,
            f"max abs diff {worst:.2e} over 200 instances, {seconds:.2f}s")


# ---------------------------------------------------------------------------
# 3. end-to-end gradient check
# ---------------------------------------------------------------------------

def test_criterion_3_gradient_suite():
    cfg = RunConfig()
    assert cfg.model.encoder.l == 2 and cfg.model.decoders == "both"
    t0 = time.perf_counter()
    report = model_grad_check(cfg.model, cfg.task, seed=0, n_episodes=2, max_entries=48)
    seconds = time.perf_counter() - t0
    n_trainable = len([p for p in Model(cfg.model, make_rng(0)).parameters() if p.trainable])
    worst = max(report, key=report.get)
    ok = len(report) == n_trainable and report[worst] < 1e-4 and seconds < 300
    verdict(3, "gradient suite", ok,
            f"{len(report)} parameter groups, max rel err {report[worst]:.2e} ({worst}), {seconds:.1f}s")


# ---------------------------------------------------------------------------
# 4. attention invariants
# ---------------------------------------------------------------------------

def _instance(rng):
    m, n = rng.integers(1, 17, size=2)
    d = int(rng.choice([4, 8, 16]))
    h = int(rng.choice([1, 2, 4]))
    return rng.normal(size=(m, d)) * rng.uniform(0.1, 3), rng.normal(size=(n, d)) * rng.uniform(0.1, 3), h


def test_criterion_4_attention_invariants():
    rng = make_rng(4)
    failures = {"convexity": 0, "source permutation": 0, "target permutation": 0, "shift": 0}
    for _ in range(1000):
        x, y, h = _instance(rng)
        out, w = simplified_attention(x, y, h, return_weights=True)
        if w.min() < 0 or w.max() > 1 or np.max(np.abs(w.sum(-1) - 1)) > 1e-12:
            failures["convexity"] += 1
    for _ in range(1000):
        x, y, h = _instance(rng)
        perm = rng.permutation(len(y))
        if np.max(np.abs(simplified_attention(x, y[perm], h).value - simplified_attention(x, y, h).value)) > 1e-12:
            failures["source permutation"] += 1
    for _ in range(1000):
        x, y, h = _instance(rng)
        perm = rng.permutation(len(x))
        if np.max(np.abs(simplified_attention(x[perm], y, h).value - simplified_attention(x, y, h).value[perm])) > 1e-12:
            failures["target permutation"] += 1
    for _ in range(1000):
        x, y, h = _instance(rng)
        c = rng.uniform(-50, 50)
        shifted = simplified_attention(x, y, h, key_bias=np.full(len(y), c))
        if np.max(np.abs(shifted.value - simplified_attention(x, y, h).value)) > 1e-12:
            failures["shift"] += 1
    verdict(4, "attention invariants", sum(failures.values()) == 0,
            ", ".join(f"{k} {v}/1000 failed" for k, v in failures.items()))


# ---------------------------------------------------------------------------
# 5. metric oracles
# ---------------------------------------------------------------------------

def _brute_ndcg(scores, rel):
    c = len(scores)
    k = int(np.sum(rel > 0))
    disc = [1.0 / math.log2(i + 2) for i in range(k)]
    order = sorted(range(c), key=lambda i: (-scores[i], i))
    dcg = sum(rel[order[i]] * disc[i] for i in range(k))
    idcg = max(sum(rel[p[i]] * disc[i] for i in range(k)) for p in itertools.permutations(range(c)))
    return dcg / idcg


def _hand_rank(scores, gt):
    return 1 + sum(1 for j, s in enumerate(scores) if s > scores[gt] or (s == scores[gt] and j < gt))


def test_criterion_5_metric_oracles():
    rng = make_rng(5)
    ndcg_fail = rank_fail = mono_fail = 0
    for case in range(1000):
        c = int(rng.integers(2, 7))
        # integer scores on half the cases exercise the tie rule
        scores = rng.integers(0, 4, size=c).astype(float) if case % 2 else rng.normal(size=c)
        rel = rng.choice([0.0, 0.5, 1.0], size=c) if case % 3 else rng.uniform(0, 1, size=c)
        if rel.sum() == 0:
            rel[rng.integers(c)] = 1.0
        if abs(ndcg(scores, rel) - _brute_ndcg(list(scores), rel)) > 1e-12:
            ndcg_fail += 1
        gt = int(rng.integers(c))
        r = _hand_rank(list(scores), gt)
        if not (mean_rank(scores, gt) == r and mrr(scores, gt) == 1.0 / r
                and all(recall_at_k(scores, gt, k) == int(r <= k) for k in (1, 5, 10))):
            rank_fail += 1
    for _ in range(1000):
        c = int(rng.integers(2, 21))
        scores = rng.normal(size=c)
        rel = rng.uniform(0, 1, size=c)
        gt = int(rng.integers(c))
        base = episode_metrics(scores, gt, rel)
        for f in (np.exp, lambda s: 3 * s + 7, lambda s: s**3 + s, np.arctan):
            if episode_metrics(f(scores), gt, rel) != base:
                mono_fail += 1
                break
    verdict(5, "metric oracles", ndcg_fail == rank_fail == mono_fail == 0,
            f"NDCG vs brute force {ndcg_fail}/1000 failed, rank metrics {rank_fail}/1000, "
            f"monotone transforms {mono_fail}/1000")


# ---------------------------------------------------------------------------
# 6. learning check
# ---------------------------------------------------------------------------

def test_criterion_6_learning(runs):
    t0 = time.perf_counter()
    res, test = runs.get(0)
    chance = 100.0 / runs.cfg.task.n_candidates
    untrained = []
    for seed in SEEDS:
        fresh = Model(runs.cfg.model, make_rng(1000 + seed))
        untrained.append(evaluate(fresh, runs.splits()["test"], "disc").r1)
    untrained_r1 = float(np.mean(untrained))
    seconds = time.perf_counter() - t0
    ok = (
        test.r1 >= 90.0
        and test.ndcg >= 90.0
        and abs(untrained_r1 - chance) <= 3.0
        and res.history[3].probe_loss < res.history[0].probe_loss
        and seconds < 600
    )
    verdict(6, "learning check", ok,
            f"held-out R@1 {test.r1:.1f}%, NDCG {test.ndcg / 100:.4f} after {len(res.history) - 1} epochs; "
            f"untrained R@1 {untrained_r1:.1f}% (chance {chance:.0f}%); {seconds:.0f}s")


# ---------------------------------------------------------------------------
# 7. self-attention ablation direction
# ---------------------------------------------------------------------------

def test_criterion_7_self_attention_ablation(runs):
    on = [runs.get(s, True)[1].ndcg / 100 for s in SEEDS]
    off = [runs.get(s, False)[1].ndcg / 100 for s in SEEDS]
    verdict(7, "self-attention ablation", np.mean(on) >= np.mean(off) - 0.02,
            f"mean NDCG with self-attention {np.mean(on):.4f}, without {np.mean(off):.4f} "
            f"over seeds {list(SEEDS)}")


# ---------------------------------------------------------------------------
# 8. determinism
# ---------------------------------------------------------------------------

def test_criterion_8_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"n_train": 400, "n_val": 100, "n_test": 100, "epochs": 2, "seed": 11}\n')
    files = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli_main(["train", "--config", str(cfg), "--out", str(out)], io.StringIO(), io.StringIO()) == 0
        assert cli_main(["evaluate", "--weights", str(out / "weights.bin"), "--mode", "avg",
                         "--out", str(out / "eval")], io.StringIO(), io.StringIO()) == 0
        files.append([(out / "metrics.csv").read_bytes(), (out / "eval" / "metrics.csv").read_bytes(),
                      (out / "weights.bin").read_bytes()])
    same = [x == y for x, y in zip(*files)]
    verdict(8, "determinism", all(same),
            f"train metrics.csv identical: {same[0]}, evaluate metrics.csv identical: {same[1]}, "
            f"weights.bin identical: {same[2]}")
