"""Acceptance suite: one test per criterion, each printing a pass/fail line.

The two ``ptal e2e --seed 7`` runs are shared: criterion 4 reads the first
run's report, 2 its mapper, 5 retrains the localizer on its artifacts, and 7
compares the two runs byte for byte.
"""

import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from ptal import datagen
from ptal import keypoint as kp
from ptal import localizer as L
from ptal import mapper as M
from ptal import metrics, nn

from oracles import (brute_peaks, fd_check, naive_classification_loss, naive_keypoint_loss, naive_mapper_loss,
                     naive_pool, random_instance, ref_ap, ref_iou, ref_match, ref_rank)

SEED = 7


def _ptal(args, cwd):
    env = {k: v for k, v in os.environ.items() if k != "PTAL_THREADS"}
    return subprocess.run([sys.executable, "-m", "ptal.cli", *args], cwd=cwd, env=env, capture_output=True,
                          text=True)


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    """Two identical ``ptal e2e --seed 7`` runs in separate directories."""
    root = tmp_path_factory.mktemp("acceptance")
    runs = {}
    for name in ("A", "B"):
        (root / name).mkdir()
        t0 = time.perf_counter()
        res = _ptal(["e2e", "--seed", str(SEED), "--out", "run"], root / name)
        wall = time.perf_counter() - t0
        assert res.returncode == 0, res.stderr[-2000:]
        events = [json.loads(line) for line in res.stderr.splitlines() if line.startswith("{")]
        stages = {e["stage"]: e["stage_seconds"] for e in events if "stage_seconds" in e}
        runs[name] = {"dir": root / name, "out": root / name / "run", "wall": wall, "stages": stages}
    return runs


# 1. gradient suite

LAYER_NETS = [
    ("dense/relu+sigmoid", [nn.dense(6, 8, "relu"), nn.dense(8, 4, "sigmoid")], (5, 6)),
    ("dense/tanh+softmax", [nn.dense(6, 8, "tanh"), nn.dense(8, 4, "softmax")], (5, 6)),
    ("dense/none", [nn.dense(6, 8), nn.dense(8, 3)], (5, 6)),
    ("conv1d/k3 relu+sigmoid", [nn.conv1d(5, 8, 3, "relu"), nn.conv1d(8, 3, 3, "sigmoid")], (20, 5)),
    ("conv1d/k1 tanh + k5 none", [nn.conv1d(5, 6, 1, "tanh"), nn.conv1d(6, 3, 5)], (20, 5)),
    ("conv1d+meanpool+dense", [nn.conv1d(5, 8, 3, "relu"), nn.meanpool(8), nn.dense(8, 8, "relu"),
                               nn.dense(8, 2)], (20, 5)),
]


def _composed_worst(mapper, divisor, rng, n_probes, h=1e-4):
    model = L.LocalizerModel.build(6, 3, mapper, L.LocalizerConfig(pool_divisor=divisor, seed=4))
    model.predictor.params[:] = rng.normal(scale=0.3, size=model.predictor.n_params)
    sv = kp.ShortVideo(rng.normal(size=(mapper.T_s, 6)), 0.45, 0, "v", 0, 100, 45)
    _, gp, gc, _ = model.loss_and_grads(sv, 1)
    worst = 0.0
    for net, g in ((model.predictor, gp), (model.classifier, gc)):
        for i in rng.choice(net.n_params, size=n_probes, replace=False):
            old = net.params[i]
            net.params[i] = old + h
            up = model.loss_and_grads(sv, 1)[0]
            net.params[i] = old - h
            down = model.loss_and_grads(sv, 1)[0]
            net.params[i] = old
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-6))
    return worst


def test_criterion_1_gradient_suite(quick_mapper, criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, probes = {}, 0
    for name, layers, shape in LAYER_NETS:
        net = nn.Network(layers, rng_seed=3)
        worst[name] = fd_check(net, rng.normal(size=shape), rng, n_probes=100)
        probes += min(100, net.n_params)
    for divisor in L.POOL_DIVISORS:
        worst[f"composed/{divisor}"] = _composed_worst(quick_mapper, divisor, rng, 60)
        probes += 120
    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    ok = top <= 1e-3 and elapsed < 30 and probes >= 100
    criterion(1, ok, f"worst rel err {top:.2e} over {probes} probes, {elapsed:.1f}s (limits 1e-3, 30s)")
    assert ok, worst


# 2. mapper fidelity

def test_criterion_2_mapper_fidelity(e2e, criterion):
    run = e2e["A"]
    nets, meta = nn.load_networks(run["out"] / "mapper.bin")
    mapper = M.Mapper(nets["mapper"], meta["T_s"])
    rc = meta["run_config"]
    assert (rc["mapper_pairs"], rc["T_s"], rc["lr_mapper"]) == (100_000, 64, 1e-5)
    # fresh held-out proposals, disjoint from the training and early-stopping draws
    acc = mapper.accuracy(*M.simulate_pairs(10_000, 64, seed=2024))
    seconds = run["stages"]["mapper"]
    ok = acc >= 0.99 and seconds < 300
    criterion(2, ok, f"held-out per-frame accuracy {acc:.4f} (>= 0.99), training {seconds:.0f}s (< 300s)")
    assert ok


# 3. oracle equivalence

def test_criterion_3_oracle_equivalence(criterion):
    rng = np.random.default_rng(99)
    t0 = time.perf_counter()
    worst = {"peaks": 0, "pool": 0.0, "kp_loss": 0.0, "mapper_loss": 0.0, "cls_loss": 0.0, "iou": 0.0, "ap": 0.0,
             "match": 0}
    for _ in range(1000):
        heat = np.round(rng.random((int(rng.integers(1, 60)), 3)), 1)
        theta = float(rng.choice([0.0, 0.15, 0.5]))
        worst["peaks"] += [tuple(k) for k in kp.extract_keypoints(heat, theta)] != brute_peaks(heat, theta)

        x, m = rng.normal(size=(16, 4)), rng.random(16)
        fg, bg = naive_pool(x, m)
        worst["pool"] = max(worst["pool"], np.abs(L.pool_foreground(x, m) - fg).max(),
                            np.abs(L.pool_background(x, m) - bg).max())

        T, C = int(rng.integers(2, 30)), int(rng.integers(1, 5))
        h = rng.random((T, C))
        labels = list(dict.fromkeys((int(rng.integers(T)), int(rng.integers(C))) for _ in range(3)))
        worst["kp_loss"] = max(worst["kp_loss"], abs(kp.keypoint_loss(h, labels) - naive_keypoint_loss(h, labels)))

        pred = rng.random((2, 12))
        target = (rng.random((2, 12)) > 0.5).astype(float)
        worst["mapper_loss"] = max(worst["mapper_loss"],
                                   abs(M.mapper_loss(pred, target) - naive_mapper_loss(pred, target)))

        a, b = rng.dirichlet(np.ones(C + 1)), rng.dirichlet(np.ones(C + 1))
        c, beta, use_bg = int(rng.integers(C)), float(rng.uniform(0, 3)), bool(rng.integers(2))
        worst["cls_loss"] = max(worst["cls_loss"], abs(L.classification_loss(a, b, c, beta, use_bg)
                                                       - naive_classification_loss(a, b, c, beta, use_bg)))

        s1, s2 = sorted(rng.integers(0, 50, size=2)), sorted(rng.integers(0, 50, size=2))
        worst["iou"] = max(worst["iou"], abs(metrics.temporal_iou(s1, s2) - ref_iou(s1, s2)))

        preds, gts = random_instance(rng, 5, int(rng.integers(1, 4)))
        thr = float(rng.choice([0.1, 0.3, 0.5, 0.7]))
        worst["ap"] = max(worst["ap"], abs(metrics.average_precision(preds, gts, thr) - ref_ap(preds, gts, thr)))
        ranked = ref_rank(preds)
        worst["match"] += metrics.match_predictions(ranked, gts, thr).tolist() != ref_match(ranked, gts, thr)
    elapsed = time.perf_counter() - t0
    exact_ok = worst["peaks"] == 0 and worst["match"] == 0 and worst["iou"] == 0.0
    close_ok = all(worst[k] <= 1e-12 for k in ("pool", "kp_loss", "mapper_loss", "cls_loss", "ap"))
    ok = exact_ok and close_ok and elapsed < 60
    detail = ", ".join(f"{k}={v:.1e}" if isinstance(v, float) else f"{k} mismatches={v}" for k, v in worst.items())
    criterion(3, ok, f"1000 instances each, {detail}, {elapsed:.1f}s (< 60s)")
    assert ok


# 4. end-to-end learning

def test_criterion_4_end_to_end(e2e, criterion):
    run = e2e["A"]
    corpus = datagen.load_corpus(run["out"] / "data")
    protos = np.array(corpus.meta["prototypes"])
    for v in corpus.videos:  # the learnability precondition
        for s in v.segments:
            d = ((v.features[s.start:s.end + 1, None, :] - protos[None]) ** 2).sum(-1)
            assert np.all(d.argmin(axis=1) == s.class_id)
    doc = json.loads((run["out"] / "report.json").read_text())
    rep, base = doc["report"], doc["baseline_length_0.5"]
    k = rep["iou_thresholds"].index(0.5)
    m50, avg, b50 = rep["map_per_iou"][k], rep["avg_map"], base["map_per_iou"][k]
    ok = m50 >= 0.5 and avg >= 0.6 and m50 - b50 >= 0.1 and run["wall"] < 600
    criterion(4, ok, f"mAP@0.5 {m50:.3f} (>= 0.5), avg mAP {avg:.3f} (>= 0.6), baseline mAP@0.5 {b50:.3f} "
                     f"(gap >= 0.1), wall {run['wall']:.0f}s (< 600s)")
    assert ok


# 5. ablation direction

def _ablation(run, flag, name):
    cwd = run["dir"]
    for args in (["train-localizer", "--data", "run/data", "--keypoint-model", "run/keypoint.bin",
                  "--mapper", "run/mapper.bin", flag, "--seed", str(SEED), "--quiet", "--out", f"abl/{name}.bin"],
                 ["infer", "--data", "run/data", "--keypoint-model", "run/keypoint.bin", "--localizer",
                  f"abl/{name}.bin", "--quiet", "--out", f"abl/{name}-preds.json"],
                 ["eval", "--preds", f"abl/{name}-preds.json", "--data", "run/data", "--quiet",
                  "--report", f"abl/{name}-report.json"]):
        res = _ptal(args, cwd)
        assert res.returncode == 0, res.stderr[-2000:]
    return json.loads((cwd / "abl" / f"{name}-report.json").read_text())["report"]


def test_criterion_5_ablation_direction(e2e, criterion):
    run = e2e["A"]
    full = json.loads((run["out"] / "report.json").read_text())["report"]["avg_map"]
    no_bg = _ablation(run, "--no-bg-loss", "no-bg")["avg_map"]
    no_off = _ablation(run, "--no-offset", "no-offset")["avg_map"]
    ok = no_bg < full and (full - no_off) <= (full - no_bg)
    criterion(5, ok, f"avg mAP full {full:.3f}, without background loss {no_bg:.3f}, "
                     f"without offset {no_off:.3f}")
    assert ok


# 6. statistics identity

def _identity_holds(rep):
    if rep["no_predictions"]:
        return True
    p, r = rep["precision"], rep["recall"]
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return rep["false_alarm"] + p == 1.0 and abs(rep["f_measure"] - f) <= 1e-12


def test_criterion_6_statistics_identity(e2e, criterion):
    reports = []
    for path in sorted(e2e["A"]["dir"].rglob("*report.json")):
        doc = json.loads(path.read_text())
        reports += [doc["report"]] + ([doc["baseline_length_0.5"]] if "baseline_length_0.5" in doc else [])
    rng = np.random.default_rng(6)
    for _ in range(1000):
        preds, gts = random_instance(rng, int(rng.integers(0, 12)), int(rng.integers(0, 8)), C=3)
        reports.append(metrics.evaluate(preds, gts, C=3).to_dict())
    bad = [r for r in reports if not _identity_holds(r)]
    ok = not bad
    criterion(6, ok, f"{len(reports) - len(bad)}/{len(reports)} evaluation reports satisfy "
                     f"FA + P == 1 exactly and F == 2PR/(P+R) to 1e-12")
    assert ok


# 7. determinism

def test_criterion_7_determinism(e2e, criterion):
    a, b = e2e["A"]["out"], e2e["B"]["out"]
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    other = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    differ = [str(f) for f in files if (a / f).read_bytes() != (b / f).read_bytes()] if files == other else ["<tree>"]
    key = {"report.json", "keypoint.bin", "mapper.bin", "localizer.bin", "preds.json"}
    ok = not differ and key <= {str(f) for f in files}
    criterion(7, ok, f"{len(files)} files compared across two runs, {len(differ)} differ")
    assert ok, differ
