"""Acceptance criteria, one test per criterion.

Each test reports a single PASS/FAIL line (collected in the terminal summary).
The end-to-end proxy generates the 1000-coil corpus and runs 10-fold
cross-validation for all four architectures; it dominates the runtime.
"""
import hashlib
import json
import math
import time

import numpy as np
import pytest

from coilfail.augment import sample_fade_params, sigmoid_fade, synthesize_broken, synthetic_count
from coilfail.cli import main
from coilfail.dataio import Window
from coilfail.harness import audit_cv_manifest, audit_sweep
from coilfail.manifest import read_manifest
from coilfail.models import KINDS
from coilfail.numerics import check_gradients
from gradcases import LAYER_CASES, LAYER_TOL, MODEL_TOL, SEEDS, model_case

# Proxy protocol: default learning rate everywhere; the three large networks get a
# shortened schedule so four 10-fold runs fit the time budget on one CPU core.
PROXY_SCHEDULE = {
    "lstm": ["--epochs", "20", "--patience", "8"],
    "fcn": ["--epochs", "20", "--patience", "8"],
    "resnet": ["--epochs", "20", "--patience", "8"],
    "tcnn": ["--epochs", "100", "--patience", "20"],
}
PROXY_SEED = "1"
BUDGET_SECONDS = 30 * 60


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def proxy_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("proxy") / "data"
    t0 = time.perf_counter()
    assert main(["generate", "--coils", "1000", "--broken-frac", "0.022", "--seed", PROXY_SEED,
                 "--out", str(out)]) == 0
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def proxy_runs(proxy_corpus, tmp_path_factory):
    data, gen_seconds = proxy_corpus
    root = tmp_path_factory.mktemp("proxy_cv")
    elapsed = gen_seconds
    runs = {}
    for kind in KINDS:
        out = root / kind
        t0 = time.perf_counter()
        code = main(["cv", "--model", kind, "--k", "10", "--seed", PROXY_SEED, *PROXY_SCHEDULE[kind],
                     "--data", str(data), "--out", str(out)])
        elapsed += time.perf_counter() - t0
        assert code == 0
        _, result = read_manifest(out / "manifest.json")
        runs[kind] = {"manifest": result["runs"][kind],
                      "metrics": json.loads((out / "metrics.json").read_text())["models"][0]}
    return runs, elapsed


# ---------------------------------------------------------------- gradients
def test_gradient_oracle(criterion):
    t0 = time.perf_counter()
    worst_layer, worst_model = 0.0, 0.0
    for name, case in LAYER_CASES.items():
        for seed in SEEDS:
            fn, tensors = case(seed)
            worst_layer = max(worst_layer, max(check_gradients(fn, tensors, h=1e-5).values()))
    for kind in KINDS:
        for seed in SEEDS:
            fn, params, rng = model_case(kind, seed)
            errors = check_gradients(fn, params, h=1e-5, max_entries=3, rng=rng)
            worst_model = max(worst_model, max(errors.values()))
    seconds = time.perf_counter() - t0
    ok = worst_layer < LAYER_TOL and worst_model < MODEL_TOL and seconds < 120 and len(SEEDS) >= 20
    criterion("gradient oracle", ok,
              f"{len(LAYER_CASES)} layers x {len(SEEDS)} seeds max {worst_layer:.1e} < {LAYER_TOL}; "
              f"{len(KINDS)} models x {len(SEEDS)} seeds max {worst_model:.1e} < {MODEL_TOL}; {seconds:.0f}s")


# ------------------------------------------------------------- fade oracle
def test_fade_oracle(criterion):
    """25,000 windows x 40 timesteps = 10^6 (j, mu, sigma) triples."""
    rng = np.random.default_rng(2024)
    n_windows, length = 25_000, 40
    worst, bounded, monotone, in_range = 0.0, True, True, True
    j_grid = range(length)
    for _ in range(n_windows):
        params = sample_fade_params(rng)
        in_range &= params.in_sampling_range
        normal = Window("n", rng.normal(size=(4, length)), 0)
        broken = Window("b", rng.normal(size=(4, length)), 1)
        out = synthesize_broken(normal, broken, params).values
        # independent transcription: weight, then blend, feature by feature
        p = [1.0 / (1.0 + math.exp(-(j - params.mu) / params.sigma)) for j in j_grid]
        ref = (1.0 - np.array(p)) * normal.values + np.array(p) * broken.values
        worst = max(worst, float(np.max(np.abs(out - ref))))
        lo = np.minimum(normal.values, broken.values)
        hi = np.maximum(normal.values, broken.values)
        bounded &= bool(np.all((out >= lo - 1e-12) & (out <= hi + 1e-12)))
        # strictly increasing wherever consecutive values are distinct doubles; within
        # ~1e-16 of 1 neighbouring exact values round to the same float
        fade = np.array([sigmoid_fade(j, params) for j in j_grid])
        steps = np.diff(fade)
        resolvable = 1.0 - fade[1:] > 1e-14
        monotone &= bool(np.all(steps >= 0) and np.all(steps[resolvable] > 0))
    ok = worst < 1e-12 and bounded and monotone and in_range
    criterion("fade oracle", ok, f"10^6 triples, max |dev| {worst:.1e}, bounded={bounded}, "
                                 f"monotone={monotone}, in range={in_range}")


# --------------------------------------------------------- metric identities
def _fold_identity_errors(fold):
    m, c = fold["metrics"], fold["confusion"]
    n = c["tp"] + c["fp"] + c["tn"] + c["fn"]
    pi = (c["tp"] + c["fn"]) / n
    errs = [abs(m["accuracy"] - (m["tn_rate"] * (1 - pi) + m["tp_rate"] * pi))]
    if c["tn"] + c["fp"]:
        errs.append(abs(m["tn_rate"] + m["fp_rate"] - 1))
    if c["tp"] + c["fn"]:
        errs.append(abs(m["fn_rate"] + m["tp_rate"] - 1))
    if m["precision"] + m["recall"]:
        errs.append(abs(m["f_score"] - 2 * m["precision"] * m["recall"] / (m["precision"] + m["recall"])))
    return max(errs)


def test_metric_identities(proxy_runs, criterion):
    runs, _ = proxy_runs
    folds = [f for r in runs.values() for f in r["manifest"]["folds"]]
    worst = max(_fold_identity_errors(f) for f in folds)
    spot = 100 * (0.9867 * (1 - 0.022) + 0.8417 * 0.022)
    ok = worst < 1e-12 and abs(spot - 98.33) < 0.05 and round(spot, 2) == 98.35
    criterion("metric identities", ok, f"{len(folds)} folds, max deviation {worst:.1e}; LSTM row gives {spot:.3f}%")


# --------------------------------------------------------- protocol guards
def test_protocol_guards(proxy_runs, criterion):
    runs, _ = proxy_runs
    problems = []
    for kind, run in runs.items():
        m = run["manifest"]
        problems += [f"{kind}: {p}" for p in audit_cv_manifest(m)]
        if m["k"] != 10:
            problems.append(f"{kind}: k={m['k']}")
    criterion("protocol guards", not problems, "; ".join(problems[:3]) or "4 x 10 folds audited")


# ------------------------------------------------------------ proxy scores
def test_end_to_end_proxy(proxy_runs, criterion):
    runs, elapsed = proxy_runs
    m = {k: r["metrics"] for k, r in runs.items()}
    ok = (m["lstm"]["accuracy"] >= 0.98 and m["lstm"]["f_score"] >= 0.85
          and all(m[k]["f_score"] >= 0.70 for k in ("fcn", "resnet", "tcnn"))
          and elapsed <= BUDGET_SECONDS)
    detail = ", ".join(f"{k} acc {100 * v['accuracy']:.2f}% F {v['f_score']:.3f}" for k, v in m.items())
    criterion("end-to-end proxy", ok, f"{detail}; {elapsed / 60:.1f} min")


# ------------------------------------------------------------------- sweep
def test_augmentation_sweep(proxy_corpus, tmp_path, criterion):
    data, _ = proxy_corpus
    common = ["--model", "tcnn", "--k", "10", "--seed", PROXY_SEED, "--epochs", "3", "--data", str(data)]
    assert main(["sweep", *common, "--out", str(tmp_path / "sweep")]) == 0
    assert main(["cv", *common, "--out", str(tmp_path / "cv")]) == 0
    _, sweep = read_manifest(tmp_path / "sweep" / "manifest.json")
    _, plain = read_manifest(tmp_path / "cv" / "manifest.json")
    arms = sweep["sweep"]["arms"]
    problems = list(audit_sweep(sweep["sweep"]))
    if [a["augment_target"] for a in arms] != [None, 0.024, 0.026]:
        problems.append("unexpected arms")
    for arm in arms[1:]:
        t = arm["augment_target"]
        for f in arm["folds"]:
            w = f["windows"]
            b0 = w["train_broken"] - w["train_synthetic"]
            if w["train_synthetic"] != synthetic_count(w["train_original"], b0, t):
                problems.append(f"target {t} fold {f['index']}: count off the ceiling rule")
            if w["train_broken"] < t * w["train"]:
                problems.append(f"target {t} fold {f['index']}: fraction below target")
    for arm in arms:
        for fa, fb in zip(arm["folds"], plain["runs"]["tcnn"]["folds"]):
            if fa["test_coils"] != fb["test_coils"] or fa["windows"]["test"] != fb["windows"]["test"]:
                problems.append("evaluation data differs between arms")
    if arms[0]["folds"] != plain["runs"]["tcnn"]["folds"] or arms[0]["mean"] != plain["runs"]["tcnn"]["mean"]:
        problems.append("no-op arm differs from plain cross-validation")
    rows = json.loads((tmp_path / "sweep" / "sweep.json").read_text())["arms"]
    fractions = [f"{r['train_broken']} ({100 * r['train_broken_fraction']:.2f}%)" for r in rows]
    criterion("augmentation sweep", not problems, "; ".join(problems[:3]) or " / ".join(fractions))


# ------------------------------------------------------------- determinism
def test_determinism(proxy_corpus, tmp_path, criterion):
    data, _ = proxy_corpus
    runs = {
        "generate": (["generate", "--coils", "1000", "--broken-frac", "0.022", "--seed", "5"],
                     ["coils.csv", "corpus_manifest.json"]),
        "train": (["train", "--model", "lstm", "--epochs", "2", "--seed", "3", "--data", str(data)],
                  ["model.ckpt", "history.csv"]),
        "cv": (["cv", "--model", "tcnn", "--k", "10", "--epochs", "2", "--save-checkpoints", "--data", str(data)],
               ["table.txt", "metrics.csv", "metrics.json", "folds.csv", "history.csv"]
               + [f"checkpoints/tcnn-fold{i}.ckpt" for i in range(10)]),
        "sweep": (["sweep", "--model", "tcnn", "--k", "10", "--epochs", "1", "--data", str(data)],
                  ["sweep.txt", "sweep.csv", "sweep.json"]),
    }
    mismatched = []
    checked = 0
    for command, (argv, files) in runs.items():
        a, b = tmp_path / command / "a", tmp_path / command / "b"
        assert main(argv + ["--out", str(a)]) == 0
        assert main([command, "--from-manifest", str(a / "manifest.json"), "--out", str(b)]) == 0
        for name in files:
            checked += 1
            if sha(a / name) != sha(b / name):
                mismatched.append(f"{command}/{name}")
    ckpt = tmp_path / "cv" / "a" / "checkpoints" / "tcnn-fold0.ckpt"
    for tag in ("a", "b"):
        ev = tmp_path / "evaluate" / tag
        src = ["--from-manifest", str(tmp_path / "evaluate" / "a" / "manifest.json")] if tag == "b" else \
            ["--checkpoint", str(ckpt), "--data", str(data)]
        assert main(["evaluate", *src, "--out", str(ev)]) == 0
    checked += 1
    if sha(tmp_path / "evaluate" / "a" / "evaluation.json") != sha(tmp_path / "evaluate" / "b" / "evaluation.json"):
        mismatched.append("evaluate/evaluation.json")
    criterion("determinism", not mismatched, ", ".join(mismatched) or f"{checked} files byte-identical on replay")
