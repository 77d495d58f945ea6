"""Ten end-to-end acceptance checks, one test per criterion.

Criteria 6-8 share a cached matrix of benchmark runs (module-scoped fixture),
so the expensive experiments happen once.  Each test prints one line with the
measured values before asserting, so a red run still shows its numbers.
"""

import time

import numpy as np
import pytest

from helpers import FD_TOL, fd_max_rel_err, projection_loss
from test_autodiff import _op_cases
from test_losses import cma_oracle, cmpc_oracle
from protofed.autodiff import OP_KINDS, constant
from protofed.cli import main as cli_main
from protofed.config import ExperimentConfig
from protofed.datagen import assign_missing_modalities
from protofed.fedsim import run_experiment
from protofed.losses import CMA_KINDS, cma_loss, cmpc_loss, cmpr_loss, cross_entropy
from protofed.prototypes import aggregate_complete, compute_local_prototypes

# The benchmark settings shared by criteria 6-8: heavy label skew, severe
# modality dropout, complementary modality views.
BENCH = dict(n_classes=4, n_modalities=2, n_clients=20, beta=0.2, q=0.8,
             rounds=60, participation=0.25, n_samples=2400, class_sep=1.0,
             noise_sigma=1.35, view_size=8, local_epochs=2, lr=0.01,
             alpha_reg=0.1, alpha_con=5.0)
SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="module")
def bench():
    """Memoized benchmark runner keyed by (algorithm, seed, overrides)."""
    cache = {}

    def get(alg, seed, **kw):
        key = (alg, seed, tuple(sorted(kw.items())))
        if key not in cache:
            cfg = ExperimentConfig(algorithm=alg, seed=seed, **{**BENCH, **kw})
            cache[key] = run_experiment(cfg).summary
        return cache[key]

    return get


# ---------------------------------------------------------------------------
# criterion 1: finite-difference gradient suite
# ---------------------------------------------------------------------------

def _loss_cases(rng):
    B, d, K = 3, 5, 3
    y = rng.integers(0, K, size=B)
    protos = {k: rng.normal(size=d) for k in range(K)}
    shapes = [(B, d), (B, d)]
    cases = {
        "ce": (lambda t: cross_entropy(t, y), [rng.normal(size=(B, K))]),
        "cmpr": (lambda t: cmpr_loss(t, y, protos), [rng.normal(size=(B, d))]),
        "cmpc": (lambda *t: cmpc_loss(list(t), [True, True], y, protos, 0.1),
                 [rng.normal(size=s) for s in shapes]),
    }
    for kind in CMA_KINDS:
        arrays = [rng.normal(size=s) for s in shapes]
        if kind in ("l1", "smooth_l1"):
            # keep |a-b| away from the kink at 0 (l1) and the branch switch
            # at delta=1 (smooth_l1) so central differences stay valid
            arrays[1] = arrays[0] + np.sign(rng.normal(size=shapes[0])) * (
                0.2 + 0.4 * rng.random(shapes[0]))
        fn = (lambda k: lambda *t: cma_loss(list(t), [True, True], k))(kind)
        cases[f"cma_{kind}"] = (fn, arrays)
    return cases


def test_criterion_01_gradient_suite():
    t0 = time.monotonic()
    worst = {}
    for i in range(50):
        rng = np.random.default_rng(9_000 + i)
        for name, op, arrays in _op_cases(rng):
            make_loss = projection_loss(op, arrays, rng)
            worst[name] = max(worst.get(name, 0.0),
                              fd_max_rel_err(make_loss, arrays))
        for name, (fn, arrays) in _loss_cases(rng).items():
            worst[name] = max(worst.get(name, 0.0), fd_max_rel_err(fn, arrays))
    assert set(OP_KINDS) <= set(worst)
    elapsed = time.monotonic() - t0
    top = max(worst.values())
    print(f"\ncriterion 1: max rel err {top:.2e} over {len(worst)} op/loss "
          f"kinds x 50 cases each in {elapsed:.1f}s (budget 60s)")
    assert top < FD_TOL, worst
    assert elapsed < 60.0


# ---------------------------------------------------------------------------
# criterion 2: loss enumeration oracles
# ---------------------------------------------------------------------------

def test_criterion_02_loss_oracles():
    rng = np.random.default_rng(1)
    worst_cmpc = 0.0
    for _ in range(100):
        K = int(rng.integers(2, 6))
        d = int(rng.integers(2, 17))
        M = int(rng.integers(1, 4))
        B = int(rng.integers(1, 7))
        y = rng.integers(0, K, size=B)
        present = [bool(rng.integers(0, 2)) for _ in range(M)]
        if not any(present):
            present[0] = True
        protos = {k: rng.normal(size=d) for k in range(K) if rng.random() < 0.8}
        if not protos:
            protos = {0: rng.normal(size=d)}
        zs = [rng.normal(size=(B, d)) for _ in range(M)]
        got = float(cmpc_loss([constant(z) for z in zs], present, y, protos, 0.1).data)
        want = cmpc_oracle(zs, present, y, protos, 0.1)
        worst_cmpc = max(worst_cmpc, abs(got - want))
    worst_cma = 0.0
    for i in range(100):
        M = int(rng.integers(2, 4))
        B = int(rng.integers(1, 6))
        d = int(rng.integers(2, 9))
        kind = CMA_KINDS[i % 4]
        present = [True] * M
        zs = [rng.normal(size=(B, d)) for _ in range(M)]
        got = float(cma_loss([constant(z) for z in zs], present, kind).data)
        worst_cma = max(worst_cma, abs(got - cma_oracle(zs, present, kind)))
    print(f"\ncriterion 2: worst cmpc oracle dev {worst_cmpc:.2e} (tol 1e-9), "
          f"worst cma dev {worst_cma:.2e} (tol 1e-12), 100 instances each")
    assert worst_cmpc < 1e-9
    assert worst_cma < 1e-12


# ---------------------------------------------------------------------------
# criterion 3: prototype identities
# ---------------------------------------------------------------------------

def test_criterion_03_prototype_identities():
    rng = np.random.default_rng(2)
    for case in range(100):
        K = int(rng.integers(2, 6))
        d = int(rng.integers(2, 9))
        n_clients = int(rng.integers(1, 6))
        sets = []
        for cid in range(n_clients):
            B = int(rng.integers(1, 12))
            reps = rng.normal(size=(B, d))
            y = rng.integers(0, K, size=B)
            local = compute_local_prototypes(reps, y, client_id=cid)
            for k in local.coverage():
                mask = y == k
                assert np.array_equal(local.vectors[k], reps[mask].mean(axis=0))
                assert local.counts[k] == int(mask.sum())
            sets.append(local)
        agg = aggregate_complete(sets, round_index=case)
        for k in agg.vectors:
            stack = [s.vectors[k] for s in sets if k in s.vectors]
            assert np.array_equal(agg.vectors[k], np.stack(stack).mean(axis=0))
            assert agg.contributors[k] == len(stack)
        perm = [sets[i] for i in rng.permutation(n_clients)]
        shuffled = aggregate_complete(perm, round_index=case)
        assert all(np.array_equal(agg.vectors[k], shuffled.vectors[k])
                   for k in agg.vectors)
        single = aggregate_complete([sets[0]])
        assert all(np.array_equal(single.vectors[k], sets[0].vectors[k])
                   for k in sets[0].coverage())
    print("\ncriterion 3: local/aggregate means, permutation invariance, and "
          "singleton idempotence hold exactly over 100 cases")


# ---------------------------------------------------------------------------
# criterion 4: plain-averaging equivalence with the loss stack off
# ---------------------------------------------------------------------------

def test_criterion_04_fedavg_equivalence():
    shared = dict(n_samples=400, n_classes=4, n_modalities=2, n_clients=10,
                  rounds=20, participation=0.3, beta=1.0, q=0.5, lr=0.005, seed=0)
    off = run_experiment(ExperimentConfig(algorithm="mfcpl", use_cmpr=False,
                                          use_cmpc=False, use_cma=False, **shared))
    ref = run_experiment(ExperimentConfig(algorithm="fedavg", **shared))
    same_params = np.array_equal(off.final_params.flatten(),
                                 ref.final_params.flatten())
    same_rounds = all(a.val == b.val and a.train_loss == b.train_loss
                      for a, b in zip(off.reports, ref.reports))
    print(f"\ncriterion 4: toggles-off vs fedavg over 20 rounds: params "
          f"identical={same_params}, round reports identical={same_rounds}")
    assert same_params and same_rounds


# ---------------------------------------------------------------------------
# criterion 5: missingness statistics
# ---------------------------------------------------------------------------

def test_criterion_05_missingness_statistics():
    rng = np.random.default_rng(3)
    presence = assign_missing_modalities(20000, 2, 0.5, rng)
    both = float(np.mean([p == (True, True) for p in presence]))
    nonempty = all(any(p) for p in presence)
    singles = assign_missing_modalities(20000, 2, 1.0, rng)
    all_single = all(sum(p) == 1 for p in singles)
    print(f"\ncriterion 5: q=0.5 gives P(both present)={both:.4f} "
          f"(want 0.25 +/- 0.02), all nonempty={nonempty}; q=1.0 all "
          f"singletons={all_single}")
    assert abs(both - 0.25) < 0.02
    assert nonempty and all_single


# ---------------------------------------------------------------------------
# criteria 6-8: benchmark experiments
# ---------------------------------------------------------------------------

def test_criterion_06_headline_gap(bench):
    t0 = time.monotonic()
    gaps = []
    for seed in SEEDS:
        m = bench("mfcpl", seed)["headline"]["macro_f1"]
        f = bench("fedavg", seed)["headline"]["macro_f1"]
        gaps.append(m - f)
    elapsed = time.monotonic() - t0
    wins = sum(g > 0 for g in gaps)
    mean_gap = float(np.mean(gaps))
    print(f"\ncriterion 6: strict wins {wins}/5 (want >= 4), mean macro-F1 gap "
          f"{mean_gap:+.4f} (want >= +0.02), per-seed "
          f"{[round(g, 4) for g in gaps]}, {elapsed:.0f}s for 10 runs "
          f"(budget 600s)")
    assert wins >= 4
    assert mean_gap >= 0.02
    assert elapsed < 600.0


def test_criterion_07_degradation_trend(bench):
    means = []
    for q in (0.5, 0.8, 1.0):
        scores = [bench("fedavg", s, q=q)["headline"]["macro_f1"] for s in SEEDS]
        means.append(float(np.mean(scores)))
    print(f"\ncriterion 7: fedavg mean macro-F1 at q=0.5/0.8/1.0: "
          f"{[round(m, 4) for m in means]} (want non-increasing)")
    assert means[0] >= means[1] >= means[2]


def test_criterion_08_ablation_direction(bench):
    variants = {
        "full": {},
        "no_cmpr": dict(use_cmpr=False),
        "no_cmpc": dict(use_cmpc=False),
        "no_cma": dict(use_cma=False),
    }
    means = {}
    for name, kw in variants.items():
        scores = [bench("mfcpl", s, **kw)["headline"]["macro_f1"] for s in SEEDS]
        means[name] = float(np.mean(scores))
    print(f"\ncriterion 8: 5-seed mean macro-F1 "
          f"{({k: round(v, 4) for k, v in means.items()})} "
          f"(full must be >= each ablation - 0.005)")
    for name in ("no_cmpr", "no_cmpc", "no_cma"):
        assert means["full"] >= means[name] - 0.005, name


# ---------------------------------------------------------------------------
# criterion 9: run determinism across thread counts
# ---------------------------------------------------------------------------

def test_criterion_09_thread_determinism(tmp_path, capsys, monkeypatch):
    argv = ["run", "--n-samples", "240", "--n-classes", "3", "--n-clients", "6",
            "--rounds", "3", "--participation", "0.5", "--lr", "0.005",
            "--min-samples", "4", "--seed", "1"]
    blobs = {}
    for threads in ("1", "4"):
        monkeypatch.setenv("PROTOFED_THREADS", threads)
        out = tmp_path / f"t{threads}"
        assert cli_main(argv + ["--out", str(out)]) == 0
        blobs[threads] = (out / "summary.json").read_bytes()
    capsys.readouterr()
    identical = blobs["1"] == blobs["4"]
    print(f"\ncriterion 9: summary.json byte-identical across "
          f"PROTOFED_THREADS=1 vs 4: {identical}")
    assert identical


# ---------------------------------------------------------------------------
# criterion 10: prototype payload size
# ---------------------------------------------------------------------------

def test_criterion_10_payload_fraction(bench):
    summary = bench("mfcpl", 0)
    per_client = summary["payload"]["prototype_bytes_per_client"]
    params = summary["payload"]["parameters_bytes"]
    frac = max(per_client) / params
    print(f"\ncriterion 10: worst per-client prototype payload "
          f"{max(per_client)}B vs {params}B of parameters -> "
          f"{100 * frac:.3f}% (want < 1%)")
    assert frac < 0.01
