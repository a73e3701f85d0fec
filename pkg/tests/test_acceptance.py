"""End-to-end acceptance criteria, one test per criterion (criterion 8 has five parts).

Each test records its outcome in ``conftest.ACCEPTANCE`` so the terminal
summary prints one PASS/FAIL line per criterion.  Criteria 8 and 9 run the
installed CLI on a 15-subject synthetic dataset and take the better part of
an hour on one CPU core.
"""

import hashlib
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE
from drowsiness import eegnet as en
from drowsiness.core import Recording, LaneDepartureEvent, WelchConfig, load_recording, \
    save_recording
from drowsiness.dsp import band_bins, welch_psd
from drowsiness.eval import anova_two_way, dunn_z, fdr_adjust
from drowsiness.labels import drowsiness_index
from drowsiness.smlr import smlr_aggregate
from test_dsp import naive_periodogram
from test_eegnet import finite_difference_check, perturb, random_tiny_case, tiny
from test_labels import tanh_oracle
from test_smlr import monte_carlo_fixture

ROOT = Path(__file__).resolve().parents[1]
DESK = ROOT / "configs" / "desk.json"
ALGS = ["RR", "RR-SMLR", "EEGNet", "EEGNet-PSD", "EEGNet-PSD-SMLR"]


def record(n, ok, detail):
    prev = ACCEPTANCE.get(n)
    if prev is not None:
        ok, detail = prev[0] and ok, f"{prev[1]}; {detail}"
    ACCEPTANCE[n] = (bool(ok), detail)


def check(n, ok, detail):
    record(n, ok, detail)
    assert ok, detail


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# 1-3: architecture and label function


def test_criterion_1_parameter_count():
    m, dt = timed(lambda: tiny(30, 7500, dtype="float32"))
    check(1, m.n_params == 8821 and dt < 1,
          f"build(30, 7500) has {m.n_params} parameters (want 8821), {dt:.2f}s")


def test_criterion_2_shape_ledger():
    def table(C, T):
        return {"input": (C, T), "conv1": (16, 1, T), "bn1": (16, 1, T),
                "reshape": (1, 16, T), "dropout1": (1, 16, T), "conv2": (4, 16, T),
                "bn2": (4, 16, T), "pool2": (4, 8, T // 4), "dropout2": (4, 8, T // 4),
                "conv3": (4, 8, T // 4), "bn3": (4, 8, T // 4), "pool3": (4, 4, T // 16),
                "dropout3": (4, 4, T // 16), "dense": (1,)}

    t0 = time.perf_counter()
    bad = []
    for C, T in [(30, 7500), (30, 7488), (4, 32)]:
        m = tiny(C, T, dtype="float32")
        got = dict(en.shape_ledger(m))
        if got != table(C, T):
            bad.append((C, T))
        x = np.random.default_rng(0).standard_normal((2, C, T)).astype(np.float32)
        if en.forward(m, x).shape != (2,):
            bad.append((C, T, "forward"))
    dt = time.perf_counter() - t0
    check(2, not bad and dt < 1, f"mismatches {bad}, {dt:.2f}s")


def test_criterion_3_index_function():
    t0 = time.perf_counter()
    below = drowsiness_index(np.linspace(1e-6, 1.0, 1000))
    grid = np.linspace(1.0, 25.0, 10_001)[1:]
    at2 = float(drowsiness_index(2.0))
    huge = drowsiness_index(np.geomspace(1.0001, 1e6, 1000))
    ok = (np.all(below == 0) and np.all(np.diff(drowsiness_index(grid)) > 0)
          and abs(at2 - 0.46211715726) < 1e-10 and abs(at2 - tanh_oracle(2.0)) < 1e-10
          and np.all(huge < 1))
    dt = time.perf_counter() - t0
    check(3, ok and dt < 1, f"y(2) = {at2:.12f}, {dt:.3f}s")


# ---------------------------------------------------------------------------
# 4-7: oracle suites


def test_criterion_4_welch_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(16, 4097))
        x = rng.standard_normal(n)
        cfg = WelchConfig(segment_len=n, overlap_frac=0.0, nfft=n, window="boxcar")
        f, p = welch_psd(x, cfg, fs_hz=250.0)
        f0, p0 = naive_periodogram(x, 250.0)
        worst = max(worst, float(np.max(np.abs(p - p0)) / np.max(p0)))
        assert np.allclose(f, f0)
    freqs = np.arange(WelchConfig().nfft // 2 + 1) * 250 / WelchConfig().nfft
    sl = band_bins(freqs, 4.0, 12.0, 67)
    n_bins = sl.stop - sl.start
    dt = time.perf_counter() - t0
    check(4, worst < 1e-9 and n_bins == 67 and dt < 60,
          f"max relative deviation {worst:.2e}, {n_bins} band bins, {dt:.1f}s")


def test_criterion_5_gradient_check():
    t0 = time.perf_counter()
    rel = zero = 0.0
    for seed in range(10):
        model, x, y = random_tiny_case(seed)
        r, z = finite_difference_check(model, x, y, seed=seed)
        rel, zero = max(rel, r), max(zero, z)
    dt = time.perf_counter() - t0
    check(5, rel < 1e-4 and zero < 1e-8 and dt < 120,
          f"max relative error {rel:.2e}, zero-gradient biases within {zero:.1e}, {dt:.1f}s")


def test_criterion_6_smlr_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    row = rng.uniform(size=200)
    idem = np.array_equal(smlr_aggregate(np.tile(row, (10, 1))).combined, row)
    equi = True
    for s in range(20):
        P = rng.standard_normal((8, 100)) + rng.standard_normal(100)
        perm = rng.permutation(8)
        equi &= np.array_equal(smlr_aggregate(P).combined, smlr_aggregate(P[perm]).combined)
    wins = hits = 0
    for seed in range(20):
        y, P = monte_carlo_fixture(seed)
        res = smlr_aggregate(P)
        wins += np.sqrt(np.mean((res.combined - y) ** 2)) <= np.sqrt(np.mean((P.mean(0) - y) ** 2))
        hits += {0, 1, 2} <= set(res.strong_set.tolist())
    dt = time.perf_counter() - t0
    check(6, idem and equi and wins >= 18 and hits >= 18 and dt < 60,
          f"idempotent={idem} equivariant={equi} wins {wins}/20 top-3 in S {hits}/20, "
          f"{dt:.1f}s")


def test_criterion_7_statistics_oracles():
    t0 = time.perf_counter()
    bh = fdr_adjust(np.array([0.01, 0.02, 0.03, 0.04, 0.05]))
    M = np.array([[0.30, 0.25, 0.41, 0.33],
                  [0.28, 0.22, 0.35, 0.31],
                  [0.35, 0.27, 0.47, 0.36]])
    res = anova_two_way(M)
    F_hand = (0.01055 / 2) / ((0.0533 - 0.01055 - 0.12290 / 3) / 6)
    p_hand = stats.f.sf(F_hand, 2, 6)
    z = dunn_z([[1.0, 2, 3], [4.0, 5, 6]])[1, 0]
    z_hand = 3 / np.sqrt(7 / 3)
    ok = (np.all(bh == 0.05) and abs(res.F - F_hand) < 1e-8 and abs(res.p - p_hand) < 1e-8
          and abs(z - z_hand) < 1e-10)
    dt = time.perf_counter() - t0
    check(7, ok and dt < 1, f"BH {bh.tolist()}, F {res.F:.10f} vs {F_hand:.10f}, "
                            f"z {z:.12f}, {dt:.3f}s")


# ---------------------------------------------------------------------------
# 8-9: synthetic end-to-end comparison through the CLI


def cli(*args, cwd=None):
    r = subprocess.run([sys.executable, "-m", "drowsiness.cli", *map(str, args)],
                       capture_output=True, text=True, cwd=cwd)
    assert r.returncode == 0, r.stderr[-2000:]
    return r


def averages(out):
    lines = (out / "averages.csv").read_text().splitlines()
    names = lines[0].split(",")[1:]
    rows = {ln.split(",")[0]: [float(v) for v in ln.split(",")[1:]] for ln in lines[1:]}
    return {m: dict(zip(names, rows[m])) for m in ("RMSE", "CC")}


def tree_digest(path):
    h = hashlib.sha256()
    for p in sorted(path.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(path).as_posix().encode() + b"\0")
            h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    work = tmp_path_factory.mktemp("e2e")
    t0 = time.perf_counter()
    cli("synth", "--out", work / "data", "--subjects", 15, "--seed", 8)
    cli("compare", "--data", work / "data", "--out", work / "run1", "--config", DESK)
    elapsed = time.perf_counter() - t0
    return work, elapsed


@pytest.mark.slow
def test_criterion_8a_runtime(e2e):
    _, elapsed = e2e
    check(8, elapsed < 20 * 60, f"(a) synth + compare took {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_8b_psd_beats_raw(e2e):
    avg = averages(e2e[0] / "run1")["CC"]
    check(8, avg["EEGNet-PSD"] >= avg["EEGNet"],
          f"(b) CC EEGNet-PSD {avg['EEGNet-PSD']:.3f} vs EEGNet {avg['EEGNet']:.3f}")


@pytest.mark.slow
def test_criterion_8c_smlr_rmse(e2e):
    avg = averages(e2e[0] / "run1")["RMSE"]
    check(8, avg["EEGNet-PSD-SMLR"] <= avg["EEGNet-PSD"] + 0.01,
          f"(c) RMSE EEGNet-PSD-SMLR {avg['EEGNet-PSD-SMLR']:.4f} vs "
          f"EEGNet-PSD {avg['EEGNet-PSD']:.4f}")


@pytest.mark.slow
def test_criterion_8d_smlr_cc(e2e):
    cc = averages(e2e[0] / "run1")["CC"]["EEGNet-PSD-SMLR"]
    check(8, cc >= 0.4, f"(d) CC EEGNet-PSD-SMLR {cc:.3f}")


@pytest.mark.slow
def test_criterion_8e_null_coupling(tmp_path):
    cli("synth", "--out", tmp_path / "null", "--subjects", 15, "--seed", 8, "--null")
    cli("compare", "--data", tmp_path / "null", "--out", tmp_path / "out", "--config", DESK)
    cc = averages(tmp_path / "out")["CC"]
    worst = max(abs(v) for v in cc.values())
    check(8, worst < 0.15 and list(cc) == ALGS, f"(e) null max |CC| {worst:.3f}")


@pytest.mark.slow
def test_criterion_9_determinism(e2e):
    work, _ = e2e
    cli("compare", "--data", work / "data", "--out", work / "run2", "--config", DESK)
    a, b = tree_digest(work / "run1"), tree_digest(work / "run2")
    check(9, a == b, f"tree digests {a[:12]} / {b[:12]}")


# ---------------------------------------------------------------------------
# 10: persistence


def _random_recording(rng, i):
    C, n = int(rng.integers(1, 9)), int(rng.integers(1, 2000))
    data = rng.standard_normal((C, n)) * 10.0 ** rng.integers(-30, 30, size=(C, n))
    data.flat[int(rng.integers(data.size))] = -0.0
    ear = tuple(int(v) for v in rng.choice(C, 2, replace=False)) if C >= 3 else None
    fs = float(rng.choice([100.0, 250.0, 500.0, 1000.0 / 3]))
    t = np.unique(rng.uniform(0, n / fs, int(rng.integers(0, 6))))
    events = tuple(LaneDepartureEvent(float(o), float(rng.uniform(0.1, 5))) for o in t)
    return Recording(f"subj-{i}-ü", fs, tuple(f"ch{c}" for c in range(C)), ear, data, events)


def test_criterion_10_persistence(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    failures = 0
    for i in range(100):
        rec = _random_recording(rng, i)
        save_recording(rec, tmp_path / f"r{i}")
        back = load_recording(tmp_path / f"r{i}")
        failures += not (back == rec and back.data.tobytes() == rec.data.tobytes())

        C, T = int(rng.integers(1, 6)), 16 * int(rng.integers(1, 5))
        dtype = str(rng.choice(["float32", "float64"]))
        m = perturb(tiny(C, T, seed=i, dtype=dtype), i, scale=float(rng.uniform(0.01, 1)))
        en.save_model(m, tmp_path / f"m{i}.bin")
        mb = en.load_model(tmp_path / f"m{i}.bin")
        same = mb.config == m.config and all(
            mb.params[k].tobytes() == m.params[k].tobytes() for k in m.params) and all(
            mb.buffers[k].tobytes() == m.buffers[k].tobytes() for k in m.buffers)
        failures += not same
    dt = time.perf_counter() - t0
    check(10, failures == 0 and dt < 60, f"{failures} of 200 round trips differ, {dt:.1f}s")
