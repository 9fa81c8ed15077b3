"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (or ``python tests/test_acceptance.py``).
The experiment criteria (5-8) train CNNs on the full-length synthetic data and
take several minutes on a single core.
"""
import json
import math
import sys
import time

import numpy as np
import pytest
from scipy import signal

from conftest import random_spd
from ssvepnet.dataio import (MANIFEST_NAME, MagicMismatchError, MissingBlobError,
                             ShapeMismatchError, TruncatedBlobError, read_archive, write_archive)
from ssvepnet.dsp import design_bandpass, design_notch, filtfilt
from ssvepnet.features import geometric_mean, riemann_distance, tangent_map
from ssvepnet.harness import MethodSpec, emit_report, run_experiment
from ssvepnet.harness.cli import profile_dataset
from ssvepnet.models import ScuSpec, build_recurrent, build_scu_cnn
from ssvepnet.nn import Dense, Network, cce_loss, grad_check, one_hot

SEED = 2                    # data and CV seed for every experiment criterion
SVMS = [("svm-gaussian", False), ("svm-linear", False), ("svm-gaussian", True), ("svm-linear", True)]


@pytest.fixture
def verdict(capsys):
    """Print one line per criterion, bypassing output capture."""
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok
    return emit


def svm_tag(name, pre):
    return f"{name}{'+pre' if pre else ''}"


# -- 1. gradients ------------------------------------------------------------------

def test_criterion_1_gradients(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    dense = Network([Dense(6, 4, seed=1)], (6,), 4, name="dense")
    errs = {"dense": grad_check(dense, rng.standard_normal((3, 6)), [0, 1, 3])}
    for blocks in (1, 2):
        net = build_scu_cnn(ScuSpec(n_scu_blocks=blocks, filters=3, length=120, seed=blocks))
        errs[f"{blocks}-scu"] = grad_check(net, rng.standard_normal((2, 7, 120)), [1, 2])
    for kind in ("vanilla", "lstm", "gru"):
        net = build_recurrent(kind, hidden=4, length=5, seed=3)
        errs[kind] = grad_check(net, rng.standard_normal((2, 7, 5)), [0, 3])
    elapsed = time.perf_counter() - start
    limits = {k: 1e-6 if k == "dense" else 1e-4 for k in errs}
    ok = all(errs[k] < limits[k] for k in errs) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    assert verdict(1, ok, f"{detail}; {elapsed:.1f} s")


# -- 2. loss -------------------------------------------------------------------------

def test_criterion_2_loss(verdict):
    uniform = cce_loss(np.full((5, 4), 0.25), one_hot([0, 1, 2, 3, 0], 4))
    net = Network([Dense(5, 4, seed=2)], (5,), 4)
    x, y, lam, eps = np.random.default_rng(1).standard_normal((4, 5)), [0, 1, 2, 3], 0.3, 1e-6
    net.loss_and_grad(x, y, lam)
    w = net.layers[0].params["w"]
    analytic = net.layers[0].grads["w"].copy()
    net.loss_and_grad(x, y, 0.0)
    data_only = net.layers[0].grads["w"].copy()
    numeric = np.empty_like(w)
    for i in np.ndindex(w.shape):
        old = w[i]
        w[i] = old + eps
        fp = net.objective(x, y, lam)
        w[i] = old - eps
        fm = net.objective(x, y, lam)
        w[i] = old
        numeric[i] = (fp - fm) / (2 * eps)
    fd_err = float(np.max(np.abs(analytic - numeric)))
    term_err = float(np.max(np.abs(analytic - data_only - 2 * lam * w)))
    ok = abs(uniform - math.log(4)) <= 1e-9 and fd_err < 1e-7 and term_err < 1e-12
    assert verdict(2, ok, f"uniform CCE - ln4 = {uniform - math.log(4):.1e}, "
                          f"fd err {fd_err:.1e}, 2*lam*w err {term_err:.1e}")


# -- 3. filters ----------------------------------------------------------------------

def impulse_db(cascade, freq, fs, n=1 << 16):
    x = np.zeros(n)
    x[0] = 1.0
    spec = np.abs(np.fft.rfft(signal.sosfilt(np.array(cascade.sections), x)))
    return 20 * np.log10(spec[np.argmin(np.abs(np.fft.rfftfreq(n, 1 / fs) - freq))])


def test_criterion_3_filters(verdict):
    fs = 250.0
    notch, bp = design_notch(50, fs, 30), design_bandpass(9, 100, 4, fs)
    at50, at20 = impulse_db(notch, 50, fs), impulse_db(notch, 20, fs)
    dc, at30 = impulse_db(bp, 0, fs), impulse_db(bp, 30, fs)
    t = np.arange(750) / fs
    x = np.sin(2 * np.pi * 20 * t) + 0.5 * np.sin(2 * np.pi * 33 * t)
    lags = np.arange(-20, 21)
    lag = {}
    for name, c in (("notch", notch), ("bandpass", bp)):
        y = filtfilt(c, x)
        lag[name] = int(lags[np.argmax([np.dot(x[100:-100], np.roll(y, k)[100:-100]) for k in lags])])
    ok = at50 <= -30 and abs(at20) <= 1 and dc <= -20 and abs(at30) <= 1 and set(lag.values()) == {0}
    assert verdict(3, ok, f"notch 50 Hz {at50:.1f} dB, 20 Hz {at20:+.2f} dB; bandpass DC {dc:.1f} dB, "
                          f"30 Hz {at30:+.2f} dB; lags {lag}")


# -- 4. SPD geometry -------------------------------------------------------------------

def test_criterion_4_spd(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = dict.fromkeys(("symmetry", "congruence", "idempotence", "commuting", "tangent"), 0.0)
    for _ in range(100):
        a, b = random_spd(rng), random_spd(rng)
        w = rng.standard_normal((7, 7)) + 3 * np.eye(7)
        d = riemann_distance(a, b)
        worst["symmetry"] = max(worst["symmetry"], abs(d - riemann_distance(b, a)))
        worst["congruence"] = max(worst["congruence"], abs(d - riemann_distance(w.T @ a @ w, w.T @ b @ w)))
        worst["idempotence"] = max(worst["idempotence"],
                                   float(np.max(np.abs(geometric_mean(np.stack([a, a, a])) - a))))
        # commuting pair: shared eigenvectors, mean is the elementwise geometric mean of spectra
        q, _ = np.linalg.qr(rng.standard_normal((7, 7)))
        la, lb = np.exp(rng.standard_normal(7)), np.exp(rng.standard_normal(7))
        ca, cb = (q * la) @ q.T, (q * lb) @ q.T
        closed = (q * np.sqrt(la * lb)) @ q.T
        worst["commuting"] = max(worst["commuting"],
                                 float(np.max(np.abs(geometric_mean(np.stack([ca, cb])) - closed))),
                                 abs(riemann_distance(ca, cb) - np.linalg.norm(np.log(la / lb))))
        worst["tangent"] = max(worst["tangent"], abs(np.linalg.norm(tangent_map(a, b).coords) - d))
    elapsed = time.perf_counter() - start
    ok = all(v <= 1e-8 for v in worst.values()) and elapsed < 30
    assert verdict(4, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f} s")


# -- 5 and 8. single subject -------------------------------------------------------------

@pytest.fixture(scope="module")
def single():
    ds = profile_dataset("moderate", 100, 1, SEED)
    start = time.perf_counter()
    reports = {svm_tag(m, pre): run_experiment("single", ds, MethodSpec(m), pre=pre, seed=SEED, subject="S01")
               for m, pre in SVMS}
    reports["cnn"] = run_experiment("single", ds, MethodSpec("cnn"), seed=SEED, subject="S01")
    return ds, reports, time.perf_counter() - start


def test_criterion_5_single_subject(verdict, single):
    _, r, elapsed = single
    acc = {k: v.mean for k, v in r.items()}
    cnn_ok = acc["cnn"] >= 0.95
    order = all(acc["cnn"] > acc[k] for k in ("svm-gaussian", "svm-linear"))
    order &= all(acc[f"{k}+pre"] > acc[k] for k in ("svm-gaussian", "svm-linear"))
    ok = cnn_ok and order
    detail = ", ".join(f"{k} {v.summary()}" for k, v in r.items())
    assert verdict(5, ok, f"{detail}; {elapsed:.0f} s")


def test_criterion_8_determinism(verdict, single):
    ds, r, _ = single
    again = run_experiment("single", ds, MethodSpec("cnn"), seed=SEED, subject="S01")
    same = {fmt: emit_report(again, fmt) == emit_report(r["cnn"], fmt) for fmt in ("text", "csv")}
    assert verdict(8, all(same.values()), f"byte-identical {same}, fingerprint {again.fingerprint[:12]}")


# -- 6 and 7. multi-subject ----------------------------------------------------------------

@pytest.fixture(scope="module")
def subjects():
    return profile_dataset("moderate", 20, 4, SEED)


def test_criterion_6_per_subject(verdict, subjects):
    three = subjects.select_subjects(["S01", "S02", "S03"])
    cnn = run_experiment("per-subject", three, MethodSpec("cnn"), seed=SEED)
    svm = {svm_tag(m, pre): run_experiment("per-subject", three, MethodSpec(m), pre=pre, seed=SEED).mean
           for m, pre in SVMS}
    ok = cnn.mean >= 0.80 and cnn.mean >= max(svm.values())
    per = " ".join(s.summary() for s in cnn.subjects)
    detail = ", ".join(f"{k} {v:.3f}" for k, v in svm.items())
    assert verdict(6, ok, f"cnn {cnn.mean:.3f} [{per}], {detail}")


def test_criterion_7_pooled_and_unseen(verdict, subjects):
    three = subjects.select_subjects(["S01", "S02", "S03"])
    pooled = run_experiment("pooled", three, MethodSpec("cnn"), seed=SEED).mean
    svm = {svm_tag(m, pre): run_experiment("pooled", three, MethodSpec(m), pre=pre, seed=SEED).mean
           for m, pre in SVMS}
    pooled_ok = pooled >= max(svm.values())

    unseen = {m: run_experiment("unseen", subjects, MethodSpec(m), held_out="S04", seed=SEED)
              for m in ("cnn", "deep-scu:5")}
    n = unseen["cnn"].confusion.counts.sum()
    chance = 0.25 + 3 * math.sqrt(0.25 * 0.75 / n)
    audit = unseen["cnn"].audit
    leak_ok = audit["overlap"] == 0 and audit["test_subjects"] == ["S04"] and "S04" not in audit["train_subjects"]
    above = unseen["cnn"].mean > chance
    deep_ok = unseen["deep-scu:5"].mean >= unseen["cnn"].mean
    ok = pooled_ok and leak_ok and above and deep_ok
    detail = (f"pooled cnn {pooled:.3f} vs " + ", ".join(f"{k} {v:.3f}" for k, v in svm.items())
              + f" [{'ok' if pooled_ok else 'fail'}]; unseen leakage {'none' if leak_ok else 'FOUND'}; "
              f"1-scu {unseen['cnn'].mean:.3f} > chance {chance:.3f} [{'ok' if above else 'fail'}]; "
              f"5-scu {unseen['deep-scu:5'].mean:.3f} >= 1-scu [{'ok' if deep_ok else 'fail'}]")
    assert verdict(7, ok, detail)


# -- 9. archive round trip ------------------------------------------------------------------

def test_criterion_9_round_trip(verdict, tmp_path):
    ds = profile_dataset("clean", 100, 1, SEED)
    write_archive(ds, tmp_path / "a")
    back = read_archive(tmp_path / "a")
    identical = (len(back) == len(ds) == 400 and back.montage == ds.montage
                 and all(a == b and a.samples.tobytes() == b.samples.tobytes() for a, b in zip(ds, back)))

    def corrupt(edit):
        write_archive(ds.select_subjects(["S01"]), tmp_path / "c")
        blob = tmp_path / "c" / json.loads((tmp_path / "c" / MANIFEST_NAME).read_text())["trials"][0]["file"]
        edit(blob)
        try:
            read_archive(tmp_path / "c")
        except Exception as exc:        # noqa: BLE001 - the type is what is under test
            return type(exc)
        return None

    cases = {
        MissingBlobError: lambda p: p.unlink(),
        MagicMismatchError: lambda p: p.write_bytes(b"NOTTRIAL" + p.read_bytes()[8:]),
        TruncatedBlobError: lambda p: p.write_bytes(p.read_bytes()[:-10]),
        ShapeMismatchError: lambda p: p.write_bytes(p.read_bytes() + b"\0\0\0\0"),
    }
    raised = {want.__name__: corrupt(edit) is want for want, edit in cases.items()}
    ok = identical and all(raised.values())
    assert verdict(9, ok, f"400-trial identity {identical}, errors {raised}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
