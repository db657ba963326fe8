"""Acceptance criteria, one test each.

Criteria 1, 2 and 7 run by default. The training experiments (3 to 6) take
hours on a single core and only run with ``NOETHER_FULL_ACCEPTANCE=1``;
otherwise they are reported as skipped.
"""
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record_criterion
from noether_razor import variational as vi
from noether_razor.analysis import analyze
from noether_razor.cli import main
from noether_razor.config import preset
from noether_razor.dynamics import sample_dataset

FULL = os.environ.get("NOETHER_FULL_ACCEPTANCE") == "1"
HERE = Path(__file__).parent
KERNEL_SUITE = ["test_gradcore.py", "test_dynamics.py", "test_conserved.py", "test_noether.py",
                "test_model.py"]


def _skip(number, text):
    record_criterion(number, None, f"{text}: needs NOETHER_FULL_ACCEPTANCE=1")
    pytest.skip("long-running training experiment")


def _train(kind, scale, mode, seed, n=None):
    rc = preset(kind, scale, mode=mode, n=n, seed=seed)
    data = sample_dataset(rc.system, rc.recipe("train"), rc.data_seed)
    start = time.perf_counter()
    ck = vi.train(data, rc.train)
    return ck, rc, time.perf_counter() - start


def _split(rc, variant, seed):
    return sample_dataset(rc.system, rc.recipe(variant), 1000 + seed)


def test_criterion_1_math_kernel():
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           *[str(HERE / f) for f in KERNEL_SUITE]],
                          capture_output=True, text=True, cwd=HERE.parent)
    elapsed = time.perf_counter() - start
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else ""
    ok = proc.returncode == 0 and elapsed < 120
    record_criterion(1, ok, f"math-kernel property suite: {tail} ({elapsed:.0f} s, limit 120 s)")
    assert proc.returncode == 0, proc.stdout[-3000:]
    assert elapsed < 120


def test_criterion_2_closed_form_kl():
    rng = np.random.default_rng(2024)
    worst_gap, worst_v = 0.0, 0.0
    for _ in range(100):
        out, cols = rng.integers(1, 4), rng.integers(1, 5)
        L_S = np.tril(rng.normal(0, 0.7, (out, out)))
        L_A = np.tril(rng.normal(0, 0.7, (cols, cols)))
        L_S[np.diag_indices(out)] = np.abs(L_S.diagonal()) + 0.05
        L_A[np.diag_indices(cols)] = np.abs(L_A.diagonal()) + 0.05
        post = vi.LayerPosterior(rng.normal(size=(out, cols)), L_S, L_A)
        cov, v_star = post.covariance(), vi.prior_variance_star(post)
        grid = v_star * np.exp(np.linspace(-1.5, 1.5, 50))
        scan = np.array([vi.gaussian_kl(post.mean, cov, v) for v in grid])
        i = int(np.argmin(scan))
        # the scanned minimiser lies within one grid cell of v*
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        worst_v = max(worst_v, 0.0 if lo <= v_star <= hi else abs(v_star - grid[i]))
        kl = vi.kl_auto(post)
        worst_gap = max(worst_gap, kl - scan.min(), abs(kl - vi.gaussian_kl(post.mean, cov, v_star)))
    ok = worst_gap < 1e-8 and worst_v == 0.0
    record_criterion(2, ok, f"closed-form KL vs scanned minimum over 100 posteriors: "
                            f"worst gap {worst_gap:.2e} (limit 1e-8)")
    assert worst_v == 0.0
    assert worst_gap < 1e-8


def test_criterion_7_elbo_bookkeeping(tmp_path, capsys):
    data = tmp_path / "sho.json"
    assert main(["generate", "--system", "sho", "--out", str(data)]) == 0
    rc = preset("sho", "desk")
    rc.train.hidden, rc.train.S, rc.train.epochs = (8,), 4, 3
    cfg = tmp_path / "run.ini"
    rc.save(cfg)
    worst = 0.0
    for mode in vi.MODES:
        out = tmp_path / f"{mode}.json"
        capsys.readouterr()
        assert main(["train", "--data", str(data), "--config", str(cfg), "--mode", mode,
                     "--out", str(out)]) == 0
        _, _, nll, kl, nelbo = capsys.readouterr().out.splitlines()[1].split()
        worst = max(worst, abs(float(nelbo) - (float(nll) + float(kl))))
        ck = vi.Checkpoint.load(out)
        m = ck.metrics
        worst = max(worst, abs(m["neg_elbo_per_n"] - (m["nll_per_n"] + m["kl_per_n"])))
        for n, k, e in zip(ck.curves["nll"], ck.curves["kl"], ck.curves["neg_elbo"]):
            worst = max(worst, abs(e - (n + k)))
    record_criterion(7, worst < 1e-9, f"-ELBO/N = NLL/N + KL/N on every run: worst "
                                      f"{worst:.1e} (limit 1e-9)")
    assert worst < 1e-9


@pytest.mark.slow
def test_criterion_3_sho_paper_scale():
    text = "SHO at paper scale, 5 seeds"
    if not FULL:
        _skip(3, text)
    good, details = 0, []
    for seed in range(5):
        res = {}
        for mode in vi.MODES:
            ck, rc, secs = _train("sho", "paper", mode, seed)
            test = vi.test_mse(ck, _split(rc, "test", seed), S=rc.train.S_eval)
            res[mode] = (ck.metrics["neg_elbo_per_n"], test, secs)
        (nv, tv, _), (nl, tl, sl), (_, to, _) = res["vanilla"], res["learn"], res["oracle"]
        slowest = max(r[2] for r in res.values())
        ok = nl < nv and tl <= tv and tl <= 2 * to and tl < 4e-3 and slowest <= 900
        good += ok
        details.append(f"seed {seed}: -ELBO/N {nl:.4g} vs {nv:.4g}, test {tl:.2e}/{tv:.2e}/"
                       f"{to:.2e}, slowest run {slowest:.0f} s")
    record_criterion(3, good >= 3, f"{text}: {good}/5 seeds meet ordering, <4e-3 and 15 min; "
                                   + "; ".join(details))
    assert good >= 3


def _circle_variation(ck, S=200):
    """Largest spread of the field along circles of radius <= 2, over its range on the disk."""
    axis = np.linspace(-2, 2, 41)
    q, p = np.meshgrid(axis, axis)
    disk = np.stack([q.ravel(), p.ravel()], axis=1)
    disk = disk[np.linalg.norm(disk, axis=1) <= 2]
    span = np.ptp(vi.field_values(ck, disk, S=S))
    angles = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    worst = 0.0
    for r in (0.5, 1.0, 1.5, 2.0):
        ring = r * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        worst = max(worst, np.ptp(vi.field_values(ck, ring, S=S)))
    return worst / span


@pytest.mark.slow
def test_criterion_4_sho_field_invariance():
    text = "learned SHO field invariance along circles"
    if not FULL:
        _skip(4, text)
    learn, _, _ = _train("sho", "desk", "learn", 0)
    vanilla, _, _ = _train("sho", "desk", "vanilla", 0)
    vl, vv = _circle_variation(learn), _circle_variation(vanilla)
    ok = vl < 0.05 and vv > 3 * vl
    record_criterion(4, ok, f"{text}: learn {vl:.3f} (limit 0.05), vanilla {vv:.3f} "
                            f"(needs > {3 * vl:.3f})")
    assert vl < 0.05 and vv > 3 * vl


@pytest.mark.slow
def test_criterion_5_nharm_symmetry_recovery():
    text = "n-harmonic (n=2) symmetry recovery, 3 seeds"
    if not FULL:
        _skip(5, text)
    good, details, slowest = 0, [], 0.0
    for seed in range(3):
        ck, rc, secs = _train("nharm", "desk", "learn", seed, n=2)
        report = analyze(ck.bank, rc.system, rc.analysis["threshold"])
        ok = report.recovered(0.99)
        good += ok
        slowest = max(slowest, secs)
        details.append(f"seed {seed}: {report.active_count} active, min parallelness "
                       f"{min(report.parallelness[:4], default=0):.4f}")
    minutes = slowest / 60
    ok = good >= 2 and minutes <= 45
    record_criterion(5, ok, f"{text}: {good}/3 seeds recover 4 generators with parallelness "
                            f"> 0.99, slowest run {minutes:.0f} min (limit 45); "
                            + "; ".join(details))
    assert good >= 2
    assert minutes <= 45


@pytest.mark.slow
def test_criterion_6_nbody_symmetry_recovery():
    text = "2d 3-body symmetry recovery and test ordering"
    if not FULL:
        _skip(6, text)
    start = time.perf_counter()
    cks = {mode: _train("nbody", "desk", mode, 0)[:2] for mode in vi.MODES}
    rc = cks["learn"][1]
    report = analyze(cks["learn"][0].bank, rc.system, rc.analysis["threshold"])
    recovered = report.recovered(0.95)
    order, details = True, []
    for variant in ("test", "moved", "wider"):
        split = _split(rc, variant, 0)
        mse = {m: vi.test_mse(ck, split, S=rc.train.S_eval) for m, (ck, _) in cks.items()}
        order &= mse["learn"] <= mse["vanilla"] and mse["learn"] <= 2 * mse["oracle"]
        details.append(f"{variant} {mse['learn']:.2e}/{mse['vanilla']:.2e}/{mse['oracle']:.2e}")
    hours = (time.perf_counter() - start) / 3600
    ok = recovered and order and hours <= 4
    record_criterion(6, ok, f"{text}: {report.active_count} active (need 7), min parallelness "
                            f"{min(report.parallelness[:7], default=0):.3f} (need > 0.95), "
                            f"learn/vanilla/oracle MSE " + ", ".join(details)
                            + f", {hours:.1f} h (limit 4)")
    assert recovered and order and hours <= 4
