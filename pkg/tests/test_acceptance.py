"""End-to-end acceptance checks.

Each test covers one numbered criterion, records a single PASS/FAIL line
(collected in the terminal summary) and then asserts.  The heavy studies run
through the command-line entry point on the shipped configs, once per
session, and are replayed for the determinism criterion.
"""
import io
import math
import time
from contextlib import redirect_stdout
from pathlib import Path

import numpy as np
import pytest

from mfld import bounds as bd
from mfld import toys
from mfld.cli import EXIT_OK, EXIT_REPLAY, main
from mfld.experiments import bregman_battery, bridge_battery

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
STUDY_CONFIGS = {
    "verify": "verify.yaml",
    "scaling": "scaling_regression.yaml",
    "run": "run_linear.yaml",
    "poc": "poc_regression.yaml",
    "bounds": "bounds.yaml",
}


class CliRun:
    def __init__(self, kind, out):
        self.kind, self.out = kind, out
        self.code, self.seconds, self.text = self._call(
            [kind, "--config", str(CONFIGS / STUDY_CONFIGS[kind]), "--out", str(out)])
        self._replay = None

    @staticmethod
    def _call(argv):
        buf = io.StringIO()
        t0 = time.perf_counter()
        with redirect_stdout(buf):
            code = main(argv)
        return code, time.perf_counter() - t0, buf.getvalue()

    def verdicts(self, prefix):
        """name -> passed for printed verdict lines whose name starts with ``prefix``."""
        found = {}
        for line in self.text.splitlines():
            tag, _, rest = line.partition(" ")
            if tag in ("PASS", "FAIL") and rest.startswith(prefix):
                found[rest.split(" ")[0]] = tag == "PASS"
        return found

    def replay(self):
        if self._replay is None:
            self._replay = self._call([self.kind, "--out", str(self.out), "--replay"])
        return self._replay


@pytest.fixture(scope="module")
def study(tmp_path_factory):
    cache = {}

    def get(kind):
        if kind not in cache:
            cache[kind] = CliRun(kind, tmp_path_factory.mktemp(kind))
        return cache[kind]

    return get


def _record(log, number, ok, detail):
    log[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(log[number])


def _all(verdicts):
    return bool(verdicts) and all(verdicts.values())


def _failed(verdicts):
    bad = sorted(k for k, v in verdicts.items() if not v)
    return ", ".join(bad) if bad else "none"


def test_criterion_1_identity_suite(acceptance_log):
    specs = [toys.make_toy(n) for n in toys.TOYS]
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    bridge = bridge_battery(specs, rng, 50)
    breg = bregman_battery(specs, rng, 500)
    secs = time.perf_counter() - t0
    ok = (bridge < 1e-9 and breg["self"] == 0.0 and breg["negativity"] <= 1e-12
          and breg["closed_form_rel"] <= 1e-12 and secs < 10.0)
    _record(acceptance_log, 1, ok,
            f"bridge {bridge:.2e}, B(mu,mu) {breg['self']:.1e}, max(-B) {breg['negativity']:.1e}, "
            f"closed-form rel {breg['closed_form_rel']:.2e}, {secs:.1f} s")
    assert ok


def test_criterion_2_gap_identities(study, acceptance_log):
    r = study("verify")
    v = r.verdicts("prop1_")
    need = {f"prop1_{eq}[{p}]" for eq in ("gap_to_mu", "gap_to_gibbs") for p in toys.TOYS}
    need.add("prop1_closed_form[linear]")
    ok = need <= set(v) and _all(v) and r.seconds < 300
    _record(acceptance_log, 2, ok,
            f"{sum(v.values())}/{len(v)} identity verdicts pass (failed: {_failed(v)}), "
            f"verify study {r.seconds:.0f} s")
    assert ok


def test_criterion_3_variance_bregman_chain(study, acceptance_log):
    r = study("verify")
    v = {**r.verdicts("variance_bound"), **r.verdicts("bregman_bound"),
         **r.verdicts("bregman_n_stability")}
    sizes_seen = all(any(f"[N={n}]" in k for k in v) for n in (4, 16, 64, 256))
    ok = sizes_seen and _all(v) and r.seconds < 300
    _record(acceptance_log, 3, ok,
            f"{sum(v.values())}/{len(v)} variance/Bregman verdicts pass (failed: {_failed(v)}), "
            f"verify study {r.seconds:.0f} s")
    assert ok


def test_criterion_4_inverse_n_scaling(study, acceptance_log):
    r = study("scaling")
    slopes = r.verdicts("slope[")
    spread = r.verdicts("lambda_spread[")
    bound = r.verdicts("bregman_bound[")
    ok = (len(slopes) == 3 and _all(slopes) and len(spread) == 4 and _all(spread)
          and _all(bound) and r.seconds < 1200)
    _record(acceptance_log, 4, ok,
            f"slopes {sum(slopes.values())}/{len(slopes)} within -1 +/- 0.15; "
            f"lambda spread {sum(spread.values())}/{len(spread)} within 3 sigma "
            f"(failed: {_failed(spread)}); {r.seconds:.0f} s")
    assert ok


def test_criterion_5_sampling_guarantee(study, acceptance_log):
    r = study("run")
    v = {**r.verdicts("kl_final"), **r.verdicts("stationary_variance"),
         **r.verdicts("eta_halving")}
    ok = (r.code == EXIT_OK and {"kl_final", "stationary_variance"} <= set(v)
          and any(k.startswith("eta_halving") for k in v) and _all(v) and r.seconds < 300)
    _record(acceptance_log, 5, ok,
            f"{sum(v.values())}/{len(v)} verdicts pass (failed: {_failed(v)}), {r.seconds:.0f} s")
    assert ok


def test_criterion_6_second_moment(study, acceptance_log):
    v = {f"{kind}:{k}": p for kind in ("run", "scaling", "poc")
         for k, p in study(kind).verdicts("lemma1").items()}
    ok = len(v) == 3 and _all(v)
    _record(acceptance_log, 6, ok, f"{sum(v.values())}/{len(v)} studies keep E|X|^2 under the bound")
    assert ok


def test_criterion_7_propagation_of_chaos(study, acceptance_log):
    r = study("poc")
    v = {**r.verdicts("plateau_decreasing"), **r.verdicts("below_envelope")}
    ok = r.code == EXIT_OK and len(v) == 2 and _all(v) and r.seconds < 1800
    _record(acceptance_log, 7, ok,
            f"{sum(v.values())}/{len(v)} verdicts pass (failed: {_failed(v)}), {r.seconds:.0f} s")
    assert ok


def test_criterion_8_bound_calculators(acceptance_log):
    t0 = time.perf_counter()
    checks = {
        "new_poc": bd.new_poc_bound(1.0, 1.0, 100) == 0.005,
        "new_poc_linear": bd.new_poc_bound(0.0, math.inf, 3) == 0.0,
        "prior_poc": bd.prior_poc_bound(0.5, 0.25, 10, C=3.0) == 0.5 * 3.0 / (0.25 * 10),
        "prior_discrete": bd.prior_discrete_bound(1.0, 0.5, 0.1, math.inf, 10) == 0.22 + 0.2,
        "delta_eta_n": math.isclose(bd.delta_eta_n(0.1, 1, 1, 1, 1, 1, 0.0), 5.12, rel_tol=1e-15),
        "delta_eta": math.isclose(bd.delta_eta(0.1, 1, 1, 1, 1, 1, 0.0), 4.32, rel_tol=1e-15),
        "holley_stroock": bd.lsi_holley_stroock(0.5, 0.25, 1000, 0.0) == 2 * 0.25 / 0.5,
    }
    base = dict(lam_prime=0.5, eta=0.1, d=1, L=1.0, R=1.0, delta0=2.0, delta0_n=3.0)
    env = {kind: bd.convergence_envelope(kind, bd.BoundInputs(lam=1.0, N=100, alpha=0.5,
                                                              alpha_bar=0.25, **base), [0.0])
           for kind in bd.ENVELOPE_KINDS}
    dn = bd.delta_eta_n(0.1, 1.0, 0.5, 1, 1.0, 1.0, 0.0)
    de = bd.delta_eta(0.1, 1.0, 0.5, 1, 1.0, 1.0, 0.0)
    checks["continuous-N"] = math.isclose(env["continuous-N"].values[0], 0.005 + 3.0)
    checks["discrete-N"] = math.isclose(env["discrete-N"].values[0], 0.005 + dn / 0.5 + 3.0)
    checks["w2-poc"] = math.isclose(env["w2-poc"].values[0],
                                    8.0 * (0.005 + dn / 0.5 + de + 3.0 + 2.0))
    checks["tv-poc"] = math.isclose(env["tv-poc"].values[0], 0.005 + 3.0 + 2.0)
    # the particle term of the envelopes ignores the LSI constants and lam
    asym = {bd.convergence_envelope("continuous-N",
                                    bd.BoundInputs(lam=lam, N=100, alpha=a, alpha_bar=ab, **base),
                                    [1e12]).asymptote
            for lam in (0.1, 0.5, 2.0) for a in (1e-6, 0.3, 5.0) for ab in (1e-9, 0.1, 7.0)}
    checks["lsi_free"] = asym == {0.005}
    secs = time.perf_counter() - t0
    ok = all(checks.values()) and secs < 1.0
    bad = [k for k, v in checks.items() if not v]
    _record(acceptance_log, 8, ok,
            f"{sum(checks.values())}/{len(checks)} spot values exact (failed: {bad or 'none'}), "
            f"{secs * 1e3:.1f} ms")
    assert ok


def test_criterion_9_replay(study, acceptance_log):
    results = {}
    for kind in STUDY_CONFIGS:
        code, _, text = study(kind).replay()
        results[kind] = code != EXIT_REPLAY and "REPLAY OK" in text
    ok = all(results.values())
    _record(acceptance_log, 9, ok,
            "byte-identical replay: " + ", ".join(f"{k} {'ok' if v else 'MISMATCH'}"
                                                  for k, v in results.items()))
    assert ok
