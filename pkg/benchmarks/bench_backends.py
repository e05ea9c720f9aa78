"""Time the compiled and pure-NumPy likelihood kernels.

Each backend runs in a fresh interpreter (selected with
MIXTHRESH_PURE_PYTHON) and reports median times of the per-node kernel
alone, of one log-likelihood-plus-gradient evaluation, and of a full fit.

    python3 benchmarks/bench_backends.py [--repeat 20]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, statistics, sys, time
import numpy as np
from mixthresh import kernels
from mixthresh.fit import FitOptions, fit, starting_values
from mixthresh.io import fixture_path, ingest, parse_spec
from mixthresh.likelihood import MarginalLikelihood
from mixthresh.simulate import mixed_type_design, sample_dataset

repeat = int(sys.argv[1])
cases = {}
spec = parse_spec(fixture_path("sleepstudy_log.json"))
cases["sleepstudy"] = (spec, ingest(fixture_path("sleepstudy.csv"), spec))
spec = parse_spec(fixture_path("epil_gumbel.json"))
cases["epil"] = (spec, ingest(fixture_path("epil.csv"), spec))
design = mixed_type_design(1000, seed=0)
cases["mixed, 1000 clusters"] = (design.spec, sample_dataset(design)[0])

out = {"backend": kernels.BACKEND}
for name, (spec, data) in cases.items():
    lik = MarginalLikelihood(spec, data)
    theta = starting_values(spec, data)
    params = lik.layout.unpack(theta)
    eta = lik.linear_predictor(params, np.linspace(-3, 3, 15)[:, None])
    tau = lik.thresholds_at_data(params)
    kernel = []
    for _ in range(repeat):
        t = time.perf_counter()
        kernels.obs_terms(lik.family, lik.continuous, lik.has_hi, lik.has_lo, *tau, eta)
        kernel.append(time.perf_counter() - t)
    lik.loglik_and_grad(theta)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        lik.loglik_and_grad(theta)
        times.append(time.perf_counter() - t)
    t = time.perf_counter()
    fit(spec, data, FitOptions(compute_se=False))
    out[name] = {
        "kernel_ms": 1e3 * statistics.median(kernel),
        "eval_ms": 1e3 * statistics.median(times),
        "fit_s": time.perf_counter() - t,
    }
print(json.dumps(out))
"""


def run(pure: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("MIXTHRESH_PURE_PYTHON", None)
    if pure:
        env["MIXTHRESH_PURE_PYTHON"] = "1"
    proc = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    compiled, python = run(False, args.repeat), run(True, args.repeat)
    if compiled["backend"] != "compiled":
        print("compiled extension not built; only the python backend is available")
    print(f"{'case':<24}{'backend':<10}{'kernel ms':>11}{'eval ms':>10}{'fit s':>8}")
    for name in (k for k in python if k != "backend"):
        for res in (compiled, python):
            r = res[name]
            print(f"{name:<24}{res['backend']:<10}{r['kernel_ms']:>11.2f}{r['eval_ms']:>10.2f}{r['fit_s']:>8.2f}")
        ratio = [python[name][k] / compiled[name][k] for k in ("kernel_ms", "eval_ms", "fit_s")]
        print(f"{'':<24}{'speedup':<10}{ratio[0]:>11.2f}{ratio[1]:>10.2f}{ratio[2]:>8.2f}")


if __name__ == "__main__":
    main()
