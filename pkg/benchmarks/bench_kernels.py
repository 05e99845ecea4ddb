#!/usr/bin/env python3
"""Benchmark the power-control backends on one batch of rounding candidates.

Times the fixed-direction fairness bisection three ways: the compiled
extension, the numpy fallback, and the generic LP-oracle route. All three
solve the same per-candidate problem, so the level disagreement reported at
the end doubles as a correctness spot check.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --candidates 500 --repeat 5
"""

import argparse
import time

import numpy as np

from fairbeam import kernels, model
from fairbeam import fair_solver as fs
from fairbeam import randomization as rz


def _prepare(dirs, inst):
    gains, _ = rz._gains_of(dirs, inst)
    coeff, budgets = rz._budget_rows(dirs, inst, "pac", inst.total_power)
    return (np.ascontiguousarray(gains, np.float64),
            np.ascontiguousarray(inst.targets, np.float64).copy(),
            np.ascontiguousarray(inst.noise, np.float64).copy(),
            np.ascontiguousarray(inst.owner, np.int64).copy(),
            inst.ng,
            np.ascontiguousarray(coeff, np.float64),
            np.ascontiguousarray(budgets, np.float64).copy())


def _time_route(fn, batch, repeat):
    best = None
    levels = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        levels = [fn(args) for args in batch]
        dt = time.perf_counter() - t0
        best = dt if best is None else min(best, dt)
    return best, np.array(levels)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--candidates", type=int, default=200,
                    help="number of Gaussian rounding candidates (default 200)")
    ap.add_argument("--lp-candidates", type=int, default=25,
                    help="subset size for the slow LP route (default 25)")
    ap.add_argument("--repeat", type=int, default=3,
                    help="timing repetitions, best run is reported (default 3)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    inst = model.make_instance(model.gen_rayleigh(5, 4, args.seed),
                               [(0, 1), (2, 3)])
    rel = fs.solve_Fr(inst)
    cands = (rz.principal_directions(rel.covariances),) + \
        rz.draw_candidates(rel.covariances, args.candidates - 1,
                           seed=args.seed).candidates
    t_hi, eps = rel.t_upper, rz.EPS_PC
    batch = [_prepare(d, inst) for d in cands]

    print("instance: Nt=5, Nu=4, G=2, Rayleigh seed %d; %d candidates, "
          "t_upper=%.6g" % (args.seed, len(batch), t_hi))
    print("compiled extension available: %s" % (kernels._fastpc is not None))
    print()

    rows = []

    def kernel_call(backend):
        def run(a):
            t, _, status, _ = backend(a[0], a[1] * 1.0, a[2], a[3], a[4],
                                      a[5], a[6], t_hi, eps)
            return t if status == kernels.STATUS_OK else np.nan
        return run

    t_np, lv_np = _time_route(kernel_call(kernels._bisect_py), batch,
                              args.repeat)
    rows.append(("numpy", len(batch), t_np, lv_np))

    lv_c = None
    if kernels._fastpc is not None:
        t_c, lv_c = _time_route(kernel_call(kernels._fastpc.fairness_bisect),
                                batch, args.repeat)
        rows.append(("compiled", len(batch), t_c, lv_c))

    lp_batch = cands[:min(args.lp_candidates, len(cands))]

    def lp_call(dirs):
        res = rz.power_control_bisect(dirs, inst, t_hi, eps=eps,
                                      force_lp=True)
        return res.t if res.status == rz.STATUS_OK else np.nan

    t_lp, lv_lp = _time_route(lp_call, lp_batch, 1)
    rows.append(("lp-bisect", len(lp_batch), t_lp, lv_lp))

    print("%-10s %10s %12s %16s" % ("route", "candidates", "total (s)",
                                    "per candidate"))
    for name, n, total, _ in rows:
        per = total / n
        unit = "%.1f us" % (per * 1e6) if per < 1e-3 else "%.2f ms" % (per * 1e3)
        print("%-10s %10d %12.4f %16s" % (name, n, total, unit))
    print()

    if lv_c is not None:
        d = np.nanmax(np.abs(lv_c - lv_np) / np.maximum(lv_np, 1e-30))
        print("compiled vs numpy: speedup %.1fx, max relative level "
              "difference %.2e" % (t_np / t_c, d))
    d_lp = np.nanmax(np.abs(lv_lp - lv_np[:len(lv_lp)])
                     / np.maximum(lv_np[:len(lv_lp)], 1e-30))
    print("lp-bisect vs numpy kernel: max relative level difference %.2e "
          "(both bisect to eps=%g)" % (d_lp, eps))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
