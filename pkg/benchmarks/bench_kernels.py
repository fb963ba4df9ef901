"""Compare the compiled and pure-Python RK4 backends on representative models.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from ioncavity import kernels
from ioncavity.dynamics import IntegratorConfig, evolve
from ioncavity.experiments import encoding_state, superradiant_phase
from ioncavity.model import PhysicalParams, build_effective_bichromatic_model, build_effective_model
from ioncavity.qcore import DensityMatrix


def cases():
    p = PhysicalParams()
    mono, rho_mono = build_effective_model(p, superradiant_phase(p))
    yield "monochromatic, 20 us", mono, rho_mono, 20e-6
    bichro = build_effective_bichromatic_model(p)
    vac = np.zeros((9, 9))
    vac[0, 0] = 1
    rho_bi = DensityMatrix(bichro.space, np.kron(encoding_state(p, "super").rho.matrix, vac))
    yield "bichromatic, 55 us", bichro, rho_bi, 55e-6


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if kernels.rk4_compiled is None:
        raise SystemExit("compiled kernel not available; build with `pip install -e . --no-build-isolation`")
    print(f"{'case':<24}{'cython [s]':>12}{'python [s]':>12}{'speedup':>10}{'max |diff|':>13}")
    for name, model, rho0, t_end in cases():
        run = {b: (lambda b=b: evolve(model, rho0, IntegratorConfig(t_end=t_end, backend=b))[0])
               for b in ("cython", "python")}
        t_c, a = best_of(run["cython"], args.repeat)
        t_p, b = best_of(run["python"], args.repeat)
        diff = max(float(np.max(np.abs(a[k] - b[k]))) for k in a.series)
        print(f"{name:<24}{t_c:>12.4f}{t_p:>12.4f}{t_p / t_c:>10.1f}{diff:>13.1e}")


if __name__ == "__main__":
    main()
