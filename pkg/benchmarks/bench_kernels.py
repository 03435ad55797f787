"""Compare the compiled and pure-Python Jacobi eigensolver backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat R]

Times the raw sweep kernel on random Hermitian matrices of several sizes and
one full protocol trial (which performs a few dozen small eigendecompositions)
with each backend swapped in.
"""

import argparse
import timeit

import numpy as np

from qcrb import _jacobi_py, estimation, matkit

try:
    from qcrb import _jacobi
except ImportError:  # extension not built
    _jacobi = None


def hermitian(d, rng):
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return np.ascontiguousarray((x + x.conj().T) / 2)


def time_kernel(kernel, a, repeat):
    n = max(1, 2000 // (a.shape[0] ** 2))
    best = min(timeit.repeat(lambda: kernel.jacobi_hermitian(a, 1e-15, 60), number=n, repeat=repeat))
    return best / n


def time_trial(kernel, repeat):
    saved = matkit._kernel
    matkit._kernel = kernel
    try:
        cfg = estimation.ProtocolConfig(n=10**4, target=estimation.helstrom_fraction(1 / 3))
        theta = np.array([0.0, 0.0, 0.5])
        n = 20
        best = min(timeit.repeat(lambda: [estimation.run_protocol(cfg, theta, i) for i in range(n)],
                                 number=1, repeat=repeat))
        return best / n
    finally:
        matkit._kernel = saved


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    backends = [("python", _jacobi_py)] + ([("compiled", _jacobi)] if _jacobi else [])
    if _jacobi is None:
        print("compiled extension not built; timing the Python backend only")
    rng = np.random.default_rng(0)
    print(f"{'case':<18}" + "".join(f"{name:>14}" for name, _ in backends) + ("     speedup" if _jacobi else ""))
    for d in (2, 3, 4, 8, 16):
        a = hermitian(d, rng)
        times = [time_kernel(k, a, args.repeat) for _, k in backends]
        row = f"{'eig ' + str(d) + 'x' + str(d):<18}" + "".join(f"{t * 1e6:>12.1f}us" for t in times)
        print(row + (f"{times[0] / times[1]:>11.1f}x" if len(times) == 2 else ""))
    times = [time_trial(k, args.repeat) for _, k in backends]
    row = f"{'protocol trial':<18}" + "".join(f"{t * 1e3:>12.2f}ms" for t in times)
    print(row + (f"{times[0] / times[1]:>11.1f}x" if len(times) == 2 else ""))


if __name__ == "__main__":
    main()
