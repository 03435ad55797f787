"""Pure-Python cyclic Jacobi sweep; same contract as the compiled kernel."""

import numpy as np


def _offdiag_sq(a):
    off = a - np.diag(np.diagonal(a))
    return float(np.sum(off.real**2 + off.imag**2))


def jacobi_hermitian(a_in, rtol=1e-15, max_sweeps=60):
    a = np.array(a_in, dtype=np.complex128, order="C", copy=True)
    n = a.shape[0]
    v = np.eye(n, dtype=np.complex128)
    norm_sq = float(np.sum(np.abs(a) ** 2))
    if norm_sq == 0.0:
        return np.real(np.diagonal(a)).copy(), v, 0
    for sweep in range(max_sweeps + 1):
        if _offdiag_sq(a) <= rtol * rtol * norm_sq:
            return np.real(np.diagonal(a)).copy(), v, sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                g = abs(apq)
                if g == 0.0:
                    continue
                app = a[p, p].real
                aqq = a[q, q].real
                ph = np.conj(apq) / g
                tau = (aqq - app) / (2.0 * g)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                u = np.array([[c, s], [-s * ph, c * ph]])
                idx = [p, q]
                a[:, idx] = a[:, idx] @ u
                a[idx, :] = u.conj().T @ a[idx, :]
                v[:, idx] = v[:, idx] @ u
                a[p, q] = 0.0
                a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
    return np.real(np.diagonal(a)).copy(), v, -1
