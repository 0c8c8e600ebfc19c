"""Offline generator of the Caratheodory-Fejer pole table for exp on (-inf, 0].

The procedure transplants ``exp`` to [-1, 1] with ``x = scl (t - 1)/(t + 1)``,
takes the Chebyshev coefficients by FFT, and reads the type (q, q) CF
approximant off the SVD of their Hankel matrix. Poles and residues are
mapped back to the x-plane. The ``phi_j`` (j >= 1) share these poles; their
weights are a least-squares fit of relative error on the transplanted
Chebyshev grid. The shortcut ``w / z_l^j`` implied by the phi recurrence
loses several digits near z = 0, the fit does not.

Run ``python -m ultraspectral.cfgen [q] [path]`` to rewrite the shipped table.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
from scipy.linalg import hankel, svd

J_MAX = 3


def cf_exp(q: int = 14, K: int = 75, nf: int = 1024, scl: float = 9.0):
    """Poles ``z_l`` and residues ``c_l`` with ``exp(x) ~ sum c_l / (x - z_l)``."""
    w = np.exp(2j * np.pi * np.arange(nf) / nf)
    t = w.real
    with np.errstate(divide="ignore", over="ignore"):
        F = np.exp(scl * (t - 1) / (t + 1 + 1e-16))
    c = np.real(np.fft.fft(F)) / nf
    f = np.polyval(c[K::-1], w)
    U, S, Vh = svd(hankel(c[1:K + 1]))
    V = Vh.conj().T
    s = S[q]
    u = U[K - 1::-1, q]
    v = V[:, q]
    zz = np.zeros(nf - K)
    b = np.fft.fft(np.r_[u, zz]) / np.fft.fft(np.r_[v, zz])
    rt = f - s * w ** K * b
    zr = np.roots(v)
    qj = zr[np.abs(zr) > 1]
    qc = np.poly(qj)
    pt = rt * np.polyval(qc, w)
    ptc = np.real(np.fft.fft(pt) / nf)
    ptc = ptc[q::-1]
    ck = np.empty(qj.size, dtype=complex)
    for k, qk in enumerate(qj):
        others = np.poly(np.delete(qj, k))
        ck[k] = np.polyval(ptc, qk) / np.polyval(others, qk)
    zk = scl * (qj - 1) ** 2 / (qj + 1) ** 2
    ck = 4 * ck * zk / (qj ** 2 - 1)
    order = np.argsort(zk.imag)
    return zk[order], ck[order], s


def fit_weights(poles: np.ndarray, j: int, m: int = 4000, scl: float = 9.0) -> np.ndarray:
    """Conjugate-symmetric weights for ``phi_j`` on fixed ``poles``."""
    from .expint import phi_scalar

    t = np.cos(np.pi * (np.arange(m) + 0.5) / m)
    x = scl * (t - 1) / (t + 1)
    x = x[x > -1e8]
    up = poles[poles.imag > 0]
    R = 1.0 / (x[:, None] - up[None, :])
    A = np.hstack([2 * R.real, -2 * R.imag])
    f = np.array([phi_scalar(j, v).real for v in x])
    wt = 1.0 / np.abs(f)
    sol = np.linalg.lstsq(A * wt[:, None], f * wt, rcond=None)[0]
    wu = sol[: up.size] + 1j * sol[up.size:]
    out = np.empty(poles.size, dtype=complex)
    for k, zl in enumerate(poles):
        i = np.argmin(np.abs(up - (zl if zl.imag > 0 else np.conj(zl))))
        out[k] = wu[i] if zl.imag > 0 else np.conj(wu[i])
    return out


def weights_for(poles: np.ndarray, residues: np.ndarray, j_max: int = J_MAX) -> np.ndarray:
    cols = [residues] + [fit_weights(poles, j) for j in range(1, j_max + 1)]
    return np.stack(cols, axis=1)


def write_table(path: Path, q: int = 14):
    z, c, s = cf_exp(q)
    W = weights_for(z, c)
    lines = [f"{q} {J_MAX} cf"]
    for zl, wl in zip(z, W):
        parts = [repr(float(zl.real)), repr(float(zl.imag))]
        for wj in wl:
            parts += [repr(float(wj.real)), repr(float(wj.imag))]
        lines.append(" ".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")
    return s


if __name__ == "__main__":
    q = int(sys.argv[1]) if len(sys.argv) > 1 else 14
    default = Path(__file__).with_name("data") / f"cf{q}.txt"
    target = Path(sys.argv[2]) if len(sys.argv) > 2 else default
    sv = write_table(target, q)
    print(f"wrote {target} (CF singular value {sv:.3e})")
