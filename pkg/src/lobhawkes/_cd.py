"""Compiled inner loop for cyclic coordinate descent on a Gram matrix."""
import numpy as np
from numba import njit


@njit(cache=True)
def cd_sweeps(G, b, c, g, pen, max_sweeps, tol):
    """Run up to ``max_sweeps`` cyclic sweeps in place.

    Minimises ``c'Gc - 2 b'c + 2 * sum(pen * |c|)``; ``g`` holds ``b - G c``
    and is kept current. Returns ``(sweeps, converged)`` where convergence is
    ``max |change| < tol * (1 + max |c|)`` over one sweep.
    """
    P = c.shape[0]
    for s in range(max_sweeps):
        max_delta = 0.0
        max_abs = 0.0
        for j in range(P):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            rho = g[j] + gjj * c[j]
            pj = pen[j]
            if pj > 0.0:
                if rho > pj:
                    new = (rho - pj) / gjj
                elif rho < -pj:
                    new = (rho + pj) / gjj
                else:
                    new = 0.0
            else:
                new = rho / gjj
            delta = new - c[j]
            if delta != 0.0:
                for k in range(P):
                    g[k] -= delta * G[k, j]
                c[j] = new
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
            if abs(c[j]) > max_abs:
                max_abs = abs(c[j])
        if max_delta < tol * (1.0 + max_abs):
            return s + 1, True
    return max_sweeps, False


def warmup():
    G = np.eye(2)
    cd_sweeps(G, np.ones(2), np.zeros(2), np.ones(2), np.zeros(2), 1, 1e-8)
