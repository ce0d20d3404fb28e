"""Compiled inner loop of the simulator.

The ensemble lives in a calendar buffer ``buf`` of shape ``(B, n + n_steps)``:
the curve at step ``k`` is the view ``buf[:, k:k + n]``, so the Musiela shift
by one grid cell is free and only the new tail cell has to be filled.
"""

from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True, nogil=True, fastmath=True)
def advance(buf, k, n, dt, drift, vol, dB, w):
    """Shift, add ``dt * drift + sum_j vol_j * dB_j`` and return squared norms.

    ``drift`` is ``(1, n)`` or ``(B, n)``, ``vol`` is ``(1, J, n)`` or
    ``(B, J, n)``; a leading size of 1 is shared by every path.
    """
    B = buf.shape[0]
    J = vol.shape[1]
    shared_d = drift.shape[0] == 1
    shared_v = vol.shape[0] == 1
    sq = np.empty(B)
    for p in range(B):
        pd = 0 if shared_d else p
        pv = 0 if shared_v else p
        buf[p, k + n] = buf[p, k + n - 1]
        row = buf[p, k + 1 : k + 1 + n]
        dr = drift[pd]
        for i in range(n):
            row[i] += dt * dr[i]
        for j in range(J):
            c = dB[p, j]
            col = vol[pv, j]
            for i in range(n):
                row[i] += col[i] * c
        acc = 0.0
        for i in range(n - 1):
            d = row[i + 1] - row[i]
            acc += d * d * w[i]
        sq[p] = acc + row[0] * row[0]
    return sq


def warm_up() -> None:
    """Compile the kernel once so timings exclude JIT cost."""
    buf = np.zeros((1, 4))
    advance(buf, 0, 3, 0.1, np.zeros((1, 3)), np.zeros((1, 1, 3)), np.zeros((1, 1)), np.ones(2))
