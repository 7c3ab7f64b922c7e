"""Compiled event loops.

All loops use thinning: attempts arrive at total rate N (or N + 1 with a
second-class particle), a uniformly chosen particle proposes an offset drawn
from p, and the move is suppressed when the target is blocked. Time is
continuous; the overshoot past ``t_target`` is discarded, which is exact by
memorylessness of the exponential clock.

Float state vector layout (``fstate``): [clock, v_now, j_integral].
Integer counters (``counters``): [attempts, jumps].
"""

import numba
import numpy as np

CLOCK, V_NOW, J_INTEGRAL = 0, 1, 2
ATTEMPTS, JUMPS = 0, 1


@numba.njit(cache=True)
def _draw_offset(rng, offsets, cum):
    u = rng.random()
    for k in range(cum.size):
        if u < cum[k]:
            return offsets[k]
    return offsets[cum.size - 1]


@numba.njit(cache=True)
def pair_counts(occ, R):
    """M(d) = sum_x eta_x eta_{x+d} for d = 1..R on the ring."""
    L = occ.size
    out = np.zeros(R, dtype=np.int64)
    for x in range(L):
        if occ[x]:
            for d in range(1, R + 1):
                if occ[(x + d) % L]:
                    out[d - 1] += 1
    return out


@numba.njit(cache=True)
def _pair_delta(occ, site, R, pair_coef, pairs, sign):
    """Add or remove the pair contributions of ``site``; returns the weighted change."""
    L = occ.size
    dv = 0.0
    for d in range(1, R + 1):
        n = occ[(site + d) % L] + occ[(site - d) % L]
        pairs[d - 1] += sign * n
        dv += sign * pair_coef[d - 1] * n
    return dv


@numba.njit(cache=True)
def advance_kernel(
    occ, pos, slot, pairs, bonds, fstate, counters, offsets, cum, pair_coef, inv_chi, t_target, rng, track_bonds
):
    L = occ.size
    N = pos.size
    R = pairs.size
    clock = fstate[CLOCK]
    v = fstate[V_NOW]
    j = fstate[J_INTEGRAL]
    if N == 0 or N == L:
        # Frozen: nothing can move, v is constant.
        j += v * (t_target - clock)
        fstate[CLOCK] = t_target
        fstate[J_INTEGRAL] = j
        return
    rate = float(N)
    attempts = 0
    jumps = 0
    while True:
        dt = rng.standard_exponential() / rate
        if clock + dt >= t_target:
            j += v * (t_target - clock)
            clock = t_target
            break
        j += v * dt
        clock += dt
        attempts += 1
        i = int(rng.random() * N)
        if i >= N:
            i = N - 1
        a = pos[i]
        z = _draw_offset(rng, offsets, cum)
        b = (a + z) % L
        if occ[b]:
            continue
        jumps += 1
        dv = _pair_delta(occ, a, R, pair_coef, pairs, -1)
        occ[a] = 0
        occ[b] = 1
        dv += _pair_delta(occ, b, R, pair_coef, pairs, 1)
        v += dv * inv_chi
        pos[i] = b
        slot[a] = -1
        slot[b] = i
        if track_bonds:
            if z > 0:
                for k in range(z):
                    bonds[(a + k) % L] += 1
            else:
                for k in range(1, -z + 1):
                    bonds[(a - k) % L] -= 1
    fstate[CLOCK] = clock
    fstate[V_NOW] = v
    fstate[J_INTEGRAL] = j
    counters[ATTEMPTS] += attempts
    counters[JUMPS] += jumps


@numba.njit(cache=True)
def second_class_kernel(occ, pos, slot, xstate, fclock, counters, offsets, cum, t_target, rng):
    """Basic coupling with one second-class particle.

    ``xstate`` = [x_wrapped, x_unwrapped]; ``occ`` holds first-class
    particles only, so occ[x_wrapped] == 0 throughout.
    """
    L = occ.size
    N = pos.size
    clock = float(fclock[0])
    X = xstate[0]
    Xu = xstate[1]
    rate = float(N + 1)
    attempts = 0
    jumps = 0
    while True:
        dt = rng.standard_exponential() / rate
        if clock + dt >= t_target:
            break
        clock += dt
        attempts += 1
        i = int(rng.random() * (N + 1))
        if i > N:
            i = N
        z = _draw_offset(rng, offsets, cum)
        if i == N:
            b = (X + z) % L
            if occ[b] == 0:
                X = b
                Xu += z
                jumps += 1
            continue
        a = pos[i]
        b = (a + z) % L
        if b == X:
            # First-class particle lands on the discrepancy: they swap.
            occ[a] = 0
            occ[b] = 1
            pos[i] = b
            slot[a] = -1
            slot[b] = i
            X = a
            Xu -= z
            jumps += 1
        elif occ[b] == 0:
            occ[a] = 0
            occ[b] = 1
            pos[i] = b
            slot[a] = -1
            slot[b] = i
            jumps += 1
    fclock[0] = t_target
    xstate[0] = X
    xstate[1] = Xu
    counters[ATTEMPTS] += attempts
    counters[JUMPS] += jumps
