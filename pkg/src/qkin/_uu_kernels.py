"""Fused numba kernels for the pair-collision operator on continuum box grids.

W is evaluated between grid nodes from a B-spline coefficient cube (the output
of scipy.ndimage.spline_filter with mode='constant'); points outside the box
evaluate to 0, matching map_coordinates(mode='constant', cval=0, prefilter=False).

The scattering direction loop runs over one hemisphere with doubled weights:
the (3<->4)-symmetrized rate makes the integrand even under n -> -n.
"""

import numpy as np
from numba import njit, prange

V_CONSTANT = 0
V_GAUSSIAN = 1
V_LORENTZIAN = 2


@njit(inline="always")
def _bsp3(t):
    if t < 1.0:
        return (4.0 - 6.0 * t * t + 3.0 * t * t * t) / 6.0
    u = 2.0 - t
    return u * u * u / 6.0


@njit(inline="always")
def _bsp5(t):
    if t < 1.0:
        u3 = 3.0 - t
        u2 = 2.0 - t
        u1 = 1.0 - t
        return (u3 ** 5 - 6.0 * u2 ** 5 + 15.0 * u1 ** 5) / 120.0
    if t < 2.0:
        u3 = 3.0 - t
        u2 = 2.0 - t
        return (u3 ** 5 - 6.0 * u2 ** 5) / 120.0
    u3 = 3.0 - t
    return u3 ** 5 / 120.0


@njit(inline="always")
def _interp(co, n, x, y, z, order):
    """Separable B-spline evaluation; 0 outside [0, n-1]^3."""
    if x < 0.0 or x > n - 1 or y < 0.0 or y > n - 1 or z < 0.0 or z > n - 1:
        return 0.0
    ix = int(np.floor(x))
    iy = int(np.floor(y))
    iz = int(np.floor(z))
    fx = x - ix
    fy = y - iy
    fz = z - iz
    if order == 1:
        s = 0.0
        for a in range(2):
            ja = ix + a
            if ja < 0 or ja >= n:
                continue
            wa = fx if a == 1 else 1.0 - fx
            for b in range(2):
                jb = iy + b
                if jb < 0 or jb >= n:
                    continue
                wb = fy if b == 1 else 1.0 - fy
                for c in range(2):
                    jc = iz + c
                    if jc < 0 or jc >= n:
                        continue
                    wc = fz if c == 1 else 1.0 - fz
                    s += wa * wb * wc * co[ja, jb, jc]
        return s
    if order == 3:
        wx = np.empty(4)
        wy = np.empty(4)
        wz = np.empty(4)
        for a in range(4):
            wx[a] = _bsp3(abs(fx - (a - 1)))
            wy[a] = _bsp3(abs(fy - (a - 1)))
            wz[a] = _bsp3(abs(fz - (a - 1)))
        s = 0.0
        for a in range(4):
            ja = ix - 1 + a
            if ja < 0 or ja >= n:
                continue
            for b in range(4):
                jb = iy - 1 + b
                if jb < 0 or jb >= n:
                    continue
                row = 0.0
                for c in range(4):
                    jc = iz - 1 + c
                    if jc < 0 or jc >= n:
                        continue
                    row += wz[c] * co[ja, jb, jc]
                s += wx[a] * wy[b] * row
        return s
    wx = np.empty(6)
    wy = np.empty(6)
    wz = np.empty(6)
    for a in range(6):
        wx[a] = _bsp5(abs(fx - (a - 2)))
        wy[a] = _bsp5(abs(fy - (a - 2)))
        wz[a] = _bsp5(abs(fz - (a - 2)))
    s = 0.0
    for a in range(6):
        ja = ix - 2 + a
        if ja < 0 or ja >= n:
            continue
        for b in range(6):
            jb = iy - 2 + b
            if jb < 0 or jb >= n:
                continue
            row = 0.0
            for c in range(6):
                jc = iz - 2 + c
                if jc < 0 or jc >= n:
                    continue
                row += wz[c] * co[ja, jb, jc]
            s += wx[a] * wy[b] * row
    return s


@njit(inline="always")
def _vhat_q2(kind, a, w, q2):
    if kind == V_CONSTANT:
        return a
    if kind == V_GAUSSIAN:
        return a * np.exp(-0.5 * w * w * q2)
    return a / (1.0 + w * w * q2)


@njit(parallel=True, cache=True)
def apply_kernel(co, n, x0, invh, nodes, W, w2, sphere, sw, theta, vkind, va, vw,
                 wmax, order):
    """Collision term and gain scale at every node.

    Returns (C, G): C the raw (unprojected) collision term, G the gain term
    alone (its sup-norm is the reference scale for equilibrium residuals).
    """
    N = nodes.shape[0]
    ns = sphere.shape[0]
    C = np.zeros(N)
    G = np.zeros(N)
    for i in prange(N):
        k1x = nodes[i, 0]
        k1y = nodes[i, 1]
        k1z = nodes[i, 2]
        W1 = W[i]
        a1 = 1.0 + theta * W1
        acc = 0.0
        accg = 0.0
        for j in range(N):
            px = 0.5 * (k1x - nodes[j, 0])
            py = 0.5 * (k1y - nodes[j, 1])
            pz = 0.5 * (k1z - nodes[j, 2])
            mx = 0.5 * (k1x + nodes[j, 0])
            my = 0.5 * (k1y + nodes[j, 1])
            mz = 0.5 * (k1z + nodes[j, 2])
            q0 = np.sqrt(px * px + py * py + pz * pz)
            W2 = W[j]
            a2 = 1.0 + theta * W2
            l12 = W1 * W2
            sj = 0.0
            sg = 0.0
            for s in range(ns):
                nx = sphere[s, 0]
                ny = sphere[s, 1]
                nz = sphere[s, 2]
                pn = px * nx + py * ny + pz * nz
                W3 = _interp(co, n, (mx + q0 * nx - x0) * invh,
                             (my + q0 * ny - x0) * invh,
                             (mz + q0 * nz - x0) * invh, order)
                W4 = _interp(co, n, (mx - q0 * nx - x0) * invh,
                             (my - q0 * ny - x0) * invh,
                             (mz - q0 * nz - x0) * invh, order)
                if W3 < 0.0:
                    W3 = 0.0
                elif W3 > wmax:
                    W3 = wmax
                if W4 < 0.0:
                    W4 = 0.0
                elif W4 > wmax:
                    W4 = wmax
                v13 = _vhat_q2(vkind, va, vw, 2.0 * q0 * (q0 - pn))
                v23 = _vhat_q2(vkind, va, vw, 2.0 * q0 * (q0 + pn))
                phi = 0.5 * ((v13 + theta * v23) ** 2 + (v23 + theta * v13) ** 2)
                gain = W3 * W4 * a1 * a2
                loss = l12 * (1.0 + theta * W3) * (1.0 + theta * W4)
                sj += sw[s] * phi * (gain - loss)
                sg += sw[s] * phi * gain
            acc += w2 * 0.5 * q0 * sj
            accg += w2 * 0.5 * q0 * sg
        C[i] = acc
        G[i] = accg
    return C, G


@njit(parallel=True, cache=True)
def entropy_production_kernel(co, n, x0, invh, nodes, W, w2, sphere, sw, theta,
                              vkind, va, vw, wmax, order, floor):
    """Symmetrized entropy production; every quadrature term is >= 0.

    sigma_dot = 1/4 sum w_i w_j (q0/2) sw phi (G - L)(ln G - ln L), with all
    four occupations clamped into the open admissible interval for the logs.
    """
    N = nodes.shape[0]
    ns = sphere.shape[0]
    total = 0.0
    cap = wmax - floor
    for i in prange(N):
        k1x = nodes[i, 0]
        k1y = nodes[i, 1]
        k1z = nodes[i, 2]
        W1 = W[i]
        if W1 < floor:
            W1 = floor
        elif W1 > cap:
            W1 = cap
        a1 = 1.0 + theta * W1
        acc = 0.0
        for j in range(N):
            px = 0.5 * (k1x - nodes[j, 0])
            py = 0.5 * (k1y - nodes[j, 1])
            pz = 0.5 * (k1z - nodes[j, 2])
            mx = 0.5 * (k1x + nodes[j, 0])
            my = 0.5 * (k1y + nodes[j, 1])
            mz = 0.5 * (k1z + nodes[j, 2])
            q0 = np.sqrt(px * px + py * py + pz * pz)
            W2 = W[j]
            if W2 < floor:
                W2 = floor
            elif W2 > cap:
                W2 = cap
            a2 = 1.0 + theta * W2
            l12 = W1 * W2
            sj = 0.0
            for s in range(ns):
                nx = sphere[s, 0]
                ny = sphere[s, 1]
                nz = sphere[s, 2]
                pn = px * nx + py * ny + pz * nz
                W3 = _interp(co, n, (mx + q0 * nx - x0) * invh,
                             (my + q0 * ny - x0) * invh,
                             (mz + q0 * nz - x0) * invh, order)
                W4 = _interp(co, n, (mx - q0 * nx - x0) * invh,
                             (my - q0 * ny - x0) * invh,
                             (mz - q0 * nz - x0) * invh, order)
                if W3 < floor:
                    W3 = floor
                elif W3 > cap:
                    W3 = cap
                if W4 < floor:
                    W4 = floor
                elif W4 > cap:
                    W4 = cap
                v13 = _vhat_q2(vkind, va, vw, 2.0 * q0 * (q0 - pn))
                v23 = _vhat_q2(vkind, va, vw, 2.0 * q0 * (q0 + pn))
                phi = 0.5 * ((v13 + theta * v23) ** 2 + (v23 + theta * v13) ** 2)
                gain = W3 * W4 * a1 * a2
                loss = l12 * (1.0 + theta * W3) * (1.0 + theta * W4)
                if gain > 0.0 and loss > 0.0:
                    sj += sw[s] * phi * (gain - loss) * (np.log(gain) - np.log(loss))
            acc += w2 * 0.5 * q0 * sj
        total += 0.25 * w2 * acc
    return total
