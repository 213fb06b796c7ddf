"""Compiled inner loops. States are laid out ``(modes, members)``."""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def triad_sum(V, out, tl, ta, tb, tpsi):
    """Bracket of the quadratic term, before the ``i eps / N`` prefactor.

    For every unique triad ``l = a + b`` (``a <= b``):
    sum part ``out[l] += (2 - [a == b]) Psi V_a V_b`` and difference part
    ``out[a] += 2 Psi conj(V_b) V_l`` (and symmetrically for ``b``).
    """
    M, R = V.shape
    for n in range(M):
        for r in range(R):
            out[n, r] = 0.0
    for t in range(tl.size):
        l = tl[t]
        a = ta[t]
        b = tb[t]
        c = tpsi[t]
        if a == b:
            for r in range(R):
                va = V[a, r]
                vl = V[l, r]
                out[l, r] += c * va * va
                out[a, r] += 2.0 * c * va.conjugate() * vl
        else:
            c2 = 2.0 * c
            for r in range(R):
                va = V[a, r]
                vb = V[b, r]
                vl = V[l, r]
                out[l, r] += c2 * va * vb
                out[a, r] += c2 * vb.conjugate() * vl
                out[b, r] += c2 * va.conjugate() * vl


@nb.njit(cache=True)
def rk4_nonlinear(V, dt, scale, tl, ta, tb, tpsi, k1, k2, k3, k4, tmp):
    """One classical RK4 step of ``dV = i scale * bracket(V)`` in place."""
    M, R = V.shape
    f = 1j * scale
    triad_sum(V, k1, tl, ta, tb, tpsi)
    for n in range(M):
        for r in range(R):
            k1[n, r] *= f
            tmp[n, r] = V[n, r] + 0.5 * dt * k1[n, r]
    triad_sum(tmp, k2, tl, ta, tb, tpsi)
    for n in range(M):
        for r in range(R):
            k2[n, r] *= f
            tmp[n, r] = V[n, r] + 0.5 * dt * k2[n, r]
    triad_sum(tmp, k3, tl, ta, tb, tpsi)
    for n in range(M):
        for r in range(R):
            k3[n, r] *= f
            tmp[n, r] = V[n, r] + dt * k3[n, r]
    triad_sum(tmp, k4, tl, ta, tb, tpsi)
    sixth = dt / 6.0
    for n in range(M):
        for r in range(R):
            V[n, r] += sixth * (k1[n, r] + 2.0 * k2[n, r] + 2.0 * k3[n, r] + f * k4[n, r])


@nb.njit(cache=True)
def cubic_energy(V, tl, ta, tb, tpsi):
    """``sum_{k + l = m} Psi+ 2 Re(V_k V_l conj(V_m))`` over ordered pairs, per member."""
    M, R = V.shape
    out = np.zeros(R)
    for t in range(tl.size):
        l = tl[t]
        a = ta[t]
        b = tb[t]
        c = tpsi[t] * (2.0 if a != b else 1.0)
        for r in range(R):
            out[r] += 2.0 * c * (V[a, r] * V[b, r] * V[l, r].conjugate()).real
    return out


# ---------------------------------------------------------------------------
# linearized kinetic operator


@nb.njit(cache=True, inline="always")
def _smooth(x):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    return x * x * (3.0 - 2.0 * x)


@nb.njit(cache=True)
def _psi_plus(x, y, a, b, c, w):
    return _smooth((x - a) / w) * _smooth((b - x) / w) * _smooth((y + c) / w) * _smooth((c - y) / w)


@nb.njit(cache=True)
def _phi_full(x, y, a, b, c, w):
    return np.sqrt(abs(x)) * (_psi_plus(x, y, a, b, c, w) + _psi_plus(-x, y, a, b, c, w))


@nb.njit(cache=True)
def _kernels_at(mx, my, px, py, dom, convention):
    """``(L, S_p, S_j)`` for the triad ``(m, m - p, p)``."""
    a, b, c, w = dom[0], dom[1], dom[2], dom[3]
    jx = mx - px
    jy = my - py
    f = _phi_full(mx, my, a, b, c, w) * _phi_full(px, py, a, b, c, w) * _phi_full(jx, jy, a, b, c, w)
    if f == 0.0:
        return 0.0, 0.0, 0.0
    p2 = 2.0 * f * f
    gm = 1.0 / abs(mx)
    gp = 1.0 / abs(px)
    gj = 1.0 / abs(jx)
    sp = 1.0 if mx * px > 0 else -1.0
    sj = 1.0 if mx * jx > 0 else -1.0
    if convention == 0:
        return -p2 * (sp * gj + sj * gp), p2 * (gj - sj * gm), p2 * (gp - sp * gm)
    return -p2 * (sj * gj + sp * gp), p2 * (gj - sp * gm), p2 * (gp - sj * gm)


@nb.njit(cache=True)
def _interp(x, y, mesh, idx, wts):
    """Bilinear stencil of the evenly extended nodal field; returns stencil size."""
    x0, y0, dx, nx, ny = mesh[0], mesh[1], mesh[2], int(mesh[3]), int(mesh[4])
    if x < 0:
        x = -x
        y = -y
    fx = (x - x0) / dx
    fy = (y - y0) / dx
    if fx < 0.0 or fy < 0.0 or fx > nx - 1 or fy > ny - 1:
        return 0
    i = min(int(fx), nx - 2)
    j = min(int(fy), ny - 2)
    tx = fx - i
    ty = fy - j
    idx[0] = i * ny + j
    idx[1] = (i + 1) * ny + j
    idx[2] = i * ny + j + 1
    idx[3] = (i + 1) * ny + j + 1
    wts[0] = (1 - tx) * (1 - ty)
    wts[1] = tx * (1 - ty)
    wts[2] = (1 - tx) * ty
    wts[3] = tx * ty
    return 4


@nb.njit(cache=True)
def curve_nodes(mx, my, eta, dom, n_sigma, out_p, out_w):
    """Midpoint nodes of the resonant curve through ``m`` (``m_x > 0``) with co-area weights."""
    a, b = dom[0], dom[1]
    los = (-b, a / 2, mx + a / 2)
    his = (-a / 2, mx - a / 2, b)
    c3 = np.sqrt(3.0 / eta)
    n = 0
    for piece in range(3):
        lo = los[piece]
        hi = his[piece]
        if not lo < hi:
            continue
        h = (hi - lo) / n_sigma
        for k in range(n_sigma):
            s = lo + h * (k + 0.5)
            q = (mx - s) * s
            for br in (1.0, -1.0):
                py = s * my / mx + br * c3 * q
                jx = mx - s
                jy = my - py
                d = 2.0 * eta * (jy / jx - py / s)
                out_p[n, 0] = s
                out_p[n, 1] = py
                out_w[n] = h / abs(d)
                n += 1
    return n


@nb.njit(cache=True)
def _tan_window(r, lo, hi, s, n_w, px, out_p, out_w, n, shift, wx):
    t0 = np.arctan((lo - r) / s)
    t1 = np.arctan((hi - r) / s)
    span = t1 - t0
    if span <= 0:
        return n
    k = max(4, int(np.ceil(n_w * span / np.pi)))
    h = span / k
    for i in range(k):
        t = t0 + h * (i + 0.5)
        ct = np.cos(t)
        out_p[n, 0] = px
        out_p[n, 1] = r + s * np.tan(t) + shift
        out_w[n] = wx * h * s / (ct * ct)
        n += 1
    return n


@nb.njit(cache=True)
def _uniform(lo, hi, du, px, out_p, out_w, n, shift, wx):
    if not hi > lo:
        return n
    k = max(1, int(np.ceil((hi - lo) / du)))
    h = (hi - lo) / k
    for i in range(k):
        out_p[n, 0] = px
        out_p[n, 1] = lo + h * (i + 0.5) + shift
        out_w[n] = wx * h
        n += 1
    return n


@nb.njit(cache=True)
def lorentz_nodes(mx, my, lam, eta, dom, dpx, du, n_w, kmin, out_p, out_w):
    """2D nodes for ``(1/pi) int lam / (Omega^2 + lam^2) (...) dp`` over the support of ``Psi``.

    Midpoint in ``p_x``; in ``u = p_y - p_x m_y / m_x`` tan-substituted windows
    around both roots of ``Omega`` and uniform midpoint elsewhere. The weights
    include the Lorentzian factor.
    """
    a, b, c = dom[0], dom[1], dom[2]
    los = (mx - b, a, mx + a)
    his = (-a, mx - a, b)
    s = lam / (2.0 * np.sqrt(3.0 * eta) * mx)
    hw = max(kmin, 0.03 / s) * s
    c3 = np.sqrt(3.0 / eta)
    n = 0
    for piece in range(3):
        lo = los[piece]
        hi = his[piece]
        if not lo < hi:
            continue
        k = max(1, int(np.ceil((hi - lo) / dpx)))
        h = (hi - lo) / k
        for i in range(k):
            px = lo + h * (i + 0.5)
            q = px * (mx - px)
            shift = px * my / mx
            ulo = max(-c, my - c) - shift
            uhi = min(c, my + c) - shift
            if not uhi > ulo:
                continue
            u0 = c3 * abs(q)
            # window [r - hw, r + hw] around each root, split at 0 if they meet
            wlo_p = max(u0 - hw, 0.0)
            whi_p = u0 + hw
            wlo_m = -u0 - hw
            whi_m = min(-u0 + hw, 0.0)
            start = n
            n = _uniform(ulo, min(uhi, wlo_m), du, px, out_p, out_w, n, shift, h)
            n = _tan_window(-u0, max(ulo, wlo_m), min(uhi, whi_m), s, n_w, px, out_p, out_w, n, shift, h)
            n = _uniform(max(ulo, whi_m), min(uhi, wlo_p), du, px, out_p, out_w, n, shift, h)
            n = _tan_window(u0, max(ulo, wlo_p), min(uhi, whi_p), s, n_w, px, out_p, out_w, n, shift, h)
            n = _uniform(max(ulo, whi_p), uhi, du, px, out_p, out_w, n, shift, h)
            Q = 3.0 * mx * q
            A = eta * mx / q
            for t in range(start, n):
                u = out_p[t, 1] - shift
                om = Q - A * u * u
                out_w[t] *= lam / (np.pi * (om * om + lam * lam))
    return n


@nb.njit(cache=True)
def lorentz_capacity(mx, lam, eta, dom, dpx, du, n_w, kmin):
    a, b, c = dom[0], dom[1], dom[2]
    total = 0
    los = (mx - b, a, mx + a)
    his = (-a, mx - a, b)
    for piece in range(3):
        if his[piece] > los[piece]:
            total += int(np.ceil((his[piece] - los[piece]) / dpx)) + 1
    per = int(np.ceil(2 * c / du)) + 5 + 2 * (max(4, n_w) + 2)
    return total * per


@nb.njit(cache=True)
def assemble_rows(rows, node_xy, form, lam, eta, dom, mesh, convention, n_sigma,
                  dpx, du, n_w, kmin, out):
    """Dense operator rows: ``out[r] @ f`` is the kinetic rhs at node ``rows[r]``."""
    idx = np.empty(4, np.int64)
    wts = np.empty(4)
    cap = 0
    for r in range(rows.size):
        mx = node_xy[rows[r], 0]
        if form == 0:
            cap = max(cap, 6 * n_sigma)
        else:
            cap = max(cap, lorentz_capacity(mx, lam, eta, dom, dpx, du, n_w, kmin))
    P = np.empty((cap, 2))
    W = np.empty(cap)
    for r in range(rows.size):
        node = rows[r]
        mx = node_xy[node, 0]
        my = node_xy[node, 1]
        for col in range(out.shape[1]):
            out[r, col] = 0.0
        if form == 0:
            n = curve_nodes(mx, my, eta, dom, n_sigma, P, W)
        else:
            n = lorentz_nodes(mx, my, lam, eta, dom, dpx, du, n_w, kmin, P, W)
        diag = 0.0
        for t in range(n):
            px = P[t, 0]
            py = P[t, 1]
            L, Sp, Sj = _kernels_at(mx, my, px, py, dom, convention)
            if L == 0.0 and Sp == 0.0 and Sj == 0.0:
                continue
            wt = W[t]
            diag += wt * L
            k = _interp(px, py, mesh, idx, wts)
            for s in range(k):
                out[r, idx[s]] += wt * Sp * wts[s]
            k = _interp(mx - px, my - py, mesh, idx, wts)
            for s in range(k):
                out[r, idx[s]] += wt * Sj * wts[s]
        out[r, node] += diag
