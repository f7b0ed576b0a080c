"""Compiled Metropolis kernels operating on deviation variables.

The configuration is ``phi = c + psi`` with fixed centres ``c``; kernels only
see bond centre differences ``dc`` and the deviations ``psi``.  Rows at and
beyond ``n_free`` are pinned and hold ``psi = 0``.
"""

import math

import numpy as np
from numba import njit

REFRESH_EVERY = 100_000

REF_NONE = -1
REF_PRODUCT = 0
REF_GAUSSIAN = 1


@njit(cache=True, nogil=True)
def bond_f(kind, par, t):
    if kind == 0:
        p = par[0]
        if p == 2.0:
            return t * t
        return t ** p
    if t < par[5]:
        return par[1] * t ** par[0]
    e = par[6]
    return (par[2] + par[3] * (e * t) ** par[4]) / e


@njit(cache=True, nogil=True)
def _norm(v):
    s = 0.0
    for k in range(v.shape[0]):
        s += v[k] * v[k]
    return math.sqrt(s)


@njit(cache=True, nogil=True)
def _bond_t(psi, dc, ia, ib, inv, b, m):
    s = 0.0
    for k in range(m):
        g = dc[b, k] + psi[ib[b], k] - psi[ia[b], k]
        s += g * g
    return math.sqrt(s) * inv[b]


@njit(cache=True, nogil=True)
def _bond_dpsi2(psi, mu, ia, ib, b, m):
    s = 0.0
    for k in range(m):
        g = (psi[ib[b], k] - mu[ib[b], k]) - (psi[ia[b], k] - mu[ia[b], k])
        s += g * g
    return s


@njit(cache=True, nogil=True)
def _dist2(v, mu, s, m):
    r = 0.0
    for k in range(m):
        g = v[k] - mu[s, k]
        r += g * g
    return r


@njit(cache=True, nogil=True)
def _onsite(centers, psi, s, m, oc, oq):
    if oc == 0.0:
        return 0.0
    r = 0.0
    for k in range(m):
        g = centers[s, k] + psi[s, k]
        r += g * g
    return oc * math.sqrt(r) ** oq


@njit(cache=True, nogil=True)
def totals(psi, centers, ia, ib, dc, w, inv, kind, par, oc, oq, n_free,
           cpow, pc, ref_kind, ref_theta, ref_k, ref_eps2, ref_mu):
    """From-scratch ``(H, H_ref, constraint sum)``.

    The Gaussian reference is centred at ``ref_mu``; the constraint is always
    centred at ``psi = 0``.
    """
    m = psi.shape[1]
    e = 0.0
    r = 0.0
    for b in range(ia.shape[0]):
        e += w[b] * bond_f(kind, par, _bond_t(psi, dc, ia, ib, inv, b, m))
        if ref_kind == 1:
            r += ref_k[b] * inv[b] * inv[b] * _bond_dpsi2(psi, ref_mu, ia, ib, b, m)
    sc = 0.0
    for s in range(n_free):
        e += _onsite(centers, psi, s, m, oc, oq)
        a = _norm(psi[s])
        sc += cpow * a ** pc
        if ref_kind == 0:
            r += ref_theta * cpow * a ** pc
        elif ref_kind == 1:
            r += ref_theta * ref_eps2 * _dist2(psi[s], ref_mu, s, m)
    return e, r, sc


@njit(cache=True, nogil=True)
def run_sweeps(psi, centers, ia, ib, dc, w, inv, ptr, idx, kind, par, oc, oq, n_free,
               cpow, pc, budget, clamp, beta, lam, ref_kind, ref_theta, ref_k, ref_eps2, ref_mu,
               normals, uniforms, scale, state, out_e, out_r, out_s, states_out):
    """Systematic-scan single-site Gaussian Metropolis for ``lam beta H + (1-lam) H_ref``.

    ``state`` holds ``[H, H_ref, constraint_sum, accepted_since_refresh,
    accepted_total, proposed_total]`` and is updated in place.
    """
    m = psi.shape[1]
    n_sweeps = normals.shape[0]
    e_tot = state[0]
    r_tot = state[1]
    s_tot = state[2]
    since = state[3]
    acc = state[4]
    prop = state[5]
    new = np.empty(m)
    record = states_out.shape[0] == n_sweeps
    for sw in range(n_sweeps):
        for s in range(n_free):
            prop += 1.0
            for k in range(m):
                new[k] = psi[s, k] + scale * normals[sw, s, k]
            a_old = _norm(psi[s])
            a_new = _norm(new)
            if a_new >= clamp[s]:
                continue
            c_old = cpow * a_old ** pc
            c_new = cpow * a_new ** pc
            s_new = s_tot - c_old + c_new
            if s_new > budget:
                continue
            de = 0.0
            dr = 0.0
            for j in range(ptr[s], ptr[s + 1]):
                b = idx[j]
                t_old = _bond_t(psi, dc, ia, ib, inv, b, m)
                q_old = 0.0
                if ref_kind == 1:
                    q_old = _bond_dpsi2(psi, ref_mu, ia, ib, b, m)
                for k in range(m):
                    tmp = psi[s, k]
                    psi[s, k] = new[k]
                    new[k] = tmp
                t_new = _bond_t(psi, dc, ia, ib, inv, b, m)
                if ref_kind == 1:
                    dr += ref_k[b] * inv[b] * inv[b] * (_bond_dpsi2(psi, ref_mu, ia, ib, b, m) - q_old)
                for k in range(m):
                    tmp = psi[s, k]
                    psi[s, k] = new[k]
                    new[k] = tmp
                de += w[b] * (bond_f(kind, par, t_new) - bond_f(kind, par, t_old))
            if oc != 0.0:
                o_old = _onsite(centers, psi, s, m, oc, oq)
                for k in range(m):
                    tmp = psi[s, k]
                    psi[s, k] = new[k]
                    new[k] = tmp
                o_new = _onsite(centers, psi, s, m, oc, oq)
                for k in range(m):
                    tmp = psi[s, k]
                    psi[s, k] = new[k]
                    new[k] = tmp
                de += o_new - o_old
            if ref_kind == 0:
                dr += ref_theta * (c_new - c_old)
            elif ref_kind == 1 and ref_theta != 0.0:
                dr += ref_theta * ref_eps2 * (_dist2(new, ref_mu, s, m) - _dist2(psi[s], ref_mu, s, m))
            log_a = -(lam * beta * de + (1.0 - lam) * dr) if lam < 1.0 else -beta * de
            if log_a >= 0.0 or math.log(uniforms[sw, s]) < log_a:
                for k in range(m):
                    psi[s, k] = new[k]
                e_tot += de
                r_tot += dr
                s_tot = s_new
                acc += 1.0
                since += 1.0
                if since >= REFRESH_EVERY:
                    e_tot, r_tot, s_tot = totals(psi, centers, ia, ib, dc, w, inv, kind, par, oc, oq,
                                                 n_free, cpow, pc, ref_kind, ref_theta, ref_k, ref_eps2,
                                                 ref_mu)
                    since = 0.0
        out_e[sw] = e_tot
        out_r[sw] = r_tot
        out_s[sw] = s_tot
        if record:
            for s in range(n_free):
                for k in range(m):
                    states_out[sw, s, k] = psi[s, k]
    state[0] = e_tot
    state[1] = r_tot
    state[2] = s_tot
    state[3] = since
    state[4] = acc
    state[5] = prop
