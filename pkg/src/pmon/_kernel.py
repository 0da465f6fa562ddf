"""Compiled time-stepping loops shared by the simulator, IPA and TPBVP drivers.

Per grid point and agent let ``u = 1 - D/r`` so that ``p = max(u, 0)/C``.
Within a step ``[t_k, t_k + h]`` each ``u`` is interpolated linearly between
its grid values.  Where an agent's ``u`` changes sign the step is split at the
crossing time, and between the resulting nodes the rate ``r_i = A_i - B P_i``
is interpolated linearly.  R_i is then integrated exactly under the
constraint R_i >= 0, so hit-zero and leave-zero times are roots of a
quadratic and a line, and the cost is the exact integral of the piecewise
quadratic R_i(t).

Every (point, step) pair is a smooth map ``(R_k, u_k, u_{k+1}) -> (R_{k+1},
c_k)`` away from measure-zero switching sets, with ``c_k`` the cost accrued
over the step.  ``point_step`` returns its local Jacobian; the IPA recursion
chains it forward and the costate sweep chains it backward, so both are exact
derivatives of the computed cost.
"""

import numpy as np
from numba import njit

HIT = 0
LEAVE = 1

ERR_OK = 0
ERR_NONFINITE = 1

GRAZING_TOL = 1e-8
D_TOL = 1e-9
MAX_STEP_EVENTS = 8


@njit(cache=True)
def _seg_rise(r0, c, sa, sb):
    """R(sb) - R(sa) with r(s) = r0 + c s."""
    return r0 * (sb - sa) + 0.5 * c * (sb * sb - sa * sa)


@njit(cache=True)
def _seg_area(Ra, r0, c, sa, sb):
    """Integral of R over [sa, sb] given R(sa) = Ra."""
    L = sb - sa
    return Ra * L + 0.5 * r0 * L * L + 0.5 * c * ((sb ** 3 - sa ** 3) / 3.0 - sa * sa * L)


@njit(cache=True)
def step_local(R, r0, r1, h):
    """Advance one point over a segment of length h with linear rate.

    Returns ``(R_next, cost, dRn_dR, dRn_dr0, dRn_dr1, dc_dR, dc_dr0, dc_dr1,
    hit_s, leave_s, r_at_hit)``; ``hit_s``/``leave_s`` are offsets into the
    segment (-1 when absent).
    """
    c = (r1 - r0) / h
    hit_s = -1.0
    leave_s = -1.0
    r_hit = 0.0

    if R == 0.0 and r0 <= 0.0:
        if r1 <= 0.0:
            return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, hit_s, leave_s, r_hit
        s0 = h * (-r0) / (r1 - r0)
        leave_s = s0
        Rn = _seg_rise(r0, c, s0, h)
        cost = _seg_area(0.0, r0, c, s0, h)
        # partials at fixed s0; the Leibniz terms vanish since R(s0) = r(s0) = 0
        L = h - s0
        q2 = (h * h - s0 * s0) / (2.0 * h)
        q3 = ((h ** 3 - s0 ** 3) / 3.0 - s0 * s0 * L) / (2.0 * h)
        return (Rn, cost, 0.0, L - q2, q2, 0.0, 0.5 * L * L - q3, q3,
                hit_s, leave_s, r_hit)

    # R > 0, or R == 0 with r0 > 0: look for the first root in (0, h]
    s_star = -1.0
    if R == 0.0:
        if c < 0.0:
            s_star = -2.0 * r0 / c
    else:
        disc = r0 * r0 - 2.0 * c * R
        if disc >= 0.0:
            den = -r0 + np.sqrt(disc)
            if den > 0.0:
                s_star = 2.0 * R / den
    if s_star > 0.0 and s_star <= h:
        hit_s = s_star
        r_hit = r0 + c * s_star
        cost = _seg_area(R, r0, c, 0.0, s_star)
        dc_dR = s_star
        dc_dr1 = s_star ** 3 / (6.0 * h)
        dc_dr0 = 0.5 * s_star * s_star - dc_dr1
        if r1 > 0.0:
            s0 = -r0 / c
            if s0 < s_star:
                s0 = s_star
            leave_s = s0
            Rn = _seg_rise(r0, c, s0, h)
            cost += _seg_area(0.0, r0, c, s0, h)
            L = h - s0
            q2 = (h * h - s0 * s0) / (2.0 * h)
            q3 = ((h ** 3 - s0 ** 3) / 3.0 - s0 * s0 * L) / (2.0 * h)
            return (Rn, cost, 0.0, L - q2, q2, dc_dR, dc_dr0 + 0.5 * L * L - q3,
                    dc_dr1 + q3, hit_s, leave_s, r_hit)
        return 0.0, cost, 0.0, 0.0, 0.0, dc_dR, dc_dr0, dc_dr1, hit_s, leave_s, r_hit

    Rn = R + 0.5 * h * (r0 + r1)
    if Rn < 0.0:
        Rn = 0.0  # roundoff at a tangential touch
    cost = h * R + h * h * (2.0 * r0 + r1) / 6.0
    return Rn, cost, 1.0, 0.5 * h, 0.5 * h, h, h * h / 3.0, h * h / 6.0, hit_s, leave_s, r_hit


@njit(cache=True)
def _node_rate(sig, dsig, skip, u0, u1, A0, A1, h, B, C, dr):
    """Rate at offset ``sig`` of the step and its derivative (written to dr).

    Local variables are ordered ``z = (R_k, u0[0..N), u1[0..N))``.  Agent
    ``skip`` sits exactly on its range boundary at this node.
    """
    N = u0.shape[0]
    Z = dr.shape[0]
    f = sig / h
    for z in range(Z):
        dr[z] = 0.0  # holds dP until the end
    P = 0.0
    for m in range(N):
        if m == skip:
            continue
        slope = u1[m] - u0[m]
        um = u0[m] + slope * f
        if um < 0.0:
            continue
        p = um / C
        w = 1.0 - P
        keep = 1.0 - p
        for z in range(Z):
            dr[z] *= keep
        # dp = du / C with du = e_u0 (1 - f) + e_u1 f + (slope / h) dsig
        dr[1 + m] += w * (1.0 - f) / C
        dr[1 + N + m] += w * f / C
        if sig > 0.0 and sig < h:
            g = w * slope / (h * C)
            for z in range(Z):
                dr[z] += g * dsig[z]
        P += p * w
    dA = (A1 - A0) / h
    for z in range(Z):
        dr[z] = dA * dsig[z] - B * dr[z]
    return A0 + (A1 - A0) * f - B * P


@njit(cache=True)
def point_step(R, u0, u1, A0, A1, h, B, C, sig, dsig, rr, drr, skip_of, jac, dR,
               ev_s, ev_kind, ev_dz, ev_rate):
    """One step for one grid point together with its local Jacobian.

    ``jac[0]`` receives dR_{k+1}/dz and ``jac[1]`` dc_k/dz.  Events are
    written to ``ev_*``; ``ev_dz`` holds dtau/dz for hits.  Returns
    ``(R_next, cost, n_events)``.
    """
    N = u0.shape[0]
    Z = 1 + 2 * N

    # nodes: 0, range crossings in time order, h
    n_nodes = 1
    sig[0] = 0.0
    skip_of[0] = -1
    for z in range(Z):
        dsig[0, z] = 0.0
    for m in range(N):
        if (u0[m] >= 0.0) != (u1[m] >= 0.0):
            den = u0[m] - u1[m]
            s = h * u0[m] / den
            j = n_nodes
            while j > 1 and sig[j - 1] > s:
                sig[j] = sig[j - 1]
                skip_of[j] = skip_of[j - 1]
                for z in range(Z):
                    dsig[j, z] = dsig[j - 1, z]
                j -= 1
            sig[j] = s
            skip_of[j] = m
            for z in range(Z):
                dsig[j, z] = 0.0
            dsig[j, 1 + m] = h * (-u1[m]) / (den * den)
            dsig[j, 1 + N + m] = h * u0[m] / (den * den)
            n_nodes += 1
    sig[n_nodes] = h
    skip_of[n_nodes] = -1
    for z in range(Z):
        dsig[n_nodes, z] = 0.0
    n_nodes += 1

    for j in range(n_nodes):
        rr[j] = _node_rate(sig[j], dsig[j], skip_of[j], u0, u1, A0, A1, h, B, C, drr[j])

    for z in range(Z):
        dR[z] = 0.0
        jac[1, z] = 0.0
    dR[0] = 1.0
    cost = 0.0
    n_ev = 0
    for j in range(n_nodes - 1):
        sa = sig[j]
        L = sig[j + 1] - sa
        if L <= 0.0:
            continue
        ra = rr[j]
        rb = rr[j + 1]
        (Rn, cseg, aR, a0, a1, bR, b0, b1,
         hit_s, leave_s, r_hit) = step_local(R, ra, rb, L)
        c = (rb - ra) / L
        # stretching the segment at fixed end values
        Rdot = rb if Rn > 0.0 else 0.0
        aL = Rdot - c * a1
        bL = Rn - c * b1
        if hit_s >= 0.0 and n_ev < ev_s.shape[0]:
            ev_s[n_ev] = sa + hit_s
            ev_kind[n_ev] = HIT
            ev_rate[n_ev] = r_hit
            q = hit_s * hit_s / (2.0 * L)
            for z in range(Z):
                dl = dsig[j + 1, z] - dsig[j, z]
                dRh = dR[z] + (hit_s - q) * drr[j, z] + q * drr[j + 1, z] - c * q * dl
                ev_dz[n_ev, z] = dsig[j, z] - dRh / r_hit if r_hit != 0.0 else 0.0
            n_ev += 1
        if leave_s >= 0.0 and n_ev < ev_s.shape[0]:
            ev_s[n_ev] = sa + leave_s
            ev_kind[n_ev] = LEAVE
            ev_rate[n_ev] = 0.0
            n_ev += 1
        for z in range(Z):
            dl = dsig[j + 1, z] - dsig[j, z]
            jac[1, z] += bR * dR[z] + b0 * drr[j, z] + b1 * drr[j + 1, z] + bL * dl
            dR[z] = aR * dR[z] + a0 * drr[j, z] + a1 * drr[j + 1, z] + aL * dl
        R = Rn
        cost += cseg
    for z in range(Z):
        jac[0, z] = dR[z]
    return R, cost, n_ev


@njit(cache=True)
def _agent_u(k, i, pos, dpos, grid, ranges, grad_mode, u, du):
    """``u = 1 - D/r`` of every agent at grid point i, time index k.

    ``grad_mode`` 0 skips du, 1 fills it for agents in range only (others are
    left stale), 2 fills it for every agent.
    """
    N = pos.shape[1]
    ax = grid[i, 0]
    ay = grid[i, 1]
    any_in = False
    for n in range(N):
        dx = pos[k, n, 0] - ax
        dy = pos[k, n, 1] - ay
        D = np.sqrt(dx * dx + dy * dy)
        rn = ranges[n]
        u[n] = 1.0 - D / rn
        inside = u[n] >= 0.0
        if inside:
            any_in = True
        if grad_mode == 2 or (grad_mode == 1 and inside):
            if D < D_TOL:
                for q in range(du.shape[1]):
                    du[n, q] = 0.0
            else:
                g = -1.0 / (rn * D)
                for q in range(du.shape[1]):
                    du[n, q] = g * (dx * dpos[k, n, 0, q] + dy * dpos[k, n, 1, q])
    return any_in


@njit(cache=True)
def _advance_A(A_off, A_t, A_ptr, i, t):
    end = A_off[i + 1]
    while A_ptr[i] + 1 < end and A_t[A_ptr[i] + 1] <= t:
        A_ptr[i] += 1


@njit(cache=True)
def _rate_u(u, A, B, C, g):
    """Rate from per-agent ``u`` values; ``g[n]`` receives dr/du_n."""
    N = u.shape[0]
    P = 0.0
    for n in range(N):
        if u[n] >= 0.0:
            P += (u[n] / C) * (1.0 - P)
    for n in range(N):
        if u[n] >= 0.0:
            others = 1.0
            for d in range(N):
                if d != n and u[d] >= 0.0:
                    others *= 1.0 - u[d] / C
            g[n] = -B * others / C
        else:
            g[n] = 0.0
    return A - B * P


@njit(cache=True)
def run_hybrid(times, pos, dpos, ipa, grid, A_off, A_t, A_v, B, C, ranges, R0,
               record_R, record_event_grads, ev_cap):
    """Simulate on prescribed positions; with ``ipa`` also propagate dR/dparams.

    ``dpos[k, n, c, q]`` is the derivative of agent n's coordinate c at time
    index k with respect to that agent's q-th parameter.  At most ``ev_cap``
    events are logged; the returned count exceeds it when the log overflowed
    (the caller retries with a larger buffer).
    """
    K = times.shape[0] - 1
    N = pos.shape[1]
    M = grid.shape[0]
    Q = dpos.shape[3]
    PQ = Q * N
    Z = 1 + 2 * N
    want_eg = record_event_grads and ipa

    R = R0.copy()
    J_point = np.zeros(M)
    sumR = np.zeros(K + 1)
    A_ptr = A_off[:M].copy()
    A_cur = np.zeros(M)

    u_cur = np.zeros((M, N))
    in_cur = np.zeros(M, dtype=np.bool_)
    r_cur = np.zeros(M)
    du0 = np.zeros((N, Q))
    u_tmp = np.zeros(N)
    dr_cur = np.zeros((M if ipa else 1, PQ))
    u_nx = np.zeros(N)
    du_nx = np.zeros((N, Q))
    g_nx = np.zeros(N)
    dr_nx = np.zeros(PQ)

    sig = np.zeros(N + 2)
    dsig = np.zeros((N + 2, Z))
    rr = np.zeros(N + 2)
    drr = np.zeros((N + 2, Z))
    skip_of = np.zeros(N + 2, dtype=np.int64)
    jac = np.zeros((2, Z))
    dRz = np.zeros(Z)
    st_s = np.zeros(MAX_STEP_EVENTS)
    st_kind = np.zeros(MAX_STEP_EVENTS, dtype=np.int8)
    st_dz = np.zeros((MAX_STEP_EVENTS, Z))
    st_rate = np.zeros(MAX_STEP_EVENTS)
    st_grad = np.zeros((MAX_STEP_EVENTS, PQ))

    nd = M if ipa else 1
    dR = np.zeros((nd, PQ))
    grad = np.zeros(PQ)
    pending = np.zeros(nd)  # time over which dR_i stayed constant, not yet integrated
    newrow = np.zeros(PQ)

    cap = ev_cap
    ev_t = np.empty(cap)
    ev_i = np.empty(cap, dtype=np.int64)
    ev_kind = np.empty(cap, dtype=np.int8)
    ev_step = np.empty(cap, dtype=np.int64)
    ev_rate = np.empty(cap)
    ev_grad = np.zeros((cap, PQ)) if want_eg else np.zeros((1, PQ))
    n_ev = 0
    n_grazing = 0

    R_trace = np.zeros((K + 1, M)) if record_R else np.zeros((1, 1))

    for i in range(M):
        sumR[0] += R[i]
        _advance_A(A_off, A_t, A_ptr, i, times[0])
        A_cur[i] = A_v[A_ptr[i]]
        in_cur[i] = _agent_u(0, i, pos, dpos, grid, ranges, 1 if ipa else 0, u_nx, du_nx)
        r_cur[i] = _rate_u(u_nx, A_cur[i], B, C, g_nx)
        for n in range(N):
            u_cur[i, n] = u_nx[n]
            if ipa:
                for q in range(Q):
                    dr_cur[i, Q * n + q] = g_nx[n] * du_nx[n, q]
        if record_R:
            R_trace[0, i] = R[i]

    err = ERR_OK
    err_t = 0.0
    err_i = -1

    for k in range(K):
        t = times[k]
        t1 = times[k + 1]
        h = t1 - t
        s_tot = 0.0
        for i in range(M):
            _advance_A(A_off, A_t, A_ptr, i, t1)
            A1 = A_v[A_ptr[i]]
            A0 = A_cur[i]
            any_in = _agent_u(k + 1, i, pos, dpos, grid, ranges, 0, u_nx, du_nx)
            r1 = _rate_u(u_nx, A1, B, C, g_nx)
            sensed = in_cur[i] or any_in
            crossing = False
            for n in range(N):
                if (u_cur[i, n] >= 0.0) != (u_nx[n] >= 0.0):
                    crossing = True
            if ipa and sensed:
                if crossing:
                    # crossing times need du at both ends, in range or not
                    _agent_u(k, i, pos, dpos, grid, ranges, 2, u_tmp, du0)
                    _agent_u(k + 1, i, pos, dpos, grid, ranges, 2, u_nx, du_nx)
                else:
                    _agent_u(k + 1, i, pos, dpos, grid, ranges, 1, u_nx, du_nx)
                for n in range(N):
                    for q in range(Q):
                        dr_nx[Q * n + q] = g_nx[n] * du_nx[n, q]
            Ri = R[i]
            n_st = 0
            if not crossing:
                (Rn, cost, aR, a0, a1, bR, b0, b1,
                 hit_s, leave_s, r_hit) = step_local(Ri, r_cur[i], r1, h)
                if hit_s >= 0.0:
                    st_s[n_st] = hit_s
                    st_kind[n_st] = HIT
                    st_rate[n_st] = r_hit
                    if want_eg:
                        # dtau = -(dR_k + s dr0 + s^2/(2h) (dr1 - dr0)) / r(tau)
                        qq = hit_s * hit_s / (2.0 * h)
                        for q in range(PQ):
                            dRh = dR[i, q] + (hit_s - qq) * dr_cur[i, q] + qq * dr_nx[q]
                            st_grad[n_st, q] = -dRh / r_hit if r_hit != 0.0 else 0.0
                    n_st += 1
                if leave_s >= 0.0:
                    st_s[n_st] = leave_s
                    st_kind[n_st] = LEAVE
                    st_rate[n_st] = 0.0
                    n_st += 1
                if ipa:
                    if not sensed and aR == 1.0:
                        pending[i] += h
                    else:
                        if pending[i] != 0.0:
                            for q in range(PQ):
                                grad[q] += pending[i] * dR[i, q]
                            pending[i] = 0.0
                        for q in range(PQ):
                            grad[q] += bR * dR[i, q] + b0 * dr_cur[i, q] + b1 * dr_nx[q]
                            dR[i, q] = aR * dR[i, q] + a0 * dr_cur[i, q] + a1 * dr_nx[q]
            else:
                Rn, cost, n_st = point_step(Ri, u_cur[i], u_nx, A0, A1, h, B, C, sig, dsig, rr,
                                            drr, skip_of, jac, dRz, st_s, st_kind, st_dz, st_rate)
                if ipa:
                    if pending[i] != 0.0:
                        for q in range(PQ):
                            grad[q] += pending[i] * dR[i, q]
                        pending[i] = 0.0
                    if want_eg:
                        for e in range(n_st):
                            for q in range(PQ):
                                st_grad[e, q] = st_dz[e, 0] * dR[i, q]
                            for n in range(N):
                                for q in range(Q):
                                    st_grad[e, Q * n + q] += (st_dz[e, 1 + n] * du0[n, q]
                                                              + st_dz[e, 1 + N + n] * du_nx[n, q])
                    for q in range(PQ):
                        newrow[q] = jac[0, 0] * dR[i, q]
                        grad[q] += jac[1, 0] * dR[i, q]
                    for n in range(N):
                        j0 = jac[0, 1 + n]
                        j1 = jac[0, 1 + N + n]
                        c0 = jac[1, 1 + n]
                        c1 = jac[1, 1 + N + n]
                        for q in range(Q):
                            a = du0[n, q]
                            b = du_nx[n, q]
                            newrow[Q * n + q] += j0 * a + j1 * b
                            grad[Q * n + q] += c0 * a + c1 * b
                    for q in range(PQ):
                        dR[i, q] = newrow[q]
            J_point[i] += cost

            for e in range(n_st):
                if st_kind[e] == HIT and -st_rate[e] < GRAZING_TOL:
                    n_grazing += 1
                if n_ev >= cap:
                    n_ev += 1
                    continue
                ev_t[n_ev] = t + st_s[e]
                ev_i[n_ev] = i
                ev_kind[n_ev] = st_kind[e]
                ev_step[n_ev] = k
                ev_rate[n_ev] = st_rate[e]
                if want_eg:
                    for q in range(PQ):
                        ev_grad[n_ev, q] = st_grad[e, q] if st_kind[e] == HIT else np.nan
                n_ev += 1

            R[i] = Rn
            A_cur[i] = A1
            in_cur[i] = any_in
            r_cur[i] = r1
            for n in range(N):
                u_cur[i, n] = u_nx[n]
            if ipa and sensed:
                for q in range(PQ):
                    dr_cur[i, q] = dr_nx[q] if any_in else 0.0
            s_tot += Rn
            if record_R:
                R_trace[k + 1, i] = Rn
            if not np.isfinite(Rn):
                err = ERR_NONFINITE
                err_t = t
                err_i = i
                break
        if err != ERR_OK:
            break
        sumR[k + 1] = s_tot

    if ipa:
        for i in range(M):
            if pending[i] != 0.0:
                for q in range(PQ):
                    grad[q] += pending[i] * dR[i, q]
                pending[i] = 0.0

    J = 0.0
    for i in range(M):
        J += J_point[i]
    n_keep = min(n_ev, cap)
    n_eg = n_keep if want_eg else 0
    return (J, grad, J_point, sumR, R, dR,
            ev_t[:n_keep].copy(), ev_i[:n_keep].copy(), ev_kind[:n_keep].copy(),
            ev_step[:n_keep].copy(), ev_rate[:n_keep].copy(), ev_grad[:n_eg].copy(), n_ev,
            n_grazing, R_trace, err, err_t, err_i)


@njit(cache=True)
def costate_sweep(times, pos, grid, A_off, A_t, A_v, B, C, ranges, R_trace, clip_mask):
    """Backward sweep for the uncertainty and position costates.

    ``lam[k, i]`` and ``mu[k, n]`` are the sensitivities of the cost accrued
    after ``t_k`` to ``R_i(t_k)`` and to agent n's position ``s_n(t_k)``;
    both vanish at ``t_K = T``.  ``nu[k, n]`` (k >= 1) is the sensitivity of
    the cost accrued after ``t_{k-1}`` to ``s_n(t_k)``, i.e. the costate that
    multiplies the move ``k-1 -> k``.  ``clip_mask[k, n, c]`` is 0 where
    coordinate c of the move ``k -> k+1`` was clamped at the mission
    boundary, 1 otherwise.
    """
    K = times.shape[0] - 1
    N = pos.shape[1]
    M = grid.shape[0]
    Z = 1 + 2 * N
    lam = np.zeros((K + 1, M))
    mu = np.zeros((K + 1, N, 2))
    nu = np.zeros((K + 1, N, 2))
    W_cur = np.zeros((M, N))   # dJ_k/du at time k
    W_next = np.zeros((M, N))  # dJ_k/du at time k+1

    sig = np.zeros(N + 2)
    dsig = np.zeros((N + 2, Z))
    rr = np.zeros(N + 2)
    drr = np.zeros((N + 2, Z))
    skip_of = np.zeros(N + 2, dtype=np.int64)
    jac = np.zeros((2, Z))
    dRz = np.zeros(Z)
    st_s = np.zeros(MAX_STEP_EVENTS)
    st_kind = np.zeros(MAX_STEP_EVENTS, dtype=np.int8)
    st_dz = np.zeros((MAX_STEP_EVENTS, Z))
    st_rate = np.zeros(MAX_STEP_EVENTS)
    u0 = np.zeros(N)
    u1 = np.zeros(N)
    dummy_dpos = np.zeros((1, 1, 2, 1))
    dummy_du = np.zeros((N, 1))

    # growth-rate pointers start at the last switch and walk backward
    A_ptr = np.empty(M, dtype=np.int64)
    for i in range(M):
        A_ptr[i] = A_off[i + 1] - 1

    for k in range(K - 1, -1, -1):
        t = times[k]
        t1 = times[k + 1]
        h = t1 - t
        for i in range(M):
            for n in range(N):
                W_cur[i, n] = 0.0
                W_next[i, n] = 0.0
            # A at t1
            while A_ptr[i] > A_off[i] and A_t[A_ptr[i]] > t1:
                A_ptr[i] -= 1
            A1 = A_v[A_ptr[i]]
            p0 = A_ptr[i]
            while p0 > A_off[i] and A_t[p0] > t:
                p0 -= 1
            A0 = A_v[p0]
            in0 = _agent_u(k, i, pos, dummy_dpos, grid, ranges, 0, u0, dummy_du)
            in1 = _agent_u(k + 1, i, pos, dummy_dpos, grid, ranges, 0, u1, dummy_du)
            lk1 = lam[k + 1, i]
            if not in0 and not in1:
                (Rn, cost, aR, a0, a1, bR, b0, b1,
                 hit_s, leave_s, r_hit) = step_local(R_trace[k, i], A0, A1, h)
                lam[k, i] = bR + aR * lk1
                continue
            point_step(R_trace[k, i], u0, u1, A0, A1, h, B, C, sig, dsig, rr, drr, skip_of,
                       jac, dRz, st_s, st_kind, st_dz, st_rate)
            lam[k, i] = jac[1, 0] + jac[0, 0] * lk1
            for n in range(N):
                W_cur[i, n] = jac[1, 1 + n] + jac[0, 1 + n] * lk1
                W_next[i, n] = jac[1, 1 + N + n] + jac[0, 1 + N + n] * lk1
        for n in range(N):
            nu[k + 1, n, 0] = mu[k + 1, n, 0]
            nu[k + 1, n, 1] = mu[k + 1, n, 1]
            mu[k, n, 0] = 0.0
            mu[k, n, 1] = 0.0
        _add_position_costate(k + 1, pos, grid, ranges, W_next, nu[k + 1])
        for n in range(N):
            mu[k, n, 0] = nu[k + 1, n, 0] * clip_mask[k, n, 0]
            mu[k, n, 1] = nu[k + 1, n, 1] * clip_mask[k, n, 1]
        _add_position_costate(k, pos, grid, ranges, W_cur, mu[k])
    for n in range(N):
        nu[0, n, 0] = mu[0, n, 0]
        nu[0, n, 1] = mu[0, n, 1]
    return lam, mu, nu


@njit(cache=True)
def _add_position_costate(k, pos, grid, ranges, W, out):
    """out[n] += sum_i dJ/du_i du_i/ds_n at time k."""
    N = pos.shape[1]
    M = grid.shape[0]
    for i in range(M):
        for n in range(N):
            w = W[i, n]
            if w == 0.0:
                continue
            dx = pos[k, n, 0] - grid[i, 0]
            dy = pos[k, n, 1] - grid[i, 1]
            D = np.sqrt(dx * dx + dy * dy)
            if D < D_TOL:
                continue
            g = -w / (ranges[n] * D)
            out[n, 0] += g * dx
            out[n, 1] += g * dy
