"""Hot inner loops. Written in the numba-compatible numpy subset.

Both kernels run either compiled or as plain numpy depending on ``ACQL_DISABLE_NUMBA``.
"""
import numpy as np

from acql._jit import maybe_njit

STATUS_OPTIMAL = 0
STATUS_INFEASIBLE = 1
STATUS_ITER_LIMIT = 2


@maybe_njit
def _kkt_solve(H, C, work, n_work, rhs_x, rhs_c):
    n = H.shape[0]
    size = n + n_work
    K = np.zeros((size, size))
    K[:n, :n] = H
    rhs = np.zeros(size)
    rhs[:n] = rhs_x
    for k in range(n_work):
        row = C[work[k]]
        K[n + k, :n] = row
        K[:n, n + k] = row
        rhs[n + k] = rhs_c[k]
    return np.linalg.solve(K, rhs)


@maybe_njit
def qp_dual_active_set(H, f, A_in, b_in, A_eq, b_eq, max_iter):
    """Dual active-set QP: min 1/2 x'Hx + f'x  s.t.  A_in x <= b_in, A_eq x = b_eq.

    Starts at the equality-constrained minimiser and repeatedly brings in the
    most violated inequality (lowest index on ties), dropping working rows whose
    multipliers would turn negative. The objective is non-decreasing along the
    way. When a violated row cannot be satisfied the returned ``farkas`` vector
    (y_in >= 0, y_eq free) satisfies y'A = 0 and y'(A x - b) > 0 at the last
    iterate, which certifies an empty feasible set.

    Returns ``(x, lam_in, nu_eq, status, iterations, farkas_in, farkas_eq, obj_trace, working_in)``.
    """
    n = H.shape[0]
    m = A_in.shape[0]
    p = A_eq.shape[0]
    C = np.zeros((p + m, n))
    C[:p] = A_eq
    C[p:] = A_in
    cb = np.zeros(p + m)
    cb[:p] = b_eq
    cb[p:] = b_in

    work = np.zeros(p + m, dtype=np.int64)
    mult = np.zeros(p + m)
    n_work = 0
    for k in range(p):
        work[k] = k
    n_work = p

    rhs_c = np.zeros(p + m)
    for k in range(n_work):
        rhs_c[k] = cb[work[k]]
    sol = _kkt_solve(H, C, work, n_work, -f, rhs_c)
    x = sol[:n].copy()
    for k in range(n_work):
        mult[k] = sol[n + k]

    obj_trace = np.full(max_iter + 1, np.nan)
    obj_trace[0] = 0.5 * x @ (H @ x) + f @ x
    farkas = np.zeros(p + m)
    in_work = np.zeros(p + m, dtype=np.bool_)
    for k in range(p):
        in_work[k] = True

    status = STATUS_ITER_LIMIT
    iters = 0
    x_scale = 1.0
    while iters < max_iter:
        # pick the most violated inequality not in the working set
        x_scale = 1.0 + np.max(np.abs(x))
        best = -1
        best_viol = 0.0
        for i in range(m):
            row = p + i
            if in_work[row]:
                continue
            viol = C[row] @ x - cb[row]
            tol = 1e-13 * (1.0 + abs(cb[row]) + np.sum(np.abs(C[row])) * x_scale)
            if viol > tol and viol > best_viol:
                best_viol = viol
                best = row
        if best < 0:
            status = STATUS_OPTIMAL
            break

        a_p = C[best]
        t_acc = 0.0
        added = False
        while iters < max_iter and not added:
            iters += 1
            zero_c = np.zeros(p + m)
            step = _kkt_solve(H, C, work, n_work, -a_p, zero_c)
            z = step[:n]
            r = step[n:]
            az = a_p @ z
            z_norm = np.sqrt(z @ z)
            t_full = np.inf
            if z_norm > 1e-14 * (1.0 + np.sqrt(a_p @ a_p)) and az < 0.0:
                t_full = (a_p @ x - cb[best]) / (-az)
                if t_full < 0.0:
                    t_full = 0.0
            t_part = np.inf
            block = -1
            for k in range(n_work):
                if work[k] < p:
                    continue
                if r[k] < -1e-14:
                    ratio = mult[k] / (-r[k])
                    if ratio < t_part:
                        t_part = ratio
                        block = k
            if t_full == np.inf and t_part == np.inf:
                status = STATUS_INFEASIBLE
                farkas[best] = 1.0
                for k in range(n_work):
                    farkas[work[k]] = r[k]
                iters = max_iter + 1
                break
            if t_part < t_full:
                t = t_part
            else:
                t = t_full
            x += t * z
            for k in range(n_work):
                mult[k] += t * r[k]
            t_acc += t
            if t_part < t_full:
                # drop the blocking row and keep going on the same violated row
                in_work[work[block]] = False
                for k in range(block, n_work - 1):
                    work[k] = work[k + 1]
                    mult[k] = mult[k + 1]
                n_work -= 1
            else:
                work[n_work] = best
                mult[n_work] = t_acc
                in_work[best] = True
                n_work += 1
                added = True
            if iters <= max_iter:
                obj_trace[iters] = 0.5 * x @ (H @ x) + f @ x
        if status == STATUS_INFEASIBLE:
            break

    if status == STATUS_ITER_LIMIT:
        # the cap may coincide with reaching the optimum
        x_scale = 1.0 + np.max(np.abs(x))
        clean = True
        for i in range(m):
            row = p + i
            if not in_work[row]:
                tol = 1e-13 * (1.0 + abs(cb[row]) + np.sum(np.abs(C[row])) * x_scale)
                if C[row] @ x - cb[row] > tol:
                    clean = False
                    break
        if clean:
            status = STATUS_OPTIMAL

    lam_in = np.zeros(m)
    nu_eq = np.zeros(p)
    for k in range(n_work):
        row = work[k]
        if row < p:
            nu_eq[row] = mult[k]
        else:
            lam_in[row - p] = mult[k]
    if iters > max_iter:
        iters = max_iter
    return x, lam_in, nu_eq, status, iters, farkas[p:].copy(), farkas[:p].copy(), obj_trace, in_work[p:].copy()


@maybe_njit
def _euler_rhs(pi, inv_diag, tau_b):
    w = pi * inv_diag
    return np.array([
        pi[1] * w[2] - pi[2] * w[1] + tau_b[0],
        pi[2] * w[0] - pi[0] * w[2] + tau_b[1],
        pi[0] * w[1] - pi[1] * w[0] + tau_b[2],
    ])


@maybe_njit
def rigid_body_step(r, v, R, omega, inertia_body, mass, forces, anchors, stance, ext_moment, dt, g):
    """One step of the single rigid body carrying the payload.

    Translation is semi-implicit Euler. Rotation advances the body-frame
    angular momentum with RK4 on Euler's equations (torque held over the step),
    so the gyroscopic term is kept and free-body energy is conserved to high
    order; the attitude is then rotated by the step-averaged body rate.
    ``inertia_body`` must be diagonal.
    """
    F = np.zeros(3)
    tau = ext_moment.copy()
    for i in range(forces.shape[0]):
        if stance[i]:
            F += forces[i]
            arm = anchors[i] - r
            tau[0] += arm[1] * forces[i, 2] - arm[2] * forces[i, 1]
            tau[1] += arm[2] * forces[i, 0] - arm[0] * forces[i, 2]
            tau[2] += arm[0] * forces[i, 1] - arm[1] * forces[i, 0]
    acc = F / mass
    acc[2] -= g
    v_new = v + dt * acc
    r_new = r + dt * v_new

    inv_diag = np.array([1.0 / inertia_body[0, 0], 1.0 / inertia_body[1, 1], 1.0 / inertia_body[2, 2]])
    tau_b = R.T @ tau
    w_b = R.T @ omega
    pi = np.array([inertia_body[0, 0] * w_b[0], inertia_body[1, 1] * w_b[1], inertia_body[2, 2] * w_b[2]])
    k1 = _euler_rhs(pi, inv_diag, tau_b)
    k2 = _euler_rhs(pi + 0.5 * dt * k1, inv_diag, tau_b)
    k3 = _euler_rhs(pi + 0.5 * dt * k2, inv_diag, tau_b)
    k4 = _euler_rhs(pi + dt * k3, inv_diag, tau_b)
    pi_new = pi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    # Simpson average of the body rate over the step
    pi_mid = pi + 0.5 * dt * k2
    w_avg = (pi + 4.0 * pi_mid + pi_new) * inv_diag / 6.0

    W = np.zeros((3, 3))
    W[0, 1] = -w_avg[2] * dt
    W[0, 2] = w_avg[1] * dt
    W[1, 0] = w_avg[2] * dt
    W[1, 2] = -w_avg[0] * dt
    W[2, 0] = -w_avg[1] * dt
    W[2, 1] = w_avg[0] * dt
    th = np.sqrt(w_avg @ w_avg) * dt
    if th < 1e-8:
        E = np.eye(3) + W + 0.5 * (W @ W)
    else:
        E = np.eye(3) + (np.sin(th) / th) * W + ((1.0 - np.cos(th)) / (th * th)) * (W @ W)
    R_new = R @ E
    omega_new = R_new @ (pi_new * inv_diag)
    return r_new, v_new, R_new, omega_new, acc
