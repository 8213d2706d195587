# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled PBD inner loop.  Mirrors _core_py.py operation for operation;
built with -ffp-contract=off so both backends are bit-identical."""

from libc.math cimport sqrt

BACKEND = "compiled"


def pbd_substep(
    double[:, ::1] x,
    double[:, ::1] v,
    double[::1] inv_mass,
    int[::1] ci,
    int[::1] cj,
    double[::1] rest,
    double[::1] stiffness,
    unsigned char[::1] one_sided,
    int[::1] fixed_idx,
    double[:, ::1] fixed_pos,
    double gx,
    double gy,
    double gz,
    double dt,
    int iters,
    double damping,
    double friction_mu,
):
    cdef int n = x.shape[0]
    cdef int m = ci.shape[0]
    cdef int k = fixed_idx.shape[0]
    cdef int i, j, c, a, it
    cdef double dx, dy, dz, d2, dist, viol, wi, wj, ws, s
    cdef double tx, ty, tn, budget, scale, keep
    cdef int status = 0

    cdef double[:, ::1] p = x.copy()
    cdef double[::1] pen_acc = inv_mass.copy()
    for i in range(n):
        pen_acc[i] = 0.0

    for i in range(n):
        if inv_mass[i] > 0.0:
            v[i, 0] = v[i, 0] + gx * dt
            v[i, 1] = v[i, 1] + gy * dt
            v[i, 2] = v[i, 2] + gz * dt
            p[i, 0] = x[i, 0] + v[i, 0] * dt
            p[i, 1] = x[i, 1] + v[i, 1] * dt
            p[i, 2] = x[i, 2] + v[i, 2] * dt
    for a in range(k):
        i = fixed_idx[a]
        p[i, 0] = fixed_pos[a, 0]
        p[i, 1] = fixed_pos[a, 1]
        p[i, 2] = fixed_pos[a, 2]

    for it in range(iters):
        for c in range(m):
            i = ci[c]
            j = cj[c]
            dx = p[i, 0] - p[j, 0]
            dy = p[i, 1] - p[j, 1]
            dz = p[i, 2] - p[j, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < 1e-24:
                continue
            dist = sqrt(d2)
            viol = dist - rest[c]
            if one_sided[c] != 0 and viol <= 0.0:
                continue
            wi = inv_mass[i]
            wj = inv_mass[j]
            ws = wi + wj
            if ws == 0.0:
                continue
            s = stiffness[c] * viol / (dist * ws)
            p[i, 0] = p[i, 0] - wi * s * dx
            p[i, 1] = p[i, 1] - wi * s * dy
            p[i, 2] = p[i, 2] - wi * s * dz
            p[j, 0] = p[j, 0] + wj * s * dx
            p[j, 1] = p[j, 1] + wj * s * dy
            p[j, 2] = p[j, 2] + wj * s * dz
        for i in range(n):
            if inv_mass[i] == 0.0:
                continue
            if p[i, 2] < 0.0:
                pen_acc[i] = pen_acc[i] + (0.0 - p[i, 2])
                p[i, 2] = 0.0
            if pen_acc[i] > 0.0:
                # Coulomb friction: remove up to mu * (normal correction) of
                # the tangential displacement accumulated this step
                tx = p[i, 0] - x[i, 0]
                ty = p[i, 1] - x[i, 1]
                tn = sqrt(tx * tx + ty * ty)
                budget = friction_mu * pen_acc[i]
                if tn > budget:
                    scale = (tn - budget) / tn
                    p[i, 0] = x[i, 0] + tx * scale
                    p[i, 1] = x[i, 1] + ty * scale
                elif tn > 0.0:
                    p[i, 0] = x[i, 0]
                    p[i, 1] = x[i, 1]

    keep = 1.0 - damping
    for i in range(n):
        if inv_mass[i] > 0.0:
            v[i, 0] = (p[i, 0] - x[i, 0]) / dt * keep
            v[i, 1] = (p[i, 1] - x[i, 1]) / dt * keep
            v[i, 2] = (p[i, 2] - x[i, 2]) / dt * keep
        else:
            v[i, 0] = 0.0
            v[i, 1] = 0.0
            v[i, 2] = 0.0
        x[i, 0] = p[i, 0]
        x[i, 1] = p[i, 1]
        x[i, 2] = p[i, 2]
        if not (
            x[i, 0] > -100.0
            and x[i, 0] < 100.0
            and x[i, 1] > -100.0
            and x[i, 1] < 100.0
            and x[i, 2] > -100.0
            and x[i, 2] < 100.0
        ):
            status = 1
    return status


def max_violation_ratio(
    double[:, ::1] x,
    int[::1] ci,
    int[::1] cj,
    double[::1] rest,
    unsigned char[::1] one_sided,
):
    cdef int c, i, j
    cdef double dx, dy, dz, dist, viol, ratio
    cdef double worst = 0.0
    for c in range(ci.shape[0]):
        i = ci[c]
        j = cj[c]
        dx = x[i, 0] - x[j, 0]
        dy = x[i, 1] - x[j, 1]
        dz = x[i, 2] - x[j, 2]
        dist = sqrt(dx * dx + dy * dy + dz * dz)
        viol = dist - rest[c]
        if one_sided[c] != 0:
            if viol < 0.0:
                viol = 0.0
        elif viol < 0.0:
            viol = -viol
        ratio = viol / rest[c]
        if ratio > worst:
            worst = ratio
    return worst
