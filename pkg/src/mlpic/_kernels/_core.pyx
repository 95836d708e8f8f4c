# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled SMC sweeps for the built-in model families.

Mirrors mlpic._kernels.pure op for op: same pre-drawn randomness, same
update expressions (compiled with -ffp-contract=off so no fused
multiply-adds sneak in), same inverse-CDF resampling on the sequential
cumulative sum. The only numerical divergence from the pure backend is the
scalar libm exp/log versus numpy's vectorized ones (~1 ulp) and the
sequential (not pairwise) weight-sum used for the per-step means.
"""

import numpy as np

from libc.math cimport exp, log, isfinite

from ..errors import AllZeroWeights, NonFiniteState

# failure flags communicated out of nogil blocks
cdef enum:
    OK = 0
    NONFINITE_STATE = 1
    BAD_WEIGHTS = 2
    ZERO_WEIGHTS = 3


cdef inline Py_ssize_t _upper_bound(double* a, Py_ssize_t n, double v) nogil:
    # first index with a[idx] > v (numpy searchsorted side='right'), i.e. the
    # count of elements <= v; branchless so random probes don't stall on
    # mispredicts.
    cdef Py_ssize_t base = 0, size = n, half
    while size > 1:
        half = size >> 1
        base += half * <Py_ssize_t> (a[base + half - 1] <= v)
        size -= half
    return base + <Py_ssize_t> (a[base] <= v)


cdef inline Py_ssize_t _pick(double* cum, Py_ssize_t n, double u) nogil:
    cdef Py_ssize_t idx = _upper_bound(cum, n, u * cum[n - 1])
    if idx > n - 1:
        idx = n - 1
    return idx


cdef inline int _resample_indices(double* w, double* cum, Py_ssize_t n,
                                  const double* u_row, int scheme,
                                  Py_ssize_t* out) nogil:
    cdef Py_ssize_t i
    cdef double v
    cum[0] = w[0]
    for i in range(1, n):
        cum[i] = cum[i - 1] + w[i]
    if not isfinite(cum[n - 1]):
        return BAD_WEIGHTS
    if not cum[n - 1] > 0.0:
        return ZERO_WEIGHTS
    if scheme == 0:  # multinomial
        for i in range(n):
            out[i] = _pick(cum, n, u_row[i])
    else:  # systematic: one uniform, stratified inversion
        for i in range(n):
            v = ((<double> i + u_row[0]) / <double> n) * cum[n - 1]
            out[i] = _upper_bound(cum, n, v)
            if out[i] > n - 1:
                out[i] = n - 1
    return OK


cdef inline int _weight_stats(double* w, double* cum, Py_ssize_t n, double* log_mean) nogil:
    cdef Py_ssize_t i
    cum[0] = w[0]
    for i in range(1, n):
        cum[i] = cum[i - 1] + w[i]
    if not isfinite(cum[n - 1]):
        return BAD_WEIGHTS
    if not cum[n - 1] > 0.0:
        return ZERO_WEIGHTS
    log_mean[0] = log(cum[n - 1] / <double> n)
    return OK


def _upper_bound_probe(double[::1] a, double v):
    """Test hook: compiled upper bound vs numpy searchsorted side='right'."""
    return _upper_bound(&a[0], a.shape[0], v)


cdef _raise(int status, str where):
    if status == NONFINITE_STATE:
        raise NonFiniteState(f"particle state became non-finite in {where}")
    if status == BAD_WEIGHTS:
        raise NonFiniteState(f"particle potentials overflowed (non-finite weight) in {where}")
    if status == ZERO_WEIGHTS:
        raise AllZeroWeights(f"all particle weights are zero in {where}")


# ---------------------------------------------------------------------------
# LQG (scalar state): f(x) = A x, g = 1, ell = Q x^2, phi = F x^2
# ---------------------------------------------------------------------------


def lqg_smc(double[:, :, ::1] normals, double[:, ::1] uniforms,
            double x0, double A, double Q, double F, double gamma, double h,
            int scheme,
            double[:, ::1] traced_states, double[:, ::1] traced_incr,
            double[::1] log_means):
    cdef Py_ssize_t steps = normals.shape[0]
    cdef Py_ssize_t n_p = normals.shape[1]
    cdef double sqrt_h = np.sqrt(h)
    cdef double c1 = -(h / gamma)

    states_arr = np.empty((steps, n_p))
    incr_arr = np.empty((steps, n_p))
    anc_arr = np.empty((steps - 1 if steps > 1 else 0, n_p), dtype=np.intp)
    par_arr = np.empty(n_p, dtype=np.intp)
    w_arr = np.empty(n_p)
    cum_arr = np.empty(n_p)

    cdef double[:, ::1] states = states_arr
    cdef double[:, ::1] incr = incr_arr
    cdef Py_ssize_t[:, ::1] anc = anc_arr
    cdef Py_ssize_t[::1] parents = par_arr
    cdef double[::1] w = w_arr
    cdef double[::1] cum = cum_arr

    cdef Py_ssize_t k, i, idx, pick = 0
    cdef double zp, z, wi, lm
    cdef int status = OK, first = 1

    with nogil:
        for k in range(1, steps + 1):
            for i in range(n_p):
                if first:
                    zp = x0
                else:
                    zp = states[k - 2, parents[i]]
                wi = normals[k - 1, i, 0] * sqrt_h
                incr[k - 1, i] = wi
                z = zp + (A * zp) * h + (1.0 * wi)
                if not isfinite(z):
                    status = NONFINITE_STATE
                    break
                states[k - 1, i] = z
                if k < steps:
                    w[i] = exp(c1 * (Q * (z * z)))
                else:
                    w[i] = exp((-(F * (z * z))) / gamma)
            if status != OK:
                break
            status = _weight_stats(&w[0], &cum[0], n_p, &lm)
            if status != OK:
                break
            log_means[k - 1] = lm
            if k < steps:
                status = _resample_indices(&w[0], &cum[0], n_p, &uniforms[k - 1, 0],
                                           scheme, &parents[0])
                if status != OK:
                    break
                for i in range(n_p):
                    anc[k - 1, i] = parents[i]
                first = 0
            else:
                pick = _pick(&cum[0], n_p, uniforms[k - 1, 0])

        if status == OK:
            traced_states[0, 0] = x0
            idx = pick
            for k in range(steps, 0, -1):
                traced_states[k, 0] = states[k - 1, idx]
                traced_incr[k - 1, 0] = incr[k - 1, idx]
                if k > 1:
                    idx = anc[k - 2, idx]
    _raise(status, "lqg_smc")


def lqg_coupled_smc(double[:, :, ::1] normals, double[:, ::1] uniforms,
                    double x0, double A, double Q, double F, double gamma,
                    double h_f, double h_c, int scheme,
                    double[:, ::1] f_states, double[:, ::1] f_incr,
                    double[:, ::1] c_states, double[:, ::1] c_incr,
                    double[::1] odd_log_means, double[::1] even_log_means):
    cdef Py_ssize_t steps = normals.shape[0]
    cdef Py_ssize_t half = steps // 2
    cdef Py_ssize_t n_p = normals.shape[1]
    cdef double sqrt_h = np.sqrt(h_f)
    cdef double c1f = -(h_f / gamma)
    cdef double c1c = -(h_c / gamma)

    sf_arr = np.empty((steps, n_p))
    sc_arr = np.empty((half, n_p))
    incr_arr = np.empty((steps, n_p))
    anc_arr = np.empty((half - 1 if half > 1 else 0, n_p), dtype=np.intp)
    par_arr = np.empty(n_p, dtype=np.intp)
    wf_arr = np.empty(n_p)
    wc_arr = np.empty(n_p)
    cum_arr = np.empty(n_p)

    cdef double[:, ::1] sf = sf_arr
    cdef double[:, ::1] sc = sc_arr
    cdef double[:, ::1] incr = incr_arr
    cdef Py_ssize_t[:, ::1] anc = anc_arr
    cdef Py_ssize_t[::1] parents = par_arr
    cdef double[::1] w = wf_arr
    cdef double[::1] wc = wc_arr
    cdef double[::1] cum = cum_arr

    cdef Py_ssize_t k, i, n_c, idx, pick = 0
    cdef double zp, z, zc, wi, ws, lm, pf, pc
    cdef int status = OK, first = 1

    with nogil:
        for k in range(1, steps + 1):
            if k % 2 == 1:
                for i in range(n_p):
                    if first:
                        zp = x0
                    else:
                        zp = sf[k - 2, parents[i]]
                    wi = normals[k - 1, i, 0] * sqrt_h
                    incr[k - 1, i] = wi
                    z = zp + (A * zp) * h_f + (1.0 * wi)
                    if not isfinite(z):
                        status = NONFINITE_STATE
                        break
                    sf[k - 1, i] = z
                    w[i] = exp(c1f * (Q * (z * z))) + 1.0
                if status != OK:
                    break
                status = _weight_stats(&w[0], &cum[0], n_p, &lm)
                if status != OK:
                    break
                odd_log_means[k // 2] = lm
            else:
                n_c = k // 2
                for i in range(n_p):
                    wi = normals[k - 1, i, 0] * sqrt_h
                    incr[k - 1, i] = wi
                    zp = sf[k - 2, i]
                    z = zp + (A * zp) * h_f + (1.0 * wi)
                    ws = incr[k - 2, i] + incr[k - 1, i]
                    if first:
                        zp = x0
                    else:
                        zp = sc[n_c - 2, parents[i]]
                    zc = zp + (A * zp) * h_c + (1.0 * ws)
                    if not isfinite(z) or not isfinite(zc):
                        status = NONFINITE_STATE
                        break
                    sf[k - 1, i] = z
                    sc[n_c - 1, i] = zc
                    if k < steps:
                        pf = exp(c1f * (Q * (z * z)))
                        pc = exp(c1c * (Q * (zc * zc)))
                    else:
                        pf = exp((-(F * (z * z))) / gamma)
                        pc = exp((-(F * (zc * zc))) / gamma)
                    w[i] = pf if pf > pc else pc
                if status != OK:
                    break
                status = _weight_stats(&w[0], &cum[0], n_p, &lm)
                if status != OK:
                    break
                even_log_means[n_c - 1] = lm
                if k < steps:
                    status = _resample_indices(&w[0], &cum[0], n_p, &uniforms[n_c - 1, 0],
                                               scheme, &parents[0])
                    if status != OK:
                        break
                    for i in range(n_p):
                        anc[n_c - 1, i] = parents[i]
                    first = 0
                else:
                    pick = _pick(&cum[0], n_p, uniforms[n_c - 1, 0])

        if status == OK:
            f_states[0, 0] = x0
            c_states[0, 0] = x0
            idx = pick
            for n_c in range(half, 0, -1):
                k = 2 * n_c
                f_states[k, 0] = sf[k - 1, idx]
                f_states[k - 1, 0] = sf[k - 2, idx]
                f_incr[k - 1, 0] = incr[k - 1, idx]
                f_incr[k - 2, 0] = incr[k - 2, idx]
                c_states[n_c, 0] = sc[n_c - 1, idx]
                c_incr[n_c - 1, 0] = f_incr[k - 2, 0] + f_incr[k - 1, 0]
                if n_c > 1:
                    idx = anc[n_c - 2, idx]
    _raise(status, "lqg_coupled_smc")


# ---------------------------------------------------------------------------
# SIVR (4 states, scalar noise)
# ---------------------------------------------------------------------------


cdef inline int _sivr_step(double* zp, double wi, double h,
                           double beta, double kappa, double lam, double eps,
                           double theta, double rho, double sigma,
                           double cS, double cI, double cV, double* out) nogil:
    cdef double S = zp[0], I = zp[1], V = zp[2], R = zp[3]
    out[0] = S + (beta - beta * S - kappa * I * S + theta * V) * h + (sigma * (cS * S)) * wi
    out[1] = I + (kappa * S * I + eps * kappa * V * I - lam * I - beta * I) * h + (sigma * (cI * S)) * wi
    out[2] = V + (-eps * kappa * I * V - beta * V - theta * V) * h + (sigma * (cV * S)) * wi
    out[3] = R + (lam * I - beta * R) * h + 0.0 * wi
    if not (isfinite(out[0]) and isfinite(out[1]) and isfinite(out[2]) and isfinite(out[3])):
        return NONFINITE_STATE
    return OK


def sivr_smc(double[:, :, ::1] normals, double[:, ::1] uniforms,
             double[::1] x0,
             double beta, double kappa, double lam, double eps, double theta,
             double rho, double sigma, double cS, double cI, double cV,
             double q, double gamma, double h, int scheme,
             double[:, ::1] traced_states, double[:, ::1] traced_incr,
             double[::1] log_means):
    cdef Py_ssize_t steps = normals.shape[0]
    cdef Py_ssize_t n_p = normals.shape[1]
    cdef double sqrt_h = np.sqrt(h)
    cdef double c1 = -(h / gamma)

    states_arr = np.empty((steps, n_p, 4))
    incr_arr = np.empty((steps, n_p))
    anc_arr = np.empty((steps - 1 if steps > 1 else 0, n_p), dtype=np.intp)
    par_arr = np.empty(n_p, dtype=np.intp)
    w_arr = np.empty(n_p)
    cum_arr = np.empty(n_p)

    cdef double[:, :, ::1] states = states_arr
    cdef double[:, ::1] incr = incr_arr
    cdef Py_ssize_t[:, ::1] anc = anc_arr
    cdef Py_ssize_t[::1] parents = par_arr
    cdef double[::1] w = w_arr
    cdef double[::1] cum = cum_arr

    cdef Py_ssize_t k, i, j, idx, pick = 0
    cdef double wi, lm
    cdef double znew[4]
    cdef double zp[4]
    cdef int status = OK, first = 1

    with nogil:
        for k in range(1, steps + 1):
            for i in range(n_p):
                if first:
                    for j in range(4):
                        zp[j] = x0[j]
                else:
                    for j in range(4):
                        zp[j] = states[k - 2, parents[i], j]
                wi = normals[k - 1, i, 0] * sqrt_h
                incr[k - 1, i] = wi
                status = _sivr_step(zp, wi, h, beta, kappa, lam, eps, theta, rho,
                                    sigma, cS, cI, cV, znew)
                if status != OK:
                    break
                for j in range(4):
                    states[k - 1, i, j] = znew[j]
                if k < steps:
                    w[i] = exp(c1 * (q * znew[1]))
                else:
                    w[i] = exp((-(znew[1] * znew[1])) / gamma)
            if status != OK:
                break
            status = _weight_stats(&w[0], &cum[0], n_p, &lm)
            if status != OK:
                break
            log_means[k - 1] = lm
            if k < steps:
                status = _resample_indices(&w[0], &cum[0], n_p, &uniforms[k - 1, 0],
                                           scheme, &parents[0])
                if status != OK:
                    break
                for i in range(n_p):
                    anc[k - 1, i] = parents[i]
                first = 0
            else:
                pick = _pick(&cum[0], n_p, uniforms[k - 1, 0])

        if status == OK:
            for j in range(4):
                traced_states[0, j] = x0[j]
            idx = pick
            for k in range(steps, 0, -1):
                for j in range(4):
                    traced_states[k, j] = states[k - 1, idx, j]
                traced_incr[k - 1, 0] = incr[k - 1, idx]
                if k > 1:
                    idx = anc[k - 2, idx]
    _raise(status, "sivr_smc")


def sivr_coupled_smc(double[:, :, ::1] normals, double[:, ::1] uniforms,
                     double[::1] x0,
                     double beta, double kappa, double lam, double eps, double theta,
                     double rho, double sigma, double cS, double cI, double cV,
                     double q, double gamma, double h_f, double h_c, int scheme,
                     double[:, ::1] f_states, double[:, ::1] f_incr,
                     double[:, ::1] c_states, double[:, ::1] c_incr,
                     double[::1] odd_log_means, double[::1] even_log_means):
    cdef Py_ssize_t steps = normals.shape[0]
    cdef Py_ssize_t half = steps // 2
    cdef Py_ssize_t n_p = normals.shape[1]
    cdef double sqrt_h = np.sqrt(h_f)
    cdef double c1f = -(h_f / gamma)
    cdef double c1c = -(h_c / gamma)

    sf_arr = np.empty((steps, n_p, 4))
    sc_arr = np.empty((half, n_p, 4))
    incr_arr = np.empty((steps, n_p))
    anc_arr = np.empty((half - 1 if half > 1 else 0, n_p), dtype=np.intp)
    par_arr = np.empty(n_p, dtype=np.intp)
    w_arr = np.empty(n_p)
    cum_arr = np.empty(n_p)

    cdef double[:, :, ::1] sf = sf_arr
    cdef double[:, :, ::1] sc = sc_arr
    cdef double[:, ::1] incr = incr_arr
    cdef Py_ssize_t[:, ::1] anc = anc_arr
    cdef Py_ssize_t[::1] parents = par_arr
    cdef double[::1] w = w_arr
    cdef double[::1] cum = cum_arr

    cdef Py_ssize_t k, i, j, n_c, idx, pick = 0
    cdef double wi, ws, lm, pf, pc
    cdef double zp[4]
    cdef double znew[4]
    cdef double zcnew[4]
    cdef int status = OK, first = 1

    with nogil:
        for k in range(1, steps + 1):
            if k % 2 == 1:
                for i in range(n_p):
                    if first:
                        for j in range(4):
                            zp[j] = x0[j]
                    else:
                        for j in range(4):
                            zp[j] = sf[k - 2, parents[i], j]
                    wi = normals[k - 1, i, 0] * sqrt_h
                    incr[k - 1, i] = wi
                    status = _sivr_step(zp, wi, h_f, beta, kappa, lam, eps, theta,
                                        rho, sigma, cS, cI, cV, znew)
                    if status != OK:
                        break
                    for j in range(4):
                        sf[k - 1, i, j] = znew[j]
                    w[i] = exp(c1f * (q * znew[1])) + 1.0
                if status != OK:
                    break
                status = _weight_stats(&w[0], &cum[0], n_p, &lm)
                if status != OK:
                    break
                odd_log_means[k // 2] = lm
            else:
                n_c = k // 2
                for i in range(n_p):
                    wi = normals[k - 1, i, 0] * sqrt_h
                    incr[k - 1, i] = wi
                    for j in range(4):
                        zp[j] = sf[k - 2, i, j]
                    status = _sivr_step(zp, wi, h_f, beta, kappa, lam, eps, theta,
                                        rho, sigma, cS, cI, cV, znew)
                    if status != OK:
                        break
                    ws = incr[k - 2, i] + incr[k - 1, i]
                    if first:
                        for j in range(4):
                            zp[j] = x0[j]
                    else:
                        for j in range(4):
                            zp[j] = sc[n_c - 2, parents[i], j]
                    status = _sivr_step(zp, ws, h_c, beta, kappa, lam, eps, theta,
                                        rho, sigma, cS, cI, cV, zcnew)
                    if status != OK:
                        break
                    for j in range(4):
                        sf[k - 1, i, j] = znew[j]
                        sc[n_c - 1, i, j] = zcnew[j]
                    if k < steps:
                        pf = exp(c1f * (q * znew[1]))
                        pc = exp(c1c * (q * zcnew[1]))
                    else:
                        pf = exp((-(znew[1] * znew[1])) / gamma)
                        pc = exp((-(zcnew[1] * zcnew[1])) / gamma)
                    w[i] = pf if pf > pc else pc
                if status != OK:
                    break
                status = _weight_stats(&w[0], &cum[0], n_p, &lm)
                if status != OK:
                    break
                even_log_means[n_c - 1] = lm
                if k < steps:
                    status = _resample_indices(&w[0], &cum[0], n_p, &uniforms[n_c - 1, 0],
                                               scheme, &parents[0])
                    if status != OK:
                        break
                    for i in range(n_p):
                        anc[n_c - 1, i] = parents[i]
                    first = 0
                else:
                    pick = _pick(&cum[0], n_p, uniforms[n_c - 1, 0])

        if status == OK:
            for j in range(4):
                f_states[0, j] = x0[j]
                c_states[0, j] = x0[j]
            idx = pick
            for n_c in range(half, 0, -1):
                k = 2 * n_c
                for j in range(4):
                    f_states[k, j] = sf[k - 1, idx, j]
                    f_states[k - 1, j] = sf[k - 2, idx, j]
                    c_states[n_c, j] = sc[n_c - 1, idx, j]
                f_incr[k - 1, 0] = incr[k - 1, idx]
                f_incr[k - 2, 0] = incr[k - 2, idx]
                c_incr[n_c - 1, 0] = f_incr[k - 2, 0] + f_incr[k - 1, 0]
                if n_c > 1:
                    idx = anc[n_c - 2, idx]
    _raise(status, "sivr_coupled_smc")
