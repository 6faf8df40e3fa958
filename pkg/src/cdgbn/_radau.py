"""Three-stage Radau IIA (order 5) with adaptive steps, compiled by numba.

The algorithm follows Hairer & Wanner, *Solving ODEs II*, sec. IV.8: the
collocation system is decoupled through the eigendecomposition of the
Butcher matrix into one real and one complex linear system, solved by
simplified Newton iterations; the local error comes from the embedded
third-order formula and the step size from Gustafsson's predictive
controller.

Every right-hand side has the signature ``fun(t, y, drift, djac, args)``.
``drift``/``djac`` are the jitted model kernels a moment system needs and
``args`` is whatever the system consumes. The same function body runs in
nopython mode for jitted systems and through ``radau_solve.py_func`` for
plain Python callables, so the two paths cannot drift apart.
"""

import numpy as np
from numba import njit

STATUS_CONVERGED = 0
STATUS_BUDGET = 1
STATUS_NONFINITE = 2

EPS = np.finfo(float).eps
SQRT_EPS = np.sqrt(EPS)

S6 = 6.0**0.5
C = np.array([(4.0 - S6) / 10.0, (4.0 + S6) / 10.0, 1.0])
E = np.array([-13.0 - 7.0 * S6, -13.0 + 7.0 * S6, -1.0]) / 3.0

MU_REAL = 3.0 + 3.0 ** (2.0 / 3.0) - 3.0 ** (1.0 / 3.0)
MU_COMPLEX = (3.0 + 0.5 * (3.0 ** (1.0 / 3.0) - 3.0 ** (2.0 / 3.0))) - 0.5j * (
    3.0 ** (5.0 / 6.0) + 3.0 ** (7.0 / 6.0)
)

# A = T diag(MU) T^-1 for the Butcher matrix A.
T = np.array(
    [
        [0.09443876248897524, -0.14125529502095421, 0.03002919410514742],
        [0.25021312296533332, 0.20412935229379994, -0.38294211275726192],
        [1.0, 1.0, 0.0],
    ]
)
TI = np.array(
    [
        [4.17871859155190428, 0.32768282076106237, 0.52337644549944951],
        [-4.17871859155190428, -0.32768282076106237, 0.47662355450055044],
        [0.50287263494578682, -2.57192694985560522, 0.59603920482822492],
    ]
)
TI_REAL = TI[0].copy()
TI_COMPLEX = TI[1] + 1j * TI[2]

# Collocation polynomial coefficients, used to seed the next Newton solve.
P_DENSE = np.array(
    [
        [13.0 / 3.0 + 7.0 * S6 / 3.0, -23.0 / 3.0 - 22.0 * S6 / 3.0, 10.0 / 3.0 + 5.0 * S6],
        [13.0 / 3.0 - 7.0 * S6 / 3.0, -23.0 / 3.0 + 22.0 * S6 / 3.0, 10.0 / 3.0 - 5.0 * S6],
        [1.0 / 3.0, -8.0 / 3.0, 10.0 / 3.0],
    ]
)

MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


@njit(cache=True)
def lu_factor(A):
    """In-place LU with partial pivoting. Returns ``(LU, piv, ok)``."""
    n = A.shape[0]
    LU = A.copy()
    piv = np.empty(n, dtype=np.int64)
    ok = True
    for k in range(n):
        p = k
        amax = abs(LU[k, k])
        for i in range(k + 1, n):
            a = abs(LU[i, k])
            if a > amax:
                amax = a
                p = i
        piv[k] = p
        if p != k:
            for j in range(n):
                tmp = LU[k, j]
                LU[k, j] = LU[p, j]
                LU[p, j] = tmp
        d = LU[k, k]
        if d == 0.0 or not np.isfinite(amax):
            ok = False
            continue
        for i in range(k + 1, n):
            LU[i, k] /= d
            lik = LU[i, k]
            if lik != 0.0:
                for j in range(k + 1, n):
                    LU[i, j] -= lik * LU[k, j]
    return LU, piv, ok


@njit(cache=True)
def lu_solve(LU, piv, b):
    n = LU.shape[0]
    x = b.copy()
    for k in range(n):
        p = piv[k]
        if p != k:
            tmp = x[k]
            x[k] = x[p]
            x[p] = tmp
    for i in range(n):
        s = x[i]
        for j in range(i):
            s -= LU[i, j] * x[j]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, n):
            s -= LU[i, j] * x[j]
        x[i] = s / LU[i, i]
    return x


@njit(cache=True)
def rms_norm(x):
    s = 0.0
    for v in x.ravel():
        s += v * v
    return np.sqrt(s / x.size)


@njit(cache=True)
def all_finite(x):
    for v in x.ravel():
        if not np.isfinite(v):
            return False
    return True


@njit(cache=True)
def _predict_factor(h_abs, h_abs_old, error_norm, error_norm_old):
    if error_norm == 0.0:
        return MAX_FACTOR
    if error_norm_old < 0.0 or h_abs_old < 0.0:
        multiplier = 1.0
    else:
        multiplier = h_abs / h_abs_old * (error_norm_old / error_norm) ** 0.25
    return min(1.0, multiplier) * error_norm**-0.25


@njit(cache=True)
def _symmetrize_block(y, off, m):
    for i in range(m):
        for j in range(i + 1, m):
            a = 0.5 * (y[off + i * m + j] + y[off + j * m + i])
            y[off + i * m + j] = a
            y[off + j * m + i] = a


@njit
def no_jacobian(t, y, drift, djac, args):
    return np.zeros((y.shape[0], y.shape[0]))


# Not cached on disk: the overload keys embed the types of the function
# arguments, and numba cannot re-pickle those once another process wrote them.
@njit
def radau_solve(
    fun,
    jac,
    has_jac,
    drift,
    djac,
    args,
    y0,
    t0,
    t1,
    rtol,
    atol,
    max_step,
    max_evals,
    newton_tol,
    newton_maxiter,
    sym_off,
    sym_n,
):
    """Integrate ``y' = fun(t, y, ...)`` from ``t0`` to ``t1``.

    Returns ``(y, nfev, n_accepted, n_rejected, status)``. Calls to ``fun``
    stay in this body (no helper receives ``fun``) so ``.py_func`` works
    with ordinary Python callables. When ``sym_n > 0`` the trailing
    ``sym_n x sym_n`` block starting at ``sym_off`` is re-symmetrized after
    every accepted step.
    """
    n = y0.shape[0]
    y = y0.astype(np.float64)
    t = t0
    nfev = 0
    n_acc = 0
    n_rej = 0
    status = STATUS_CONVERGED
    tol = max(newton_tol, 10.0 * EPS / rtol)
    eye = np.eye(n)

    f = fun(t, y, drift, djac, args)
    nfev += 1
    if not all_finite(f):
        return y, nfev, n_acc, n_rej, STATUS_NONFINITE

    # Initial step (Hairer's heuristic, for the order-3 error estimator).
    scale = atol + np.abs(y) * rtol
    d0 = rms_norm(y / scale)
    d1 = rms_norm(f / scale)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, t1 - t0)
    y1 = y + h0 * f
    f1 = fun(t + h0, y1, drift, djac, args)
    nfev += 1
    d2 = rms_norm((f1 - f) / scale) / h0
    if not np.isfinite(d2):
        d2 = np.inf
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.25
    h_abs = min(100.0 * h0, h1, max_step, t1 - t0)

    # Jacobian of the right-hand side.
    J = np.empty((n, n))
    if has_jac:
        J = jac(t, y, drift, djac, args)
    else:
        ymax = 1.0
        for v in y:
            ymax = max(ymax, abs(v))
        for j in range(n):
            step = SQRT_EPS * max(abs(y[j]), 1e-6 * ymax)
            yp = y.copy()
            yp[j] += step
            step = yp[j] - y[j]
            fj = fun(t, yp, drift, djac, args)
            nfev += 1
            for i in range(n):
                J[i, j] = (fj[i] - f[i]) / step
    current_jac = True
    lu_valid = False
    LU_r = np.eye(n)
    piv_r = np.zeros(n, dtype=np.int64)
    LU_c = np.eye(n).astype(np.complex128)
    piv_c = np.zeros(n, dtype=np.int64)

    h_abs_old = -1.0
    error_norm_old = -1.0
    have_dense = False
    y_old = y.copy()
    t_old = t
    h_prev = 1.0
    Q = np.zeros((n, 3))
    Z = np.zeros((3, n))
    W = np.zeros((3, n))
    dW = np.zeros((3, n))
    F = np.zeros((3, n))
    f_real = np.zeros(n)
    f_cplx = np.zeros(n, dtype=np.complex128)
    last_nonfinite = False

    while t < t1:
        if nfev > max_evals:
            status = STATUS_BUDGET
            break
        min_step = 10.0 * EPS * max(abs(t), 1e-290)
        if h_abs > max_step:
            h_abs = max_step
            h_abs_old = -1.0
            error_norm_old = -1.0
        elif h_abs < min_step:
            h_abs = min_step
            h_abs_old = -1.0
            error_norm_old = -1.0

        rejected = False
        accepted = False
        failed = False
        n_iter = 0
        rate = -1.0
        error_norm = 0.0
        h = h_abs
        t_new = t
        while not accepted:
            if h_abs < min_step or nfev > max_evals:
                failed = True
                break
            h = h_abs
            t_new = t + h
            if t_new > t1 or t1 - t_new < 10.0 * EPS * max(abs(t1), 1.0):
                t_new = t1
            h = t_new - t
            h_abs = h

            if have_dense:
                for i in range(3):
                    x = (t + h * C[i] - t_old) / h_prev
                    for k in range(n):
                        Z[i, k] = y_old[k] + Q[k, 0] * x + Q[k, 1] * x * x + Q[k, 2] * x * x * x - y[k]
            else:
                Z[:, :] = 0.0
            scale = atol + np.abs(y) * rtol

            converged = False
            stage_nonfinite = False
            while not converged:
                if not lu_valid:
                    LU_r, piv_r, ok_r = lu_factor(MU_REAL / h * eye - J)
                    LU_c, piv_c, ok_c = lu_factor((MU_COMPLEX / h) * eye.astype(np.complex128) - J.astype(np.complex128))
                    lu_valid = True
                    if not (ok_r and ok_c):
                        lu_valid = False
                        break
                # Simplified Newton on the transformed collocation system.
                M_r = MU_REAL / h
                M_c = MU_COMPLEX / h
                Zk = Z.copy()
                for i in range(3):
                    for j in range(n):
                        W[i, j] = TI[i, 0] * Z[0, j] + TI[i, 1] * Z[1, j] + TI[i, 2] * Z[2, j]
                dW_norm_old = -1.0
                rate = -1.0
                for k in range(newton_maxiter):
                    for i in range(3):
                        F[i] = fun(t + C[i] * h, y + Zk[i], drift, djac, args)
                        nfev += 1
                    n_iter = k + 1
                    if not all_finite(F):
                        stage_nonfinite = True
                        break
                    for j in range(n):
                        f_real[j] = TI_REAL[0] * F[0, j] + TI_REAL[1] * F[1, j] + TI_REAL[2] * F[2, j] - M_r * W[0, j]
                        f_cplx[j] = (
                            TI_COMPLEX[0] * F[0, j]
                            + TI_COMPLEX[1] * F[1, j]
                            + TI_COMPLEX[2] * F[2, j]
                            - M_c * (W[1, j] + 1j * W[2, j])
                        )
                    dW_r = lu_solve(LU_r, piv_r, f_real)
                    dW_c = lu_solve(LU_c, piv_c, f_cplx)
                    for j in range(n):
                        dW[0, j] = dW_r[j]
                        dW[1, j] = dW_c[j].real
                        dW[2, j] = dW_c[j].imag
                    s = 0.0
                    for i in range(3):
                        for j in range(n):
                            v = dW[i, j] / scale[j]
                            s += v * v
                    dW_norm = np.sqrt(s / (3 * n))
                    if not np.isfinite(dW_norm):
                        stage_nonfinite = True
                        break
                    if dW_norm_old >= 0.0:
                        rate = dW_norm / dW_norm_old
                    if rate >= 0.0 and (
                        rate >= 1.0 or rate ** (newton_maxiter - k) / (1.0 - rate) * dW_norm > tol
                    ):
                        break
                    W += dW
                    for i in range(3):
                        for j in range(n):
                            Zk[i, j] = T[i, 0] * W[0, j] + T[i, 1] * W[1, j] + T[i, 2] * W[2, j]
                    if dW_norm == 0.0 or (rate >= 0.0 and rate / (1.0 - rate) * dW_norm < tol):
                        converged = True
                        break
                    dW_norm_old = dW_norm
                if converged:
                    Z = Zk
                    break
                if current_jac:
                    break
                if has_jac:
                    J = jac(t, y, drift, djac, args)
                else:
                    ymax = 1.0
                    for v in y:
                        ymax = max(ymax, abs(v))
                    for j in range(n):
                        step = SQRT_EPS * max(abs(y[j]), 1e-6 * ymax)
                        yp = y.copy()
                        yp[j] += step
                        step = yp[j] - y[j]
                        fj = fun(t, yp, drift, djac, args)
                        nfev += 1
                        for i in range(n):
                            J[i, j] = (fj[i] - f[i]) / step
                current_jac = True
                lu_valid = False

            if not converged:
                last_nonfinite = stage_nonfinite
                h_abs *= 0.5
                lu_valid = False
                continue

            y_new = y + Z[2]
            ZE = np.empty(n)
            for j in range(n):
                ZE[j] = (E[0] * Z[0, j] + E[1] * Z[1, j] + E[2] * Z[2, j]) / h
            error = lu_solve(LU_r, piv_r, f + ZE)
            scale = atol + np.maximum(np.abs(y), np.abs(y_new)) * rtol
            error_norm = rms_norm(error / scale)
            safety = 0.9 * (2 * newton_maxiter + 1) / (2 * newton_maxiter + n_iter)
            if rejected and error_norm > 1.0:
                fe = fun(t, y + error, drift, djac, args)
                nfev += 1
                error = lu_solve(LU_r, piv_r, fe + ZE)
                error_norm = rms_norm(error / scale)
            if not (np.isfinite(error_norm) and all_finite(y_new)):
                last_nonfinite = True
                h_abs *= MIN_FACTOR
                lu_valid = False
                rejected = True
                n_rej += 1
                continue
            if error_norm > 1.0:
                factor = _predict_factor(h_abs, h_abs_old, error_norm, error_norm_old)
                h_abs *= max(MIN_FACTOR, safety * factor)
                lu_valid = False
                rejected = True
                n_rej += 1
            else:
                accepted = True

        if failed:
            status = STATUS_NONFINITE if last_nonfinite else STATUS_BUDGET
            break

        safety = 0.9 * (2 * newton_maxiter + 1) / (2 * newton_maxiter + n_iter)
        recompute_jac = n_iter > 2 and rate > 1e-3
        factor = _predict_factor(h_abs, h_abs_old, error_norm, error_norm_old)
        factor = min(MAX_FACTOR, safety * factor)
        if not recompute_jac and factor < 1.2:
            factor = 1.0
        else:
            lu_valid = False

        y_new = y + Z[2]
        if sym_n > 0:
            _symmetrize_block(y_new, sym_off, sym_n)
        f_new = fun(t_new, y_new, drift, djac, args)
        nfev += 1
        if not all_finite(f_new):
            y = y_new
            t = t_new
            status = STATUS_NONFINITE
            break

        for k in range(n):
            for i in range(3):
                Q[k, i] = Z[0, k] * P_DENSE[0, i] + Z[1, k] * P_DENSE[1, i] + Z[2, k] * P_DENSE[2, i]
        y_old = y
        t_old = t
        h_prev = h
        have_dense = True

        h_abs_old = h_abs
        error_norm_old = error_norm
        h_abs = h_abs * factor
        t = t_new
        y = y_new
        f = f_new
        n_acc += 1
        last_nonfinite = False

        if recompute_jac:
            if has_jac:
                J = jac(t, y, drift, djac, args)
            else:
                ymax = 1.0
                for v in y:
                    ymax = max(ymax, abs(v))
                for j in range(n):
                    step = SQRT_EPS * max(abs(y[j]), 1e-6 * ymax)
                    yp = y.copy()
                    yp[j] += step
                    step = yp[j] - y[j]
                    fj = fun(t, yp, drift, djac, args)
                    nfev += 1
                    for i in range(n):
                        J[i, j] = (fj[i] - f[i]) / step
            current_jac = True
        else:
            current_jac = False

    return y, nfev, n_acc, n_rej, status
