"""Batch evaluation of every estimator over many count vectors.

The per-row double sums over kinds are the hot loop of Monte Carlo runs.
They run under numba when it is importable and ``PARTVAR_DISABLE_NUMBA``
is unset (or ``0``); otherwise a pure-numpy path computes the same sums.
Both paths fill the same accumulator table, and :func:`_finish` turns it
into estimator values with shared numpy code.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

NUMBA_DISABLED = os.environ.get("PARTVAR_DISABLE_NUMBA", "0") not in ("", "0")
BACKEND = "numba" if HAVE_NUMBA and not NUMBA_DISABLED else "numpy"

ESTIMATOR_NAMES = ("T1", "T2", "HT", "AD1", "AD2", "SYG", "HT_FINITE", "VARM", "RSD")

OK, EMPTY, DEGENERATE_C, DEGENERATE_VM, ZERO_AMOUNT, NO_BATCH = range(6)
ERROR_MESSAGES = {
    EMPTY: "empty sample (M_sample = 0)",
    DEGENERATE_C: "degenerate dependence parameter (C_ij >= 1)",
    DEGENERATE_VM: "degenerate mass variance (second-order Taylor undefined)",
    ZERO_AMOUNT: "zero sample amount (beta undefined)",
    NO_BATCH: "finite-batch HT needs M_batch > 0",
}

# accumulator columns
(A_M, A_A, A_TH, A_T1, A_VM, A_VA, A_CV, A_HT, A_AD1, A_VMW, A_VAW, A_CVW, A_SYG, A_YY) = range(14)
N_ACC = 14

CHUNK = 4096


def _weights(C_ht: np.ndarray):
    ok = bool(np.all(C_ht < 1.0))
    if not ok:
        z = np.zeros_like(C_ht)
        return z, z, False
    g = 1.0 / (1.0 - C_ht)
    return g, C_ht * g, True


def _accumulate_numpy(counts, m, c, C1, G2, H2, out):
    n = counts.astype(np.float64)
    y = m * c
    M = n @ m
    A = n @ y
    nonempty = M > 0
    th = np.where(nonempty, A / np.where(nonempty, M, 1.0), np.nan)
    r = m[None, :] * (c[None, :] - np.where(nonempty, th, 0.0)[:, None])
    g = np.diag(G2)
    nm, ny, nr = n * m, n * y, n * r

    def quad(mat, p, q):
        return np.einsum("bi,ij,bj->b", p, mat, q)

    out[:, A_M] = M
    out[:, A_A] = A
    out[:, A_TH] = th
    out[:, A_T1] = np.sum(n * r * r, axis=1) - quad(C1, nr, nr)
    out[:, A_VM] = np.sum(n * m * m, axis=1) - quad(C1, nm, nm)
    out[:, A_VA] = np.sum(n * y * y, axis=1) - quad(C1, ny, ny)
    out[:, A_CV] = np.sum(n * y * m, axis=1) - quad(C1, ny, nm)
    out[:, A_HT] = np.sum(n * g * y * y, axis=1) - quad(H2, ny, ny)
    out[:, A_AD1] = np.sum(n * g * r * r, axis=1) - quad(H2, nr, nr)
    out[:, A_VMW] = np.sum(n * g * m * m, axis=1) - quad(H2, nm, nm)
    out[:, A_VAW] = np.sum(n * g * y * y, axis=1) - quad(H2, ny, ny)
    out[:, A_CVW] = np.sum(n * g * y * m, axis=1) - quad(H2, ny, nm)
    d = np.subtract.outer(y, y)
    out[:, A_SYG] = quad(d * d * H2, n, n)
    out[:, A_YY] = np.sum(n * y * y, axis=1)


if HAVE_NUMBA:

    @numba.njit(inline="always")
    def _nadd(s, comp, x):
        # Neumaier compensated addition
        t = s + x
        if abs(s) >= abs(x):
            comp += (s - t) + x
        else:
            comp += (x - t) + s
        return t, comp

    @numba.njit(cache=True, nogil=True)
    def _accumulate_numba(counts, m, c, C1, G2, H2, out):
        R, T = counts.shape
        y = m * c
        r = np.empty(T)
        n = np.empty(T)
        acc = np.empty(N_ACC)
        cmp = np.empty(N_ACC)
        row = np.empty(N_ACC)
        for b in range(R):
            acc[:] = 0.0
            cmp[:] = 0.0
            for i in range(T):
                n[i] = float(counts[b, i])
                acc[A_M], cmp[A_M] = _nadd(acc[A_M], cmp[A_M], n[i] * m[i])
                acc[A_A], cmp[A_A] = _nadd(acc[A_A], cmp[A_A], n[i] * y[i])
            M = acc[A_M] + cmp[A_M]
            A = acc[A_A] + cmp[A_A]
            out[b, A_M] = M
            out[b, A_A] = A
            if M > 0:
                th = A / M
                out[b, A_TH] = th
            else:
                th = 0.0
                out[b, A_TH] = np.nan
            for i in range(T):
                r[i] = m[i] * (c[i] - th)
            for i in range(T):
                ni = n[i]
                if ni == 0.0:
                    continue
                # diagonal entry: N_i - C_ii N_i^2 (standard), times 1/(1-C_ii) (weighted)
                d1 = ni - C1[i, i] * ni * ni
                d2 = G2[i, i] * ni - H2[i, i] * ni * ni
                row[A_T1] = d1 * r[i] * r[i]
                row[A_VM] = d1 * m[i] * m[i]
                row[A_VA] = d1 * y[i] * y[i]
                row[A_CV] = d1 * y[i] * m[i]
                row[A_HT] = d2 * y[i] * y[i]
                row[A_AD1] = d2 * r[i] * r[i]
                row[A_VMW] = d2 * m[i] * m[i]
                row[A_VAW] = d2 * y[i] * y[i]
                row[A_CVW] = d2 * y[i] * m[i]
                row[A_SYG] = 0.0
                row[A_YY] = ni * y[i] * y[i]
                # off-diagonal pairs j > i, counted twice by symmetry
                for j in range(i + 1, T):
                    nj = n[j]
                    if nj == 0.0:
                        continue
                    c1 = -2.0 * C1[i, j] * ni * nj
                    h2 = -2.0 * H2[i, j] * ni * nj
                    dy = y[i] - y[j]
                    row[A_T1] += c1 * r[i] * r[j]
                    row[A_VM] += c1 * m[i] * m[j]
                    row[A_VA] += c1 * y[i] * y[j]
                    row[A_CV] += 0.5 * c1 * (y[i] * m[j] + y[j] * m[i])
                    row[A_HT] += h2 * y[i] * y[j]
                    row[A_AD1] += h2 * r[i] * r[j]
                    row[A_VMW] += h2 * m[i] * m[j]
                    row[A_VAW] += h2 * y[i] * y[j]
                    row[A_CVW] += 0.5 * h2 * (y[i] * m[j] + y[j] * m[i])
                    row[A_SYG] -= h2 * dy * dy
                for k in range(A_T1, N_ACC):
                    acc[k], cmp[k] = _nadd(acc[k], cmp[k], row[k])
            for k in range(A_T1, N_ACC):
                out[b, k] = acc[k] + cmp[k]


def _eq7(M, A, vm, va, cv):
    """Vectorized second-order Taylor variance with error codes.

    Uses the moment form of the intermediates. The scalar estimator uses a
    residual form that is more accurate when A and M are nearly collinear;
    the two agree to rounding on well-conditioned rows.
    """
    codes = np.where(~(vm > 0), DEGENERATE_VM, np.where(A == 0, ZERO_AMOUNT, OK))
    good = codes == OK
    vm_s = np.where(good, vm, 1.0)
    a_s = np.where(good, A, 1.0)
    slope = cv / vm_s
    b_mean = A - M * slope
    b_var = va - cv * slope
    beta = 1.0 - cv * M / (vm_s * a_s)
    m2 = M * M
    with np.errstate(divide="ignore", invalid="ignore"):
        bracket = b_mean**2 + b_var + 2.0 * beta**2 * (A**2 / m2) * vm
        val = b_var / m2 + (vm / (m2 * m2)) * bracket
    return np.where(good, val, np.nan), codes


def _finish(acc, w_ok, xs, m_batch):
    B = acc.shape[0]
    names = list(ESTIMATOR_NAMES) + [f"HYB:{x!r}" for x in xs]
    vals = np.full((B, len(names)), np.nan)
    codes = np.zeros((B, len(names)), dtype=np.int8)
    M = acc[:, A_M]
    ne = M > 0
    M_s = np.where(ne, M, 1.0)
    m2 = M_s * M_s
    col = {n: i for i, n in enumerate(names)}

    vals[:, col["T1"]] = acc[:, A_T1] / m2
    vals[:, col["HT"]] = acc[:, A_HT] / m2
    vals[:, col["AD1"]] = acc[:, A_AD1] / m2
    vals[:, col["SYG"]] = acc[:, A_SYG] / (2.0 * m2)
    v, cd = _eq7(M, acc[:, A_A], acc[:, A_VM], acc[:, A_VA], acc[:, A_CV])
    vals[:, col["T2"]], codes[:, col["T2"]] = v, cd
    v, cd = _eq7(M, acc[:, A_A], acc[:, A_VMW], acc[:, A_VAW], acc[:, A_CVW])
    vals[:, col["AD2"]], codes[:, col["AD2"]] = v, cd
    if m_batch is not None and m_batch > 0:
        vals[:, col["HT_FINITE"]] = vals[:, col["HT"]] - acc[:, A_YY] / (m_batch * M_s)
    else:
        codes[:, col["HT_FINITE"]] = NO_BATCH
    vm = acc[:, A_VM]
    vals[:, col["VARM"]] = vm
    rsd = np.where(vm >= 0, np.sqrt(np.maximum(vm, 0.0)) / M_s, 0.0)
    vals[:, col["RSD"]] = rsd
    t1, ht = vals[:, col["T1"]], vals[:, col["HT"]]
    for x in xs:
        a = -np.expm1(-rsd / x)
        vals[:, col[f"HYB:{x!r}"]] = ht + a * (t1 - ht)

    if not w_ok:
        for n in ("HT", "AD1", "AD2", "SYG", "HT_FINITE") + tuple(f"HYB:{x!r}" for x in xs):
            codes[:, col[n]] = DEGENERATE_C
    for n in names:
        if n != "VARM":
            codes[~ne, col[n]] = EMPTY
    vals[codes != OK] = np.nan
    return names, vals, codes


def evaluate_batch(counts, masses, concs, C_taylor, C_ht=None, xs=(0.01, 0.05), m_batch=None, backend=None):
    """Evaluate all estimators on each row of ``counts`` (shape (R, T)).

    ``C_taylor`` feeds T1, T2, VARM, RSD and the T1 half of the hybrids;
    ``C_ht`` (defaults to ``C_taylor``) feeds HT, AD1, AD2, SYG, HT_FINITE.
    Returns ``(accumulators, names, values, codes)``; hybrid columns are
    named ``HYB:<x>``. Rows are processed in fixed blocks so results do not
    depend on how callers split the work.
    """
    backend = backend or BACKEND
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    counts = np.ascontiguousarray(counts, dtype=np.int64)
    if counts.ndim != 2:
        raise ValueError("counts must be 2-D (replicates x kinds)")
    m = np.ascontiguousarray(masses, dtype=np.float64)
    c = np.ascontiguousarray(concs, dtype=np.float64)
    C1 = np.ascontiguousarray(C_taylor, dtype=np.float64)
    C2 = C1 if C_ht is None else np.ascontiguousarray(C_ht, dtype=np.float64)
    G2, H2, w_ok = _weights(C2)
    acc = np.empty((counts.shape[0], N_ACC))
    for s in range(0, counts.shape[0], CHUNK):
        blk = slice(s, s + CHUNK)
        if backend == "numba":
            _accumulate_numba(counts[blk], m, c, C1, G2, H2, acc[blk])
        else:
            _accumulate_numpy(counts[blk], m, c, C1, G2, H2, acc[blk])
    names, vals, codes = _finish(acc, w_ok, tuple(xs), m_batch)
    return acc, names, vals, codes
