# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the dense tanh MLP.

Function-for-function mirror of ``releaseflow._slowcore`` (see that module
for the parameter layout and mask conventions).  The batch kernels process
points in blocks of 32 laid out block-minor, which turns every affine into
contiguous fused multiply-adds and lets tanh go through the glibc vector
math library where available.  Results agree with the NumPy reference to
floating-point reassociation; the parity tests pin the tolerance.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport tanh

cdef extern from *:
    """
    #include <math.h>
    /* glibc 2.35 added vector-math tanh; declaring the simd attribute lets
       GCC emit calls into libmvec from the plain loop below.  Elsewhere the
       pragma is inert and the loop stays scalar libm. */
    #if defined(__GLIBC__) && defined(__x86_64__) && __GLIBC_PREREQ(2, 35)
    __attribute__((__simd__("notinbranch"))) double tanh(double);
    #endif
    static void rf_vtanh(const double *restrict z, double *restrict h, int n) {
        #pragma omp simd
        for (int b = 0; b < n; b++) h[b] = tanh(z[b]);
    }
    """
    void rf_vtanh(const double* z, double* h, int n) noexcept nogil

cnp.import_array()

from . import _slowcore

__all__ = ["n_params", "forward", "forward_ext", "backprop", "pde_value_grad"]


def n_params(dims):
    return _slowcore.n_params(dims)


cdef struct LayerMeta:
    Py_ssize_t w_off
    Py_ssize_t b_off
    Py_ssize_t fi
    Py_ssize_t fo


cdef _meta(dims, LayerMeta* meta):
    cdef Py_ssize_t off = 0, l
    for l in range(len(dims) - 1):
        meta[l].fi = dims[l]
        meta[l].fo = dims[l + 1]
        meta[l].w_off = off
        meta[l].b_off = off + meta[l].fi * meta[l].fo
        off += (meta[l].fi + 1) * meta[l].fo
    return off


cdef inline double _dot(const double* w, const double* a, Py_ssize_t n) noexcept nogil:
    # four explicit accumulators so the compiler can vectorize the
    # reduction without reassociation flags
    cdef double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0
    cdef Py_ssize_t i = 0
    while i + 4 <= n:
        a0 += w[i] * a[i]
        a1 += w[i + 1] * a[i + 1]
        a2 += w[i + 2] * a[i + 2]
        a3 += w[i + 3] * a[i + 3]
        i += 4
    while i < n:
        a0 += w[i] * a[i]
        i += 1
    return (a0 + a1) + (a2 + a3)


cdef inline double _sum(const double* a, Py_ssize_t n) noexcept nogil:
    cdef double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0
    cdef Py_ssize_t i = 0
    while i + 4 <= n:
        a0 += a[i]
        a1 += a[i + 1]
        a2 += a[i + 2]
        a3 += a[i + 3]
        i += 4
    while i < n:
        a0 += a[i]
        i += 1
    return (a0 + a1) + (a2 + a3)


DEF BLOCK = 32


def forward(theta, dims, X, mask=None):
    """Plain forward pass; returns (n, output_dim).

    Points are processed in blocks of 32 laid out block-minor, so every
    affine becomes contiguous fused multiply-adds over the block.
    """
    cdef cnp.ndarray[double, ndim=1] th_arr = np.ascontiguousarray(theta, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] X_arr = np.ascontiguousarray(X, dtype=np.float64)
    cdef LayerMeta meta[64]
    cdef Py_ssize_t nl = len(dims) - 1
    if nl > 64:
        return _slowcore.forward(theta, dims, X, mask)
    _meta(dims, meta)
    cdef Py_ssize_t n_hidden = nl - 1
    cdef Py_ssize_t n = X_arr.shape[0]
    cdef Py_ssize_t width = max(dims)
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, dims[nl]), dtype=np.float64)

    cdef bint has_mask = mask is not None
    cdef cnp.ndarray[double, ndim=2] m_arr
    cdef double* mp = NULL
    cdef Py_ssize_t m_stride = 0
    if has_mask:
        m_arr = np.ascontiguousarray(mask, dtype=np.float64)
        mp = <double*> m_arr.data
        m_stride = m_arr.shape[1]

    cdef Py_ssize_t rowlen = width * BLOCK
    cdef cnp.ndarray[double, ndim=2] scratch = np.empty((2, rowlen), dtype=np.float64)
    cdef double* cur = <double*> scratch.data
    cdef double* nxt = cur + rowlen
    cdef double* th = <double*> th_arr.data
    cdef double* xp = <double*> X_arr.data
    cdef double* op = <double*> out.data
    cdef Py_ssize_t in_dim = dims[0], out_dim = dims[nl]
    cdef Py_ssize_t p0, bn, b, l, j, i
    cdef double bias, wji, mval
    cdef double* tmp
    cdef double acc[BLOCK]
    cdef double tnh[BLOCK]

    with nogil:
        p0 = 0
        while p0 < n:
            bn = n - p0
            if bn > BLOCK:
                bn = BLOCK
            for i in range(in_dim):
                for b in range(bn):
                    cur[i * BLOCK + b] = xp[(p0 + b) * in_dim + i]
                for b in range(bn, BLOCK):
                    cur[i * BLOCK + b] = 0.0
            for l in range(n_hidden):
                for j in range(meta[l].fo):
                    bias = th[meta[l].b_off + j]
                    for b in range(BLOCK):
                        acc[b] = bias
                    for i in range(meta[l].fi):
                        wji = th[meta[l].w_off + j * meta[l].fi + i]
                        for b in range(BLOCK):
                            acc[b] += wji * cur[i * BLOCK + b]
                    rf_vtanh(acc, tnh, BLOCK)
                    mval = mp[l * m_stride + j] if has_mask else 1.0
                    for b in range(BLOCK):
                        nxt[j * BLOCK + b] = tnh[b] * mval
                tmp = cur; cur = nxt; nxt = tmp
            for j in range(out_dim):
                bias = th[meta[n_hidden].b_off + j]
                for b in range(BLOCK):
                    acc[b] = bias
                for i in range(meta[n_hidden].fi):
                    wji = th[meta[n_hidden].w_off + j * meta[n_hidden].fi + i]
                    for b in range(BLOCK):
                        acc[b] += wji * cur[i * BLOCK + b]
                for b in range(bn):
                    op[(p0 + b) * out_dim + j] = acc[b]
            p0 += bn
    return out


def forward_ext(theta, dims, X, mask=None):
    """Tangent-extended pass; returns (u, u_x, u_t, u_xx), each (n, out).

    Same block-of-32 layout as `forward`, carried through all four
    tangent channels.
    """
    if dims[0] != 2:
        return _slowcore.forward_ext(theta, dims, X, mask)
    cdef cnp.ndarray[double, ndim=1] th_arr = np.ascontiguousarray(theta, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] X_arr = np.ascontiguousarray(X, dtype=np.float64)
    cdef LayerMeta meta[64]
    cdef Py_ssize_t nl = len(dims) - 1
    if nl > 64:
        return _slowcore.forward_ext(theta, dims, X, mask)
    _meta(dims, meta)
    cdef Py_ssize_t n_hidden = nl - 1
    cdef Py_ssize_t n = X_arr.shape[0]
    cdef Py_ssize_t width = max(dims)
    cdef Py_ssize_t out_dim = dims[nl]
    cdef cnp.ndarray[double, ndim=2] u = np.empty((n, out_dim), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] ux = np.empty((n, out_dim), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] ut = np.empty((n, out_dim), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] uxx = np.empty((n, out_dim), dtype=np.float64)

    cdef bint has_mask = mask is not None
    cdef cnp.ndarray[double, ndim=2] m_arr
    cdef double* mp = NULL
    cdef Py_ssize_t m_stride = 0
    if has_mask:
        m_arr = np.ascontiguousarray(mask, dtype=np.float64)
        mp = <double*> m_arr.data
        m_stride = m_arr.shape[1]

    # (a, ax, at, axx) current and next, block-minor
    cdef Py_ssize_t rowlen = width * BLOCK
    cdef cnp.ndarray[double, ndim=2] scratch = np.empty((8, rowlen), dtype=np.float64)
    cdef double* sp = <double*> scratch.data
    cdef double* a = sp
    cdef double* ax = sp + rowlen
    cdef double* at = sp + 2 * rowlen
    cdef double* axx = sp + 3 * rowlen
    cdef double* na = sp + 4 * rowlen
    cdef double* nax = sp + 5 * rowlen
    cdef double* nat = sp + 6 * rowlen
    cdef double* naxx = sp + 7 * rowlen
    cdef double* th = <double*> th_arr.data
    cdef double* xp = <double*> X_arr.data
    cdef double *pu = <double*> u.data
    cdef double *pux = <double*> ux.data
    cdef double *put = <double*> ut.data
    cdef double *puxx = <double*> uxx.data
    cdef Py_ssize_t p0, bn, b, l, j, i, jb
    cdef double h, s, mval, bias, wji
    cdef double* tmp
    cdef double acc0[BLOCK]
    cdef double acc1[BLOCK]
    cdef double acc2[BLOCK]
    cdef double acc3[BLOCK]
    cdef double tnh[BLOCK]

    with nogil:
        p0 = 0
        while p0 < n:
            bn = n - p0
            if bn > BLOCK:
                bn = BLOCK
            for b in range(bn):
                a[b] = xp[2 * (p0 + b)]
                a[BLOCK + b] = xp[2 * (p0 + b) + 1]
            for b in range(bn, BLOCK):
                a[b] = 0.0
                a[BLOCK + b] = 0.0
            for b in range(BLOCK):
                ax[b] = 1.0
                ax[BLOCK + b] = 0.0
                at[b] = 0.0
                at[BLOCK + b] = 1.0
                axx[b] = 0.0
                axx[BLOCK + b] = 0.0
            for l in range(n_hidden):
                for j in range(meta[l].fo):
                    jb = j * BLOCK
                    bias = th[meta[l].b_off + j]
                    for b in range(BLOCK):
                        acc0[b] = bias
                        acc1[b] = 0.0
                        acc2[b] = 0.0
                        acc3[b] = 0.0
                    for i in range(meta[l].fi):
                        wji = th[meta[l].w_off + j * meta[l].fi + i]
                        for b in range(BLOCK):
                            acc0[b] += wji * a[i * BLOCK + b]
                        for b in range(BLOCK):
                            acc1[b] += wji * ax[i * BLOCK + b]
                        for b in range(BLOCK):
                            acc2[b] += wji * at[i * BLOCK + b]
                        for b in range(BLOCK):
                            acc3[b] += wji * axx[i * BLOCK + b]
                    rf_vtanh(acc0, tnh, BLOCK)
                    mval = mp[l * m_stride + j] if has_mask else 1.0
                    for b in range(BLOCK):
                        h = tnh[b]
                        s = 1.0 - h * h
                        na[jb + b] = h * mval
                        nax[jb + b] = s * acc1[b] * mval
                        nat[jb + b] = s * acc2[b] * mval
                        naxx[jb + b] = (s * acc3[b]
                                        - 2.0 * h * s * acc1[b] * acc1[b]) * mval
                tmp = a; a = na; na = tmp
                tmp = ax; ax = nax; nax = tmp
                tmp = at; at = nat; nat = tmp
                tmp = axx; axx = naxx; naxx = tmp
            for j in range(out_dim):
                bias = th[meta[n_hidden].b_off + j]
                for b in range(BLOCK):
                    acc0[b] = bias
                    acc1[b] = 0.0
                    acc2[b] = 0.0
                    acc3[b] = 0.0
                for i in range(meta[n_hidden].fi):
                    wji = th[meta[n_hidden].w_off + j * meta[n_hidden].fi + i]
                    for b in range(BLOCK):
                        acc0[b] += wji * a[i * BLOCK + b]
                    for b in range(BLOCK):
                        acc1[b] += wji * ax[i * BLOCK + b]
                    for b in range(BLOCK):
                        acc2[b] += wji * at[i * BLOCK + b]
                    for b in range(BLOCK):
                        acc3[b] += wji * axx[i * BLOCK + b]
                for b in range(bn):
                    pu[(p0 + b) * out_dim + j] = acc0[b]
                    pux[(p0 + b) * out_dim + j] = acc1[b]
                    put[(p0 + b) * out_dim + j] = acc2[b]
                    puxx[(p0 + b) * out_dim + j] = acc3[b]
            p0 += bn
    return u, ux, ut, uxx


def backprop(theta, dims, X, mask, adj_u):
    """Gradient of sum_i adj_u[i] . u(X[i]) with respect to theta.

    Same block-of-32 layout as `forward`; weight gradients reduce to
    block-length dot products.
    """
    cdef cnp.ndarray[double, ndim=1] th_arr = np.ascontiguousarray(theta, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] X_arr = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] adj = np.ascontiguousarray(adj_u, dtype=np.float64)
    cdef LayerMeta meta[64]
    cdef Py_ssize_t nl = len(dims) - 1
    if nl > 64:
        return _slowcore.backprop(theta, dims, X, mask, adj_u)
    cdef Py_ssize_t total = _meta(dims, meta)
    cdef Py_ssize_t n_hidden = nl - 1
    cdef Py_ssize_t n = X_arr.shape[0]
    cdef Py_ssize_t width = max(dims)
    cdef cnp.ndarray[double, ndim=1] grad = np.zeros(total, dtype=np.float64)

    cdef bint has_mask = mask is not None
    cdef cnp.ndarray[double, ndim=2] m_arr
    cdef double* mp = NULL
    cdef Py_ssize_t m_stride = 0
    if has_mask:
        m_arr = np.ascontiguousarray(mask, dtype=np.float64)
        mp = <double*> m_arr.data
        m_stride = m_arr.shape[1]

    # stored activations: layer inputs (post-mask) and pre-mask tanh outputs
    cdef Py_ssize_t rowlen = width * BLOCK
    cdef cnp.ndarray[double, ndim=2] store_in = np.empty((nl, rowlen), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] store_h = np.empty((max(n_hidden, 1), rowlen), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] scratch = np.empty((2, rowlen), dtype=np.float64)
    cdef double* si = <double*> store_in.data
    cdef double* sh = <double*> store_h.data
    cdef double* zbuf = <double*> scratch.data
    cdef double* hbuf = zbuf + rowlen
    cdef double* th = <double*> th_arr.data
    cdef double* gp = <double*> grad.data
    cdef double* xp = <double*> X_arr.data
    cdef double* ap = <double*> adj.data
    cdef Py_ssize_t in_dim = dims[0], out_dim = dims[nl]
    cdef Py_ssize_t p0, bn, b, l, j, i, base
    cdef double h, bias, wji, mval
    cdef double* tmp
    cdef double acc[BLOCK]
    cdef double tnh[BLOCK]

    with nogil:
        p0 = 0
        while p0 < n:
            bn = n - p0
            if bn > BLOCK:
                bn = BLOCK
            for i in range(in_dim):
                for b in range(bn):
                    si[i * BLOCK + b] = xp[(p0 + b) * in_dim + i]
                for b in range(bn, BLOCK):
                    si[i * BLOCK + b] = 0.0
            for l in range(n_hidden):
                base = l * rowlen
                for j in range(meta[l].fo):
                    bias = th[meta[l].b_off + j]
                    for b in range(BLOCK):
                        acc[b] = bias
                    for i in range(meta[l].fi):
                        wji = th[meta[l].w_off + j * meta[l].fi + i]
                        for b in range(BLOCK):
                            acc[b] += wji * si[base + i * BLOCK + b]
                    rf_vtanh(acc, tnh, BLOCK)
                    mval = mp[l * m_stride + j] if has_mask else 1.0
                    for b in range(BLOCK):
                        h = tnh[b]
                        sh[l * rowlen + j * BLOCK + b] = h
                        si[base + rowlen + j * BLOCK + b] = h * mval
            # reverse: start from the output adjoints (zero tail lanes)
            for j in range(out_dim):
                for b in range(bn):
                    zbuf[j * BLOCK + b] = ap[(p0 + b) * out_dim + j]
                for b in range(bn, BLOCK):
                    zbuf[j * BLOCK + b] = 0.0
            for l in range(n_hidden, -1, -1):
                base = l * rowlen
                for j in range(meta[l].fo):
                    for i in range(meta[l].fi):
                        gp[meta[l].w_off + j * meta[l].fi + i] += _dot(
                            zbuf + j * BLOCK, si + base + i * BLOCK, BLOCK)
                    gp[meta[l].b_off + j] += _sum(zbuf + j * BLOCK, BLOCK)
                if l > 0:
                    for i in range(meta[l].fi):
                        for b in range(BLOCK):
                            acc[b] = 0.0
                        for j in range(meta[l].fo):
                            wji = th[meta[l].w_off + j * meta[l].fi + i]
                            for b in range(BLOCK):
                                acc[b] += wji * zbuf[j * BLOCK + b]
                        mval = mp[(l - 1) * m_stride + i] if has_mask else 1.0
                        for b in range(BLOCK):
                            h = sh[(l - 1) * rowlen + i * BLOCK + b]
                            hbuf[i * BLOCK + b] = acc[b] * mval * (1.0 - h * h)
                    tmp = zbuf; zbuf = hbuf; hbuf = tmp
            p0 += bn
    return grad


def pde_value_grad(theta, dims, X, d, mask=None):
    """Residuals r = u_t - d u_xx plus exact gradients of mean(r^2).

    Points are processed in blocks of 32 laid out block-minor, so every
    affine becomes a sequence of contiguous fused multiply-adds over the
    block and the tanh tangent/adjoint rules vectorize elementwise.  See
    the NumPy reference for the adjoint formulas.
    """
    if dims[0] != 2 or dims[len(dims) - 1] != 1:
        return _slowcore.pde_value_grad(theta, dims, X, d, mask)
    cdef cnp.ndarray[double, ndim=1] th_arr = np.ascontiguousarray(theta, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] X_arr = np.ascontiguousarray(X, dtype=np.float64)
    cdef LayerMeta meta[64]
    cdef Py_ssize_t nl = len(dims) - 1
    if nl > 64:
        return _slowcore.pde_value_grad(theta, dims, X, d, mask)
    cdef Py_ssize_t total = _meta(dims, meta)
    cdef Py_ssize_t n_hidden = nl - 1
    cdef Py_ssize_t n = X_arr.shape[0]
    cdef Py_ssize_t width = max(dims)
    cdef cnp.ndarray[double, ndim=1] r_out = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] grad = np.zeros(total, dtype=np.float64)

    cdef bint has_mask = mask is not None
    cdef cnp.ndarray[double, ndim=2] m_arr
    cdef double* mp = NULL
    cdef Py_ssize_t m_stride = 0
    if has_mask:
        m_arr = np.ascontiguousarray(mask, dtype=np.float64)
        mp = <double*> m_arr.data
        m_stride = m_arr.shape[1]

    # block-minor storage: row (l, j) holds BLOCK consecutive point values
    cdef Py_ssize_t rowlen = width * BLOCK
    cdef cnp.ndarray[double, ndim=2] store = np.empty((8 * nl + 12, rowlen), dtype=np.float64)
    cdef double* sp = <double*> store.data
    cdef double* in_a = sp
    cdef double* in_ax = sp + nl * rowlen
    cdef double* in_at = sp + 2 * nl * rowlen
    cdef double* in_axx = sp + 3 * nl * rowlen
    cdef double* ch_h = sp + 4 * nl * rowlen
    cdef double* ch_zx = sp + 5 * nl * rowlen
    cdef double* ch_zt = sp + 6 * nl * rowlen
    cdef double* ch_zxx = sp + 7 * nl * rowlen
    cdef double* z = sp + 8 * nl * rowlen
    cdef double* zx = z + rowlen
    cdef double* zt = z + 2 * rowlen
    cdef double* zxx = z + 3 * rowlen
    cdef double* zb = z + 4 * rowlen
    cdef double* zxb = z + 5 * rowlen
    cdef double* ztb = z + 6 * rowlen
    cdef double* zxxb = z + 7 * rowlen
    cdef double* hbb = z + 8 * rowlen
    cdef double* hxb = z + 9 * rowlen
    cdef double* htb = z + 10 * rowlen
    cdef double* hxxb = z + 11 * rowlen

    cdef double* th = <double*> th_arr.data
    cdef double* gp = <double*> grad.data
    cdef double* xp = <double*> X_arr.data
    cdef double* rp = <double*> r_out.data
    cdef double dd = d
    cdef double grad_d = 0.0, inv_n = 1.0 / n
    cdef Py_ssize_t p0, bn, b, l, j, i, base, jb
    cdef double h, s, mval, wji, bias, r_p, uxx_p
    # stack accumulators: provably alias-free, so the loops over BLOCK
    # vectorize without runtime overlap checks
    cdef double acc0[BLOCK]
    cdef double acc1[BLOCK]
    cdef double acc2[BLOCK]
    cdef double acc3[BLOCK]
    cdef double tnh[BLOCK]

    with nogil:
        p0 = 0
        while p0 < n:
            bn = n - p0
            if bn > BLOCK:
                bn = BLOCK
            # seed the input channels; zero the tail lanes of a partial
            # block so downstream full-width arithmetic stays finite
            for b in range(bn):
                in_a[b] = xp[2 * (p0 + b)]
                in_a[BLOCK + b] = xp[2 * (p0 + b) + 1]
            for b in range(bn, BLOCK):
                in_a[b] = 0.0
                in_a[BLOCK + b] = 0.0
            for b in range(BLOCK):
                in_ax[b] = 1.0
                in_ax[BLOCK + b] = 0.0
                in_at[b] = 0.0
                in_at[BLOCK + b] = 1.0
                in_axx[b] = 0.0
                in_axx[BLOCK + b] = 0.0

            # ---- extended forward pass ----
            for l in range(n_hidden):
                base = l * rowlen
                for j in range(meta[l].fo):
                    jb = j * BLOCK
                    bias = th[meta[l].b_off + j]
                    for b in range(BLOCK):
                        acc0[b] = bias
                        acc1[b] = 0.0
                        acc2[b] = 0.0
                        acc3[b] = 0.0
                    for i in range(meta[l].fi):
                        wji = th[meta[l].w_off + j * meta[l].fi + i]
                        for b in range(BLOCK):
                            acc0[b] += wji * in_a[base + i * BLOCK + b]
                        for b in range(BLOCK):
                            acc1[b] += wji * in_ax[base + i * BLOCK + b]
                        for b in range(BLOCK):
                            acc2[b] += wji * in_at[base + i * BLOCK + b]
                        for b in range(BLOCK):
                            acc3[b] += wji * in_axx[base + i * BLOCK + b]
                    for b in range(BLOCK):
                        z[jb + b] = acc0[b]
                        zx[jb + b] = acc1[b]
                        zt[jb + b] = acc2[b]
                        zxx[jb + b] = acc3[b]
                # tanh tangent rules, elementwise over the block
                base = (l + 1) * rowlen
                for j in range(meta[l].fo):
                    jb = j * BLOCK
                    rf_vtanh(z + jb, tnh, BLOCK)
                    mval = mp[l * m_stride + j] if has_mask else 1.0
                    for b in range(BLOCK):
                        h = tnh[b]
                        s = 1.0 - h * h
                        ch_h[l * rowlen + jb + b] = h
                        ch_zx[l * rowlen + jb + b] = zx[jb + b]
                        ch_zt[l * rowlen + jb + b] = zt[jb + b]
                        ch_zxx[l * rowlen + jb + b] = zxx[jb + b]
                        in_a[base + jb + b] = h * mval
                        in_ax[base + jb + b] = s * zx[jb + b] * mval
                        in_at[base + jb + b] = s * zt[jb + b] * mval
                        in_axx[base + jb + b] = (s * zxx[jb + b]
                                                 - 2.0 * h * s * zx[jb + b] * zx[jb + b]) * mval

            # output layer (fo = 1): u_t and u_xx only
            base = n_hidden * rowlen
            for b in range(BLOCK):
                acc2[b] = 0.0
                acc3[b] = 0.0
            for i in range(meta[n_hidden].fi):
                wji = th[meta[n_hidden].w_off + i]
                for b in range(BLOCK):
                    acc2[b] += wji * in_at[base + i * BLOCK + b]
                for b in range(BLOCK):
                    acc3[b] += wji * in_axx[base + i * BLOCK + b]
            for b in range(BLOCK):
                zb[b] = 0.0
                zxb[b] = 0.0
                ztb[b] = 0.0
                zxxb[b] = 0.0
            for b in range(bn):
                uxx_p = acc3[b]
                r_p = acc2[b] - dd * uxx_p
                rp[p0 + b] = r_p
                grad_d -= 2.0 * inv_n * r_p * uxx_p
                ztb[b] = 2.0 * inv_n * r_p
                zxxb[b] = -2.0 * inv_n * dd * r_p

            # ---- reverse sweep ----
            for l in range(n_hidden, -1, -1):
                if l < n_hidden:
                    # undo the mask, then pull back through tanh tangents
                    base = l * rowlen
                    for j in range(meta[l].fo):
                        jb = j * BLOCK
                        mval = mp[l * m_stride + j] if has_mask else 1.0
                        for b in range(BLOCK):
                            hbb[jb + b] *= mval
                            hxb[jb + b] *= mval
                            htb[jb + b] *= mval
                            hxxb[jb + b] *= mval
                            h = ch_h[base + jb + b]
                            s = 1.0 - h * h
                            zb[jb + b] = (s * hbb[jb + b]
                                          - 2.0 * h * s * (ch_zx[base + jb + b] * hxb[jb + b]
                                                           + ch_zt[base + jb + b] * htb[jb + b])
                                          + hxxb[jb + b] * (-2.0 * h * s * ch_zxx[base + jb + b]
                                                            - 2.0 * s * ch_zx[base + jb + b]
                                                            * ch_zx[base + jb + b]
                                                            * (s - 2.0 * h * h)))
                            zxb[jb + b] = (s * hxb[jb + b]
                                           - 4.0 * h * s * ch_zx[base + jb + b] * hxxb[jb + b])
                            ztb[jb + b] = s * htb[jb + b]
                            zxxb[jb + b] = s * hxxb[jb + b]
                # weight/bias gradients: block-length dots per (j, i);
                # tail lanes of the adjoints are zero, so full width is safe
                base = l * rowlen
                for j in range(meta[l].fo):
                    jb = j * BLOCK
                    for i in range(meta[l].fi):
                        gp[meta[l].w_off + j * meta[l].fi + i] += (
                            _dot(zb + jb, in_a + base + i * BLOCK, BLOCK)
                            + _dot(zxb + jb, in_ax + base + i * BLOCK, BLOCK)
                            + _dot(ztb + jb, in_at + base + i * BLOCK, BLOCK)
                            + _dot(zxxb + jb, in_axx + base + i * BLOCK, BLOCK))
                    gp[meta[l].b_off + j] += _sum(zb + jb, BLOCK)
                if l > 0:
                    # pull the four adjoint channels back through W
                    for i in range(meta[l].fi):
                        for b in range(BLOCK):
                            acc0[b] = 0.0
                            acc1[b] = 0.0
                            acc2[b] = 0.0
                            acc3[b] = 0.0
                        for j in range(meta[l].fo):
                            wji = th[meta[l].w_off + j * meta[l].fi + i]
                            jb = j * BLOCK
                            for b in range(BLOCK):
                                acc0[b] += wji * zb[jb + b]
                            for b in range(BLOCK):
                                acc1[b] += wji * zxb[jb + b]
                            for b in range(BLOCK):
                                acc2[b] += wji * ztb[jb + b]
                            for b in range(BLOCK):
                                acc3[b] += wji * zxxb[jb + b]
                        for b in range(BLOCK):
                            hbb[i * BLOCK + b] = acc0[b]
                            hxb[i * BLOCK + b] = acc1[b]
                            htb[i * BLOCK + b] = acc2[b]
                            hxxb[i * BLOCK + b] = acc3[b]
            p0 += bn
    return r_out, grad, grad_d
