"""NumPy reference kernels for the dense tanh MLP.

The compiled extension ``releaseflow._fastcore`` mirrors every public
function in this module; ``releaseflow.backend`` picks whichever is
available at import time.  This module is the always-importable fallback
and the reference the parity tests compare against.

Conventions shared by both backends:

* ``theta`` is the flat parameter vector.  Layer ``l`` (fan-in ``fi``,
  fan-out ``fo``) occupies ``fi*fo`` weight entries in row-major
  ``(fo, fi)`` order followed by ``fo`` bias entries.
* ``dims`` is the width sequence ``(input, hidden..., output)``.
* ``X`` is ``(n, input_dim)``; column 0 is the spatial coordinate and
  column 1 is time wherever input derivatives are requested.
* ``mask`` is either ``None`` or an ``(n_hidden, width)`` array of
  already-scaled inverted-dropout factors (``keep / p_keep``), applied
  after each hidden tanh.
"""

import numpy as np


def _layers(theta, dims):
    """Yield (W, b) views into the flat parameter vector."""
    off = 0
    for fi, fo in zip(dims[:-1], dims[1:]):
        w = theta[off:off + fi * fo].reshape(fo, fi)
        off += fi * fo
        b = theta[off:off + fo]
        off += fo
        yield w, b


def n_params(dims):
    return int(sum((fi + 1) * fo for fi, fo in zip(dims[:-1], dims[1:])))


def forward(theta, dims, X, mask=None):
    """Plain forward pass; returns (n, output_dim)."""
    n_hidden = len(dims) - 2
    a = np.asarray(X, dtype=np.float64)
    for l, (w, b) in enumerate(_layers(theta, dims)):
        z = a @ w.T + b
        if l < n_hidden:
            a = np.tanh(z)
            if mask is not None:
                a = a * mask[l]
        else:
            a = z
    return a


def forward_ext(theta, dims, X, mask=None):
    """Forward pass carrying first x- and t-tangents and the second x-tangent.

    Returns ``(u, u_x, u_t, u_xx)``, each ``(n, output_dim)``.  The tangents
    propagate exactly: through an affine layer they transform linearly, and
    through tanh via

        h   = tanh(z)          s = 1 - h^2
        h_x = s z_x            h_t = s z_t
        h_xx = s z_xx - 2 h s z_x^2
    """
    a = np.asarray(X, dtype=np.float64)
    n_hidden = len(dims) - 2
    ax = np.zeros_like(a)
    ax[:, 0] = 1.0
    at = np.zeros_like(a)
    at[:, 1] = 1.0
    axx = np.zeros_like(a)
    for l, (w, b) in enumerate(_layers(theta, dims)):
        z = a @ w.T + b
        zx = ax @ w.T
        zt = at @ w.T
        zxx = axx @ w.T
        if l < n_hidden:
            h = np.tanh(z)
            s = 1.0 - h * h
            a = h
            ax = s * zx
            at = s * zt
            axx = s * zxx - 2.0 * h * s * zx * zx
            if mask is not None:
                m = mask[l]
                a = a * m
                ax = ax * m
                at = at * m
                axx = axx * m
        else:
            a, ax, at, axx = z, zx, zt, zxx
    return a, ax, at, axx


def input_jvp(theta, dims, X, vx, vt, mask=None):
    """First-order-only directional derivative along (vx, vt).

    Kept deliberately separate from :func:`forward_ext` so the two first
    derivative code paths can be cross-checked.  Returns ``(u, du)``.
    """
    a = np.asarray(X, dtype=np.float64)
    n_hidden = len(dims) - 2
    da = np.zeros_like(a)
    da[:, 0] = vx
    da[:, 1] = vt
    for l, (w, b) in enumerate(_layers(theta, dims)):
        z = a @ w.T + b
        dz = da @ w.T
        if l < n_hidden:
            a = np.tanh(z)
            da = (1.0 - a * a) * dz
            if mask is not None:
                m = mask[l]
                a = a * m
                da = da * m
        else:
            a, da = z, dz
    return a, da


def backprop(theta, dims, X, mask, adj_u):
    """Gradient of sum_i adj_u[i] . u(X[i]) with respect to theta."""
    n_hidden = len(dims) - 2
    a = np.asarray(X, dtype=np.float64)
    pre = []    # tanh outputs, before dropout
    inputs = [a]  # layer inputs, after dropout
    for l, (w, b) in enumerate(_layers(theta, dims)):
        z = a @ w.T + b
        if l < n_hidden:
            h = np.tanh(z)
            pre.append(h)
            a = h * mask[l] if mask is not None else h
            inputs.append(a)
        else:
            a = z

    grad = np.zeros_like(theta)
    zbar = np.asarray(adj_u, dtype=np.float64)
    offsets = _offsets(dims)
    for l in range(n_hidden, -1, -1):
        w_off, b_off, fi, fo = offsets[l]
        w = theta[w_off:w_off + fi * fo].reshape(fo, fi)
        grad[w_off:w_off + fi * fo] += (zbar.T @ inputs[l]).ravel()
        grad[b_off:b_off + fo] += zbar.sum(axis=0)
        if l > 0:
            hbar = zbar @ w
            if mask is not None:
                hbar = hbar * mask[l - 1]
            h = pre[l - 1]
            zbar = hbar * (1.0 - h * h)
    return grad


def pde_value_grad(theta, dims, X, d, mask=None):
    """Residuals r = u_t - d u_xx at X plus gradients of mean(r^2).

    Returns ``(r, grad_theta, grad_d)`` where ``grad_theta`` is the exact
    reverse-mode gradient of ``mean(r^2)`` through the tangent-extended
    forward pass and ``grad_d = d/dd mean(r^2) = -(2/n) sum r u_xx``.

    The reverse sweep needs the partials of the tanh tangent rules; with
    h = tanh(z), s = 1 - h^2 and incoming adjoints (hb, hxb, htb, hxxb):

        zb   = s hb - 2 h s (z_x hxb + z_t htb)
               + hxxb (-2 h s z_xx - 2 s z_x^2 (s - 2 h^2))
        zxb  = s hxb - 4 h s z_x hxxb
        ztb  = s htb
        zxxb = s hxxb
    """
    n_hidden = len(dims) - 2
    n = X.shape[0]
    a = np.asarray(X, dtype=np.float64)
    ax = np.zeros_like(a)
    ax[:, 0] = 1.0
    at = np.zeros_like(a)
    at[:, 1] = 1.0
    axx = np.zeros_like(a)

    inputs = [(a, ax, at, axx)]
    cache = []  # per hidden layer: (h, zx, zt, zxx)
    for l, (w, b) in enumerate(_layers(theta, dims)):
        z = a @ w.T + b
        zx = ax @ w.T
        zt = at @ w.T
        zxx = axx @ w.T
        if l < n_hidden:
            h = np.tanh(z)
            s = 1.0 - h * h
            cache.append((h, zx, zt, zxx))
            a = h
            ax = s * zx
            at = s * zt
            axx = s * zxx - 2.0 * h * s * zx * zx
            if mask is not None:
                m = mask[l]
                a, ax, at, axx = a * m, ax * m, at * m, axx * m
            inputs.append((a, ax, at, axx))
        else:
            ut, uxx = zt, zxx

    r = ut - d * uxx
    grad = np.zeros_like(theta)
    offsets = _offsets(dims)

    # Output layer is linear: adjoints on (u_t, u_xx) only.
    htb = (2.0 / n) * r
    hxxb = -(2.0 / n) * d * r
    hb = np.zeros_like(r)
    hxb = np.zeros_like(r)
    for l in range(n_hidden, -1, -1):
        w_off, b_off, fi, fo = offsets[l]
        w = theta[w_off:w_off + fi * fo].reshape(fo, fi)
        if l == n_hidden:
            zb, zxb, ztb, zxxb = hb, hxb, htb, hxxb
        else:
            if mask is not None:
                m = mask[l]
                hb, hxb, htb, hxxb = hb * m, hxb * m, htb * m, hxxb * m
            h, zx, zt, zxx = cache[l]
            s = 1.0 - h * h
            zb = (s * hb
                  - 2.0 * h * s * (zx * hxb + zt * htb)
                  + hxxb * (-2.0 * h * s * zxx - 2.0 * s * zx * zx * (s - 2.0 * h * h)))
            zxb = s * hxb - 4.0 * h * s * zx * hxxb
            ztb = s * htb
            zxxb = s * hxxb
        a, ax, at, axx = inputs[l]
        gw = zb.T @ a + zxb.T @ ax + ztb.T @ at + zxxb.T @ axx
        grad[w_off:w_off + fi * fo] += gw.ravel()
        grad[b_off:b_off + fo] += zb.sum(axis=0)
        if l > 0:
            hb = zb @ w
            hxb = zxb @ w
            htb = ztb @ w
            hxxb = zxxb @ w

    grad_d = -(2.0 / n) * float(np.sum(r * uxx))
    return r.ravel(), grad, grad_d


def _offsets(dims):
    """Per-layer (weight_offset, bias_offset, fan_in, fan_out)."""
    out = []
    off = 0
    for fi, fo in zip(dims[:-1], dims[1:]):
        out.append((off, off + fi * fo, fi, fo))
        off += (fi + 1) * fo
    return out
