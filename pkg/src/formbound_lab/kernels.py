"""Hot numeric kernels: numba-jitted loops with pure-numpy fallbacks.

Every public function dispatches on the active backend (see backend.py).
Both implementations are written to produce bit-identical results for the
same inputs: identical operation grouping and accumulation order.  The
numba fast paths cover d=3 (the desk-scale dimension); other dimensions
fall back to the numpy path, which is dimension-agnostic.
"""

import numpy as np

from . import backend
from .backend import njit

# ---------------------------------------------------------------------------
# upwind advective term  b . grad(v)  on the periodic box
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _advect_upwind_3d_nb(v, b0, b1, b2, h):
    n0, n1, n2 = v.shape
    out = np.empty_like(v)
    inv = 1.0 / h
    for i in range(n0):
        im = n0 - 1 if i == 0 else i - 1
        ip = 0 if i == n0 - 1 else i + 1
        for j in range(n1):
            jm = n1 - 1 if j == 0 else j - 1
            jp = 0 if j == n1 - 1 else j + 1
            for k in range(n2):
                km = n2 - 1 if k == 0 else k - 1
                kp = 0 if k == n2 - 1 else k + 1
                c = v[i, j, k]
                bx = b0[i, j, k]
                if bx >= 0.0:
                    t = bx * (c - v[im, j, k]) * inv
                else:
                    t = bx * (v[ip, j, k] - c) * inv
                by = b1[i, j, k]
                if by >= 0.0:
                    t += by * (c - v[i, jm, k]) * inv
                else:
                    t += by * (v[i, jp, k] - c) * inv
                bz = b2[i, j, k]
                if bz >= 0.0:
                    t += bz * (c - v[i, j, km]) * inv
                else:
                    t += bz * (v[i, j, kp] - c) * inv
                out[i, j, k] = t
    return out


def _advect_upwind_np(v, b, h):
    out = np.zeros_like(v)
    for ax in range(v.ndim):
        bax = b[ax]
        dminus = (v - np.roll(v, 1, axis=ax)) / h
        dplus = (np.roll(v, -1, axis=ax) - v) / h
        out += np.maximum(bax, 0.0) * dminus + np.minimum(bax, 0.0) * dplus
    return out


def advect_upwind(v, b, h):
    """First-order upwind discretization of b . grad(v); b has shape (d, *v.shape)."""
    if backend.numba_active() and v.ndim == 3:
        return _advect_upwind_3d_nb(
            np.ascontiguousarray(v),
            np.ascontiguousarray(b[0]),
            np.ascontiguousarray(b[1]),
            np.ascontiguousarray(b[2]),
            float(h),
        )
    return _advect_upwind_np(v, b, h)


# ---------------------------------------------------------------------------
# conservative upwind flux divergence  div(b w)
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _flux_div_3d_nb(w, b0, b1, b2, h):
    n0, n1, n2 = w.shape
    out = np.zeros_like(w)
    flux = np.empty_like(w)
    inv = 1.0 / h
    for axis in range(3):
        if axis == 0:
            b = b0
        elif axis == 1:
            b = b1
        else:
            b = b2
        for i in range(n0):
            inx = 0 if i == n0 - 1 else i + 1
            for j in range(n1):
                jnx = 0 if j == n1 - 1 else j + 1
                for k in range(n2):
                    knx = 0 if k == n2 - 1 else k + 1
                    if axis == 0:
                        bn = b[inx, j, k]
                        wn = w[inx, j, k]
                    elif axis == 1:
                        bn = b[i, jnx, k]
                        wn = w[i, jnx, k]
                    else:
                        bn = b[i, j, knx]
                        wn = w[i, j, knx]
                    bf = 0.5 * (b[i, j, k] + bn)
                    if bf >= 0.0:
                        flux[i, j, k] = bf * w[i, j, k]
                    else:
                        flux[i, j, k] = bf * wn
        for i in range(n0):
            ipv = n0 - 1 if i == 0 else i - 1
            for j in range(n1):
                jpv = n1 - 1 if j == 0 else j - 1
                for k in range(n2):
                    kpv = n2 - 1 if k == 0 else k - 1
                    if axis == 0:
                        fl = flux[ipv, j, k]
                    elif axis == 1:
                        fl = flux[i, jpv, k]
                    else:
                        fl = flux[i, j, kpv]
                    out[i, j, k] += (flux[i, j, k] - fl) * inv
    return out


def _flux_div_np(w, b, h):
    out = np.zeros_like(w)
    for ax in range(w.ndim):
        bf = 0.5 * (b[ax] + np.roll(b[ax], -1, axis=ax))
        flux = np.where(bf >= 0.0, bf * w, bf * np.roll(w, -1, axis=ax))
        out += (flux - np.roll(flux, 1, axis=ax)) / h
    return out


def flux_divergence(w, b, h):
    """Flux-form upwind discretization of div(b w); b has shape (d, *w.shape)."""
    if backend.numba_active() and w.ndim == 3:
        return _flux_div_3d_nb(
            np.ascontiguousarray(w),
            np.ascontiguousarray(b[0]),
            np.ascontiguousarray(b[1]),
            np.ascontiguousarray(b[2]),
            float(h),
        )
    return _flux_div_np(w, b, h)


# ---------------------------------------------------------------------------
# trilinear interpolation of grid-sampled fields (zero outside the box)
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True, inline="always")
def _interp_cell(x, L, h, n):
    s = (x + L) / h
    i0 = int(np.floor(s))
    f = s - np.floor(s)
    if i0 > n - 1:
        i0 = n - 1
    if i0 < 0:
        i0 = 0
    return i0, f


@njit(cache=True, nogil=True)
def _interp_vec3_nb(samples, pts, L, h, n, out):
    npts = pts.shape[0]
    ncomp = samples.shape[3]
    for p in range(npts):
        x, y, z = pts[p, 0], pts[p, 1], pts[p, 2]
        if abs(x) > L or abs(y) > L or abs(z) > L:
            for c in range(ncomp):
                out[p, c] = 0.0
            continue
        i0, fx = _interp_cell(x, L, h, n)
        j0, fy = _interp_cell(y, L, h, n)
        k0, fz = _interp_cell(z, L, h, n)
        for c in range(ncomp):
            out[p, c] = 0.0
        for corner in range(8):
            hx = corner & 1
            hy = (corner >> 1) & 1
            hz = (corner >> 2) & 1
            w = (fx if hx else 1.0 - fx) * (fy if hy else 1.0 - fy) * (fz if hz else 1.0 - fz)
            ii = (i0 + hx) % n
            jj = (j0 + hy) % n
            kk = (k0 + hz) % n
            for c in range(ncomp):
                out[p, c] += w * samples[ii, jj, kk, c]
    return out


def interp_vector(samples, pts, half_width, h, n):
    """Interpolate (n,n,n,k) samples at (m,3) points; zero outside the box."""
    pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64)
    if backend.numba_active() and pts.shape[1] == 3:
        out = np.empty((pts.shape[0], samples.shape[3]))
        return _interp_vec3_nb(
            np.ascontiguousarray(samples), pts, float(half_width), float(h), int(n), out
        )
    from .grid import multilinear_interpolate

    return multilinear_interpolate(samples, pts, half_width, h, n)


# ---------------------------------------------------------------------------
# Euler-Maruyama steppers
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True, inline="always")
def _hardy_factor(r, beta, sign, r_cap):
    # b(x) = sign*beta*x/(r*rc) with rc = max(r, r_cap): the plain Hardy field
    # for r >= r_cap, magnitude frozen at beta/r_cap inside.
    rc = r if r > r_cap else r_cap
    if r <= 0.0:
        return 0.0
    return sign * beta / (r * rc)


@njit(cache=True, nogil=True)
def _em_hardy_chunk_nb(X, noise, dt, beta, sign, r_cap, sigma):
    nsteps = noise.shape[0]
    nnoise = noise.shape[1]
    npaths, d = X.shape
    sq = sigma * np.sqrt(dt)
    for k in range(nsteps):
        for p in range(npaths):
            pn = p if nnoise > 1 else 0
            r2 = 0.0
            for a in range(d):
                r2 += X[p, a] * X[p, a]
            fac = _hardy_factor(np.sqrt(r2), beta, sign, r_cap)
            for a in range(d):
                X[p, a] += -fac * X[p, a] * dt + sq * noise[k, pn, a]
    return X


def _em_hardy_chunk_np(X, noise, dt, beta, sign, r_cap, sigma):
    sq = sigma * np.sqrt(dt)
    for k in range(noise.shape[0]):
        r = np.sqrt(np.sum(X * X, axis=1))
        rc = np.maximum(r, r_cap)
        fac = np.where(r > 0.0, sign * beta / np.where(r > 0.0, r * rc, 1.0), 0.0)
        xi = noise[k] if noise.shape[1] > 1 else noise[k, :1]
        X += -fac[:, None] * X * dt + sq * xi
    return X


def em_hardy_chunk(X, noise, dt, beta, sign, r_cap, sigma):
    """Advance Hardy-drift paths in place through one noise chunk.

    noise has shape (nsteps, npaths, d); a second axis of length 1 means
    shared noise across all paths (flow semantics).
    """
    if backend.numba_active():
        return _em_hardy_chunk_nb(X, noise, float(dt), float(beta), float(sign), float(r_cap), float(sigma))
    return _em_hardy_chunk_np(X, noise, float(dt), float(beta), float(sign), float(r_cap), float(sigma))


@njit(cache=True, nogil=True)
def _em_grid_chunk_nb(X, J, noise, dt, samples, grads, L, h, n, sigma, with_jac):
    nsteps = noise.shape[0]
    nnoise = noise.shape[1]
    npaths = X.shape[0]
    sq = sigma * np.sqrt(dt)
    bloc = np.empty(3)
    gloc = np.empty(9)
    Jtmp = np.empty((3, 3))
    for k in range(nsteps):
        for p in range(npaths):
            pn = p if nnoise > 1 else 0
            x, y, z = X[p, 0], X[p, 1], X[p, 2]
            outside = abs(x) > L or abs(y) > L or abs(z) > L
            if outside:
                for c in range(3):
                    bloc[c] = 0.0
                if with_jac:
                    for c in range(9):
                        gloc[c] = 0.0
            else:
                i0, fx = _interp_cell(x, L, h, n)
                j0, fy = _interp_cell(y, L, h, n)
                k0, fz = _interp_cell(z, L, h, n)
                for c in range(3):
                    bloc[c] = 0.0
                if with_jac:
                    for c in range(9):
                        gloc[c] = 0.0
                for corner in range(8):
                    hx = corner & 1
                    hy = (corner >> 1) & 1
                    hz = (corner >> 2) & 1
                    w = (fx if hx else 1.0 - fx) * (fy if hy else 1.0 - fy) * (fz if hz else 1.0 - fz)
                    ii = (i0 + hx) % n
                    jj = (j0 + hy) % n
                    kk = (k0 + hz) % n
                    for c in range(3):
                        bloc[c] += w * samples[ii, jj, kk, c]
                    if with_jac:
                        for c in range(9):
                            gloc[c] += w * grads[ii, jj, kk, c]
            if with_jac:
                # dJ/dt = -M J with M[a,c] = d b^a / d x_c = grads[c,a]
                for a in range(3):
                    for bcol in range(3):
                        acc = 0.0
                        for c in range(3):
                            acc += gloc[3 * c + a] * J[p, c, bcol]
                        Jtmp[a, bcol] = acc
                for a in range(3):
                    for bcol in range(3):
                        J[p, a, bcol] -= dt * Jtmp[a, bcol]
            for a in range(3):
                X[p, a] += -bloc[a] * dt + sq * noise[k, pn, a]
    return X


def _em_grid_chunk_np(X, J, noise, dt, samples, grads, L, h, n, sigma, with_jac):
    from .grid import multilinear_interpolate

    sq = sigma * np.sqrt(dt)
    for k in range(noise.shape[0]):
        b = multilinear_interpolate(samples, X, L, h, n)
        if with_jac:
            G = multilinear_interpolate(grads.reshape(grads.shape[:3] + (9,)), X, L, h, n)
            G = G.reshape(-1, 3, 3)  # G[p, r, c] = d_r b^c at X[p]
            M = np.swapaxes(G, 1, 2)  # M[p, a, c] = d_c b^a
            J -= dt * np.einsum("pac,pcb->pab", M, J)
        xi = noise[k] if noise.shape[1] > 1 else noise[k, :1]
        X += -b * dt + sq * xi
    return X


def em_grid_chunk(X, J, noise, dt, samples, grads, half_width, h, n, sigma, with_jac):
    """Advance grid-sampled-drift paths (d=3), optionally with Jacobian flows.

    samples: (n,n,n,3) drift values; grads: (n,n,n,3,3) with grads[...,r,c]
    = d_r b^c, or None when with_jac is False.  X and J are updated in place.
    """
    if backend.numba_active():
        g = grads.reshape(grads.shape[:3] + (9,)) if with_jac else np.zeros((1, 1, 1, 9))
        Jw = J if with_jac else np.zeros((1, 3, 3))
        return _em_grid_chunk_nb(
            X, Jw, noise, float(dt), np.ascontiguousarray(samples),
            np.ascontiguousarray(g), float(half_width), float(h), int(n),
            float(sigma), with_jac,
        )
    return _em_grid_chunk_np(X, J, noise, dt, samples, grads, half_width, h, n, sigma, with_jac)


# ---------------------------------------------------------------------------
# criticality probe: adaptive-dt hitting loop for the Hardy SDE
# ---------------------------------------------------------------------------

STATE_ACTIVE = 0
STATE_HIT = 1
STATE_EXPIRED = 2


@njit(cache=True, nogil=True)
def _probe_chunk_nb(X, t, mind, state, noise, dt0, beta, sign, r_cap, sigma, eps, T):
    nsteps = noise.shape[0]
    npaths, d = X.shape
    for k in range(nsteps):
        for p in range(npaths):
            if state[p] != STATE_ACTIVE:
                continue
            r2 = 0.0
            for a in range(d):
                r2 += X[p, a] * X[p, a]
            r = np.sqrt(r2)
            if r < mind[p]:
                mind[p] = r
            if r <= eps:
                state[p] = STATE_HIT
                continue
            if t[p] >= T:
                state[p] = STATE_EXPIRED
                continue
            dtp = dt0
            if beta > 0.0:
                lim = r2 / beta
                if lim < 1.0:
                    dtp = dt0 * lim
            rem = T - t[p]
            if dtp > rem:
                dtp = rem
            fac = _hardy_factor(r, beta, sign, r_cap)
            sq = sigma * np.sqrt(dtp)
            for a in range(d):
                X[p, a] += -fac * X[p, a] * dtp + sq * noise[k, p, a]
            t[p] += dtp
    return X


def _probe_chunk_np(X, t, mind, state, noise, dt0, beta, sign, r_cap, sigma, eps, T):
    for k in range(noise.shape[0]):
        act = state == STATE_ACTIVE
        if not np.any(act):
            break
        r = np.sqrt(np.sum(X * X, axis=1))
        mind[act] = np.minimum(mind[act], r[act])
        hit = act & (r <= eps)
        state[hit] = STATE_HIT
        act = act & ~hit
        expired = act & (t >= T)
        state[expired] = STATE_EXPIRED
        act = act & ~expired
        if not np.any(act):
            continue
        dtp = np.full(X.shape[0], dt0)
        if beta > 0.0:
            lim = r * r / beta
            dtp = np.where(lim < 1.0, dt0 * lim, dt0)
        dtp = np.minimum(dtp, T - t)
        rc = np.maximum(r, r_cap)
        fac = np.where(r > 0.0, sign * beta / np.where(r > 0.0, r * rc, 1.0), 0.0)
        sq = sigma * np.sqrt(dtp)
        step = -fac[:, None] * X * dtp[:, None] + sq[:, None] * noise[k]
        X[act] += step[act]
        t[act] += dtp[act]
    return X


def probe_chunk(X, t, mind, state, noise, dt0, beta, sign, r_cap, sigma, eps, T):
    """One chunk of the adaptive hitting loop; all state arrays updated in place."""
    args = (float(dt0), float(beta), float(sign), float(r_cap), float(sigma), float(eps), float(T))
    if backend.numba_active():
        return _probe_chunk_nb(X, t, mind, state, noise, *args)
    return _probe_chunk_np(X, t, mind, state, noise, *args)


def warmup():
    """Trigger JIT compilation of all kernels on tiny inputs."""
    if not backend.numba_active():
        return
    v = np.zeros((4, 4, 4))
    b = np.zeros((3, 4, 4, 4))
    advect_upwind(v, b, 1.0)
    flux_divergence(v, b, 1.0)
    samples = np.zeros((4, 4, 4, 3))
    grads = np.zeros((4, 4, 4, 3, 3))
    pts = np.zeros((2, 3))
    interp_vector(samples, pts, 1.0, 0.5, 4)
    X = np.zeros((2, 3))
    J = np.tile(np.eye(3), (2, 1, 1))
    noise = np.zeros((1, 2, 3))
    em_hardy_chunk(X.copy(), noise, 0.1, 1.0, 1.0, 0.01, 1.0)
    em_grid_chunk(X.copy(), J, noise, 0.1, samples, grads, 1.0, 0.5, 4, 1.0, True)
    probe_chunk(X.copy(), np.zeros(2), np.ones(2), np.zeros(2, dtype=np.int64),
                noise, 0.1, 1.0, 1.0, 0.01, 1.0, 1e-3, 1.0)
