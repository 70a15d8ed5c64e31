"""Pure-numpy reference kernels; used when the compiled core is unavailable."""
import numpy as np

from .operators import act_eval, act_grad, nodal_eval, nodal_grads, pool_eval, pool_grad

JACOBI_TOL = 1e-14


def gop_forward(y, w, b, nodal, pool, act):
    """y: (B, N), w: (N, H), b: (H,) -> out (B, H), z (B, N, H), x (B, H)."""
    z = nodal_eval(nodal, w[None, :, :], y[:, :, None])
    x = pool_eval(pool, z, axis=1) + b
    return act_eval(act, x), z, x


def gop_backward(y, w, z, x, dout, nodal, pool, act):
    dx = dout * act_grad(act, x)
    dz = pool_grad(pool, z, axis=1) * dx[:, None, :]
    dnodal_dw, dnodal_dy = nodal_grads(nodal, w[None, :, :], y[:, :, None])
    dw = (dz * dnodal_dw).sum(axis=0)
    dy = (dz * dnodal_dy).sum(axis=2)
    db = dx.sum(axis=0)
    return dy, dw, db


def jacobi_eig(a, v, max_sweeps):
    """Cyclic Jacobi on symmetric ``a`` (in place); accumulates rotations into ``v``.

    Returns the number of sweeps used, or -1 if the budget ran out.
    """
    n = a.shape[0]
    scale = np.sqrt((a * a).sum())
    if scale == 0.0:
        return 0
    for sweep in range(max_sweeps):
        off = np.sqrt(max((a * a).sum() - (np.diag(a) ** 2).sum(), 0.0))
        if off <= JACOBI_TOL * scale:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q]
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :]
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    off = np.sqrt(max((a * a).sum() - (np.diag(a) ** 2).sum(), 0.0))
    return max_sweeps if off <= JACOBI_TOL * scale else -1
