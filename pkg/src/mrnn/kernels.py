"""Per-stream lagged bidirectional scan and its backpropagation-through-time.

Shapes: ``B`` records, ``T`` padded steps, ``D`` streams, ``H`` hidden units.

* ``z``: (B, T, D, 3) inputs ``[x, m, delta]`` (zero in padding)
* ``lengths``: (B,) true sequence lengths
* weights: ``fw_W``/``bw_W`` (D, H, H), ``fw_V``/``bw_V`` (D, H, 3),
  ``fw_c``/``bw_c`` (D, H), ``fw_U``/``bw_U`` (D, H), ``out_c`` (D,)

The forward state at step t sees only ``z[t-1]`` and the backward state only
``z[t+1]``, so the output at t never touches ``z[t]``. Both implementations
write exact zeros into padded steps, which keeps them bit-comparable up to
floating-point summation order.

``scan_forward``/``scan_backward`` dispatch to numba unless
``MRNN_DISABLE_NUMBA`` is set.
"""

import numpy as np

from ._accel import HAS_NUMBA, njit

PARAM_NAMES = ("fw_W", "fw_V", "fw_c", "bw_W", "bw_V", "bw_c", "fw_U", "bw_U", "out_c")


# ----------------------------------------------------------------- numpy path

def scan_forward_numpy(z, lengths, fw_W, fw_V, fw_c, bw_W, bw_V, bw_c, fw_U, bw_U, out_c):
    B, T, D, _ = z.shape
    H = fw_c.shape[1]
    hf = np.zeros((B, T, D, H))
    hb = np.zeros((B, T, D, H))
    steps = np.arange(T)
    valid = (steps[None, :] < lengths[:, None]).astype(np.float64)  # (B, T)

    prev_h = np.zeros((B, D, H))
    for t in range(T):
        a = fw_c[None]
        if t > 0:
            a = a + np.einsum("dij,bdj->bdi", fw_W, prev_h) + np.einsum("dij,bdj->bdi", fw_V, z[:, t - 1])
        h = np.maximum(a, 0.0) * valid[:, t, None, None]
        hf[:, t] = h
        prev_h = h

    next_h = np.zeros((B, D, H))
    for t in range(T - 1, -1, -1):
        a = bw_c[None]
        if t < T - 1:
            # state and input from t+1 only count while t+1 is inside the record
            cont = valid[:, t + 1, None, None]
            a = a + cont * (
                np.einsum("dij,bdj->bdi", bw_W, next_h) + np.einsum("dij,bdj->bdi", bw_V, z[:, t + 1])
            )
        h = np.maximum(a, 0.0) * valid[:, t, None, None]
        hb[:, t] = h
        next_h = h

    o = np.einsum("dh,btdh->btd", fw_U, hf) + np.einsum("dh,btdh->btd", bw_U, hb) + out_c
    xt = np.maximum(o, 0.0) * valid[:, :, None]
    return xt, hf, hb


def scan_backward_numpy(gx, z, lengths, xt, hf, hb, fw_W, fw_V, fw_c, bw_W, bw_V, bw_c, fw_U, bw_U, out_c):
    B, T, D, _ = z.shape
    valid = (np.arange(T)[None, :] < lengths[:, None]).astype(np.float64)
    go = gx * (xt > 0) * valid[:, :, None]  # (B, T, D)

    g_fw_U = np.einsum("btd,btdh->dh", go, hf)
    g_bw_U = np.einsum("btd,btdh->dh", go, hb)
    g_out_c = go.sum(axis=(0, 1))

    g_fw_W = np.zeros_like(fw_W)
    g_fw_V = np.zeros_like(fw_V)
    g_fw_c = np.zeros_like(fw_c)
    carry = np.zeros_like(hf[:, 0])
    for t in range(T - 1, -1, -1):
        gh = go[:, t, :, None] * fw_U[None] + carry
        ga = gh * (hf[:, t] > 0)
        g_fw_c += ga.sum(axis=0)
        if t > 0:
            g_fw_W += np.einsum("bdi,bdj->dij", ga, hf[:, t - 1])
            g_fw_V += np.einsum("bdi,bdj->dij", ga, z[:, t - 1])
            carry = np.einsum("dij,bdi->bdj", fw_W, ga)

    g_bw_W = np.zeros_like(bw_W)
    g_bw_V = np.zeros_like(bw_V)
    g_bw_c = np.zeros_like(bw_c)
    carry = np.zeros_like(hb[:, 0])
    for t in range(T):
        gh = go[:, t, :, None] * bw_U[None] + carry
        ga = gh * (hb[:, t] > 0)
        g_bw_c += ga.sum(axis=0)
        if t < T - 1:
            gc = ga * valid[:, t + 1, None, None]
            g_bw_W += np.einsum("bdi,bdj->dij", gc, hb[:, t + 1])
            g_bw_V += np.einsum("bdi,bdj->dij", gc, z[:, t + 1])
            carry = np.einsum("dij,bdi->bdj", bw_W, gc)

    return g_fw_W, g_fw_V, g_fw_c, g_bw_W, g_bw_V, g_bw_c, g_fw_U, g_bw_U, g_out_c


# ----------------------------------------------------------------- numba path

@njit
def _scan_forward_loops(z, lengths, fw_W, fw_V, fw_c, bw_W, bw_V, bw_c, fw_U, bw_U, out_c):
    B, T, D, K = z.shape
    H = fw_c.shape[1]
    hf = np.zeros((B, T, D, H))
    hb = np.zeros((B, T, D, H))
    xt = np.zeros((B, T, D))
    for b in range(B):
        L = lengths[b]
        for d in range(D):
            for t in range(L):
                for i in range(H):
                    a = fw_c[d, i]
                    if t > 0:
                        for j in range(H):
                            a += fw_W[d, i, j] * hf[b, t - 1, d, j]
                        for k in range(K):
                            a += fw_V[d, i, k] * z[b, t - 1, d, k]
                    hf[b, t, d, i] = a if a > 0.0 else 0.0
            for t in range(L - 1, -1, -1):
                for i in range(H):
                    a = bw_c[d, i]
                    if t < L - 1:
                        for j in range(H):
                            a += bw_W[d, i, j] * hb[b, t + 1, d, j]
                        for k in range(K):
                            a += bw_V[d, i, k] * z[b, t + 1, d, k]
                    hb[b, t, d, i] = a if a > 0.0 else 0.0
            for t in range(L):
                o = out_c[d]
                for i in range(H):
                    o += fw_U[d, i] * hf[b, t, d, i] + bw_U[d, i] * hb[b, t, d, i]
                xt[b, t, d] = o if o > 0.0 else 0.0
    return xt, hf, hb


@njit
def _scan_backward_loops(gx, z, lengths, xt, hf, hb, fw_W, fw_V, fw_c, bw_W, bw_V, bw_c, fw_U, bw_U, out_c):
    B, T, D, K = z.shape
    H = fw_c.shape[1]
    g_fw_W = np.zeros_like(fw_W)
    g_fw_V = np.zeros_like(fw_V)
    g_fw_c = np.zeros_like(fw_c)
    g_bw_W = np.zeros_like(bw_W)
    g_bw_V = np.zeros_like(bw_V)
    g_bw_c = np.zeros_like(bw_c)
    g_fw_U = np.zeros_like(fw_U)
    g_bw_U = np.zeros_like(bw_U)
    g_out_c = np.zeros_like(out_c)
    go = np.zeros(T)
    carry = np.zeros(H)
    ga = np.zeros(H)
    for b in range(B):
        L = lengths[b]
        for d in range(D):
            for t in range(L):
                go[t] = gx[b, t, d] if xt[b, t, d] > 0.0 else 0.0
                g_out_c[d] += go[t]
                for i in range(H):
                    g_fw_U[d, i] += go[t] * hf[b, t, d, i]
                    g_bw_U[d, i] += go[t] * hb[b, t, d, i]
            # forward chain, walked from the end
            for i in range(H):
                carry[i] = 0.0
            for t in range(L - 1, -1, -1):
                for i in range(H):
                    gh = go[t] * fw_U[d, i] + carry[i]
                    ga[i] = gh if hf[b, t, d, i] > 0.0 else 0.0
                    g_fw_c[d, i] += ga[i]
                if t > 0:
                    for i in range(H):
                        for j in range(H):
                            g_fw_W[d, i, j] += ga[i] * hf[b, t - 1, d, j]
                        for k in range(K):
                            g_fw_V[d, i, k] += ga[i] * z[b, t - 1, d, k]
                    for j in range(H):
                        s = 0.0
                        for i in range(H):
                            s += fw_W[d, i, j] * ga[i]
                        carry[j] = s
            # backward chain, walked from the start
            for i in range(H):
                carry[i] = 0.0
            for t in range(L):
                for i in range(H):
                    gh = go[t] * bw_U[d, i] + carry[i]
                    ga[i] = gh if hb[b, t, d, i] > 0.0 else 0.0
                    g_bw_c[d, i] += ga[i]
                if t < L - 1:
                    for i in range(H):
                        for j in range(H):
                            g_bw_W[d, i, j] += ga[i] * hb[b, t + 1, d, j]
                        for k in range(K):
                            g_bw_V[d, i, k] += ga[i] * z[b, t + 1, d, k]
                    for j in range(H):
                        s = 0.0
                        for i in range(H):
                            s += bw_W[d, i, j] * ga[i]
                        carry[j] = s
    return g_fw_W, g_fw_V, g_fw_c, g_bw_W, g_bw_V, g_bw_c, g_fw_U, g_bw_U, g_out_c


def scan_forward_loops(z, lengths, *params):
    return _scan_forward_loops(np.ascontiguousarray(z), np.asarray(lengths, dtype=np.int64), *params)


def scan_backward_loops(gx, z, lengths, xt, hf, hb, *params):
    return _scan_backward_loops(
        np.ascontiguousarray(gx), np.ascontiguousarray(z), np.asarray(lengths, dtype=np.int64), xt, hf, hb, *params
    )


if HAS_NUMBA:
    scan_forward = scan_forward_loops
    scan_backward = scan_backward_loops
else:
    scan_forward = scan_forward_numpy
    scan_backward = scan_backward_numpy
