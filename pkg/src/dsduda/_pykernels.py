"""Pure NumPy implementations of the hot kernels.

Used when the compiled extension ``_ckernels`` is unavailable, or when
``DSDUDA_KERNELS=python`` is set. Signatures match the compiled module.
"""

import numpy as np


def fft_inplace(re, im, tw_re, tw_im):
    """Iterative radix-2 decimation-in-time FFT over the rows of ``re``/``im``.

    ``re`` and ``im`` are C-contiguous float64 arrays of shape (rows, n), n a
    power of two. ``tw_re``/``tw_im`` hold exp(-2*pi*i*k/n) for k < n/2.
    """
    n = re.shape[1]
    if n == 1:
        return
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((np.arange(n) >> b) & 1) << (bits - 1 - b)
    re[:] = re[:, rev]
    im[:] = im[:, rev]
    size = 2
    while size <= n:
        half = size // 2
        step = n // size
        wr = tw_re[: half * step : step]
        wi = tw_im[: half * step : step]
        r = re.reshape(re.shape[0], n // size, size)
        i = im.reshape(im.shape[0], n // size, size)
        ar, ai = r[:, :, :half].copy(), i[:, :, :half].copy()
        br, bi = r[:, :, half:], i[:, :, half:]
        tr = br * wr - bi * wi
        ti = br * wi + bi * wr
        r[:, :, :half] = ar + tr
        i[:, :, :half] = ai + ti
        r[:, :, half:] = ar - tr
        i[:, :, half:] = ai - ti
        size *= 2


def _sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


def _active(lengths, t):
    """Rows still running at step t; lengths are sorted in descending order."""
    return int(np.count_nonzero(lengths > t))


def lstm_forward(xp, w_hh, lengths):
    """Run a single-layer LSTM over time with zero initial state.

    xp: (B, T, 4H) input projections with bias already added, gate order
    i, f, g, o. ``lengths`` (descending) marks how many steps each row runs;
    outputs past a row's length are zero. Returns hidden states, cell states
    and post-activation gates.
    """
    B, T, G = xp.shape
    H = G // 4
    hs = np.zeros((B, T, H))
    cs = np.zeros((B, T, H))
    gates = np.zeros((B, T, G))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        nb = _active(lengths, t)
        a = xp[:nb, t] + h[:nb] @ w_hh
        ig = _sigmoid(a[:, :H])
        fg = _sigmoid(a[:, H:2 * H])
        gg = np.tanh(a[:, 2 * H:3 * H])
        og = _sigmoid(a[:, 3 * H:])
        c[:nb] = fg * c[:nb] + ig * gg
        h[:nb] = og * np.tanh(c[:nb])
        gates[:nb, t, :H] = ig
        gates[:nb, t, H:2 * H] = fg
        gates[:nb, t, 2 * H:3 * H] = gg
        gates[:nb, t, 3 * H:] = og
        hs[:nb, t] = h[:nb]
        cs[:nb, t] = c[:nb]
    return hs, cs, gates


def lstm_backward(dhs, hs, cs, gates, w_hh, lengths):
    """Backpropagate through :func:`lstm_forward`.

    Returns (dxp, dw_hh): gradients w.r.t. the input projections and the
    recurrent weight matrix. Entries of dxp past a row's length are zero.
    """
    B, T, H = hs.shape
    dxp = np.zeros((B, T, 4 * H))
    dw_hh = np.zeros_like(w_hh)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        nb = _active(lengths, t)
        ig = gates[:nb, t, :H]
        fg = gates[:nb, t, H:2 * H]
        gg = gates[:nb, t, 2 * H:3 * H]
        og = gates[:nb, t, 3 * H:]
        c_prev = cs[:nb, t - 1] if t > 0 else np.zeros((nb, H))
        dh = dhs[:nb, t] + dh_next[:nb]
        tc = np.tanh(cs[:nb, t])
        dc = dc_next[:nb] + dh * og * (1.0 - tc * tc)
        da = dxp[:nb, t]
        da[:, :H] = dc * gg * ig * (1.0 - ig)
        da[:, H:2 * H] = dc * c_prev * fg * (1.0 - fg)
        da[:, 2 * H:3 * H] = dc * ig * (1.0 - gg * gg)
        da[:, 3 * H:] = dh * tc * og * (1.0 - og)
        dc_next[:nb] = dc * fg
        if t > 0:
            dw_hh += hs[:nb, t - 1].T @ da
        dh_next[:nb] = da @ w_hh.T
    return dxp, dw_hh
