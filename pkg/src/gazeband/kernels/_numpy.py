"""Pure-numpy reference versions of the dense-layer kernels.

Same buffer layout and semantics as the compiled module; used when the
extension is unavailable or ``GAZEBAND_PURE_PYTHON`` is set.
"""

import numpy as np


def _shifted(x, off):
    """Return x[..., t + off] with zeros outside the valid range."""
    if off == 0:
        return x
    out = np.zeros_like(x)
    if off > 0:
        out[..., :-off] = x[..., off:]
    else:
        out[..., -off:] = x[..., :off]
    return out


def dense_layer_forward(buf, cin, w, bias, dilation):
    out_ch, _, ksize = w.shape
    if w.shape[1] != cin or cin + out_ch > buf.shape[1]:
        raise ValueError("weight shape does not match buffer layout")
    x = buf[:, :cin]
    half = ksize // 2
    acc = np.broadcast_to(bias[None, :, None], (buf.shape[0], out_ch, buf.shape[2])).copy()
    for k in range(ksize):
        acc += np.einsum("oc,bct->bot", w[:, :, k], _shifted(x, (k - half) * dilation))
    buf[:, cin:cin + out_ch] = np.maximum(acc, 0)


def dense_layer_backward(buf, dbuf, cin, w, dilation, dw, db):
    out_ch, _, ksize = w.shape
    if w.shape[1] != cin or cin + out_ch > buf.shape[1]:
        raise ValueError("weight shape does not match buffer layout")
    half = ksize // 2
    x = buf[:, :cin]
    g = np.where(buf[:, cin:cin + out_ch] > 0, dbuf[:, cin:cin + out_ch], 0)
    db += g.sum(axis=(0, 2))
    for k in range(ksize):
        off = (k - half) * dilation
        dw[:, :, k] += np.einsum("bot,bct->oc", g, _shifted(x, off))
        # out[t] reads x[t + off], so the input gradient is g shifted by -off
        dbuf[:, :cin] += _shifted(np.einsum("oc,bot->bct", w[:, :, k], g), -off)
