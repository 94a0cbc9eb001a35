# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dilated 1-D convolution kernels for the dense embedder.

Layout convention shared with :mod:`gazeband.kernels._numpy`: a feature
buffer ``buf`` of shape (batch, channels, time) holds the network input in
its first channels and each layer appends its ReLU output after the
channels it read.  Kernel size is odd with "same" zero padding, so output
sample ``t`` reads ``x[t + (k - K//2) * dilation]``.
"""

cimport cython
from cython cimport floating

import numpy as np

DEF TILE = 512


def dense_layer_forward(floating[:, :, ::1] buf, Py_ssize_t cin,
                        floating[:, :, ::1] w, floating[::1] bias,
                        Py_ssize_t dilation):
    """Write relu(conv(buf[:, :cin])) into buf[:, cin:cin + out_ch]."""
    cdef Py_ssize_t B = buf.shape[0], T = buf.shape[2]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t half = K // 2
    cdef Py_ssize_t b, o, c, k, t, t0, t1, lo, hi, off
    cdef floating wv
    cdef floating* xrow
    cdef floating* arow
    if w.shape[1] != cin or cin + O > buf.shape[1]:
        raise ValueError("weight shape does not match buffer layout")
    acc_arr = np.empty((O, TILE), dtype=np.asarray(buf).dtype)
    cdef floating[:, ::1] acc = acc_arr
    with nogil:
        for b in range(B):
            t0 = 0
            while t0 < T:
                t1 = t0 + TILE
                if t1 > T:
                    t1 = T
                for o in range(O):
                    for t in range(t1 - t0):
                        acc[o, t] = bias[o]
                for c in range(cin):
                    for k in range(K):
                        off = (k - half) * dilation
                        lo = t0
                        if lo + off < 0:
                            lo = -off
                        hi = t1
                        if hi + off > T:
                            hi = T - off
                        if lo >= hi:
                            continue
                        xrow = &buf[b, c, 0]
                        for o in range(O):
                            wv = w[o, c, k]
                            arow = &acc[o, 0]
                            for t in range(lo, hi):
                                arow[t - t0] += wv * xrow[t + off]
                for o in range(O):
                    arow = &acc[o, 0]
                    xrow = &buf[b, cin + o, 0]
                    for t in range(t1 - t0):
                        xrow[t0 + t] = arow[t] if arow[t] > 0 else 0
                t0 = t1


def dense_layer_backward(floating[:, :, ::1] buf, floating[:, :, ::1] dbuf,
                         Py_ssize_t cin, floating[:, :, ::1] w,
                         Py_ssize_t dilation,
                         floating[:, :, ::1] dw, floating[::1] db):
    """Backpropagate through one dense layer.

    Reads the upstream gradient from ``dbuf[:, cin:cin + out_ch]``, masks it
    with the ReLU pattern stored in ``buf``, accumulates the input gradient
    into ``dbuf[:, :cin]`` and the parameter gradients into ``dw``/``db``.
    """
    cdef Py_ssize_t B = buf.shape[0], T = buf.shape[2]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t half = K // 2
    cdef Py_ssize_t b, o, c, k, t, lo, hi, off
    cdef floating wv, s
    cdef floating* grow
    cdef floating* xrow
    cdef floating* dxrow
    if w.shape[1] != cin or cin + O > buf.shape[1]:
        raise ValueError("weight shape does not match buffer layout")
    g_arr = np.empty((O, T), dtype=np.asarray(buf).dtype)
    cdef floating[:, ::1] g = g_arr
    with nogil:
        for b in range(B):
            for o in range(O):
                s = 0
                for t in range(T):
                    if buf[b, cin + o, t] > 0:
                        g[o, t] = dbuf[b, cin + o, t]
                    else:
                        g[o, t] = 0
                    s = s + g[o, t]
                db[o] += s
            for c in range(cin):
                xrow = &buf[b, c, 0]
                dxrow = &dbuf[b, c, 0]
                for k in range(K):
                    off = (k - half) * dilation
                    lo = 0
                    if off < 0:
                        lo = -off
                    hi = T
                    if off > 0:
                        hi = T - off
                    if lo >= hi:
                        continue
                    for o in range(O):
                        grow = &g[o, 0]
                        wv = w[o, c, k]
                        s = 0
                        for t in range(lo, hi):
                            s = s + grow[t] * xrow[t + off]
                            dxrow[t + off] += wv * grow[t]
                        dw[o, c, k] += s
