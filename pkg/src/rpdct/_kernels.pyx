# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: component labeling, Moore tracing, SGD epochs.

Mirrors ``rpdct._fallback`` exactly in signatures and semantics.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport tanh
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef int RX[8]
cdef int RY[8]
RX[:] = [-1, -1, 0, 1, 1, 1, 0, -1]
RY[:] = [0, -1, -1, -1, 0, 1, 1, 1]


cdef inline int ring_index(int dx, int dy) nogil:
    cdef int i
    for i in range(8):
        if RX[i] == dx and RY[i] == dy:
            return i
    return -1


def label(cnp.ndarray mask_in, int connectivity):
    if connectivity != 4 and connectivity != 8:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    cdef const cnp.uint8_t[:, ::1] mask = np.ascontiguousarray(mask_in != 0, dtype=np.uint8)
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef int[:, ::1] labels = labels_arr
    cdef Py_ssize_t n = h * w
    cdef Py_ssize_t *stack = <Py_ssize_t *> malloc(max(n, 1) * sizeof(Py_ssize_t))
    if stack == NULL:
        raise MemoryError()
    cdef int count = 0
    cdef Py_ssize_t sp, p, x, y, nx, ny, sx, sy
    cdef int dx, dy
    try:
        with nogil:
            for sy in range(h):
                for sx in range(w):
                    if mask[sy, sx] == 0 or labels[sy, sx] != 0:
                        continue
                    count += 1
                    labels[sy, sx] = count
                    stack[0] = sy * w + sx
                    sp = 1
                    while sp > 0:
                        sp -= 1
                        p = stack[sp]
                        y = p // w
                        x = p - y * w
                        for dy in range(-1, 2):
                            for dx in range(-1, 2):
                                if dx == 0 and dy == 0:
                                    continue
                                if connectivity == 4 and dx != 0 and dy != 0:
                                    continue
                                nx = x + dx
                                ny = y + dy
                                if nx < 0 or ny < 0 or nx >= w or ny >= h:
                                    continue
                                if mask[ny, nx] != 0 and labels[ny, nx] == 0:
                                    labels[ny, nx] = count
                                    stack[sp] = ny * w + nx
                                    sp += 1
    finally:
        free(stack)
    return labels_arr, count


cdef inline bint fg(const cnp.uint8_t[:, ::1] mask, int x, int y) nogil:
    return 0 <= x < mask.shape[1] and 0 <= y < mask.shape[0] and mask[y, x] != 0


def moore_trace(cnp.ndarray mask_in, int sx, int sy, int bx, int by):
    cdef const cnp.uint8_t[:, ::1] mask = np.ascontiguousarray(mask_in != 0, dtype=np.uint8)
    cdef int h = mask.shape[0], w = mask.shape[1]
    cdef Py_ssize_t limit = 8 * <Py_ssize_t> h * w + 8
    cdef int k = ring_index(bx - sx, by - sy)
    if k < 0:
        raise ValueError("backtrack must be an 8-neighbour of the start")
    cdef int *xs = <int *> malloc((limit + 1) * sizeof(int))
    cdef int *ys = <int *> malloc((limit + 1) * sizeof(int))
    if xs == NULL or ys == NULL:
        free(xs)
        free(ys)
        raise MemoryError()
    cdef Py_ssize_t n = 1, it
    cdef int cx = sx, cy = sy, i, d, nx = 0, ny = 0, backx = 0, backy = 0
    cdef int fx = 0, fy = 0, fbx = 0, fby = 0
    cdef bint have_first = False, found, closed = False
    xs[0] = sx
    ys[0] = sy
    try:
        with nogil:
            for it in range(limit):
                found = False
                for i in range(1, 9):
                    d = (k + i) % 8
                    if fg(mask, cx + RX[d], cy + RY[d]):
                        nx = cx + RX[d]
                        ny = cy + RY[d]
                        d = (k + i - 1) % 8
                        backx = cx + RX[d]
                        backy = cy + RY[d]
                        found = True
                        break
                if not found:
                    closed = True
                    break
                if nx == sx and ny == sy and backx == bx and backy == by:
                    closed = True
                    break
                if not have_first:
                    have_first = True
                    fx = nx
                    fy = ny
                    fbx = backx
                    fby = backy
                elif nx == fx and ny == fy and backx == fbx and backy == fby:
                    if xs[n - 1] == sx and ys[n - 1] == sy:
                        n -= 1
                    closed = True
                    break
                xs[n] = nx
                ys[n] = ny
                n += 1
                cx = nx
                cy = ny
                k = ring_index(backx - cx, backy - cy)
        if not closed:
            raise RuntimeError("contour trace did not terminate")
        out = np.empty((n, 2), dtype=np.int32)
        for it in range(n):
            out[it, 0] = xs[it]
            out[it, 1] = ys[it]
    finally:
        free(xs)
        free(ys)
    return out


def sgd_epoch(
    double[:, ::1] w1,
    double[:, ::1] w2,
    double[:, ::1] v1,
    double[:, ::1] v2,
    const double[:, ::1] inputs,
    const double[:, ::1] targets,
    const cnp.int64_t[::1] order,
    double lr,
    double momentum,
):
    cdef Py_ssize_t ni = w1.shape[1] - 1, nh = w1.shape[0], no = w2.shape[0]
    cdef Py_ssize_t s, i, j, o, idx
    cdef double acc, e, sse = 0.0
    cdef double *hid = <double *> malloc((nh + 1) * sizeof(double))
    cdef double *d1 = <double *> malloc(nh * sizeof(double))
    cdef double *d2 = <double *> malloc(no * sizeof(double))
    if hid == NULL or d1 == NULL or d2 == NULL:
        free(hid)
        free(d1)
        free(d2)
        raise MemoryError()
    try:
        with nogil:
            for s in range(order.shape[0]):
                idx = order[s]
                for j in range(nh):
                    acc = w1[j, ni]
                    for i in range(ni):
                        acc = acc + w1[j, i] * inputs[idx, i]
                    hid[j] = tanh(acc)
                hid[nh] = 1.0
                for o in range(no):
                    acc = w2[o, nh]
                    for j in range(nh):
                        acc = acc + w2[o, j] * hid[j]
                    acc = tanh(acc)
                    e = acc - targets[idx, o]
                    sse = sse + e * e
                    d2[o] = e * (1.0 - acc * acc)
                for j in range(nh):
                    acc = 0.0
                    for o in range(no):
                        acc = acc + w2[o, j] * d2[o]
                    d1[j] = acc * (1.0 - hid[j] * hid[j])
                for o in range(no):
                    for j in range(nh + 1):
                        v2[o, j] = momentum * v2[o, j] - lr * d2[o] * hid[j]
                        w2[o, j] = w2[o, j] + v2[o, j]
                for j in range(nh):
                    for i in range(ni):
                        v1[j, i] = momentum * v1[j, i] - lr * d1[j] * inputs[idx, i]
                        w1[j, i] = w1[j, i] + v1[j, i]
                    v1[j, ni] = momentum * v1[j, ni] - lr * d1[j]
                    w1[j, ni] = w1[j, ni] + v1[j, ni]
    finally:
        free(hid)
        free(d1)
        free(d2)
    return sse
