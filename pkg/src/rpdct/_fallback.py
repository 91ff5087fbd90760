"""Pure-Python/numpy versions of the hot kernels.

Same signatures and semantics as the compiled ``_kernels`` module. They are
used when the extension is not built or when ``RPDCT_FORCE_PYTHON`` is set.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

# 8-ring around a pixel, clockwise as displayed (row 0 at top), from West.
RING = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))
_RING_INDEX = {d: i for i, d in enumerate(RING)}

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def label(mask: np.ndarray, connectivity: int) -> tuple[np.ndarray, int]:
    """Label connected nonzero pixels of ``mask`` in raster order, from 1."""
    if connectivity not in _STRUCTURES:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    labels, count = ndimage.label(mask, structure=_STRUCTURES[connectivity])
    return labels.astype(np.int32), int(count)


def moore_trace(mask: np.ndarray, sx: int, sy: int, bx: int, by: int) -> np.ndarray:
    """Moore-neighbour trace with Jacob's stopping criterion.

    Neighbours are scanned clockwise starting after the backtrack pixel
    ``(bx, by)``, which must be a background 8-neighbour of the start.
    Out-of-image pixels count as background. Returns an ``(n, 2)`` int array of
    ``(x, y)`` points; the start is not repeated at the end.
    """
    h, w = mask.shape

    def fg(x: int, y: int) -> bool:
        return 0 <= x < w and 0 <= y < h and mask[y, x] != 0

    start = (sx, sy)
    b0 = (bx, by)
    c = start
    k = _RING_INDEX[(bx - sx, by - sy)]
    points = [start]
    first_state = None
    # Each (pixel, backtrack) state occurs at most once per cycle.
    limit = 8 * h * w + 8
    for _ in range(limit):
        nxt = None
        for i in range(1, 9):
            dx, dy = RING[(k + i) % 8]
            if fg(c[0] + dx, c[1] + dy):
                nxt = (c[0] + dx, c[1] + dy)
                px, py = RING[(k + i - 1) % 8]
                back = (c[0] + px, c[1] + py)
                break
        if nxt is None:
            break  # isolated pixel
        if nxt == start and back == b0:
            break  # Jacob's criterion
        state = (nxt, back)
        if first_state is None:
            first_state = state
        elif state == first_state:
            # Re-entered the start in a different manner; the cycle closed.
            if points[-1] == start:
                points.pop()
            break
        points.append(nxt)
        c = nxt
        k = _RING_INDEX[(back[0] - c[0], back[1] - c[1])]
    else:
        raise RuntimeError("contour trace did not terminate")
    return np.asarray(points, dtype=np.int32).reshape(-1, 2)


def sgd_epoch(
    w1: np.ndarray,
    w2: np.ndarray,
    v1: np.ndarray,
    v2: np.ndarray,
    inputs: np.ndarray,
    targets: np.ndarray,
    order: np.ndarray,
    lr: float,
    momentum: float,
) -> float:
    """One pass of per-sample momentum SGD on a two-layer tanh network.

    Weights ``w1`` (hidden x inputs+1) and ``w2`` (outputs x hidden+1) and the
    velocities are updated in place. Returns the summed squared error measured
    on each sample just before its update.
    """
    nh = w1.shape[0]
    sse = 0.0
    for idx in order:
        x = inputs[idx]
        t = targets[idx]
        hid = np.tanh(w1[:, :-1] @ x + w1[:, -1])
        out = np.tanh(w2[:, :-1] @ hid + w2[:, -1])
        err = out - t
        sse += float(err @ err)
        d2 = err * (1.0 - out * out)
        d1 = (w2[:, :nh].T @ d2) * (1.0 - hid * hid)
        v2 *= momentum
        v2[:, :-1] -= lr * np.outer(d2, hid)
        v2[:, -1] -= lr * d2
        v1 *= momentum
        v1[:, :-1] -= lr * np.outer(d1, x)
        v1[:, -1] -= lr * d1
        w2 += v2
        w1 += v1
    return sse
