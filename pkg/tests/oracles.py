"""Independent reference implementations used as test oracles.

Deliberately naive: morphology via padded shifts, per-pixel window scans,
flood fill, exhaustive matchings. None of these share code with the package
implementations they check.
"""

from __future__ import annotations

import itertools

import numpy as np

_OFFSETS8 = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
_OFFSETS4 = [(-1, 0), (1, 0), (0, -1), (0, 1)]


def _shifted(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """mask translated by (dy, dx), zeros shifted in."""
    h, w = mask.shape
    out = np.zeros_like(mask)
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[ys, xs] = mask[ys_src, xs_src]
    return out


def brute_dilate(mask: np.ndarray, iters: int, element: str = "square") -> np.ndarray:
    offsets = _OFFSETS8 if element == "square" else _OFFSETS4
    out = np.asarray(mask, dtype=bool).copy()
    for _ in range(iters):
        acc = out.copy()
        for dy, dx in offsets:
            acc |= _shifted(out, dy, dx)
        out = acc
    return out


def brute_erode(mask: np.ndarray, iters: int, element: str = "square") -> np.ndarray:
    offsets = _OFFSETS8 if element == "square" else _OFFSETS4
    out = np.asarray(mask, dtype=bool).copy()
    for _ in range(iters):
        acc = out.copy()
        for dy, dx in offsets:
            acc &= _shifted(out, dy, dx)
        out = acc
    return out


def chebyshev_dilate(mask: np.ndarray, distance: int) -> np.ndarray:
    """Set every pixel within Chebyshev distance of a set pixel (brute force)."""
    mask = np.asarray(mask, dtype=bool)
    out = mask.copy()
    for dy in range(-distance, distance + 1):
        for dx in range(-distance, distance + 1):
            out |= _shifted(mask, dy, dx)
    return out


def alg1_tertiary(
    labels: np.ndarray,
    dilate_iters: int = 2,
    erode_iters: int = 2,
    contact: int = 2,
    element: str = "square",
) -> np.ndarray:
    """Direct per-pixel transliteration of the tertiary-target construction."""
    labels = np.asarray(labels)
    h, w = labels.shape
    out = np.zeros((h, w), dtype=np.uint8)
    background = labels == 0
    for cid in np.unique(labels):
        if cid == 0:
            continue
        mask = labels == cid
        dilated = brute_dilate(mask, dilate_iters, element) & background
        eroded = brute_erode(mask, erode_iters, element)
        band = mask & ~eroded
        out[dilated] = 1
        out[mask] = 2
        for y, x in zip(*np.nonzero(band)):
            y0, y1 = max(0, y - contact), min(h, y + contact + 1)
            x0, x1 = max(0, x - contact), min(w, x + contact + 1)
            window = labels[y0:y1, x0:x1]
            if np.any((window > 0) & (window != cid)):
                out[y, x] = 1
    return out


def flood_components(binary: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """Connected components by explicit flood fill, ids in raster order."""
    binary = np.asarray(binary, dtype=bool)
    offsets = _OFFSETS4 if connectivity == 4 else _OFFSETS8
    h, w = binary.shape
    out = np.zeros((h, w), dtype=np.int32)
    next_id = 1
    for y in range(h):
        for x in range(w):
            if binary[y, x] and out[y, x] == 0:
                stack = [(y, x)]
                out[y, x] = next_id
                while stack:
                    cy, cx = stack.pop()
                    for dy, dx in offsets:
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and binary[ny, nx] and out[ny, nx] == 0:
                            out[ny, nx] = next_id
                            stack.append((ny, nx))
                next_id += 1
    return out


def fd_check(f, arrays, grads, rng, n_probes=10, h=1e-5, floor=1e-3):
    """Compare analytic grads with central finite differences at random coords.

    f() recomputes the scalar under the current (mutated) array values.
    Returns the worst relative error over all probes.
    """
    worst = 0.0
    for arr, grad in zip(arrays, grads):
        flat = arr.ravel()
        gflat = np.asarray(grad).ravel()
        k = min(n_probes, flat.size)
        for idx in rng.choice(flat.size, size=k, replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = f()
            flat[idx] = orig - h
            f_minus = f()
            flat[idx] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(gflat[idx] - fd) / max(abs(gflat[idx]), abs(fd), floor)
            worst = max(worst, err)
    return worst


def reference_adamw(theta0, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8, wd=0.01):
    """Scalar AdamW trajectory written independently of the package.

    theta_{t+1} = theta_t - lr * (mhat / (sqrt(vhat) + eps) + wd * theta_t)
    """
    theta = float(theta0)
    m = 0.0
    v = 0.0
    history = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        theta = theta - lr * (mhat / (np.sqrt(vhat) + eps) + wd * theta)
        history.append(theta)
    return history


def best_gated_matching(cost: np.ndarray, candidates: np.ndarray):
    """Exhaustive maximum-cardinality, minimum-cost matching over candidate
    pairs. Rows/cols small (<= 6). Returns a set of (row, col) pairs."""
    na, nb = cost.shape
    best = (0, 0.0, frozenset())

    def consider(pairs):
        nonlocal best
        size = len(pairs)
        total = sum(cost[i, j] for i, j in pairs)
        if size > best[0] or (size == best[0] and total < best[1]):
            best = (size, total, frozenset(pairs))

    rows = list(range(na))
    for k in range(min(na, nb), -1, -1):
        for row_subset in itertools.combinations(rows, k):
            for col_perm in itertools.permutations(range(nb), k):
                pairs = list(zip(row_subset, col_perm))
                if all(candidates[i, j] for i, j in pairs):
                    consider(pairs)
        if best[0] == k and k > 0:
            break  # maximum cardinality found; smaller sizes cannot beat it
    return best[2]
