"""Independent brute-force oracles the test suite checks the library against.

Everything here is deliberately naive (nested loops, homogeneous-matrix
inversion via numpy, scalar recurrences) and shares no code with the
library kernels it verifies.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_loop(x, kernels, bias):
    """Hand convolution: quadruple loop over output positions and taps."""
    n, h, w, cin = x.shape
    kh, kw, _, cout = kernels.shape
    oh, ow = h - kh + 1, w - kw + 1
    out = np.zeros((n, oh, ow, cout))
    for s in range(n):
        for i in range(oh):
            for j in range(ow):
                for o in range(cout):
                    acc = bias[o]
                    for di in range(kh):
                        for dj in range(kw):
                            for ci in range(cin):
                                acc += x[s, i + di, j + dj, ci] * kernels[di, dj, ci, o]
                    out[s, i, j, o] = acc
    return out


def matmul_loop(a, b):
    m, k = a.shape
    k2, p = b.shape
    assert k == k2
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def finite_diff_grad(f, x, eps=1e-5):
    """Central-difference gradient of scalar f with respect to array x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def max_rel_err(analytic, numeric, floor=1e-8):
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def adam_scalar(grad_fn, theta0, steps, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scripted scalar Adam; returns the parameter value after each step."""
    theta, m, v = float(theta0), 0.0, 0.0
    path = []
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        theta = theta - lr * mhat / (math.sqrt(vhat) + eps)
        path.append(theta)
    return path


def bilinear_resize_loop(img, out_h, out_w):
    """Per-pixel bilinear resize with half-pixel-centered sampling."""
    h, w, c = img.shape
    out = np.zeros((out_h, out_w, c))
    for oy in range(out_h):
        sy = min(max((oy + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for ox in range(out_w):
            sx = min(max((ox + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            for ch in range(c):
                top = img[y0, x0, ch] * (1 - fx) + img[y0, x1, ch] * fx
                bot = img[y1, x0, ch] * (1 - fx) + img[y1, x1, ch] * fx
                out[oy, ox, ch] = top * (1 - fy) + bot * fy
    return out


def affine_warp_loop(img, rotation_deg, shift_x, shift_y, shear_deg, zoom):
    """Per-pixel affine warp oracle.

    Builds the forward map as homogeneous matrices composed zoom -> shear ->
    rotate -> shift about the image center, inverts it numerically, and
    samples bilinearly with edge clamping.  Coordinates are (x=column,
    y=row); the shear is a plain x-shear by tan(shear_deg).
    """
    h, w, c = img.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    th = math.radians(rotation_deg)
    sh = math.tan(math.radians(shear_deg))
    zoom_m = np.array([[zoom, 0, 0], [0, zoom, 0], [0, 0, 1]])
    shear_m = np.array([[1, sh, 0], [0, 1, 0], [0, 0, 1]])
    rot_m = np.array(
        [[math.cos(th), -math.sin(th), 0], [math.sin(th), math.cos(th), 0], [0, 0, 1]]
    )
    shift_m = np.array([[1, 0, shift_x * w], [0, 1, shift_y * h], [0, 0, 1]])
    forward = shift_m @ rot_m @ shear_m @ zoom_m
    inverse = np.linalg.inv(forward)

    out = np.zeros_like(img)
    for r in range(h):
        for col in range(w):
            q = np.array([col - cx, r - cy, 1.0])
            p = inverse @ q
            sxp = min(max(p[0] + cx, 0.0), w - 1.0)
            syp = min(max(p[1] + cy, 0.0), h - 1.0)
            x0, y0 = int(math.floor(sxp)), int(math.floor(syp))
            x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
            fx, fy = sxp - x0, syp - y0
            for ch in range(c):
                top = img[y0, x0, ch] * (1 - fx) + img[y0, x1, ch] * fx
                bot = img[y1, x0, ch] * (1 - fx) + img[y1, x1, ch] * fx
                out[r, col, ch] = min(max(top * (1 - fy) + bot * fy, 0.0), 1.0)
    return out


def confusion_counts_loop(predictions, truths, positive):
    """Four explicit counters over prediction/truth pairs."""
    tp = fp = fn = tn = 0
    for p, t in zip(predictions, truths):
        if p == positive and t == positive:
            tp += 1
        elif p == positive and t != positive:
            fp += 1
        elif p != positive and t == positive:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn
