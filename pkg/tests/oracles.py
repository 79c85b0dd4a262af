"""Independent reference implementations used only by the tests.

Each oracle takes a deliberately different route from the library code:
explicit loops instead of vectorised algebra, enumeration instead of
dynamic programming, scipy's general matrix square root or the spectrum
of a non-symmetric product instead of a symmetric eigendecomposition,
finite differences instead of autograd.
"""

import itertools
import math

import numpy as np
import scipy.linalg
import torch


def covariance_loop(x, y):
    xs = [float(v) for v in np.ravel(x)]
    ys = [float(v) for v in np.ravel(y)]
    m = len(xs)
    mx = sum(xs) / m
    my = sum(ys) / m
    return sum((a - mx) * (b - my) for a, b in zip(xs, ys)) / (m - 1)


def ssim_loop(x, y, c1, c2):
    """Global SSIM per channel of H x W x C arrays, averaged over channels."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    vals = []
    for c in range(x.shape[-1]):
        xs = x[..., c].ravel().tolist()
        ys = y[..., c].ravel().tolist()
        m = len(xs)
        mx, my = sum(xs) / m, sum(ys) / m
        vx = sum((a - mx) ** 2 for a in xs) / (m - 1)
        vy = sum((b - my) ** 2 for b in ys) / (m - 1)
        cxy = covariance_loop(xs, ys)
        vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return sum(vals) / len(vals)


def mse_loop(x, y):
    xs = np.ravel(np.asarray(x, dtype=np.float64)).tolist()
    ys = np.ravel(np.asarray(y, dtype=np.float64)).tolist()
    return sum((a - b) ** 2 for a, b in zip(xs, ys)) / len(xs)


def counting_report(pred, truth, n_classes=4):
    """Accuracy, macro P/R/F1 over present classes, MCC and kappa by counting."""
    n = len(truth)
    acc = sum(1 for p, t in zip(pred, truth) if p == t) / n
    present = sorted(set(truth))
    precs, recs, f1s = [], [], []
    for k in present:
        tp = sum(1 for p, t in zip(pred, truth) if p == k and t == k)
        fp = sum(1 for p, t in zip(pred, truth) if p == k and t != k)
        fn = sum(1 for p, t in zip(pred, truth) if p != k and t == k)
        pr = tp / (tp + fp) if tp + fp else 0.0
        rc = tp / (tp + fn) if tp + fn else 0.0
        precs.append(pr)
        recs.append(rc)
        f1s.append(2 * pr * rc / (pr + rc) if pr + rc else 0.0)
    # MCC as the correlation of one-hot indicator matrices
    def cov(a, b):
        total = 0.0
        for k in range(n_classes):
            ma = sum(1 for v in a if v == k) / n
            mb = sum(1 for v in b if v == k) / n
            total += sum(((va == k) - ma) * ((vb == k) - mb) for va, vb in zip(a, b)) / n
        return total

    den = math.sqrt(cov(pred, pred) * cov(truth, truth))
    mcc = cov(pred, truth) / den if den > 0 else 0.0
    po = acc
    pe = sum((sum(1 for t in truth if t == k) / n) * (sum(1 for p in pred if p == k) / n) for k in range(n_classes))
    kappa = (po - pe) / (1 - pe) if pe < 1 else 0.0
    return {
        "accuracy": acc,
        "precision": sum(precs) / len(precs),
        "recall": sum(recs) / len(recs),
        "f1": sum(f1s) / len(f1s),
        "mcc": mcc,
        "cohen_kappa": kappa,
    }


def piecewise_linear_area(xs, ys):
    """Exact area of the polyline: segment length times the midpoint value."""
    total = 0.0
    for i in range(len(xs) - 1):
        mid = 0.5 * (xs[i] + xs[i + 1])
        total += (xs[i + 1] - xs[i]) * float(np.interp(mid, xs, ys))
    return total


def _midranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def mw_enumeration(a, b):
    """(U of a, exact two-sided p) from every assignment of the pooled midranks."""
    pooled = list(a) + list(b)
    ranks = _midranks(pooled)
    na = len(a)
    u = sum(ranks[:na]) - na * (na + 1) / 2
    mu = na * (len(pooled) + 1) / 2
    obs = abs(sum(ranks[:na]) - mu)
    hits = total = 0
    for combo in itertools.combinations(range(len(pooled)), na):
        total += 1
        if abs(sum(ranks[i] for i in combo) - mu) >= obs - 1e-9:
            hits += 1
    return u, hits / total


def fid_sqrtm(m1, c1, m2, c2):
    m1, m2 = np.atleast_1d(m1), np.atleast_1d(m2)
    c1, c2 = np.atleast_2d(c1), np.atleast_2d(c2)
    root = scipy.linalg.sqrtm(c1 @ c2)
    return float(np.sum((m1 - m2) ** 2) + np.trace(c1) + np.trace(c2) - 2 * np.real(np.trace(root)))


def fid_product_eigs(m1, c1, m2, c2):
    """Trace term from the eigenvalues of the (non-symmetric) product c1 @ c2."""
    m1, m2 = np.atleast_1d(m1), np.atleast_1d(m2)
    c1, c2 = np.atleast_2d(c1), np.atleast_2d(c2)
    eig = np.linalg.eigvals(c1 @ c2)
    root_trace = float(np.sum(np.sqrt(np.clip(eig.real, 0.0, None))))
    return float(np.sum((m1 - m2) ** 2) + np.trace(c1) + np.trace(c2) - 2 * root_trace)


def central_fd_grad(loss_fn, params, eps=1e-6):
    """Central finite-difference gradient of ``loss_fn()`` for a list of float64 tensors."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + eps
                up = float(loss_fn())
                flat[i] = orig - eps
                down = float(loss_fn())
                flat[i] = orig
                gflat[i] = (up - down) / (2 * eps)
            grads.append(g)
    return grads


def relative_error(a, b):
    a = torch.cat([t.reshape(-1) for t in a])
    b = torch.cat([t.reshape(-1) for t in b])
    den = max(float(a.norm()), float(b.norm()), 1e-12)
    return float((a - b).norm()) / den
