"""Reference computations the tests compare against, written without the package."""

import numpy as np


def fd_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar f() w.r.t. array x (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def brute_metrics(preds, truths, n_classes):
    """Per-class precision/recall/F1 by counting pairs directly."""
    prec, rec, f1 = [], [], []
    for c in range(n_classes):
        tp = sum(1 for p, t in zip(preds, truths) if p == c and t == c)
        pp = sum(1 for p in preds if p == c)
        ap = sum(1 for t in truths if t == c)
        pc = tp / pp if pp else 0.0
        rc = tp / ap if ap else 0.0
        fc = 2 * pc * rc / (pc + rc) if pc + rc else 0.0
        prec.append(pc)
        rec.append(rc)
        f1.append(fc)
    acc = sum(1 for p, t in zip(preds, truths) if p == t) / len(preds)
    return acc, prec, rec, f1
