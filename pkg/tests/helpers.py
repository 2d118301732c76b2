"""Random instances and slow reference solvers shared by the tests."""

import itertools

import numpy as np

from seqlab.model import delta_feature, hamming_loss, make_pair, n_features


def random_pair(rng, k, L, d, density=0.5):
    tokens = [[t for t in range(d) if rng.random() < density] for _ in range(L)]
    return make_pair(tokens, rng.integers(0, k, size=L))


def random_data(rng, n, k, d, lengths=(1, 4), density=0.5):
    return [random_pair(rng, k, int(rng.integers(lengths[0], lengths[1] + 1)), d, density) for _ in range(n)]


def random_weights(rng, k, d, scale=1.0):
    return rng.normal(0.0, scale, n_features(k, d))


def central_differences(f, w, h=1e-5):
    g = np.zeros_like(w)
    for j in range(w.shape[0]):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def project_simplex(v):
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u - css / np.arange(1, v.size + 1) > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def enumerated_svm_dual(data, lam, k, d, iters=20000):
    """Minimum of the quadratic dual over every labeling of every example.

    Accelerated projected gradient on the product of simplices; returns
    ``(dual value, w)``.
    """
    cols, losses, blocks = [], [], []
    for pair in data:
        start = len(cols)
        for y in itertools.product(range(k), repeat=len(pair.y)):
            cols.append(delta_feature(pair, y, k, d).to_dense())
            losses.append(hamming_loss(pair.y, y))
        blocks.append((start, len(cols)))
    F = np.array(cols).T
    l = np.array(losses, dtype=float)

    def value(a):
        v = F @ a
        return v @ v / (2 * lam) - l @ a

    def grad(a):
        return F.T @ (F @ a) / lam - l

    def proj(a):
        return np.concatenate([project_simplex(a[s:e]) for s, e in blocks])

    step = lam / max(np.linalg.norm(F, 2) ** 2, 1e-12)
    a = proj(np.ones(len(cols)))
    z, t = a.copy(), 1.0
    for _ in range(iters):
        a_new = proj(z - step * grad(z))
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z = a_new + (t - 1) / t_new * (a_new - a)
        if value(a_new) > value(a):  # restart keeps the iteration monotone
            z, t_new = a.copy(), 1.0
            a_new = a
        a, t = a_new, t_new
    return value(a), F @ a / lam
