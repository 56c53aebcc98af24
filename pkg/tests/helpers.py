"""Shared test oracles."""

import numpy as np

from csiloc import nn

FD_EPS = 1e-5


def _loss_at(model, x, y, kind, mask_seed):
    out = nn.forward(model, x, "train", np.random.default_rng(mask_seed))[0]
    return nn.loss(kind, out, y)


def finite_difference_check(model, x, y, kind, mask_seed=0, eps=FD_EPS):
    """Largest relative error between backprop and central differences.

    Covers every weight, bias and input element. Dropout masks are held fixed by
    re-seeding the generator on every forward pass.
    """
    out, cache = nn.forward(model, x, "train", np.random.default_rng(mask_seed))
    grads, gx = nn.backward(model, cache, nn.loss_grad(kind, out, y))
    analytic = [g for pair in grads for g in pair]
    worst = 0.0

    def compare(a, n):
        return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), 1e-6)))

    for p, a in zip(model.parameters(), analytic):
        numeric = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + eps
            up = _loss_at(model, x, y, kind, mask_seed)
            p[i] = old - eps
            down = _loss_at(model, x, y, kind, mask_seed)
            p[i] = old
            numeric[i] = (up - down) / (2 * eps)
        worst = max(worst, compare(a, numeric))

    x = np.array(x, dtype=np.float64)
    numeric = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + eps
        up = _loss_at(model, x, y, kind, mask_seed)
        x[i] = old - eps
        down = _loss_at(model, x, y, kind, mask_seed)
        x[i] = old
        numeric[i] = (up - down) / (2 * eps)
    return max(worst, compare(gx, numeric))


def random_net(rng, head, depth=None):
    """A small random MLP with mixed activations and dropout, plus a batch and target."""
    depth = int(rng.integers(0, 4)) if depth is None else depth
    n_in = int(rng.integers(2, 7))
    n_out = int(rng.integers(2, 6))
    layers = []
    width = n_in
    for _ in range(depth):
        h = int(rng.integers(3, 10))
        layers.append(nn.DenseLayer(rng.normal(size=(h, width)) / np.sqrt(width), rng.normal(size=h) * 0.1,
                                    str(rng.choice(["relu", "identity"])), float(rng.choice([0.0, 0.3]))))
        width = h
    layers.append(nn.DenseLayer(rng.normal(size=(n_out, width)) / np.sqrt(width), rng.normal(size=n_out) * 0.1,
                                "identity", 0.0))
    model = nn.MlpModel(layers, head, n_in)
    batch = int(rng.integers(1, 6))
    x = rng.normal(size=(batch, n_in))
    if head == "softmax":
        return model, x, nn.one_hot(rng.integers(0, n_out, batch), n_out), "cross_entropy"
    return model, x, rng.normal(size=(batch, n_out)), "mse"


def brute_force_knn(features, norm_mean, norm_scale, query, k):
    """Exhaustive scan in pure Python: k nearest by (distance, record index)."""
    q = [(float(v) - m) / s for v, m, s in zip(query, norm_mean, norm_scale)]
    scored = []
    for i, row in enumerate(features):
        p = [(float(v) - m) / s for v, m, s in zip(row, norm_mean, norm_scale)]
        scored.append((sum((a - b) ** 2 for a, b in zip(p, q)) ** 0.5, i))
    scored.sort()
    return [i for _, i in scored[:k]], [d for d, _ in scored[:k]]


def knn_fixture(rng, n=1000, width=6, n_rp=25, duplicates=50):
    """Random map with some exactly duplicated rows, so ties occur."""
    from csiloc import dataset as ds

    feats = rng.normal(size=(n, width))
    src = rng.integers(0, n, duplicates)
    dst = rng.integers(0, n, duplicates)
    feats[dst] = feats[src]
    rp = rng.integers(0, n_rp, n)
    rp_xy = rng.uniform(0, 10, (n_rp, 2))
    fmap = ds.from_arrays(ds.Layout(width // 2), rp_xy[rp], rp, np.arange(n), feats)
    return fmap


def in_hull(points, hull_points, tol=1e-9):
    """Point-in-convex-hull test against the facet inequalities of scipy's hull."""
    from scipy.spatial import ConvexHull

    eq = ConvexHull(hull_points).equations
    pts = np.atleast_2d(points)
    return (pts @ eq[:, :-1].T + eq[:, -1] <= tol).all(axis=1)


def iid_windows(rng, n, s, bounds, sigma):
    """Windows of truth plus i.i.d. Gaussian noise, truths uniform in the bounds."""
    xmin, ymin, xmax, ymax = bounds
    truths = np.column_stack([rng.uniform(xmin, xmax, n), rng.uniform(ymin, ymax, n)])
    return truths[:, None, :] + sigma * rng.normal(size=(n, s, 2)), truths


def rmse(estimates, truths):
    return float(np.sqrt((((np.asarray(estimates) - truths) ** 2).sum(axis=-1)).mean()))
