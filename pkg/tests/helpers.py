"""Independent oracles shared by the test modules.

Everything here is written directly from the defining formulas (double
loops, quadrature, naive Gram sums) so it stays independent of the code
paths under test.
"""

from __future__ import annotations

import numpy as np

from kdequant.core import LabelledDataset


def gauss_kernel_value(x, mu, h):
    """Isotropic Gaussian density N(x | mu, h^2 I), computed naively."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    d = x.shape[-1]
    sq = float(((x - mu) ** 2).sum())
    return np.exp(-sq / (2.0 * h * h)) / (h**d * (2.0 * np.pi) ** (d / 2.0))


def kde_density_bruteforce(refs, queries, h):
    """Plain double-loop KDE density evaluation."""
    refs = np.atleast_2d(refs)
    queries = np.atleast_2d(queries)
    out = np.zeros(queries.shape[0])
    for qi, q in enumerate(queries):
        total = 0.0
        for r in refs:
            total += gauss_kernel_value(q, r, h)
        out[qi] = total / refs.shape[0]
    return out


def gmm_density_on_grid(grid_points, ref_sets, weights, h):
    """Density of a weighted mixture of KDEs at grid points.

    ref_sets is a list of (m_i, D) arrays; component i has weight
    weights[i] spread uniformly over its references.
    """
    grid_points = np.atleast_2d(grid_points)
    dens = np.zeros(grid_points.shape[0])
    for w, refs in zip(weights, ref_sets):
        refs = np.atleast_2d(refs)
        if w == 0:
            continue
        d2 = ((grid_points[:, None, :] - refs[None, :, :]) ** 2).sum(axis=2)
        d = refs.shape[1]
        k = np.exp(-d2 / (2 * h * h)) / (h**d * (2 * np.pi) ** (d / 2))
        dens += w * k.mean(axis=1)
    return dens


def grid_1d(ref_sets, h, pad=10.0, nodes=20001):
    lo = min(np.min(r) for r in ref_sets) - pad * h
    hi = max(np.max(r) for r in ref_sets) + pad * h
    return np.linspace(lo, hi, nodes)


def quadrature_f_divergence_1d(p_refs, q_refs, h, generator_fn, nodes=20001, pad=10.0):
    """Trapezoid quadrature of the integral of f(p/q) q over the real line."""
    xs = grid_1d([p_refs, q_refs], h, pad, nodes)
    grid = xs[:, None]
    p = gmm_density_on_grid(grid, [p_refs], [1.0], h)
    q = gmm_density_on_grid(grid, [q_refs], [1.0], h)
    tiny = 1e-300
    vals = generator_fn(np.maximum(p, tiny) / np.maximum(q, tiny)) * q
    return float(np.trapezoid(vals, xs))


def quadrature_cs_divergence(p_ref_sets, p_weights, q_refs, h, nodes_1d=1601, pad=8.0):
    """Trapezoid quadrature of the Cauchy-Schwarz divergence between a
    mixture of KDEs and a single KDE, in 1 or 2 dimensions."""
    q_refs = np.atleast_2d(q_refs)
    all_sets = [np.atleast_2d(r) for r in p_ref_sets] + [q_refs]
    dim = q_refs.shape[1]
    lo = min(float(np.min(r)) for r in all_sets) - pad * h
    hi = max(float(np.max(r)) for r in all_sets) + pad * h
    xs = np.linspace(lo, hi, nodes_1d)
    if dim == 1:
        grid = xs[:, None]
        p = gmm_density_on_grid(grid, p_ref_sets, p_weights, h)
        q = gmm_density_on_grid(grid, [q_refs], [1.0], h)
        ipq = np.trapezoid(p * q, xs)
        ipp = np.trapezoid(p * p, xs)
        iqq = np.trapezoid(q * q, xs)
    elif dim == 2:
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        grid = np.column_stack([gx.ravel(), gy.ravel()])
        p = gmm_density_on_grid(grid, p_ref_sets, p_weights, h).reshape(gx.shape)
        q = gmm_density_on_grid(grid, [q_refs], [1.0], h).reshape(gx.shape)

        def integrate(z):
            return np.trapezoid(np.trapezoid(z, xs, axis=1), xs)

        ipq = integrate(p * q)
        ipp = integrate(p * p)
        iqq = integrate(q * q)
    else:
        raise ValueError("only 1-d and 2-d quadrature supported")
    return float(-np.log(ipq / np.sqrt(ipp * iqq)))


def gaussian_blobs(means, scale, counts, seed, shuffle=False):
    """Class-conditional Gaussian dataset with exact per-class counts."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for c, k in enumerate(counts):
        feats.append(rng.normal(means[c], scale, size=(int(k), means.shape[1])))
        labels.append(np.full(int(k), c, dtype=int))
    X = np.vstack(feats)
    y = np.concatenate(labels)
    if shuffle:
        order = rng.permutation(len(y))
        X, y = X[order], y[order]
    return LabelledDataset(X, y, means.shape[0])


def bayes_posteriors_two_gaussians(x, mu0, mu1, sigma, beta):
    """Exact posteriors for a two-component 1-d Gaussian mixture prior beta."""
    x = np.asarray(x, dtype=float).ravel()
    l0 = beta[0] * np.exp(-((x - mu0) ** 2) / (2 * sigma**2))
    l1 = beta[1] * np.exp(-((x - mu1) ** 2) / (2 * sigma**2))
    total = l0 + l1
    return np.column_stack([l0 / total, l1 / total])


# Printed counterexample bags: three posterior rows each, three classes.
BAGS_N3_A = np.array(
    [[0.1, 0.2, 0.7], [0.1, 0.1, 0.8], [0.2, 0.3, 0.5]]
)
BAGS_N3_B = np.array(
    [[0.1, 0.3, 0.6], [0.1, 0.2, 0.7], [0.2, 0.1, 0.7]]
)

# Four-class bags whose class-wise histograms coincide exactly while the
# joint structure differs.
BAGS_N4_A = np.array(
    [[0.1, 0.2, 0.3, 0.4], [0.2, 0.3, 0.4, 0.1], [0.3, 0.4, 0.1, 0.2]]
)
BAGS_N4_B = np.array(
    [[0.1, 0.3, 0.4, 0.2], [0.3, 0.2, 0.1, 0.4], [0.2, 0.4, 0.3, 0.1]]
)
