"""Shared helpers: finite-difference references and kink-free random draws."""

import numpy as np

from varsolve.network import ResNetConfig, init_params, unflatten
from varsolve.sampling import sample_batch

KINK_MARGIN = 1e-3


def preactivations(cfg, theta, X):
    """All hidden pre-activations W_l h + b_l of the plain network at X."""
    p = unflatten(cfg, theta)
    h = X @ p.V.T
    out = []
    for W, b in zip(p.W, p.b):
        z = h @ W.T + b
        out.append(z)
        h = h + np.maximum(z, 0.0) ** 2
    return np.concatenate([z.reshape(-1) for z in out])


def kink_free(cfg, theta, *point_sets, margin=KINK_MARGIN):
    """True when no pre-activation lies within ``margin`` of the activation's kink."""
    return all(np.min(np.abs(preactivations(cfg, theta, X))) > margin
               for X in point_sets if len(X))


def draw_smooth_pair(cfg, rng, n_interior=8, n_face=2, n_aux=0, scale=1.0, exact_bc=False):
    """Draw (theta, batch) until the loss is smooth around theta.

    sigma(t) = max(t, 0)^2 has a jump in its second derivative at 0; a central
    difference that straddles it is not second-order accurate, so those draws
    are rejected rather than loosening the tolerance.
    """
    while True:
        theta = scale * init_params(cfg, rng)
        batch = sample_batch(cfg.input_dim, n_interior, n_face, rng, n_aux)
        sets = [batch.interior, *batch.aux_interior]
        if not exact_bc:
            sets.append(batch.boundary)
        if kink_free(cfg, theta, *sets):
            return theta, batch


def central_gradient(f, theta, step=1e-4):
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        g[i] = (f(theta + e) - f(theta - e)) / (2.0 * step)
    return g


def relative_error(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def small_config(d=2, width=8, depth=2):
    return ResNetConfig(d, width, depth)
