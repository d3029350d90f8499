"""Finite-difference reference solvers on the lattice {ih}^d, h = 1/n.

The operator -div(A grad u) + c u is discretised with the standard
(2d+1)-point stencil, the diffusion field taken at cell-face midpoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import cg, splu

from .errors import ConfigError, OracleConvergenceError
from .problems import Family, ProblemSpec, evaluate_coefficient
from .sampling import grid_points


@dataclass
class GridSolution:
    """Nodal values on the full lattice, shape (n+1,)*d, boundary included."""

    d: int
    n: int
    values: np.ndarray
    rho: Optional[float] = None
    iterations: int = 0
    energy_history: Optional[np.ndarray] = None

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def interior_values(self):
        return self.values[(slice(1, -1),) * self.d]

    def discrete_norm(self):
        return float(np.sqrt(self.h ** self.d * np.sum(self.values ** 2)))


def _lattice(d, n):
    grid = grid_points(d, 1.0 / n)
    return grid, grid.lattice_shape()


def assemble_operator(diffusion, potential, d, n):
    """Sparse matrix of -div(a grad .) + b on the full lattice (row-major nodes)."""
    h = 1.0 / n
    nodes = np.arange(n + 1) / n
    faces = (np.arange(n) + 0.5) / n
    # 1-D difference from nodes to faces
    D1 = sp.diags([-np.ones(n), np.ones(n)], [0, 1], shape=(n, n + 1)) / h
    I1 = sp.identity(n + 1, format="csr")
    total = None
    for axis in range(d):
        factors = [D1 if k == axis else I1 for k in range(d)]
        D = factors[0]
        for fac in factors[1:]:
            D = sp.kron(D, fac, format="csr")
        axes = [faces if k == axis else nodes for k in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        midpoints = np.stack([m.reshape(-1) for m in mesh], axis=-1)
        a = evaluate_coefficient(diffusion, midpoints, "diffusion")
        term = D.T @ sp.diags(a) @ D
        total = term if total is None else total + term
    mesh = np.meshgrid(*([nodes] * d), indexing="ij")
    points = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    total = total + sp.diags(evaluate_coefficient(potential, points, "potential"))
    return total.tocsr(), points


def _split(d, n):
    grid, shape = _lattice(d, n)
    inner = np.flatnonzero(grid.interior_mask)
    outer = np.flatnonzero(~grid.interior_mask)
    return grid, shape, inner, outer


def fd_poisson(spec: ProblemSpec, n: int) -> GridSolution:
    """Solve -div(A grad u) + c u = f, u = g by conjugate gradients."""
    if spec.family is not Family.ELLIPTIC:
        raise ConfigError(f"{spec.name} is not an elliptic problem")
    d = spec.d
    grid, shape, inner, outer = _split(d, n)
    L, points = assemble_operator(spec.A, spec.c, d, n)
    g = evaluate_coefficient(spec.g, points[outer], "g")
    rhs = evaluate_coefficient(spec.f, points[inner], "f") - L[inner][:, outer] @ g
    L_ii = L[inner][:, inner]
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    u, info = cg(L_ii, rhs, rtol=1e-10, atol=0.0, maxiter=10 * n * n, callback=count)
    if info != 0:
        raise OracleConvergenceError(f"CG did not converge in {10 * n * n} iterations")
    full = np.empty(len(points))
    full[inner] = u
    full[outer] = g
    return GridSolution(d, n, full.reshape(shape), iterations=iterations)


def fd_eigen_smallest(spec: ProblemSpec, n: int, tol=1e-10, max_iter=10_000) -> GridSolution:
    """Smallest eigenpair of -div(p grad u) + q u by inverse power iteration."""
    if spec.family is not Family.LINEAR_EIGEN:
        raise ConfigError(f"{spec.name} is not a linear eigenvalue problem")
    d = spec.d
    grid, shape, inner, outer = _split(d, n)
    L, points = assemble_operator(spec.p, spec.q, d, n)
    L_ii = L[inner][:, inner].tocsc()
    solve = splu(L_ii).solve
    u = np.ones(len(inner))
    rho = np.inf
    for it in range(1, max_iter + 1):
        w = solve(u)
        u = w / np.linalg.norm(w)
        rho_new = float(u @ (L_ii @ u))
        if abs(rho_new - rho) <= tol * abs(rho_new):
            rho = rho_new
            break
        rho = rho_new
    else:
        raise OracleConvergenceError(f"inverse iteration did not converge in {max_iter} steps")
    u = u / np.sqrt((1.0 / n) ** d * np.sum(u * u))
    if u.sum() < 0:
        u = -u
    full = np.zeros(len(points))
    full[inner] = u
    return GridSolution(d, n, full.reshape(shape), rho=rho, iterations=it)


def fd_gp_ground_state(spec: ProblemSpec, n: int, tol=1e-10, max_steps=1_000_000,
                       nonlinearity=1.0, record_energy=False) -> GridSolution:
    """Ground state of -div(A grad u) + V u + k u^3 = rho u by normalised gradient flow.

    Explicit imaginary-time steps u <- normalise(u - tau (L u + k u^3)) with
    tau = h^2 / 8, stopped when the energy
    h^d (u.Lu / 2 + k sum u^4 / 4) changes by less than ``tol``.
    Returns rho = h^d (u.Lu + k sum u^4).
    """
    if spec.family is not Family.NONLINEAR_EIGEN:
        raise ConfigError(f"{spec.name} is not a nonlinear eigenvalue problem")
    d = spec.d
    h = 1.0 / n
    vol = h ** d
    tau = h * h / 8.0
    grid, shape, inner, outer = _split(d, n)
    L, points = assemble_operator(spec.A, spec.V, d, n)
    L_ii = L[inner][:, inner]
    X = points[inner]
    u = np.prod(np.sin(np.pi * X), axis=-1)
    u /= np.sqrt(vol * np.sum(u * u))

    def energy(u):
        return vol * (0.5 * u @ (L_ii @ u) + 0.25 * nonlinearity * np.sum(u ** 4))

    history = [energy(u)] if record_energy else None
    e_old = energy(u)
    for step in range(1, max_steps + 1):
        u = u - tau * (L_ii @ u + nonlinearity * u ** 3)
        u /= np.sqrt(vol * np.sum(u * u))
        e_new = energy(u)
        if record_energy:
            history.append(e_new)
        if abs(e_new - e_old) < tol:
            break
        e_old = e_new
    else:
        raise OracleConvergenceError(f"gradient flow did not converge in {max_steps} steps")
    rho = float(vol * (u @ (L_ii @ u) + nonlinearity * np.sum(u ** 4)))
    full = np.zeros(len(points))
    full[inner] = u
    return GridSolution(d, n, full.reshape(shape), rho=rho, iterations=step,
                        energy_history=None if history is None else np.array(history))


def interpolate(solution: GridSolution, x):
    """Multilinear interpolation of a lattice solution at points of the closed cube."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[-1] != solution.d:
        raise ConfigError(f"expected {solution.d}-dimensional points, got {X.shape[-1]}")
    if np.any(X < 0.0) or np.any(X > 1.0):
        raise ConfigError("interpolation point outside the closed unit cube")
    axes = [np.arange(solution.n + 1) / solution.n] * solution.d
    values = RegularGridInterpolator(axes, solution.values, method="linear")(X)
    return float(values[0]) if single else values


def export_text(solution: GridSolution, path):
    """Plain-text export: header line, then one value per line (17 significant digits)."""
    rho = "" if solution.rho is None else f"{solution.rho:.17g}"
    header = f"varsolve-oracle v1; d={solution.d}; n={solution.n}; rho={rho}"
    body = "\n".join(f"{v:.17g}" for v in solution.values.reshape(-1))
    Path(path).write_text(header + "\n" + body + "\n")
    return Path(path)


def load_text(path) -> GridSolution:
    lines = Path(path).read_text().split("\n")
    meta = dict(item.strip().partition("=")[::2] for item in lines[0].split(";")[1:])
    d, n = int(meta["d"]), int(meta["n"])
    values = np.array([float(t) for t in lines[1:] if t.strip()])
    rho = float(meta["rho"]) if meta.get("rho") else None
    return GridSolution(d, n, values.reshape((n + 1,) * d), rho=rho)
