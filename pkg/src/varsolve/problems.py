"""Variational problem families and their Monte Carlo loss estimators.

Three families on the unit cube, each with a Dirichlet constraint B v = g:

* ``ELLIPTIC``: -div(A grad u) + c u = f, u = g on the boundary.
* ``LINEAR_EIGEN``: -div(p grad u) + q u = rho u, u = 0 on the boundary.
* ``NONLINEAR_EIGEN``: -div(A grad u) + V u + u^3 = rho u, u = 0, ||u|| = 1.

Every estimator is written against arrays *or* taped variables, so the same
expression is used for training (under a :class:`~varsolve.diffengine.Tape`)
and for plain evaluation. The multiplier always enters as its values on the
boundary batch; passing ``None`` means mu = 0, i.e. the penalty method.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .diffengine import sqrt, value_of
from .errors import ConfigError, DegenerateNetwork, NumericFailure
from .network import ExactBCNetwork, exact_bc_network  # noqa: F401  (re-export)

DEGENERATE_TOL = 1e-12


class Family(str, enum.Enum):
    ELLIPTIC = "elliptic"
    LINEAR_EIGEN = "linear_eigen"
    NONLINEAR_EIGEN = "nonlinear_eigen"

    @property
    def is_eigen(self):
        return self is not Family.ELLIPTIC


def constant(value):
    return lambda X: np.full(len(X), float(value))


ONE = constant(1.0)
ZERO = constant(0.0)


@dataclass
class ProblemSpec:
    """Coefficients of one problem instance; all handles map (n, d) -> (n,).

    ``A`` and ``p`` are scalar diffusion fields (the matrix is field * I).
    ``exact`` is the exact solution if known; eigen families also carry
    ``exact_rho`` or a ``reference`` hook ``n -> GridSolution``.
    """

    name: str
    family: Family
    d: int
    A: Callable = ONE
    c: Callable = ZERO
    f: Callable = ZERO
    g: Callable = ZERO
    p: Callable = ONE
    q: Callable = ZERO
    V: Callable = ZERO
    exact: Optional[Callable] = None
    exact_rho: Optional[float] = None
    reference: Optional[Callable] = None
    lr_base: float = 1e-3

    def diffusion(self, X):
        field = self.p if self.family is Family.LINEAR_EIGEN else self.A
        return evaluate_coefficient(field, X, "diffusion")

    def potential(self, X):
        if self.family is Family.LINEAR_EIGEN:
            return evaluate_coefficient(self.q, X, "q")
        if self.family is Family.NONLINEAR_EIGEN:
            return evaluate_coefficient(self.V, X, "V")
        return evaluate_coefficient(self.c, X, "c")

    def boundary_data(self, X):
        if self.family.is_eigen:
            return np.zeros(len(X))
        return evaluate_coefficient(self.g, X, "g")


def evaluate_coefficient(fn, X, label="coefficient"):
    values = np.asarray(fn(X), dtype=np.float64)
    bad = ~np.isfinite(values)
    if np.any(bad):
        raise NumericFailure(f"non-finite {label} at {X[bad][:3].tolist()}", points=X[bad])
    return values


def _grad_sq(grad_t):
    # grad_t is laid out (d, n)
    return (grad_t * grad_t).sum(axis=0)


def _check_normaliser(den):
    if float(value_of(den)) < DEGENERATE_TOL:
        raise DegenerateNetwork(
            f"mean of v^2 over the normalisation batch is {float(value_of(den)):.3e}; "
            "restart with a different seed")


# -- estimators on evaluated values -----------------------------------------------

def elliptic_estimator(A, c, f, v, grad_t, v_bd, g_bd, mu_bd, beta, omega, gamma):
    """|Omega| E[A|grad v|^2/2 + c v^2/2 - f v] - |Gamma| E[mu (v-g)] + beta/2 |Gamma| E[(v-g)^2]."""
    energy = omega * (0.5 * A * _grad_sq(grad_t) + 0.5 * c * v * v - f * v).mean()
    r = v_bd - g_bd
    if mu_bd is None:
        mu_bd = np.zeros(np.shape(value_of(r)))
    return energy - gamma * (mu_bd * r).mean() + 0.5 * beta * gamma * (r * r).mean()


def linear_eigen_estimator(p, q, v, grad_t, v_norm, v_bd, mu_bd, beta, omega, gamma):
    den = (v_norm * v_norm).mean()
    _check_normaliser(den)
    rayleigh = (p * _grad_sq(grad_t) + q * v * v).mean() / den
    if mu_bd is None:
        mu_bd = np.zeros(np.shape(value_of(v_bd)))
    multiplier = gamma * (mu_bd * v_bd).mean() / sqrt(omega * den)
    penalty = beta * gamma * (v_bd * v_bd).mean() / (2.0 * omega * den)
    return rayleigh - multiplier + penalty


def nonlinear_eigen_estimator(A, V, v, grad_t, v2, v3, v_bd, mu_bd, beta, omega, gamma):
    den = (v2 * v2).mean()
    _check_normaliser(den)
    quadratic = (A * _grad_sq(grad_t) + V * v * v).mean() / den
    v_sq = v * v
    quartic = (v_sq * v_sq).mean() / (omega * (v2 * v2 * v3 * v3).mean())
    if mu_bd is None:
        mu_bd = np.zeros(np.shape(value_of(v_bd)))
    multiplier = gamma * (mu_bd * v_bd).mean() / sqrt(omega * den)
    penalty = beta * gamma * (v_bd * v_bd).mean() / (2.0 * omega * den)
    return quadratic + quartic - multiplier + penalty


# -- network-level losses -----------------------------------------------------

def lagrangian(spec: ProblemSpec, net_u, theta_u, batch, beta, mu_bd=None):
    """Augmented Lagrangian estimator for ``spec.family`` on one batch.

    ``mu_bd`` are the multiplier values at ``batch.boundary`` (array, taped
    variable, or None for mu = 0).
    """
    omega, gamma = batch.omega_measure, batch.gamma_measure
    X = batch.interior
    v, grad_t = net_u.value_and_grad(theta_u, X)
    v_bd = net_u.value(theta_u, batch.boundary)
    if spec.family is Family.ELLIPTIC:
        return elliptic_estimator(
            spec.diffusion(X), spec.potential(X), evaluate_coefficient(spec.f, X, "f"),
            v, grad_t, v_bd, spec.boundary_data(batch.boundary), mu_bd, beta, omega, gamma)
    if spec.family is Family.LINEAR_EIGEN:
        if len(batch.aux_interior) < 1:
            raise ConfigError("linear eigen loss needs an independent normalisation batch")
        v_norm = net_u.value(theta_u, batch.aux_interior[0])
        return linear_eigen_estimator(
            spec.diffusion(X), spec.potential(X), v, grad_t, v_norm, v_bd, mu_bd,
            beta, omega, gamma)
    if len(batch.aux_interior) < 2:
        raise ConfigError("nonlinear eigen loss needs two independent auxiliary batches")
    v2 = net_u.value(theta_u, batch.aux_interior[0])
    v3 = net_u.value(theta_u, batch.aux_interior[1])
    return nonlinear_eigen_estimator(
        spec.diffusion(X), spec.potential(X), v, grad_t, v2, v3, v_bd, mu_bd,
        beta, omega, gamma)


def _multiplier_values(net_lam, theta_lam, boundary):
    if theta_lam is None:
        return None
    return net_lam.value(theta_lam, boundary)


def lagrangian_elliptic(spec, net_u, theta_u, net_lam, theta_lam, batch, beta):
    if spec.family is not Family.ELLIPTIC:
        raise ConfigError(f"{spec.name} is not an elliptic problem")
    return lagrangian(spec, net_u, theta_u, batch, beta,
                      _multiplier_values(net_lam, theta_lam, batch.boundary))


def lagrangian_linear_eigen(spec, net_u, theta_u, net_lam, theta_lam, batch, beta):
    if spec.family is not Family.LINEAR_EIGEN:
        raise ConfigError(f"{spec.name} is not a linear eigenvalue problem")
    return lagrangian(spec, net_u, theta_u, batch, beta,
                      _multiplier_values(net_lam, theta_lam, batch.boundary))


def lagrangian_nonlinear_eigen(spec, net_u, theta_u, net_lam, theta_lam, batch, beta):
    if spec.family is not Family.NONLINEAR_EIGEN:
        raise ConfigError(f"{spec.name} is not a nonlinear eigenvalue problem")
    return lagrangian(spec, net_u, theta_u, batch, beta,
                      _multiplier_values(net_lam, theta_lam, batch.boundary))


def penalty_objective(spec, net_u, theta_u, batch, beta):
    """The augmented Lagrangian with the multiplier fixed to zero."""
    return lagrangian(spec, net_u, theta_u, batch, beta, None)


# -- multiplier projection ------------------------------------------------------

def estimate_norm(net_u, theta_u, X, omega=1.0):
    """Monte Carlo estimate of ||v||_{L^2(Omega)} from interior samples X."""
    v = value_of(net_u.value(theta_u, X))
    norm = float(np.sqrt(omega * np.mean(v * v)))
    if norm < DEGENERATE_TOL:
        raise DegenerateNetwork(f"network norm {norm:.3e} is degenerate")
    return norm


def constraint_residual(spec, net_u, theta_u, boundary, norm=None):
    """B v - g on boundary points; for eigen families B v is v / ||v||."""
    v = value_of(net_u.value(theta_u, boundary))
    if spec.family.is_eigen:
        if norm is None:
            raise ConfigError("eigen families need ||v_k|| for the constraint residual")
        return v / norm
    return v - spec.boundary_data(boundary)


def multiplier_target(mu_k, residual, beta, sign=-1):
    """mu_k - beta (B v_k - g); ``sign=+1`` gives the ablation variant."""
    return mu_k + sign * beta * residual


def j_lambda(net_lam, theta_nu, mu_k, residual, boundary, beta, sign=-1):
    """|Gamma| E[(nu - target)^2] with target = mu_k - beta (B v_k - g).

    ``mu_k`` and ``residual`` are frozen values at ``boundary``.
    """
    gamma = 2.0 * boundary.shape[-1]
    target = multiplier_target(mu_k, residual, beta, sign)
    diff = net_lam.value(theta_nu, boundary) - target
    return gamma * (diff * diff).mean()


# -- eigenvalue from a trained network ------------------------------------------

def rayleigh_from_values(spec, grid, u, grad_t):
    """Rayleigh identity by trapezoid quadrature on the lattice.

    Linear: int(p|grad u~|^2 + q u~^2); nonlinear: int(A|grad u~|^2 + V u~^2 + u~^4),
    with u~ = u / ||u||.
    """
    w = grid.weights
    norm = float(np.sqrt(np.sum(w * u * u)))
    if norm < DEGENERATE_TOL:
        raise DegenerateNetwork(f"norm of u on the grid is {norm:.3e}")
    ut = u / norm
    gsq = np.sum(grad_t * grad_t, axis=0) / norm ** 2
    X = grid.points
    value = spec.diffusion(X) * gsq + spec.potential(X) * ut * ut
    if spec.family is Family.NONLINEAR_EIGEN:
        value = value + ut ** 4
    elif spec.family is not Family.LINEAR_EIGEN:
        raise ConfigError(f"{spec.name} has no eigenvalue")
    return float(np.sum(w * value))


def rayleigh_estimate(net_u, theta_u, spec, grid):
    u, grad_t = net_u.value_and_grad(theta_u, grid.points)
    return rayleigh_from_values(spec, grid, u, grad_t)


# -- built-in benchmark problems ---------------------------------------------------

def _poisson(d):
    two_pi = 2.0 * np.pi

    def exact(X):
        return np.sum(np.sin(two_pi * X) + 1.25, axis=-1)

    def source(X):
        return two_pi ** 2 * np.sum(np.sin(two_pi * X), axis=-1)

    return ProblemSpec(f"poisson{d}d", Family.ELLIPTIC, d, f=source, g=exact, exact=exact,
                       lr_base=1e-3)


def _eigen(d):
    def exact(X):
        return np.prod(np.sin(np.pi * (X - 1.0)), axis=-1)

    return ProblemSpec(f"eigen{d}d", Family.LINEAR_EIGEN, d, exact=exact,
                       exact_rho=d * np.pi ** 2, lr_base=1e-3)


def _gp(d):
    def potential(X):
        return np.sum(X * X, axis=-1)

    spec = ProblemSpec(f"gp{d}d", Family.NONLINEAR_EIGEN, d, V=potential, lr_base=5e-4)

    def reference(n):
        from .oracle import fd_gp_ground_state

        return fd_gp_ground_state(spec, n)

    spec.reference = functools.lru_cache(maxsize=4)(reference)
    return spec


_BUILDERS = {
    "poisson2d": lambda: _poisson(2),
    "poisson3d": lambda: _poisson(3),
    "eigen2d": lambda: _eigen(2),
    "eigen3d": lambda: _eigen(3),
    "gp2d": lambda: _gp(2),
    "gp3d": lambda: _gp(3),
}

BUILTIN_NAMES = tuple(_BUILDERS)


@functools.lru_cache(maxsize=None)
def builtin(name: str) -> ProblemSpec:
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise ConfigError(
            f"unknown problem {name!r}; choose from {', '.join(BUILTIN_NAMES)}",
            key="problem") from None

