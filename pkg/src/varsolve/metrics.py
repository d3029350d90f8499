"""Discrete maximum-norm errors on the evaluation lattice."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import ConfigError, DegenerateNetwork, UndefinedRelativeError
from .problems import Family, rayleigh_from_values

REL_DENOMINATOR_TOL = 1e-10


@dataclass
class ErrorReport:
    err_abs_in: float
    err_rel_in: Optional[float]
    err_abs_bd: float
    err_rel_bd: Optional[float]
    rho_rel_err: Optional[float] = None
    epoch: int = 0
    loss: Optional[float] = None
    beta: Optional[float] = None
    lr: Optional[float] = None
    wall_s: Optional[float] = None

    def as_row(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def max_norm_error(u_dl, u_ref, mode="abs"):
    """max |u_dl - u_ref| (abs) or max |(u_dl - u_ref) / u_ref| (rel) over the given points."""
    u_dl = np.asarray(u_dl, dtype=np.float64)
    u_ref = np.asarray(u_ref, dtype=np.float64)
    if u_ref.size == 0:
        raise ConfigError("empty point set")
    diff = np.abs(u_dl - u_ref)
    if mode == "abs":
        return float(diff.max())
    if mode != "rel":
        raise ConfigError(f"unknown error mode {mode!r}")
    if np.min(np.abs(u_ref)) <= REL_DENOMINATOR_TOL:
        raise UndefinedRelativeError("reference vanishes on the point set; use absolute error")
    return float(np.max(diff / np.abs(u_ref)))


def _rel_or_none(u_dl, u_ref):
    try:
        return max_norm_error(u_dl, u_ref, "rel")
    except UndefinedRelativeError:
        return None


def solution_error(u_dl, u_ref, grid) -> ErrorReport:
    """Interior and boundary errors of nodal values on ``grid``."""
    inner = grid.interior_mask
    return ErrorReport(
        err_abs_in=max_norm_error(u_dl[inner], u_ref[inner]),
        err_rel_in=_rel_or_none(u_dl[inner], u_ref[inner]),
        err_abs_bd=max_norm_error(u_dl[~inner], u_ref[~inner]),
        err_rel_bd=_rel_or_none(u_dl[~inner], u_ref[~inner]),
    )


def _normalise(u, weights):
    norm = float(np.sqrt(np.sum(weights * u * u)))
    if norm < 1e-12:
        raise DegenerateNetwork(f"grid norm {norm:.3e} is degenerate")
    return u / norm


def eigen_error_values(u_dl, grad_t, u_ref, rho_ref, spec, grid) -> ErrorReport:
    """Eigenfunction errors after normalisation and sign alignment, plus eigenvalue error.

    ``grad_t`` is the input gradient of ``u_dl`` laid out (d, n).
    """
    w = grid.weights
    u_tilde = _normalise(u_dl, w)
    ref_tilde = _normalise(u_ref, w)
    if np.sum(u_dl * u_ref) < 0:
        u_tilde = -u_tilde
    inner = grid.interior_mask
    rho_dl = rayleigh_from_values(spec, grid, u_dl, grad_t)
    return ErrorReport(
        err_abs_in=max_norm_error(u_tilde[inner], ref_tilde[inner]),
        err_rel_in=None,
        err_abs_bd=max_norm_error(u_tilde[~inner], ref_tilde[~inner]),
        err_rel_bd=None,
        rho_rel_err=abs(rho_dl - rho_ref) / abs(rho_ref),
    )


class Reference:
    """Reference solution of a problem on a fixed evaluation grid."""

    def __init__(self, spec, grid, oracle_n=None):
        self.spec = spec
        self.grid = grid
        self.rho = None
        if spec.exact is not None:
            self.values = spec.exact(grid.points)
            self.rho = spec.exact_rho
        elif spec.reference is not None:
            from .oracle import interpolate

            solution = spec.reference(oracle_n or 128)
            self.values = interpolate(solution, grid.points)
            self.rho = solution.rho
        else:
            raise ConfigError(f"{spec.name} has neither an exact nor a reference solution")


def evaluate(net_u, theta_u, reference: Reference) -> ErrorReport:
    spec, grid = reference.spec, reference.grid
    if spec.family is Family.ELLIPTIC:
        return solution_error(np.asarray(net_u.value(theta_u, grid.points)), reference.values, grid)
    u, grad_t = net_u.value_and_grad(theta_u, grid.points)
    return eigen_error_values(u, grad_t, reference.values, reference.rho, spec, grid)


def eigen_error(net_u, theta_u, spec, grid, oracle_n=None) -> ErrorReport:
    if not spec.family.is_eigen:
        raise ConfigError(f"{spec.name} is not an eigenvalue problem")
    return evaluate(net_u, theta_u, Reference(spec, grid, oracle_n))
