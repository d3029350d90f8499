"""Training drivers: ALDL, the penalty baseline (PMDL) and SGDA."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .diffengine import value_and_grad
from .errors import ConfigError, DegenerateNetwork, NumericFailure
from .metrics import ErrorReport, Reference, evaluate
from .network import ExactBCNetwork, ResNet, ResNetConfig, init_params, zero_params
from .optimizer import AdamState, adam_step, lr_at
from .problems import (Family, builtin, constraint_residual, estimate_norm, j_lambda,
                       lagrangian, penalty_objective)
from .sampling import grid_points, make_streams, sample_batch, sample_boundary, sample_interior

log = logging.getLogger(__name__)

METHODS = ("aldl", "pmdl", "sgda", "refnet")


@dataclass
class TrainConfig:
    """All knobs of one training run. ``None`` means "use the problem default"."""

    problem: str = "poisson2d"
    method: str = "aldl"
    beta: float = 1e2
    alpha: float = 1.0
    epochs: int = 500
    epochs_u: int = 100
    epochs_lambda: int = 100
    pmdl_steps: int = 50000
    batch_interior: Optional[int] = None
    boundary_points_per_face: Optional[int] = None
    norm_batch: Optional[int] = None
    seed: int = 0
    lr_base: Optional[float] = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay_total_steps: Optional[int] = 50000
    lr_decay_factor: float = 0.01
    adam_reset: bool = False
    multiplier_init: str = "random"
    multiplier_sign: str = "minus"
    sgda_ratio: int = 1
    sgda_ascent_scale: float = 1.0
    eval_every: int = 100
    evaluate: bool = True
    grid_h: float = 2.0 ** -6
    oracle_n: Optional[int] = None
    width: int = 50
    depth: int = 6
    multiplier_width: int = 50
    multiplier_depth: int = 2

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}", key="method")
        builtin(self.problem)
        if not self.beta > 0 and self.method != "refnet":
            raise ConfigError("beta must be positive", key="beta")
        if self.alpha < 1:
            raise ConfigError("alpha must be >= 1", key="alpha")
        for key in ("epochs", "epochs_u", "epochs_lambda", "pmdl_steps", "sgda_ratio"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be non-negative", key=key)
        for key in ("batch_interior", "boundary_points_per_face", "norm_batch",
                    "oracle_n", "eval_every", "lr_decay_total_steps"):
            value = getattr(self, key)
            if value is not None and value < 1:
                raise ConfigError(f"{key} must be positive", key=key)
        if self.multiplier_init not in ("random", "zero"):
            raise ConfigError("multiplier_init must be 'random' or 'zero'", key="multiplier_init")
        if self.multiplier_sign not in ("minus", "plus"):
            raise ConfigError("multiplier_sign must be 'minus' or 'plus'", key="multiplier_sign")
        if self.lr_base is not None and not self.lr_base > 0:
            raise ConfigError("lr_base must be positive", key="lr_base")
        if self.sgda_ascent_scale < 0:
            raise ConfigError("sgda_ascent_scale must be non-negative", key="sgda_ascent_scale")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class TrainResult:
    theta_u: np.ndarray
    theta_lambda: Optional[np.ndarray]
    records: list
    beta_final: float
    wall_time: float
    adam_steps: int
    config: TrainConfig
    primal_cfg: ResNetConfig = None
    multiplier_cfg: Optional[ResNetConfig] = None

    @property
    def final(self) -> ErrorReport:
        return self.records[-1]


class _Run:
    """State shared by the drivers: problem, networks, streams, optimisers."""

    def __init__(self, cfg: TrainConfig, exact_bc=False):
        self.cfg = cfg
        self.spec = spec = builtin(cfg.problem)
        d = spec.d
        self.d = d
        self.n_interior = cfg.batch_interior or (512 if d == 2 else 2048)
        self.n_face = cfg.boundary_points_per_face or (64 if d == 2 else 256)
        self.n_norm = cfg.norm_batch or 4 * self.n_interior
        self.n_aux = {Family.ELLIPTIC: 0, Family.LINEAR_EIGEN: 1, Family.NONLINEAR_EIGEN: 2}[spec.family]
        self.lr_base = cfg.lr_base or spec.lr_base
        self.streams = make_streams(cfg.seed)

        self.primal_cfg = ResNetConfig(d, cfg.width, cfg.depth)
        self.multiplier_cfg = ResNetConfig(d, cfg.multiplier_width, cfg.multiplier_depth)
        self.net_u = (ExactBCNetwork if exact_bc else ResNet)(self.primal_cfg)
        self.net_lam = ResNet(self.multiplier_cfg)
        self.theta_u = init_params(self.primal_cfg, self.streams["init_primal"])
        if cfg.multiplier_init == "zero":
            self.theta_mu = zero_params(self.multiplier_cfg)
        else:
            self.theta_mu = init_params(self.multiplier_cfg, self.streams["init_multiplier"])
        self.adam_u = self._fresh_adam(self.theta_u.size)
        self.adam_mu = self._fresh_adam(self.theta_mu.size)
        self.done_u = self.done_mu = 0

        self.reference = None
        if cfg.evaluate:
            self.reference = Reference(spec, grid_points(d, cfg.grid_h), cfg.oracle_n)
        self.records = []
        self.train_seconds = 0.0
        self.steps = 0
        self.last_loss = None

    def _fresh_adam(self, size):
        c = self.cfg
        return AdamState.zeros(size, c.adam_beta1, c.adam_beta2, c.adam_eps)

    def step_budgets(self):
        """Adam steps each network takes over the whole run: (primal, multiplier)."""
        c = self.cfg
        if c.method == "aldl":
            return c.epochs * c.epochs_u, c.epochs * c.epochs_lambda
        if c.method == "sgda":
            iterations = c.epochs * (c.epochs_u + c.epochs_lambda) // (1 + c.sgda_ratio)
            return iterations, iterations * c.sgda_ratio
        return c.pmdl_steps, 0

    def lr(self, state, horizon=None, done=0):
        """Decay by ``lr_decay_factor`` over ``lr_decay_total_steps``; ``None`` uses ``horizon``.

        ``done`` counts updates made before the moments in ``state`` were last reset.
        """
        c = self.cfg
        horizon = c.lr_decay_total_steps or horizon or 1
        return lr_at(done + state.t, self.lr_base, c.lr_decay_factor, horizon)

    def lr_u(self):
        return self.lr(self.adam_u, self.step_budgets()[0], self.done_u)

    def lr_mu(self):
        return self.lr(self.adam_mu, self.step_budgets()[1], self.done_mu)

    def reset_moments(self):
        # the lr schedule keeps counting through a reset
        self.done_u += self.adam_u.t
        self.done_mu += self.adam_mu.t
        self.adam_u = self._fresh_adam(self.theta_u.size)
        self.adam_mu = self._fresh_adam(self.theta_mu.size)

    def draw(self, stream="primal"):
        return sample_batch(self.d, self.n_interior, self.n_face, self.streams[stream], self.n_aux)

    def record(self, epoch, beta):
        if self.reference is not None:
            report = evaluate(self.net_u, self.theta_u, self.reference)
        else:
            report = ErrorReport(np.nan, None, np.nan, None)
        report.epoch = epoch
        report.loss = self.last_loss
        report.beta = beta
        report.lr = self.lr_u()
        report.wall_s = self.train_seconds
        self.records.append(report)
        log.info("epoch %d loss %s err_in %.3e err_bd %.3e", epoch, self.last_loss,
                 report.err_abs_in, report.err_abs_bd)

    def primal_step(self, loss_fn, stream="primal", index=None):
        """One Adam step on theta_u; a degenerate batch is redrawn once."""
        for attempt in range(2):
            batch = self.draw(stream)
            try:
                loss, grad = value_and_grad(lambda p: loss_fn(p, batch), self.theta_u, index)
                break
            except DegenerateNetwork:
                if attempt == 1:
                    raise
                log.warning("degenerate normalisation batch at step %s; redrawing", index)
        self.theta_u, self.adam_u = adam_step(self.adam_u, self.theta_u, grad, self.lr_u())
        self.last_loss = loss
        self.steps += 1
        return batch

    def result(self, beta_final):
        return TrainResult(self.theta_u, self.theta_mu, self.records, beta_final,
                           self.train_seconds, self.steps, self.cfg,
                           self.primal_cfg, self.multiplier_cfg)


def _tag(exc: NumericFailure, outer, inner, phase=None):
    exc.outer, exc.inner = outer, inner
    where = f"outer={outer}, inner={inner}" + ("" if phase is None else f", phase={phase}")
    exc.args = (f"{exc.args[0]} ({where})",) + exc.args[1:]
    return exc


def project_multiplier(net_lam, theta_mu_k, residual_at, draw_points, steps, beta, state,
                       lr, sign=-1):
    """Least-squares fit of the multiplier network to mu_k - beta (B v_k - g).

    Starts from ``theta_mu_k`` and takes ``steps`` Adam steps, each on the
    points returned by ``draw_points()``. ``lr(state)`` gives the rate for
    the Adam state about to be updated.
    Returns (theta, adam_state).
    """
    theta_nu = theta_mu_k
    for j in range(steps):
        try:
            pts = draw_points()
            mu_k = net_lam.value(theta_mu_k, pts)
            residual = residual_at(pts)
            _, grad = value_and_grad(
                lambda p: j_lambda(net_lam, p, mu_k, residual, pts, beta, sign), theta_nu, j)
            theta_nu, state = adam_step(state, theta_nu, grad, lr(state))
        except NumericFailure as exc:
            exc.inner = j
            raise
    return theta_nu, state


def run_aldl(cfg: TrainConfig, callback: Optional[Callable] = None) -> TrainResult:
    """Augmented Lagrangian training.

    Each outer iteration k: fit the multiplier network to mu_k - beta_k (B v_k - g)
    by ``epochs_lambda`` Adam steps, then ``epochs_u`` Adam steps on the
    augmented Lagrangian with the new multiplier frozen, then beta <- alpha beta.
    ``callback(step, theta_u)`` is called after every primal step.
    """
    run = _Run(cfg)
    spec, net_u, net_lam = run.spec, run.net_u, run.net_lam
    sign = -1 if cfg.multiplier_sign == "minus" else 1
    run.record(0, cfg.beta)
    beta = cfg.beta
    for k in range(cfg.epochs):
        beta = cfg.beta * cfg.alpha ** k
        tic = time.perf_counter()
        phase, inner = "multiplier", None
        if cfg.adam_reset:
            run.reset_moments()
        try:
            if cfg.epochs_lambda > 0:
                norm = None
                if spec.family.is_eigen:
                    X = sample_interior(run.d, run.n_norm, run.streams["norm"])
                    norm = estimate_norm(net_u, run.theta_u, X)
                run.theta_mu, run.adam_mu = project_multiplier(
                    net_lam, run.theta_mu,
                    lambda pts: constraint_residual(spec, net_u, run.theta_u, pts, norm),
                    lambda: sample_boundary(run.d, run.n_face, run.streams["multiplier"])[0],
                    cfg.epochs_lambda, beta, run.adam_mu,
                    lambda st: run.lr(st, run.step_budgets()[1], run.done_mu), sign)
                run.steps += cfg.epochs_lambda
            theta_mu = run.theta_mu

            def loss_fn(p, batch):
                mu = net_lam.value(theta_mu, batch.boundary)
                return lagrangian(spec, net_u, p, batch, beta, mu)

            phase = "primal"
            for i in range(cfg.epochs_u):
                inner = i
                run.primal_step(loss_fn, index=i)
                if callback is not None:
                    callback(run.done_u + run.adam_u.t, run.theta_u)
        except NumericFailure as exc:
            if phase == "multiplier":
                inner = exc.inner
            raise _tag(exc, k, inner, phase)
        run.train_seconds += time.perf_counter() - tic
        run.record(k + 1, beta)
    return run.result(cfg.beta * cfg.alpha ** max(cfg.epochs - 1, 0))


def run_pmdl(cfg: TrainConfig, callback: Optional[Callable] = None) -> TrainResult:
    """Penalty method: ``pmdl_steps`` Adam steps on the energy plus beta/2 ||v - g||^2.

    With ``method='refnet'`` the primal network is l(x) psi(x) and the
    boundary terms vanish identically, giving the exact-boundary reference.
    """
    exact_bc = cfg.method == "refnet"
    run = _Run(cfg, exact_bc=exact_bc)
    spec, net_u = run.spec, run.net_u
    beta = 0.0 if exact_bc else cfg.beta

    def loss_fn(p, batch):
        return penalty_objective(spec, net_u, p, batch, beta)

    run.record(0, beta)
    for step in range(1, cfg.pmdl_steps + 1):
        tic = time.perf_counter()
        try:
            run.primal_step(loss_fn, index=step)
        except NumericFailure as exc:
            raise _tag(exc, step, None)
        run.train_seconds += time.perf_counter() - tic
        if callback is not None:
            callback(step, run.theta_u)
        if step % cfg.eval_every == 0 or step == cfg.pmdl_steps:
            run.record(step, beta)
    return run.result(beta)


def run_sgda(cfg: TrainConfig, callback: Optional[Callable] = None) -> TrainResult:
    """Stochastic gradient descent ascent on the augmented Lagrangian.

    Each iteration takes ``sgda_ratio`` Adam ascent steps on the multiplier
    (gradient of -L) and one descent step on the primal network, each on a
    fresh batch. The total step count matches ALDL's
    ``epochs * (epochs_u + epochs_lambda)``.
    """
    run = _Run(cfg)
    spec, net_u, net_lam = run.spec, run.net_u, run.net_lam
    beta = cfg.beta
    iterations = cfg.epochs * (cfg.epochs_u + cfg.epochs_lambda) // (1 + cfg.sgda_ratio)
    run.record(0, beta)
    for it in range(1, iterations + 1):
        tic = time.perf_counter()
        try:
            for _ in range(cfg.sgda_ratio):
                batch = run.draw("ascent")
                theta_u = run.theta_u

                def ascent_loss(q, batch=batch, theta_u=theta_u):
                    mu = net_lam.value(q, batch.boundary)
                    return -lagrangian(spec, net_u, theta_u, batch, beta, mu)

                _, grad = value_and_grad(ascent_loss, run.theta_mu, it)
                if cfg.sgda_ascent_scale > 0:
                    lr = cfg.sgda_ascent_scale * run.lr_mu()
                    run.theta_mu, run.adam_mu = adam_step(run.adam_mu, run.theta_mu, grad, lr)
                run.steps += 1
            theta_mu = run.theta_mu

            def loss_fn(p, batch):
                return lagrangian(spec, net_u, p, batch, beta,
                                  net_lam.value(theta_mu, batch.boundary))

            run.primal_step(loss_fn, index=it)
        except NumericFailure as exc:
            raise _tag(exc, it, None)
        run.train_seconds += time.perf_counter() - tic
        if callback is not None:
            callback(it, run.theta_u)
        if it % cfg.eval_every == 0 or it == iterations:
            run.record(it, beta)
    return run.result(beta)


def train(cfg: TrainConfig, callback=None) -> TrainResult:
    if cfg.method == "aldl":
        return run_aldl(cfg, callback)
    if cfg.method == "sgda":
        return run_sgda(cfg, callback)
    return run_pmdl(cfg, callback)
