import logging
from dataclasses import dataclass, field

import numpy as np

from .dldr import lift, project
from .exceptions import ConfigError, LineSearchFailed, ShapeError, SkipUpdate

logger = logging.getLogger(__name__)


def lr_at(lr, schedule, epoch):
    for milestone, multiplier in schedule:
        if epoch >= milestone:
            lr *= multiplier
    return lr


@dataclass
class SgdState:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: tuple = ()
    velocity: np.ndarray = None
    epoch: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f'lr must be > 0, got {self.lr}')
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f'momentum must lie in [0, 1), got {self.momentum}')

    @property
    def current_lr(self):
        return lr_at(self.lr, self.schedule, self.epoch)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    schedule: tuple = ()
    m: np.ndarray = None
    v: np.ndarray = None
    t: int = 0
    epoch: int = 0

    @property
    def current_lr(self):
        return lr_at(self.lr, self.schedule, self.epoch)


@dataclass
class LineSearchConfig:
    c: float = 0.4
    beta: float = 0.55
    max_backtracks: int = 50

    def __post_init__(self):
        if not 0.0 < self.c < 1.0:
            raise ConfigError(f'c must lie in (0, 1), got {self.c}')
        if not 0.0 < self.beta < 1.0:
            raise ConfigError(f'beta must lie in (0, 1), got {self.beta}')


@dataclass
class PBfgsState:
    B: np.ndarray
    prev_g: np.ndarray = None
    prev_s: np.ndarray = None
    k: int = 0
    skipped_updates: int = 0
    skipped_steps: int = 0
    curvature_eps: float = 1e-12

    @classmethod
    def initial(cls, d, curvature_eps=1e-12):
        return cls(B=np.eye(d), curvature_eps=curvature_eps)


@dataclass(frozen=True)
class LineSearchResult:
    alpha: float
    evals: int
    loss: float


@dataclass(frozen=True)
class StepMetrics:
    loss: float
    alpha: float
    evals: int
    decrease: float
    grad_norm: float
    skipped_step: bool
    skipped_update: bool
    loss_after: float = field(default=None)


def _same_shape(w, g):
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if w.shape != g.shape:
        raise ShapeError(f'parameter shape {w.shape} and gradient shape {g.shape} differ')
    return w, g


def sgd_step(w, g, state):
    w, g = _same_shape(w, g)
    if state.weight_decay:
        g = g + state.weight_decay * w
    if state.velocity is None:
        state.velocity = np.zeros_like(w)
    elif state.velocity.shape != w.shape:
        raise ShapeError(f'velocity shape {state.velocity.shape} does not match {w.shape}')
    state.velocity = state.momentum * state.velocity + g
    return w - state.current_lr * state.velocity


def psgd_step(w, g, basis, state):
    w, g = _same_shape(w, g)
    if state.weight_decay:
        g = g + state.weight_decay * w
    g_sub = project(basis, g)
    if state.velocity is None:
        state.velocity = np.zeros_like(g_sub)
    elif state.velocity.shape != g_sub.shape:
        raise ShapeError(f'velocity shape {state.velocity.shape} does not match d={g_sub.shape[0]}')
    state.velocity = state.momentum * state.velocity + g_sub
    return w - state.current_lr * lift(basis, state.velocity)


def adam_step(w, g, state):
    w, g = _same_shape(w, g)
    if state.weight_decay:
        g = g + state.weight_decay * w
    if state.m is None:
        state.m = np.zeros_like(w)
        state.v = np.zeros_like(w)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return w - state.current_lr * m_hat / (np.sqrt(v_hat) + state.eps)


def bfgs_update(B, y, s, curvature_eps=1e-12):
    """Inverse-Hessian rank-two update B' = V^T B V + rho s s^T, V = I - rho y s^T.

    Raises SkipUpdate when y^T s does not clear curvature_eps * |y| * |s|.
    """
    B = np.asarray(B, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if B.shape != (y.shape[0], y.shape[0]) or s.shape != y.shape:
        raise ShapeError(f'B {B.shape}, y {y.shape} and s {s.shape} are inconsistent')
    ys = float(y @ s)
    threshold = curvature_eps * np.linalg.norm(y) * np.linalg.norm(s)
    if not ys > threshold:
        raise SkipUpdate(f'curvature y^T s={ys:.3e} below threshold {threshold:.3e}')
    rho = 1.0 / ys
    V = np.eye(y.shape[0]) - rho * np.outer(y, s)
    updated = V.T @ B @ V + rho * np.outer(s, s)
    return 0.5 * (updated + updated.T)


def newton_direction(B, g):
    B = np.asarray(B, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if B.shape != (g.shape[0], g.shape[0]):
        raise ShapeError(f'B {B.shape} does not match gradient {g.shape}')
    return -(B @ g)


def line_search(loss_at, w, basis, B, g, cfg, loss0=None):
    """Backtrack alpha in {1, beta, beta^2, ...} until the Armijo condition holds.

    Condition: L(w + P(alpha q)) <= L(w) - c alpha g^T B g, with q = -B g and
    every trial evaluated on the same objective. ``loss0`` is not counted.
    """
    if loss0 is None:
        loss0 = loss_at(w)
    q = newton_direction(B, g)
    decrease = float(g @ (B @ g))
    alpha = 1.0
    for evals in range(1, cfg.max_backtracks + 2):
        trial = loss_at(w + lift(basis, alpha * q))
        if trial <= loss0 - cfg.c * alpha * decrease:
            return LineSearchResult(alpha, evals, trial)
        alpha *= cfg.beta
    raise LineSearchFailed(
        f'Armijo condition not met after {cfg.max_backtracks} backtracks', evals=cfg.max_backtracks + 1,
    )


def pbfgs_step(objective, w, basis, state, cfg):
    """One step of BFGS in the subspace spanned by ``basis``.

    The pair from the previous step updates B on entry, then the direction
    -B g is line-searched on the same objective (mini-batch) as the gradient.
    """
    loss, g_full = objective.loss_and_grad(w)
    g = project(basis, g_full)
    skipped_update = False
    if state.k > 0 and state.prev_s is not None and state.prev_g is not None:
        try:
            state.B = bfgs_update(state.B, g - state.prev_g, state.prev_s, state.curvature_eps)
        except SkipUpdate as exc:
            logger.debug('Step %d: %s', state.k, exc)
            state.skipped_updates += 1
            skipped_update = True
    decrease = float(g @ (state.B @ g))
    try:
        result = line_search(objective.loss, w, basis, state.B, g, cfg, loss0=loss)
    except LineSearchFailed as exc:
        logger.debug('Step %d: %s, step skipped', state.k, exc)
        state.prev_g = g
        state.prev_s = None
        state.skipped_steps += 1
        state.k += 1
        metrics = StepMetrics(loss, 0.0, exc.evals, decrease, float(np.linalg.norm(g)), True, skipped_update, loss)
        return w, state, metrics
    s = result.alpha * newton_direction(state.B, g)
    w_next = w + lift(basis, s)
    state.prev_g = g
    state.prev_s = s
    state.k += 1
    metrics = StepMetrics(
        loss, result.alpha, result.evals, decrease, float(np.linalg.norm(g)), False, skipped_update, result.loss,
    )
    return w_next, state, metrics
