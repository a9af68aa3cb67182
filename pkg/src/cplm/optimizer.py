"""Damped normal-equation solvers for the CP least-squares problem.

Two iteration schemes share the machinery here.  The classic scheme
builds the Jacobian J at the current iterate x, solves

    (J^T J + mu I) h = -J^T F(x)

once, and accepts or rejects x + h by the gain ratio.  The modified
scheme reuses the same J and the same Cholesky factorization for a
second solve at y = x + h,

    (J^T J + mu I) hhat = -J^T F(y)

and evaluates the combined trial x + h + hhat.  The second solve costs
two triangular substitutions, far below the factorization it reuses, so
each iteration buys two steps for one Jacobian and one factorization.

Damping control follows the gain ratio rho (actual over predicted
reduction): accept when rho exceeds the threshold gamma, halving mu and
resetting nu; otherwise reject, keep x, and grow mu by the factor nu,
doubling nu.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ._util import atomic_write_text
from .errors import DimensionError, DivergenceError, SolveFailure
from .jacobian import SparseJacobian, build_jacobian
from .model import CpModel, ParamVector, pack, residual, unpack
from .tensor import DenseTensor3

DENOM_FLOOR = 1e-15
_MU_ESCALATION_FACTOR = 10.0
_METHOD_ALIASES = {
    "lm": "lm",
    "classic-lm": "lm",
    "mlm": "mlm",
    "modified-lm": "mlm",
}


@dataclass(frozen=True)
class LmConfig:
    """Solver settings; ``mu0 = None`` scales the initial damping by the
    largest diagonal entry of the first J^T J."""

    max_iters: int = 200
    tol: float = 0.0
    rel_tol: float = 0.0
    grad_tol: float = 1e-12
    step_tol: float = 1e-12
    mu0: float | None = None
    nu0: float = 2.0
    gamma: float = 0.0
    seed: int = 0
    method: str = "mlm"
    max_mu_escalations: int = 32

    def __post_init__(self):
        if self.max_iters < 1:
            raise DimensionError(f"max_iters must be >= 1, got {self.max_iters}")
        for name in ("tol", "rel_tol", "grad_tol", "step_tol"):
            if not getattr(self, name) >= 0.0:
                raise DimensionError(f"{name} must be nonnegative")
        if self.mu0 is not None and not self.mu0 > 0.0:
            raise DimensionError(f"mu0 must be positive, got {self.mu0}")
        if not self.nu0 > 1.0:
            raise DimensionError(f"nu0 must exceed 1, got {self.nu0}")
        if not self.gamma >= 0.0:
            raise DimensionError(f"gamma must be nonnegative, got {self.gamma}")
        if self.max_mu_escalations < 0:
            raise DimensionError("max_mu_escalations must be nonnegative")
        if self.method not in _METHOD_ALIASES:
            raise DimensionError(
                f"method must be one of {sorted(_METHOD_ALIASES)}, got {self.method!r}"
            )
        object.__setattr__(self, "method", _METHOD_ALIASES[self.method])


@dataclass
class LmState:
    """Mutable loop state; ``f`` caches F(x) and ``jacobian`` caches J(x)."""

    x: ParamVector
    mu: float | None
    nu: float
    iter: int = 0
    residual_norm: float = 0.0
    jacobian: SparseJacobian | None = None
    f: np.ndarray | None = None
    objective: "CpObjective | None" = None


@dataclass(frozen=True)
class IterationRecord:
    """Telemetry for one iteration; counters are cumulative totals."""

    iter: int
    mu: float
    nu: float
    rho: float | None
    residual_norm_before: float
    residual_norm_after: float
    accepted: bool
    step_norm: float
    n_jacobian_builds: int
    n_residual_evals: int
    elapsed: float


TRACE_HEADER = (
    "iter,mu,nu,rho,res_before,res_after,accepted,step_norm,"
    "jac_builds,res_evals,elapsed_s"
)


def _fmt(v: float) -> str:
    return f"{v:.17g}"


@dataclass
class Trace:
    """Per-iteration records plus run-level outcome metadata."""

    records: list[IterationRecord] = field(default_factory=list)
    method: str = "mlm"
    reason: str | None = None
    final_residual: float = 0.0
    total_seconds: float = 0.0
    jacobian_builds: int = 0
    residual_evals: int = 0

    def __len__(self):
        return len(self.records)

    def write_csv(self, path, include_timing: bool = False) -> None:
        """One row per iteration.  Timing is zeroed unless requested so
        that repeated runs with one seed produce identical bytes."""
        lines = [TRACE_HEADER]
        for r in self.records:
            rho = "" if r.rho is None else _fmt(r.rho)
            elapsed = _fmt(r.elapsed) if include_timing else "0"
            lines.append(
                f"{r.iter},{_fmt(r.mu)},{_fmt(r.nu)},{rho},"
                f"{_fmt(r.residual_norm_before)},{_fmt(r.residual_norm_after)},"
                f"{int(r.accepted)},{_fmt(r.step_norm)},"
                f"{r.n_jacobian_builds},{r.n_residual_evals},{elapsed}"
            )
        atomic_write_text(path, "\n".join(lines) + "\n")

    def summary(self, **extra) -> dict:
        out = {
            "method": self.method,
            "iters": len(self.records),
            "final_residual": self.final_residual,
            "reason": self.reason,
            "total_seconds": self.total_seconds,
            "jacobian_builds": self.jacobian_builds,
            "residual_evals": self.residual_evals,
        }
        out.update(extra)
        return out

    def write_summary(self, path, **extra) -> None:
        atomic_write_text(path, json.dumps(self.summary(**extra), indent=2) + "\n")


def solve_damped(gram: np.ndarray, grad: np.ndarray, mu: float) -> np.ndarray:
    """Solve (gram + mu I) h = -grad by Cholesky factorization.

    Inputs are left untouched; factorization failure raises
    ``SolveFailure`` carrying ``mu`` so the caller can escalate.
    """
    if not mu > 0.0:
        raise DimensionError(f"mu must be positive, got {mu}")
    gram = np.asarray(gram, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64).reshape(-1)
    n = grad.size
    if gram.shape != (n, n):
        raise DimensionError(f"gram shape {gram.shape} incompatible with grad ({n})")
    damped = gram + mu * np.eye(n)
    try:
        c = cho_factor(damped.T, lower=True, overwrite_a=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SolveFailure(str(exc), mu=mu) from exc
    return cho_solve(c, -grad, overwrite_b=True, check_finite=False)


def gain_ratio(
    F_x: float,
    F_trial: float,
    lin_h: float,
    F_y: float = 0.0,
    lin_hhat: float = 0.0,
) -> float:
    """Actual over predicted residual-norm reduction.

    The predicted reduction sums the linear-model gains of both solves;
    for the single-solve scheme the second pair defaults to zero.  A
    denominator at or below ``DENOM_FLOOR`` returns ``-inf``, which the
    acceptance test treats as an unconditional rejection.
    """
    vals = (F_x, F_trial, lin_h, F_y, lin_hhat)
    for v in vals:
        if not math.isfinite(v) or v < 0.0:
            raise DimensionError(f"gain ratio inputs must be finite nonnegative: {vals}")
    denom = (F_x - lin_h) + (F_y - lin_hhat)
    if denom <= DENOM_FLOOR:
        return -math.inf
    return (F_x - F_trial) / denom


class CpObjective:
    """Residual and Jacobian factory for one observed tensor.

    Carries cumulative evaluation counters so iteration records can
    report honest per-run costs.
    """

    def __init__(self, observed: DenseTensor3):
        self.observed = observed
        self.n_jacobian_builds = 0
        self.n_residual_evals = 0

    def residual(self, x: ParamVector) -> np.ndarray:
        self.n_residual_evals += 1
        return residual(x, self.observed)

    def build_jacobian(self, x: ParamVector) -> SparseJacobian:
        self.n_jacobian_builds += 1
        return build_jacobian(unpack(x))


def _factor_damped(jac, gram_holder, mu, max_escalations):
    """Factor gram + mu I in place, escalating mu tenfold on failure.

    ``gram_holder`` is a single-element list so the (destroyed) buffer
    can be replaced on retry without reallocating in the caller.
    Returns (cho_factor result, mu actually used).
    """
    n = gram_holder[0].shape[0]
    attempts = 0
    while True:
        gram = gram_holder[0]
        gram.flat[:: n + 1] += mu
        try:
            # .T view is Fortran-contiguous, so LAPACK factors in place
            c = cho_factor(gram.T, lower=True, overwrite_a=True, check_finite=False)
            return c, mu
        except np.linalg.LinAlgError:
            attempts += 1
            if attempts > max_escalations:
                raise DivergenceError(
                    f"damped normal matrix failed to factor after "
                    f"{max_escalations} escalations (mu={mu:g})"
                )
            mu *= _MU_ESCALATION_FACTOR
            gram_holder[0] = jac.gram()


def _iterate(state: LmState, objective, cfg: LmConfig, modified: bool):
    """One accept-or-reject iteration; returns (state, record) or
    (state, None) when the gradient test already holds at x."""
    t0 = time.perf_counter()
    jac = objective.build_jacobian(state.x)
    state.jacobian = jac
    if state.f is None:
        state.f = objective.residual(state.x)
        state.residual_norm = float(np.linalg.norm(state.f))
    f_x = state.f
    norm_x = state.residual_norm
    grad = jac.rmatvec(f_x)
    if np.max(np.abs(grad)) <= cfg.grad_tol:
        return state, None

    gram_holder = [jac.gram()]
    if state.mu is None:
        n = gram_holder[0].shape[0]
        diag_max = float(np.max(gram_holder[0].flat[:: n + 1]))
        state.mu = 1e-2 * diag_max if diag_max > 0.0 else 1e-2
    c, mu = _factor_damped(jac, gram_holder, state.mu, cfg.max_mu_escalations)

    h = cho_solve(c, -grad, check_finite=False)
    lin_h = float(np.linalg.norm(f_x + jac.matvec(h)))

    if modified:
        y = state.x.replace(state.x.data + h)
        f_y = objective.residual(y)
        norm_y = float(np.linalg.norm(f_y))
        grad_y = jac.rmatvec(f_y)
        hhat = cho_solve(c, -grad_y, check_finite=False)
        lin_hhat = float(np.linalg.norm(f_y + jac.matvec(hhat)))
        step = h + hhat
    else:
        f_y = None
        step = h

    trial = state.x.replace(state.x.data + step)
    f_trial = objective.residual(trial)
    norm_trial = float(np.linalg.norm(f_trial))
    if modified:
        rho = gain_ratio(norm_x, norm_trial, lin_h, norm_y, lin_hhat)
    else:
        rho = gain_ratio(norm_x, norm_trial, lin_h)

    nu_used = state.nu
    accepted = rho > cfg.gamma
    if accepted:
        state.x = trial
        state.f = f_trial
        state.residual_norm = norm_trial
        state.jacobian = None
        state.mu = mu / 2.0
        state.nu = cfg.nu0
    else:
        state.mu = mu * nu_used
        state.nu = 2.0 * nu_used
    state.iter += 1

    record = IterationRecord(
        iter=state.iter,
        mu=mu,
        nu=nu_used,
        rho=rho,
        residual_norm_before=norm_x,
        residual_norm_after=state.residual_norm,
        accepted=accepted,
        step_norm=float(np.linalg.norm(step)),
        n_jacobian_builds=objective.n_jacobian_builds,
        n_residual_evals=objective.n_residual_evals,
        elapsed=time.perf_counter() - t0,
    )
    return state, record


def _resolve_objective(state: LmState, observed):
    if state.objective is not None:
        return state.objective
    if observed is None:
        raise DimensionError("no objective attached to state and none supplied")
    state.objective = CpObjective(observed)
    return state.objective


def classic_lm_iterate(state: LmState, observed, cfg: LmConfig):
    """One single-solve damped iteration (build J, one solve, one trial)."""
    return _iterate(state, _resolve_objective(state, observed), cfg, modified=False)


def modified_lm_iterate(state: LmState, observed, cfg: LmConfig):
    """One Jacobian-reusing iteration (build J once, two solves, one trial)."""
    return _iterate(state, _resolve_objective(state, observed), cfg, modified=True)


def initial_state(observed: DenseTensor3, rank: int, cfg: LmConfig) -> LmState:
    """Seeded uniform [0,1) factor initialization wrapped in loop state."""
    model = CpModel.random_uniform(observed.dims, rank, cfg.seed)
    objective = CpObjective(observed)
    x = pack(model)
    f = objective.residual(x)
    return LmState(
        x=x,
        mu=cfg.mu0,
        nu=cfg.nu0,
        iter=0,
        residual_norm=float(np.linalg.norm(f)),
        f=f,
        objective=objective,
    )


def run(observed: DenseTensor3, rank: int, cfg: LmConfig | None = None):
    """Decompose ``observed`` at the given rank.

    Returns (model, trace, reason) where reason is one of "max-iters",
    "residual-tol", "grad-tol" or "step-tol".
    """
    if cfg is None:
        cfg = LmConfig()
    if rank < 1:
        raise DimensionError(f"rank must be positive, got {rank}")
    t_start = time.perf_counter()
    state = initial_state(observed, rank, cfg)
    objective = state.objective
    iterate = modified_lm_iterate if cfg.method == "mlm" else classic_lm_iterate
    res_threshold = max(cfg.tol, cfg.rel_tol * observed.norm())
    trace = Trace(method=cfg.method)
    reason = None
    while True:
        if state.residual_norm <= res_threshold:
            reason = "residual-tol"
            break
        if state.iter >= cfg.max_iters:
            reason = "max-iters"
            break
        state, record = iterate(state, None, cfg)
        if record is None:
            reason = "grad-tol"
            break
        trace.records.append(record)
        if record.step_norm <= cfg.step_tol * (state.x.norm() + cfg.step_tol):
            reason = "step-tol"
            break
    trace.reason = reason
    trace.final_residual = state.residual_norm
    trace.total_seconds = time.perf_counter() - t_start
    trace.jacobian_builds = objective.n_jacobian_builds
    trace.residual_evals = objective.n_residual_evals
    return unpack(state.x), trace, reason
