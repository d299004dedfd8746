"""Level-loop drivers for the adaptive two-grid (ATG) schemes and their baselines.

Every driver follows the same outline::

    solve on the initial mesh
    loop: estimate -> mark (bulk criterion) -> bisect -> prolongate -> level solve

and differs only in the level solve and in which function freezes the
coefficients of the estimator.  Exact-solution errors, efficiency terms and
the h.o.t. sums are evaluated on the fly so the returned
:class:`ConvergenceHistory` is self-contained.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from . import adaptivity
from .assembly import (LOAD_ORDER, MATRIX_ORDER, assemble_AN_matrix, assemble_AS, assemble_frozen,
                       assemble_linear, assemble_load, nonlinear_residual)
from .errors import ConfigError, SolverFailure
from .fespace import FeSpace, norms, prolongate
from .linalg import cg_solve, krylov_nonsym_solve, newton_solve, newton_step
from .mesh import bisect_marked, build_initial_uniform
from .problems import (GeneralNonlinearProblem, LinearProblem, MildlyNonlinearProblem,
                       get_problem)
from .quadrature import physical_points, quad_rule

log = logging.getLogger(__name__)

ALGORITHMS = ("atg-linear", "atg-mild", "atg-mild-newton", "atg-newton1", "atg-newton2",
              "regular-adaptive", "two-grid-uniform")


@dataclass
class RunConfig:
    problem: Any = "test1"          # registry id or a problem object
    algorithm: str = "atg-mild"
    theta: float = 0.25
    initial_n: int = 8
    max_levels: int = 12
    max_dofs: int = 300_000
    zeta_tilde: float = 0.5
    tol: float = 1e-10
    newton_max_iter: int = 50
    matrix_order: int = MATRIX_ORDER
    load_order: int = LOAD_ORDER
    estimator_order: int = adaptivity.ESTIMATOR_ORDER
    error_order: int = 6
    seed: int = 0
    keep_states: bool = False

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; valid ids: {', '.join(ALGORITHMS)}")
        if not 0.0 < self.theta < 1.0:
            raise ConfigError(f"theta must lie in (0, 1), got {self.theta}")
        if not 0.0 < self.zeta_tilde < 1.0:
            raise ConfigError(f"zeta_tilde must lie in (0, 1), got {self.zeta_tilde}")
        if self.initial_n < 2:
            raise ConfigError("initial_n must be at least 2 (the initial mesh needs an interior vertex)")
        if self.max_levels < 0:
            raise ConfigError("max_levels must be nonnegative")
        if self.max_dofs < 1:
            raise ConfigError("max_dofs must be positive")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        return self

    def resolve_problem(self):
        if isinstance(self.problem, str):
            try:
                return get_problem(self.problem)
            except KeyError as exc:
                raise ConfigError(exc.args[0]) from None
        return self.problem

    def snapshot(self):
        d = asdict(self) if isinstance(self.problem, str) else {
            f.name: getattr(self, f.name) for f in fields(self)}
        if not isinstance(d["problem"], str):
            d["problem"] = getattr(d["problem"], "name", type(d["problem"]).__name__)
        return d


@dataclass
class LevelRecord:
    k: int
    n_dofs: int
    n_elements: int
    h1_semi_err: float
    l2_err: float
    energy_err: float
    eta: float
    osc: float
    e1: float
    e2: float
    solver_iters: int
    wall_ms: float
    newton_iters: int = 0
    n_marked: int = 0
    hot1: float = 0.0
    hot2: float = 0.0
    hot3: float = 0.0
    residual_norms: tuple = ()

    @property
    def hot(self):
        return self.hot1 + self.hot2 + self.hot3


@dataclass
class LevelState:
    """Solution data kept for inspection when ``keep_states`` is on."""

    mesh: Any
    space: Any
    u: Any
    frozen: Any                      # function freezing the estimator coefficients
    intermediate: Any = None         # first-stage solution of two-stage level solves
    refinement: Any = None           # refinement leading to the next level


@dataclass
class ConvergenceHistory:
    config: dict
    records: list = field(default_factory=list)
    states: list = field(default_factory=list)
    stop_reason: str = ""

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def slope(self, window=6, column="h1_semi_err"):
        return convergence_slope(self, window, column)


# derived quantities -----------------------------------------------------

def hot_terms(l2_errors, k, zeta_tilde):
    """The three weighted L2-error sums bounding the level-``k+1`` quasi-error.

    ``hot1 = sum_{i=0}^{k} z^i e_{k+1-i}^2``, ``hot2`` with ``e_{k-i}`` and
    ``hot3 = sum_{i=0}^{k-1} z^i e_{k-1-i}^2``.  Empty sums are zero.
    """
    if not 0.0 < zeta_tilde < 1.0:
        raise ValueError(f"zeta_tilde must lie in (0, 1), got {zeta_tilde}")
    e = np.asarray(l2_errors, dtype=float)
    if k + 1 >= len(e):
        raise ValueError(f"hot sums at k={k} need errors up to level {k + 1}")
    hot1 = sum(zeta_tilde ** i * e[k + 1 - i] ** 2 for i in range(k + 1))
    hot2 = sum(zeta_tilde ** i * e[k - i] ** 2 for i in range(k + 1))
    hot3 = sum(zeta_tilde ** i * e[k - 1 - i] ** 2 for i in range(k))
    return float(hot1), float(hot2), float(hot3)


def compute_hot(l2_errors, zeta_tilde):
    """Per-level sums: row ``j`` holds the terms bounding the level-``j`` error, i.e. ``hot_terms(e, j - 1)``."""
    n = len(l2_errors)
    out = np.zeros((n, 3))
    for j in range(1, n):
        out[j] = hot_terms(l2_errors, j - 1, zeta_tilde)
    return out


def _fill_hot(history, zeta_tilde):
    table = compute_hot(history.column("l2_err"), zeta_tilde)
    for rec, (h1, h2, h3) in zip(history.records, table):
        rec.hot1, rec.hot2, rec.hot3 = float(h1), float(h2), float(h3)


def efficiency_terms(u_fine, u_coarse_on_fine, problem, order=6):
    """Local efficiency terms summed over the mesh.

    ``e1 = ||grad(u - u_h)|| + (sum_K H_K^2 ||D^2 u||_K^2)^(1/2)``;
    ``e2 = ||u - u_c|| + (sum_K H_K^2 ||sigma - mean_K sigma||_K^2)^(1/2)``,
    plus ``(sum_K H_K^2 ||grad(u - u_c)||_K^2)^(1/2)`` for nonlinear problems,
    where ``sigma`` is the strong operator applied to the exact solution
    (without the source) and ``u_c`` the prolongated coarse solution.
    """
    exact = problem.exact
    if exact is None or exact.hessian is None:
        raise ValueError("efficiency terms need an exact solution with a Hessian")
    mesh = u_fine.space.mesh
    rule = quad_rule(order)
    x, y = physical_points(mesh, rule)
    wk = rule.weights[None, :] * mesh.areas[:, None]
    H2 = mesh.areas[:, None]
    u, z, hess = exact.u(x, y), exact.grad(x, y), exact.hessian(x, y)

    gerr = z - u_fine.gradients[:, None, :]
    e1 = np.sqrt(np.sum(wk * (gerr ** 2).sum(-1))) + np.sqrt(np.sum(H2 * wk * (hess ** 2).sum((-1, -2))))

    l2c = np.sqrt(np.sum(wk * (u - u_coarse_on_fine.at_points(rule.points)) ** 2))
    e2 = l2c + np.sqrt(data_oscillation(mesh, problem, order).sum())
    if not isinstance(problem, LinearProblem):
        gc = z - u_coarse_on_fine.gradients[:, None, :]
        e2 += np.sqrt(np.sum(H2 * wk * (gc ** 2).sum(-1)))
    return float(e1), float(e2)


def data_oscillation(mesh, problem, order=6):
    """Per-element ``H_K^2 ||sigma - mean_K sigma||_K^2`` of the source-free strong operator at the exact solution."""
    exact = problem.exact
    rule = quad_rule(order)
    x, y = physical_points(mesh, rule)
    sigma = problem.as_general().strong_operator(x, y, exact.u(x, y), exact.grad(x, y), exact.hessian(x, y))
    dev = sigma - (sigma @ rule.weights)[:, None]
    return mesh.areas ** 2 * ((dev ** 2) @ rule.weights)


def fit_slope(n_dofs, values):
    """Least-squares slope of ``log(values)`` against ``log(n_dofs)``."""
    d = np.asarray(n_dofs, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(d) < 2:
        raise ValueError("a slope needs at least two levels")
    if np.any(d <= 0) or np.any(v <= 0):
        raise ValueError("slopes need positive values")
    return float(np.polyfit(np.log(d), np.log(v), 1)[0])


def convergence_slope(history, window=6, column="h1_semi_err"):
    """Slope over the last ``window`` levels."""
    n = len(history.records)
    if window < 2:
        raise ValueError("window must cover at least two levels")
    if window > n:
        raise ValueError(f"window {window} exceeds the {n} recorded levels")
    recs = history.records[-window:]
    return fit_slope([r.n_dofs for r in recs], [getattr(r, column) for r in recs])


# problem views -------------------------------------------------------------

def _mild_view(problem):
    if isinstance(problem, MildlyNonlinearProblem):
        return problem
    if isinstance(problem, LinearProblem):
        return problem.as_mild()
    if isinstance(problem, GeneralNonlinearProblem) and problem.mild is not None:
        return problem.mild
    raise ConfigError(f"problem {getattr(problem, 'name', problem)!r} has no mildly nonlinear form")


def _estimator_view(problem):
    """The most specific form: mild estimators avoid the generic flux callbacks."""
    if isinstance(problem, GeneralNonlinearProblem) and problem.mild is not None:
        return problem.mild
    return problem


# level solves --------------------------------------------------------------

@dataclass
class _Solved:
    u: Any
    frozen: Any
    iters: int = 0
    newton: int = 0
    intermediate: Any = None
    residual_norms: tuple = ()


def _check(rep, what):
    if not rep.converged:
        raise _LevelFailure(f"{what}: {rep.message or 'not converged'} (residual {rep.final_residual:.3e})")


class _LevelFailure(Exception):
    pass


def _residual_norm(space, u, problem, cfg):
    F = nonlinear_residual(space, u, problem, cfg.load_order)
    return float(np.max(np.abs(F))) if F.size else 0.0


def _initial_nonlinear(space, problem, cfg):
    u, rep = newton_solve(space, problem, tol=cfg.tol, max_iter=cfg.newton_max_iter,
                          order=cfg.load_order)
    _check(rep, "initial Newton solve")
    return _Solved(u, u, newton=rep.iterations)


def _initial_linear(space, problem, cfg):
    A = assemble_linear(space, problem, cfg.matrix_order)
    b = assemble_load(space, problem.source, cfg.load_order)
    x, rep = krylov_nonsym_solve(A, b, tol=cfg.tol)
    _check(rep, "initial non-symmetric solve")
    u = space.function(x)
    return _Solved(u, u, iters=rep.iterations)


def _symmetrized_step(space, w, problem, cfg):
    """``A_S(u, v) = (f, v) - A_N(w, v)`` solved with CG."""
    AS = assemble_AS(space, problem.alpha, cfg.matrix_order)
    AN = assemble_AN_matrix(space, problem.beta, problem.gamma, cfg.matrix_order)
    b = assemble_load(space, problem.source, cfg.load_order) - AN @ w.coefficients
    x, rep = cg_solve(AS, b, tol=cfg.tol)
    _check(rep, "symmetric level solve")
    return _Solved(space.function(x), w, iters=rep.iterations)


def _frozen_solve(space, w, mild, cfg):
    """``A_1(w; u, v) = 0`` with the non-symmetric solver."""
    sys_ = assemble_frozen(space, w, mild, cfg.load_order)
    x, rep = krylov_nonsym_solve(sys_.matrix, sys_.rhs, tol=cfg.tol)
    _check(rep, "frozen-coefficient level solve")
    return space.function(x), rep.iterations


def _newton_steps(space, w, problem, cfg, steps):
    u, iters, base = w, 0, w
    norms_ = [_residual_norm(space, w, problem, cfg)]
    for _ in range(steps):
        base = u
        u, rep = newton_step(space, u, problem, linear_tol=cfg.tol, order=cfg.load_order)
        _check(rep, "Newton correction")
        iters += rep.iterations
        norms_.append(_residual_norm(space, u, problem, cfg))
    return u, base, iters, tuple(norms_)


# the generic adaptive loop ------------------------------------------------

def _run_adaptive(cfg, problem, initial, level_solve, est_problem):
    cfg.validate()
    history = ConvergenceHistory(cfg.snapshot())
    mesh = build_initial_uniform(cfg.initial_n)
    space = FeSpace(mesh)
    prev_u = None
    k = 0
    t0 = time.perf_counter()
    try:
        solved = initial(space)
    except _LevelFailure as exc:
        raise SolverFailure(str(exc), history) from None
    while True:
        report = adaptivity.estimate(solved.u, solved.frozen, est_problem, cfg.estimator_order)
        marked = adaptivity.mark(report, cfg.theta)
        wall = 1e3 * (time.perf_counter() - t0)
        coarse = solved.frozen if prev_u is None else prev_u
        _record(history, cfg, problem, k, space, solved, report, coarse, wall, len(marked))
        state = LevelState(mesh, space, solved.u, solved.frozen, solved.intermediate)
        if cfg.keep_states:
            history.states.append(state)
        if k >= cfg.max_levels:
            history.stop_reason = "max_levels"
            break
        t0 = time.perf_counter()
        fine, ref = bisect_marked(mesh, marked.elements)
        fine_space = FeSpace(fine)
        if fine_space.n_dofs > cfg.max_dofs:
            history.stop_reason = "max_dofs"
            break
        state.refinement = ref
        w = prolongate(solved.u, ref, fine_space)
        mesh, space, prev_u = fine, fine_space, w
        k += 1
        try:
            solved = level_solve(space, w)
        except _LevelFailure as exc:
            _fill_hot(history, cfg.zeta_tilde)
            raise SolverFailure(f"level {k}: {exc}", history) from None
    _fill_hot(history, cfg.zeta_tilde)
    return history


def _record(history, cfg, problem, k, space, solved, report, coarse, wall, n_marked):
    err = norms(solved.u, problem, exact=True, order=cfg.error_order)
    e1, e2 = efficiency_terms(solved.u, coarse, problem, cfg.error_order)
    history.records.append(LevelRecord(
        k=k, n_dofs=space.n_dofs, n_elements=space.mesh.nt,
        h1_semi_err=err.h1_semi, l2_err=err.l2, energy_err=err.energy1,
        eta=report.eta_global, osc=report.osc_global, e1=e1, e2=e2,
        solver_iters=int(solved.iters), wall_ms=wall, newton_iters=int(solved.newton),
        n_marked=n_marked, residual_norms=solved.residual_norms,
    ))
    log.info("level %d: dofs=%d h1=%.3e eta=%.3e", k, space.n_dofs, err.h1_semi, report.eta_global)


def _config(config, **overrides):
    cfg = RunConfig(**{**config.__dict__, **overrides}) if overrides else config
    return cfg


def run_atg_linear(config):
    """Two-grid adaptive loop for a non-symmetric linear problem.

    Initial mesh: full non-symmetric solve.  Finer levels: SPD solve with the
    lower-order terms evaluated at the prolongated previous solution.
    """
    cfg = _config(config, algorithm="atg-linear")
    problem = cfg.resolve_problem()
    if not isinstance(problem, LinearProblem):
        raise ConfigError("atg-linear needs a linear problem")
    return _run_adaptive(
        cfg, problem,
        lambda s: _initial_linear(s, problem, cfg),
        lambda s, w: _symmetrized_step(s, w, problem, cfg),
        problem,
    )


def run_atg_mild(config):
    """Coefficients frozen at the prolongated previous solution on every finer level."""
    cfg = _config(config, algorithm="atg-mild")
    problem = cfg.resolve_problem()
    mild = _mild_view(problem)

    def level(space, w):
        u, iters = _frozen_solve(space, w, mild, cfg)
        return _Solved(u, w, iters=iters)

    return _run_adaptive(cfg, problem, lambda s: _initial_nonlinear(s, mild, cfg), level, mild)


def run_atg_mild_newton(config):
    """Frozen-coefficient solve followed by one Newton correction about its result."""
    cfg = _config(config, algorithm="atg-mild-newton")
    problem = cfg.resolve_problem()
    mild = _mild_view(problem)

    def level(space, w):
        u_tilde, iters = _frozen_solve(space, w, mild, cfg)
        u, base, it2, res = _newton_steps(space, u_tilde, mild, cfg, 1)
        return _Solved(u, base, iters=iters + it2, newton=1, intermediate=u_tilde, residual_norms=res)

    return _run_adaptive(cfg, problem, lambda s: _initial_nonlinear(s, mild, cfg), level, mild)


def _run_newton(config, algorithm, steps):
    cfg = _config(config, algorithm=algorithm)
    problem = cfg.resolve_problem()
    general = problem.as_general()
    est = _estimator_view(problem) if not isinstance(problem, LinearProblem) else problem

    def level(space, w):
        u, base, iters, res = _newton_steps(space, w, general, cfg, steps)
        inter = None if steps == 1 else base
        return _Solved(u, base, iters=iters, newton=steps, intermediate=inter, residual_norms=res)

    return _run_adaptive(cfg, problem, lambda s: _initial_nonlinear(s, general, cfg), level, est)


def run_atg_newton1(config):
    """One Newton step about the prolongated previous solution per level."""
    return _run_newton(config, "atg-newton1", 1)


def run_atg_newton2(config):
    """Two Newton steps per level; the estimator freezes at the base of the second step."""
    return _run_newton(config, "atg-newton2", 2)


def run_regular_adaptive(config):
    """Full Newton solve on every level, warm-started from the prolongated solution."""
    cfg = _config(config, algorithm="regular-adaptive")
    problem = cfg.resolve_problem()
    general = problem.as_general()

    def level(space, w):
        u, rep = newton_solve(space, general, initial=w, tol=cfg.tol,
                              max_iter=cfg.newton_max_iter, order=cfg.load_order)
        _check(rep, "Newton level solve")
        return _Solved(u, u, newton=rep.iterations)

    return _run_adaptive(cfg, problem, lambda s: _initial_nonlinear(s, general, cfg), level,
                         _estimator_view(problem))


def run_two_grid_uniform(config):
    """Uniform two-grid baseline: coarse nonlinear solve, one linearized solve per fine mesh.

    Row ``j`` holds the fine mesh obtained by halving the coarse mesh size
    ``j`` times (two bisection rounds each); row 0 has fine = coarse.  Rows
    stop before the fine space would exceed ``max_dofs``.
    """
    cfg = _config(config, algorithm="two-grid-uniform")
    cfg.validate()
    problem = cfg.resolve_problem()
    linear = isinstance(problem, LinearProblem)
    general = problem.as_general()
    history = ConvergenceHistory(cfg.snapshot())
    mesh = build_initial_uniform(cfg.initial_n)
    space = FeSpace(mesh)
    try:
        coarse = _initial_linear(space, problem, cfg) if linear else _initial_nonlinear(space, general, cfg)
    except _LevelFailure as exc:
        raise SolverFailure(str(exc), history) from None
    w = coarse.u
    for j in range(cfg.max_levels + 1):
        t0 = time.perf_counter()
        if j > 0:
            for _ in range(2):
                fine, ref = bisect_marked(mesh, np.arange(mesh.nt))
                fine_space = FeSpace(fine)
                w = prolongate(w, ref, fine_space)
                mesh, space = fine, fine_space
            if space.n_dofs > cfg.max_dofs:
                history.stop_reason = "max_dofs"
                break
        try:
            if linear:
                solved = _symmetrized_step(space, w, problem, cfg)
            else:
                u, base, iters, res = _newton_steps(space, w, general, cfg, 1)
                solved = _Solved(u, base, iters=iters, newton=1, residual_norms=res)
        except _LevelFailure as exc:
            _fill_hot(history, cfg.zeta_tilde)
            raise SolverFailure(f"row {j}: {exc}", history) from None
        report = adaptivity.estimate(solved.u, solved.frozen, _estimator_view(problem), cfg.estimator_order)
        _record(history, cfg, problem, j, space, solved, report, w, 1e3 * (time.perf_counter() - t0), 0)
        if cfg.keep_states:
            history.states.append(LevelState(mesh, space, solved.u, solved.frozen))
    else:
        history.stop_reason = "max_levels"
    _fill_hot(history, cfg.zeta_tilde)
    return history


DRIVERS = {
    "atg-linear": run_atg_linear,
    "atg-mild": run_atg_mild,
    "atg-mild-newton": run_atg_mild_newton,
    "atg-newton1": run_atg_newton1,
    "atg-newton2": run_atg_newton2,
    "regular-adaptive": run_regular_adaptive,
    "two-grid-uniform": run_two_grid_uniform,
}


def run(config):
    """Dispatch on ``config.algorithm``."""
    config.validate()
    return DRIVERS[config.algorithm](config)
