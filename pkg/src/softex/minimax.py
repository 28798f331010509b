"""Equioscillation fitter for the sum-of-exponentials approximation of the
Gaussian tail function Q(x) = 1 - Phi(x).

The approximation  Qhat(x) = sum_i a_i * exp(-b_i * x^2)  starts from the
rectangular rule on Craig's integral (a pointwise upper bound) and is then
driven to the best approximation, whose error oscillates between
equal-magnitude extrema of alternating sign.

Structure of the alternation set (error metric r relative, d absolute):

  absolute:  2N interior extrema x_1..x_2N, signs +,-,...; the boundary
             condition fixes sum(a) (d(0) = 0 or d(0) = -d_max); no endpoint
             condition is needed because d -> 0 at infinity.
  relative:  r tends to -1 at infinity, so the fit lives on [0, x_end] with
             r(x_end) = -err_max.  The alternation set is {0 or first
             extremum, 2N-1 interior extrema, x_end}: with r(0) = -r_max the
             signs run -,+,...,+,- which balances the 4N unknowns
             (a, b, r_max and 2N-1 free abscissae).

The solver alternates extremum relocation (golden-section refinement of the
bracketed interior extrema of the current residual) with a damped Newton
update of (a, b, err_max) holding the abscissae fixed, until err_max is
stable to 1e-10 and the signs alternate.  Everything is deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc


def q_reference(x):
    """Gaussian tail Q(x) to double precision via the complementary error
    function (rational/continued-fraction evaluation in libm/cephes).

    Cross-checked in the tests against adaptive quadrature of Craig's
    integral (1/pi) * int_0^{pi/2} exp(-x^2 / (2 sin^2 t)) dt for x >= 0.
    """
    return 0.5 * erfc(np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


@dataclass(frozen=True)
class MinimaxProblem:
    n_terms: int
    x_end: float = 2.8
    metric: str = "relative"        # "relative" | "absolute"
    r0_mode: str = "minus_rmax"     # "zero" | "minus_rmax"

    def __post_init__(self):
        if self.n_terms < 1:
            raise ValueError("need n_terms >= 1")
        if self.n_terms > 8:
            raise ValueError("solver is validated for n_terms <= 8")
        if self.x_end <= 0:
            raise ValueError("need x_end > 0")
        if self.metric not in ("relative", "absolute"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.r0_mode not in ("zero", "minus_rmax"):
            raise ValueError(f"unknown r0_mode {self.r0_mode!r}")


@dataclass
class MinimaxSolution:
    a: np.ndarray
    b: np.ndarray
    extrema: np.ndarray          # abscissae where |error| = err_max (x_end included for relative)
    err_max: float
    iterations: int
    problem: MinimaxProblem
    residual_profile: np.ndarray = field(repr=False, default=None)  # sampled (x, r(x))

    def report(self) -> dict:
        return {
            "N": int(self.problem.n_terms),
            "x_end": self.problem.x_end,
            "metric": self.problem.metric,
            "r0_mode": self.problem.r0_mode,
            "r_max": self.err_max,
            "a": [float(v) for v in self.a],
            "b": [float(v) for v in self.b],
            "extrema": [float(v) for v in self.extrema],
            "iterations": self.iterations,
        }


class MinimaxConvergenceError(RuntimeError):
    def __init__(self, message, profile=None):
        super().__init__(message)
        self.residual_profile = profile


def chiani_init(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Rectangular-rule coefficients on (0, pi/2]: a_i = dtheta/pi,
    b_i = 1/(2 sin^2 theta_i).  A pointwise upper bound of Q for x >= 0."""
    if n < 1:
        raise ValueError("need n >= 1")
    theta = (np.arange(1, n + 1) / n) * (math.pi / 2.0)
    a = np.full(n, 1.0 / (2 * n))
    b = 1.0 / (2.0 * np.sin(theta) ** 2)
    return a, b


def sum_exp_eval(a, b, x):
    xs = np.asarray(x, dtype=np.float64)
    return np.exp(-np.multiply.outer(xs * xs, np.asarray(b))) @ np.asarray(a)


def residual(a, b, x, metric: str = "relative"):
    """Approximation error against Q: (Qhat - Q)/Q or Qhat - Q."""
    x = np.asarray(x, dtype=np.float64)
    approx = sum_exp_eval(a, b, x)
    q = q_reference(x)
    if metric == "relative":
        return approx / q - 1.0
    return approx - q


def _golden_refine(f, lo, hi, maximize, tol=1e-13, iters=90):
    """Golden-section extremum refinement on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    sgn = 1.0 if maximize else -1.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc = sgn * f(c)
    fd = sgn * f(d)
    for _ in range(iters):
        if hi - lo < tol:
            break
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = sgn * f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = sgn * f(d)
    return 0.5 * (lo + hi)


def _locate_extrema(a, b, problem: MinimaxProblem, n_interior: int,
                    limit: float | None = None, grid_n: int = 4096):
    """Interior extrema of the residual on (0, limit), position-ordered."""
    if limit is None:
        limit = problem.x_end
    xs = np.linspace(0.0, limit, grid_n)
    r = residual(a, b, xs, problem.metric)
    dr = np.diff(r)
    flips = np.nonzero(np.sign(dr[1:]) * np.sign(dr[:-1]) < 0)[0] + 1
    ext = []
    f = lambda t: float(residual(a, b, t, problem.metric))
    for i in flips:
        lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, grid_n - 1)]
        maximize = r[i] >= r[i - 1]
        ext.append(_golden_refine(f, lo, hi, maximize))
    ext = sorted(ext)
    if len(ext) > n_interior:
        # keep the largest-magnitude ones, preserving order
        vals = np.abs(residual(a, b, np.array(ext), problem.metric))
        keep = np.sort(np.argsort(vals)[-n_interior:])
        ext = [ext[i] for i in keep]
    return np.array(ext)


def _alternation(problem: MinimaxProblem, interior: np.ndarray):
    """Abscissae and signs of the level equations for the current extrema."""
    n = problem.n_terms
    if problem.metric == "relative":
        if problem.r0_mode == "minus_rmax":
            # boundary anchor, 2N-1 interior, endpoint: -,+,-,...,+,-
            pts = np.concatenate([[0.0], interior, [problem.x_end]])
            signs = np.array([(-1.0) ** (k + 1) for k in range(2 * n + 1)])
        else:
            # 2N-1 interior starting +, then the endpoint at -err_max
            pts = np.concatenate([interior, [problem.x_end]])
            signs = np.array([(-1.0) ** (k + 1) for k in range(1, 2 * n + 1)])
        return pts, signs
    # absolute metric: 2N interior extrema, first one positive
    pts = interior
    signs = np.array([(-1.0) ** (k + 1) for k in range(1, 2 * n + 1)])
    return pts, signs


def _has_sum_row(problem: MinimaxProblem) -> bool:
    # relative/minus_rmax encodes sum(a) through the x=0 level equation;
    # every other combination needs the explicit constraint.
    return not (problem.metric == "relative" and problem.r0_mode == "minus_rmax")


def _sum_target(problem: MinimaxProblem, err: float) -> float:
    if problem.r0_mode == "zero":
        return 0.5
    return 0.5 - err  # absolute metric, d(0) = -d_max


def _n_interior(problem: MinimaxProblem) -> int:
    return 2 * problem.n_terms if problem.metric == "absolute" else 2 * problem.n_terms - 1


def _newton_update(a, b, err, pts, signs, problem: MinimaxProblem,
                   max_halvings: int = 40):
    """One damped Newton step on the level equations at fixed abscissae."""
    n = problem.n_terms
    q = q_reference(pts)
    w = 1.0 / q if problem.metric == "relative" else np.ones_like(q)
    eb = np.exp(-np.outer(pts ** 2, b))

    def level_residuals(av, bv, ev):
        r = residual(av, bv, pts, problem.metric) - signs * ev
        if _has_sum_row(problem):
            r = np.concatenate([r, [np.sum(av) - _sum_target(problem, ev)]])
        return r

    F = level_residuals(a, b, err)
    # Jacobian: d r(x)/d a_i = w * e^{-b_i x^2}; d/d b_i = -w a_i x^2 e^{-b_i x^2}
    Ja = w[:, None] * eb
    Jb = -w[:, None] * a[None, :] * (pts ** 2)[:, None] * eb
    Je = -signs[:, None]
    J = np.hstack([Ja, Jb, Je])
    if _has_sum_row(problem):
        extra = np.zeros((1, 2 * n + 1))
        extra[0, :n] = 1.0
        if problem.r0_mode == "minus_rmax":  # target depends on err
            extra[0, -1] = 1.0
        J = np.vstack([J, extra])

    step = np.linalg.solve(J, -F)
    norm0 = float(np.linalg.norm(F))
    scale = 1.0
    for _ in range(max_halvings):
        na = a + scale * step[:n]
        nb = b + scale * step[n:2 * n]
        ne = err + scale * step[2 * n]
        if np.all(na > 0) and np.all(nb > 0):
            if float(np.linalg.norm(level_residuals(na, nb, ne))) < norm0 or norm0 < 1e-14:
                return na, nb, ne
        scale *= 0.5
    return a, b, err  # stalled; outer loop decides


def _scan_limit(problem: MinimaxProblem) -> float:
    # For the absolute metric the error decays on its own; extrema may sit
    # past x_end, so the scan window widens with the term count.
    if problem.metric == "absolute":
        return max(problem.x_end, 1.5 * problem.n_terms + 2.0)
    return problem.x_end


def _initial_state(problem: MinimaxProblem, limit: float):
    """Starting (a, b, interior reference) for the exchange loop.

    For one term the rectangular-rule init with an equispaced reference is
    enough.  For more terms the solved (N-1)-term problem seeds the N-term
    one: a new narrow term (large b) refines the region near zero, and two
    reference points are inserted below the previous first extremum.  The
    extrema of these fits cluster geometrically toward zero, which is why a
    cold equispaced start stalls for N >= 4.
    """
    n = problem.n_terms
    n_int = _n_interior(problem)
    if n == 1:
        a, b = chiani_init(1)
        return a, b, limit * np.arange(1, n_int + 1) / (n_int + 1)
    prev = solve_minimax(MinimaxProblem(n_terms=n - 1, x_end=problem.x_end,
                                        metric=problem.metric,
                                        r0_mode=problem.r0_mode))
    a = np.concatenate([[prev.a.min() * 0.5], prev.a])
    a *= _sum_target(problem, prev.err_max) / a.sum() if problem.metric == "absolute" \
        else (1.0 - 0.5 * prev.a.min() / prev.a.sum())
    b = np.concatenate([[prev.b.max() * 8.0], prev.b])
    prev_interior = prev.extrema[:_n_interior(MinimaxProblem(
        n_terms=n - 1, x_end=problem.x_end, metric=problem.metric,
        r0_mode=problem.r0_mode))]
    x1 = prev_interior[0]
    interior = np.concatenate([[x1 / 4.0, x1 / 2.0], prev_interior])
    return a, b, interior[:n_int]


def solve_minimax(problem: MinimaxProblem, max_outer: int = 60,
                  inner_newton: int = 40, tol: float = 1e-10,
                  restarts: int = 4) -> MinimaxSolution:
    """Exchange-style solve: Newton on the level equations over the current
    reference abscissae, then relocate the reference onto the residual's
    true extrema; repeat until err_max is stable and the signs alternate.

    Raises MinimaxConvergenceError (carrying the last residual profile) if
    the alternation structure cannot be established.
    """
    n = problem.n_terms
    n_int = _n_interior(problem)
    limit = _scan_limit(problem)
    prof_x = np.linspace(0.0, limit, 2001)
    a0, b0, interior0 = _initial_state(problem, limit)

    last_profile = None
    for attempt in range(restarts + 1):
        a, b, interior = a0.copy(), b0.copy(), interior0.copy()
        if attempt:
            # merged extrema: restart from a geometrically perturbed init
            b = b * (1.0 + 0.07 * attempt * np.linspace(-1.0, 1.0, n))
        err = float(np.max(np.abs(residual(
            a, b, np.linspace(1e-9, limit, 1024), problem.metric))))
        prev_err = math.inf
        for outer in range(1, max_outer + 1):
            pts, signs = _alternation(problem, interior)
            for _ in range(inner_newton):
                a, b, err = _newton_update(a, b, err, pts, signs, problem)
            last_profile = np.stack([prof_x, residual(a, b, prof_x, problem.metric)])
            located = _locate_extrema(a, b, problem, n_int, limit)
            if located.size != n_int:
                break  # lost an extremum: perturb and retry
            interior = located
            if abs(err - prev_err) < tol and err > 0:
                pts, signs = _alternation(problem, interior)
                lev = residual(a, b, pts, problem.metric)
                if np.all(np.sign(lev) == signs) and np.all(
                        np.abs(np.abs(lev) - err) <= 1e-7 * max(err, 1e-30)):
                    extrema = interior if problem.metric == "absolute" else \
                        np.concatenate([interior, [problem.x_end]])
                    return MinimaxSolution(
                        a=np.array(a), b=np.array(b), extrema=extrema,
                        err_max=float(err), iterations=outer, problem=problem,
                        residual_profile=last_profile)
            prev_err = err
    raise MinimaxConvergenceError(
        f"no equioscillating solution for N={n}, metric={problem.metric}",
        profile=last_profile)


def solution_to_params(sol: MinimaxSolution):
    """Adapt a solution to the GELU engine's parameter type."""
    from .gelu import SumExpParams

    return SumExpParams(
        terms=tuple((float(ai), float(bi)) for ai, bi in zip(sol.a, sol.b)),
        r_max=sol.err_max,
        fit_meta={"metric": sol.problem.metric, "x_end": sol.problem.x_end,
                  "r0_mode": sol.problem.r0_mode, "iterations": sol.iterations},
    )


def fit_gelu_params(n_terms: int, x_end: float = 2.8,
                    metric: str = "relative", r0_mode: str = "minus_rmax"):
    sol = solve_minimax(MinimaxProblem(n_terms=n_terms, x_end=x_end,
                                       metric=metric, r0_mode=r0_mode))
    return solution_to_params(sol), sol


def save_fit(sol: MinimaxSolution, params_path, report_path=None) -> None:
    from .gelu import SumExpParams  # noqa: F401  (schema owner)

    solution_to_params(sol).save(params_path)
    if report_path is not None:
        with open(report_path, "w", encoding="utf-8") as f:
            json.dump(sol.report(), f, indent=2, sort_keys=True)
            f.write("\n")
