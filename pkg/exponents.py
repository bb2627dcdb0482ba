"""
Constrained minimisation over joint laws with fixed per-u input marginals,
the LH exponent family built on it, and the source-channel
exponents that scan rate grids over that family.

Every minimisation is a single SLSQP program over the free cells of the
joint tensor: marginal constraints are linear equalities, entropy terms
have analytic gradients and the |.|+ kink is removed by solving an open
and a clamped branch and keeping the better true value.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq, minimize

from config import settings
from mac_model import AuxStructure, MacChannel, RatePair, joint_law, sample_aux_structures
from models import SolverConfig
from typekit import (
    LN2,
    JointDistribution,
    batch_entropy,
    batch_multi_information,
    conditional_divergence,
    entropy,
    kl_divergence,
    multi_information,
    mutual_information,
)
from utils import derive_rng, largest_remainder, validate_stochastic

logger = logging.getLogger(__name__)

FAMILY_KINDS = ("divergence", "x", "y", "xy")
FEASIBILITY_TOL = 1e-7
GRADIENT_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# entropy expressions


class EntropyExpr:
    """sum of coef * H(V on axes) plus an optional linear functional, in bits"""

    def __init__(self, terms=(), linear: Optional[np.ndarray] = None, offset: float = 0.0):
        self.terms = tuple((float(c), tuple(a)) for c, a in terms)
        self.linear = linear
        self.offset = float(offset)

    @classmethod
    def h(cls, *axes: int) -> "EntropyExpr":
        return cls(((1.0, axes),))

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return EntropyExpr(self.terms, self.linear, self.offset + other)
        if self.linear is None:
            linear = other.linear
        elif other.linear is None:
            linear = self.linear
        else:
            linear = self.linear + other.linear
        return EntropyExpr(self.terms + other.terms, linear, self.offset + other.offset)

    def __rmul__(self, c: float) -> "EntropyExpr":
        linear = None if self.linear is None else c * self.linear
        return EntropyExpr(((c * k, a) for k, a in self.terms), linear, c * self.offset)

    def __sub__(self, other):
        return self + (-1.0) * other if not isinstance(other, (int, float)) else self + (-other)

    def value(self, V: np.ndarray) -> float:
        total = self.offset
        for coef, axes in self.terms:
            total += coef * entropy(V, axes)
        if self.linear is not None:
            total += float((self.linear * V).sum())
        return total

    def gradient(self, V: np.ndarray) -> np.ndarray:
        grad = np.zeros(V.shape) if self.linear is None else np.array(self.linear, dtype=float)
        for coef, axes in self.terms:
            other = tuple(i for i in range(V.ndim) if i not in axes)
            m = V.sum(axis=other, keepdims=True) if other else V
            grad -= coef * (np.log2(np.maximum(m, GRADIENT_FLOOR)) + 1.0 / LN2)
        return grad


H = EntropyExpr.h


def _mi_expr(a: Tuple[int, ...], b: Tuple[int, ...], c: Tuple[int, ...]) -> EntropyExpr:
    return H(*a, *c) + H(*b, *c) - H(*a, *b, *c) - H(*c)


def _mi3_expr(a, b, d, c) -> EntropyExpr:
    return H(*a, *c) + H(*b, *c) + H(*d, *c) - H(*a, *b, *d, *c) - 2.0 * H(*c)


# U, X, Y, Z axes of the four-way law
FAMILY_TERMS = {
    "x": _mi_expr((1,), (2, 3), (0,)),
    "y": _mi_expr((2,), (1, 3), (0,)),
    "xy": _mi3_expr((1,), (2,), (3,), (0,)),
}


def family_term(kind: str, V: np.ndarray) -> float:
    """I(X^YZ|U), I(Y^XZ|U) or I(X^Y^Z|U) of a U x X x Y x Z law"""
    if kind == "x":
        return mutual_information(V, (1,), (2, 3), (0,))
    if kind == "y":
        return mutual_information(V, (2,), (1, 3), (0,))
    if kind == "xy":
        return multi_information(V, [(1,), (2,), (3,)], (0,))
    raise ValueError(f"Unknown exponent family {kind!r}")


# ---------------------------------------------------------------------------
# optimisation program over free cells


class _Program:
    def __init__(self, free: np.ndarray, marginals: List[Tuple[int, np.ndarray]]):
        self.shape = free.shape
        self.free = free
        self.idx = np.flatnonzero(free.ravel())
        self.marginals = marginals
        cells = np.array(np.unravel_index(self.idx, self.shape))
        rows, rhs = [], []
        for position, (axis, target) in enumerate(marginals):
            for u in range(target.shape[0]):
                values = []
                for a in range(target.shape[1]):
                    row = (cells[0] == u) & (cells[axis] == a)
                    if row.any():
                        values.append((a, row))
                    elif target[u, a] > 0:
                        raise ValueError(f"marginal on axis {axis} needs mass at (u={u}, {a}) but no cell can carry it")
                if position > 0 and values:
                    values = values[:-1]
                for a, row in values:
                    rows.append(row.astype(float))
                    rhs.append(target[u, a])
        self.a_eq = np.array(rows)
        self.b_eq = np.array(rhs)

    @property
    def size(self) -> int:
        return len(self.idx)

    def to_tensor(self, v: np.ndarray) -> np.ndarray:
        V = np.zeros(self.shape)
        V.flat[self.idx] = np.clip(v, 0.0, None)
        return V

    def _expand(self, factor: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * len(self.shape)
        shape[0] = factor.shape[0]
        shape[axis] = factor.shape[1]
        return factor.reshape(shape)

    def _current(self, V: np.ndarray, axis: int) -> np.ndarray:
        other = tuple(i for i in range(V.ndim) if i not in (0, axis))
        return V.sum(axis=other)

    def repair(self, V: np.ndarray, iterations: int = 500, floor: float = 1e-15) -> np.ndarray:
        """Iterative proportional fitting back onto the marginal constraints"""
        V = np.where(self.free, np.maximum(V, 0.0) + floor, 0.0)
        for _ in range(iterations):
            worst = 0.0
            for axis, target in self.marginals:
                cur = self._current(V, axis)
                worst = max(worst, float(np.abs(cur - target).max()))
                factor = np.where(cur > 0, target / np.where(cur > 0, cur, 1.0), 0.0)
                V = V * self._expand(factor, axis)
            if worst < 1e-14:
                break
        return V

    def marginal_gap(self, V: np.ndarray) -> float:
        return max(float(np.abs(self._current(V, axis) - target).sum()) for axis, target in self.marginals)

    def random_start(self, rng: np.random.Generator) -> np.ndarray:
        V = np.zeros(self.shape)
        V.flat[self.idx] = rng.dirichlet(np.ones(self.size))
        return self.repair(V)

    def run(
        self,
        objective: EntropyExpr,
        starts: List[np.ndarray],
        config: SolverConfig,
        inequalities: Sequence[EntropyExpr] = (),
    ) -> List[Tuple[np.ndarray, bool]]:
        """Run SLSQP from every start; returns repaired tensors and success flags"""
        constraints = [
            {"type": "eq", "fun": lambda v: self.a_eq @ v - self.b_eq, "jac": lambda v: self.a_eq}
        ]
        for expr in inequalities:
            constraints.append({
                "type": "ineq",
                "fun": lambda v, e=expr: e.value(self.to_tensor(v)),
                "jac": lambda v, e=expr: e.gradient(self.to_tensor(v)).ravel()[self.idx],
            })

        def fun(v):
            return objective.value(self.to_tensor(v))

        def jac(v):
            return objective.gradient(self.to_tensor(v)).ravel()[self.idx]

        bounds = [(0.0, 1.0)] * self.size
        outcomes = []
        for start in starts:
            v0 = np.asarray(start).ravel()[self.idx]
            try:
                res = minimize(
                    fun, v0, jac=jac, method="SLSQP", bounds=bounds, constraints=constraints,
                    options={"maxiter": config.max_iter, "ftol": config.tol * 1e-4},
                )
                outcomes.append((self.repair(self.to_tensor(res.x)), bool(res.success)))
            except (ValueError, np.linalg.LinAlgError) as e:
                logger.debug(f"SLSQP start abandoned: {e}")
                outcomes.append((self.repair(np.asarray(start)), False))
        return outcomes


def _pick_best(
    candidates: List[Tuple[np.ndarray, bool]],
    score: Callable[[np.ndarray], float],
    feasible: Callable[[np.ndarray], bool],
) -> Tuple[Optional[np.ndarray], float, bool]:
    best, best_value, best_ok = None, math.inf, False
    for V, ok in candidates:
        if not feasible(V):
            continue
        value = score(V)
        if value < best_value:
            best, best_value, best_ok = V, value, ok
    return best, best_value, best_ok


# ---------------------------------------------------------------------------
# results and constraints


@dataclass
class ExponentResult:
    value: float
    argmin: Optional[JointDistribution]
    divergence: float
    dependence: float
    excess: float
    converged: bool
    family: str
    feasible: bool = True
    marginal_gap: float = 0.0
    rate: float = 0.0

    @property
    def term_breakdown(self) -> Dict[str, float]:
        return {"divergence": self.divergence, "dependence": self.dependence, "excess": self.excess}

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "family": self.family,
            "rate": self.rate,
            "converged": self.converged,
            "feasible": self.feasible,
            "marginal_gap": self.marginal_gap,
            "breakdown": self.term_breakdown,
            "argmin": self.argmin.to_json() if self.argmin is not None else None,
        }


def _infeasible(family: str, rate: float = 0.0) -> ExponentResult:
    return ExponentResult(math.inf, None, math.inf, math.inf, 0.0, False, family, feasible=False, rate=rate)


@dataclass(frozen=True, eq=False)
class MarginalConstraint:
    """
    Fixed P_U, P_X|U, P_Y|U defining the feasible joint laws; an optional
    second X kernel fixes the marginal of the competing codeword.
    """

    p_u: np.ndarray
    p_x_given_u: np.ndarray
    p_y_given_u: np.ndarray
    p_xt_given_u: Optional[np.ndarray] = None

    def __post_init__(self):
        p_u = validate_stochastic(self.p_u, "P_U")
        px = validate_stochastic(np.atleast_2d(self.p_x_given_u), "P_X|U")
        py = validate_stochastic(np.atleast_2d(self.p_y_given_u), "P_Y|U")
        if px.shape[0] != p_u.shape[0] or py.shape[0] != p_u.shape[0]:
            raise ValueError(f"|U|={p_u.shape[0]} but kernels have {px.shape[0]} and {py.shape[0]} rows")
        object.__setattr__(self, "p_u", p_u)
        object.__setattr__(self, "p_x_given_u", px)
        object.__setattr__(self, "p_y_given_u", py)
        if self.p_xt_given_u is not None:
            pxt = validate_stochastic(np.atleast_2d(self.p_xt_given_u), "tilde P_X|U")
            if pxt.shape != px.shape:
                raise ValueError(f"tilde P_X|U has shape {pxt.shape}, expected {px.shape}")
            object.__setattr__(self, "p_xt_given_u", pxt)

    @classmethod
    def from_aux(cls, aux: AuxStructure, p_xt_given_u=None) -> "MarginalConstraint":
        return cls(aux.p_u, aux.p_x_given_u, aux.p_y_given_u, p_xt_given_u)

    def merged(self) -> "MarginalConstraint":
        """Drop zero-mass u values and merge u values sharing both kernels"""
        keys: Dict[bytes, int] = {}
        mass, px, py = [], [], []
        for u, p in enumerate(self.p_u):
            if p <= 0:
                continue
            key = self.p_x_given_u[u].tobytes() + self.p_y_given_u[u].tobytes()
            if key in keys:
                mass[keys[key]] += p
                continue
            keys[key] = len(mass)
            mass.append(p)
            px.append(self.p_x_given_u[u])
            py.append(self.p_y_given_u[u])
        return MarginalConstraint(np.array(mass), np.array(px), np.array(py))

    def key(self) -> bytes:
        parts = [self.p_u, self.p_x_given_u, self.p_y_given_u]
        if self.p_xt_given_u is not None:
            parts.append(self.p_xt_given_u)
        return b"|".join(np.round(p, 15).tobytes() + str(p.shape).encode() for p in parts)


@dataclass(frozen=True)
class Objective:
    kind: str
    W: MacChannel
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"Unknown objective {self.kind!r}; expected one of {FAMILY_KINDS}")
        if self.rate < 0:
            raise ValueError(f"rate must be non-negative, got {self.rate}")


# ---------------------------------------------------------------------------
# LH exponent family


class _LhProblem:
    """One (W, constraint) pair; caches the rate-independent open branch"""

    def __init__(self, W: MacChannel, constraint: MarginalConstraint, config: SolverConfig):
        self.W = W
        self.constraint = constraint
        self.config = config
        p_u = constraint.p_u
        self.anchor = joint_law(W, p_u, constraint.p_x_given_u, constraint.p_y_given_u)
        free = self.anchor > 0
        self.program = _Program(
            free,
            [(1, p_u[:, None] * constraint.p_x_given_u), (2, p_u[:, None] * constraint.p_y_given_u)],
        )
        linear = np.zeros(self.anchor.shape)
        linear[free] = -np.log2(self.anchor[free])
        self.base = (-1.0) * H(0, 1, 2, 3) + EntropyExpr(linear=linear)
        self._open: Dict[str, Tuple[np.ndarray, bool]] = {}
        self._starts: Optional[List[np.ndarray]] = None

    def starts(self) -> List[np.ndarray]:
        if self._starts is None:
            self._starts = [
                self.program.random_start(derive_rng(self.config.seed, 11, r)) for r in range(self.config.restarts)
            ]
        return self._starts

    def score(self, kind: str, rate: float, V: np.ndarray) -> float:
        value = self.base.value(V)
        if kind != "divergence":
            value += max(0.0, FAMILY_TERMS[kind].value(V) - rate)
        return value

    def open_branch(self, kind: str) -> Tuple[np.ndarray, bool]:
        if kind not in self._open:
            objective = self.base + FAMILY_TERMS[kind]
            outcomes = self.program.run(objective, [self.anchor] + self.starts(), self.config)
            V, _, ok = _pick_best(outcomes, objective.value, lambda V: True)
            self._open[kind] = (V, ok)
        return self._open[kind]

    def result(self, kind: str, rate: float, V: np.ndarray, converged: bool) -> ExponentResult:
        dist = JointDistribution.from_array(V / V.sum())
        kernel = np.broadcast_to(self.W.kernel, V.shape)
        divergence = max(0.0, conditional_divergence(dist.conditional((0, 1, 2)), kernel, dist.marginal((0, 1, 2))))
        dependence = max(0.0, mutual_information(dist, (1,), (2,), (0,)))
        excess = 0.0 if kind == "divergence" else max(0.0, family_term(kind, dist.probs) - rate)
        return ExponentResult(
            value=divergence + dependence + excess,
            argmin=dist,
            divergence=divergence,
            dependence=dependence,
            excess=excess,
            converged=converged,
            family=kind,
            marginal_gap=self.program.marginal_gap(V),
            rate=rate,
        )

    def solve(self, kind: str, rate: float, warm: Optional[np.ndarray] = None) -> ExponentResult:
        if self.score(kind, rate, self.anchor) <= 1e-12:
            return self.result(kind, rate, self.anchor, True)
        term = FAMILY_TERMS[kind]
        candidates = [(self.anchor, True), self.open_branch(kind)]
        starts = [self.anchor, candidates[1][0]] + ([warm] if warm is not None else []) + self.starts()
        candidates += self.program.run(self.base, starts, self.config, inequalities=[(-1.0) * term + rate])
        V, _, ok = _pick_best(candidates, lambda V: self.score(kind, rate, V), lambda V: True)
        if not ok:
            logger.warning(f"No SLSQP restart converged for the {kind} family at rate {rate:.4f}")
        return self.result(kind, rate, V, ok)


def minimize_over_vlh(objective: Objective, constraint: MarginalConstraint, config: Optional[SolverConfig] = None) -> ExponentResult:
    """
    Minimise D(V_Z|UXY || W | V_UXY) + I_V(X^Y|U) [+ |term - rate|+] over
    the joint laws with V_UX = P_U P_X|U and V_UY = P_U P_Y|U.
    """
    problem = _LhProblem(objective.W, constraint, config or SolverConfig())
    return problem.solve(objective.kind, objective.rate)


def exponent_x_lh(r1: float, W: MacChannel, constraint: MarginalConstraint, config: Optional[SolverConfig] = None) -> ExponentResult:
    return minimize_over_vlh(Objective("x", W, r1), constraint, config)


def exponent_y_lh(r2: float, W: MacChannel, constraint: MarginalConstraint, config: Optional[SolverConfig] = None) -> ExponentResult:
    return minimize_over_vlh(Objective("y", W, r2), constraint, config)


def exponent_xy_lh(r: RatePair, W: MacChannel, constraint: MarginalConstraint, config: Optional[SolverConfig] = None) -> ExponentResult:
    return minimize_over_vlh(Objective("xy", W, r.total), constraint, config)


def exponent_lh(r: RatePair, W: MacChannel, constraint: MarginalConstraint, config: Optional[SolverConfig] = None) -> ExponentResult:
    """Minimum of the three family members; ties keep the x, y, xy order"""
    problem = _LhProblem(W, constraint, config or SolverConfig())
    results = [problem.solve("x", r.r1), problem.solve("y", r.r2), problem.solve("xy", r.total)]
    return min(results, key=lambda res: res.value)


def threshold_exponent(
    r: RatePair,
    W: MacChannel,
    constraint: MarginalConstraint,
    eta: float,
    complement: bool = False,
    config: Optional[SolverConfig] = None,
) -> ExponentResult:
    """
    Minimum of D + I(X^Y|U) over the laws where at least one of the three
    family terms stays within eta of its rate, or (complement) where all
    three exceed their rates by at least eta. An empty set gives +inf.
    """
    config = config or SolverConfig()
    problem = _LhProblem(W, constraint, config)
    checks = [("x", r.r1), ("y", r.r2), ("xy", r.total)]
    family = "threshold-complement" if complement else "threshold"

    def slack(kind: str, rate: float) -> EntropyExpr:
        return FAMILY_TERMS[kind] - (rate + eta)

    if complement:
        inequalities = [slack(kind, rate) for kind, rate in checks]
        if all(c.value(problem.anchor) >= 0 for c in inequalities):
            outcome = problem.result("divergence", 0.0, problem.anchor, True)
        else:
            runs = problem.program.run(problem.base, [problem.anchor] + problem.starts(), config, inequalities)
            V, _, ok = _pick_best(
                runs, problem.base.value, lambda V: all(c.value(V) >= -FEASIBILITY_TOL for c in inequalities)
            )
            if V is None:
                return _infeasible(family)
            outcome = problem.result("divergence", 0.0, V, ok)
    else:
        if any(slack(kind, rate).value(problem.anchor) <= 0 for kind, rate in checks):
            outcome = problem.result("divergence", 0.0, problem.anchor, True)
        else:
            candidates = []
            for kind, rate in checks:
                bound = (-1.0) * slack(kind, rate)
                runs = problem.program.run(problem.base, [problem.anchor] + problem.starts(), config, [bound])
                candidates += [(V, ok) for V, ok in runs if bound.value(V) >= -FEASIBILITY_TOL]
            V, _, ok = _pick_best(candidates, problem.base.value, lambda V: True)
            if V is None:
                return _infeasible(family)
            outcome = problem.result("divergence", 0.0, V, ok)
    outcome.family = family
    return outcome


def grid_oracle_exponent(r: RatePair, W: MacChannel, constraint: MarginalConstraint, family: str = "lh", step: float = 0.05) -> float:
    """
    Brute-force minimum over a grid for all-binary, |U|=1 instances: the
    free V_XY cell and the four output probabilities each run over
    0, step, ..., 1 of their feasible ranges.
    """
    if W.shape != (2, 2, 2) or constraint.p_u.shape[0] != 1:
        raise ValueError("grid oracle needs binary X, Y, Z and |U| = 1")
    kinds = ("x", "y", "xy") if family == "lh" else (family,)
    rates = {"x": r.r1, "y": r.r2, "xy": r.total, "divergence": 0.0}
    px0 = constraint.p_x_given_u[0, 0]
    py0 = constraint.p_y_given_u[0, 0]
    lo, hi = max(0.0, px0 + py0 - 1.0), min(px0, py0)
    ticks = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    q = np.stack(np.meshgrid(ticks, ticks, ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 2, 2)
    kernels = np.stack([q, 1.0 - q], axis=-1)
    A = joint_law(W, constraint.p_u, constraint.p_x_given_u, constraint.p_y_given_u)[0]
    log_a = np.where(A > 0, np.log2(np.where(A > 0, A, 1.0)), 0.0)
    groups = {"x": [(1,), (2, 3)], "y": [(2,), (1, 3)], "xy": [(1,), (2,), (3,)]}
    best = math.inf
    for t in ticks:
        v00 = lo + t * (hi - lo)
        v_xy = np.clip(np.array([[v00, px0 - v00], [py0 - v00, 1.0 - px0 - py0 + v00]]), 0.0, None)
        V = v_xy[None, :, :, None] * kernels
        V4 = V[:, None]
        base = -batch_entropy(V4, (0, 1, 2, 3)) - (V * log_a).sum(axis=(1, 2, 3))
        base[((V > 0) & (A <= 0)).any(axis=(1, 2, 3))] = math.inf
        for kind in kinds:
            if kind == "divergence":
                values = base
            else:
                term = batch_multi_information(V4, groups[kind], (0,))
                values = base + np.maximum(0.0, term - rates[kind])
            best = min(best, float(values.min()))
    return best


# ---------------------------------------------------------------------------
# source reliability


def _source_probs(Q) -> np.ndarray:
    probs = Q.probs if isinstance(Q, JointDistribution) else getattr(Q, "q", Q)
    if isinstance(probs, JointDistribution):
        probs = probs.probs
    return validate_stochastic(np.asarray(probs, dtype=float).ravel(), "source law")


def source_reliability(R: float, Q) -> float:
    """
    e(R, Q) = min D(P || Q) over P with H(P) >= R, in bits. The minimiser
    lies on the tilted family P ~ Q^lambda, lambda in [0, 1].
    """
    q = _source_probs(Q)
    log_size = math.log2(len(q))
    if R < -1e-12 or R > log_size + 1e-12:
        raise ValueError(f"rate {R} outside [0, log|S|] = [0, {log_size:.6f}]")
    if R <= entropy(q, (0,)):
        return 0.0
    support = q[q > 0]
    log_support = math.log2(len(support))
    if R > log_support + 1e-12:
        return math.inf

    def tilt(lam: float) -> np.ndarray:
        w = support ** lam
        return w / w.sum()

    if R >= log_support - 1e-12:
        P = tilt(0.0)
    else:
        lam = brentq(lambda l: entropy(tilt(l), (0,)) - R, 0.0, 1.0, xtol=1e-15)
        P = tilt(lam)
    return kl_divergence(P, support)


def rate_grid(Q, points: Optional[int] = None) -> np.ndarray:
    points = points or settings.rate_grid_points
    return np.linspace(0.0, math.log2(len(_source_probs(Q))), points)


def reliability_curve(grid: np.ndarray, Q) -> np.ndarray:
    """e(R, Q) on a grid, with a running max keeping it nondecreasing"""
    return np.maximum.accumulate(np.array([source_reliability(float(R), Q) for R in grid]))


# ---------------------------------------------------------------------------
# rate-to-composition maps


@dataclass(frozen=True, eq=False)
class RateToCompositionMap:
    rates: np.ndarray
    kernels: Tuple[np.ndarray, ...]

    def __post_init__(self):
        rates = np.atleast_1d(np.asarray(self.rates, dtype=float))
        kernels = tuple(validate_stochastic(np.atleast_2d(k), "composition kernel") for k in self.kernels)
        if len(rates) != len(kernels):
            raise ValueError(f"{len(rates)} grid rates but {len(kernels)} kernels")
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "kernels", kernels)

    @classmethod
    def constant(cls, kernel, rates=(0.0,)) -> "RateToCompositionMap":
        return cls(np.asarray(rates, dtype=float), tuple(np.asarray(kernel, dtype=float) for _ in rates))

    def index(self, rate: float) -> int:
        """Nearest grid point; ties go to the lower index"""
        return int(np.argmin(np.abs(self.rates - rate)))

    def __call__(self, rate: float) -> np.ndarray:
        return self.kernels[self.index(rate)]


@dataclass(frozen=True, eq=False)
class PairRateCompositionMap:
    rates1: np.ndarray
    rates2: np.ndarray
    kernels: Tuple[np.ndarray, ...]
    index: np.ndarray

    def __post_init__(self):
        rates1 = np.atleast_1d(np.asarray(self.rates1, dtype=float))
        rates2 = np.atleast_1d(np.asarray(self.rates2, dtype=float))
        kernels = tuple(validate_stochastic(np.atleast_2d(k), "composition kernel") for k in self.kernels)
        index = np.asarray(self.index, dtype=np.int64)
        if index.shape != (len(rates1), len(rates2)):
            raise ValueError(f"index table has shape {index.shape}, expected {(len(rates1), len(rates2))}")
        if index.min() < 0 or index.max() >= len(kernels):
            raise ValueError("index table refers to a missing kernel")
        object.__setattr__(self, "rates1", rates1)
        object.__setattr__(self, "rates2", rates2)
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "index", index)

    @classmethod
    def from_single(cls, single: RateToCompositionMap, rates1, rates2, sender: int) -> "PairRateCompositionMap":
        """Two-argument map that ignores the other sender's rate"""
        rates1 = np.atleast_1d(np.asarray(rates1, dtype=float))
        rates2 = np.atleast_1d(np.asarray(rates2, dtype=float))
        if sender == 1:
            own = [single.index(r) for r in rates1]
            index = np.repeat(np.array(own)[:, None], len(rates2), axis=1)
        elif sender == 2:
            own = [single.index(r) for r in rates2]
            index = np.repeat(np.array(own)[None, :], len(rates1), axis=0)
        else:
            raise ValueError(f"sender must be 1 or 2, got {sender}")
        return cls(rates1, rates2, single.kernels, index)

    def __call__(self, r1: float, r2: float) -> np.ndarray:
        a = int(np.argmin(np.abs(self.rates1 - r1)))
        b = int(np.argmin(np.abs(self.rates2 - r2)))
        return self.kernels[self.index[a, b]]


# ---------------------------------------------------------------------------
# evaluator with caching


@dataclass
class LhProfile:
    """
    Family values of one constant-composition structure on a rate grid,
    each made nonincreasing by a running minimum.
    """

    grid1: np.ndarray
    grid2: np.ndarray
    ex: np.ndarray
    ey: np.ndarray
    exy: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return np.minimum(np.minimum(self.ex[:, None], self.ey[None, :]), self.exy)


class LhEvaluator:
    def __init__(self, W: MacChannel, config: Optional[SolverConfig] = None):
        self.W = W
        self.config = config or SolverConfig()
        self._problems: Dict[bytes, _LhProblem] = {}
        self._results: Dict[Tuple[bytes, str, float], ExponentResult] = {}
        self._profiles: Dict[Tuple[bytes, bytes, bytes], LhProfile] = {}

    def problem(self, constraint: MarginalConstraint) -> _LhProblem:
        key = constraint.key()
        if key not in self._problems:
            self._problems[key] = _LhProblem(self.W, constraint, self.config)
        return self._problems[key]

    def family(self, kind: str, rate: float, constraint: MarginalConstraint, warm: Optional[np.ndarray] = None) -> ExponentResult:
        key = (constraint.key(), kind, round(float(rate), 12))
        if key not in self._results:
            self._results[key] = self.problem(constraint).solve(kind, float(rate), warm)
        return self._results[key]

    def lh(self, r1: float, r2: float, constraint: MarginalConstraint) -> float:
        return min(
            self.family("x", r1, constraint).value,
            self.family("y", r2, constraint).value,
            self.family("xy", r1 + r2, constraint).value,
        )

    def _curve(self, kind: str, rates: np.ndarray, constraint: MarginalConstraint) -> np.ndarray:
        values, warm = [], None
        for rate in rates:
            res = self.family(kind, rate, constraint, warm)
            values.append(res.value)
            warm = res.argmin.probs if res.argmin is not None else None
        return np.minimum.accumulate(np.array(values))

    def profile(self, constraint: MarginalConstraint, grid1: np.ndarray, grid2: np.ndarray) -> LhProfile:
        key = (constraint.key(), np.asarray(grid1).tobytes(), np.asarray(grid2).tobytes())
        if key not in self._profiles:
            sums = np.round(grid1[:, None] + grid2[None, :], 12)
            unique, inverse = np.unique(sums, return_inverse=True)
            exy = self._curve("xy", unique, constraint)[inverse].reshape(sums.shape)
            self._profiles[key] = LhProfile(
                grid1, grid2, self._curve("x", grid1, constraint), self._curve("y", grid2, constraint), exy
            )
        return self._profiles[key]


# ---------------------------------------------------------------------------
# source-channel exponents


@dataclass
class RateScanResult:
    value: float
    r1: float
    r2: float
    index: Tuple[int, int]
    e1: float
    e2: float
    lh: float
    aux_index: Optional[int] = None

    def to_json(self) -> dict:
        return {
            "value": self.value, "r1": self.r1, "r2": self.r2, "index": list(self.index),
            "e1": self.e1, "e2": self.e2, "lh": self.lh, "aux_index": self.aux_index,
        }


def _scan_min(
    Q1, Q2, p_u, kernels_at: Callable[[int, int], Tuple[np.ndarray, np.ndarray]],
    grid1: np.ndarray, grid2: np.ndarray, evaluator: LhEvaluator,
) -> RateScanResult:
    e1, e2 = reliability_curve(grid1, Q1), reliability_curve(grid2, Q2)
    constraints = {}
    for a, b in itertools.product(range(len(grid1)), range(len(grid2))):
        px, py = kernels_at(a, b)
        constraints[a, b] = MarginalConstraint(p_u, px, py).merged()
    distinct = {c.key() for c in constraints.values()}
    if len(distinct) == 1:
        matrix = evaluator.profile(constraints[0, 0], grid1, grid2).matrix
        total = e1[:, None] + e2[None, :] + matrix
        a, b = np.unravel_index(int(np.argmin(total)), total.shape)
        return RateScanResult(float(total[a, b]), float(grid1[a]), float(grid2[b]), (int(a), int(b)),
                              float(e1[a]), float(e2[b]), float(matrix[a, b]))
    best, best_idx, best_lh = math.inf, (0, 0), math.nan
    for a, b in itertools.product(range(len(grid1)), range(len(grid2))):
        floor = e1[a] + e2[b]
        if floor >= best:
            continue
        value = evaluator.lh(grid1[a], grid2[b], constraints[a, b])
        if floor + value < best:
            best, best_idx, best_lh = floor + value, (a, b), value
    a, b = best_idx
    return RateScanResult(float(best), float(grid1[a]), float(grid2[b]), (a, b), float(e1[a]), float(e2[b]), float(best_lh))


def ej_exponent(
    Q1, Q2, W: MacChannel, P_U, g1: RateToCompositionMap, g2: RateToCompositionMap,
    config: Optional[SolverConfig] = None, grid_points: Optional[int] = None,
    evaluator: Optional[LhEvaluator] = None,
) -> RateScanResult:
    """min over the rate grid of e1 + e2 + E_LH with compositions g1(R1), g2(R2)"""
    grid1, grid2 = rate_grid(Q1, grid_points), rate_grid(Q2, grid_points)
    evaluator = evaluator or LhEvaluator(W, config)
    return _scan_min(Q1, Q2, P_U, lambda a, b: (g1(grid1[a]), g2(grid2[b])), grid1, grid2, evaluator)


def ej0_exponent(
    Q1, Q2, W: MacChannel, P_U, g1: PairRateCompositionMap, g2: PairRateCompositionMap,
    config: Optional[SolverConfig] = None, grid_points: Optional[int] = None,
    evaluator: Optional[LhEvaluator] = None,
) -> RateScanResult:
    """As ej_exponent, with compositions chosen from both rates"""
    grid1, grid2 = rate_grid(Q1, grid_points), rate_grid(Q2, grid_points)
    evaluator = evaluator or LhEvaluator(W, config)
    return _scan_min(
        Q1, Q2, P_U, lambda a, b: (g1(grid1[a], grid2[b]), g2(grid1[a], grid2[b])), grid1, grid2, evaluator
    )


def _sampled_sup(
    structures: List[AuxStructure], grid1: np.ndarray, grid2: np.ndarray, evaluator: LhEvaluator
) -> Tuple[np.ndarray, np.ndarray]:
    matrices = np.stack([
        evaluator.profile(MarginalConstraint.from_aux(aux).merged(), grid1, grid2).matrix for aux in structures
    ])
    return matrices.max(axis=0), matrices.argmax(axis=0)


def _structures(W: MacChannel, aux_budget: Optional[int], seed: int, structures) -> List[AuxStructure]:
    if structures is not None:
        return list(structures)
    return sample_aux_structures(W.in1.size, W.in2.size, aux_budget or settings.exponent_aux_budget, seed)


def es_lh_exponent(
    Q1, Q2, W: MacChannel, aux_budget: Optional[int] = None, seed: int = 0,
    config: Optional[SolverConfig] = None, grid_points: Optional[int] = None,
    evaluator: Optional[LhEvaluator] = None, structures: Optional[List[AuxStructure]] = None,
) -> RateScanResult:
    """
    max over the rate grid of min(e1, e2, sup E_LH), the sup taken over
    sampled auxiliary structures. Sampling makes this a lower bound.
    """
    structures = _structures(W, aux_budget, seed, structures)
    evaluator = evaluator or LhEvaluator(W, config)
    grid1, grid2 = rate_grid(Q1, grid_points), rate_grid(Q2, grid_points)
    e1, e2 = reliability_curve(grid1, Q1), reliability_curve(grid2, Q2)
    sup, arg = _sampled_sup(structures, grid1, grid2, evaluator)
    score = np.minimum(np.minimum(e1[:, None], e2[None, :]), sup)
    a, b = np.unravel_index(int(np.argmax(score)), score.shape)
    return RateScanResult(float(score[a, b]), float(grid1[a]), float(grid2[b]), (int(a), int(b)),
                          float(e1[a]), float(e2[b]), float(sup[a, b]), int(arg[a, b]))


@dataclass
class EquivalentFormResult:
    scan: RateScanResult
    witness: Optional[RateScanResult]

    @property
    def value(self) -> float:
        return self.scan.value

    @property
    def gap(self) -> float:
        return math.nan if self.witness is None else abs(self.witness.value - self.scan.value)

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "scan": self.scan.to_json(),
            "witness": self.witness.to_json() if self.witness else None,
            "gap": self.gap,
        }


def block_structure(aux: AuxStructure, blocks: int) -> Tuple[np.ndarray, np.ndarray]:
    """Spread the u values of aux over [blocks] in proportion to P_U"""
    rows = np.repeat(np.arange(aux.size), largest_remainder(aux.p_u, blocks))
    return aux.p_x_given_u[rows], aux.p_y_given_u[rows]


def equivalent_form_ej0(
    Q1, Q2, W: MacChannel, aux_budget: Optional[int] = None, seed: int = 0,
    config: Optional[SolverConfig] = None, grid_points: Optional[int] = None,
    evaluator: Optional[LhEvaluator] = None, structures: Optional[List[AuxStructure]] = None,
    witness_blocks: Optional[int] = None, with_witness: bool = True,
) -> EquivalentFormResult:
    """
    min over the rate grid of e1 + e2 + sup E_LH. The witness evaluates the
    two-argument exponent with a uniform time-sharing variable over
    witness_blocks values whose blocks copy, at every rate pair, the best
    sampled structure there.
    """
    structures = _structures(W, aux_budget, seed, structures)
    evaluator = evaluator or LhEvaluator(W, config)
    grid1, grid2 = rate_grid(Q1, grid_points), rate_grid(Q2, grid_points)
    e1, e2 = reliability_curve(grid1, Q1), reliability_curve(grid2, Q2)
    sup, arg = _sampled_sup(structures, grid1, grid2, evaluator)
    total = e1[:, None] + e2[None, :] + sup
    a, b = np.unravel_index(int(np.argmin(total)), total.shape)
    scan = RateScanResult(float(total[a, b]), float(grid1[a]), float(grid2[b]), (int(a), int(b)),
                          float(e1[a]), float(e2[b]), float(sup[a, b]), int(arg[a, b]))
    if not with_witness:
        return EquivalentFormResult(scan, None)

    k = witness_blocks or settings.witness_blocks
    used = sorted({int(t) for t in np.unique(arg)})
    position = {t: p for p, t in enumerate(used)}
    expanded = [block_structure(structures[t], k) for t in used]
    index = np.vectorize(position.get)(arg)
    g1 = PairRateCompositionMap(grid1, grid2, tuple(e[0] for e in expanded), index)
    g2 = PairRateCompositionMap(grid1, grid2, tuple(e[1] for e in expanded), index)
    witness = ej0_exponent(Q1, Q2, W, np.full(k, 1.0 / k), g1, g2, grid_points=grid_points, evaluator=evaluator)
    return EquivalentFormResult(scan, witness)


@dataclass
class SeparationReport:
    es: float
    ej: float
    holds: bool
    best_aux: int
    tolerance: float = 1e-6

    def to_json(self) -> dict:
        return {"es": self.es, "ej": self.ej, "holds": self.holds, "best_aux": self.best_aux, "tolerance": self.tolerance}


def proposition1_check(
    Q1, Q2, W: MacChannel, aux_budget: Optional[int] = None, seed: int = 0,
    config: Optional[SolverConfig] = None, grid_points: Optional[int] = None,
    evaluator: Optional[LhEvaluator] = None, structures: Optional[List[AuxStructure]] = None,
) -> SeparationReport:
    """Constant-composition ej, maximised over the same samples, against es"""
    structures = _structures(W, aux_budget, seed, structures)
    evaluator = evaluator or LhEvaluator(W, config)
    es = es_lh_exponent(Q1, Q2, W, grid_points=grid_points, evaluator=evaluator, structures=structures)
    values = [
        ej_exponent(
            Q1, Q2, W, aux.p_u,
            RateToCompositionMap.constant(aux.p_x_given_u), RateToCompositionMap.constant(aux.p_y_given_u),
            grid_points=grid_points, evaluator=evaluator,
        ).value
        for aux in structures
    ]
    best = int(np.argmax(values))
    return SeparationReport(es.value, float(values[best]), values[best] >= es.value - 1e-6, best)


# ---------------------------------------------------------------------------
# competing-codeword exponent and the mixture construction

# U, X, X~, Y, Z axes of the five-way law
_TILDE_GAP = _mi_expr((2,), (1, 3, 4), (0,))


def mixture_endpoints(P: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    V* draws X~ from P(x | u, y, z) independently of X; V** draws it from
    P(x | u) independently of (X, Y, Z). Both extend the U x X x Y x Z law P.
    """
    p_uyz = P.sum(axis=1, keepdims=True)
    cond_uyz = np.where(p_uyz > 0, P / np.where(p_uyz > 0, p_uyz, 1.0), 0.0)
    p_ux = P.sum(axis=(2, 3))
    p_u = p_ux.sum(axis=1, keepdims=True)
    cond_u = np.where(p_u > 0, p_ux / np.where(p_u > 0, p_u, 1.0), 0.0)
    v_star = np.einsum("uxyz,uwyz->uxwyz", P, cond_uyz)
    v_star2 = np.einsum("uxyz,uw->uxwyz", P, cond_u)
    return v_star, v_star2


def mixture_law(v_star: np.ndarray, v_star2: np.ndarray, epsilon: float) -> np.ndarray:
    return (1.0 - epsilon) * v_star + epsilon * v_star2


def mixture_gap(V: np.ndarray, r1k: float) -> float:
    """I(X~ ^ X, Y, Z | U) - R1k on a five-way law"""
    return mutual_information(V, (2,), (1, 3, 4), (0,)) - r1k


def bisect_mixture(P: np.ndarray, r1k: float, eta: float, iterations: Optional[int] = None) -> Tuple[float, np.ndarray, float]:
    """
    Bisection for the mixing weight where the gap comes down to eta,
    keeping gap > eta at the returned weight.
    """
    v_star, v_star2 = mixture_endpoints(P)
    lo, hi = 0.0, 1.0
    r_lo = mixture_gap(v_star, r1k)
    if r_lo <= eta:
        raise ValueError(f"gap at epsilon=0 is {r_lo:.6f}, not above eta={eta}")
    for _ in range(iterations or settings.bisection_iterations):
        mid = 0.5 * (lo + hi)
        r_mid = mixture_gap(mixture_law(v_star, v_star2, mid), r1k)
        if r_mid > eta:
            lo, r_lo = mid, r_mid
        else:
            hi = mid
    return lo, mixture_law(v_star, v_star2, lo), r_lo


def competing_constraints(r1k: float, r2j: float, eta: float) -> List[EntropyExpr]:
    """The three threshold constraints on (U, X~, Y, Z), each as expr >= 0"""
    return [
        _mi_expr((2,), (3, 4), (0,)) - (r1k + eta),
        _mi_expr((3,), (2, 4), (0,)) - (r2j + eta),
        _mi3_expr((2,), (3,), (4,), (0,)) - (r1k + r2j + eta),
    ]


def ecthx_exponent(
    r1k: float, r2j: float, eta: float, W: MacChannel, constraint: MarginalConstraint,
    config: Optional[SolverConfig] = None, anchors: Sequence[np.ndarray] = (),
) -> ExponentResult:
    """
    min of D + I(X^Y|U) + |I(X~ ^ X,Y,Z | U) - R1k|+ over five-way laws
    with fixed X, X~ and Y marginals whose (X~, Y) part clears all three
    thresholds by eta. An empty constraint set gives +inf.
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if constraint.p_xt_given_u is None:
        raise ValueError("competing-codeword exponent needs a tilde P_X|U")
    config = config or SolverConfig()
    p_u, pxt = constraint.p_u, constraint.p_xt_given_u
    P = joint_law(W, p_u, constraint.p_x_given_u, constraint.p_y_given_u)
    free = (P[:, :, None, :, :] > 0) & (pxt[:, None, :, None, None] > 0)
    program = _Program(
        free,
        [(1, p_u[:, None] * constraint.p_x_given_u), (2, p_u[:, None] * pxt), (3, p_u[:, None] * constraint.p_y_given_u)],
    )
    linear = np.zeros(free.shape)
    log_p = np.log2(np.where(P > 0, P, 1.0))
    linear[free] = np.broadcast_to(-log_p[:, :, None, :, :], free.shape)[free]
    base = (-1.0) * H(0, 1, 3, 4) + EntropyExpr(linear=linear)
    inequalities = competing_constraints(r1k, r2j, eta)

    starts = [program.repair(np.asarray(a)) for a in anchors]
    v_star, _ = mixture_endpoints(P)
    starts.append(program.repair(v_star))
    try:
        starts.append(program.repair(bisect_mixture(P, r1k, eta)[1]))
    except ValueError:
        pass
    starts += [program.random_start(derive_rng(config.seed, 13, r)) for r in range(config.restarts)]

    def score(V):
        return base.value(V) + max(0.0, _TILDE_GAP.value(V) - r1k)

    def feasible(V):
        return program.marginal_gap(V) <= FEASIBILITY_TOL and all(c.value(V) >= -FEASIBILITY_TOL for c in inequalities)

    runs = program.run(base + _TILDE_GAP, starts, config, inequalities)
    V, _, ok = _pick_best(runs + [(s, False) for s in starts], score, feasible)
    if V is None:
        logger.info(f"Competing-codeword set is empty for R1k={r1k}, R2j={r2j}, eta={eta}")
        return _infeasible("cthx", r1k)
    dist = JointDistribution.from_array(V / V.sum())
    outer = dist.marginal((0, 1, 3, 4))
    kernel = np.broadcast_to(W.kernel, outer.shape)
    divergence = max(0.0, conditional_divergence(outer.conditional((0, 1, 2)), kernel, outer.marginal((0, 1, 2))))
    dependence = max(0.0, mutual_information(outer, (1,), (2,), (0,)))
    excess = max(0.0, mixture_gap(dist.probs, r1k))
    return ExponentResult(
        value=divergence + dependence + excess,
        argmin=dist,
        divergence=divergence,
        dependence=dependence,
        excess=excess,
        converged=ok,
        family="cthx",
        marginal_gap=program.marginal_gap(V),
        rate=r1k,
    )
