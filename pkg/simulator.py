"""
Error probabilities of a codebook library under the two-stage decoder:
paired Monte Carlo estimates, an exact oracle, decay profiles over
blocklengths and the mixture witness for the competing-codeword exponent.
"""
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from codebooks import CodebookLibraryPair, LibraryParams, build_library, resample_until_packed
from config import settings
from exponents import (
    MarginalConstraint,
    bisect_mixture,
    competing_constraints,
    ecthx_exponent,
    mixture_endpoints,
    mixture_gap,
)
from mac_model import MacChannel, joint_law, sample_outputs
from models import DecoderConfig, SolverConfig
from rac_decoder import Decoder
from typekit import JointDistribution, enumerate_types, kl_divergence, mutual_information, type_class_size
from utils import GuardExceeded, check_guard, derive_rng, validate_stochastic

logger = logging.getLogger(__name__)

MONTE_CARLO = "monte-carlo"
EXACT = "exact"


@dataclass(frozen=True)
class ErrorEstimate:
    mean: float
    std_err: float
    trials: int
    mode: str

    def __post_init__(self):
        if not -1e-12 <= self.mean <= 1 + 1e-12:
            raise ValueError(f"error probability {self.mean} outside [0, 1]")
        if self.mode == EXACT and self.std_err != 0:
            raise ValueError("exact estimates carry no standard error")

    @classmethod
    def from_count(cls, errors: int, trials: int) -> "ErrorEstimate":
        mean = errors / trials
        return cls(mean, math.sqrt(mean * (1.0 - mean) / trials), trials, MONTE_CARLO)

    def to_json(self) -> dict:
        return {"mean": self.mean, "std_err": self.std_err, "trials": self.trials, "mode": self.mode}


def _check_codebooks(lib: CodebookLibraryPair, W: MacChannel, i: int, j: int) -> None:
    p = lib.params
    if not (0 <= i < p.m1 and 0 <= j < p.m2):
        raise ValueError(f"codebook pair ({i}, {j}) out of range for M1={p.m1}, M2={p.m2}")
    if (p.x_size, p.y_size) != (W.in1.size, W.in2.size):
        raise ValueError(
            f"library alphabets ({p.x_size}, {p.y_size}) do not match channel inputs "
            f"({W.in1.size}, {W.in2.size})"
        )


def _run_chunk(
    decoder: Decoder, lib: CodebookLibraryPair, W: MacChannel, i: int, j: int,
    start: int, stop: int, seed: int, chunk_index: int,
) -> Tuple[int, int]:
    """Decode trials start..stop-1; message pairs cycle with the trial index"""
    n2 = len(lib.B[j])
    pairs = len(lib.A[i]) * n2
    a, b = np.divmod(np.arange(start, stop) % pairs, n2)
    x, y = lib.A[i][a], lib.B[j][b]
    z = sample_outputs(W, x, y, derive_rng(seed, 3, chunk_index))
    err_d = err_c = 0
    for t in range(stop - start):
        out = decoder.decode(z[t])
        if out.message != (i, int(a[t]), j, int(b[t])):
            err_d += 1
        if not out.is_collision:
            err_c += 1
    return err_d, err_c


def estimate_errors(
    lib: CodebookLibraryPair,
    W: MacChannel,
    i: int,
    j: int,
    cfg: Optional[DecoderConfig] = None,
    trials: Optional[int] = None,
    seed: int = 0,
    threads: Optional[int] = None,
    decoder: Optional[Decoder] = None,
) -> Tuple[ErrorEstimate, ErrorEstimate]:
    """
    Paired Monte Carlo estimates of Err_d(i, j) and Err_c(i, j) from the same
    transmissions. Chunk streams are addressed by chunk index, so the result
    does not depend on the worker count.
    """
    trials = settings.decay_trials if trials is None else int(trials)
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}")
    _check_codebooks(lib, W, i, j)
    decoder = decoder or Decoder(lib, W.out.size, cfg)
    size = settings.mc_chunk_size
    bounds = [(c, c * size, min(trials, (c + 1) * size)) for c in range(math.ceil(trials / size))]
    workers = min(threads or settings.threads_capped, len(bounds))

    def run(bound):
        return _run_chunk(decoder, lib, W, i, j, bound[1], bound[2], seed, bound[0])

    if workers <= 1:
        results = [run(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, bounds))
    err_d = sum(r[0] for r in results)
    err_c = sum(r[1] for r in results)
    return ErrorEstimate.from_count(err_d, trials), ErrorEstimate.from_count(err_c, trials)


def estimate_err_d(lib, W, i, j, cfg=None, trials=None, seed=0, threads=None) -> ErrorEstimate:
    return estimate_errors(lib, W, i, j, cfg, trials, seed, threads)[0]


def estimate_err_c(lib, W, i, j, cfg=None, trials=None, seed=0, threads=None) -> ErrorEstimate:
    return estimate_errors(lib, W, i, j, cfg, trials, seed, threads)[1]


def _column_groups(lib: CodebookLibraryPair) -> np.ndarray:
    """Group label per position: positions share a label iff u and every codeword agree there"""
    X, _, _ = lib.stacked(1)
    Y, _, _ = lib.stacked(2)
    columns = np.concatenate([lib.u[:, None], X.T, Y.T], axis=1)
    _, labels = np.unique(columns, axis=0, return_inverse=True)
    return labels.ravel()


def _message_classes(W: MacChannel, x: np.ndarray, y: np.ndarray, labels: np.ndarray):
    """
    Output conditional types for one transmitted pair, restricted to the
    channel support. Yields (representative z, number of sequences, W^n(z|x,y)).
    """
    groups = []
    for g in np.unique(labels):
        positions = np.flatnonzero(labels == g)
        row = W.kernel[x[positions[0]], y[positions[0]]]
        support = np.flatnonzero(row > 0)
        groups.append((positions, support, row[support], enumerate_types(len(support), len(positions))))
    for choice in itertools.product(*(g[3] for g in groups)):
        z = np.empty(len(x), dtype=np.int64)
        count, log_prob = 1, 0.0
        for (positions, support, probs, _), t in zip(groups, choice):
            counts = t.counts
            z[positions] = np.repeat(support, counts)
            count *= type_class_size(t)
            log_prob += float((counts * np.log2(probs)).sum())
        yield z, count, log_prob


def _class_count(W: MacChannel, x: np.ndarray, y: np.ndarray, labels: np.ndarray) -> int:
    total = 1
    for g in np.unique(labels):
        positions = np.flatnonzero(labels == g)
        s = int((W.kernel[x[positions[0]], y[positions[0]]] > 0).sum())
        total *= math.comb(len(positions) + s - 1, s - 1)
    return total


ORACLE_GUARD = "exact error oracle (support output classes x candidate codeword pairs)"


def oracle_size(lib: CodebookLibraryPair, W: MacChannel, i: int, j: int) -> int:
    """
    Decoder evaluations the exact oracle needs for (A_i, B_j): the number of
    output classes in the support of W^n(.|x, y), summed over the messages,
    times the number of codeword pairs the decoder scores per output.
    This is the quantity held against RACXPT_EXACT_GUARD.
    """
    labels = _column_groups(lib)
    candidates = sum(len(cb) for cb in lib.A) * sum(len(cb) for cb in lib.B)
    classes = sum(
        _class_count(W, lib.A[i][a], lib.B[j][b], labels)
        for a in range(len(lib.A[i])) for b in range(len(lib.B[j]))
    )
    return classes * candidates


def exact_error(
    lib: CodebookLibraryPair,
    W: MacChannel,
    i: int,
    j: int,
    cfg: Optional[DecoderConfig] = None,
    decoder: Optional[Decoder] = None,
) -> Tuple[ErrorEstimate, ErrorEstimate]:
    """
    Exact Err_d(i, j) and Err_c(i, j). The decoder sees z only through its
    joint type with u and all codewords, so outputs are summed class by
    class over the support of W^n(.|x, y).
    """
    _check_codebooks(lib, W, i, j)
    labels = _column_groups(lib)
    messages = [(a, b) for a in range(len(lib.A[i])) for b in range(len(lib.B[j]))]
    check_guard(oracle_size(lib, W, i, j), settings.exact_guard, ORACLE_GUARD)
    decoder = decoder or Decoder(lib, W.out.size, cfg)
    err_d = err_c = 0.0
    for a, b in messages:
        x, y = lib.A[i][a], lib.B[j][b]
        msg_d = msg_c = 0.0
        for z, count, log_prob in _message_classes(W, x, y, labels):
            weight = count * 2.0 ** log_prob
            out = decoder.decode(z)
            if out.message != (i, a, j, b):
                msg_d += weight
            if not out.is_collision:
                msg_c += weight
        err_d += min(1.0, msg_d)
        err_c += min(1.0, msg_c)
    total = len(messages)
    return (
        ErrorEstimate(min(1.0, err_d / total), 0.0, total, EXACT),
        ErrorEstimate(min(1.0, err_c / total), 0.0, total, EXACT),
    )


def exact_feasible(lib: CodebookLibraryPair, W: MacChannel, i: int, j: int) -> bool:
    return not settings.guards_enabled or oracle_size(lib, W, i, j) <= settings.exact_guard


@dataclass
class DecayRow:
    n: int
    err_d: ErrorEstimate
    err_c: ErrorEstimate
    delta_prime: Optional[float]
    audited: bool
    target: Optional[float] = None

    @property
    def exponent_d(self) -> float:
        """-log2(Err_d) / n"""
        return math.inf if self.err_d.mean <= 0 else -math.log2(self.err_d.mean) / self.n

    @property
    def exponent_d_std(self) -> float:
        if self.err_d.mean <= 0:
            return 0.0
        return self.err_d.std_err / (self.err_d.mean * math.log(2) * self.n)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "err_d": self.err_d.to_json(),
            "err_c": self.err_c.to_json(),
            "exponent_d": self.exponent_d,
            "exponent_d_std": self.exponent_d_std,
            "delta_prime": self.delta_prime,
            "audited": self.audited,
            "target": self.target,
        }


@dataclass
class DecayProfile:
    rows: List[DecayRow]
    truncated: bool = False

    def to_json(self) -> dict:
        return {"rows": [r.to_json() for r in self.rows], "truncated": self.truncated}


def prepare_library(
    params: LibraryParams, seed: int, max_tries: int = 10
) -> Tuple[CodebookLibraryPair, Optional[float], bool]:
    """
    Packed library when the audit fits its guard, otherwise a plain draw.
    Returns (library, realised delta', audited).
    """
    try:
        lib, report = resample_until_packed(params, max_tries, seed)
        return lib, report.delta_prime, True
    except GuardExceeded as e:
        logger.warning(f"Skipping the packing audit at n={params.n}: {e}")
        return build_library(params, seed), None, False


def decay_profile(
    params_for_n: Callable[[int], LibraryParams],
    n_list: Sequence[int],
    W: MacChannel,
    cfg: Optional[DecoderConfig] = None,
    i: int = 0,
    j: int = 0,
    trials: Optional[int] = None,
    seed: int = 0,
    mode: str = "auto",
    target: Optional[float] = None,
    max_tries: int = 10,
    threads: Optional[int] = None,
) -> DecayProfile:
    """
    Err_d and Err_c per blocklength. auto uses the exact oracle where its
    guard allows and Monte Carlo elsewhere; exact mode stops the table at
    the first blocklength the guard rejects.
    """
    if mode not in ("auto", "exact", "mc"):
        raise ValueError(f"Unknown error mode {mode!r}")
    rows: List[DecayRow] = []
    for n in n_list:
        params = params_for_n(n)
        lib, delta, audited = prepare_library(params, seed, max_tries)
        use_exact = mode == "exact" or (mode == "auto" and exact_feasible(lib, W, i, j))
        if use_exact:
            try:
                err_d, err_c = exact_error(lib, W, i, j, cfg)
            except GuardExceeded as e:
                logger.warning(f"Truncating the decay table before n={n}: {e}")
                return DecayProfile(rows, truncated=True)
        else:
            err_d, err_c = estimate_errors(lib, W, i, j, cfg, trials, derive_seed(seed, n), threads)
        rows.append(DecayRow(n, err_d, err_c, delta, audited, target))
        logger.info(f"n={n}: Err_d={err_d.mean:.4g} ({err_d.mode}), Err_c={err_c.mean:.4g}")
    return DecayProfile(rows)


def derive_seed(seed: int, n: int) -> int:
    """Per-blocklength Monte Carlo seed"""
    return int(np.random.SeedSequence([int(seed), 5, int(n)]).generate_state(1)[0])


def exponent_nondecreasing(rows: List[DecayRow], sigmas: float = 2.0) -> bool:
    """-log2(Err_d)/n nondecreasing along the table within sigmas standard errors"""
    for prev, cur in zip(rows, rows[1:]):
        if math.isinf(prev.exponent_d) and not math.isinf(cur.exponent_d):
            return False
        if math.isinf(prev.exponent_d):
            continue
        slack = sigmas * (prev.exponent_d_std + cur.exponent_d_std)
        if cur.exponent_d < prev.exponent_d - slack:
            return False
    return True


def strictly_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def decreasing_to_zero(values: Sequence[float]) -> bool:
    """Strictly decreasing until the values reach zero, then staying there"""
    return all(b < a or a == b == 0 for a, b in zip(values, values[1:]))


@dataclass
class MixtureWitness:
    epsilon: float
    V_eps: JointDistribution
    r_value: float
    eta: float
    slacks: Tuple[float, float, float]
    objective: float
    conditions: Dict[str, float]
    ecthx: Optional[float] = None
    checks: Dict[str, bool] = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return all(s >= 0 for s in self.slacks)

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "V_eps": self.V_eps.to_json(),
            "r_value": self.r_value,
            "eta": self.eta,
            "slacks": list(self.slacks),
            "feasible": self.feasible,
            "objective": self.objective,
            "conditions": dict(self.conditions),
            "ecthx": self.ecthx,
            "checks": dict(self.checks),
        }


def mixture_objective(V: np.ndarray, P: np.ndarray, r1k: float) -> Tuple[float, float, float]:
    """(D(V_UXYZ || P), excess |I(X~ ^ X,Y,Z | U) - R1k|+, total) on a five-way law"""
    outer = V.sum(axis=2)
    divergence = max(0.0, kl_divergence(outer, P))
    excess = max(0.0, mixture_gap(V, r1k))
    return divergence, excess, divergence + excess


def proposition2_witness(
    W: MacChannel,
    P_U,
    P_XgU_i,
    P_XgU_k,
    P_YgU_j,
    r1k: float,
    r2j: float,
    eta: float,
    config: Optional[SolverConfig] = None,
    cross_check: bool = True,
    iterations: Optional[int] = None,
) -> MixtureWitness:
    """
    Mix V* (X~ resampled from P(x | u, y, z)) with V** (X~ drawn from
    P(x | u)) until I(X~ ^ X,Y,Z | U) - R1k comes down to just above eta.
    The mixture then lies in the competing-codeword set with objective
    about eta, which bounds that exponent from above.
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    p_u = validate_stochastic(P_U, "P_U")
    px_i = validate_stochastic(np.atleast_2d(P_XgU_i), "P_X|U (i)")
    px_k = validate_stochastic(np.atleast_2d(P_XgU_k), "P_X|U (k)")
    py_j = validate_stochastic(np.atleast_2d(P_YgU_j), "P_Y|U (j)")
    if px_i.shape != px_k.shape or not np.allclose(px_i, px_k, atol=settings.marginal_tolerance):
        raise ValueError("codebooks i and k must share their conditional composition")
    P = joint_law(W, p_u, px_k, py_j)
    conditions = {
        "x_given_yz": mutual_information(P, (1,), (2, 3), (0,)) - r1k - eta,
        "y_z": mutual_information(P, (2,), (3,), (0,)) - r1k - r2j - eta,
    }
    for name, value in conditions.items():
        if value <= 0:
            raise ValueError(f"condition {name} fails: margin {value:.6f} is not positive")
    epsilon, V, r_value = bisect_mixture(P, r1k, eta, iterations)
    slacks = tuple(float(c.value(V)) for c in competing_constraints(r1k, r2j, eta))
    _, _, objective = mixture_objective(V, P, r1k)
    v_star, v_star2 = mixture_endpoints(P)
    checks = {
        "r_above_eta": 0 < r_value - eta <= 1e-4,
        "objective_near_eta": abs(objective - eta) <= 1e-3,
        "r_at_zero_above_eta": mixture_gap(v_star, r1k) > eta,
        "r_at_one_is_minus_rate": abs(mixture_gap(v_star2, r1k) + r1k) <= 1e-9,
    }
    witness = MixtureWitness(
        float(epsilon), JointDistribution.from_array(V / V.sum()), float(r_value), float(eta),
        slacks, float(objective), conditions, checks=checks,
    )
    checks["feasible"] = witness.feasible
    if cross_check:
        constraint = MarginalConstraint(p_u, px_i, py_j, px_k)
        result = ecthx_exponent(r1k, r2j, eta, W, constraint, config, anchors=[V])
        witness.ecthx = result.value
        checks["ecthx_at_most_eta"] = result.value <= eta + 0.01
    logger.info(f"Mixture witness: epsilon={epsilon:.6f}, r={r_value:.6f}, objective={objective:.6f}")
    return witness
