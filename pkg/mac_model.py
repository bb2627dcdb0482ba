"""
Discrete memoryless two-sender MAC: channel kernels and presets, n-fold
laws, output sampling and the pentagon geometry of a fixed auxiliary
structure.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from config import settings
from typekit import (
    Alphabet,
    Sequence,
    conditional_divergence,
    entropy,
    joint_type_of,
    mutual_information,
)
from utils import derive_rng, validate_stochastic

logger = logging.getLogger(__name__)

# joint law axes
U_AXIS, X_AXIS, Y_AXIS, Z_AXIS = 0, 1, 2, 3

PRESET_NAMES = ("noiseless-pair", "bsc-pair:p", "adder", "useless", "copy-x")


@dataclass(frozen=True, eq=False)
class MacChannel:
    in1: Alphabet
    in2: Alphabet
    out: Alphabet
    kernel: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        in1 = self.in1 if isinstance(self.in1, Alphabet) else Alphabet(int(self.in1))
        in2 = self.in2 if isinstance(self.in2, Alphabet) else Alphabet(int(self.in2))
        out = self.out if isinstance(self.out, Alphabet) else Alphabet(int(self.out))
        kernel = np.array(self.kernel, dtype=float)
        shape = (in1.size, in2.size, out.size)
        if kernel.shape != shape:
            raise ValueError(f"kernel has shape {kernel.shape}, expected {shape}")
        if np.any(~np.isfinite(kernel)) or np.any(kernel < 0):
            raise ValueError("kernel has negative or non-finite entries")
        sums = kernel.sum(axis=-1)
        for (x, y), s in np.ndenumerate(sums):
            if abs(s - 1.0) > settings.mass_tolerance:
                raise ValueError(f"kernel row (x={x}, y={y}) sums to {s:.12g}")
        kernel.setflags(write=False)
        object.__setattr__(self, "in1", in1)
        object.__setattr__(self, "in2", in2)
        object.__setattr__(self, "out", out)
        object.__setattr__(self, "kernel", kernel)

    @property
    def shape(self):
        return self.kernel.shape

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.kernel == 0) | (self.kernel == 1)))

    def to_json(self) -> dict:
        return {"x": self.in1.size, "y": self.in2.size, "z": self.out.size, "kernel": self.kernel.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "MacChannel":
        kernel = np.asarray(data["kernel"], dtype=float)
        shape = (int(data["x"]), int(data["y"]), int(data["z"]))
        if kernel.size != int(np.prod(shape)):
            raise ValueError(f"kernel with {kernel.size} entries does not fit {shape}")
        return cls(Alphabet(shape[0]), Alphabet(shape[1]), Alphabet(shape[2]), kernel.reshape(shape),
                   name=data.get("name", "custom"))


def _from_map(name: str, z_size: int, mapping) -> MacChannel:
    kernel = np.zeros((2, 2, z_size))
    for x in range(2):
        for y in range(2):
            kernel[x, y, mapping(x, y)] = 1.0
    return MacChannel(Alphabet(2), Alphabet(2), Alphabet(z_size), kernel, name=name)


def noiseless_pair() -> MacChannel:
    """Z = (X, Y), encoded as z = 2x + y"""
    return _from_map("noiseless-pair", 4, lambda x, y: 2 * x + y)


def bsc_pair(p: float) -> MacChannel:
    """Each input goes through its own BSC(p); Z is the pair of outputs"""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"crossover probability must lie in [0, 1], got {p}")
    bsc = np.array([[1 - p, p], [p, 1 - p]])
    kernel = np.einsum("ac,bd->abcd", bsc, bsc).reshape(2, 2, 4)
    return MacChannel(Alphabet(2), Alphabet(2), Alphabet(4), kernel, name=f"bsc-pair:{p:g}")


def adder() -> MacChannel:
    return _from_map("adder", 3, lambda x, y: x + y)


def useless() -> MacChannel:
    kernel = np.full((2, 2, 2), 0.5)
    return MacChannel(Alphabet(2), Alphabet(2), Alphabet(2), kernel, name="useless")


def copy_x() -> MacChannel:
    return _from_map("copy-x", 2, lambda x, y: x)


def preset_channel(name: str) -> MacChannel:
    """Build a named preset such as "adder" or "bsc-pair:0.1" """
    key = name.strip().lower()
    if key.startswith("bsc-pair"):
        _, _, p = key.partition(":")
        if not p:
            raise ValueError("bsc-pair needs a crossover probability, e.g. bsc-pair:0.1")
        try:
            return bsc_pair(float(p))
        except ValueError as e:
            raise ValueError(f"Invalid bsc-pair preset {name!r}: {e}")
    builders = {"noiseless-pair": noiseless_pair, "adder": adder, "useless": useless, "copy-x": copy_x}
    if key not in builders:
        raise ValueError(f"Unknown channel preset {name!r}; known presets: {', '.join(PRESET_NAMES)}")
    return builders[key]()


@dataclass(frozen=True)
class Pentagon:
    r1_max: float
    r2_max: float
    sum_max: float

    def __post_init__(self):
        tol = 1e-9
        if self.r1_max < 0 or self.r2_max < 0:
            raise ValueError(f"pentagon corner rates must be non-negative: {self}")
        if self.sum_max < max(self.r1_max, self.r2_max) - tol or self.sum_max > self.r1_max + self.r2_max + tol:
            raise ValueError(f"pentagon sum rate {self.sum_max} outside [max(r1, r2), r1 + r2]: {self}")

    def to_json(self) -> dict:
        return {"r1_max": self.r1_max, "r2_max": self.r2_max, "sum_max": self.sum_max}


@dataclass(frozen=True)
class RatePair:
    r1: float
    r2: float

    def __post_init__(self):
        if self.r1 < 0 or self.r2 < 0:
            raise ValueError(f"rates must be non-negative, got ({self.r1}, {self.r2})")

    @property
    def total(self) -> float:
        return self.r1 + self.r2


@dataclass(frozen=True, eq=False)
class AuxStructure:
    """Time-sharing law P_U with per-u input distributions"""

    p_u: np.ndarray
    p_x_given_u: np.ndarray
    p_y_given_u: np.ndarray

    def __post_init__(self):
        p_u = validate_stochastic(self.p_u, "P_U")
        px = validate_stochastic(self.p_x_given_u, "P_X|U")
        py = validate_stochastic(self.p_y_given_u, "P_Y|U")
        if p_u.ndim != 1 or px.ndim != 2 or py.ndim != 2:
            raise ValueError("P_U must be a vector and P_X|U, P_Y|U matrices")
        if px.shape[0] != p_u.shape[0] or py.shape[0] != p_u.shape[0]:
            raise ValueError(
                f"|U|={p_u.shape[0]} but kernels have {px.shape[0]} and {py.shape[0]} rows"
            )
        object.__setattr__(self, "p_u", p_u)
        object.__setattr__(self, "p_x_given_u", px)
        object.__setattr__(self, "p_y_given_u", py)

    @property
    def size(self) -> int:
        return self.p_u.shape[0]

    def to_json(self) -> dict:
        return {
            "p_u": self.p_u.tolist(),
            "p_x_given_u": self.p_x_given_u.tolist(),
            "p_y_given_u": self.p_y_given_u.tolist(),
        }


def joint_law(W: MacChannel, p_u, p_x_given_u, p_y_given_u) -> np.ndarray:
    """P_U P_X|U P_Y|U W as a U x X x Y x Z tensor"""
    p_u = np.asarray(p_u, dtype=float)
    px = np.asarray(p_x_given_u, dtype=float)
    py = np.asarray(p_y_given_u, dtype=float)
    if px.shape != (p_u.shape[0], W.in1.size) or py.shape != (p_u.shape[0], W.in2.size):
        raise ValueError(
            f"kernels {px.shape} and {py.shape} do not match |U|={p_u.shape[0]} "
            f"and channel inputs ({W.in1.size}, {W.in2.size})"
        )
    return np.einsum("u,ux,uy,xyz->uxyz", p_u, px, py, W.kernel)


def pentagon(W: MacChannel, p_u, p_x_given_u, p_y_given_u) -> Pentagon:
    P = joint_law(W, p_u, p_x_given_u, p_y_given_u)
    r1 = mutual_information(P, (X_AXIS,), (Z_AXIS,), (U_AXIS, Y_AXIS))
    r2 = mutual_information(P, (Y_AXIS,), (Z_AXIS,), (U_AXIS, X_AXIS))
    total = mutual_information(P, (X_AXIS, Y_AXIS), (Z_AXIS,), (U_AXIS,))
    r1, r2, total = (max(0.0, v) for v in (r1, r2, total))
    # rounding can push the sum a hair outside [max, r1 + r2]
    total = min(max(total, r1, r2), r1 + r2)
    return Pentagon(r1, r2, total)


def in_interior(r: RatePair, p: Pentagon, margin: Optional[float] = None) -> bool:
    """
    Strict interior of the pentagon relative to the non-negative quadrant:
    a zero rate coordinate never disqualifies a point.
    """
    m = settings.rate_margin if margin is None else margin
    if r.r1 != 0 and not r.r1 < p.r1_max - m:
        return False
    if r.r2 != 0 and not r.r2 < p.r2_max - m:
        return False
    return r.r1 + r.r2 < p.sum_max - m


def sample_outputs(W: MacChannel, x: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorised memoryless channel draw; x and y are integer arrays of equal shape"""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if x.shape != y.shape:
        raise ValueError(f"input sequences differ in shape: {x.shape} vs {y.shape}")
    cdf = np.cumsum(W.kernel, axis=-1)
    positive = W.kernel > 0
    last = W.kernel.shape[-1] - 1 - np.argmax(positive[..., ::-1], axis=-1)
    cdf[np.arange(W.kernel.shape[-1]) >= last[..., None]] = 1.0
    draws = rng.random(x.shape)
    rows = cdf[x, y]
    return (rows <= draws[..., None]).sum(axis=-1)


def sample_output(W: MacChannel, xseq: Sequence, yseq: Sequence, rng_seed: int) -> Sequence:
    if len(xseq) != len(yseq):
        raise ValueError(f"input sequences differ in length: {len(xseq)} vs {len(yseq)}")
    z = sample_outputs(W, xseq.as_array(), yseq.as_array(), derive_rng(rng_seed))
    return Sequence(W.out, z)


def _check_triple(W: MacChannel, xseq: Sequence, yseq: Sequence, zseq: Sequence) -> None:
    if not len(xseq) == len(yseq) == len(zseq):
        raise ValueError(f"sequence lengths differ: {len(xseq)}, {len(yseq)}, {len(zseq)}")
    if (xseq.alphabet.size, yseq.alphabet.size, zseq.alphabet.size) != W.shape:
        raise ValueError("sequence alphabets do not match the channel")


def nfold_log_prob(W: MacChannel, xseq: Sequence, yseq: Sequence, zseq: Sequence) -> float:
    """
    log2 W^n(z | x, y) through the joint type:
    -n (D(V_Z|XY || W | V_XY) + H_V(Z | XY))
    """
    _check_triple(W, xseq, yseq, zseq)
    V = joint_type_of([xseq, yseq, zseq]).to_distribution()
    v_xy = V.marginal((0, 1))
    divergence = conditional_divergence(V.conditional((0, 1)), W.kernel, v_xy)
    if math.isinf(divergence):
        return -math.inf
    return -len(xseq) * (divergence + entropy(V, (2,), (0, 1)))


def nfold_log_prob_direct(W: MacChannel, xseq: Sequence, yseq: Sequence, zseq: Sequence) -> float:
    _check_triple(W, xseq, yseq, zseq)
    probs = W.kernel[xseq.as_array(), yseq.as_array(), zseq.as_array()]
    if np.any(probs <= 0):
        return -math.inf
    return float(np.log2(probs).sum())


def sample_aux_structures(
    x_size: int, y_size: int, budget: int, seed: int, max_size: Optional[int] = None
) -> List[AuxStructure]:
    """
    Uniform inputs with |U|=1 first, then Dirichlet-random structures whose
    |U| cycles through 1..max_size.
    """
    if budget < 1:
        raise ValueError("aux_budget must be at least 1")
    max_size = max_size or settings.max_aux_size
    out = [AuxStructure(np.ones(1), np.full((1, x_size), 1.0 / x_size), np.full((1, y_size), 1.0 / y_size))]
    for t in range(1, budget):
        size = 1 + (t - 1) % max_size
        rng = derive_rng(seed, 7, t)
        out.append(
            AuxStructure(
                rng.dirichlet(np.ones(size)),
                rng.dirichlet(np.ones(x_size), size=size),
                rng.dirichlet(np.ones(y_size), size=size),
            )
        )
    return out


@dataclass(frozen=True)
class StandingAssumptionResult:
    holds: bool
    rates: RatePair
    witness: Optional[AuxStructure] = None
    pentagon: Optional[Pentagon] = None
    checked: int = 0

    def to_json(self) -> dict:
        return {
            "holds": self.holds,
            "rates": {"r1": self.rates.r1, "r2": self.rates.r2},
            "witness": self.witness.to_json() if self.witness else None,
            "pentagon": self.pentagon.to_json() if self.pentagon else None,
            "checked": self.checked,
        }


def standing_assumption_check(
    W: MacChannel, Q1, Q2, aux_budget: Optional[int] = None, seed: int = 0
) -> StandingAssumptionResult:
    """
    Search sampled auxiliary structures for a pentagon whose interior holds
    (H(Q1), H(Q2)). A negative answer only means none of the samples did.
    """
    q1 = validate_stochastic(np.asarray(Q1, dtype=float).ravel(), "Q1")
    q2 = validate_stochastic(np.asarray(Q2, dtype=float).ravel(), "Q2")
    rates = RatePair(entropy(q1, (0,)), entropy(q2, (0,)))
    budget = aux_budget or settings.aux_budget
    structures = sample_aux_structures(W.in1.size, W.in2.size, budget, seed)
    for count, aux in enumerate(structures, start=1):
        region = pentagon(W, aux.p_u, aux.p_x_given_u, aux.p_y_given_u)
        if in_interior(rates, region):
            return StandingAssumptionResult(True, rates, aux, region, count)
    logger.info(f"No sampled structure out of {budget} contains ({rates.r1:.4f}, {rates.r2:.4f})")
    return StandingAssumptionResult(False, rates, checked=budget)
