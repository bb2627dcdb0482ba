"""
Joint source-channel codes over a codebook library: every source type
class gets a codebook of exactly its size, and sequences are mapped to
codewords by their lexicographic rank inside the class.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from codebooks import CodebookLibraryPair, LibraryParams
from config import settings
from mac_model import MacChannel, sample_outputs
from models import DecoderConfig
from rac_decoder import Decoder
from simulator import EXACT, MONTE_CARLO, ErrorEstimate, estimate_errors, exact_error, prepare_library
from typekit import (
    Alphabet,
    EmpiricalType,
    JointDistribution,
    entropy,
    enumerate_types,
    log2_type_class_size,
    rank_in_type_class,
    type_class_probability,
    unrank_type_class,
)
from utils import check_guard, derive_rng

logger = logging.getLogger(__name__)

CLASSICAL = "classical"
TYPE_INFORMED = "type-informed"


@dataclass(frozen=True, eq=False)
class SourceSpec:
    """Discrete memoryless source with per-letter law Q"""

    alphabet: Alphabet
    Q: JointDistribution

    def __post_init__(self):
        if self.Q.ndim != 1 or self.Q.shape[0] != self.alphabet.size:
            raise ValueError(f"source law of shape {self.Q.shape} does not fit an alphabet of size {self.alphabet.size}")

    @property
    def q(self) -> np.ndarray:
        return self.Q.probs

    @property
    def size(self) -> int:
        return self.alphabet.size

    @property
    def entropy(self) -> float:
        return entropy(self.Q, (0,))

    @classmethod
    def from_probs(cls, q, labels=None) -> "SourceSpec":
        Q = JointDistribution.from_array(np.asarray(q, dtype=float), None if labels is None else [labels])
        return cls(Q.axes[0], Q)

    @classmethod
    def bernoulli(cls, p: float) -> "SourceSpec":
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"Bernoulli parameter must lie in [0, 1], got {p}")
        return cls.from_probs([1.0 - p, p])

    def to_json(self) -> dict:
        return {"q": self.q.tolist()}


CompositionMap = Callable[..., np.ndarray]


@dataclass(eq=False)
class JsccCode:
    """
    book1/book2 map a logical codebook index to a codebook of the physical
    library: the own source type index for classical codes, the pair of
    type indices for type-informed ones.
    """

    mode: str
    n: int
    source1: SourceSpec
    source2: SourceSpec
    library: CodebookLibraryPair
    types1: List[EmpiricalType]
    types2: List[EmpiricalType]
    book1: Dict[Union[int, Tuple[int, int]], int]
    book2: Dict[Union[int, Tuple[int, int]], int]
    nu: float
    audited: bool
    delta_prime: Optional[float] = None
    own_type1: List[int] = field(default_factory=list)
    own_type2: List[int] = field(default_factory=list)

    @property
    def m1(self) -> int:
        return len(self.book1)

    @property
    def m2(self) -> int:
        return len(self.book2)

    def _type_index(self, seq, types: List[EmpiricalType], size: int) -> int:
        counts = tuple(np.bincount(np.asarray(seq, dtype=np.int64), minlength=size).tolist())
        for idx, t in enumerate(types):
            if t.key() == counts:
                return idx
        raise ValueError(f"sequence with counts {counts} has no type of length {self.n}")

    def books_for(self, k: int, l: int) -> Tuple[int, int]:
        if self.mode == CLASSICAL:
            return self.book1[k], self.book2[l]
        return self.book1[k, l], self.book2[k, l]

    def encode(self, s1, s2) -> Tuple[np.ndarray, np.ndarray, Tuple[int, int, int, int]]:
        """Codewords for a source pair and the message quadruple they carry"""
        s1 = np.asarray(s1, dtype=np.int64)
        s2 = np.asarray(s2, dtype=np.int64)
        if len(s1) != self.n or len(s2) != self.n:
            raise ValueError(f"source sequences must have length {self.n}")
        k = self._type_index(s1, self.types1, self.source1.size)
        l = self._type_index(s2, self.types2, self.source2.size)
        i, j = self.books_for(k, l)
        a = rank_in_type_class(s1, self.types1[k].counts)
        b = rank_in_type_class(s2, self.types2[l].counts)
        return self.library.A[i][a], self.library.B[j][b], (i, a, j, b)

    def invert(self, message: Optional[Tuple[int, int, int, int]]) -> Optional[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
        """Source pair carried by a decoded message; None for a collision"""
        if message is None:
            return None
        i, a, j, b = message
        k, l = self.own_type1[i], self.own_type2[j]
        return unrank_type_class(a, self.types1[k].counts), unrank_type_class(b, self.types2[l].counts)

    def decoder(self, W: MacChannel, cfg: Optional[DecoderConfig] = None) -> Decoder:
        return Decoder(self.library, W.out.size, cfg)

    def class_weights(self, exact: bool = False) -> np.ndarray:
        """Q1^n(T_k) Q2^n(T_l) over all type pairs"""
        q1, q2 = self.source1.q, self.source2.q
        if exact:
            q1 = [Fraction(v).limit_denominator(10 ** 12) for v in q1]
            q2 = [Fraction(v).limit_denominator(10 ** 12) for v in q2]
        w1 = [type_class_probability(t, q1) for t in self.types1]
        w2 = [type_class_probability(t, q2) for t in self.types2]
        out = np.empty((len(w1), len(w2)), dtype=object if exact else float)
        for k, l in itertools.product(range(len(w1)), range(len(w2))):
            out[k, l] = w1[k] * w2[l]
        return out

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "n": self.n,
            "m1": self.m1,
            "m2": self.m2,
            "physical_codebooks": [self.library.params.m1, self.library.params.m2],
            "nu": self.nu,
            "audited": self.audited,
            "delta_prime": self.delta_prime,
            "rates1": list(self.library.params.rates1),
            "rates2": list(self.library.params.rates2),
        }


def _type_rates(types: List[EmpiricalType], n: int) -> List[float]:
    return [log2_type_class_size(t) / n for t in types]


def _kernel_key(kernel: np.ndarray) -> bytes:
    return np.round(np.asarray(kernel, dtype=float), 12).tobytes()


def _assemble(
    mode: str,
    source1: SourceSpec,
    source2: SourceSpec,
    W: MacChannel,
    P_U,
    n: int,
    entries1: List[Tuple[object, int, np.ndarray]],
    entries2: List[Tuple[object, int, np.ndarray]],
    types1: List[EmpiricalType],
    types2: List[EmpiricalType],
    seed: int,
    max_tries: int,
    distinct: Optional[bool],
) -> JsccCode:
    """
    entries are (logical index, own source type index, kernel). Logical
    indices sharing both the own type and the kernel share one physical
    codebook, numbered by first appearance.
    """
    rates1, rates2 = _type_rates(types1, n), _type_rates(types2, n)
    books, kernels, rates, owners = ({}, {}), ([], []), ([], []), ([], [])
    for side, (entries, type_rates) in enumerate(((entries1, rates1), (entries2, rates2))):
        physical: Dict[Tuple[int, bytes], int] = {}
        for logical, own, kernel in entries:
            key = (own, _kernel_key(kernel))
            if key not in physical:
                physical[key] = len(kernels[side])
                kernels[side].append(np.asarray(kernel, dtype=float))
                rates[side].append(type_rates[own])
                owners[side].append(own)
            books[side][logical] = physical[key]
    params, nu = LibraryParams.from_kernels(n, P_U, kernels[0], kernels[1], rates[0], rates[1], distinct)
    if (params.x_size, params.y_size) != (W.in1.size, W.in2.size):
        raise ValueError("composition maps do not match the channel input alphabets")
    lib, delta, audited = prepare_library(params, seed, max_tries)
    if not audited:
        logger.warning(f"{mode} code at n={n} uses a library without a packing audit")
    book1, book2 = books
    logger.info(
        f"Built {mode} code at n={n}: {len(book1)} x {len(book2)} logical codebooks on "
        f"{params.m1} x {params.m2} physical ones, nu'={nu:.4f}"
    )
    return JsccCode(
        mode, n, source1, source2, lib, types1, types2, book1, book2, nu, audited, delta, owners[0], owners[1]
    )


def _types(source: SourceSpec, n: int) -> List[EmpiricalType]:
    if n < 1:
        raise ValueError("blocklength must be at least 1")
    return enumerate_types(source.alphabet, n)


def build_classical(
    Q1: SourceSpec, Q2: SourceSpec, W: MacChannel, P_U, g1: CompositionMap, g2: CompositionMap, n: int,
    seed: int = 0, max_tries: int = 10, distinct: Optional[bool] = None,
) -> JsccCode:
    """
    One codebook per source type, at rate log2|T|/n and composition g(rate);
    sequences go to codewords by their rank in the type class.
    """
    types1, types2 = _types(Q1, n), _types(Q2, n)
    check_guard(len(types1) * len(types2), settings.codebook_pair_guard, "codebook pairs")
    rates1, rates2 = _type_rates(types1, n), _type_rates(types2, n)
    entries1 = [(k, k, g1(r)) for k, r in enumerate(rates1)]
    entries2 = [(l, l, g2(r)) for l, r in enumerate(rates2)]
    return _assemble(CLASSICAL, Q1, Q2, W, P_U, n, entries1, entries2, types1, types2, seed, max_tries, distinct)


def build_type_informed(
    Q1: SourceSpec, Q2: SourceSpec, W: MacChannel, P_U, g1_2arg: CompositionMap, g2_2arg: CompositionMap, n: int,
    seed: int = 0, max_tries: int = 10, distinct: Optional[bool] = None,
) -> JsccCode:
    """
    Codebooks indexed by the pair of source types, known to both senders;
    compositions come from both rates. The receiver decodes over every pair
    of physical codebooks and reads each source type off its own side.
    """
    types1, types2 = _types(Q1, n), _types(Q2, n)
    pairs = (len(types1) * len(types2)) ** 2
    check_guard(pairs, settings.codebook_pair_guard, "codebook pairs")
    rates1, rates2 = _type_rates(types1, n), _type_rates(types2, n)
    grid = list(itertools.product(range(len(types1)), range(len(types2))))
    entries1 = [((k, l), k, g1_2arg(rates1[k], rates2[l])) for k, l in grid]
    entries2 = [((k, l), l, g2_2arg(rates1[k], rates2[l])) for k, l in grid]
    return _assemble(TYPE_INFORMED, Q1, Q2, W, P_U, n, entries1, entries2, types1, types2, seed, max_tries, distinct)


@dataclass
class ClassContribution:
    k: int
    l: int
    weight: float
    error: float

    @property
    def contribution(self) -> float:
        return self.weight * self.error

    def to_json(self) -> dict:
        return {"k": self.k, "l": self.l, "weight": self.weight, "error": self.error, "contribution": self.contribution}


@dataclass
class JsccErrorReport:
    total: ErrorEstimate
    contributions: List[ClassContribution]

    def dominant(self, count: int = 3) -> List[ClassContribution]:
        return sorted(self.contributions, key=lambda c: c.contribution, reverse=True)[:count]

    def to_json(self) -> dict:
        return {"total": self.total.to_json(), "dominant": [c.to_json() for c in self.dominant()]}


def jscc_error(
    code: JsccCode,
    W: MacChannel,
    mode: str = EXACT,
    trials: Optional[int] = None,
    seed: int = 0,
    cfg: Optional[DecoderConfig] = None,
    threads: Optional[int] = None,
) -> JsccErrorReport:
    """
    Total error as the Q^n-weighted sum over type-class pairs of the
    decoding error of their codebook pair; collisions count as errors.
    Monte Carlo mode spreads trials over classes in proportion to weight,
    at least one per class of positive weight.
    """
    if mode not in (EXACT, "mc", MONTE_CARLO):
        raise ValueError(f"Unknown error mode {mode!r}")
    decoder = code.decoder(W, cfg)
    weights = code.class_weights()
    total_trials = settings.decay_trials if trials is None else int(trials)
    contributions, mean, variance, used = [], 0.0, 0.0, 0
    for k, l in itertools.product(range(len(code.types1)), range(len(code.types2))):
        w = float(weights[k, l])
        if w <= 0:
            continue
        i, j = code.books_for(k, l)
        if mode == EXACT:
            err_d, _ = exact_error(code.library, W, i, j, cfg, decoder=decoder)
        else:
            count = max(1, int(round(total_trials * w)))
            sub_seed = int(np.random.SeedSequence([int(seed), 9, k, l]).generate_state(1)[0])
            err_d, _ = estimate_errors(code.library, W, i, j, cfg, count, sub_seed, threads, decoder=decoder)
            variance += (w * err_d.std_err) ** 2
        used += err_d.trials
        mean += w * err_d.mean
        contributions.append(ClassContribution(k, l, w, err_d.mean))
    mean = min(1.0, max(0.0, mean))
    if mode == EXACT:
        total = ErrorEstimate(mean, 0.0, used, EXACT)
    else:
        total = ErrorEstimate(mean, math.sqrt(variance), used, MONTE_CARLO)
    return JsccErrorReport(total, contributions)


def _all_sequences(size: int, n: int):
    return itertools.product(range(size), repeat=n)


def direct_error(code: JsccCode, W: MacChannel, cfg: Optional[DecoderConfig] = None) -> float:
    """
    End-to-end error by enumerating every source pair and every channel
    output in the support; independent of the class decomposition.
    """
    n = code.n
    outputs_per_pair = int(np.max((W.kernel > 0).sum(axis=-1))) ** n
    size = (code.source1.size ** n) * (code.source2.size ** n) * outputs_per_pair
    check_guard(size, settings.exact_guard, "end-to-end enumeration")
    decoder = code.decoder(W, cfg)
    q1, q2 = code.source1.q, code.source2.q
    total = 0.0
    for s1 in _all_sequences(code.source1.size, n):
        p1 = float(np.prod(q1[list(s1)]))
        if p1 <= 0:
            continue
        for s2 in _all_sequences(code.source2.size, n):
            p2 = float(np.prod(q2[list(s2)]))
            if p2 <= 0:
                continue
            x, y, _ = code.encode(s1, s2)
            supports = [np.flatnonzero(W.kernel[x[t], y[t]] > 0) for t in range(n)]
            for z in itertools.product(*supports):
                pz = float(np.prod(W.kernel[x, y, list(z)]))
                if code.invert(decoder.decode(np.asarray(z)).message) != (tuple(s1), tuple(s2)):
                    total += p1 * p2 * pz
    return min(1.0, total)


def direct_error_mc(
    code: JsccCode, W: MacChannel, trials: int, seed: int = 0, cfg: Optional[DecoderConfig] = None
) -> ErrorEstimate:
    """End-to-end Monte Carlo: i.i.d. source pairs, channel draw, decode, invert"""
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}")
    rng = derive_rng(seed, 17)
    decoder = code.decoder(W, cfg)
    s1 = rng.choice(code.source1.size, size=(trials, code.n), p=code.source1.q)
    s2 = rng.choice(code.source2.size, size=(trials, code.n), p=code.source2.q)
    errors = 0
    for t in range(trials):
        x, y, _ = code.encode(s1[t], s2[t])
        z = sample_outputs(W, x, y, rng)
        decoded = code.invert(decoder.decode(z).message)
        if decoded != (tuple(s1[t].tolist()), tuple(s2[t].tolist())):
            errors += 1
    return ErrorEstimate.from_count(errors, trials)
