"""
Constant-composition codebook libraries for the two senders, the packing
counts K of codeword tuples by joint type, and the audit/resampling loop
that selects a library whose packing statistic is small.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence as Seq, Tuple

import numpy as np

from config import settings
from typekit import (
    Alphabet,
    EmpiricalType,
    approximate_conditional_type,
    batch_multi_information,
    conditional_class_size,
    sample_conditional_class,
)
from utils import check_guard, derive_rng

logger = logging.getLogger(__name__)

FAMILIES = ("pair", "pair_k", "pair_l", "pair_kl")

# sender of each codeword slot per family; slots follow U in axis order
_FAMILY_SLOTS = {
    "pair": ("x", "y"),
    "pair_k": ("x", "x", "y"),
    "pair_l": ("x", "y", "y"),
    "pair_kl": ("x", "x", "y", "y"),
}
# slot pairs whose codeword may not coincide when they share a codebook
_FAMILY_EXCLUSIONS = {
    "pair": (),
    "pair_k": ((0, 1),),
    "pair_l": ((1, 2),),
    "pair_kl": ((0, 1), (2, 3)),
}
# V over U, X, X~, Y, Y~: axes each family keeps
_FAMILY_AXES = {
    "pair": (0, 1, 3),
    "pair_k": (0, 1, 2, 3),
    "pair_l": (0, 1, 3, 4),
    "pair_kl": (0, 1, 2, 3, 4),
}


class PackingError(RuntimeError):
    """No sampled library met the packing threshold within the allowed tries"""

    def __init__(self, tries: int, best_log2_s: float, threshold_log2: float):
        self.tries = tries
        self.best_log2_s = best_log2_s
        self.threshold_log2 = threshold_log2
        super().__init__(
            f"no library with log2 S <= {threshold_log2:.4f} after {tries} tries "
            f"(best log2 S = {best_log2_s:.4f})"
        )


def codebook_size(n: int, rate: float) -> int:
    """floor(2^(nR)), snapping values within rounding of an integer"""
    if rate < 0:
        raise ValueError(f"rate must be non-negative, got {rate}")
    value = 2.0 ** (n * rate)
    nearest = round(value)
    if abs(value - nearest) <= 1e-9 * max(1.0, value):
        return int(nearest)
    return int(math.floor(value))


def _class_size(u_counts: np.ndarray, cond: np.ndarray) -> int:
    n = int(u_counts.sum())
    t = EmpiricalType((Alphabet(cond.shape[0]), Alphabet(cond.shape[1])), cond, n)
    return conditional_class_size(t)


@dataclass(frozen=True, eq=False)
class LibraryParams:
    n: int
    u_counts: np.ndarray
    x_types: Tuple[np.ndarray, ...]
    y_types: Tuple[np.ndarray, ...]
    rates1: Tuple[float, ...]
    rates2: Tuple[float, ...]
    distinct: bool = True

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise ValueError("blocklength must be at least 1")
        u_counts = np.asarray(self.u_counts, dtype=np.int64)
        if u_counts.ndim != 1 or int(u_counts.sum()) != n or np.any(u_counts < 0):
            raise ValueError(f"u type {u_counts.tolist()} is not a type of length {n}")
        x_types = tuple(np.asarray(t, dtype=np.int64) for t in self.x_types)
        y_types = tuple(np.asarray(t, dtype=np.int64) for t in self.y_types)
        rates1 = tuple(float(r) for r in self.rates1)
        rates2 = tuple(float(r) for r in self.rates2)
        if not x_types or not y_types:
            raise ValueError("each sender needs at least one codebook")
        if len(x_types) != len(rates1) or len(y_types) != len(rates2):
            raise ValueError("need one rate per codebook composition")
        for name, types in (("X", x_types), ("Y", y_types)):
            widths = {t.shape[1] if t.ndim == 2 else -1 for t in types}
            if len(widths) != 1 or -1 in widths:
                raise ValueError(f"{name} compositions must be |U| x |{name}| count matrices of one shape")
            for idx, t in enumerate(types):
                if t.shape[0] != u_counts.shape[0] or np.any(t < 0):
                    raise ValueError(f"{name} composition {idx} does not fit |U|={u_counts.shape[0]}")
                if not np.array_equal(t.sum(axis=1), u_counts):
                    raise ValueError(
                        f"{name} composition {idx} has row sums {t.sum(axis=1).tolist()}, "
                        f"expected the u type {u_counts.tolist()}"
                    )
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "u_counts", u_counts)
        object.__setattr__(self, "x_types", x_types)
        object.__setattr__(self, "y_types", y_types)
        object.__setattr__(self, "rates1", rates1)
        object.__setattr__(self, "rates2", rates2)
        for name, types, rates in (("A", x_types, rates1), ("B", y_types, rates2)):
            for idx, (t, r) in enumerate(zip(types, rates)):
                size = codebook_size(n, r)
                available = _class_size(u_counts, t)
                if size > available:
                    raise ValueError(
                        f"codebook {name}{idx} needs {size} codewords at rate {r:.6f} "
                        f"but its type class holds only {available}"
                    )

    @property
    def m1(self) -> int:
        return len(self.x_types)

    @property
    def m2(self) -> int:
        return len(self.y_types)

    @property
    def u_size(self) -> int:
        return self.u_counts.shape[0]

    @property
    def x_size(self) -> int:
        return self.x_types[0].shape[1]

    @property
    def y_size(self) -> int:
        return self.y_types[0].shape[1]

    @property
    def n1(self) -> List[int]:
        return [codebook_size(self.n, r) for r in self.rates1]

    @property
    def n2(self) -> List[int]:
        return [codebook_size(self.n, r) for r in self.rates2]

    def class_sizes(self) -> Tuple[List[int], List[int]]:
        return (
            [_class_size(self.u_counts, t) for t in self.x_types],
            [_class_size(self.u_counts, t) for t in self.y_types],
        )

    def u_sequence(self) -> np.ndarray:
        """Lexicographically smallest sequence of the u type"""
        return np.repeat(np.arange(self.u_size), self.u_counts)

    @classmethod
    def from_kernels(
        cls,
        n: int,
        p_u,
        x_kernels: Seq,
        y_kernels: Seq,
        rates1: Seq[float],
        rates2: Seq[float],
        distinct: Optional[bool] = None,
    ) -> Tuple["LibraryParams", float]:
        """
        Round P_U and every codebook kernel to types over n.
        Returns the params and the largest realised variational distance.
        """
        nus = []
        rounded = {}
        for sender, kernels in (("x", x_kernels), ("y", y_kernels)):
            rounded[sender] = []
            for kernel in kernels:
                u_counts, cond, nu = approximate_conditional_type(n, p_u, kernel)
                rounded[sender].append(cond)
                nus.append(nu)
        x_types, y_types = rounded["x"], rounded["y"]
        params = cls(
            n, u_counts, tuple(x_types), tuple(y_types), tuple(rates1), tuple(rates2),
            settings.distinct_codewords if distinct is None else distinct,
        )
        return params, max(nus)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "u_counts": self.u_counts.tolist(),
            "x_types": [t.tolist() for t in self.x_types],
            "y_types": [t.tolist() for t in self.y_types],
            "rates1": list(self.rates1),
            "rates2": list(self.rates2),
            "distinct": self.distinct,
        }

    @classmethod
    def from_json(cls, data: dict) -> "LibraryParams":
        return cls(
            int(data["n"]),
            np.asarray(data["u_counts"]),
            tuple(np.asarray(t) for t in data["x_types"]),
            tuple(np.asarray(t) for t in data["y_types"]),
            tuple(data["rates1"]),
            tuple(data["rates2"]),
            bool(data.get("distinct", True)),
        )


@dataclass(eq=False)
class CodebookLibraryPair:
    """
    Sender codebooks over a shared u sequence. A[i] is an (N1^i, n) integer
    array, B[j] an (N2^j, n) one.
    """

    params: LibraryParams
    u: np.ndarray
    A: List[np.ndarray]
    B: List[np.ndarray]
    seed: int = 0
    attempt: int = 0

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def whole_class(self) -> Tuple[List[bool], List[bool]]:
        """Codebooks that exhaust their conditional type class"""
        size_a, size_b = self.params.class_sizes()
        return (
            [len(cb) == s for cb, s in zip(self.A, size_a)],
            [len(cb) == s for cb, s in zip(self.B, size_b)],
        )

    def stacked(self, sender: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        All codewords of one sender stacked into one array, with each row's
        codebook index and position inside its codebook.
        """
        books = self.A if sender == 1 else self.B
        words = np.concatenate(books, axis=0) if books else np.zeros((0, self.n), dtype=np.int64)
        book = np.concatenate([np.full(len(cb), idx, dtype=np.int64) for idx, cb in enumerate(books)])
        within = np.concatenate([np.arange(len(cb), dtype=np.int64) for cb in books])
        return words, book, within

    def validate(self) -> None:
        """Check codebook sizes, type-class membership and distinctness"""
        p = self.params
        if not np.array_equal(self.u, p.u_sequence()):
            raise ValueError("u is not the lexicographically smallest sequence of the u type")
        for name, books, types, sizes, alphabet in (
            ("A", self.A, p.x_types, p.n1, p.x_size),
            ("B", self.B, p.y_types, p.n2, p.y_size),
        ):
            if len(books) != len(types):
                raise ValueError(f"library {name} has {len(books)} codebooks, params list {len(types)}")
            for idx, (cb, t, size) in enumerate(zip(books, types, sizes)):
                if cb.shape != (size, p.n):
                    raise ValueError(f"codebook {name}{idx} has shape {cb.shape}, expected {(size, p.n)}")
                for row, word in enumerate(cb):
                    if np.any(word < 0) or np.any(word >= alphabet):
                        raise ValueError(f"codeword {row} of {name}{idx} has symbols outside the alphabet")
                    counts = np.zeros_like(t)
                    np.add.at(counts, (self.u, word), 1)
                    if not np.array_equal(counts, t):
                        raise ValueError(f"codeword {row} of {name}{idx} is not in its conditional type class")
                if p.distinct and len(np.unique(cb, axis=0)) != len(cb):
                    raise ValueError(f"codebook {name}{idx} repeats a codeword")

    def to_json(self) -> dict:
        return {
            "params": self.params.to_json(),
            "u": self.u.tolist(),
            "A": [cb.tolist() for cb in self.A],
            "B": [cb.tolist() for cb in self.B],
            "seed": self.seed,
            "attempt": self.attempt,
        }

    @classmethod
    def from_json(cls, data: dict) -> "CodebookLibraryPair":
        params = LibraryParams.from_json(data["params"])
        n = params.n
        lib = cls(
            params,
            np.asarray(data["u"], dtype=np.int64),
            [np.asarray(cb, dtype=np.int64).reshape(-1, n) for cb in data["A"]],
            [np.asarray(cb, dtype=np.int64).reshape(-1, n) for cb in data["B"]],
            int(data.get("seed", 0)),
            int(data.get("attempt", 0)),
        )
        lib.validate()
        return lib


def build_library(params: LibraryParams, seed: int, attempt: int = 0) -> CodebookLibraryPair:
    """
    Draw every codebook uniformly from its conditional type class given u.
    Each codebook has its own stream, addressed by (seed, attempt, sender, index).
    """
    u = params.u_sequence()
    A, B = [], []
    for sender, types, sizes, out in ((1, params.x_types, params.n1, A), (2, params.y_types, params.n2, B)):
        for idx, (cond, size) in enumerate(zip(types, sizes)):
            rng = derive_rng(seed, attempt, sender, idx)
            book = sample_conditional_class(u, cond, size, rng, distinct=params.distinct)
            if not params.distinct and len(np.unique(book, axis=0)) < len(book):
                logger.warning(f"i.i.d. draw repeated a codeword in codebook {sender}:{idx}")
            out.append(book)
    lib = CodebookLibraryPair(params, u, A, B, seed, attempt)
    full_a, full_b = lib.whole_class
    if any(full_a) or any(full_b):
        logger.info(f"Codebooks equal to their whole type class: A{np.flatnonzero(full_a).tolist()} "
                    f"B{np.flatnonzero(full_b).tolist()}")
    return lib


def _family_counts(lib: CodebookLibraryPair, family: str, books: Optional[Tuple[int, ...]] = None):
    """
    Count codeword tuples of one family by (codebook tuple, joint type).
    Returns (book index rows, count-vector rows, multiplicities) with the
    same-codebook exclusions applied.
    """
    p = lib.params
    slots = _FAMILY_SLOTS[family]
    stacks = {1: lib.stacked(1), 2: lib.stacked(2)}
    sender_of = {"x": 1, "y": 2}
    words, labels, rows_of, sizes = [], [], [], []
    for s_idx, role in enumerate(slots):
        w, book, _ = stacks[sender_of[role]]
        global_rows = np.arange(len(w))
        if books is not None:
            keep = book == books[s_idx]
            w, book, global_rows = w[keep], book[keep], global_rows[keep]
        words.append(w)
        labels.append(book)
        rows_of.append(global_rows)
        sizes.append(p.x_size if role == "x" else p.y_size)
    dims = [len(w) for w in words]
    total = int(np.prod(dims, dtype=np.int64))
    cell_dims = (p.u_size,) + tuple(sizes)
    cells = int(np.prod(cell_dims, dtype=np.int64))
    chunk = max(1, 2_000_000 // max(1, p.n))
    keys, mult = [], []
    for start in range(0, total, chunk):
        flat = np.arange(start, min(total, start + chunk), dtype=np.int64)
        idx = np.unravel_index(flat, dims)
        keep = np.ones(len(flat), dtype=bool)
        for a, b in _FAMILY_EXCLUSIONS[family]:
            keep &= rows_of[a][idx[a]] != rows_of[b][idx[b]]
        idx = tuple(i[keep] for i in idx)
        if not len(idx[0]):
            continue
        codes = np.broadcast_to(lib.u, (len(idx[0]), p.n)).astype(np.int64)
        for w, i, size in zip(words, idx, sizes):
            codes = codes * size + w[i]
        counts = np.zeros((len(idx[0]), cells), dtype=np.int64)
        rows = np.arange(len(idx[0]))
        for t in range(p.n):
            counts[rows, codes[:, t]] += 1
        book_rows = np.stack([lab[i] for lab, i in zip(labels, idx)], axis=1)
        uniq, inverse = np.unique(np.concatenate([book_rows, counts], axis=1), axis=0, return_inverse=True)
        keys.append(uniq)
        mult.append(np.bincount(inverse.ravel(), minlength=len(uniq)))
    width = len(slots) + cells
    if not keys:
        return np.zeros((0, len(slots)), dtype=np.int64), np.zeros((0, cells), dtype=np.int64), np.zeros(0), cell_dims
    uniq, inverse = np.unique(np.concatenate(keys, axis=0).reshape(-1, width), axis=0, return_inverse=True)
    weights = np.bincount(inverse.ravel(), weights=np.concatenate(mult).astype(float), minlength=len(uniq))
    return uniq[:, : len(slots)], uniq[:, len(slots):], weights, cell_dims


def _family_tuple_total(params: LibraryParams, family: str) -> int:
    n1, n2 = sum(params.n1), sum(params.n2)
    return math.prod(n1 if role == "x" else n2 for role in _FAMILY_SLOTS[family])


def packing_functions(lib: CodebookLibraryPair, i: int, j: int, k: int, l: int, V: EmpiricalType) -> Dict[str, int]:
    """
    Exact K counts for codebooks (i, j, k, l) and a joint type V over
    U x X x X~ x Y x Y~. The three smaller families use the matching
    marginals of V.
    """
    p = lib.params
    shape = (p.u_size, p.x_size, p.x_size, p.y_size, p.y_size)
    if V.counts.shape != shape:
        raise ValueError(f"joint type has axes {V.counts.shape}, expected U x X x X~ x Y x Y~ = {shape}")
    if V.n != p.n:
        raise ValueError(f"joint type has blocklength {V.n}, library has {p.n}")
    if not (0 <= i < p.m1 and 0 <= k < p.m1 and 0 <= j < p.m2 and 0 <= l < p.m2):
        raise ValueError(f"codebook indices ({i}, {j}, {k}, {l}) out of range")
    books = {"pair": (i, j), "pair_k": (i, k, j), "pair_l": (i, j, l), "pair_kl": (i, k, j, l)}
    out = {}
    for family in FAMILIES:
        keep = _FAMILY_AXES[family]
        drop = tuple(a for a in range(5) if a not in keep)
        target = V.counts.sum(axis=drop).ravel() if drop else V.counts.ravel()
        _, counts, weights, _ = _family_counts(lib, family, books[family])
        hit = np.all(counts == target[None, :], axis=1)
        out[family] = int(round(weights[hit].sum()))
    return out


@dataclass
class PackingAuditReport:
    n: int
    delta_prime: float
    log2_s: float
    worst_slack: Dict[str, float]
    worst_case: Dict[str, Optional[dict]]
    tuples: int
    passed: bool
    expressions: int = 0
    checked_delta: Optional[float] = None

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "delta_prime": self.delta_prime,
            "log2_s": self.log2_s,
            "worst_slack": dict(self.worst_slack),
            "worst_case": dict(self.worst_case),
            "tuples": self.tuples,
            "passed": self.passed,
            "expressions": self.expressions,
            "checked_delta": self.checked_delta,
        }


def _family_rates(params: LibraryParams, family: str, book_rows: np.ndarray) -> np.ndarray:
    r1 = np.asarray(params.rates1)
    r2 = np.asarray(params.rates2)
    rates = np.zeros(len(book_rows))
    for s_idx, role in enumerate(_FAMILY_SLOTS[family]):
        rates += (r1 if role == "x" else r2)[book_rows[:, s_idx]]
    return rates


def _audit_tuples(params: LibraryParams) -> int:
    return sum(_family_tuple_total(params, f) for f in FAMILIES)


def expression_count(params: LibraryParams) -> int:
    """Number of (codebook tuple, joint type) pairs the statistic S sums over"""
    total = 0
    for family in FAMILIES:
        slots = _FAMILY_SLOTS[family]
        tuples = math.prod(params.m1 if role == "x" else params.m2 for role in slots)
        cells = params.u_size * math.prod(params.x_size if role == "x" else params.y_size for role in slots)
        total += tuples * math.comb(params.n + cells - 1, cells - 1)
    return total


def audit_packing(lib: CodebookLibraryPair, delta_prime: Optional[float] = None) -> PackingAuditReport:
    """
    Exhaustive check of the four packing bounds.

    Each realised (codebook tuple, joint type) contributes
    K * 2^(n (I - rates)) to S, where I is the conditional
    multi-information of the tuple's slots given U. With the realised
    delta' = max(0, log2 S / n) every bound holds; passing delta_prime
    checks the bounds against that value instead.
    """
    p = lib.params
    tuples = _audit_tuples(p)
    check_guard(tuples, settings.audit_guard, "packing audit")
    log_terms: Dict[str, np.ndarray] = {}
    worst_rows: Dict[str, Optional[dict]] = {}
    for family in FAMILIES:
        book_rows, counts, weights, cell_dims = _family_counts(lib, family)
        if not len(weights):
            log_terms[family] = np.zeros(0)
            worst_rows[family] = None
            continue
        probs = counts.reshape((-1,) + cell_dims) / p.n
        groups = [(a,) for a in range(1, len(cell_dims))]
        info = batch_multi_information(probs, groups, (0,))
        exponent = p.n * (np.maximum(info, 0.0) - _family_rates(p, family, book_rows))
        log_terms[family] = np.log2(weights) + exponent
        top = int(np.argmax(log_terms[family]))
        worst_rows[family] = {
            "codebooks": book_rows[top].tolist(),
            "counts": counts[top].tolist(),
            "K": int(round(weights[top])),
        }
    everything = np.concatenate(list(log_terms.values()))
    log2_s = float(np.logaddexp2.reduce(everything)) if everything.size else -math.inf
    realised = max(0.0, log2_s / p.n) if math.isfinite(log2_s) else 0.0
    delta = realised if delta_prime is None else float(delta_prime)
    worst_slack = {
        family: float(p.n * delta - terms.max()) if terms.size else math.inf
        for family, terms in log_terms.items()
    }
    passed = all(s >= -1e-9 for s in worst_slack.values())
    return PackingAuditReport(
        n=p.n,
        delta_prime=realised,
        log2_s=log2_s,
        worst_slack=worst_slack,
        worst_case=worst_rows,
        tuples=tuples,
        passed=passed,
        expressions=expression_count(p),
        checked_delta=delta,
    )


def packing_threshold_log2(params: LibraryParams) -> float:
    """log2 of twice the expectation bound on S for a uniformly drawn library"""
    poly = 2 * params.u_size * (params.x_size + params.y_size) * math.log2(params.n + 1)
    return 1.0 + math.log2(expression_count(params)) + poly


def resample_until_packed(
    params: LibraryParams, max_tries: int = 10, seed: int = 0
) -> Tuple[CodebookLibraryPair, PackingAuditReport]:
    """Draw libraries until one has S below twice its expectation bound"""
    if max_tries < 1:
        raise ValueError("max_tries must be at least 1")
    check_guard(_audit_tuples(params), settings.audit_guard, "packing audit")
    threshold = packing_threshold_log2(params)
    best = math.inf
    for attempt in range(max_tries):
        lib = build_library(params, seed, attempt)
        report = audit_packing(lib)
        best = min(best, report.log2_s)
        if report.log2_s <= threshold and report.passed:
            logger.info(
                f"Packed library found on try {attempt + 1}: log2 S = {report.log2_s:.4f}, "
                f"delta' = {report.delta_prime:.6f}"
            )
            return lib, report
        logger.info(f"Try {attempt + 1}: log2 S = {report.log2_s:.4f} above {threshold:.4f}, resampling")
    raise PackingError(max_tries, best, threshold)


def library_from_codewords(
    params: LibraryParams, A: Seq[Seq[Seq[int]]], B: Seq[Seq[Seq[int]]], validate: bool = True
) -> CodebookLibraryPair:
    """Wrap hand-written codewords as a library over the params' u sequence"""
    lib = CodebookLibraryPair(
        params,
        params.u_sequence(),
        [np.asarray(cb, dtype=np.int64).reshape(-1, params.n) for cb in A],
        [np.asarray(cb, dtype=np.int64).reshape(-1, params.n) for cb in B],
    )
    if validate:
        lib.validate()
    return lib
