"""
Finite-alphabet probability objects, type-class combinatorics and the
information measures every other module is built on.

All logarithms are base 2. 0*log 0 is 0 and p*log(p/0) is +inf.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np
from scipy.special import xlogy

from config import settings
from utils import largest_remainder

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)

# above this many members, codewords are drawn by rejection instead of by rank
RANK_SAMPLING_LIMIT = 1 << 20


@dataclass(frozen=True)
class Alphabet:
    size: int
    labels: Tuple[str, ...] = ()

    def __post_init__(self):
        size = int(self.size)
        if size < 1:
            raise ValueError(f"Alphabet size must be at least 1, got {self.size}")
        labels = tuple(str(label) for label in self.labels) or tuple(str(i) for i in range(size))
        if len(labels) != size:
            raise ValueError(f"Alphabet of size {size} got {len(labels)} labels")
        if len(set(labels)) != size:
            raise ValueError(f"Alphabet labels must be distinct: {labels}")
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "labels", labels)


AxesLike = Iterable[Union[Alphabet, int]]
Tensor = Union["JointDistribution", np.ndarray]


def make_axes(axes: AxesLike) -> Tuple[Alphabet, ...]:
    return tuple(a if isinstance(a, Alphabet) else Alphabet(int(a)) for a in axes)


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """Dense probability tensor over a product of finite alphabets"""

    axes: Tuple[Alphabet, ...]
    probs: np.ndarray

    def __post_init__(self):
        axes = make_axes(self.axes)
        shape = tuple(a.size for a in axes)
        probs = np.array(self.probs, dtype=float)
        if probs.shape != shape:
            if probs.size != int(np.prod(shape, dtype=np.int64)):
                raise ValueError(f"probs of shape {probs.shape} do not fit axes {shape}")
            probs = probs.reshape(shape)
        if np.any(~np.isfinite(probs)) or np.any(probs < 0):
            raise ValueError("probabilities must be finite and non-negative")
        total = float(probs.sum())
        if abs(total - 1.0) > settings.mass_tolerance:
            raise ValueError(f"total mass {total:.12g} is not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_array(cls, probs, labels: Optional[List[List[str]]] = None) -> "JointDistribution":
        arr = np.asarray(probs, dtype=float)
        if labels is None:
            axes = tuple(Alphabet(s) for s in arr.shape)
        else:
            axes = tuple(Alphabet(len(lbl), tuple(lbl)) for lbl in labels)
        return cls(axes, arr)

    @classmethod
    def normalized(cls, weights, axes: Optional[AxesLike] = None) -> "JointDistribution":
        """Explicit renormalization at construction time"""
        arr = np.asarray(weights, dtype=float)
        total = arr.sum()
        if not total > 0:
            raise ValueError("weights must have positive mass")
        return cls(make_axes(axes) if axes is not None else tuple(Alphabet(s) for s in arr.shape), arr / total)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.probs.shape

    @property
    def ndim(self) -> int:
        return self.probs.ndim

    def marginal(self, keep: Iterable[int]) -> "JointDistribution":
        keep = tuple(int(k) for k in keep)
        _check_groups(self.ndim, keep)
        other = tuple(i for i in range(self.ndim) if i not in keep)
        summed = self.probs.sum(axis=other) if other else self.probs
        remaining = [i for i in range(self.ndim) if i in keep]
        order = [remaining.index(k) for k in keep]
        return JointDistribution(tuple(self.axes[k] for k in keep), np.transpose(summed, order))

    def conditional(self, conditioning: Iterable[int]) -> np.ndarray:
        """
        Kernel with the conditioning axes moved to the front.
        Rows whose conditioning event has zero mass are left at zero.
        """
        conditioning = tuple(int(c) for c in conditioning)
        _check_groups(self.ndim, conditioning)
        rest = tuple(i for i in range(self.ndim) if i not in conditioning)
        moved = np.transpose(self.probs, conditioning + rest)
        mass = moved.sum(axis=tuple(range(len(conditioning), self.ndim)), keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(mass > 0, moved / np.where(mass > 0, mass, 1.0), 0.0)

    def to_json(self) -> dict:
        return {"axes": [a.size for a in self.axes], "probs": self.probs.ravel().tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "JointDistribution":
        return cls(make_axes(data["axes"]), np.asarray(data["probs"], dtype=float))


@dataclass(frozen=True, eq=False)
class EmpiricalType:
    """Integer count tensor of a length-n sequence (or tuple of sequences)"""

    axes: Tuple[Alphabet, ...]
    counts: np.ndarray
    n: int

    def __post_init__(self):
        axes = make_axes(self.axes)
        shape = tuple(a.size for a in axes)
        counts = np.array(self.counts)
        if counts.size and not np.all(np.equal(np.mod(counts, 1), 0)):
            raise ValueError("type counts must be integers")
        counts = counts.astype(np.int64).reshape(shape)
        if np.any(counts < 0):
            raise ValueError("type counts must be non-negative")
        if int(counts.sum()) != int(self.n):
            raise ValueError(f"type counts sum to {int(counts.sum())}, expected n={self.n}")
        if int(self.n) < 1:
            raise ValueError("blocklength must be at least 1")
        counts.setflags(write=False)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "n", int(self.n))

    @property
    def probs(self) -> np.ndarray:
        return self.counts / self.n

    def as_fractions(self) -> np.ndarray:
        out = np.empty(self.counts.shape, dtype=object)
        for idx, c in np.ndenumerate(self.counts):
            out[idx] = Fraction(int(c), self.n)
        return out

    def to_distribution(self) -> JointDistribution:
        return JointDistribution(self.axes, self.probs)

    def key(self) -> Tuple[int, ...]:
        return tuple(int(c) for c in self.counts.ravel())

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmpiricalType):
            return NotImplemented
        return self.n == other.n and self.counts.shape == other.counts.shape and self.key() == other.key()

    def __hash__(self) -> int:
        return hash((self.counts.shape, self.key()))

    def to_json(self) -> dict:
        return {"axes": [a.size for a in self.axes], "counts": self.key(), "n": self.n}

    @classmethod
    def from_json(cls, data: dict) -> "EmpiricalType":
        return cls(make_axes(data["axes"]), np.asarray(data["counts"], dtype=np.int64), int(data["n"]))


@dataclass(frozen=True)
class Sequence:
    alphabet: Alphabet
    symbols: Tuple[int, ...]

    def __post_init__(self):
        alphabet = self.alphabet if isinstance(self.alphabet, Alphabet) else Alphabet(int(self.alphabet))
        symbols = tuple(int(s) for s in np.asarray(self.symbols).ravel())
        for t, s in enumerate(symbols):
            if not 0 <= s < alphabet.size:
                raise ValueError(f"symbol {s} at position {t} is outside an alphabet of size {alphabet.size}")
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "symbols", symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.symbols, dtype=np.int64)


# ---------------------------------------------------------------------------
# information measures


def _tensor(P: Tensor) -> np.ndarray:
    if isinstance(P, JointDistribution):
        return P.probs
    return np.asarray(P, dtype=float)


def _check_groups(ndim: int, *groups: Iterable[int]) -> None:
    seen = set()
    for group in groups:
        for axis in group:
            if not 0 <= int(axis) < ndim:
                raise ValueError(f"axis index {axis} out of range for {ndim} axes")
            if axis in seen:
                raise ValueError(f"axis {axis} appears in more than one axis set")
            seen.add(axis)


def _joint_entropy(arr: np.ndarray, axes: Iterable[int]) -> float:
    axes = set(axes)
    if not axes:
        return 0.0
    other = tuple(i for i in range(arr.ndim) if i not in axes)
    m = arr.sum(axis=other) if other else arr
    return float(-xlogy(m, m).sum() / LN2)


def entropy(P: Tensor, target_axes: Iterable[int], conditioning_axes: Iterable[int] = ()) -> float:
    """Conditional Shannon entropy H(target | conditioning) in bits"""
    arr = _tensor(P)
    target, cond = tuple(target_axes), tuple(conditioning_axes)
    _check_groups(arr.ndim, target, cond)
    return _joint_entropy(arr, target + cond) - _joint_entropy(arr, cond)


def mutual_information(
    P: Tensor, axes_a: Iterable[int], axes_b: Iterable[int], conditioning_axes: Iterable[int] = ()
) -> float:
    """I(A ^ B | C) = H(A|C) + H(B|C) - H(A,B|C)"""
    arr = _tensor(P)
    a, b, c = tuple(axes_a), tuple(axes_b), tuple(conditioning_axes)
    _check_groups(arr.ndim, a, b, c)
    return (
        _joint_entropy(arr, a + c)
        + _joint_entropy(arr, b + c)
        - _joint_entropy(arr, a + b + c)
        - _joint_entropy(arr, c)
    )


def multi_information(P: Tensor, axis_groups: List[Iterable[int]], conditioning_axes: Iterable[int] = ()) -> float:
    """
    Multi-information of the groups given the conditioning axes:
    sum_k H(group_k | C) - H(all groups | C)
    """
    arr = _tensor(P)
    groups = [tuple(g) for g in axis_groups]
    cond = tuple(conditioning_axes)
    _check_groups(arr.ndim, cond, *groups)
    h_cond = _joint_entropy(arr, cond)
    everything = tuple(itertools.chain.from_iterable(groups))
    total = sum(_joint_entropy(arr, g + cond) - h_cond for g in groups)
    return total - (_joint_entropy(arr, everything + cond) - h_cond)


def multi_info_partition_identity_residual(
    P: Tensor,
    partition_i: List[Iterable[int]],
    partition_j: List[Iterable[int]],
    conditioning_axes: Iterable[int] = (),
) -> float:
    """
    I(all groups) - [I(groups in I) + I(groups in J) + I(I-block ^ J-block)],
    all conditioned on the same axes. Zero up to rounding.
    """
    groups_i = [tuple(g) for g in partition_i]
    groups_j = [tuple(g) for g in partition_j]
    if not groups_i or not groups_j:
        raise ValueError("both parts of the partition must be non-empty")
    arr = _tensor(P)
    cond = tuple(conditioning_axes)
    _check_groups(arr.ndim, cond, *groups_i, *groups_j)
    block_i = tuple(itertools.chain.from_iterable(groups_i))
    block_j = tuple(itertools.chain.from_iterable(groups_j))
    whole = multi_information(arr, groups_i + groups_j, cond)
    parts = (
        multi_information(arr, groups_i, cond)
        + multi_information(arr, groups_j, cond)
        + mutual_information(arr, block_i, block_j, cond)
    )
    return whole - parts


def conditional_divergence(P_cond: np.ndarray, W: np.ndarray, P_base: Tensor) -> float:
    """
    D(P_cond || W | P_base) in bits.

    P_cond and W are kernels whose leading axes match P_base. Rows where
    P_base has no mass do not count; an absolutely-continuity failure on a
    weighted row gives +inf.
    """
    base = _tensor(P_base)
    pc = np.asarray(P_cond, dtype=float)
    w = np.asarray(W, dtype=float)
    if pc.shape != w.shape:
        raise ValueError(f"kernel shapes differ: {pc.shape} vs {w.shape}")
    if pc.shape[: base.ndim] != base.shape:
        raise ValueError(f"kernel shape {pc.shape} does not start with base shape {base.shape}")
    weight = base.reshape(base.shape + (1,) * (pc.ndim - base.ndim))
    active = (weight > 0) & (pc > 0)
    if np.any(active & (w <= 0)):
        return math.inf
    safe_pc = np.where(active, pc, 1.0)
    safe_w = np.where(active, w, 1.0)
    terms = np.where(active, pc * (np.log2(safe_pc) - np.log2(safe_w)), 0.0)
    return float((weight * terms).sum())


def kl_divergence(P: Tensor, Q: Tensor) -> float:
    p, q = _tensor(P), _tensor(Q)
    if p.shape != q.shape:
        raise ValueError(f"axis mismatch: {p.shape} vs {q.shape}")
    return conditional_divergence(p, q, np.array(1.0))


def variational_distance(P: Tensor, Q: Tensor) -> float:
    p, q = _tensor(P), _tensor(Q)
    if p.shape != q.shape:
        raise ValueError(f"axis mismatch: {p.shape} vs {q.shape}")
    return float(np.abs(p - q).sum())


def conditional_variational_distance(V: Tensor, P: Tensor, base_ndim: int = 1) -> float:
    """
    sum_u V(u) || V(.|u) - P(.|u) ||, the per-u distance weighted by the
    mass of the leading base_ndim axes of V
    """
    v, p = _tensor(V), _tensor(P)
    if v.shape != p.shape:
        raise ValueError(f"axis mismatch: {v.shape} vs {p.shape}")
    rest = tuple(range(base_ndim, v.ndim))
    v_base = v.sum(axis=rest, keepdims=True)
    p_base = p.sum(axis=rest, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        v_cond = np.where(v_base > 0, v / np.where(v_base > 0, v_base, 1.0), 0.0)
        p_cond = np.where(p_base > 0, p / np.where(p_base > 0, p_base, 1.0), 0.0)
    return float((v_base * np.abs(v_cond - p_cond)).sum())


def batch_entropy(probs: np.ndarray, axes: Iterable[int]) -> np.ndarray:
    """Entropy of a marginal for a batch of tensors; axes index the non-batch axes"""
    keep = {int(a) + 1 for a in axes}
    if not keep:
        return np.zeros(probs.shape[0])
    other = tuple(i for i in range(1, probs.ndim) if i not in keep)
    m = probs.sum(axis=other) if other else probs
    return -xlogy(m, m).reshape(m.shape[0], -1).sum(axis=1) / LN2


def batch_multi_information(
    probs: np.ndarray, axis_groups: List[Iterable[int]], conditioning_axes: Iterable[int] = ()
) -> np.ndarray:
    groups = [tuple(g) for g in axis_groups]
    cond = tuple(conditioning_axes)
    h_cond = batch_entropy(probs, cond)
    everything = tuple(itertools.chain.from_iterable(groups))
    total = sum(batch_entropy(probs, g + cond) - h_cond for g in groups)
    return total - (batch_entropy(probs, everything + cond) - h_cond)


def count_log_table(n: int) -> np.ndarray:
    """c * log2(c) for c = 0..n"""
    c = np.arange(n + 1, dtype=float)
    return xlogy(c, c) / LN2


# ---------------------------------------------------------------------------
# types and type classes


def _compositions(total: int, parts: int):
    """Count vectors of length parts summing to total, in lexicographic order"""
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        counts = []
        for b in bars:
            counts.append(b - prev - 1)
            prev = b
        counts.append(total + parts - 2 - prev)
        yield counts


def enumerate_types(alphabet: Union[Alphabet, int], n: int) -> List[EmpiricalType]:
    """
    All types of length-n sequences over the alphabet, ordered
    lexicographically by their count vectors.
    """
    alphabet = alphabet if isinstance(alphabet, Alphabet) else Alphabet(alphabet)
    if n < 1:
        raise ValueError("blocklength must be at least 1")
    return [EmpiricalType((alphabet,), np.asarray(c), n) for c in _compositions(n, alphabet.size)]


def enumerate_joint_types(axes: AxesLike, n: int) -> List[EmpiricalType]:
    axes = make_axes(axes)
    shape = tuple(a.size for a in axes)
    if n < 1:
        raise ValueError("blocklength must be at least 1")
    cells = int(np.prod(shape, dtype=np.int64))
    return [EmpiricalType(axes, np.asarray(c).reshape(shape), n) for c in _compositions(n, cells)]


def enumerate_conditional_types(alphabet: Union[Alphabet, int], base_type: EmpiricalType) -> List[EmpiricalType]:
    """Joint types over base axes + alphabet whose base marginal equals base_type"""
    alphabet = alphabet if isinstance(alphabet, Alphabet) else Alphabet(alphabet)
    rows = [list(_compositions(int(m), alphabet.size)) for m in base_type.counts.ravel()]
    shape = base_type.counts.shape + (alphabet.size,)
    axes = base_type.axes + (alphabet,)
    return [
        EmpiricalType(axes, np.asarray(choice).reshape(shape), base_type.n)
        for choice in itertools.product(*rows)
    ]


def _multinomial(counts: Iterable[int]) -> int:
    result, running = 1, 0
    for c in counts:
        c = int(c)
        running += c
        result *= math.comb(running, c)
    return result


def type_class_size(t: EmpiricalType) -> int:
    """Exact number of sequences (or sequence tuples) of type t"""
    return _multinomial(t.counts.ravel())


def conditional_class_size(t: EmpiricalType, base_ndim: int = 1) -> int:
    """|T_V(u)|: sequences over the last axes with joint type t given a fixed base sequence"""
    rows = t.counts.reshape(int(np.prod(t.counts.shape[:base_ndim], dtype=np.int64)), -1)
    return math.prod(_multinomial(row) for row in rows)


def log2_type_class_size(t: EmpiricalType) -> float:
    counts = t.counts.ravel()
    estimate = (math.lgamma(t.n + 1) - sum(math.lgamma(int(c) + 1) for c in counts)) / LN2
    if estimate > 512:
        return estimate
    return math.log2(type_class_size(t))


def type_class_probability(t: EmpiricalType, q) -> Union[float, Fraction]:
    """
    Q^n(T_P) for an i.i.d. law q. Exact when q holds Fractions.
    """
    counts = [int(c) for c in t.counts.ravel()]
    q_flat = list(np.asarray(q, dtype=object).ravel())
    if len(q_flat) != len(counts):
        raise ValueError(f"law over {len(q_flat)} cells does not match a type over {len(counts)} cells")
    if all(isinstance(v, (Fraction, int)) for v in q_flat):
        prob = Fraction(type_class_size(t))
        for c, v in zip(counts, q_flat):
            prob *= Fraction(v) ** c
        return prob
    log_prob = math.log2(type_class_size(t))
    for c, v in zip(counts, q_flat):
        v = float(v)
        if c == 0:
            continue
        if v <= 0:
            return 0.0
        log_prob += c * math.log2(v)
    return 2.0 ** log_prob


def rank_in_type_class(symbols: Iterable[int], counts: Iterable[int]) -> int:
    """Lexicographic rank of a sequence among all sequences with the given counts"""
    remaining = [int(c) for c in counts]
    m = sum(remaining)
    symbols = [int(s) for s in symbols]
    if len(symbols) != m:
        raise ValueError(f"sequence of length {len(symbols)} cannot have counts summing to {m}")
    total = _multinomial(remaining)
    rank = 0
    for s in symbols:
        if not 0 <= s < len(remaining) or remaining[s] == 0:
            raise ValueError("sequence is not in the type class")
        for v in range(s):
            if remaining[v]:
                rank += total * remaining[v] // m
        total = total * remaining[s] // m
        remaining[s] -= 1
        m -= 1
    return rank


def unrank_type_class(rank: int, counts: Iterable[int]) -> Tuple[int, ...]:
    remaining = [int(c) for c in counts]
    m = sum(remaining)
    total = _multinomial(remaining)
    rank = int(rank)
    if not 0 <= rank < total:
        raise ValueError(f"rank {rank} outside a type class of size {total}")
    out = []
    for _ in range(m):
        for v, c in enumerate(remaining):
            if c == 0:
                continue
            block = total * c // m
            if rank < block:
                out.append(v)
                total = block
                remaining[v] -= 1
                m -= 1
                break
            rank -= block
    return tuple(out)


def _u_blocks(u_symbols: np.ndarray, cond_counts: np.ndarray) -> List[np.ndarray]:
    u = np.asarray(u_symbols, dtype=np.int64)
    cond = np.asarray(cond_counts, dtype=np.int64)
    blocks = [np.flatnonzero(u == value) for value in range(cond.shape[0])]
    for value, positions in enumerate(blocks):
        if len(positions) != int(cond[value].sum()):
            raise ValueError(
                f"conditional counts for u={value} sum to {int(cond[value].sum())}, "
                f"but u takes that value {len(positions)} times"
            )
    return blocks


def unrank_conditional_class(rank: int, u_symbols: np.ndarray, cond_counts: np.ndarray) -> np.ndarray:
    """
    Member of T_V(u) with the given rank. Blocks of positions sharing a u
    value are ranked as mixed radix digits, u=0 most significant, which is
    lexicographic order whenever u is sorted.
    """
    cond = np.asarray(cond_counts, dtype=np.int64)
    blocks = _u_blocks(u_symbols, cond)
    sizes = [_multinomial(row) for row in cond]
    total = math.prod(sizes)
    rank = int(rank)
    if not 0 <= rank < total:
        raise ValueError(f"rank {rank} outside a conditional class of size {total}")
    x = np.zeros(len(u_symbols), dtype=np.int64)
    for value in reversed(range(cond.shape[0])):
        rank, digit = divmod(rank, sizes[value])
        if len(blocks[value]):
            x[blocks[value]] = unrank_type_class(digit, cond[value])
    return x


def rank_in_conditional_class(x_symbols: Iterable[int], u_symbols: np.ndarray, cond_counts: np.ndarray) -> int:
    cond = np.asarray(cond_counts, dtype=np.int64)
    blocks = _u_blocks(u_symbols, cond)
    x = np.asarray(list(x_symbols), dtype=np.int64)
    rank = 0
    for value in range(cond.shape[0]):
        size = _multinomial(cond[value])
        digit = rank_in_type_class(x[blocks[value]], cond[value]) if len(blocks[value]) else 0
        rank = rank * size + digit
    return rank


def sample_conditional_class(
    u_symbols: np.ndarray,
    cond_counts: np.ndarray,
    count: int,
    rng: np.random.Generator,
    distinct: bool = True,
) -> np.ndarray:
    """
    Draw count members of T_V(u) uniformly, without replacement when
    distinct is set and i.i.d. otherwise. Returns a (count, n) array.
    """
    u = np.asarray(u_symbols, dtype=np.int64)
    cond = np.asarray(cond_counts, dtype=np.int64)
    blocks = _u_blocks(u, cond)
    size = math.prod(_multinomial(row) for row in cond)
    if distinct and count > size:
        raise ValueError(f"conditional type class holds {size} sequences, {count} distinct ones requested")
    if count == 0:
        return np.zeros((0, len(u)), dtype=np.int64)
    if distinct and size <= RANK_SAMPLING_LIMIT:
        ranks = rng.choice(size, size=count, replace=False)
        return np.stack([unrank_conditional_class(int(r), u, cond) for r in ranks])
    templates = [np.repeat(np.arange(cond.shape[1]), row) for row in cond]
    rows: List[np.ndarray] = []
    seen = set()
    while len(rows) < count:
        x = np.zeros(len(u), dtype=np.int64)
        for value, positions in enumerate(blocks):
            if len(positions):
                x[positions] = rng.permutation(templates[value])
        key = x.tobytes()
        if distinct and key in seen:
            continue
        seen.add(key)
        rows.append(x)
    return np.stack(rows)


def joint_type_of(seqs: List[Sequence]) -> EmpiricalType:
    """Joint type of equal-length sequences, axes in the given order"""
    if not seqs:
        raise ValueError("need at least one sequence")
    n = len(seqs[0])
    for s in seqs:
        if len(s) != n:
            raise ValueError(f"sequence lengths differ: {n} vs {len(s)}")
    axes = tuple(s.alphabet for s in seqs)
    dims = tuple(a.size for a in axes)
    flat = np.ravel_multi_index(tuple(s.as_array() for s in seqs), dims)
    counts = np.bincount(flat, minlength=int(np.prod(dims, dtype=np.int64))).reshape(dims)
    return EmpiricalType(axes, counts, n)


def approximate_conditional_type(n: int, p_u: np.ndarray, kernel: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Round P_U to a type over n and each row of kernel to a conditional type
    given that u type, by largest remainders. Returns the u counts, the
    conditional counts and the variational distance between the realised
    joint type and P_U x kernel.
    """
    p_u = np.asarray(p_u, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    u_counts = largest_remainder(p_u, n)
    cond = np.zeros(kernel.shape, dtype=np.int64)
    for u, m in enumerate(u_counts):
        if m > 0:
            cond[u] = largest_remainder(kernel[u], int(m))
    nu = float(np.abs(cond / n - p_u[:, None] * kernel).sum())
    return u_counts, cond, nu
