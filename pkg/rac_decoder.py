"""
Two-stage universal decoder for codebook libraries.

Stage 1 maximizes alpha(joint type of u, x, y, z) - R1 - R2 over every
codeword pair of every codebook pair, where alpha is the conditional
multi-information I(X ^ Y ^ Z | U). Stage 2 accepts the maximizer only if
three threshold inequalities hold strictly; otherwise it reports a
collision.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence as Seq, Tuple, Union

import numpy as np

from codebooks import CodebookLibraryPair
from config import settings
from models import DecoderConfig
from typekit import EmpiricalType, Sequence, count_log_table, multi_information, mutual_information

logger = logging.getLogger(__name__)

MESSAGE = "message"
COLLISION = "collision"

# candidate matrices above this many entries are scored in row blocks
_BLOCK_ENTRIES = 4_000_000


def default_eta(n: int, alphabet_sizes: Seq[int], m1: int, m2: int) -> float:
    """(|U||X||Y||Z| log2(n+1) + log2(M1 M2)) / sqrt(n)"""
    if n < 1:
        raise ValueError("blocklength must be at least 1")
    if m1 < 1 or m2 < 1:
        raise ValueError("codebook counts must be at least 1")
    cells = math.prod(int(s) for s in alphabet_sizes)
    return (cells * math.log2(n + 1) + math.log2(m1 * m2)) / math.sqrt(n)


def resolve_eta(cfg: Optional[DecoderConfig], n: int, alphabet_sizes: Seq[int], m1: int, m2: int) -> float:
    """Threshold for blocklength n under the configured schedule"""
    cfg = cfg or DecoderConfig()
    if cfg.eta_schedule == "constant":
        return float(cfg.eta)
    return default_eta(n, alphabet_sizes, m1, m2)


def alpha(V: Union[EmpiricalType, np.ndarray]) -> float:
    """I(X ^ Y ^ Z | U) of a type over U x X x Y x Z"""
    probs = V.probs if isinstance(V, EmpiricalType) else np.asarray(V, dtype=float)
    if probs.ndim != 4:
        raise ValueError(f"alpha needs a type over U x X x Y x Z, got {probs.ndim} axes")
    return max(0.0, multi_information(probs, [(1,), (2,), (3,)], (0,)))


@dataclass(frozen=True)
class DecoderOutput:
    verdict: str
    message: Optional[Tuple[int, int, int, int]]
    candidate: Optional[Tuple[int, int, int, int]]
    stage1_score: float
    margins: Optional[Tuple[float, float, float]]
    tie: bool
    eta: float

    @property
    def is_collision(self) -> bool:
        return self.verdict == COLLISION

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "message": list(self.message) if self.message else None,
            "candidate": list(self.candidate) if self.candidate else None,
            "stage1_score": self.stage1_score,
            "margins": list(self.margins) if self.margins else None,
            "tie": self.tie,
            "eta": self.eta,
        }


def _composition_entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log2(p)).sum())


class Decoder:
    """Decoder bound to one library; every codeword pair of every codebook pair competes"""

    def __init__(
        self,
        lib: CodebookLibraryPair,
        z_size: int,
        cfg: Optional[DecoderConfig] = None,
    ):
        self.lib = lib
        self.cfg = cfg or DecoderConfig()
        p = lib.params
        self.n = p.n
        self.X, self.book_x, self.within_x = lib.stacked(1)
        self.Y, self.book_y, self.within_y = lib.stacked(2)
        n = p.n
        h_ux = np.array([_composition_entropy(t.ravel(), n) for t in p.x_types])
        h_uy = np.array([_composition_entropy(t.ravel(), n) for t in p.y_types])
        r1, r2 = np.asarray(p.rates1), np.asarray(p.rates2)
        self.fx = (h_ux - r1)[self.book_x]
        self.fy = (h_uy - r2)[self.book_y]
        # exact key of the per-pair offset, used to settle float ties
        self._x_key = [tuple(t.ravel().tolist()) + (r,) for t, r in zip(p.x_types, p.rates1)]
        self._y_key = [tuple(t.ravel().tolist()) + (r,) for t, r in zip(p.y_types, p.rates2)]
        self.x_ind = np.stack([(self.X == x).astype(float) for x in range(p.x_size)])
        self.y_ind = np.stack([(self.Y == y).astype(float) for y in range(p.y_size)])
        self.log_table = count_log_table(n)
        if int(z_size) < 1:
            raise ValueError("output alphabet size must be at least 1")
        self.z_size = int(z_size)
        sizes = (p.u_size, p.x_size, p.y_size, self.z_size)
        self.eta = resolve_eta(self.cfg, n, sizes, p.m1, p.m2)

    def _z_array(self, z) -> np.ndarray:
        arr = z.as_array() if isinstance(z, Sequence) else np.asarray(z, dtype=np.int64)
        if arr.shape != (self.n,):
            raise ValueError(f"output sequence has length {arr.size}, library blocklength is {self.n}")
        if np.any(arr < 0) or np.any(arr >= self.z_size):
            raise ValueError(f"output symbols must lie in 0..{self.z_size - 1}")
        return arr

    def _groups(self, z: np.ndarray) -> List[np.ndarray]:
        codes = self.lib.u * self.z_size + z
        return [np.flatnonzero(codes == c) for c in np.unique(codes)]

    def scores(self, z) -> np.ndarray:
        """Stage-1 score alpha - R1 - R2 for every stacked codeword pair"""
        z = self._z_array(z)
        n = self.n
        groups = self._groups(z)
        h_u = _composition_entropy(np.bincount(self.lib.u), n)
        h_uz = _composition_entropy(np.array([len(g) for g in groups]), n)
        c1, c2 = len(self.X), len(self.Y)
        nx, ny = self.x_ind.shape[0], self.y_ind.shape[0]
        out = np.empty((c1, c2))
        block = max(1, _BLOCK_ENTRIES // max(1, c2 * nx * ny))
        for start in range(0, c1, block):
            stop = min(c1, start + block)
            s = np.zeros((stop - start, c2))
            for g in groups:
                left = self.x_ind[:, start:stop][:, :, g].reshape(nx * (stop - start), len(g))
                right = self.y_ind[:, :, g].reshape(ny * c2, len(g))
                counts = np.rint(left @ right.T).astype(np.int64)
                s += self.log_table[counts].reshape(nx, stop - start, ny, c2).sum(axis=(0, 2))
            out[start:stop] = s
        return self.fx[:, None] + self.fy[None, :] + h_uz - 2 * h_u - math.log2(n) + out / n

    def joint_type(self, c: int, d: int, z) -> EmpiricalType:
        z = self._z_array(z)
        p = self.lib.params
        shape = (p.u_size, p.x_size, p.y_size, self.z_size)
        flat = np.ravel_multi_index((self.lib.u, self.X[c], self.Y[d], z), shape)
        counts = np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape)
        return EmpiricalType(shape, counts, self.n)

    def _settle_ties(self, near: np.ndarray, z: np.ndarray) -> Optional[Tuple[int, int]]:
        """
        Break float ties exactly: candidates with the same codebook offsets
        differ only through the product of c^c over joint type counts.
        """
        if self.n > settings.exact_score_max_n:
            return None
        keys = {(self._x_key[self.book_x[c]], self._y_key[self.book_y[d]]) for c, d in near}
        if len(keys) > 1:
            return None
        powers = [math.prod(int(v) ** int(v) for v in self.joint_type(c, d, z).counts.ravel()) for c, d in near]
        top = max(powers)
        winners = [pair for pair, pw in zip(near, powers) if pw == top]
        return tuple(winners[0]) if len(winners) == 1 else None

    def decode(self, z) -> DecoderOutput:
        z = self._z_array(z)
        eta = self.eta
        score = self.scores(z)
        best = float(score.max())
        near = np.argwhere(score >= best - settings.tie_tolerance)
        tie = False
        if len(near) == 1:
            c, d = (int(v) for v in near[0])
        else:
            settled = self._settle_ties([tuple(int(v) for v in pair) for pair in near], z)
            if settled is None:
                c, d = (int(v) for v in near[0])
                tie = True
            else:
                c, d = settled
        candidate = (int(self.book_x[c]), int(self.within_x[c]), int(self.book_y[d]), int(self.within_y[d]))
        V = self.joint_type(c, d, z)
        r1 = self.lib.params.rates1[candidate[0]]
        r2 = self.lib.params.rates2[candidate[2]]
        a = alpha(V)
        stage1 = a - r1 - r2
        if tie:
            return DecoderOutput(COLLISION, None, candidate, stage1, None, True, eta)
        margins = (
            a - r1 - r2 - eta,
            mutual_information(V.probs, (1,), (2, 3), (0,)) - r1 - eta,
            mutual_information(V.probs, (2,), (1, 3), (0,)) - r2 - eta,
        )
        if all(m > 0 for m in margins):
            return DecoderOutput(MESSAGE, candidate, candidate, stage1, margins, False, eta)
        return DecoderOutput(COLLISION, None, candidate, stage1, margins, False, eta)

    def decode_batch(self, zs: Iterable, threads: Optional[int] = None) -> List[DecoderOutput]:
        zs = list(zs)
        workers = min(threads or settings.threads_capped, max(1, len(zs)))
        if workers <= 1:
            return [self.decode(z) for z in zs]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(self.decode, zs))


def _output_size(z, z_size: Optional[int]) -> int:
    if z_size is not None:
        return int(z_size)
    if isinstance(z, Sequence):
        return z.alphabet.size
    raise ValueError("z_size is needed when z is a plain array")


def decode(
    lib: CodebookLibraryPair,
    z,
    cfg: Optional[DecoderConfig] = None,
    z_size: Optional[int] = None,
) -> DecoderOutput:
    """Decode one output sequence; z_size defaults to the alphabet of a Sequence"""
    return Decoder(lib, _output_size(z, z_size), cfg).decode(z)


def decode_batch(
    lib: CodebookLibraryPair,
    zs: Iterable,
    cfg: Optional[DecoderConfig] = None,
    z_size: Optional[int] = None,
    threads: Optional[int] = None,
) -> List[DecoderOutput]:
    zs = list(zs)
    if not zs:
        return []
    return Decoder(lib, _output_size(zs[0], z_size), cfg).decode_batch(zs, threads)


def min_conditional_entropy_pair(lib: CodebookLibraryPair, z, z_size: Optional[int] = None) -> Tuple[int, int, float]:
    """
    Single-codebook decoder picking the pair with the smallest H(X Y | U Z).
    With one codebook per sender this ranks pairs exactly as stage 1 does.
    Returns (a, b, H) for the first minimizer.
    """
    if lib.params.m1 != 1 or lib.params.m2 != 1:
        raise ValueError("the conditional-entropy decoder needs one codebook per sender")
    dec = Decoder(lib, _output_size(z, z_size))
    z = dec._z_array(z)
    n = dec.n
    groups = dec._groups(z)
    h_uz = _composition_entropy(np.array([len(g) for g in groups]), n)
    score = dec.scores(z)
    # scores() is H(UX) + H(UY) + H(UZ) - 2H(U) - H(UXYZ) - R1 - R2
    h_u = _composition_entropy(np.bincount(lib.u), n)
    offset = dec.fx[:, None] + dec.fy[None, :] + h_uz - 2 * h_u
    conditional = (offset - score) - h_uz
    a, b = np.unravel_index(int(np.argmin(conditional)), conditional.shape)
    return int(a), int(b), float(max(0.0, conditional[a, b]))
