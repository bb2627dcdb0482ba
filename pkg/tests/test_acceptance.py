import json
from pathlib import Path

import numpy as np
from pytest import mark

from cli import EXIT_OK, main
from exponents import MarginalConstraint, exponent_lh, grid_oracle_exponent
from mac_model import (
    AuxStructure,
    MacChannel,
    RatePair,
    in_interior,
    nfold_log_prob,
    nfold_log_prob_direct,
    pentagon,
    sample_outputs,
)
from models import SolverConfig
from typekit import Alphabet, Sequence, entropy, enumerate_types, multi_info_partition_identity_residual, type_class_size
from utils import derive_rng

pytestmark = mark.slow

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = sorted(p.name for p in (ROOT / "configs").glob("*.json") if p.name != "library_decoder_exactness.json")
UNIFORM = AuxStructure(np.ones(1), np.full((1, 2), 0.5), np.full((1, 2), 0.5))


def random_binary_channel(rng) -> MacChannel:
    kernel = rng.dirichlet(np.full(2, 0.4), size=(2, 2))
    return MacChannel(Alphabet(2), Alphabet(2), Alphabet(2), kernel)


def test_partition_identity_on_random_joints():
    rng = derive_rng(0, 101)
    worst = 0.0
    for _ in range(1000):
        ndim = int(rng.integers(2, 5))
        shape = tuple(int(s) for s in rng.integers(2, 4, size=ndim))
        P = rng.dirichlet(np.ones(int(np.prod(shape)))).reshape(shape)
        split = int(rng.integers(1, ndim))
        axes = [(a,) for a in rng.permutation(ndim).tolist()]
        worst = max(worst, abs(multi_info_partition_identity_residual(P, axes[:split], axes[split:])))
    assert worst <= 1e-10


@mark.parametrize("size", [2, 3])
def test_type_class_sandwich_and_nfold_identity(size):
    rng = derive_rng(0, 102, size)
    for n in range(1, 11):
        for t in enumerate_types(size, n):
            h = entropy(t.probs, (0,))
            count = type_class_size(t)
            assert (n + 1) ** -size * 2 ** (n * h) <= count * (1 + 1e-12)
            assert count <= 2 ** (n * h) * (1 + 1e-12)
        kernel = rng.dirichlet(np.ones(size), size=(size, size))
        W = MacChannel(Alphabet(size), Alphabet(size), Alphabet(size), kernel)
        for _ in range(5):
            x = rng.integers(0, size, n)
            y = rng.integers(0, size, n)
            z = sample_outputs(W, x, y, rng)
            xs, ys, zs = (Sequence(Alphabet(size), tuple(s.tolist())) for s in (x, y, z))
            assert abs(nfold_log_prob(W, xs, ys, zs) - nfold_log_prob_direct(W, xs, ys, zs)) <= 1e-9


def test_solver_matches_grid_oracle():
    rng = derive_rng(0, 103)
    constraint = MarginalConstraint.from_aux(UNIFORM)
    for _ in range(10):
        W = random_binary_channel(rng)
        rp = RatePair(*(float(r) for r in rng.uniform(0.0, 0.3, size=2)))
        solver = exponent_lh(rp, W, constraint, SolverConfig(restarts=10)).value
        assert abs(solver - grid_oracle_exponent(rp, W, constraint)) <= 0.02


def test_exponent_positive_exactly_inside_pentagon():
    rng = derive_rng(0, 104)
    constraint = MarginalConstraint.from_aux(UNIFORM)
    config = SolverConfig(restarts=5)
    checked = 0
    while checked < 50:
        W = random_binary_channel(rng)
        region = pentagon(W, UNIFORM.p_u, UNIFORM.p_x_given_u, UNIFORM.p_y_given_u)
        if min(region.r1_max, region.r2_max) < 0.15:
            continue
        f1, f2 = rng.uniform(0.1, 0.4, size=2)
        inside = RatePair(f1 * region.r1_max, f2 * region.r2_max)
        outside = RatePair(region.r1_max + rng.uniform(0.01, 0.2), f2 * region.r2_max)
        assert in_interior(inside, region, margin=0.01)
        assert not in_interior(outside, region, margin=0.0)
        assert exponent_lh(inside, W, constraint, config).value > 1e-3
        assert exponent_lh(outside, W, constraint, config).value <= 1e-3
        checked += 2


@mark.parametrize("name", CONFIGS)
def test_bundled_config_runs_clean(name, tmp_path, monkeypatch):
    monkeypatch.chdir(ROOT)
    path = ROOT / "configs" / name
    subcommand = json.loads(path.read_text())["subcommand"]
    assert main([subcommand, "--config", str(path), "--out", str(tmp_path), "--verify"]) == EXIT_OK
