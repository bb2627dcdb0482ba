import argparse
import json
import logging
import math
import sys
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from codebooks import (
    CodebookLibraryPair,
    LibraryParams,
    PackingError,
    audit_packing,
    build_library,
    library_from_codewords,
    resample_until_packed,
)
from config import settings
from exponents import (
    LhEvaluator,
    MarginalConstraint,
    PairRateCompositionMap,
    RateToCompositionMap,
    ej0_exponent,
    ej_exponent,
    equivalent_form_ej0,
    exponent_lh,
    grid_oracle_exponent,
    proposition1_check,
    rate_grid,
)
from jscc import CLASSICAL, build_classical, build_type_informed, direct_error, jscc_error
from mac_model import (
    AuxStructure,
    RatePair,
    in_interior,
    joint_law,
    nfold_log_prob,
    nfold_log_prob_direct,
    noiseless_pair,
    pentagon,
    sample_aux_structures,
    sample_outputs,
)
from models import CheckResult, DecoderConfig, ErrorDetail, ErrorResponse, ExperimentConfig, RunReport
from rac_decoder import Decoder
from simulator import (
    EXACT,
    MONTE_CARLO,
    decay_profile,
    decreasing_to_zero,
    exact_error,
    exponent_nondecreasing,
    prepare_library,
    proposition2_witness,
    strictly_decreasing,
)
from storage import report_storage
from typekit import (
    Sequence,
    entropy,
    enumerate_types,
    multi_info_partition_identity_residual,
    type_class_probability,
    type_class_size,
)
from utils import GuardExceeded, derive_rng

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("exponent", "simulate", "decode", "packing", "jscc", "prop2", "selftest")

EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_CONFIG = 2
EXIT_GUARD = 3
EXIT_INTERNAL = 4


class ConfigError(ValueError):
    def __init__(self, message: str, details: Optional[str] = None):
        self.details = details
        super().__init__(message)


class RunContext:
    """Per-run options that are not part of the experiment itself"""

    def __init__(self, threads: Optional[int], verify: bool):
        self.threads = threads
        self.verify = verify
        self.tables: List[Tuple[str, List[str], List[list]]] = []

    def table(self, name: str, header: List[str], rows: List[list]) -> None:
        self.tables.append((name, header, rows))


Outcome = Tuple[Dict, List[CheckResult]]


# ---------------------------------------------------------------------------
# config loading


def load_config(path: Optional[str], subcommand: str, seed: Optional[int]) -> ExperimentConfig:
    data: Dict = {}
    if path is not None:
        try:
            with open(path) as f:
                raw = f.read()
        except OSError as e:
            raise ConfigError(f"Cannot read config {path}", str(e))
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ConfigError("Config is not valid JSON", f"line {e.lineno}, column {e.colno}: {e.msg}")
        if not isinstance(data, dict):
            raise ConfigError("Config must be a JSON object")
    elif subcommand != "selftest":
        raise ConfigError(f"Subcommand {subcommand!r} needs --config")
    if data.setdefault("subcommand", subcommand) != subcommand:
        raise ConfigError(f"Config is for {data['subcommand']!r}, not {subcommand!r}")
    if seed is not None:
        data["seed"] = seed
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        details = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError("Invalid experiment config", details)


# ---------------------------------------------------------------------------
# shared helpers


def _library_params(cfg: ExperimentConfig) -> Callable[[int], LibraryParams]:
    lm = cfg.library

    def params_for_n(n: int) -> LibraryParams:
        params, nu = LibraryParams.from_kernels(
            n, lm.p_u, lm.x_kernels, lm.y_kernels, lm.rates1, lm.rates2, lm.distinct
        )
        logger.info(f"Library compositions at n={n} within nu'={nu:.4f} of the kernels")
        return params

    return params_for_n


def _pair_structure(cfg: ExperimentConfig) -> Tuple[AuxStructure, RatePair]:
    lm = cfg.library
    i, j = cfg.pair
    aux = AuxStructure(np.asarray(lm.p_u), np.asarray(lm.x_kernels[i]), np.asarray(lm.y_kernels[j]))
    return aux, RatePair(lm.rates1[i], lm.rates2[j])


def _finite(value: float) -> Optional[float]:
    return value if value is not None and math.isfinite(value) else None


def verify_objects(cfg: ExperimentConfig) -> List[CheckResult]:
    """Invariant checks on the loaded objects, run before the experiment"""
    checks: List[CheckResult] = []
    rng = derive_rng(cfg.seed, 29)
    if cfg.channel is not None and cfg.aux is not None:
        W, aux = cfg.channel.build(), cfg.aux.build()
        P = joint_law(W, aux.p_u, aux.p_x_given_u, aux.p_y_given_u)
        residual = abs(multi_info_partition_identity_residual(P, [(1,), (2,)], [(3,)], (0,)))
        checks.append(CheckResult(name="verify:partition_identity", passed=residual <= 1e-10, detail=f"{residual:.3e}"))
        n = 8
        x = rng.integers(0, W.in1.size, n)
        y = rng.integers(0, W.in2.size, n)
        z = sample_outputs(W, x, y, rng)
        xs, ys, zs = (Sequence(a, tuple(s.tolist())) for a, s in ((W.in1, x), (W.in2, y), (W.out, z)))
        gap = abs(nfold_log_prob(W, xs, ys, zs) - nfold_log_prob_direct(W, xs, ys, zs))
        checks.append(CheckResult(name="verify:nfold_type_identity", passed=gap <= 1e-9, detail=f"{gap:.3e}"))
    if cfg.library_file is not None:
        try:
            CodebookLibraryPair.from_json(report_storage.read_json(cfg.library_file))
            checks.append(CheckResult(name="verify:library_file", passed=True))
        except ValueError as e:
            checks.append(CheckResult(name="verify:library_file", passed=False, detail=str(e)))
    for name in ("source1", "source2"):
        source = getattr(cfg, name)
        if source is not None:
            spec = source.build()
            total = sum(type_class_probability(t, spec.q) for t in enumerate_types(spec.alphabet, 6))
            checks.append(CheckResult(name=f"verify:{name}_class_weights", passed=abs(total - 1.0) <= 1e-9))
    return checks


# ---------------------------------------------------------------------------
# subcommands


def run_exponent(cfg: ExperimentConfig, ctx: RunContext) -> Outcome:
    W, aux = cfg.channel.build(), cfg.aux.build()
    constraint = MarginalConstraint.from_aux(aux)
    region = pentagon(W, aux.p_u, aux.p_x_given_u, aux.p_y_given_u)
    entries, rows, checks = [], [], []
    for idx, (r1, r2) in enumerate(cfg.rates):
        rp = RatePair(r1, r2)
        res = exponent_lh(rp, W, constraint, cfg.solver)
        interior = in_interior(rp, region)
        entry = {"r1": r1, "r2": r2, "interior": interior, "result": res.to_json()}
        if cfg.grid_check:
            grid = grid_oracle_exponent(rp, W, constraint)
            entry["grid"] = grid
            checks.append(CheckResult(
                name=f"grid_agreement[{idx}]", passed=abs(res.value - grid) <= 0.02,
                detail=f"solver {res.value:.4f} vs grid {grid:.4f}",
            ))
        if cfg.expect == "interior-positive":
            checks.append(CheckResult(name=f"interior_positive[{idx}]", passed=interior and res.value > 1e-3))
        elif cfg.expect == "exterior-zero":
            checks.append(CheckResult(name=f"exterior_zero[{idx}]", passed=not interior and res.value <= 1e-3))
        entries.append(entry)
        rows.append([r1, r2, interior, res.value, res.divergence, res.dependence, res.excess, res.family, res.converged])
    ctx.table("exponent", ["r1", "r2", "interior", "value", "divergence", "dependence", "excess", "family", "converged"], rows)
    return {"pentagon": region.to_json(), "exponents": entries}, checks


def run_simulate(cfg: ExperimentConfig, ctx: RunContext) -> Outcome:
    W = cfg.channel.build()
    aux, rp = _pair_structure(cfg)
    region = pentagon(W, aux.p_u, aux.p_x_given_u, aux.p_y_given_u)
    interior = in_interior(rp, region)
    target = None
    if cfg.target_exponent:
        target = exponent_lh(rp, W, MarginalConstraint.from_aux(aux), cfg.solver).value
    i, j = cfg.pair
    profile = decay_profile(
        _library_params(cfg), cfg.n_list, W, cfg.decoder, i, j, cfg.trials, cfg.seed,
        cfg.error_mode, target, cfg.max_tries, ctx.threads,
    )
    rows = [
        [r.n, rp.r1, rp.r2, interior, r.err_d.mean, r.err_d.std_err, r.err_c.mean, r.err_c.std_err,
         _finite(r.exponent_d), r.err_d.mode, _finite(target)]
        for r in profile.rows
    ]
    ctx.table("simulate", ["n", "r1", "r2", "interior", "err_d", "err_d_se", "err_c", "err_c_se",
                           "exponent_d", "mode", "target"], rows)
    checks = []
    if cfg.expect == "err-d-trend":
        checks.append(CheckResult(name="interior_rates", passed=interior))
        checks.append(CheckResult(
            name="err_d_exponent_nondecreasing",
            passed=not profile.truncated and exponent_nondecreasing(profile.rows),
        ))
    elif cfg.expect == "err-c-trend":
        err_c = [r.err_c.mean for r in profile.rows]
        checks.append(CheckResult(name="exterior_rates", passed=not interior))
        checks.append(CheckResult(name="err_c_decreasing", passed=bool(err_c) and decreasing_to_zero(err_c)))
        checks.append(CheckResult(name="err_c_below_half", passed=bool(err_c) and err_c[-1] < 0.5))
    results = {"pentagon": region.to_json(), "interior": interior, "target": target, "profile": profile.to_json()}
    return results, checks


def _load_library(cfg: ExperimentConfig) -> CodebookLibraryPair:
    if cfg.library_file is not None:
        return CodebookLibraryPair.from_json(report_storage.read_json(cfg.library_file))
    lib, _, _ = prepare_library(_library_params(cfg)(cfg.n_list[0]), cfg.seed, cfg.max_tries)
    return lib


def run_decode(cfg: ExperimentConfig, ctx: RunContext) -> Outcome:
    W = cfg.channel.build()
    lib = _load_library(cfg)
    sent = None
    if cfg.z is not None:
        z = np.asarray(cfg.z, dtype=np.int64)
    else:
        sent = cfg.message or (0, 0, 0, 0)
        i, a, j, b = sent
        if not (0 <= i < len(lib.A) and 0 <= a < len(lib.A[i]) and 0 <= j < len(lib.B) and 0 <= b < len(lib.B[j])):
            raise ValueError(f"message {sent} does not index a codeword pair of the library")
        z = sample_outputs(W, lib.A[i][a], lib.B[j][b], derive_rng(cfg.seed, 19))
    out = Decoder(lib, W.out.size, cfg.decoder).decode(z)
    logger.info(f"Decoded verdict {out.verdict} (tie={out.tie})")
    return {"z": z.tolist(), "sent": list(sent) if sent else None, "output": out.to_json()}, []


def run_packing(cfg: ExperimentConfig, ctx: RunContext) -> Outcome:
    params_for_n = _library_params(cfg)
    entries, checks = [], []
    for n in cfg.n_list:
        lib, report = resample_until_packed(params_for_n(n), cfg.max_tries, cfg.seed)
        name = f"library_n{n}_seed{cfg.seed}.json"
        report_storage.write_json(name, lib.to_json())
        entries.append({"n": n, "attempt": lib.attempt, "library_file": name, "audit": report.to_json()})
        checks.append(CheckResult(name=f"packed[n={n}]", passed=report.passed, detail=f"delta'={report.delta_prime:.6f}"))
    ctx.table("packing", ["n", "attempt", "delta_prime", "log2_s", "passed"],
              [[e["n"], e["attempt"], e["audit"]["delta_prime"], e["audit"]["log2_s"], e["audit"]["passed"]]
               for e in entries])
    return {"libraries": entries}, checks


def _jscc_target(cfg: ExperimentConfig, Q1, Q2, W, aux: AuxStructure, g1, g2) -> float:
    if cfg.jscc_mode == CLASSICAL:
        return ej_exponent(Q1, Q2, W, aux.p_u, g1, g2, cfg.solver, cfg.grid_points).value
    grid1, grid2 = rate_grid(Q1, cfg.grid_points), rate_grid(Q2, cfg.grid_points)
    pair1 = PairRateCompositionMap.from_single(g1, grid1, grid2, 1)
    pair2 = PairRateCompositionMap.from_single(g2, grid1, grid2, 2)
    return ej0_exponent(Q1, Q2, W, aux.p_u, pair1, pair2, cfg.solver, cfg.grid_points).value


def _equivalence_checks(cfg: ExperimentConfig, Q1, Q2, W) -> Outcome:
    """Separation vs joint exponent and the sup form vs its time-sharing witness, on shared samples"""
    evaluator = LhEvaluator(W, cfg.solver)
    budget = cfg.aux_budget or settings.exponent_aux_budget
    structures = sample_aux_structures(W.in1.size, W.in2.size, budget, cfg.seed)
    separation = proposition1_check(Q1, Q2, W, grid_points=cfg.grid_points, evaluator=evaluator, structures=structures)
    form = equivalent_form_ej0(Q1, Q2, W, grid_points=cfg.grid_points, evaluator=evaluator, structures=structures)
    checks = [
        CheckResult(name="separation_not_above_joint", passed=separation.holds,
                    detail=f"es={separation.es:.6f}, ej={separation.ej:.6f}"),
        CheckResult(name="equivalent_form_matches_witness", passed=form.gap <= 0.05, detail=f"gap={form.gap:.4g}"),
    ]
    return {"separation": separation.to_json(), "equivalent_form": form.to_json()}, checks


def run_jscc(cfg: ExperimentConfig, ctx: RunContext) -> Outcome:
    W, aux = cfg.channel.build(), cfg.aux.build()
    Q1, Q2 = cfg.source1.build(), cfg.source2.build()
    g1 = RateToCompositionMap.constant(aux.p_x_given_u)
    g2 = RateToCompositionMap.constant(aux.p_y_given_u)
    target = _jscc_target(cfg, Q1, Q2, W, aux, g1, g2) if cfg.target_exponent else None
    entries, rows, checks = [], [], []
    equivalence = None
    if cfg.equivalence_check:
        equivalence, checks = _equivalence_checks(cfg, Q1, Q2, W)
    for n in cfg.n_list:
        if cfg.jscc_mode == CLASSICAL:
            code = build_classical(Q1, Q2, W, aux.p_u, g1, g2, n, cfg.seed, cfg.max_tries)
        else:
            pair1 = PairRateCompositionMap.from_single(g1, [0.0], [0.0], 1)
            pair2 = PairRateCompositionMap.from_single(g2, [0.0], [0.0], 2)
            code = build_type_informed(Q1, Q2, W, aux.p_u, pair1, pair2, n, cfg.seed, cfg.max_tries)
        mode = EXACT if cfg.error_mode in ("auto", "exact") else MONTE_CARLO
        try:
            report = jscc_error(code, W, mode, cfg.trials, cfg.seed, cfg.decoder, ctx.threads)
        except GuardExceeded as e:
            if cfg.error_mode == "exact":
                raise
            logger.warning(f"Exact JSCC error out of reach at n={n}, using Monte Carlo: {e}")
            report = jscc_error(code, W, MONTE_CARLO, cfg.trials, cfg.seed, cfg.decoder, ctx.threads)
        entry = {"n": n, "code": code.to_json(), "error": report.to_json()}
        if report.total.mode == EXACT and n <= 4:
            direct = direct_error(code, W, cfg.decoder)
            entry["direct"] = direct
            checks.append(CheckResult(
                name=f"decomposition_matches_direct[n={n}]", passed=abs(direct - report.total.mean) <= 1e-12,
                detail=f"{report.total.mean:.6g} vs {direct:.6g}",
            ))
        dominant = ";".join(f"{c.k}:{c.l}={c.contribution:.4g}" for c in report.dominant())
        rows.append([n, report.total.mean, report.total.std_err, report.total.mode, dominant, _finite(target)])
        entries.append(entry)
    ctx.table("jscc", ["n", "total_error", "std_err", "mode", "dominant", "target"], rows)
    if cfg.expect == "error-decreasing":
        checks.append(CheckResult(name="total_error_decreasing", passed=strictly_decreasing([r[1] for r in rows])))
    results = {
        "mode": cfg.jscc_mode, "target": target, "codes": entries,
        "source_entropies": [Q1.entropy, Q2.entropy], "equivalence": equivalence,
    }
    return results, checks


def run_prop2(cfg: ExperimentConfig, ctx: RunContext) -> Outcome:
    W, aux, p = cfg.channel.build(), cfg.aux.build(), cfg.prop2
    witness = proposition2_witness(
        W, aux.p_u, aux.p_x_given_u, np.asarray(p.p_x_given_u_k), aux.p_y_given_u,
        p.r1k, p.r2j, p.eta, cfg.solver,
    )
    checks = [CheckResult(name=name, passed=ok) for name, ok in sorted(witness.checks.items())]
    return {"witness": witness.to_json()}, checks


def _selftest_checks(seed: int) -> List[CheckResult]:
    checks: List[CheckResult] = []
    rng = derive_rng(seed, 31)

    worst = 0.0
    for _ in range(50):
        shape = tuple(int(s) for s in rng.integers(2, 4, size=4))
        P = rng.dirichlet(np.ones(int(np.prod(shape)))).reshape(shape)
        worst = max(worst, abs(multi_info_partition_identity_residual(P, [(0,), (1,)], [(2,), (3,)])))
    checks.append(CheckResult(name="partition_identity", passed=worst <= 1e-10, detail=f"{worst:.3e}"))

    n, sandwich = 10, True
    for t in enumerate_types(3, n):
        h = entropy(t.probs, (0,))
        size = type_class_size(t)
        sandwich &= (n + 1) ** -3 * 2 ** (n * h) <= size * (1 + 1e-12) and size <= 2 ** (n * h) * (1 + 1e-12)
    checks.append(CheckResult(name="type_class_sandwich", passed=sandwich))

    q = [Fraction(89, 100), Fraction(11, 100)]
    total = sum(type_class_probability(t, q) for t in enumerate_types(2, 12))
    checks.append(CheckResult(name="class_weights_sum_to_one", passed=total == 1))

    W = noiseless_pair()
    region = pentagon(W, [1.0], [[0.5, 0.5]], [[0.5, 0.5]])
    ok = all(abs(a - b) <= 1e-9 for a, b in zip((region.r1_max, region.r2_max, region.sum_max), (1.0, 1.0, 2.0)))
    checks.append(CheckResult(name="noiseless_pentagon", passed=ok))

    params = LibraryParams(6, np.array([6]), (np.array([[3, 3]]),), (np.array([[3, 3]]),), (1 / 6,), (1 / 6,))
    lib = library_from_codewords(
        params, [[[1, 1, 1, 0, 0, 0], [0, 1, 1, 1, 0, 0]]], [[[1, 0, 1, 0, 1, 0], [1, 0, 0, 1, 0, 1]]]
    )
    err_d, _ = exact_error(lib, W, 0, 0, DecoderConfig(eta=0.05, eta_schedule="constant"))
    checks.append(CheckResult(name="noiseless_decoder_exact", passed=err_d.mean == 0.0))

    params = LibraryParams(8, np.array([8]), (np.array([[4, 4]]),), (np.array([[4, 4]]),), (0.25,), (0.0,))
    lib = build_library(params, seed)
    lib.A[0][1] = lib.A[0][0]
    checks.append(CheckResult(name="packing_negative_control", passed=not audit_packing(lib, delta_prime=0.0).passed))
    return checks


def run_selftest(cfg: ExperimentConfig, ctx: RunContext) -> Outcome:
    checks = _selftest_checks(cfg.seed)
    return {"checks_run": len(checks)}, checks


HANDLERS: Dict[str, Callable[[ExperimentConfig, RunContext], Outcome]] = {
    "exponent": run_exponent,
    "simulate": run_simulate,
    "decode": run_decode,
    "packing": run_packing,
    "jscc": run_jscc,
    "prop2": run_prop2,
    "selftest": run_selftest,
}


# ---------------------------------------------------------------------------
# entry point


def run(cfg: ExperimentConfig, out_dir: Optional[str] = None, threads: Optional[int] = None, verify: bool = False) -> int:
    """Run one experiment, write its reports and return the exit code"""
    report_storage.initialize(out_dir or settings.out_dir)
    ctx = RunContext(threads or settings.threads_capped, verify)
    checks = verify_objects(cfg) if verify else []
    logger.info(f"Running {cfg.subcommand} with seed {cfg.seed}")
    results, run_checks = HANDLERS[cfg.subcommand](cfg, ctx)
    report = RunReport(
        subcommand=cfg.subcommand,
        seed=cfg.seed,
        config=cfg.model_dump(mode="json"),
        results=results,
        checks=checks + run_checks,
    )
    report_storage.write_json(report_storage.report_name(cfg.subcommand, cfg.seed), report.model_dump())
    for name, header, rows in ctx.tables:
        report_storage.write_csv(report_storage.report_name(name, cfg.seed, "csv"), header, rows)
    failed = [c.name for c in report.checks if not c.passed]
    if failed:
        logger.warning(f"{cfg.subcommand} finished with failed checks: {', '.join(failed)}")
        return EXIT_CHECKS_FAILED
    logger.info(f"{cfg.subcommand} finished, {len(report.checks)} checks passed")
    return EXIT_OK


def _error_exit(code: str, message: str, details: Optional[str], status: int) -> int:
    body = ErrorResponse(error=ErrorDetail(code=code, message=message, details=details))
    print(json.dumps(body.model_dump(), indent=2, sort_keys=True))
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="racxpt",
        description="Random-access coding experiments over two-sender multiple-access channels",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="experiment config (JSON)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--threads", type=int, help="cap on worker threads")
    parser.add_argument("--out", help=f"report directory (default {settings.out_dir})")
    parser.add_argument("--verify", action="store_true", help="run invariant checks on the loaded objects first")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    args = build_parser().parse_args(argv)
    if args.seed is not None and args.seed < 0:
        return _error_exit("CONFIG_ERROR", "Seed must be non-negative", str(args.seed), EXIT_CONFIG)
    if args.threads is not None and args.threads < 1:
        return _error_exit("CONFIG_ERROR", "Threads must be at least 1", str(args.threads), EXIT_CONFIG)
    try:
        cfg = load_config(args.config, args.subcommand, args.seed)
    except ConfigError as e:
        logger.error(f"Config error: {e} ({e.details})")
        return _error_exit("CONFIG_ERROR", str(e), e.details, EXIT_CONFIG)
    try:
        return run(cfg, args.out, args.threads, args.verify)
    except GuardExceeded as e:
        logger.error(f"Guard exceeded: {e}")
        return _error_exit("GUARD_EXCEEDED", "A size guard stopped the run", str(e), EXIT_GUARD)
    except PackingError as e:
        logger.error(f"Packing failed: {e}")
        return _error_exit("PACKING_FAILED", "No packed library within the allowed tries", str(e), EXIT_GUARD)
    except Exception as e:
        logger.error(f"Unhandled exception: {e}", exc_info=True)
        return _error_exit("INTERNAL_ERROR", "An unexpected error occurred", str(e), EXIT_INTERNAL)


if __name__ == "__main__":
    sys.exit(main())
