from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Runtime Configuration
    log_level: str = "INFO"
    threads: int = 1
    seed: int = 0
    out_dir: str = "reports"

    # Numerical Tolerances
    mass_tolerance: float = 1e-9
    marginal_tolerance: float = 1e-7
    tie_tolerance: float = 1e-12
    rate_margin: float = 0.0

    # Solver Configuration
    solver_restarts: int = 20
    solver_tol: float = 1e-6
    solver_max_iter: int = 5000
    rate_grid_points: int = 64
    aux_budget: int = 2000
    exponent_aux_budget: int = 16
    max_aux_size: int = 4
    bisection_iterations: int = 60
    witness_blocks: int = 64

    # Size Guards
    exact_guard: float = 1e8
    audit_guard: float = 1e7
    codebook_pair_guard: float = 1e4
    guard_override: bool = False

    # Simulation Configuration
    mc_chunk_size: int = 256
    decay_trials: int = 10000
    distinct_codewords: bool = True
    exact_score_max_n: int = 32

    class Config:
        env_file = ".env"
        env_prefix = "RACXPT_"
        case_sensitive = False

    @property
    def guards_enabled(self) -> bool:
        return not self.guard_override

    @property
    def threads_capped(self) -> int:
        return max(1, self.threads)


settings = Settings()
