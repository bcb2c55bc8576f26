from typing import TypedDict, Optional, Union, List

Matrix = List[List[float]]


class Settings(TypedDict, total=False):
    log_type: str
    log_level: str
    log_file: str
    log_max_size: int
    log_backup_count: int
    log_format: str
    tol_axis: float
    tol_rank: float
    cond_max: float
    strict: bool
    refine_iterations: int
    ode_rtol: float
    ode_atol: float
    integrator: str
    block_size: int
    workers: int
    memory_threshold_mb: int
    record_trajectories: int


class SystemDocument(TypedDict, total=False):
    m: int
    G: Matrix
    Lambda_re: Matrix
    Lambda_im: Matrix
    K_re: Matrix
    K_im: Matrix
    eta: float


class DesignDocument(TypedDict, total=False):
    V_s: Matrix
    R: Optional[Matrix]
    Im: Optional[Matrix]


class FeedbackDocument(TypedDict):
    B: Matrix
    F: Matrix


class SimDocument(TypedDict, total=False):
    dt: float
    T: float
    n_traj: int
    seed: int
    eta: float
    feedback: Union[str, FeedbackDocument]
    gain_mode: str
    scheme: str
    integrator: str
    sample_every: int
    mean0: List[float]
    cov0: Matrix


class ScenarioDocument(TypedDict, total=False):
    name: str
    system: SystemDocument
    design: DesignDocument
    sim: SimDocument
    eta_sweep: List[float]
    outputs: List[str]
