from gaussian_prep.analysis import SteadyStateAnalyzer, SteadyStateReport
from gaussian_prep.cli import ScenarioRunner
from gaussian_prep.designer import DesignRequest, DesignResult, StateDesigner
from gaussian_prep.logger import get_logger, LoggerSetup
from gaussian_prep.riccati import RiccatiProblem, RiccatiSolution, RiccatiSolver
from gaussian_prep.simulator import EnsembleStats, MomentSimulator, SimConfig
from gaussian_prep.system_model import DerivedMatrices, GaussianMoments, SystemSpec, derive_matrices
from gaussian_prep.types import Settings

__all__ = [
    'SteadyStateAnalyzer',
    'SteadyStateReport',
    'ScenarioRunner',
    'DesignRequest',
    'DesignResult',
    'StateDesigner',
    'get_logger',
    'LoggerSetup',
    'RiccatiProblem',
    'RiccatiSolution',
    'RiccatiSolver',
    'EnsembleStats',
    'MomentSimulator',
    'SimConfig',
    'DerivedMatrices',
    'GaussianMoments',
    'SystemSpec',
    'derive_matrices',
    'Settings'
]
