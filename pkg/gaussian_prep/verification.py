"""Acceptance suite run by the ``verify`` command.

Every criterion returns a CriterionResult with the worst observed margin;
``quick`` mode shrinks the random sample counts and the Monte Carlo ensemble.
"""

import logging
import time
import traceback
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from gaussian_prep.analysis import (
    SteadyStateAnalyzer,
    heisenberg_certificate,
    lemma4_equivalence_check,
    unconditional_pure_feasibility,
)
from gaussian_prep.designer import DesignRequest, StateDesigner
from gaussian_prep.exceptions import GaussianPrepError
from gaussian_prep.logger import get_logger
from gaussian_prep.riccati import RiccatiProblem, RiccatiSolver, newton_kleinman
from gaussian_prep.sampling import (
    example1_spec,
    random_detectable_spec,
    random_pure_covariance,
    random_riccati_problem,
    random_system_spec,
)
from gaussian_prep.simulator import EnsembleStats, MomentSimulator, SimConfig
from gaussian_prep.system_model import DerivedMatrices, GaussianMoments, SystemSpec, derive_matrices, purity
from gaussian_prep.types import Settings

DEFAULT_ETAS = (0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class CriterionResult:
    name: str
    passed: bool
    margin: float
    detail: str
    seconds: float


class VerificationSuite:
    def __init__(
        self,
        settings: Optional[Settings] = None,
        quick: bool = False,
        seed: int = 20240601,
        derive: Callable[[SystemSpec], DerivedMatrices] = derive_matrices,
        etas: Sequence[float] = DEFAULT_ETAS,
    ) -> None:
        self.settings: Settings = settings or {}
        self.logger: logging.Logger = get_logger(self.settings)
        self.quick = quick
        self.seed = seed
        self.derive = derive
        self.etas = tuple(etas)
        self.solver = RiccatiSolver(self.settings)
        self.analyzer = SteadyStateAnalyzer(self.settings, self.solver)
        self.designer = StateDesigner(self.settings, self.analyzer)
        self.simulator = MomentSimulator(self.settings, self.solver)
        self._ensembles: Dict[int, EnsembleStats] = {}

        self.criteria: List[Tuple[str, Callable[[], Tuple[bool, float, str]]]] = [
            ("example1_golden_values", self.example1_golden_values),
            ("unconditional_infeasibility", self.unconditional_infeasibility),
            ("riccati_property_suite", self.riccati_property_suite),
            ("steady_state_purity", self.steady_state_purity),
            ("design_round_trip", self.design_round_trip),
            ("monte_carlo_identity", self.monte_carlo_identity),
            ("efficiency_sweep", self.efficiency_sweep),
            ("axis_mode_equivalence", self.axis_mode_equivalence),
            ("riccati_ode_convergence", self.riccati_ode_convergence),
            ("determinism", self.determinism),
        ]

    def _count(self, full: int, quick: int) -> int:
        return quick if self.quick else full

    def _rng(self, offset: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, offset])

    def run(self, names: Optional[Sequence[str]] = None) -> List[CriterionResult]:
        results = []
        for name, check in self.criteria:
            if names and name not in names:
                continue
            self.logger.info(f"Running criterion {name}")
            start = time.perf_counter()
            try:
                passed, margin, detail = check()
            except (GaussianPrepError, np.linalg.LinAlgError) as e:
                self.logger.error(f"Criterion {name} raised {type(e).__name__}: {e}")
                self.logger.debug(traceback.format_exc())
                passed, margin, detail = False, float("nan"), f"{type(e).__name__}: {e}"
            result = CriterionResult(name, bool(passed), float(margin), detail, time.perf_counter() - start)
            level = logging.INFO if result.passed else logging.ERROR
            self.logger.log(level, f"{name}: {'PASS' if result.passed else 'FAIL'} "
                                   f"(margin {result.margin:.3e}, {result.seconds:.2f}s) {detail}")
            results.append(result)
        return results

    def example1_golden_values(self) -> Tuple[bool, float, str]:
        d = self.derive(example1_spec())
        errors = {
            "C": float(np.max(np.abs(d.C - np.array([[2.0, 0.0]])))),
            "A_minus_MC": float(np.max(np.abs(d.A_minus_MC - np.diag([1.0, -1.0])))),
        }
        limits = {"C": 1e-12, "A_minus_MC": 1e-12, "V": 1e-8, "closed_loop": 1e-8, "purity": 1e-10}
        try:
            V = np.real(self.solver.solve_are(RiccatiProblem.for_covariance(d)).X)
            closed = np.sort(scipy.linalg.eigvals(d.A_minus_MC - V @ d.C.T @ d.C).real)
            errors["V"] = float(np.max(np.abs(V - 0.5 * np.eye(2))))
            errors["closed_loop"] = float(np.max(np.abs(closed + 1.0)))
            errors["purity"] = abs(purity(GaussianMoments(None, V)) - 1.0)  # type: ignore[arg-type]
        except GaussianPrepError as e:
            return False, float("inf"), f"solver failed on the derived matrices: {type(e).__name__}: {e}"
        failing = [k for k, v in errors.items() if v > limits[k]]
        detail = "mismatch in " + ", ".join(f"{k}={errors[k]:.3e}" for k in failing) if failing else "all values match"
        return not failing, max(errors.values()), detail

    def unconditional_infeasibility(self) -> Tuple[bool, float, str]:
        report = unconditional_pure_feasibility(example1_spec().G)
        detail = (f"solution space of dimension {report.null_dimension}, "
                  f"best smallest eigenvalue {report.best_min_eigenvalue:.3e}")
        return not report.feasible, report.best_min_eigenvalue, detail

    def riccati_property_suite(self) -> Tuple[bool, float, str]:
        rng = self._rng(3)
        count = self._count(500, 50)
        worst = 0.0
        failures = 0
        for i in range(count):
            n = int(rng.integers(1, 7))
            stable = i % 2 == 0
            prob = random_riccati_problem(n, rng, stable=stable)
            try:
                sol = self.solver.solve_are(prob)
            except GaussianPrepError as e:
                self.logger.warning(f"Problem {i} (n={n}) failed: {type(e).__name__}: {e}")
                failures += 1
                continue
            X = sol.X
            checks = [
                sol.residual <= prob.residual_bound,
                np.linalg.norm(X - X.conj().T) <= 1e-10 * max(1.0, float(np.linalg.norm(X))),
                np.max(sol.closed_loop_spectrum.real) < -1e-10,
                sol.min_eigenvalue >= -1e-8,
            ]
            if n <= 3 and stable:
                oracle, _ = newton_kleinman(prob)
                checks.append(np.linalg.norm(oracle - X) <= 1e-7 * max(1.0, float(np.linalg.norm(X))))
            worst = max(worst, sol.residual / prob.residual_bound)
            failures += not all(checks)
        return failures == 0, worst, f"{failures} of {count} problems failed, worst residual ratio {worst:.3e}"

    def steady_state_purity(self) -> Tuple[bool, float, str]:
        count = self._count(100, 10)
        worst = 0.0
        failures = 0
        for m in (1, 2, 3):
            rng = self._rng(40 + m)
            for _ in range(count):
                d = derive_matrices(random_detectable_spec(m, rng))
                try:
                    V = np.real(self.solver.solve_are(RiccatiProblem.for_covariance(d)).X)
                except GaussianPrepError as e:
                    self.logger.warning(f"Steady state failed for m={m}: {type(e).__name__}: {e}")
                    failures += 1
                    continue
                V = 0.5 * (V + V.T)
                heis = heisenberg_certificate(V, d.J).margin
                identity = float(np.linalg.norm(d.J @ V @ d.J @ V + 0.25 * np.eye(2 * m)))
                bound = 1e-6 * max(1.0, float(np.linalg.norm(V)) ** 2)
                worst = max(worst, identity / bound)
                failures += not (heis >= -1e-8 and identity <= bound)
        return failures == 0, worst, f"{failures} of {3 * count} steady states not pure"

    def design_round_trip(self) -> Tuple[bool, float, str]:
        count = self._count(100, 10)
        worst = 0.0
        failures = 0
        for m in (1, 2, 3):
            rng = self._rng(50 + m)
            for _ in range(count):
                V_s = random_pure_covariance(m, rng)
                Im = rng.uniform(-1.0, 1.0, size=(m, 2 * m))
                try:
                    result = self.designer.synthesize(DesignRequest(V_s, None, Im))
                    worst = max(worst, result.roundtrip_error)
                except GaussianPrepError as e:
                    self.logger.warning(f"Round trip failed for m={m}: {type(e).__name__}: {e}")
                    failures += 1
        return failures == 0, worst, f"{failures} of {3 * count} targets not recovered, worst error {worst:.3e}"

    def _ensemble_config(self, seed: int) -> SimConfig:
        return SimConfig(dt=1e-3, T=self._count(10, 3), n_traj=self._count(10000, 2000), seed=seed, sample_every=100)

    def _ensemble(self, seed: int) -> EnsembleStats:
        if seed not in self._ensembles:
            _, stats = self.simulator.simulate_conditional(example1_spec(), self._ensemble_config(seed))
            self._ensembles[seed] = stats
        return self._ensembles[seed]

    def monte_carlo_identity(self) -> Tuple[bool, float, str]:
        stats = self._ensemble(self.seed)
        residual = stats.identity_residual
        return residual <= 0.05, residual, f"relative residual of Vc + Sigma - Vunc at T: {residual:.3e}"

    def efficiency_sweep(self) -> Tuple[bool, float, str]:
        parts = []
        failures = 0
        worst = float("inf")
        for eta in self.etas:
            report = self.analyzer.steady_state_verdict(example1_spec(eta=eta))
            p = report.purity.purity
            ordering = report.ordering_margin if report.ordering_margin is not None else float("-inf")
            ok = (report.heisenberg.verdict and p <= 1.0 + 1e-8 and ordering >= -1e-8
                  and (eta != 1.0 or abs(p - 1.0) <= 1e-6))
            failures += not ok
            worst = min(worst, ordering)
            parts.append(f"eta={eta}: purity={p:.6f} ordering={ordering:.3e}")
        return failures == 0, worst, "; ".join(parts)

    def axis_mode_equivalence(self) -> Tuple[bool, float, str]:
        rng = self._rng(8)
        count = self._count(200, 40)
        disagreements = 0
        for i in range(count):
            report = lemma4_equivalence_check(derive_matrices(random_system_spec(1 + i % 3, rng)))
            disagreements += not report.agree
        return disagreements == 0, float(disagreements), f"{disagreements} of {count} instances disagree"

    def riccati_ode_convergence(self) -> Tuple[bool, float, str]:
        d = derive_matrices(example1_spec())
        target = 0.5 * np.eye(2)
        errors = []
        for V0 in (5.0 * np.eye(2), target, np.diag([3.0, 0.3])):
            series = self.solver.integrate_riccati_ode(d, 1.0, V0, 20.0, 0.01)
            errors.append(float(np.linalg.norm(series.final - target)))
        stationary = self.solver.integrate_riccati_ode(d, 1.0, target, 1.0, 0.01)
        drift = float(np.max(np.linalg.norm(stationary.covs - target, axis=(1, 2))))
        ok = max(errors) <= 1e-6 and drift <= 1e-9
        return ok, max(errors), f"final errors {[f'{e:.2e}' for e in errors]}, stationary drift {drift:.2e}"

    def determinism(self) -> Tuple[bool, float, str]:
        first = self._ensemble(self.seed)
        _, repeat = self.simulator.simulate_conditional(example1_spec(), self._ensemble_config(self.seed))
        identical = (np.array_equal(first.Sigmas, repeat.Sigmas) and np.array_equal(first.means, repeat.means))

        other = self._ensemble(self.seed + 1)
        se = np.sqrt(first.sigma_standard_error()[-1] ** 2 + other.sigma_standard_error()[-1] ** 2)
        deviation = np.abs(first.Sigma - other.Sigma)
        ratio = float(np.max(deviation / np.maximum(se, 1e-300))) if np.any(deviation > 0) else 0.0
        consistent = bool(np.all(deviation <= 3.0 * se + 1e-12))
        detail = f"bit-identical={identical}, largest deviation {ratio:.2f} standard errors"
        return identical and consistent, ratio, detail


def summarize(results: List[CriterionResult]) -> Dict[str, object]:
    return {
        "passed": all(r.passed for r in results),
        "criteria": [
            {"name": r.name, "passed": r.passed, "margin": r.margin if np.isfinite(r.margin) else None,
             "detail": r.detail, "seconds": r.seconds}
            for r in results
        ],
    }
