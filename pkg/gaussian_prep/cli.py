import argparse
import logging
import os
import sys
import traceback
from dataclasses import replace
from typing import Any, Dict, List, Optional

from gaussian_prep.analysis import SteadyStateAnalyzer
from gaussian_prep.designer import DesignRequest, StateDesigner, feedback_gain
from gaussian_prep.exceptions import ConfigParse, GaussianPrepError, NotDetectable
from gaussian_prep.logger import get_logger
from gaussian_prep.riccati import RiccatiSolver
from gaussian_prep.scenario import (
    Scenario,
    ScenarioWriter,
    certificate_document,
    ensemble_document,
    load_scenario,
    matrix_document,
    spec_document,
    steady_state_document,
)
from gaussian_prep.settings import load_settings
from gaussian_prep.simulator import FeedbackPolicy, MomentSimulator
from gaussian_prep.system_model import derive_matrices
from gaussian_prep.types import Settings
from gaussian_prep.verification import VerificationSuite, summarize

DEFAULT_SETTINGS_PATH = "settings.json"
DEFAULT_OUT_DIR = "output"


class ScenarioRunner:
    def __init__(self, settings: Settings, out_dir: str = DEFAULT_OUT_DIR) -> None:
        self.settings: Settings = settings
        self.logger: logging.Logger = get_logger(self.settings)
        self.out_dir: str = out_dir
        self.logger.debug("Scenario runner initializing")

        try:
            self.solver: RiccatiSolver = RiccatiSolver(self.settings)
            self.analyzer: SteadyStateAnalyzer = SteadyStateAnalyzer(self.settings, self.solver)
            self.designer: StateDesigner = StateDesigner(self.settings, self.analyzer)
            self.simulator: MomentSimulator = MomentSimulator(self.settings, self.solver)
        except Exception as e:
            self.logger.error(f"Error initializing components: {e}")
            self.logger.debug(traceback.format_exc())
            raise

    def _writer(self, scenario: Scenario) -> ScenarioWriter:
        return ScenarioWriter(os.path.join(self.out_dir, scenario.name), self.settings)

    def cmd_analyze(self, scenario: Scenario) -> Dict[str, Any]:
        if scenario.system is None:
            raise ConfigParse("analyze needs a scenario with a 'system' block")
        spec = scenario.system
        self.logger.info(f"Analyzing scenario {scenario.name}")

        report = self.analyzer.steady_state_verdict(spec)
        d = derive_matrices(spec)
        document: Dict[str, Any] = {
            "name": scenario.name,
            "command": "analyze",
            "system": spec_document(spec),
            "steady_state": steady_state_document(report),
        }

        if scenario.eta_sweep:
            sweep = []
            for eta in scenario.eta_sweep:
                swept = self.analyzer.steady_state_verdict(spec.with_eta(eta))
                certs = self.analyzer.imperfect_detection_certificates(d, eta)
                sweep.append({
                    "eta": eta,
                    "V": matrix_document(swept.V),
                    "purity": swept.purity.purity,
                    "heisenberg_margin": swept.heisenberg.margin,
                    "ordering_margin": swept.ordering_margin,
                    "real_axis_certificate": certificate_document(certs.q_v),
                    "complex_axis_certificate": certificate_document(certs.q_y),
                })
            document["eta_sweep"] = sweep

        if "report" in scenario.outputs:
            self._writer(scenario).write_json("report.json", document)
        return document

    def cmd_design(self, scenario: Scenario) -> Dict[str, Any]:
        if scenario.design is None:
            raise ConfigParse("design needs a scenario with a 'design' block")
        target = scenario.design
        self.logger.info(f"Designing scenario {scenario.name}")

        request = DesignRequest(target.V_s, target.R, target.Im)
        result = self.designer.synthesize(request)
        remark = self.designer.remark4_check(request)
        document: Dict[str, Any] = {
            "name": scenario.name,
            "command": "design",
            "system": spec_document(result.spec),
            "feedback": {
                "B": matrix_document(result.B_chosen),
                "F": matrix_document(result.feedback_F),
                "K": matrix_document(result.K),
            },
            "rank_margin": result.rank_margin,
            "verification": {
                "target": matrix_document(request.V_s),
                "V": matrix_document(result.verification.V),
                "roundtrip_error": result.roundtrip_error,
                "substitution_residual": result.substitution_residual,
                "rank_condition_matches_detectability": remark.agree,
                "steady_state": steady_state_document(result.verification),
            },
        }

        writer = self._writer(scenario)
        writer.write_json("design.json", document)
        writer.emit_system_spec("system.json", f"{scenario.name}-system", result.spec)
        return document

    def cmd_simulate(self, scenario: Scenario) -> Dict[str, Any]:
        if scenario.system is None or scenario.sim is None:
            raise ConfigParse("simulate needs a scenario with 'system' and 'sim' blocks")
        config = scenario.sim.for_system(scenario.system)
        assert config.eta is not None
        spec = scenario.system.with_eta(config.eta)
        self.logger.info(f"Simulating scenario {scenario.name} with seed {config.seed}")

        steady = None
        if scenario.auto_feedback:
            steady = self.analyzer.steady_state_verdict(spec)
            gain = feedback_gain(steady.V, derive_matrices(spec))
            config = replace(config, feedback=FeedbackPolicy.markovian(gain.B, gain.F))

        trajectories, stats = self.simulator.simulate_conditional(spec, config)
        document: Dict[str, Any] = {
            "name": scenario.name,
            "command": "simulate",
            "system": spec_document(spec),
            "config": config.metadata(),
            "ensemble": ensemble_document(stats),
        }

        if steady is not None:
            closed = self.simulator.simulate_closed_loop_mean(spec, steady.V, config)
            document["closed_loop_final_mean"] = closed.final_mean.tolist()

        writer = self._writer(scenario)
        if "covariance_series" in scenario.outputs:
            unconditional = self.simulator.simulate_unconditional(spec, config)
            writer.write_covariance_series("vc_series.csv", stats.times, stats.Vc)
            writer.write_covariance_series("vunc_series.csv", unconditional.times, unconditional.cov)
            writer.write_covariance_series("sigma_series.csv", stats.times, stats.Sigmas)
        if "trajectories" in scenario.outputs and trajectories:
            writer.write_trajectories("trajectories.csv", trajectories)
        writer.write_json("summary.json", document)
        return document

    def cmd_verify(self, quick: bool = False) -> Dict[str, Any]:
        suite = VerificationSuite(self.settings, quick=quick)
        summary = summarize(suite.run())
        ScenarioWriter(self.out_dir, self.settings).write_json("verify.json", summary)
        return summary


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=DEFAULT_OUT_DIR, help="Output directory")
    common.add_argument("--settings", default=DEFAULT_SETTINGS_PATH, help="Settings file")
    common.add_argument("--strict", action="store_true", help="Treat an ill-conditioned subspace as fatal")

    scenario_args = argparse.ArgumentParser(add_help=False)
    scenario_args.add_argument("--scenario", required=True, help="Scenario JSON file")
    scenario_args.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
    scenario_args.add_argument("--eta", type=float, default=None, help="Override the detection efficiency")

    parser = argparse.ArgumentParser(prog="gaussian-prep",
                                     description="Steady states of continuously measured Gaussian systems")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common, scenario_args], help="Steady-state analysis of a system")
    sub.add_parser("design", parents=[common, scenario_args], help="Synthesize a system for a pure target state")
    sub.add_parser("simulate", parents=[common, scenario_args], help="Monte Carlo simulation of the moments")
    verify = sub.add_parser("verify", parents=[common], help="Run the acceptance suite")
    verify.add_argument("--quick", action="store_true", help="Reduced sample counts")
    return parser


def _print_summary(command: str, document: Dict[str, Any]) -> None:
    if command == "analyze":
        steady = document["steady_state"]
        print(f"purity: {steady['purity']:.12g}")
        print(f"heisenberg margin: {steady['heisenberg']['margin']:.6g}")
        print(f"closed-loop stable: {steady['closed_loop_stable']}")
    elif command == "design":
        verification = document["verification"]
        print(f"rank margin: {document['rank_margin']:.6g}")
        print(f"round trip error: {verification['roundtrip_error']:.3e}")
    elif command == "simulate":
        print(f"identity residual: {document['ensemble']['identity_residual']:.6g}")
    elif command == "verify":
        for criterion in document["criteria"]:
            margin = criterion["margin"]
            margin_text = "n/a" if margin is None else f"{margin:.3e}"
            status = "PASS" if criterion["passed"] else "FAIL"
            print(f"{status} {criterion['name']}: margin {margin_text} ({criterion['seconds']:.2f}s) "
                  f"{criterion['detail']}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    try:
        settings = load_settings(args.settings)
        if args.strict:
            settings["strict"] = True
        runner = ScenarioRunner(settings, args.out)

        if args.command == "verify":
            document = runner.cmd_verify(quick=args.quick)
            _print_summary("verify", document)
            return 0 if document["passed"] else 1

        scenario = load_scenario(args.scenario).with_overrides(seed=args.seed, eta=args.eta)
        handler = {"analyze": runner.cmd_analyze, "design": runner.cmd_design, "simulate": runner.cmd_simulate}
        document = handler[args.command](scenario)
        _print_summary(args.command, document)
        return 0
    except NotDetectable as e:
        print(f"NotDetectable: {e}", file=sys.stderr)
        if e.certificate is not None and e.certificate.witness is not None:
            print(f"witness eigenvalue: {e.certificate.witness_eigenvalue}", file=sys.stderr)
        return e.exit_code
    except GaussianPrepError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logging.getLogger("gaussian_prep").debug(traceback.format_exc())
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
