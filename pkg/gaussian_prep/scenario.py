"""Scenario documents, report serialization and atomic file output."""

import json
import logging
import math
import os
import tempfile
import traceback
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, TextIO

import numpy as np

from gaussian_prep.exceptions import ConfigParse
from gaussian_prep.logger import get_logger
from gaussian_prep.pbh import Certificate
from gaussian_prep.simulator import EnsembleStats, FeedbackPolicy, SimConfig, Trajectory
from gaussian_prep.system_model import SystemSpec
from gaussian_prep.types import DesignDocument, ScenarioDocument, Settings, SimDocument, SystemDocument

OUTPUT_KINDS = ("report", "trajectories", "covariance_series")


@dataclass(frozen=True, eq=False)
class DesignTarget:
    V_s: np.ndarray
    R: Optional[np.ndarray] = None
    Im: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    system: Optional[SystemSpec] = None
    design: Optional[DesignTarget] = None
    sim: Optional[SimConfig] = None
    auto_feedback: bool = False
    eta_sweep: List[float] = field(default_factory=list)
    outputs: List[str] = field(default_factory=lambda: ["report"])

    def with_overrides(self, seed: Optional[int] = None, eta: Optional[float] = None) -> "Scenario":
        system = self.system
        sim = self.sim
        if eta is not None:
            if system is not None:
                system = system.with_eta(eta)
            if sim is not None:
                sim = replace(sim, eta=eta)
        if seed is not None and sim is not None:
            sim = replace(sim, seed=seed)
        return replace(self, system=system, sim=sim)


def _matrix(doc: Dict[str, Any], key: str, required: bool = True) -> Optional[np.ndarray]:
    if key not in doc or doc[key] is None:
        if required:
            raise ConfigParse(f"missing key {key!r}")
        return None
    try:
        return np.atleast_2d(np.asarray(doc[key], dtype=float))
    except (TypeError, ValueError) as e:
        raise ConfigParse(f"{key!r} is not a numeric matrix: {e}") from e


def spec_from_document(doc: SystemDocument) -> SystemSpec:
    if not isinstance(doc, dict) or "m" not in doc:
        raise ConfigParse("system block needs an integer 'm'")
    raw = dict(doc)
    G = _matrix(raw, "G")
    Lam_re = _matrix(raw, "Lambda_re")
    Lam_im = _matrix(raw, "Lambda_im", False)
    Lam = Lam_re if Lam_im is None else Lam_re + 1j * Lam_im
    K_re = _matrix(raw, "K_re", False)
    K_im = _matrix(raw, "K_im", False)
    K = None
    if K_re is not None or K_im is not None:
        K = (0.0 if K_re is None else K_re) + 1j * (0.0 if K_im is None else K_im)
    try:
        m = int(raw["m"])
        eta = float(raw.get("eta", 1.0))
    except (TypeError, ValueError) as e:
        raise ConfigParse(f"invalid system block: {e}") from e
    return SystemSpec(m, G, Lam, K, eta)


def design_from_document(doc: DesignDocument) -> DesignTarget:
    if not isinstance(doc, dict):
        raise ConfigParse("design block must be an object")
    raw = dict(doc)
    return DesignTarget(V_s=_matrix(raw, "V_s"), R=_matrix(raw, "R", False), Im=_matrix(raw, "Im", False))


def sim_from_document(doc: SimDocument) -> SimConfig:
    if not isinstance(doc, dict):
        raise ConfigParse("sim block must be an object")
    raw = dict(doc)
    feedback = raw.get("feedback", "none")
    if isinstance(feedback, dict):
        policy = FeedbackPolicy.markovian(_matrix(feedback, "B"), _matrix(feedback, "F"))
    elif feedback in ("none", "markovian"):
        policy = FeedbackPolicy.none()
    else:
        raise ConfigParse(f"unknown feedback setting {feedback!r}")
    try:
        return SimConfig(
            dt=float(raw["dt"]),
            T=float(raw["T"]),
            n_traj=int(raw.get("n_traj", 1)),
            seed=int(raw.get("seed", 0)),
            eta=None if raw.get("eta") is None else float(raw["eta"]),
            feedback=policy,
            gain_mode=raw.get("gain_mode", "fixed"),
            scheme=raw.get("scheme", "euler_maruyama"),
            integrator=raw.get("integrator"),
            sample_every=int(raw.get("sample_every", 1)),
            mean0=None if raw.get("mean0") is None else np.asarray(raw["mean0"], dtype=float),
            cov0=_matrix(raw, "cov0", False),
        )
    except KeyError as e:
        raise ConfigParse(f"sim block is missing {e}") from e
    except (TypeError, ValueError) as e:
        raise ConfigParse(f"invalid sim block: {e}") from e


def scenario_from_document(doc: ScenarioDocument) -> Scenario:
    if not isinstance(doc, dict):
        raise ConfigParse("scenario must be a JSON object")
    has_system = doc.get("system") is not None
    has_design = doc.get("design") is not None
    if has_system == has_design:
        raise ConfigParse("scenario needs exactly one of 'system' or 'design'")

    outputs = list(doc.get("outputs", ["report"]))
    unknown = [o for o in outputs if o not in OUTPUT_KINDS]
    if unknown:
        raise ConfigParse(f"unknown outputs requested: {unknown}")

    system = spec_from_document(doc["system"]) if has_system else None
    design = design_from_document(doc["design"]) if has_design else None
    if design is not None and system is None:
        n = design.V_s.shape[0]
        for name, mat in (("R", design.R), ("Im", design.Im)):
            if mat is not None and mat.shape != (n // 2, n):
                raise ConfigParse(f"design {name} must be {n // 2}x{n}, got {mat.shape}")

    sim_doc = doc.get("sim")
    sim = sim_from_document(sim_doc) if sim_doc is not None else None
    if sim is not None and system is not None:
        n = system.n
        if sim.mean0 is not None and np.asarray(sim.mean0).shape != (n,):
            raise ConfigParse(f"sim mean0 must have length {n}")
        if sim.cov0 is not None and sim.cov0.shape != (n, n):
            raise ConfigParse(f"sim cov0 must be {n}x{n}")

    try:
        sweep = [float(e) for e in doc.get("eta_sweep", [])]
    except (TypeError, ValueError) as e:
        raise ConfigParse(f"invalid eta_sweep: {e}") from e

    return Scenario(
        name=str(doc.get("name", "scenario")),
        system=system,
        design=design,
        sim=sim,
        auto_feedback=sim_doc is not None and sim_doc.get("feedback") == "markovian",
        eta_sweep=sweep,
        outputs=outputs,
    )


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, 'r') as f:
            doc = json.load(f)
    except FileNotFoundError as e:
        raise ConfigParse(f"scenario file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigParse(f"invalid JSON in {path}: {e}") from e
    return scenario_from_document(doc)


def _finite(x: float) -> Optional[float]:
    x = float(x)
    return x if math.isfinite(x) else None


def matrix_document(a: np.ndarray) -> Any:
    return np.asarray(a, dtype=float).tolist()


def complex_document(z: Any) -> Dict[str, Any]:
    z = np.asarray(z, dtype=complex)
    return {"re": z.real.tolist(), "im": z.imag.tolist()}


def spec_document(spec: SystemSpec) -> SystemDocument:
    return {
        "m": spec.m,
        "G": matrix_document(spec.G),
        "Lambda_re": spec.Lambda.real.tolist(),
        "Lambda_im": spec.Lambda.imag.tolist(),
        "K_re": spec.K.real.tolist(),
        "K_im": spec.K.imag.tolist(),
        "eta": spec.eta,
    }


def certificate_document(cert: Certificate) -> Dict[str, Any]:
    doc: Dict[str, Any] = {"verdict": bool(cert.verdict), "margin": _finite(cert.margin), "witness": None}
    if cert.witness is not None:
        lam, vec = cert.witness
        doc["witness"] = {"eigenvalue": complex_document(lam), "vector": complex_document(vec)}
    return doc


def steady_state_document(report: Any) -> Dict[str, Any]:
    """Serializable view of a SteadyStateReport"""
    return {
        "eta": report.eta,
        "detectability": certificate_document(report.detectability),
        "V": matrix_document(report.V),
        "purity": report.purity.purity,
        "pure": bool(report.purity.verdict),
        "pure_identity_residual": report.purity.margin,
        "pure_checks_agree": bool(report.purity.agree),
        "heisenberg": certificate_document(report.heisenberg),
        "closed_loop_spectrum": complex_document(report.closed_loop_spectrum),
        "closed_loop_stable": report.closed_loop_stable,
        "feedback_spectrum": None if report.feedback_spectrum is None
        else complex_document(report.feedback_spectrum),
        "riccati": {
            "residual": report.solution.residual,
            "subspace_condition": _finite(report.solution.subspace_condition),
            "well_conditioned": report.solution.well_conditioned,
            "hamiltonian_spectrum": complex_document(report.solution.hamiltonian_spectrum),
        },
        "unconditional_conditions": dict(report.unconditional_conditions),
        "V_unc": None if report.V_unc is None else matrix_document(report.V_unc),
        "ordering_margin": report.ordering_margin,
        "complex_path_error": report.complex_path_error,
    }


def ensemble_document(stats: EnsembleStats) -> Dict[str, Any]:
    return {
        "n_traj": stats.n_traj,
        "T": float(stats.times[-1]),
        "mean_of_means": stats.mean_of_means.tolist(),
        "mean_standard_error": stats.mean_standard_error()[-1].tolist(),
        "Sigma": matrix_document(stats.Sigma),
        "Sigma_standard_error": matrix_document(stats.sigma_standard_error()[-1]),
        "Vc_final": matrix_document(stats.Vc_final),
        "Vunc_final": matrix_document(stats.Vunc_final),
        "identity_residual": stats.identity_residual,
        "metadata": dict(stats.metadata),
    }


class ScenarioWriter:
    """Writes reports and time series into an output directory, one atomic rename per file"""

    def __init__(self, out_dir: str, settings: Optional[Settings] = None) -> None:
        self.settings: Settings = settings or {}
        self.logger: logging.Logger = get_logger(self.settings)
        self.out_dir: str = out_dir
        os.makedirs(self.out_dir, exist_ok=True)

    def _atomic(self, filename: str, write: Callable[[TextIO], None]) -> str:
        path = os.path.join(self.out_dir, filename)
        fd, tmp = tempfile.mkstemp(dir=self.out_dir, prefix=f".{filename}.", suffix=".tmp")
        try:
            with os.fdopen(fd, 'w', newline='') as f:
                write(f)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, path)
        except Exception as e:
            self.logger.error(f"Error writing {path}: {e}")
            self.logger.debug(traceback.format_exc())
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.logger.debug(f"Wrote {path}")
        return path

    def write_json(self, filename: str, document: Dict[str, Any]) -> str:
        return self._atomic(filename, lambda f: json.dump(document, f, indent=2, allow_nan=False))

    def write_csv(self, filename: str, header: Sequence[str], rows: np.ndarray) -> str:
        def dump(f: TextIO) -> None:
            np.savetxt(f, np.atleast_2d(rows), fmt='%.17g', delimiter=',', header=','.join(header), comments='')

        return self._atomic(filename, dump)

    def write_covariance_series(self, filename: str, times: np.ndarray, covs: np.ndarray) -> str:
        n = covs.shape[1]
        header = ["t"] + [f"V_{i}_{j}" for i in range(n) for j in range(n)]
        rows = np.column_stack([times, covs.reshape(len(times), -1)])
        return self.write_csv(filename, header, rows)

    def write_trajectories(self, filename: str, trajectories: List[Trajectory]) -> str:
        n = trajectories[0].mean.shape[1]
        header = ["trajectory", "t"] + [f"x_{i}" for i in range(n)]
        rows = np.vstack([
            np.column_stack([np.full(len(tr.times), k), tr.times, tr.mean])
            for k, tr in enumerate(trajectories)
        ])
        return self.write_csv(filename, header, rows)

    def emit_system_spec(self, filename: str, name: str, spec: SystemSpec) -> str:
        """Scenario file holding only a system block, readable by load_scenario"""
        return self.write_json(filename, {"name": name, "system": spec_document(spec)})
