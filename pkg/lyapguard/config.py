"""
Run configuration: one JSON document describing plant, controller, certificate,
scenario, monitor and prover settings.

Every section forbids unknown keys. Loading a document and dumping it again
with `model_dump(mode="json")` yields a document that loads to an equal model.
"""

import math
import os
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from lyapguard import logging
from lyapguard.tools.controller import (
    Gains,
    ModelEstimates,
    RobustAttitudeController,
    RobustBounds,
    VBoundTemplate,
)
from lyapguard.tools.dynamics import PlantParams
from lyapguard.tools.lyapunov import LyapunovCert
from lyapguard.tools.monitor import EnvelopeLimits, MonitorConfig
from lyapguard.tools.simulator import ClosedLoopSimulator, Scenario, check_scenario
from lyapguard.tools.utils import CONDITION_CAP

Vector6 = Tuple[float, float, float, float, float, float]

DEFAULT_CONFIG = "default_config.json"
CONJECTURE_CONFIG = "conjecture_config.json"


class CertificateSettings(BaseModel):
    """Diagonal of the Lyapunov right-hand side P."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    p_diag: Vector6 = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)

    @field_validator("p_diag")
    @classmethod
    def _positive(cls, value):
        if not all(math.isfinite(p) and p > 0.0 for p in value):
            raise ValueError(f"p_diag entries must be finite and strictly positive, got {value}")
        return value


class MonitorSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    debounce_n: int = Field(5, ge=1)
    e_floor: float = Field(1e-3, ge=0)
    envelope: EnvelopeLimits = EnvelopeLimits()
    divider: int = Field(1, ge=1)


class ProverSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    path: Optional[str] = None
    timeout_s: float = Field(60.0, gt=0)
    extra_args: List[str] = Field(default_factory=list)


class OutputPaths(BaseModel):
    """Default output locations, used when the command line gives none."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    trajectory_csv: Optional[str] = None
    transitions: Optional[str] = None
    tptp: Optional[str] = None


class RunConfig(BaseModel):
    """Complete description of a reproducible run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    plant: PlantParams = PlantParams()
    gains: Gains = Gains()
    bounds: RobustBounds = RobustBounds()
    certificate: CertificateSettings = CertificateSettings()
    template: Optional[VBoundTemplate] = None
    scenario: Scenario = Scenario()
    monitor: MonitorSettings = MonitorSettings()
    prover: ProverSettings = ProverSettings()
    outputs: OutputPaths = OutputPaths()
    cond_cap: float = Field(CONDITION_CAP, gt=1)

    @model_validator(mode="after")
    def _cross_check(self):
        check_scenario(self.scenario, self.bounds)
        if self.template is not None:
            self.template.check()
        return self

    @property
    def mismatch(self) -> float:
        return self.scenario.mismatch

    def vbound_template(self) -> VBoundTemplate:
        """The configured template, or the one derived from bounds and gains."""
        return self.template or VBoundTemplate.from_gains(self.bounds, self.gains)

    def build_certificate(self) -> LyapunovCert:
        return LyapunovCert.from_gains(self.gains, np.diag(self.certificate.p_diag))

    def estimates(self) -> ModelEstimates:
        return self.scenario.estimates(self.plant)

    def build_controller(self, cert: LyapunovCert) -> RobustAttitudeController:
        return RobustAttitudeController(
            self.gains, self.bounds, cert, self.estimates(), self.vbound_template()
        )

    def monitor_config(self, cert: LyapunovCert) -> MonitorConfig:
        return MonitorConfig(
            bounds=self.bounds,
            cert=cert,
            plant=self.plant,
            estimates=self.estimates(),
            debounce_n=self.monitor.debounce_n,
            e_floor=self.monitor.e_floor,
            envelope=self.monitor.envelope,
            divider=self.monitor.divider,
            cond_cap=self.cond_cap,
        )

    def build_simulator(self, cert: LyapunovCert) -> ClosedLoopSimulator:
        return ClosedLoopSimulator(
            self.plant,
            self.build_controller(cert),
            self.scenario,
            self.monitor_config(cert),
            self.cond_cap,
        )


RESOURCES_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "resources")


def resource_text(name: str) -> str:
    """Text of a configuration shipped in lyapguard/resources."""
    with open(os.path.join(RESOURCES_DIR, name), "r", encoding="utf-8") as f:
        return f.read()


def load_config(path: Optional[str] = None) -> RunConfig:
    """Loads and validates a run configuration.

    Args:
        path (Optional[str]): JSON file. None loads the shipped default configuration.

    Returns:
        RunConfig: Validated configuration.

    Raises:
        OSError: If the file cannot be read.
        pydantic.ValidationError: If the document is not valid JSON or violates an invariant.
    """
    if path is None:
        text = resource_text(DEFAULT_CONFIG)
        source = f"<{DEFAULT_CONFIG}>"
    else:
        with open(os.fspath(path), "r", encoding="utf-8") as f:
            text = f.read()
        source = os.fspath(path)
    try:
        cfg = RunConfig.model_validate_json(text)
    except ValueError as e:
        logging.error(f"Invalid configuration {source}: {e}")
        raise
    logging.info(f"Configuration loaded from {source}")
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return cfg.model_dump_json(indent=2)
