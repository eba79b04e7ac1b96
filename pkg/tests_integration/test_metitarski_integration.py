import os
import shutil

import pytest
from dotenv import load_dotenv

from lyapguard.config import RunConfig, resource_text
from lyapguard.tools.fof import MetiTarskiProver, SzsStatus
from lyapguard.tools.fof.parser import parse
from lyapguard.tools.fof.utils import stability_conjecture
from lyapguard.tools.lyapunov import Branch

_ = load_dotenv()

PROVER = shutil.which(os.getenv("LYAPGUARD_PROVER", "metit"))

pytestmark = [
    pytest.mark.integration,
    pytest.mark.skipif(PROVER is None, reason="MetiTarski not installed (set LYAPGUARD_PROVER or put metit on PATH)"),
]


@pytest.fixture(scope="module")
def prover():
    return MetiTarskiProver(PROVER, ["--autoInclude"])


def test_proves_trivial_inequality(prover):
    conj = parse("fof(trivial,conjecture, ![X] :\n( X > 0\n=> X^2 + X > 0 )).")
    result = prover.prove(conj, timeout=30.0)
    assert result.status == SzsStatus.THEOREM, result.raw


def test_refutes_false_inequality(prover):
    conj = parse("fof(false_claim,conjecture, ![X] :\n( X > 0\n=> X - 1 > 0 )).")
    result = prover.prove(conj, timeout=30.0)
    assert result.status != SzsStatus.THEOREM, result.raw


@pytest.mark.parametrize(
    "branch, E",
    [
        (Branch.OUTSIDE, (1.6, 3.1, 2.0, 9.3, 6.8, 4.8)),
        (Branch.BOUNDARY_LAYER, (2.9, 1.2, 1.8, 6.9, 10.5, 5.0)),
    ],
)
def test_stability_conjecture_is_accepted(prover, branch, E):
    cfg = RunConfig.model_validate_json(resource_text("conjecture_config.json"))
    conj = stability_conjecture(
        cfg.bounds, cfg.vbound_template(), cfg.build_certificate(), cfg.plant, E, branch
    )
    result = prover.prove(conj, timeout=120.0)
    assert result.status != SzsStatus.ERROR, result.raw
