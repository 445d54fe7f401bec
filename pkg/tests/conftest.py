import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

try:
    from loguru import logger

    logger.remove()  # androguard logs every parsed structure at debug level
except ImportError:  # pragma: no cover
    pass


def androguard_opcodes(data: bytes) -> dict[str, tuple[int, ...]]:
    """Opcode values per method from androguard's disassembler.

    Payload pseudo-instructions report values above 0xFF; the nop that
    aligns a payload is padding, not code.
    """
    dex = pytest.importorskip("androguard.core.dex")
    out = {}
    for cls in dex.DEX(data).get_classes():
        for m in cls.get_methods():
            ops = [i.get_op_value() for i in m.get_instructions()]
            kept = [op for j, op in enumerate(ops)
                    if op <= 0xFF and not (op == 0 and j + 1 < len(ops) and ops[j + 1] > 0xFF)]
            if kept:
                out[f"{m.get_class_name()}->{m.get_name()}{m.get_descriptor().replace(' ', '')}"] = tuple(kept)
    return out


@pytest.fixture(scope="session")
def apk_corpus(tmp_path_factory):
    from dexdedup.synth import write_apk_corpus
    root = tmp_path_factory.mktemp("apk_corpus")
    write_apk_corpus(root, seed=0)
    return root


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
