import pytest

from motion2midi.decoder import DecoderConfig
from motion2midi.encoder import StgcnConfig
from motion2midi.numerics import LrSchedule
from motion2midi.trainer import TrainConfig


def tiny_train_config(**overrides) -> TrainConfig:
    """A model small enough for per-test training runs."""
    base = dict(
        encoder=StgcnConfig(channels=(8, 16), strides=(2, 2), kernel=3),
        decoder=DecoderConfig(num_blocks=1, d_model=32, num_heads=2, d_ff=64, max_seq_len=128,
                              pose_channels=16),
        schedule=LrSchedule(peak_lr=3e-3, warmup_steps=20),
        batch_size=2, steps=8, eval_interval=4, n_train=8, n_val=4, seed=3,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture
def tiny_config():
    return tiny_train_config


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    """Log one PASS/FAIL line per acceptance criterion (echoed in the terminal summary)."""
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
