import pytest

from errors import (
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    ConfigError,
    ExpressionError,
    ModelValidationError,
    RootFindingError,
    SimulationError,
    exit_code_for,
)
from run_log import MAX_LOG_ENTRIES, clear_status_log, log_error, log_step, log_success, recent_steps, status_log


def test_log_is_trimmed():
    for i in range(MAX_LOG_ENTRIES + 25):
        log_step(f"[TEST] line {i}")
    assert len(status_log) == MAX_LOG_ENTRIES
    assert status_log[0] == "[TEST] line 25"
    clear_status_log()
    assert recent_steps() == []


def test_blank_lines_are_dropped():
    log_step("   ")
    log_step("  [TEST] padded  ")
    assert recent_steps() == ["[TEST] padded"]


def test_tag_filter_and_helpers():
    log_success("[BRANCH]", "3 branches")
    log_error("[SPECTRUM]", RootFindingError("box did not converge"))
    log_step("[BRANCH] sweep done")
    assert recent_steps("[BRANCH]") == ["[BRANCH] [SUCCESS] 3 branches", "[BRANCH] sweep done"]
    assert recent_steps("[SPECTRUM]") == ["[SPECTRUM] [ERROR] box did not converge"]


@pytest.mark.parametrize("err, code", [
    (ConfigError("bad"), EXIT_CONFIG),
    (ExpressionError("unexpected end", source="1 +", offset=3), EXIT_CONFIG),
    (ModelValidationError("must be positive", value=-1.0, key_path="model.r0d"), EXIT_CONFIG),
    (SimulationError("non-finite state", step_index=4), EXIT_NUMERICAL),
    (RootFindingError("stuck"), EXIT_NUMERICAL),
    (RuntimeError("other"), 1),
])
def test_exit_codes(err, code):
    assert exit_code_for(err) == code


def test_error_messages_carry_location():
    assert str(ModelValidationError("must be positive", key_path="model.r0d")) == "model.r0d: must be positive"
    assert str(SimulationError("non-finite state", step_index=4)) == "non-finite state (step 4)"
    err = ExpressionError("unexpected end", source="1 +", offset=3, key_path="model.beta")
    assert str(err) == "model.beta: unexpected end (at byte 3 of '1 +')"
