"""Square-root base noise schedule and the instruction-driven skipping
transform that contextualizes it per sentence.

A True instruction at step t advances a pointer into the base schedule; a
False repeats the previous pointer, so no additional noise enters at that
step. Two views of the result coexist: ``beta_pointer`` (the literal
repeated base values, used for reporting and visualization) and the
cumulative ``alpha_bar_x`` / per-step ``beta_eff`` pair that diffusion
sampling actually consumes. They agree whenever the pointer advances and
differ only in how a stalled pointer is read.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParameterError

ALPHA_CLAMP = 1e-5


@dataclass(frozen=True)
class BaseSchedule:
    """Fixed schedule: alpha_bar indexed 0..T, beta indexed 1..T (beta[0] unused)."""

    steps: int
    alpha_bar: np.ndarray
    beta: np.ndarray


@dataclass(frozen=True)
class MetaInstructions:
    """Per-step boolean advance/hold decisions; length equals the step count."""

    bits: np.ndarray

    def __init__(self, bits):
        arr = np.asarray(bits, dtype=bool)
        if arr.ndim != 1:
            raise ContractError("instructions must be a 1-D boolean sequence")
        object.__setattr__(self, "bits", arr)

    def __len__(self) -> int:
        return len(self.bits)

    @classmethod
    def all_true(cls, steps: int) -> "MetaInstructions":
        return cls(np.ones(steps, dtype=bool))


@dataclass(frozen=True)
class ScheduledNoise:
    """Contextualized schedule produced by skipping over a base schedule."""

    steps: int
    pointer: np.ndarray       # int, indexed 0..T, pointer[0] == 0
    alpha_bar_x: np.ndarray   # indexed 0..T
    beta_pointer: np.ndarray  # indexed 1..T (entry 0 unused)
    beta_eff: np.ndarray      # indexed 1..T (entry 0 unused)


def build_sqrt_schedule(steps: int, s: float = 1e-4) -> BaseSchedule:
    """alpha_bar_t = clamp(1 - sqrt(t/T + s)); beta_t = 1 - ratio of alpha_bars."""
    if steps < 1:
        raise ParameterError(f"step count must be >= 1, got {steps}")
    if not (0.0 < s <= 0.01):
        raise ParameterError(f"s must lie in (0, 0.01], got {s}")
    t = np.arange(steps + 1, dtype=np.float64)
    alpha_bar = np.clip(1.0 - np.sqrt(t / steps + s), ALPHA_CLAMP, 1.0 - ALPHA_CLAMP)
    beta = np.empty(steps + 1, dtype=np.float64)
    beta[0] = np.nan  # index 0 is not a diffusion step
    beta[1:] = 1.0 - alpha_bar[1:] / alpha_bar[:-1]
    return BaseSchedule(steps=steps, alpha_bar=alpha_bar, beta=beta)


def apply_skipping(instructions: MetaInstructions, base: BaseSchedule) -> ScheduledNoise:
    """Turn advance/hold instructions into a per-sentence schedule.

    The pointer is clamped to at least 1 from the first step onward, so a
    leading False still consumes beta_1 and the first transition stays
    well defined.
    """
    if len(instructions) != base.steps:
        raise ContractError(
            f"instruction length {len(instructions)} != schedule steps {base.steps}")
    steps = base.steps
    pointer = np.zeros(steps + 1, dtype=np.int64)
    pointer[1:] = np.maximum(np.cumsum(instructions.bits.astype(np.int64)), 1)
    alpha_bar_x = base.alpha_bar[pointer]
    beta_pointer = np.empty(steps + 1, dtype=np.float64)
    beta_pointer[0] = np.nan
    beta_pointer[1:] = base.beta[np.maximum(pointer[1:], 1)]
    beta_eff = np.empty(steps + 1, dtype=np.float64)
    beta_eff[0] = np.nan
    beta_eff[1:] = 1.0 - alpha_bar_x[1:] / alpha_bar_x[:-1]
    # A stalled pointer repeats the same alpha_bar; force the effective
    # noise to exactly zero rather than leaving rounding residue.
    beta_eff[1:][pointer[1:] == pointer[:-1]] = 0.0
    return ScheduledNoise(steps=steps, pointer=pointer, alpha_bar_x=alpha_bar_x,
                          beta_pointer=beta_pointer, beta_eff=beta_eff)


def effective_noise_at(schedule: ScheduledNoise, t: int) -> tuple[float, float]:
    """(cumulative signal level, per-step effective noise) at step t."""
    if not 1 <= t <= schedule.steps:
        raise IndexError(f"step {t} outside 1..{schedule.steps}")
    return float(schedule.alpha_bar_x[t]), float(schedule.beta_eff[t])


def fixed_schedule(base: BaseSchedule) -> ScheduledNoise:
    """The base schedule expressed as an all-True contextualized one."""
    return apply_skipping(MetaInstructions.all_true(base.steps), base)


def schedule_to_csv(schedule: ScheduledNoise) -> str:
    """CSV export: header t,pointer,beta_pointer,alpha_bar_x,beta_eff."""
    buf = io.StringIO()
    buf.write("t,pointer,beta_pointer,alpha_bar_x,beta_eff\n")
    for t in range(1, schedule.steps + 1):
        buf.write(f"{t},{int(schedule.pointer[t])},{float(schedule.beta_pointer[t])!r},"
                  f"{float(schedule.alpha_bar_x[t])!r},{float(schedule.beta_eff[t])!r}\n")
    return buf.getvalue()
