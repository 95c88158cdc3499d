"""Independent reference implementations used to cross-check the real code.

Everything here is deliberately naive: different algorithms, different
accumulation order, no shared helpers with the package under test.
"""

from __future__ import annotations

import math


def varint_oracle(n: int) -> list[int]:
    """Base-128 varint by repeated division, continuation bit on all but last."""
    digits = []
    while True:
        digits.append(n % 128)
        n //= 128
        if n == 0:
            break
    return [d | 0x80 for d in digits[:-1]] + [digits[-1]]


def match_oracle(filter_levels: list[str], topic_levels: list[str]) -> bool:
    """Brute-force recursive topic matcher."""
    if not filter_levels:
        return not topic_levels
    head, rest = filter_levels[0], filter_levels[1:]
    if head == "#":
        return True
    if not topic_levels:
        return False
    if head == "+" or head == topic_levels[0]:
        return match_oracle(rest, topic_levels[1:])
    return False


def crc16_oracle(data: bytes) -> int:
    """Bit-at-a-time CRC-16/MODBUS: reflected poly 0xA001, init 0xFFFF."""
    crc = 0xFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            if crc & 1:
                crc = (crc >> 1) ^ 0xA001
            else:
                crc >>= 1
    return crc


def power_oracle(volts: list[float], amps: list[float]) -> dict[str, float]:
    """Two-pass plain-Python RMS and active power."""
    n = len(volts)
    v_rms = math.sqrt(sum(v * v for v in volts) / n)
    i_rms = math.sqrt(sum(i * i for i in amps) / n)
    p = sum(v * i for v, i in zip(volts, amps)) / n
    s = v_rms * i_rms
    return {
        "v_rms": v_rms,
        "i_rms": i_rms,
        "p_active": p,
        "s_apparent": s,
        "power_factor": p / s if s > 0 else 0.0,
    }
