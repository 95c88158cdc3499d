"""Register bank and layout for the emulated industrial meter.

The real meter exposes hundreds of measurement registers; this emulation
fixes a small documented layout so the bridge and tests have stable
addresses. Float quantities occupy two consecutive registers, value
big-endian across the pair.
"""

from __future__ import annotations

from dataclasses import dataclass

from .frames import decode_float32, encode_float32


@dataclass(frozen=True)
class FieldSpec:
    name: str
    address: int
    encoding: str  # "float32" | "uint16"

    @property
    def width(self) -> int:
        return 2 if self.encoding == "float32" else 1


# Documented constant layout for the emulated PM2100-class meter.
METER_LAYOUT = (
    FieldSpec("current_a", 3010, "float32"),
    FieldSpec("voltage_v", 3020, "float32"),
    FieldSpec("power_kw", 3054, "float32"),
    FieldSpec("power_factor", 3110, "float32"),
)


class RegisterMap:
    """Sparse bank of 16-bit registers plus a named-field layout."""

    def __init__(self, layout: tuple[FieldSpec, ...] = METER_LAYOUT):
        self._fields: dict[str, FieldSpec] = {}
        self._registers: dict[int, int] = {}
        claimed: set[int] = set()
        for spec in layout:
            if spec.encoding not in ("float32", "uint16"):
                raise ValueError(f"unknown encoding {spec.encoding!r}")
            if spec.encoding == "float32" and spec.address % 2:
                raise ValueError(f"float32 field {spec.name!r} not pair-aligned")
            addresses = set(range(spec.address, spec.address + spec.width))
            if addresses & claimed:
                raise ValueError(f"field {spec.name!r} overlaps another field")
            claimed |= addresses
            self._fields[spec.name] = spec

    @property
    def layout(self) -> dict[str, FieldSpec]:
        return dict(self._fields)

    def set_value(self, name: str, value: float) -> None:
        spec = self._fields[name]
        if spec.encoding == "float32":
            hi, lo = encode_float32(value)
            self._registers[spec.address] = hi
            self._registers[spec.address + 1] = lo
        else:
            self._registers[spec.address] = int(value) & 0xFFFF

    def get_value(self, name: str) -> float:
        spec = self._fields[name]
        if spec.encoding == "float32":
            return decode_float32(
                self._registers[spec.address], self._registers[spec.address + 1]
            )
        return float(self._registers[spec.address])

    def read_block(self, start: int, count: int) -> list[int] | None:
        """Registers at [start, start+count), or None if any is unpopulated."""
        out = []
        for addr in range(start, start + count):
            if addr not in self._registers:
                return None
            out.append(self._registers[addr])
        return out
