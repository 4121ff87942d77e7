"""Per-slot metrics and the acceptance ratio."""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields
from typing import Sequence

from .errors import ValidationError

__all__ = ["SlotRecord", "acceptance_ratio", "CSV_COLUMNS", "records_to_csv", "final_acceptance"]


@dataclass(frozen=True)
class SlotRecord:
    """Metrics of one slot, powers in watts taken after the slot's commit."""

    slot: int
    arrived: int
    accepted: int
    eta: int
    node_power: float
    switch_power: float
    total_power: float
    active_servers: int
    active_links: int
    admit_wall_time: float

    def __post_init__(self):
        if self.accepted + self.eta != self.arrived:
            raise ValidationError(f"slot {self.slot}: accepted + eta != arrived")


CSV_COLUMNS = tuple(f.name for f in fields(SlotRecord))


def acceptance_ratio(accepted: int, arrived: int) -> float:
    """Accepted share of arrived slices in percent; 100 when nothing arrived."""
    if accepted < 0 or arrived < 0:
        raise ValidationError("counts must be non-negative")
    if accepted > arrived:
        raise ValidationError(f"accepted ({accepted}) exceeds arrived ({arrived})")
    if arrived == 0:
        return 100.0
    return 100.0 * accepted / arrived


def final_acceptance(records: Sequence[SlotRecord]) -> float:
    return acceptance_ratio(sum(r.accepted for r in records), sum(r.arrived for r in records))


def records_to_csv(records: Sequence[SlotRecord]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for rec in records:
        lines.append(",".join(_cell(v) for v in astuple(rec)))
    return "\n".join(lines) + "\n"


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)
