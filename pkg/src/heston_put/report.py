"""Verification report records shared by the boundary and analysis checks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

PASS, FAIL, INCONCLUSIVE, NOT_APPLICABLE = "pass", "fail", "inconclusive", "not-applicable"


def _clean(obj):
    """Make a value JSON-safe and stable: non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):  # numpy scalar
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


@dataclass
class ReportEntry:
    prop: str
    anchor: str
    measured: float
    threshold: float
    passed: bool
    details: dict = field(default_factory=dict)
    status: str | None = None
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.status is None:
            self.status = PASS if self.passed else FAIL
        if self.status in (INCONCLUSIVE,):
            self.passed = False
        if self.status == NOT_APPLICABLE:
            self.passed = True

    def to_dict(self) -> dict:
        return _clean({
            "property": self.prop,
            "anchor": self.anchor,
            "measured": self.measured,
            "threshold": self.threshold,
            "passed": bool(self.passed),
            "status": self.status,
            "details": self.details,
            "config": self.config,
        })


@dataclass
class VerificationReport:
    entries: list[ReportEntry] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def add(self, entry: ReportEntry) -> ReportEntry:
        if not entry.config:
            entry.config = self.config
        self.entries.append(entry)
        return entry

    def to_dict(self) -> dict:
        return _clean({
            "passed": self.passed,
            "config": self.config,
            "entries": [e.to_dict() for e in self.entries],
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        head = ("property", "status", "measured", "threshold", "anchor")
        rows = [head]
        for e in self.entries:
            rows.append((e.prop, e.status, f"{e.measured:.6g}", f"{e.threshold:.6g}", e.anchor))
        widths = [max(len(r[i]) for r in rows) for i in range(len(head) - 1)]
        lines = []
        for r in rows:
            cells = [r[i].ljust(widths[i]) for i in range(len(widths))] + [r[-1]]
            lines.append("  ".join(cells).rstrip())
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"
