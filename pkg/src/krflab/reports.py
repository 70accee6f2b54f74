"""Machine-readable ledger entries for the estimate checks."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field


@dataclass
class EstimateReport:
    """One named bound: measured constants, worst violation, pass flag.

    `worst_violation` is signed: for lower-bound checks it is the most
    negative margin seen (>= -tolerance passes); for upper-bound/budget
    checks the convention is budget minus measured (again >= -tolerance
    passes). Report-only monitors set `tolerance` to inf.
    """

    name: str
    constants: dict = field(default_factory=dict)
    worst_violation: float = 0.0
    location: tuple | None = None
    tolerance: float = float("inf")
    notes: str = ""

    @property
    def passed(self):
        return self.worst_violation >= -self.tolerance

    def as_row(self):
        return {
            "name": self.name,
            "passed": int(self.passed),
            "worst_violation": self.worst_violation,
            "tolerance": self.tolerance,
            "location_x": self.location[0] if self.location else "",
            "location_t": (self.location[1]
                           if self.location and len(self.location) > 1 else ""),
            "constants": json.dumps(self.constants, sort_keys=True),
            "notes": self.notes,
        }

    def as_dict(self):
        return {
            "name": self.name,
            "passed": self.passed,
            "worst_violation": self.worst_violation,
            "tolerance": None if self.tolerance == float("inf") else self.tolerance,
            "location": self.location,
            "constants": self.constants,
            "notes": self.notes,
        }


CSV_FIELDS = ["name", "passed", "worst_violation", "tolerance",
              "location_x", "location_t", "constants", "notes"]


def write_reports_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in reports:
            w.writerow(r.as_row())


def write_reports_json(path, reports, extra=None):
    payload = {"reports": [r.as_dict() for r in reports]}
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return payload
