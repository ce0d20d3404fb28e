"""Structured results of condition audits."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

PASS = "pass"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


@dataclass
class CheckItem:
    name: str
    status: str
    estimate: float
    samples_used: int
    witness: Optional[dict] = None
    threshold: Optional[float] = None
    message: str = ""
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in (PASS, FAIL, INCONCLUSIVE):
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == FAIL and self.witness is None:
            raise ValueError(f"failed check {self.name!r} must carry a witness")

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "name": self.name,
                "status": self.status,
                "passed": self.passed,
                "estimate": self.estimate,
                "threshold": self.threshold,
                "samples_used": self.samples_used,
                "message": self.message,
                "details": self.details,
                "witness": self.witness,
            }
        )


@dataclass
class CheckReport:
    items: list
    spec_hash: str
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.items:
            raise ValueError("a check report needs at least one item")

    @property
    def passed(self) -> bool:
        return all(it.status != FAIL for it in self.items)

    @property
    def any_failed(self) -> bool:
        return any(it.status == FAIL for it in self.items)

    def to_dict(self) -> dict:
        return {
            "spec_hash": self.spec_hash,
            "tolerances": _jsonable(self.tolerances),
            "passed": self.passed,
            "items": [it.to_dict() for it in self.items],
        }

    def to_text(self) -> str:
        lines = [f"condition audit for model {self.spec_hash[:16]}"]
        for it in self.items:
            thr = "" if it.threshold is None else f" (declared {it.threshold:.6g})"
            lines.append(
                f"  [{it.status.upper():12s}] {it.name}: estimate {it.estimate:.6g}{thr}"
                f", samples {it.samples_used}"
            )
            if it.message:
                lines.append(f"      {it.message}")
        lines.append(
            "sampling audits falsify, they do not prove: 'pass' means no violation found"
        )
        return "\n".join(lines) + "\n"

    def write(self, out_dir, stem: str = "check_report") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.txt").write_text(self.to_text())
        (out / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def dump_json(obj: Any) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True)
