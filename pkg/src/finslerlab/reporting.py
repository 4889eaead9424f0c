"""Run reports with byte-stable JSON serialization.

The JSON payload excludes wall time so identical inputs and seeds produce
identical bytes; the human summary prints it instead.
"""

import json
import math
from dataclasses import dataclass, field


def jsonable(value):
    """Plain JSON values only: non-finite floats become labels, arrays become
    lists, so serialization never depends on interpreter flags."""
    if isinstance(value, bool) or value is None or isinstance(value, (int, str)):
        return value
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if hasattr(value, "tolist"):
        return jsonable(value.tolist())
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    return float(value)


@dataclass(frozen=True)
class RunCheck:
    name: str
    value: object
    tolerance: float | None
    passed: bool
    note: str = ""

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "value": jsonable(self.value),
            "tolerance": jsonable(self.tolerance),
            "pass": self.passed,
        }
        if self.note:
            out["note"] = self.note
        return out

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        val = jsonable(self.value)
        shown = f"{val:.6e}" if isinstance(val, float) else str(val)
        tol = "-" if self.tolerance is None else f"{self.tolerance:.1e}"
        note = f"  ({self.note})" if self.note else ""
        return f"{verdict}  {self.name}  value={shown}  tol={tol}{note}"


@dataclass
class RunReport:
    command: str
    model_hash: object          # one hash, or a list for two-model commands
    seed: int
    checks: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "model_hash": jsonable(self.model_hash),
            "seed": self.seed,
            "results": [c.to_dict() for c in self.checks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"),
                          allow_nan=False)

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    def summary(self) -> str:
        hash_text = ",".join(self.model_hash) if isinstance(self.model_hash, list) \
            else self.model_hash
        lines = [f"command: {self.command}  model: {hash_text}  seed: {self.seed}"]
        lines += [c.line() for c in self.checks]
        lines.append(f"wall time: {self.wall_time:.3f} s")
        lines.append(f"RESULT: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def write_csv(path, header, rows):
    """Small numeric table dump; floats via repr for lossless round-trips."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) if isinstance(c, int) else repr(float(c))
                              for c in row) + "\n")
