"""Run records and file emission for the benchmark harness.

Every run produces: a per-iteration CSV (fixed header
`k,gap,grad_norm_P,ess,acceptance,best_cost,ms`), a machine-readable summary
JSON, and a plot-data CSV carrying both iteration and evaluation-count axes.
Floats are written with repr (shortest round-trip), UTF-8, LF endings.  The
`ms` column and the summary's runtime fields are the only quantities not
determined by (config, seed); everything else is byte-reproducible.

For closed-loop (dubins) records the CSV keeps the same header with k = the
simulation step, gap = realized stage cost, and best_cost = the running
average cost; the summary documents this mapping under `csv_semantics`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from .. import __version__ as _tool_version

CSV_HEADER = "k,gap,grad_norm_P,ess,acceptance,best_cost,ms"
_COLUMNS = ("k", "gap", "grad_norm_P", "ess", "acceptance", "best_cost", "ms")


@dataclass
class RunRecord:
    """One cell x seed of an experiment, self-contained and re-runnable."""

    experiment: str
    cell: Dict[str, Any]
    seed: int
    rows: List[Dict[str, float]] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)
    plot_rows: List[Dict[str, float]] = field(default_factory=list)
    config_snapshot: Dict[str, Any] = field(default_factory=dict)
    flagged: bool = False
    flag_reason: str = ""
    tool_version: str = _tool_version

    @property
    def name(self) -> str:
        bits = [self.experiment]
        for key in sorted(self.cell):
            bits.append(f"{key}-{_slug(self.cell[key])}")
        bits.append(f"seed{self.seed}")
        return "_".join(bits)


def _slug(value: Any) -> str:
    text = repr(value) if isinstance(value, float) else str(value)
    return text.replace(".", "p").replace("-", "m").replace("/", "_")


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write output file {path}: {exc}") from exc


def emit(records: List[RunRecord], out_dir) -> List[Path]:
    """Write all artifacts for the given records; returns the paths written.

    Emission is strictly sequential in sorted record order, so concurrent
    cell execution upstream cannot affect file contents.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    for record in sorted(records, key=lambda r: r.name):
        base = record.name
        csv_path = out / f"{base}.csv"
        lines = [CSV_HEADER]
        for row in record.rows:
            lines.append(",".join(_fmt(row[col]) for col in _COLUMNS))
        _write_text(csv_path, "\n".join(lines) + "\n")
        written.append(csv_path)

        if record.plot_rows:
            plot_path = out / f"plot_{base}.csv"
            cols = list(record.plot_rows[0].keys())
            plines = [",".join(cols)]
            for row in record.plot_rows:
                plines.append(",".join(_fmt(row[c]) for c in cols))
            _write_text(plot_path, "\n".join(plines) + "\n")
            written.append(plot_path)

        summary_doc = {
            "experiment": record.experiment,
            "cell": record.cell,
            "seed": record.seed,
            "tool_version": record.tool_version,
            "flagged": record.flagged,
            "flag_reason": record.flag_reason,
            "summary": record.summary,
            "config": record.config_snapshot,
        }
        summary_path = out / f"summary_{base}.json"
        _write_text(summary_path, json.dumps(summary_doc, indent=2, sort_keys=True) + "\n")
        written.append(summary_path)
    return written
