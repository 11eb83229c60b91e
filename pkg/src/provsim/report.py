"""CSV, trace and summary emission."""

from __future__ import annotations

import csv
import io
from contextlib import contextmanager

from .architectures import ArchitectureKind
from .harness import ExperimentResult, ScenarioKind

CSV_HEADER = ["vm_index", "arrival_s", "running_s", "deploy_s", "node", "arch", "scenario",
              "run"]
TRACE_HEADER = ["time_s", "event_kind", "vm_id", "node_id", "detail"]


def _num(x) -> str:
    return "" if x is None else f"{x:.6f}"


@contextmanager
def _open_out(path):
    if hasattr(path, "write"):
        yield path
        return
    try:
        fh = open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    with fh:
        yield fh


def csv_rows(result: ExperimentResult) -> list[list[str]]:
    arch, scen = result.arch.value, result.scenario.value
    rows = []
    for k, run in enumerate(result.runs, 1):
        for i, (arr, r, d, node) in enumerate(zip(run.arrivals, run.running, run.deploy,
                                                  run.nodes), 1):
            rows.append([str(i), _num(arr), _num(r), _num(d), node, arch, scen, str(k)])
    if result.runs:
        for i, (arr, r, d, node) in enumerate(zip(result.mean_arrivals, result.mean_running,
                                                  result.deploy_times, result.nodes), 1):
            rows.append([str(i), _num(arr), _num(r), _num(d), node, arch, scen, "mean"])
    return rows


def emit_csv(results, path, header: bool = True) -> None:
    """Write one row per VM per run plus ``mean`` pseudo-run rows."""
    if isinstance(results, ExperimentResult):
        results = [results]
    with _open_out(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow(CSV_HEADER)
        for result in results:
            writer.writerows(csv_rows(result))


def csv_text(results) -> str:
    buf = io.StringIO()
    emit_csv(results, buf)
    return buf.getvalue()


def write_trace(trace, path) -> None:
    with _open_out(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for rec in trace:
            writer.writerow([f"{rec.time:.6f}", rec.kind, rec.vm, rec.node, rec.detail])


def summary_matrix(results) -> dict:
    """{arch: {scenario: aggregate total in minutes}}"""
    matrix: dict = {}
    for res in results:
        total = res.total
        matrix.setdefault(res.arch, {})[res.scenario] = None if total is None else total / 60.0
    return matrix


def emit_summary(results) -> str:
    """Aggregate totals in minutes; architectures as rows, scenarios as columns."""
    matrix = summary_matrix(results)
    archs = [a for a in ArchitectureKind if a in matrix]
    scens = [s for s in ScenarioKind if any(s in row for row in matrix.values())]
    width = 8
    lines = ["total (min)".ljust(12) + "".join(s.label.rjust(width) for s in scens)]
    for arch in archs:
        cells = []
        for s in scens:
            v = matrix[arch].get(s)
            cells.append(("-" if v is None else f"{v:.1f}").rjust(width))
        lines.append(arch.value.ljust(12) + "".join(cells))
    failures = sum(r.failures for r in results)
    if failures:
        lines.append(f"failed VMs (all runs): {failures}")
    return "\n".join(lines) + "\n"
