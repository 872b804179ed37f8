"""Operation report rendering: JSON, markdown, and figure files.

Markdown output is deterministic (stable ordering, fixed formatting) so
rendered reports can be diffed across runs. Figures are written alongside the
textual output when a figure directory is given.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .plan import AssemblyPlan
from .session import OperationReport


def render_json(report: OperationReport) -> str:
    return report.dumps()


def render_markdown(report: OperationReport, plan: AssemblyPlan | None = None) -> str:
    stage_names = {s.ordinal: s.id for s in plan.stages} if plan else {}
    lines = [
        f"# Operation report `{report.session_id}`",
        "",
        f"- Plan: `{report.plan_id}`",
        f"- Outcome: **{report.outcome}**",
        f"- Stages completed: {report.stages_completed}",
        f"- Errors: {report.error_count}",
        f"- Total time: {report.total_ms / 1000:.1f} s",
        "",
        "| Stage | Name | Duration (s) | Attempts | Errors |",
        "|---:|---|---:|---:|---|",
    ]
    for s in report.stages:
        errors = "; ".join(f"{e.kind}@{e.t_ms / 1000:.1f}s" for e in s.errors) or "-"
        name = stage_names.get(s.ordinal, "")
        lines.append(f"| {s.ordinal} | {name} | {s.duration_ms / 1000:.2f} | {s.attempts} | {errors} |")
    lines.append("")
    return "\n".join(lines)


def render_figures(report: OperationReport, out_dir: str) -> list[str]:
    """Write stage-duration and error-count charts as PNG files; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    ordinals = [s.ordinal for s in report.stages]
    durations = [s.duration_ms / 1000 for s in report.stages]
    error_counts = [len(s.errors) for s in report.stages]
    written = []

    fig, ax = plt.subplots(figsize=(10, 4))
    ax.bar(ordinals, durations, color="#4878cf")
    ax.set_xlabel("stage")
    ax.set_ylabel("duration (s)")
    ax.set_title(f"Stage durations ({report.session_id})")
    ax.set_xticks(ordinals)
    fig.tight_layout()
    path = os.path.join(out_dir, "stage_durations.png")
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(10, 3))
    ax.bar(ordinals, error_counts, color="#d65f5f")
    ax.set_xlabel("stage")
    ax.set_ylabel("errors")
    ax.set_title("Errors per stage")
    ax.set_xticks(ordinals)
    ax.set_ylim(bottom=0)
    fig.tight_layout()
    path = os.path.join(out_dir, "stage_errors.png")
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(path)
    return written
