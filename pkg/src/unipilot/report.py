"""Run reports: report.json, a delimited trial table, and rendered figures."""

from __future__ import annotations

import csv
from pathlib import Path

from .jsonutil import canonical_dumps
from .session import SessionState


def write_report(session: SessionState, out_dir: str | Path) -> Path:
    """Write report.json + trials.csv + figures/ under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = session.artifacts
    report = dict(artifacts.get("report") or {})
    report["session_id"] = session.session_id
    report["status"] = session.status.value
    report_path = out / "report.json"
    report_path.write_text(canonical_dumps(report) + "\n", encoding="utf-8")

    trials = artifacts.get("trial_history") or []
    if trials:
        _write_trials_csv(trials, out / "trials.csv")
    _render_figures(artifacts, out / "figures")
    return report_path


def _write_trials_csv(trials: list[dict], path: Path) -> None:
    param_names = sorted({
        name for t in trials
        for name in _assignment_of(t)
    })
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial_id", "status", "metric", "value", *param_names])
        for t in trials:
            assignment = _assignment_of(t)
            writer.writerow([
                t["trial_id"], t["status"], t["metric_name"],
                "" if t["value"] is None else t["value"],
                *[assignment.get(p, "") for p in param_names],
            ])


def _assignment_of(trial_result: dict) -> dict:
    # the assignment is replayed from the first metric checkpointing pass;
    # trial results store it under "assignment" when the executor echoes it
    return trial_result.get("assignment") or {}


def _render_figures(artifacts: dict, fig_dir: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig_dir.mkdir(parents=True, exist_ok=True)

    trials = artifacts.get("trial_history") or []
    if trials:
        fig, ax = plt.subplots(figsize=(7, 4))
        for t in trials:
            steps = [p["step"] for p in t["steps"]]
            values = [p["value"] for p in t["steps"]]
            if steps:
                ax.plot(steps, values, alpha=0.6, label=f"trial {t['trial_id']}")
        ax.set_xlabel("step")
        ax.set_ylabel(trials[0]["metric_name"])
        ax.set_title("trial metric curves")
        if len(trials) <= 12:
            ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(fig_dir / "trial_curves.png", dpi=110)
        plt.close(fig)

        fig, ax = plt.subplots(figsize=(7, 3.5))
        finished = [t for t in trials if t["value"] is not None]
        ax.bar([t["trial_id"] for t in finished], [t["value"] for t in finished])
        ax.set_xlabel("trial")
        ax.set_ylabel(f"final {trials[0]['metric_name']}")
        ax.set_title("final value per trial")
        fig.tight_layout()
        fig.savefig(fig_dir / "trial_values.png", dpi=110)
        plt.close(fig)

    ranked = (artifacts.get("shortlist") or {}).get("ranked") or []
    if ranked:
        fig, ax = plt.subplots(figsize=(7, 0.5 + 0.35 * len(ranked)))
        names = [m for m, _ in ranked][::-1]
        scores = [s for _, s in ranked][::-1]
        ax.barh(names, scores)
        ax.set_xlabel("cosine similarity")
        ax.set_title("model shortlist")
        fig.tight_layout()
        fig.savefig(fig_dir / "shortlist.png", dpi=110)
        plt.close(fig)
