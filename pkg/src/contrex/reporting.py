"""Report emission: delimited stage tables, JSON breakdowns, and figures.

CSV and JSON outputs are byte-stable for a given config and seed: floats are
written with repr (shortest lossless form), keys are sorted, and wall-clock
timings are kept out of the files. Figures are rendered to PNG next to the
delimited output; they carry the same numbers and never feed back into them.
"""

import json

import numpy as np


def _fmt(x):
    return repr(float(x))


def stage_reports_to_csv(reports):
    """One row per stage; per-task columns padded to the final stage width."""
    n = max(r.stage for r in reports)
    header = (["stage", "average_accuracy", "average_accuracy_unweighted"]
              + [f"acc_T{i + 1}" for i in range(n)]
              + [f"prec_T{i + 1}" for i in range(n)])
    lines = [",".join(header)]
    for r in sorted(reports, key=lambda r: r.stage):
        accs = [_fmt(a) for a in r.per_task_accuracy] + [""] * (n - r.stage)
        precs = [_fmt(p) for p in r.task_precision] + [""] * (n - r.stage)
        row = [str(r.stage), _fmt(r.average_accuracy), _fmt(r.average_accuracy_unweighted)]
        lines.append(",".join(row + accs + precs))
    return "\n".join(lines) + "\n"


def stage_reports_to_json(reports):
    payload = [
        {
            "stage": r.stage,
            "average_accuracy": r.average_accuracy,
            "average_accuracy_unweighted": r.average_accuracy_unweighted,
            "per_task_accuracy": list(r.per_task_accuracy),
            "task_precision": list(r.task_precision),
            "test_sizes": list(r.test_sizes),
        }
        for r in sorted(reports, key=lambda r: r.stage)
    ]
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_stage_reports(reports, out_dir, basename="stage_reports"):
    import os

    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{basename}.csv")
    json_path = os.path.join(out_dir, f"{basename}.json")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(stage_reports_to_csv(reports))
    with open(json_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(stage_reports_to_json(reports))
    return csv_path, json_path


def ablation_rows_to_csv(rows):
    n = max(len(r["stage_average_accuracy"]) for r in rows)
    header = ["label", "overrides"] + [f"avg_T{i + 1}" for i in range(n)]
    lines = [",".join(header)]
    for r in rows:
        overrides = ";".join(f"{k}={v}" for k, v in sorted(r["overrides"].items())) or "-"
        stage = [_fmt(a) for a in r["stage_average_accuracy"]]
        stage += [""] * (n - len(stage))
        lines.append(",".join([r["label"], overrides] + stage))
    return "\n".join(lines) + "\n"


def ablation_rows_to_json(rows):
    return json.dumps(rows, sort_keys=True, indent=2, default=float) + "\n"


def write_ablation_reports(rows, out_dir, basename="ablation"):
    import os

    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{basename}.csv")
    json_path = os.path.join(out_dir, f"{basename}.json")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(ablation_rows_to_csv(rows))
    with open(json_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(ablation_rows_to_json(rows))
    return csv_path, json_path


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_stage_figure(reports, path):
    """Accuracy across learning stages: one line per task plus the average."""
    plt = _pyplot()
    reports = sorted(reports, key=lambda r: r.stage)
    stages = [r.stage for r in reports]
    n_tasks = max(r.stage for r in reports)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for task in range(n_tasks):
        xs = [r.stage for r in reports if r.stage > task]
        ys = [r.per_task_accuracy[task] for r in reports if r.stage > task]
        ax.plot(xs, ys, marker="o", alpha=0.6, label=f"task {task + 1}")
    ax.plot(stages, [r.average_accuracy for r in reports], marker="s",
            color="black", linewidth=2.2, label="average")
    ax.set_xlabel("learning stage")
    ax.set_ylabel("accuracy")
    ax.set_xticks(stages)
    ax.set_ylim(0.0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_ablation_figure(rows, path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for r in rows:
        ys = r["stage_average_accuracy"]
        ax.plot(range(1, len(ys) + 1), ys, marker="o", label=r["label"])
    ax.set_xlabel("learning stage")
    ax.set_ylabel("average accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_task_precision_figure(reports, path):
    """Final-stage task-prediction precision per task."""
    plt = _pyplot()
    final = max(reports, key=lambda r: r.stage)
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = np.arange(1, final.stage + 1)
    ax.bar(xs, final.task_precision, color="tab:blue", alpha=0.8)
    ax.axhline(1.0 / final.stage, color="red", linestyle="--", linewidth=1,
               label="chance")
    ax.set_xlabel("task")
    ax.set_ylabel("task-prediction precision")
    ax.set_xticks(xs)
    ax.set_ylim(0.0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
