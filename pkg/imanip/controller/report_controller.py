import csv
import io
import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..core.errors import CodecError, ConfigError  # noqa: E402
from ..database import checkpoint_store, manifest_store, memory_store  # noqa: E402
from ..model.policy import PolicyModel  # noqa: E402
from ..model.schemas import RunConfig, Schedule, StepReport  # noqa: E402
from .memory_controller import ReplayBuffer  # noqa: E402
from .trainer_controller import ResumePoint, RunResult  # noqa: E402

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["step", "skill", "phase", "success_rate", "l_act", "l_dis", "trainable_params", "wall_ms"]
SVG_SALT = "imanip"


def fmt_metric(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def metric_rows(reports: Sequence[StepReport]) -> List[Dict[str, str]]:
    """One row per (step, learned skill); phase says whether the skill was new at that step."""
    rows = []
    for report in reports:
        for skill, rate in report.per_skill.items():
            rows.append(
                {
                    "step": str(report.step),
                    "skill": skill,
                    "phase": "new" if skill in report.new_skills else "old",
                    "success_rate": fmt_metric(rate),
                    "l_act": fmt_metric(report.l_act),
                    "l_dis": fmt_metric(report.l_dis),
                    "trainable_params": str(report.trainable_params),
                    "wall_ms": str(report.wall_ms),
                }
            )
    return rows


def _csv_text(columns: Sequence[str], rows: Sequence[Dict[str, str]]) -> str:
    stream = io.StringIO()
    writer = csv.DictWriter(stream, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return stream.getvalue()


def write_csv(path: str, columns: Sequence[str], rows: Sequence[Dict[str, str]]) -> str:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(_csv_text(columns, rows))
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return path


def summarize(reports: Sequence[StepReport]) -> Dict[str, Optional[float]]:
    """Averages in the comparison-table sense: old over incremental steps, all over every step."""
    olds = [r.old for r in reports[1:] if r.old is not None]
    return {
        "avg_old": float(np.mean(olds)) if olds else None,
        "avg_all": float(np.mean([r.all for r in reports])) if reports else None,
        "final_all": reports[-1].all if reports else None,
    }


def plot_success(path: str, curves: Dict[str, List[Optional[float]]], title: str) -> str:
    """Success-vs-step lines; byte-stable output (fixed hash salt, no date)."""
    plt.rcParams["svg.hashsalt"] = SVG_SALT
    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        for label, values in curves.items():
            steps = [i for i, v in enumerate(values) if v is not None]
            ax.plot(steps, [100.0 * values[i] for i in steps], marker="o", label=label)
        ax.set_xlabel("step")
        ax.set_ylabel("success rate (%)")
        ax.set_ylim(-5, 105)
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    logger.info(f"Wrote {path}")
    return path


def run_directory(out_dir: str, notation: str, method: str, seed: int) -> str:
    return os.path.join(out_dir, f"{notation}_{method}_seed{seed}")


def write_run_artifacts(
    result: RunResult, config: RunConfig, out_dir: str, data_files: Sequence[str], tag: str = ""
) -> str:
    """Checkpoints, memory payloads, metrics CSV, SVG and the manifest for one run; returns the manifest path."""
    schedule = result.schedule
    run_dir = run_directory(out_dir, schedule.notation + tag, result.method, schedule.seed)
    os.makedirs(run_dir, exist_ok=True)
    try:
        written = []
        for step, buffer in enumerate(result.memories):
            written.append(memory_store.save_memory(os.path.join(run_dir, f"memory_step{step}.immem"), buffer))
        written.append(checkpoint_store.save_checkpoint(os.path.join(run_dir, "final.imckpt"), result.model))
        written.append(
            write_csv(os.path.join(run_dir, "metrics.csv"), METRIC_COLUMNS, metric_rows(result.reports))
        )
        curves = {
            "all": [r.all for r in result.reports],
            "old": [r.old for r in result.reports],
            "new": [r.new for r in result.reports],
        }
        written.append(
            plot_success(
                os.path.join(run_dir, "success.svg"), curves, f"{schedule.notation} {result.method} seed {schedule.seed}"
            )
        )

        data = manifest_store.file_entries(list(data_files), out_dir)
        manifest = {
            "method": result.method,
            "seed": schedule.seed,
            "schedule": {
                "notation": schedule.notation,
                "base_skills": schedule.base_skills,
                "steps": schedule.steps,
            },
            "config": config.model_dump(mode="json", exclude={"out", "seeds"}),
            "data": data,
            "data_hash": manifest_store.sha256_bytes("".join(e["sha256"] for e in data).encode("ascii")),
            "memory": [buffer.provenance() for buffer in result.memories],
            "reports": [r.model_dump(mode="json") for r in result.reports],
            "summary": summarize(result.reports),
            "files": manifest_store.file_entries(written, run_dir),
        }
        path = manifest_store.write_json(os.path.join(run_dir, "manifest.json"), manifest)
        logger.info(f"Run {schedule.notation} {result.method} seed {schedule.seed} written to {run_dir}")
        return path
    except Exception as e:
        logger.error(f"Error writing artifacts to {run_dir}: {str(e)}")
        raise


# ---------------------------------------------------------------- progress

PROGRESS_FILE = "progress.json"


def write_progress(
    run_dir: str,
    config: RunConfig,
    schedule: Schedule,
    method: str,
    step: int,
    model: PolicyModel,
    reports: Sequence[StepReport],
    memories: Sequence[ReplayBuffer],
) -> str:
    """Checkpoint, memory and reports after ``step`` so an interrupted run can continue from it."""
    os.makedirs(run_dir, exist_ok=True)
    checkpoint_store.save_checkpoint(os.path.join(run_dir, f"step{step}.imckpt"), model)
    memory_store.save_memory(os.path.join(run_dir, f"memory_step{step}.immem"), memories[step])
    payload = {
        "method": method,
        "seed": schedule.seed,
        "completed_step": step,
        "config": config.model_dump(mode="json", exclude={"out", "seeds"}),
        "reports": [r.model_dump(mode="json") for r in reports],
    }
    return manifest_store.write_json(os.path.join(run_dir, PROGRESS_FILE), payload)


def read_progress(run_dir: str) -> Tuple[RunConfig, int, ResumePoint]:
    """(config, seed, resume point) recorded by the last ``write_progress`` in ``run_dir``."""
    path = os.path.join(run_dir, PROGRESS_FILE)
    progress = manifest_store.read_manifest(path)
    try:
        config = RunConfig.model_validate(progress["config"])
        step = int(progress["completed_step"])
        reports = [StepReport.model_validate(r) for r in progress["reports"]]
        seed = int(progress["seed"])
    except (KeyError, TypeError, ValueError) as e:
        logger.error(f"Error reading progress {path}: {str(e)}")
        raise CodecError(f"{path} is not a usable progress record: {str(e)}") from e
    if len(reports) != step + 1:
        raise CodecError(f"{path} records step {step} but holds {len(reports)} reports")
    memories = [memory_store.load_memory(os.path.join(run_dir, f"memory_step{i}.immem")) for i in range(step + 1)]
    model = checkpoint_store.load_checkpoint(os.path.join(run_dir, f"step{step}.imckpt"))
    logger.info(f"Loaded progress of {config.schedule} {progress['method']} seed {seed} through step {step}")
    return config.model_copy(update={"method": progress["method"]}), seed, ResumePoint(reports, memories, model)


# ---------------------------------------------------------------- comparison


def comparison_grid(manifests: Sequence[dict]):
    """Per-method means over seeds: base All, then Old/All per step, then averages.

    Returns (columns, rows, curves) where curves maps method to mean All per step.
    """
    if not manifests:
        raise ConfigError("no manifests to compare")
    notations = {m["schedule"]["notation"] for m in manifests}
    if len(notations) != 1:
        raise ConfigError(f"manifests mix schedules {sorted(notations)}")
    steps = len(manifests[0]["reports"])
    columns = ["method", "seeds", "step0_all"]
    for t in range(1, steps):
        columns += [f"step{t}_old", f"step{t}_all"]
    columns += ["avg_old", "avg_all"]

    by_method: Dict[str, List[dict]] = {}
    for manifest in manifests:
        by_method.setdefault(manifest["method"], []).append(manifest)

    def mean(values):
        values = [v for v in values if v is not None]
        return float(np.mean(values)) if values else None

    rows, curves = [], {}
    for method in sorted(by_method):
        group = by_method[method]
        row = {"method": method, "seeds": ",".join(str(m["seed"]) for m in sorted(group, key=lambda m: m["seed"]))}
        row["step0_all"] = fmt_metric(mean([m["reports"][0]["all"] for m in group]))
        for t in range(1, steps):
            row[f"step{t}_old"] = fmt_metric(mean([m["reports"][t]["old"] for m in group]))
            row[f"step{t}_all"] = fmt_metric(mean([m["reports"][t]["all"] for m in group]))
        row["avg_old"] = fmt_metric(mean([m["summary"]["avg_old"] for m in group]))
        row["avg_all"] = fmt_metric(mean([m["summary"]["avg_all"] for m in group]))
        rows.append(row)
        curves[method] = [mean([m["reports"][t]["all"] for m in group]) for t in range(steps)]
    return columns, rows, curves


def write_comparison(out_dir: str, manifests: Sequence[dict], name: str = "comparison") -> List[str]:
    columns, rows, curves = comparison_grid(manifests)
    os.makedirs(out_dir, exist_ok=True)
    notation = manifests[0]["schedule"]["notation"]
    return [
        write_csv(os.path.join(out_dir, f"{name}.csv"), columns, rows),
        plot_success(os.path.join(out_dir, f"{name}.svg"), curves, f"{notation} all-skill success"),
    ]
