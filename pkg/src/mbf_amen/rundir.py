"""Run directory layout::

    manifest.toml            written before training
    config.json              resolved config
    metrics.json             one row per scale plus the fused row
    fused_predictions.csv
    scale_<s>/predictions.csv
    scale_<s>/checkpoint.bin, scale_<s>/checkpoint.json
    scale_<s>/attention/<image id>.pgm   (eval split)

Everything except manifest.toml is byte-reproducible for a fixed config.
"""
import datetime
import json
from pathlib import Path

import pandas as pd
import tomlkit

from .attention import write_attention_pgm
from .checkpoint import read_checkpoint, write_checkpoint
from .exceptions import CheckpointError
from .metrics import format_table
from .pipeline import PipelineConfig
from .util import dict_to_toml


def write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def now_iso():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


class RunManifest:
    """What was run, with which config, by which tool version, and when"""

    def __init__(self, config, command, data_path, outputs=(), started=None, finished=None):
        from . import __version__

        self.config = config
        self.command = command
        self.data_path = str(data_path)
        self.outputs = [str(x) for x in outputs]
        self.tool_version = __version__
        self.started = started or now_iso()
        self.finished = finished

    def to_dict(self):
        run = {
            "command": self.command,
            "tool_version": self.tool_version,
            "seed": self.config.seed,
            "data": self.data_path,
            "started": self.started,
            "outputs": self.outputs,
        }
        if self.finished:
            run["finished"] = self.finished
        return {"run": run, "config": self.config.to_dict()}

    def write(self, out_dir):
        path = Path(out_dir) / "manifest.toml"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(tomlkit.dumps(dict_to_toml(self.to_dict(), "written by mbf_amen")))
        return path

    @classmethod
    def read(cls, out_dir):
        path = Path(out_dir) / "manifest.toml"
        if not path.exists():
            raise FileNotFoundError(f"manifest not found: {path}")
        d = tomlkit.loads(path.read_text()).unwrap()
        result = cls(
            PipelineConfig.from_dict(d["config"]),
            d["run"]["command"],
            d["run"]["data"],
            d["run"].get("outputs", []),
            d["run"]["started"],
            d["run"].get("finished"),
        )
        result.tool_version = d["run"]["tool_version"]
        return result


def write_config(out_dir, config):
    write_json(Path(out_dir) / "config.json", config.to_dict())


def read_config(run_dir):
    path = Path(run_dir) / "config.json"
    if not path.exists():
        raise FileNotFoundError(f"config snapshot not found: {path}")
    return PipelineConfig.from_dict(json.loads(path.read_text()))


def rows_to_dict(rows):
    return [dict(name=name, **report.to_dict()) for name, report in rows]


def metrics_document(result):
    return {
        "rows": rows_to_dict(result.rows()),
        "training": [
            {
                "scale": b.scale,
                "name": b.name,
                "final_loss": b.final_loss,
                "loss_history": b.loss_history,
            }
            for b in result.branches
        ],
        "eval_size": len(result.eval_labels),
        "vote_tie_breaks": result.tie_breaks,
    }


def predictions_frame(ids, true_labels, probs, pred_labels=None):
    if pred_labels is None:
        pred_labels = probs.argmax(axis=1)
    df = pd.DataFrame(
        {
            "image_id": list(ids),
            "true_label": [int(x) for x in true_labels],
            "pred_label": [int(x) for x in pred_labels],
        }
    )
    for c in range(probs.shape[1]):
        df[f"prob_{c}"] = probs[:, c]
    return df


def write_attention_maps(directory, ids, maps):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for image_id, A in zip(ids, maps):
        write_attention_pgm(directory / f"{image_id}.pgm", A)


def write_run(out_dir, result):
    """Write every artifact of a finished pipeline run (see module docstring)"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(out_dir, result.config)
    write_json(out_dir / "metrics.json", metrics_document(result))
    fused = pd.DataFrame(
        {
            "image_id": list(result.eval_ids),
            "true_label": [int(x) for x in result.eval_labels],
            "fused_label": [int(x) for x in result.fused_labels],
        }
    )
    for b in result.branches:
        fused[f"scale_{b.scale}"] = [int(x) for x in b.eval_pred]
    fused.to_csv(out_dir / "fused_predictions.csv", index=False)
    for b in result.branches:
        scale_dir = out_dir / f"scale_{b.scale}"
        scale_dir.mkdir(exist_ok=True)
        predictions_frame(result.eval_ids, result.eval_labels, b.eval_probs).to_csv(
            scale_dir / "predictions.csv", index=False
        )
        write_checkpoint(scale_dir / "checkpoint.bin", b.params, b.scale)
        write_attention_maps(scale_dir / "attention", result.eval_ids, b.eval_attention)
    return out_dir


def read_run(run_dir):
    """``(PipelineConfig, [BranchParams per scale])`` of a written run"""
    run_dir = Path(run_dir)
    config = read_config(run_dir)
    params = []
    for s in range(1, config.scales + 1):
        p, scale = read_checkpoint(run_dir / f"scale_{s}" / "checkpoint.bin")
        if scale != s:
            raise CheckpointError(f"scale_{s}/checkpoint.bin claims to be scale {scale}")
        params.append(p)
    return config, params


def write_table(path, rows, first_column="Method"):
    Path(path).write_text(format_table(rows, first_column))


def write_ablation(out_dir, ablation):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(
        out_dir / "ablation.json",
        {
            "seeds": ablation.seeds,
            "repeats": rows_to_dict(
                [(f"seed {s}", m) for s, m in zip(ablation.seeds, ablation.repeat_metrics)]
            ),
            "rows": rows_to_dict(ablation.rows()),
        },
    )
    write_table(out_dir / "ablation.txt", ablation.rows())


def lambda_dir_name(lam):
    return f"lambda_{lam:g}"


def write_sweep(out_dir, sweep):
    """sweep.json, sweep.txt (one row per lambda) and one run directory per lambda"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    points = []
    for lam, result in sweep:
        write_run(out_dir / lambda_dir_name(lam), result)
        entry = {"lambda": lam, "run": lambda_dir_name(lam)}
        entry.update(result.fused_metrics.to_dict())
        entry["scales"] = rows_to_dict(result.rows()[:-1])
        points.append(entry)
    write_json(out_dir / "sweep.json", {"points": points})
    write_table(
        out_dir / "sweep.txt",
        [(f"{lam:g}", result.fused_metrics) for lam, result in sweep],
        first_column="lambda",
    )
