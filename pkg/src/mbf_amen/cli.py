import sys
from pathlib import Path

import click

from .data import gen_synthetic, load_image_dir, save_dataset, split
from .exceptions import AmenError, ArgumentError
from .metrics import evaluate, format_table
from .parser import config_to_json, default_config as default_config_dict, parse_config
from .pipeline import PROFILES, infer_chain, run_ablation, run_pipeline, vote_details
from .pipeline import sweep_lambda as run_sweep
from .rundir import (
    RunManifest,
    now_iso,
    predictions_frame,
    read_run,
    rows_to_dict,
    write_ablation,
    write_attention_maps,
    write_config,
    write_run,
    write_json,
    write_sweep,
)
from .util import scale_name


def config_options(func):
    """--config / --profile / --seed / --scales / --lambda"""
    func = click.option(
        "--lambda", "lambda_", type=float, default=None,
        help="enhancement weight for scales 2..S",
    )(func)
    func = click.option("--scales", type=int, default=None, help="number of branches")(func)
    func = click.option("--seed", type=int, default=None)(func)
    func = click.option(
        "--profile", type=click.Choice(sorted(PROFILES)), default="desk", show_default=True
    )(func)
    func = click.option(
        "--config", "config_file", type=click.Path(dir_okay=False), default=None,
        help="JSON (or .toml) config file",
    )(func)
    return func


def get_config(config_file, profile, seed, scales, lambda_):
    return parse_config(
        config_file, profile, {"seed": seed, "scales": scales, "lambda": lambda_}
    )


def get_splits(data, config):
    dataset = load_image_dir(data, image_size=config.image_size)
    return split(dataset, config.eval_fraction, config.seed)


@click.group()
def main():
    """Multi-branch attention enhanced image classification"""
    pass


@main.command()
@click.option("--n", "n", type=int, default=400, show_default=True)
@click.option("--image-size", type=int, default=32, show_default=True)
@click.option("--detail-size", type=int, default=5, show_default=True)
@click.option("--noise", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def gen_data(n, image_size, detail_size, noise, seed, out):
    """Write a synthetic two-class dataset (PGM images + manifest.csv)"""
    dataset = gen_synthetic(n, image_size, detail_size, noise, seed)
    manifest = save_dataset(dataset, out)
    click.echo(f"wrote {len(dataset)} images, manifest {manifest}")


@main.command()
@config_options
@click.option("--data", type=click.Path(file_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def train(config_file, profile, seed, scales, lambda_, data, out):
    """Train all scales and write the run directory"""
    config = get_config(config_file, profile, seed, scales, lambda_)
    train_split, eval_split = get_splits(data, config)
    manifest = RunManifest(config, "train", data, ["metrics.json", "fused_predictions.csv"])
    manifest.write(out)
    result = run_pipeline(train_split, eval_split, config)
    write_run(out, result)
    manifest.finished = now_iso()
    manifest.write(out)
    click.echo(format_table(result.rows()), nl=False)
    click.echo(f"run written to {out}")


@main.command("eval")
@click.option("--run", "run_dir", type=click.Path(file_okay=False, exists=True), required=True)
@click.option("--data", type=click.Path(file_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def eval_(run_dir, data, out):
    """Score the checkpoints of a run on a dataset"""
    config, params = read_run(run_dir)
    num_classes = params[0].spec.num_classes
    dataset = load_image_dir(data, image_size=config.image_size, num_classes=num_classes)
    if len(dataset) == 0:
        raise ArgumentError(f"no images in {data}")
    outputs = infer_chain(params, dataset, config)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for s, (probs, _) in enumerate(outputs, 1):
        report = evaluate(
            dataset.labels, probs.argmax(axis=1), config.positive_class, num_classes
        )
        rows.append((scale_name(s), report))
        scale_dir = out / f"scale_{s}"
        scale_dir.mkdir(exist_ok=True)
        predictions_frame(dataset.ids, dataset.labels, probs).to_csv(
            scale_dir / "predictions.csv", index=False
        )
    fused, tie_breaks = vote_details(
        [p.argmax(axis=1) for p, _ in outputs], [p for p, _ in outputs]
    )
    rows.append(
        ("AMEN", evaluate(dataset.labels, fused, config.positive_class, num_classes))
    )
    write_config(out, config)
    write_json(
        out / "metrics.json",
        {"rows": rows_to_dict(rows), "eval_size": len(dataset), "vote_tie_breaks": tie_breaks},
    )
    click.echo(format_table(rows), nl=False)


@main.command()
@config_options
@click.option("--data", type=click.Path(file_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--repeats", type=int, default=3, show_default=True)
def ablate(config_file, profile, seed, scales, lambda_, data, out, repeats):
    """Single-branch repeats (Average, Boosting) next to the multi-branch run"""
    config = get_config(config_file, profile, seed, scales, lambda_)
    train_split, eval_split = get_splits(data, config)
    RunManifest(config, "ablate", data, ["ablation.json", "ablation.txt"]).write(out)
    ablation = run_ablation(train_split, eval_split, config, repeats=repeats)
    write_run(out, ablation.pipeline_result)
    write_ablation(out, ablation)
    click.echo(format_table(ablation.rows()), nl=False)


@main.command()
@config_options
@click.option("--data", type=click.Path(file_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def sweep_lambda(config_file, profile, seed, scales, lambda_, data, out):
    """Rerun the pipeline for lambda in 1e-5, 1e-4, 1e-3, 1e-2"""
    config = get_config(config_file, profile, seed, scales, lambda_)
    train_split, eval_split = get_splits(data, config)
    RunManifest(config, "sweep-lambda", data, ["sweep.json", "sweep.txt"]).write(out)
    sweep = run_sweep(train_split, eval_split, config)
    write_sweep(out, sweep)
    click.echo((Path(out) / "sweep.txt").read_text(), nl=False)


@main.command()
@click.option("--run", "run_dir", type=click.Path(file_okay=False, exists=True), required=True)
@click.option("--data", type=click.Path(file_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def export_attention(run_dir, data, out):
    """Write each scale's attention maps of a dataset as 8-bit PGM"""
    config, params = read_run(run_dir)
    dataset = load_image_dir(data, image_size=config.image_size)
    outputs = infer_chain(params, dataset, config)
    for s, (_, maps) in enumerate(outputs, 1):
        write_attention_maps(Path(out) / f"scale_{s}" / "attention", dataset.ids, maps)
    click.echo(f"wrote {len(dataset) * len(outputs)} attention maps to {out}")


@main.command()
@click.option(
    "--profile", type=click.Choice(sorted(PROFILES)), default="desk", show_default=True
)
def default_config(profile):
    """Print the default config of a profile"""
    import json

    click.echo(json.dumps(default_config_dict(profile), indent=2, sort_keys=True))


@main.command()
@config_options
def show_config(config_file, profile, seed, scales, lambda_):
    """Print the config as it is actually used"""
    config = get_config(config_file, profile, seed, scales, lambda_)
    click.echo(config_to_json(config), nl=False)
    click.echo("lambda per scale: " + ", ".join(f"{x:g}" for x in config.lambdas))


@main.command()
def version():
    import mbf_amen

    click.echo("mbf_amen version %s" % mbf_amen.__version__)


def run_command(argv):
    """Run the command line ``argv`` (without the program name); returns the exit code"""
    try:
        rv = main.main(args=list(argv), prog_name="amen", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except (AmenError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        return 1
    return rv if isinstance(rv, int) else 0


def cli_entry():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    cli_entry()
