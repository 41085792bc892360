"""Command-line entry point: ``transa <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import hashlib
import json
import logging
import shutil
import sys
import tempfile
from pathlib import Path

import click
import numpy as np

from transa import analysis, data, evaluation, experiment, margin
from transa.model import EmbeddingModel, NumericError, train

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class VocabularyMismatch(data.DataError):
    pass


def _digest(directory: Path) -> str:
    h = hashlib.sha256()
    for name in ("entities.tsv", "relations.tsv", "train.tsv", "valid.tsv", "test.tsv"):
        h.update((directory / name).read_bytes())
    return h.hexdigest()


def _load_graph_dir(path) -> data.KnowledgeGraph:
    path = Path(path)
    if not (path / "entities.tsv").exists():
        raise data.DataError(f"{path} is not an ingested graph directory (run `transa ingest`)")
    return data.read_graph(path)


def _load_checkpoint(path, graph) -> EmbeddingModel:
    model = EmbeddingModel.load(path)
    if (model.n_entities, model.n_relations) != (graph.n_entities, graph.n_relations):
        raise VocabularyMismatch(
            f"checkpoint has {model.n_entities} entities / {model.n_relations} relations, "
            f"graph has {graph.n_entities} entities / {graph.n_relations} relations"
        )
    return model


def _write_report(out: Path, stem: str, payload: dict, table: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(json.dumps(payload, indent=2, default=float))
    (out / f"{stem}.tsv").write_text(table)


def train_options(fn):
    opts = [
        click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False)),
        click.option("--preset", type=click.Choice(sorted(experiment.PRESETS))),
        click.option("--lr", type=float),
        click.option("--dim", type=int),
        click.option("--batch", "batch_size", type=int),
        click.option("--mu", type=float),
        click.option("--epochs", type=int),
        click.option("--margin-mode", help="adaptive, adaptive-global or fixed:<M>"),
        click.option("--dissim", "dissimilarity", type=click.Choice(["l1", "l2", "l2sq"])),
        click.option("--refresh-every", "margin_refresh_every", type=int),
        click.option("--active-fraction", type=float),
        click.option("--active-rounds", type=int),
        click.option("--early-stop-every", type=int),
        click.option("--seed", type=int),
        click.option("--threads", type=int),
        click.option("--out", type=click.Path(file_okay=False)),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _resolve(graph_dir, config_file, preset, **flags) -> experiment.ExperimentConfig:
    """defaults < preset < config file < explicit flags."""
    cfg = experiment.ExperimentConfig(graph=str(graph_dir))
    if preset:
        cfg.train = experiment.apply_preset(cfg.train, preset)
    if config_file:
        cfg = cfg.override(**experiment.parse_text(Path(config_file).read_text()))
    cfg = cfg.override(graph=str(graph_dir), **flags)
    if flags.get("out") is None and config_file is None:
        cfg.out = str(Path("runs") / Path(graph_dir).name)
    return cfg


@click.group()
@click.option("-v", "--verbose", count=True)
def cli(verbose):
    """Locally adaptive translation embeddings for knowledge graphs."""
    level = logging.WARNING - 10 * verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.argument("paths", nargs=-1, required=True)
@click.option("--format", "fmt", type=click.Choice(data.FORMATS), default="tsv-names")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def ingest(paths, fmt, out):
    """Load TRAIN [VALID [TEST]] triple files (or one graph directory) and persist them.

    A single directory argument may hold either an earlier `ingest` output or
    raw train.txt/valid.txt/test.txt files.
    """
    if len(paths) == 1 and Path(paths[0]).is_dir():
        src = Path(paths[0])
        if (src / "entities.tsv").exists():
            graph = data.read_graph(src)
        else:
            files = [src / f"{s}.txt" for s in data.SPLITS]
            graph = data.load_graph(*[f if f.exists() or i == 0 else None for i, f in enumerate(files)], format=fmt)
    elif len(paths) <= 3:
        graph = data.load_graph(*paths, format=fmt)
    else:
        raise click.UsageError("expected at most three triple files")
    # Write to a temporary sibling first so a failure leaves no partial output.
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out.parent, prefix=".ingest-"))
    try:
        data.save_graph(graph, tmp)
        if out.exists():
            shutil.rmtree(out)
        tmp.rename(out)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)
    click.echo(graph.summary())
    click.echo(f"sha256={_digest(out)}")


@cli.command()
@click.argument("graph_dir", type=click.Path(exists=True, file_okay=False))
@click.option("-k", "--k", "k", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def partition(graph_dir, k, seed, out):
    """Split GRAPH_DIR into K subgraphs with equal relation counts."""
    graph = _load_graph_dir(graph_dir)
    try:
        parts = data.partition(graph, k, seed)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    out = Path(out)
    meta = {"source": str(graph_dir), "k": k, "seed": seed, "parts": []}
    for i, part in enumerate(parts, 1):
        data.save_graph(part.graph, out / f"part{i}")
        meta["parts"].append(
            {"dir": f"part{i}", "summary": part.graph.summary(), "relations": part.relation_names}
        )
        click.echo(f"part{i}: {part.graph.summary()}")
    (out / "partition.json").write_text(json.dumps(meta, indent=2))


@cli.command("train")
@click.argument("graph_dir", type=click.Path(exists=True, file_okay=False))
@train_options
@click.option("--grid", type=click.Choice(sorted(experiment.GRIDS)), help="select hyperparameters on validation first")
def train_cmd(graph_dir, config_file, preset, grid, **flags):
    """Train embeddings on GRAPH_DIR."""
    graph = _load_graph_dir(graph_dir)
    cfg = _resolve(graph_dir, config_file, preset, **flags)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if grid:
        best, results = experiment.grid_search(graph, cfg.train, experiment.GRIDS[grid])
        cfg.train = best
        (out / "grid.json").write_text(json.dumps(results, indent=2))
    cfg.write(out / "config.txt")
    log_path = out / "train_log.jsonl"
    with open(log_path, "w") as log_fh:
        def on_epoch(entry):
            log_fh.write(json.dumps(entry) + "\n")
            log_fh.flush()

        try:
            result = train(graph, cfg.train, on_epoch=on_epoch)
        except NumericError as exc:
            if exc.model is not None:
                exc.model.save(out / "model", {"config": cfg.to_flat(), "aborted": str(exc)})
            raise
    meta = {
        "config": cfg.to_flat(),
        "epochs_run": len(result.history),
        "stopped_early": result.stopped_early,
    }
    if result.margin_table is not None:
        meta["margin_table"] = result.margin_table.summary()
    path = result.model.save(out / "model", meta)
    click.echo(f"wrote {path}")


@cli.command("eval")
@click.argument("graph_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--task", type=click.Choice(["lp", "tc"]), default="lp", show_default=True)
@click.option("--split", type=click.Choice(data.SPLITS), default="test", show_default=True)
@click.option("--valid-labeled", type=click.Path(exists=True, dir_okay=False))
@click.option("--test-labeled", type=click.Path(exists=True, dir_okay=False))
@click.option("--hits", default="1,3,10", show_default=True)
@click.option("--per-relation", is_flag=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(file_okay=False))
def eval_cmd(graph_dir, checkpoint, task, split, valid_labeled, test_labeled, hits, per_relation, seed, threads, out):
    """Evaluate CHECKPOINT on GRAPH_DIR (link prediction or triple classification)."""
    graph = _load_graph_dir(graph_dir)
    model = _load_checkpoint(checkpoint, graph)
    out = Path(out) if out else Path(checkpoint).parent
    if task == "lp":
        ks = tuple(int(k) for k in hits.split(","))
        report = evaluation.link_prediction(model, graph, split, ks, threads, per_relation)
        _write_report(out, "eval_lp", report.to_dict(), report.to_table())
        click.echo(report.to_table(), nl=False)
        return
    rng = np.random.default_rng(seed)
    flagged = []
    if valid_labeled:
        vpos, vneg = data.load_labeled(valid_labeled, graph)
    else:
        vpos = graph.valid
        vneg, fb = evaluation.make_negatives(vpos, graph, rng)
        flagged += fb
    if test_labeled:
        tpos, tneg = data.load_labeled(test_labeled, graph)
    else:
        tpos = graph.test
        tneg, fb = evaluation.make_negatives(tpos, graph, rng)
        flagged += fb
    thr = evaluation.fit_thresholds(model, vpos, vneg, relations=range(graph.n_relations))
    acc = evaluation.triple_classification(model, thr, tpos, tneg)
    payload = {
        "accuracy": acc,
        "valid_accuracy": thr.accuracy,
        "n_test_pos": len(tpos),
        "n_test_neg": len(tneg),
        "negatives_fallback_relations": sorted(set(flagged)),
        **thr.to_dict(),
    }
    table = evaluation.format_table(
        ["metric", "value"], [["accuracy", f"{100 * acc:.1f}"], ["valid_accuracy", f"{100 * thr.accuracy:.1f}"]]
    )
    _write_report(out, "eval_tc", payload, table)
    click.echo(table, nl=False)


@cli.command()
@click.argument("graph_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("-M", "--margin", "margins", type=float, multiple=True, default=(1.0,), show_default=True)
@click.option("--delta", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False))
def bound(graph_dir, checkpoint, margins, delta, seed, out):
    """Empirical risk, stability constant and generalization bound of CHECKPOINT."""
    if not 0 < delta < 1:
        raise click.UsageError("--delta must lie in (0, 1)")
    graph = _load_graph_dir(graph_dir)
    model = _load_checkpoint(checkpoint, graph)
    reports = [analysis.risk_report(model, graph, m, delta, seed, held_out="valid") for m in margins]
    cols = ["margin", "empirical_risk", "f_hat", "beta", "n", "delta", "bound"]
    rows = [[repr(getattr(r, c)) for c in cols] for r in reports]
    table = evaluation.format_table(cols, rows)
    out = Path(out) if out else Path(checkpoint).parent
    _write_report(out, "bound", {"reports": [json.loads(r.to_json()) for r in reports]}, table)
    click.echo(table, nl=False)


@cli.command()
@click.argument("graph_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--margins", default="1,2,10", show_default=True, help="comma-separated margins")
@click.option("--partition", "k", type=int, help="sweep each of K relation partitions as well")
@click.option("--delta", type=float, default=0.05, show_default=True)
@train_options
def sweep(graph_dir, margins, k, delta, config_file, preset, **flags):
    """Fixed-margin (TransE) sweep reporting ranks, risk and bound per margin."""
    graph = _load_graph_dir(graph_dir)
    cfg = _resolve(graph_dir, config_file, preset, **flags)
    try:
        values = [float(m) for m in margins.split(",")]
    except ValueError:
        raise click.UsageError(f"bad --margins {margins!r}") from None
    out = Path(cfg.out)
    cfg.write(out / "config.txt")
    targets = [("full", graph)]
    if k:
        targets += [(f"part{i}", p.graph) for i, p in enumerate(data.partition(graph, k, cfg.train.seed), 1)]
    for name, g in targets:
        report = analysis.margin_sweep(g, values, cfg.train, delta, name=name)
        report.write(out, f"sweep_{name}")
        click.echo(f"# {name}: {g.summary()}")
        click.echo(report.to_tsv(), nl=False)


@cli.command()
@click.argument("graph_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--mu", type=float, default=0.5, show_default=True)
@click.option("--active-fraction", type=float)
@click.option("--active-rounds", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def export(graph_dir, checkpoint, mu, active_fraction, active_rounds, seed, out):
    """Dump embeddings and the margin table as TSV."""
    graph = _load_graph_dir(graph_dir)
    model = _load_checkpoint(checkpoint, graph)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    active = None
    if active_fraction is not None:
        active = margin.ActiveSetConfig(active_fraction, active_rounds, seed)
    table = margin.refresh_table(graph, data.build_index(graph), model, mu, active)
    table.to_tsv(out)
    for fname, vocab, mat in (
        ("entity_vectors.tsv", graph.entities, model.entity_vecs),
        ("relation_vectors.tsv", graph.relations, model.relation_vecs),
    ):
        with open(out / fname, "w", encoding="utf-8") as fh:
            fh.write(f"# {mat.shape[0]}\t{mat.shape[1]}\t{model.dissimilarity}\n")
            for name, row in zip(vocab, mat):
                fh.write(name + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")
    (out / "margins_summary.json").write_text(json.dumps(table.summary(), indent=2))
    click.echo(json.dumps(table.summary()))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="transa", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_DATA
    except NumericError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_NUMERIC
    except (data.DataError, FileNotFoundError, margin.MarginError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
