"""Operator CLI: train, serve, eval, transfer, diagnostics, library management."""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Optional

import click

from .config import (
    backends_from_config,
    base_prompt_from_dict,
    load_config_file,
    trainer_config_from_dict,
)
from .domain import BulletKind, StrategyBullet
from .evaluation import (
    ExemplarSet,
    display_mean,
    half_conversation_delta,
    keyword_strategy_share,
    render_report_json,
    render_report_tsv,
    shift_stats,
)
from .library import edit_entry, load_library_file, save_library, save_library_file
from .offline import offline_backends
from .prompts import render_strategy_text


def _load(config: Optional[str]) -> dict:
    return load_config_file(config) if config else {}


def _resolve_backends(doc: dict, offline: bool):
    if offline:
        return offline_backends()
    return backends_from_config(doc)


@click.group()
def main():
    """Strategy-library distillation toolkit."""


@main.command()
@click.option("--config", type=click.Path(exists=True), help="JSON config file.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "out_dir", type=click.Path(), default="run",
              help="Run directory for checkpoints and transcripts.")
@click.option("--resume", "resume_dir", type=click.Path(exists=True), default=None,
              help="Continue from this run directory's checkpoint.")
@click.option("--offline", is_flag=True, help="Use the built-in scripted backends.")
def train(config, seed, out_dir, resume_dir, offline):
    """Build a scenario-strategy library."""
    from .trainer import train as run_train

    doc = _load(config)
    cfg = trainer_config_from_dict(doc.get("trainer", {}))
    if seed is not None:
        cfg.seed = seed
    backends = _resolve_backends(doc, offline)
    base = base_prompt_from_dict(doc.get("base_prompt"))
    if resume_dir is not None:
        out_dir = resume_dir
    result = run_train(cfg, backends, base, run_dir=out_dir, resume=resume_dir is not None)
    for r in result.reports:
        click.echo(
            f"iteration {r.t}: +{r.new_entries} entries (n={r.library_size}) "
            f"score={display_mean(r.validation_score)} "
            f"generators teacher={r.generator_counts[0]} student={r.generator_counts[1]}"
        )
    click.echo(f"stopped: {result.termination_reason}; library at {out_dir}/library.json")


@main.command()
@click.option("--config", type=click.Path(exists=True), required=True)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8080)
@click.option("--offline", is_flag=True, help="Use the built-in scripted backends.")
def serve(config, host, port, offline):
    """Run the deployment service."""
    import uvicorn

    from .service import DeployConfig, create_app

    doc = _load(config)
    deploy = doc.get("deploy", {})
    cfg = DeployConfig(
        backends=_resolve_backends(doc, offline),
        library_path=deploy.get("library_path"),
        k=int(deploy.get("k", 1)),
        token_budget=int(deploy.get("token_budget", 512)),
        fallback_on_empty=bool(deploy.get("fallback_on_empty", True)),
        state_dir=deploy.get("state_dir"),
        context=deploy.get("context", "ticket-cancellation"),
        admin_token=deploy.get("admin_token"),
        base=base_prompt_from_dict(doc.get("base_prompt")),
    )
    uvicorn.run(create_app(cfg), host=host, port=port)


@main.command("eval")
@click.option("--config", type=click.Path(exists=True))
@click.option("--library", "library_path", type=click.Path(exists=True), required=True)
@click.option("--context", default=None, help="Defaults to the library's own context.")
@click.option("--n", "n_conversations", type=int, default=8)
@click.option("--k", type=int, default=1)
@click.option("--exemplar-set", type=click.Choice(["demanding", "non_demanding"]),
              default="demanding")
@click.option("--seed", type=int, default=0)
@click.option("--offline", is_flag=True)
def eval_cmd(config, library_path, context, n_conversations, k, exemplar_set, seed, offline):
    """Judge fresh student conversations under a library."""
    from .trainer import EvalRunConfig, transfer_run

    doc = _load(config)
    lib = load_library_file(library_path)
    cfg = EvalRunConfig(
        n_conversations=n_conversations, k=k, seed=seed,
        exemplar_set=ExemplarSet(exemplar_set),
    )
    backends = _resolve_backends(doc, offline)
    base = base_prompt_from_dict(doc.get("base_prompt"))
    report = transfer_run(lib, context or lib.context_tag, cfg, backends, base)
    click.echo(render_report_tsv([report]))
    click.echo(render_report_json([report]))


@main.command()
@click.option("--config", type=click.Path(exists=True))
@click.option("--library", "library_path", type=click.Path(exists=True), required=True)
@click.option("--context", required=True, help="Target context name or description.")
@click.option("--student", default=None, help="Override the student model id (remote).")
@click.option("--n", "n_conversations", type=int, default=8)
@click.option("--k", type=int, default=1)
@click.option("--seed", type=int, default=0)
@click.option("--offline", is_flag=True)
def transfer(config, library_path, context, student, n_conversations, k, seed, offline):
    """Reuse a library with another student model or task context."""
    from .trainer import EvalRunConfig, transfer_run

    doc = _load(config)
    lib = load_library_file(library_path)
    backends = _resolve_backends(doc, offline)
    if student:
        backends.student.model_id = student
    base = base_prompt_from_dict(doc.get("base_prompt"))
    cfg = EvalRunConfig(n_conversations=n_conversations, k=k, seed=seed)
    report = transfer_run(lib, context, cfg, backends, base)
    click.echo(render_report_tsv([report]))
    click.echo(render_report_json([report]))


@main.group()
def diag():
    """Distribution-shift and strategy-content diagnostics."""


def _read_distances(path: str) -> list[float]:
    text = Path(path).read_text(encoding="utf-8").strip()
    if text.startswith("["):
        return [float(x) for x in json.loads(text)]
    return [float(line) for line in text.splitlines() if line.strip()]


@diag.command()
@click.option("--deploy", "deploy_path", type=click.Path(exists=True), required=True,
              help="Deployment retrieval distances (JSON array or one per line).")
@click.option("--baseline", "baseline_path", type=click.Path(exists=True), required=True)
def shift(deploy_path, baseline_path):
    """Average retrieval distance vs a baseline, with percent increase."""
    stats = shift_stats(_read_distances(deploy_path), _read_distances(baseline_path))
    click.echo(f"mean_distance\t{stats.mean_distance:.3f}")
    click.echo(f"baseline_mean_distance\t{stats.baseline_mean_distance:.3f}")
    click.echo(f"pct_increase\t{stats.pct_increase:.1f}%")


@diag.command()
@click.option("--original-full", type=float, required=True)
@click.option("--ablated-full", type=float, required=True)
@click.option("--original-half", type=float, required=True)
@click.option("--ablated-half", type=float, required=True)
def halves(original_full, ablated_full, original_half, ablated_half):
    """Rating drop on half vs full conversations."""
    d_half, d_full = half_conversation_delta(original_full, ablated_full,
                                             original_half, ablated_half)
    click.echo(f"delta_half\t{d_half:.1f}%")
    click.echo(f"delta_full\t{d_full:.1f}%")


@diag.command()
@click.option("--library", "library_path", type=click.Path(exists=True), required=True)
@click.option("--keywords", default="concise,brevity,excessive",
              help="Comma-separated, case-insensitive.")
def keywords(library_path, keywords):
    """Share of entries whose strategies mention any keyword."""
    lib = load_library_file(library_path)
    kws = [k.strip() for k in keywords.split(",") if k.strip()]
    share = keyword_strategy_share(lib, kws)
    click.echo(f"share\t{share:.3f}")


@main.group()
def library():
    """Inspect and edit a stored library."""


@library.command()
@click.option("--library", "library_path", type=click.Path(exists=True), required=True)
@click.option("--id", "entry_id", type=int, default=None)
def show(library_path, entry_id):
    """List entries, or print one entry in full."""
    lib = load_library_file(library_path)
    if entry_id is None:
        click.echo(f"context={lib.context_tag} model={lib.embedding_model_id} n={lib.n}")
        for e in lib.entries:
            click.echo(
                f"  #{e.entry_id}\t{e.status.value}\trev={e.strategy.revision}"
                f"\tbullets={len(e.strategy.bullets)}\titer={e.created_iteration}"
            )
        return
    entry = lib.get(entry_id)
    click.echo(f"entry #{entry.entry_id} [{entry.status.value}] revision {entry.strategy.revision}")
    for u in entry.scenario.utterances:
        click.echo(f"  {u.speaker.value.upper()}: {u.text}")
    click.echo(render_strategy_text(entry.strategy) or "(no bullets)")


@library.command()
@click.option("--library", "library_path", type=click.Path(exists=True), required=True)
@click.option("--id", "entry_id", type=int, required=True)
@click.option("--editor", required=True)
@click.option("--bullets-file", type=click.Path(exists=True), required=True,
              help='JSON list of {"kind": "do"|"avoid", "text": ...}.')
def edit(library_path, entry_id, editor, bullets_file):
    """Replace an entry's bullets (recorded in the edit log)."""
    lib = load_library_file(library_path)
    items = json.loads(Path(bullets_file).read_text(encoding="utf-8"))
    bullets = [StrategyBullet(int(b.get("bullet_id", 0)), BulletKind(b["kind"]), b["text"])
               for b in items]
    revision = edit_entry(lib, entry_id, bullets, editor)
    save_library_file(lib, library_path)
    click.echo(f"entry #{entry_id} now at revision {revision}")


@library.command()
@click.option("--library", "library_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), default=None, help="Defaults to stdout.")
def export(library_path, out):
    """Write the library JSON (normalized) to a file or stdout."""
    lib = load_library_file(library_path)
    data = save_library(lib)
    if out:
        Path(out).write_bytes(data)
        click.echo(f"wrote {out}")
    else:
        sys.stdout.write(data.decode("utf-8"))


if __name__ == "__main__":
    main()
