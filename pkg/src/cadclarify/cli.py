"""Command-line entry points for the batch pipelines and the service."""

from __future__ import annotations

import json
import time
from pathlib import Path

import click

from . import __version__
from .agents import (
    AgentEndpoints,
    PromptRecord,
    RunSettings,
    TemplateRegistry,
    run_two_agent,
)
from .ambiguity import (
    balance_and_split,
    emit_supervision,
    perturb,
    record_from_json,
    record_to_json,
    render_split_statistics,
    select,
    self_refine,
    split_statistics,
)
from .annotation import (
    AnnotationDeps,
    CuratedSample,
    SourceSample,
    annotate_with_retry,
    curate_corpus,
)
from .config import RunConfig, build_executor, build_gateway, load_config
from .errors import CadClarifyError
from .evaluation import JudgeEndpoints, build_report, render_report_table, score_trajectory
from .geometry import render_census
from .jsonio import read_jsonl, write_jsonl
from .protocol import AmbiguityKind, Prompt
from .service import ServiceDeps, build_app
from .store import SessionStore


def _templates(config: RunConfig) -> TemplateRegistry:
    return TemplateRegistry(config.templates_dir) if config.templates_dir else TemplateRegistry()


def _write_manifest(out_dir: Path, command: str, config: RunConfig,
                    templates: TemplateRegistry, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config_digest": config.digest(),
        "template_hashes": templates.manifest(),
        "endpoints": {role: spec.model for role, spec in config.endpoints.items()},
        "seeds": {"sampling": config.seed},
        "thresholds": {
            "completeness_cd": config.completeness_cd,
            "select_cd": config.select_cd,
            "select_ratio": config.select_ratio,
            "curate_cd": config.curate_cd,
        },
        "executor_timeout": config.executor_timeout,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        **(extra or {}),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def _done_ids(path: Path) -> set[str]:
    if not path.exists():
        return set()
    return {row["id"] for row in read_jsonl(path)}


@click.group()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Run config YAML.")
@click.pass_context
def main(ctx, config_path):
    """Clarify-then-code text-to-CAD harness."""
    ctx.ensure_object(dict)
    try:
        ctx.obj["config"] = load_config(config_path)
    except CadClarifyError as exc:
        raise click.ClickException(str(exc))


@main.command()
@click.option("--corpus", required=True, type=click.Path(exists=True),
              help="JSONL of {id, code, images?} source samples.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def annotate(ctx, corpus, out_dir):
    """Describe each program, verify leakage and completeness, escalate failures."""
    config: RunConfig = ctx.obj["config"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results_path = out / "annotations.jsonl"
    done = _done_ids(results_path)
    templates = _templates(config)
    gw = build_gateway(config)
    executor = build_executor(config)
    deps = AnnotationDeps(
        gw=gw,
        describe_endpoint=config.endpoints["describe"].to_endpoint(),
        judge_endpoint=config.endpoints["judge"].to_endpoint(),
        coder_endpoint=config.endpoints["coder"].to_endpoint(),
        describe_template=templates.get("describe"),
        leakage_template=templates.get("leakage_judge"),
        coder_template=templates.get("coder"),
        executor=executor,
        threshold=config.completeness_cd,
        sample_count=config.surface_points,
        seed=config.seed,
        escalation_path=str(out / "escalation.jsonl"),
    )
    n_done = n_accepted = 0
    try:
        with open(results_path, "a", encoding="utf-8") as fh:
            for row in read_jsonl(corpus):
                if row["id"] in done:
                    continue
                gt = executor.execute(row["code"], config.executor_timeout)
                if gt.status != "ok" or gt.mesh is None:
                    click.echo(f"skip {row['id']}: source code does not execute", err=True)
                    continue
                sample = SourceSample(
                    id=row["id"], cadquery_code=row["code"], gt_mesh=gt.mesh,
                    images=tuple(row.get("images", [])),
                )
                outcome = annotate_with_retry(sample, deps)
                fh.write(json.dumps({
                    "id": sample.id, "code": sample.cadquery_code,
                    "description": outcome.description, "status": outcome.status,
                    "attempts": outcome.attempts, "cd": outcome.completeness_cd,
                    "lints": list(outcome.lints),
                }, ensure_ascii=False) + "\n")
                fh.flush()
                n_done += 1
                n_accepted += outcome.status == "Accepted"
    finally:
        executor.close()
    pass_rate = 100.0 * n_accepted / n_done if n_done else 0.0
    _write_manifest(out, "annotate", config, templates,
                    {"n_processed": n_done, "n_accepted": n_accepted,
                     "pass_rate_percent": pass_rate})
    click.echo(f"annotated {n_done} samples, {n_accepted} accepted ({pass_rate:.1f}%)")


@main.command(name="perturb")
@click.option("--prompts", required=True, type=click.Path(exists=True),
              help="JSONL of {id, text, code} verified prompts with reference programs.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--issues", type=click.Choice(["1", "2"]), default="1", help="Ambiguities per record.")
@click.option("--kind", type=click.Choice(["under-specified", "conflicting"]),
              default="under-specified")
@click.pass_context
def perturb_cmd(ctx, prompts, out_dir, issues, kind):
    """Manufacture ambiguous prompts and apply the harm-selection rules."""
    config: RunConfig = ctx.obj["config"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records_path = out / "records.jsonl"
    done = _done_ids(records_path)
    templates = _templates(config)
    gw = build_gateway(config)
    executor = build_executor(config)
    kind_enum = (AmbiguityKind.UNDER_SPECIFIED if kind == "under-specified"
                 else AmbiguityKind.CONFLICTING)
    n_kept = n_total = 0
    try:
        with open(records_path, "a", encoding="utf-8") as fh:
            for row in read_jsonl(prompts):
                if row["id"] in done:
                    continue
                gt = executor.execute(row["code"], config.executor_timeout)
                if gt.status != "ok" or gt.mesh is None:
                    click.echo(f"skip {row['id']}: reference does not execute", err=True)
                    continue
                record = perturb(
                    row["text"], (kind_enum,), int(issues), gw,
                    config.endpoints["perturb"].to_endpoint(), templates.get("perturb"),
                )
                record = self_refine(
                    record, gw, config.endpoints["perturb"].to_endpoint(), templates.get("refine")
                )
                verdict = select(
                    record, gw, config.endpoints["coder"].to_endpoint(), templates.get("coder"),
                    executor, gt.mesh, config.select_cd, config.surface_points, config.seed,
                    config.executor_timeout,
                )
                fh.write(json.dumps({
                    "id": row["id"], **record_to_json(record),
                    "keep": verdict.keep, "cd_right": verdict.cd_right,
                    "cd_misleading": verdict.cd_misleading,
                    "ratio": verdict.ratio, "reason": verdict.reason,
                }, ensure_ascii=False) + "\n")
                fh.flush()
                n_total += 1
                n_kept += verdict.keep
    finally:
        executor.close()
    _write_manifest(out, "perturb", config, templates,
                    {"n_processed": n_total, "n_kept": n_kept})
    click.echo(f"perturbed {n_total} prompts, kept {n_kept}")


@main.command()
@click.option("--corpus", required=True, type=click.Path(exists=True),
              help="JSONL of {id, code, cd} samples carrying their reference CD.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def curate(ctx, corpus, out_dir):
    """CD-filter and geometry-dedup a corpus; write the threshold census."""
    config: RunConfig = ctx.obj["config"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    templates = _templates(config)
    executor = build_executor(config)
    samples = []
    try:
        for row in read_jsonl(corpus):
            outcome = executor.execute(row["code"], config.executor_timeout)
            if outcome.status != "ok" or outcome.mesh is None:
                click.echo(f"skip {row['id']}: code does not execute", err=True)
                continue
            samples.append(
                CuratedSample(id=row["id"], code=row["code"], cd=float(row["cd"]),
                              mesh=outcome.mesh)
            )
    finally:
        executor.close()
    if not samples:
        raise click.ClickException("no executable samples in corpus")
    result = curate_corpus(samples, config.curate_cd)
    write_jsonl(out / "kept.jsonl", ({"id": s.id, "code": s.code, "cd": s.cd} for s in result.kept))
    census_text = render_census(list(result.census_rows))
    (out / "census.txt").write_text(census_text, encoding="utf-8")
    (out / "census.json").write_text(json.dumps(list(result.census_rows), indent=2), encoding="utf-8")
    _write_manifest(out, "curate", config, templates, {
        "n_input": len(samples), "n_kept": len(result.kept),
        "n_dropped_cd": len(result.dropped_cd), "n_dropped_dup": len(result.dropped_dup),
    })
    click.echo(census_text)
    click.echo(f"kept {len(result.kept)}/{len(samples)}")


@main.command(name="emit-sft")
@click.option("--records", required=True, type=click.Path(exists=True),
              help="JSONL of perturbed records (kept rows from perturb).")
@click.option("--unambiguous", required=True, type=click.Path(exists=True),
              help="JSONL of {id?, text} verified unambiguous prompts.")
@click.option("--coder-pairs", type=click.Path(exists=True), default=None,
              help="Optional JSONL of {prompt, program} coder pairs.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--split/--no-split", default=True, help="Also write a balanced train/test split.")
@click.pass_context
def emit_sft(ctx, records, unambiguous, coder_pairs, out_dir, split):
    """Emit chat-format SFT supervision records for external fine-tuning."""
    config: RunConfig = ctx.obj["config"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    templates = _templates(config)
    clarifier_system = templates.get("clarifier").system_text
    coder_system = templates.get("coder").system_text
    ambiguous = [record_from_json(row) for row in read_jsonl(records)
                 if row.get("keep", True)]
    unambiguous_prompts = [row["text"] for row in read_jsonl(unambiguous)]
    pairs = None
    if coder_pairs:
        pairs = [(row["prompt"], row["program"]) for row in read_jsonl(coder_pairs)]
    extra: dict = {}
    if split and ambiguous and unambiguous_prompts:
        split_result = balance_and_split(ambiguous, unambiguous_prompts, seed=config.seed)
        stats = split_statistics(split_result)
        (out / "split_stats.txt").write_text(render_split_statistics(stats), encoding="utf-8")
        (out / "split_stats.json").write_text(json.dumps(stats, indent=2), encoding="utf-8")
        train = emit_supervision(
            list(split_result.train_ambiguous), list(split_result.train_unambiguous),
            clarifier_system, coder_system, pairs,
        )
        test = emit_supervision(
            list(split_result.test_ambiguous), list(split_result.test_unambiguous),
            clarifier_system, coder_system, None,
        )
        write_jsonl(out / "sft_train.jsonl", (r.to_json() for r in train))
        write_jsonl(out / "sft_test.jsonl", (r.to_json() for r in test))
        extra = {"n_train": len(train), "n_test": len(test), "split_seed": config.seed}
        click.echo(f"train records: {len(train)}, test records: {len(test)}")
    else:
        all_records = emit_supervision(
            ambiguous, unambiguous_prompts, clarifier_system, coder_system, pairs
        )
        write_jsonl(out / "sft.jsonl", (r.to_json() for r in all_records))
        extra = {"n_records": len(all_records)}
        click.echo(f"emitted {len(all_records)} records")
    _write_manifest(out, "emit-sft", config, templates, extra)


@main.command()
@click.option("--dataset", required=True, type=click.Path(exists=True),
              help="JSONL of {id, prompt, ground_truth?, gt_questions?, truly_ambiguous, "
                   "reference_program?} evaluation records.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--label", default="two-agent")
@click.pass_context
def evaluate(ctx, dataset, out_dir, label):
    """Run two-agent trajectories over a dataset and assemble the report."""
    config: RunConfig = ctx.obj["config"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results_path = out / "trajectories.jsonl"
    done = _done_ids(results_path)
    templates = _templates(config)
    gw = build_gateway(config)
    executor = build_executor(config)
    endpoints = AgentEndpoints(
        clarifier=config.endpoints["clarifier"].to_endpoint(),
        coder=config.endpoints["coder"].to_endpoint(),
        user_sim=config.endpoints["user"].to_endpoint(),
    )
    judges = JudgeEndpoints(
        efficiency=config.endpoints["judge"].to_endpoint(),
        resolution=config.endpoints["judge"].to_endpoint(),
    )
    settings = RunSettings(
        sample_count=config.surface_points, seed=config.seed,
        execution_timeout=config.executor_timeout,
    )
    trajectories = []
    scores = []
    try:
        with open(results_path, "a", encoding="utf-8") as fh:
            for row in read_jsonl(dataset):
                if row["id"] in done:
                    continue
                reference = None
                if row.get("reference_program"):
                    ref_outcome = executor.execute(row["reference_program"], config.executor_timeout)
                    if ref_outcome.status == "ok":
                        reference = ref_outcome.mesh
                record = PromptRecord(
                    prompt=Prompt(row["prompt"], row["id"]),
                    ground_truth_text=row.get("ground_truth"),
                    ground_truth_questions=tuple(row.get("gt_questions", [])),
                    truly_ambiguous=bool(row.get("truly_ambiguous", False)),
                )
                trajectory = run_two_agent(
                    record, gw, endpoints, templates, executor, settings, reference
                )
                pair = score_trajectory(
                    trajectory, gw, judges,
                    templates.get("efficiency_judge"), templates.get("resolution_judge"),
                )
                trajectories.append(trajectory)
                scores.append(pair)
                fh.write(json.dumps({
                    "id": row["id"],
                    "phase": trajectory.session.phase.value,
                    "rounds": trajectory.rounds,
                    "corrected": None if trajectory.session.corrected is None
                    else trajectory.session.corrected.text,
                    "valid": bool(trajectory.validity and trajectory.validity.valid),
                    "cd": None if trajectory.metrics is None else trajectory.metrics.value,
                    "efficiency": pair.efficiency,
                    "resolution": pair.resolution,
                    "failure": trajectory.failure,
                    "notes": list(trajectory.notes),
                }, ensure_ascii=False) + "\n")
                fh.flush()
    finally:
        executor.close()
    if not trajectories:
        raise click.ClickException("dataset produced no new trajectories")
    report = build_report(
        trajectories, scores, label=label,
        models={role: spec.model for role, spec in config.endpoints.items()},
        template_hashes=templates.manifest(),
        seeds={"sampling": config.seed},
        thresholds={"select_cd": config.select_cd},
    )
    (out / "report.json").write_text(json.dumps(report.to_json(), indent=2), encoding="utf-8")
    table = render_report_table(report)
    (out / "report.txt").write_text(table, encoding="utf-8")
    transcript_path = out / "transcripts.json"
    transcript_path.write_text(json.dumps(gw.transcript.to_json(), indent=2), encoding="utf-8")
    _write_manifest(out, "evaluate", config, templates,
                    {"n_trajectories": len(trajectories), "label": label})
    click.echo(table)


@main.command(name="clarify")
@click.option("--prompt", "prompt_text", required=True)
@click.pass_context
def clarify_cmd(ctx, prompt_text):
    """One interactive clarification session in the terminal."""
    config: RunConfig = ctx.obj["config"]
    templates = _templates(config)
    gw = build_gateway(config)
    from .agents import clarify as clarify_op, finalize_spec, generate_code
    from .protocol import Ask, CorrectedSpec

    prompt = Prompt(prompt_text, "cli")
    action = clarify_op(prompt, gw, config.endpoints["clarifier"].to_endpoint(),
                        templates.get("clarifier"))
    if isinstance(action, Ask):
        answers = []
        for q in action.questions:
            click.echo(f"Q: {q}")
            answers.append(click.prompt("A", type=str))
        corrected = finalize_spec(
            prompt, list(action.questions), answers, gw,
            config.endpoints["clarifier"].to_endpoint(), templates.get("clarifier"),
        )
    else:
        corrected = CorrectedSpec(action.standardized, "cli")
    click.echo("\nCorrected specification:\n" + corrected.text)
    program = generate_code(corrected, gw, config.endpoints["coder"].to_endpoint(),
                            templates.get("coder"))
    click.echo("\nGenerated program:\n" + program.text)
    if program.lints:
        click.echo(f"lint flags: {', '.join(program.lints)}")


@main.command(name="serve")
@click.option("--store-dir", default=None, type=click.Path())
@click.pass_context
def serve_cmd(ctx, store_dir):
    """Serve the live clarification HTTP API."""
    import uvicorn

    config: RunConfig = ctx.obj["config"]
    deps = build_service_deps(config, store_dir)
    app = build_app(deps, config.cors_origin)
    uvicorn.run(app, host=config.service_host, port=config.service_port)


def build_service_deps(config: RunConfig, store_dir: str | None = None) -> ServiceDeps:
    store = SessionStore(store_dir or str(Path(config.out_dir) / "sessions"))
    return ServiceDeps(
        store=store,
        gw=build_gateway(config),
        clarifier_endpoint=config.endpoints["clarifier"].to_endpoint(),
        coder_endpoint=config.endpoints["coder"].to_endpoint(),
        executor=build_executor(config),
        templates=_templates(config),
        execution_timeout=config.executor_timeout,
        sample_count=config.surface_points,
        seed=config.seed,
    )


if __name__ == "__main__":
    main()
