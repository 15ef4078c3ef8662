"""Command-line surface: serve, run-product, tick, search, traverse, ask,
health."""

from __future__ import annotations

import json
from datetime import datetime, timezone

import click

from . import agents, search
from .config import load_config
from .errors import MeshError
from .server import ServerState, bootstrap, serve_http


def _state(config_path: str | None) -> ServerState:
    return bootstrap(load_config(config_path))


def _echo_json(payload) -> None:
    click.echo(json.dumps(payload, indent=1, sort_keys=True))


@click.group()
@click.option("--config", "config_path", default=None, type=click.Path(),
              help="Config document (JSON, or TOML on 3.11+).")
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    """Desk-scale data mesh for infrastructure records."""
    ctx.obj = config_path


@main.command()
@click.pass_obj
def serve(config_path: str | None) -> None:
    """Run the HTTP API (and the console, when built)."""
    serve_http(load_config(config_path))


@main.command("run-product")
@click.argument("name")
@click.pass_obj
def run_product_cmd(config_path: str | None, name: str) -> None:
    """Run one data product through the full lifecycle."""
    state = _state(config_path)
    try:
        receipt = state.run_one(state.mc3.get(name))
    except MeshError as exc:
        raise click.ClickException(str(exc)) from exc
    _echo_json(receipt.to_json_dict())


@main.command()
@click.option("--at", "at_text", default=None,
              help="Tick time, ISO 8601 UTC (default: now).")
@click.pass_obj
def tick(config_path: str | None, at_text: str | None) -> None:
    """Trigger every product whose cron matches the given minute."""
    state = _state(config_path)
    when = datetime.now(timezone.utc)
    if at_text:
        when = datetime.fromisoformat(at_text.replace("Z", "+00:00"))
    triggered = state.scheduler.tick(when, wait=True)
    _echo_json({"triggered": triggered,
                "entries": {n: e.to_json_dict()
                            for n, e in state.scheduler.entries().items()}})


@main.command("search")
@click.option("--filter", "filters", multiple=True,
              help="field=value equality filter; repeatable.")
@click.option("--free-text", default=None, help="AND-semantics text on title.")
@click.option("--limit", default=10, show_default=True)
@click.pass_obj
def search_cmd(config_path: str | None, filters: tuple[str, ...],
               free_text: str | None, limit: int) -> None:
    """Filtered search over the mesh."""
    state = _state(config_path)
    spec: dict[str, dict[str, object]] = {}
    for item in filters:
        field_name, _, value = item.partition("=")
        spec[field_name] = {"eq": value}
    if free_text:
        spec["title"] = {"free_text": free_text}
    try:
        result = search.search(
            search.SearchRequest(filters=spec, limit=limit), state.mesh)
    except MeshError as exc:
        raise click.ClickException(str(exc)) from exc
    _echo_json(result.to_json_dict())


@main.command()
@click.option("--subject", default=None, help="Start node id.")
@click.option("--filter", "filters", multiple=True,
              help="field=value predicate for a symbolic start; repeatable.")
@click.option("--should", "shoulds", multiple=True,
              help="field=pattern weighted clause (weight 1.0); repeatable.")
@click.option("--like", default=None, help="more_like_text free text, weight 1.0.")
@click.option("--limit", default=10, show_default=True)
@click.pass_obj
def traverse(config_path: str | None, subject: str | None,
             filters: tuple[str, ...], shoulds: tuple[str, ...],
             like: str | None, limit: int) -> None:
    """Traverse the knowledge graph from a node or a symbolic subject."""
    from .kg import LexiconClause, LexiconSpec

    state = _state(config_path)
    clauses = []
    for item in shoulds:
        field_name, _, pattern = item.partition("=")
        clauses.append(LexiconClause("should", field_name, pattern, 1.0))
    if like:
        clauses.append(LexiconClause("more_like_text", pattern=like, weight=1.0))
    if not clauses:
        clauses.append(LexiconClause("should", "title", ".", 1.0))
    try:
        if subject is None:
            if not filters:
                raise click.ClickException("need --subject or at least one --filter")
            spec = dict(item.partition("=")[::2] for item in filters)
            subject = state.graph.make_symbolic_subject(spec).node_id
        results = state.graph.traverse(
            subject, LexiconSpec(clauses=tuple(clauses), limit=limit))
    except MeshError as exc:
        raise click.ClickException(str(exc)) from exc
    _echo_json({"subject": subject,
                "results": [{"node_id": r.node_id, "score": r.score} for r in results]})


@main.command()
@click.argument("query")
@click.option("--conversation", "conversation_id", default="cli")
@click.option("--transcript", type=click.Path(), default=None,
              help="Also write the activity log (JSON lines) here.")
@click.pass_obj
def ask(config_path: str | None, query: str, conversation_id: str,
        transcript: str | None) -> None:
    """Ask the multi-agent workflow a question."""
    state = _state(config_path)
    ctx = agents.ConversationContext(conversation_id=conversation_id,
                                     max_turns=state.config.max_turns)
    response, _ = agents.ask(query, ctx, state.runtime)
    if transcript:
        state.runtime.activity_log.save(transcript)
    _echo_json(response.to_json_dict())


@main.command()
@click.pass_obj
def health(config_path: str | None) -> None:
    """Per-product health summary."""
    state = _state(config_path)
    _echo_json(search.health_summary(state.mesh, state.mc3.names(),
                                     state.scheduler.states()))


if __name__ == "__main__":
    main()
