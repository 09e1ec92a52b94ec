"""Command-line entry point.

Subcommands: ``bootstrap`` (generate and save rules), ``run`` (one user
session with a pretty-printed trace), ``eval`` (experiment over the
configured variants), ``ablate`` (all ablation variants), ``trace``
(render a saved session as a step list), ``validate-rules`` (parse and
validate a rules file), ``plot`` (SVG charts from report files).

Configuration is one TOML file (see ``--config``); every command writes
a ``manifest.json`` beside its outputs so a run can be reproduced from
what it left behind. Exit codes: 0 ok, 2 config error, 3 data error,
4 provider error, 5 internal invariant violation.
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import click

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .agent import (SessionConfig, bootstrap as build_pm, explanations_jsonl,
                    run_session)
from .chunking import chunk_file_entry
from .data import load, preprocess, schema_from_items, split_leave_one_out
from .dsl import parse_rules_file, serialize_production
from .engine import render_trace
from .errors import (BootstrapEmpty, CogrecError, EmptyAfterFilter, FormatError,
                     ProviderTimeout, ProviderUnavailable, RuleSyntaxError,
                     ValidationError)
from .evaluation import (VARIANTS, curve_csv, reports_csv, reports_json,
                         run_experiment)
from .gateway import (CallLedger, Gateway, LiveProvider, OracleProvider,
                      ProviderConfig, ReplayProvider, ResponseCache)

EXIT_CONFIG, EXIT_DATA, EXIT_PROVIDER, EXIT_INTERNAL = 2, 3, 4, 5


def _fail(code: int, exc: BaseException) -> "click.exceptions.Exit":
    kind = type(exc).__name__
    message = str(exc).replace('"', "'")
    click.echo(f'COGREC-ERROR code={code} kind={kind} msg="{message}"', err=True)
    return click.exceptions.Exit(code)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise _fail(EXIT_CONFIG, exc)


def _session_config(cfg: dict, **overrides) -> SessionConfig:
    values = dict(cfg.get("session", {}))
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SessionConfig(**values)
    except (TypeError, ValueError) as exc:
        raise _fail(EXIT_CONFIG, exc)


def _dataset_path(cfg: dict, dataset: str | None) -> tuple[Path, str]:
    ds = dict(cfg.get("dataset", {}))
    path = dataset or ds.get("path", "demo")
    fmt = ds.get("format", "csv")
    if path == "demo":
        return Path(str(resources.files("cogrec").joinpath("demo_data"))), "csv"
    return Path(path), fmt


def _load_dataset(cfg: dict, dataset: str | None, min_inter: int | None = None):
    path, fmt = _dataset_path(cfg, dataset)
    try:
        loaded = load(path, fmt)
        interactions = loaded.interactions
        k = min_inter if min_inter is not None else cfg.get("dataset", {}).get("min_interactions", 0)
        if k:
            interactions = preprocess(interactions, min_user=k, min_item=k)
        schema = schema_from_items(loaded.items, name=path.name)
        return interactions, loaded.items, schema
    except (OSError, FormatError, EmptyAfterFilter) as exc:
        raise _fail(EXIT_DATA, exc)


def _gateway(cfg: dict, items, schema, seed: int) -> Gateway:
    prov = dict(cfg.get("provider", {}))
    mode = prov.get("mode", "oracle")
    config = ProviderConfig(
        endpoint=prov.get("endpoint", ""),
        model=prov.get("model", "oracle"),
        api_key_env=prov.get("api_key_env", "COGREC_API_KEY"),
        temperature=float(prov.get("temperature", 0.0)),
        timeout_s=float(prov.get("timeout_s", 30.0)),
        max_retries=int(prov.get("max_retries", 2)),
    )
    cache_dir = prov.get("cache_dir") or None
    cache = ResponseCache(cache_dir) if (cache_dir or mode == "replay") else None
    try:
        if mode == "oracle":
            provider = OracleProvider(items, schema, seed=seed)
        elif mode == "live":
            provider = LiveProvider(config)
        elif mode == "replay":
            provider = ReplayProvider()
        else:
            raise CogrecError(f"unknown provider mode {mode!r}")
    except (ProviderUnavailable, CogrecError) as exc:
        raise _fail(EXIT_CONFIG if "unknown" in str(exc) else EXIT_PROVIDER, exc)
    return Gateway(provider, config, cache=cache, ledger=CallLedger())


def _write_manifest(out: Path, command: str, cfg_path: str | None,
                    dataset: str | None, seed: int, provider_mode: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": cfg_path,
        "dataset": dataset,
        "seed": seed,
        "provider_mode": provider_mode,
        "version": __version__,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True),
                                       encoding="utf-8")


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Cognitive recommender agent and evaluation harness."""


@main.command("bootstrap")
@click.option("--config", "cfg_path", type=click.Path(exists=True), default=None)
@click.option("--dataset", default=None, help="dataset directory or 'demo'")
@click.option("--out", "out_dir", default="out", show_default=True)
@click.option("--seed", default=0, show_default=True)
def bootstrap_cmd(cfg_path, dataset, out_dir, seed) -> None:
    """Generate bootstrap rules and save them as a rules file."""
    cfg = _load_config(cfg_path)
    interactions, items, schema = _load_dataset(cfg, dataset)
    gateway = _gateway(cfg, items, schema, seed)
    session_cfg = _session_config(cfg)
    try:
        pm = build_pm(gateway, schema, session_cfg, items=items)
    except BootstrapEmpty as exc:
        raise _fail(EXIT_PROVIDER, exc)
    out = Path(out_dir)
    _write_manifest(out, "bootstrap", cfg_path, dataset, seed,
                    cfg.get("provider", {}).get("mode", "oracle"))
    rules_path = out / "rules.soar"
    with open(rules_path, "w", encoding="utf-8") as fh:
        for name in sorted(pm.productions):
            fh.write(serialize_production(pm.productions[name]) + "\n\n")
    click.echo(f"wrote {len(pm)} rules to {rules_path}")


@main.command("run")
@click.option("--config", "cfg_path", type=click.Path(exists=True), default=None)
@click.option("--dataset", default=None)
@click.option("--user", "user_id", required=True)
@click.option("--out", "out_dir", default="out", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--k", type=int, default=None)
def run_cmd(cfg_path, dataset, user_id, out_dir, seed, k) -> None:
    """Run one user session and pretty-print its trace."""
    cfg = _load_config(cfg_path)
    interactions, items, schema = _load_dataset(cfg, dataset)
    splits = split_leave_one_out(interactions)
    if user_id not in splits:
        raise _fail(EXIT_DATA, CogrecError(f"unknown user {user_id!r}"))
    gateway = _gateway(cfg, items, schema, seed)
    session_cfg = _session_config(cfg, k=k)
    out = Path(out_dir)
    _write_manifest(out, "run", cfg_path, dataset, seed,
                    cfg.get("provider", {}).get("mode", "oracle"))
    chunk_log: list[str] = []

    def sink(prod, impasse_id, cycle):
        chunk_log.append(chunk_file_entry(prod, impasse_id, cycle))

    try:
        pm = build_pm(gateway, schema, session_cfg, items=items)
        result = run_session(splits[user_id], items, schema, pm, gateway,
                             session_cfg, chunk_sink=sink)
    except (ProviderUnavailable, ProviderTimeout, BootstrapEmpty) as exc:
        raise _fail(EXIT_PROVIDER, exc)

    trace = result.trace_text()
    session = {
        "user": result.user,
        "items": list(result.items),
        "truncated": result.truncated,
        "ledger": result.ledger,
        "trace": trace,
        "cycles": [
            {
                "cycle": r.cycle,
                "impasse": r.impasse.kind if r.impasse else None,
                "tied": [i.name for i in r.impasse.tied_items()] if r.impasse else [],
                "query": r.resolution.query_text if r.resolution else None,
                "response": r.resolution.response_text if r.resolution else None,
                "chunk": r.resolution.chunk_name if r.resolution else None,
                "selected": r.selected.name.text if r.selected else None,
            }
            for r in result.records
        ],
        "explanations": json.loads("[" + explanations_jsonl(result).replace("\n", ",") + "]")
        if result.explanations else [],
    }
    (out / "session.json").write_text(json.dumps(session, indent=2, sort_keys=True),
                                      encoding="utf-8")
    (out / "trace.txt").write_text(trace + "\n", encoding="utf-8")
    (out / "explanations.jsonl").write_text(explanations_jsonl(result) + "\n",
                                            encoding="utf-8")
    if chunk_log:
        (out / "chunks.soar").write_text("\n".join(chunk_log), encoding="utf-8")
    click.echo(trace)
    click.echo("")
    for e in result.explanations:
        click.echo(f"#{e.rank} {e.item}  rules={[r.name for r in e.rules]}"
                   f"{'  [fallback]' if e.fallback else ''}")
    click.echo(f"outputs in {out}")


def _run_eval(cfg_path, dataset, out_dir, seed, jobs, variants) -> None:
    cfg = _load_config(cfg_path)
    eval_cfg = dict(cfg.get("eval", {}))
    seed = seed if seed is not None else int(eval_cfg.get("seed", 0))
    jobs = jobs if jobs is not None else int(eval_cfg.get("jobs", 1))
    min_inter = cfg.get("dataset", {}).get("min_interactions", 0)
    interactions, items, schema = _load_dataset(cfg, dataset, min_inter=min_inter)
    session_cfg = _session_config(cfg)
    out = Path(out_dir)
    _write_manifest(out, "eval", cfg_path, dataset, seed,
                    cfg.get("provider", {}).get("mode", "oracle"))
    try:
        reports = run_experiment(
            interactions, items, schema, variants=variants,
            base_config=session_cfg, seed=seed, jobs=jobs,
            bucket_size=int(eval_cfg.get("bucket_size", 20)))
    except (ProviderUnavailable, ProviderTimeout, BootstrapEmpty) as exc:
        raise _fail(EXIT_PROVIDER, exc)
    except CogrecError as exc:
        raise _fail(EXIT_INTERNAL, exc)
    (out / "reports.csv").write_text(reports_csv(reports), encoding="utf-8")
    (out / "reports.json").write_text(reports_json(reports), encoding="utf-8")
    for variant, report in reports.items():
        (out / f"lcf_{variant}.csv").write_text(curve_csv(report.lcf), encoding="utf-8")
    click.echo(reports_csv(reports).rstrip())
    click.echo(f"outputs in {out}")


@main.command("eval")
@click.option("--config", "cfg_path", type=click.Path(exists=True), default=None)
@click.option("--dataset", default=None)
@click.option("--out", "out_dir", default="out", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=None)
def eval_cmd(cfg_path, dataset, out_dir, seed, jobs) -> None:
    """Run the full experiment for the configured variants."""
    cfg = _load_config(cfg_path)
    variants = tuple(cfg.get("eval", {}).get("variants", ["full"]))
    _run_eval(cfg_path, dataset, out_dir, seed, jobs, variants)


@main.command("ablate")
@click.option("--config", "cfg_path", type=click.Path(exists=True), default=None)
@click.option("--dataset", default=None)
@click.option("--out", "out_dir", default="out", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=None)
def ablate_cmd(cfg_path, dataset, out_dir, seed, jobs) -> None:
    """Run every ablation variant (the config matrix)."""
    _run_eval(cfg_path, dataset, out_dir, seed, jobs, VARIANTS)


@main.command("trace")
@click.argument("session_file", type=click.Path(exists=True))
def trace_cmd(session_file) -> None:
    """Render a saved session file as a step list."""
    try:
        session = json.loads(Path(session_file).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise _fail(EXIT_DATA, exc)
    step = ord("a")

    def emit(text: str) -> None:
        nonlocal step
        click.echo(f"({chr(step)}) {text}")
        step += 1

    emit(f"session for user {session.get('user')}")
    emit("working memory initialized from history and candidates")
    for cyc in session.get("cycles", []):
        if cyc.get("impasse"):
            tied = ", ".join(cyc.get("tied", [])) or "none"
            emit(f"cycle {cyc['cycle']}: {cyc['impasse']} impasse (candidates: {tied})")
        if cyc.get("query"):
            first = cyc["query"].splitlines()[0] if cyc["query"] else ""
            emit(f"cycle {cyc['cycle']}: structured query sent ({first!r} ...)")
        if cyc.get("response"):
            rec = next((ln for ln in cyc["response"].splitlines()
                        if ln.startswith("RECOMMEND:")), cyc["response"].splitlines()[0])
            emit(f"cycle {cyc['cycle']}: response received ({rec})")
        if cyc.get("chunk"):
            emit(f"cycle {cyc['cycle']}: learned rule {cyc['chunk']}")
    for n, item in enumerate(session.get("items", []), start=1):
        emit(f"recommendation #{n}: {item}")


@main.command("validate-rules")
@click.argument("rules_file", type=click.Path(exists=True))
def validate_rules_cmd(rules_file) -> None:
    """Parse and validate a rules file; exit 0 when every rule is valid."""
    try:
        text = Path(rules_file).read_text(encoding="utf-8")
    except OSError as exc:
        raise _fail(EXIT_DATA, exc)
    try:
        rules = parse_rules_file(text)
    except (RuleSyntaxError, ValidationError) as exc:
        raise _fail(EXIT_CONFIG, exc)
    click.echo(f"{len(rules)} valid rules")


@main.command("plot")
@click.option("--reports", "reports_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", default=None, help="defaults to the reports dir")
def plot_cmd(reports_dir, out_dir) -> None:
    """Write SVG charts (call-frequency curves, head/tail bars) from a
    reports directory produced by eval or ablate."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    reports_dir = Path(reports_dir)
    out = Path(out_dir) if out_dir else reports_dir
    out.mkdir(parents=True, exist_ok=True)
    try:
        reports = json.loads((reports_dir / "reports.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise _fail(EXIT_DATA, exc)

    fig, ax = plt.subplots(figsize=(6, 4))
    for variant, rep in sorted(reports.items()):
        curve = rep.get("lcf") or []
        if curve:
            ax.plot([b for b, _ in curve], [v for _, v in curve],
                    marker="o", label=variant)
    ax.set_xlabel("session bucket")
    ax.set_ylabel("model calls per interaction")
    ax.set_title("Call frequency over the session stream")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "lcf.svg")
    plt.close(fig)

    labels, head_vals, tail_vals = [], [], []
    for variant, rep in sorted(reports.items()):
        if rep.get("head") and rep.get("tail"):
            labels.append(variant)
            head_vals.append(rep["head"]["n10"])
            tail_vals.append(rep["tail"]["n10"])
    if labels:
        fig, ax = plt.subplots(figsize=(6, 4))
        xs = range(len(labels))
        ax.bar([x - 0.2 for x in xs], head_vals, width=0.4, label="head")
        ax.bar([x + 0.2 for x in xs], tail_vals, width=0.4, label="tail")
        ax.set_xticks(list(xs))
        ax.set_xticklabels(labels, rotation=20)
        ax.set_ylabel("N@10")
        ax.set_title("Head vs long-tail")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "head_tail.svg")
        plt.close(fig)
    click.echo(f"charts in {out}")


if __name__ == "__main__":
    main()
