"""Command-line entry points: ingest, serve, report, simulate."""

from __future__ import annotations

import csv
import io
import json
import re
import sys
from datetime import timedelta
from pathlib import Path

import click

from . import analytics, plots, simharness
from .corpus import DocumentStore, IngestInProgressError, StreamReadError, ingest as run_ingest
from .eventlog import LogSnapshot
from .service import RecommenderService, ServiceConfig
from .textengine import INDEX_FILENAME, ScoringParams, build_index, load_index, save_index

_DURATION_RE = re.compile(r"^(\d+(?:\.\d+)?)(ms|s|m|h|d)$")
_DURATION_UNITS = {"ms": 0.001, "s": 1, "m": 60, "h": 3600, "d": 86400}


def parse_duration(text: str) -> timedelta:
    m = _DURATION_RE.match(text.strip())
    if not m:
        raise click.BadParameter(f"bad duration {text!r} (expected e.g. 24h, 30m, 7d)")
    return timedelta(seconds=float(m.group(1)) * _DURATION_UNITS[m.group(2)])


@click.group()
def main():
    """Related-document recommendation service toolkit."""


@main.command("ingest")
@click.option("--format", "fmt", type=click.Choice(["jsonl", "xml"]), required=True)
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data-dir", type=click.Path(file_okay=False), required=True)
def ingest_cmd(fmt: str, input_path: str, data_dir: str):
    """Parse a partner export into the document store and rebuild the index."""
    store = DocumentStore(data_dir)
    try:
        with open(input_path, "rb") as stream:
            report = run_ingest(stream, fmt, store)
    except (StreamReadError, IngestInProgressError) as exc:
        click.echo(json.dumps({"error": str(exc)}), err=True)
        sys.exit(2)
    if store.docs:
        store.index_version += 1
        index = build_index(store.all_docs(), ScoringParams(), version=store.index_version)
        save_index(index, Path(data_dir) / INDEX_FILENAME)
        store.save()
    click.echo(report.to_json())
    sys.exit(0 if report.records_rejected == 0 else 1)


@main.command("serve")
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data-dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
def serve_cmd(port: int, host: str, data_dir: str, config_path: str):
    """Serve the REST API over a committed corpus and index."""
    import uvicorn

    from .api import create_app

    store = DocumentStore(data_dir)
    if not store.docs:
        raise click.ClickException(f"no corpus in {data_dir}; run ingest first")
    index_path = Path(data_dir) / INDEX_FILENAME
    if not index_path.exists():
        raise click.ClickException(f"no index in {data_dir}; run ingest first")
    index = load_index(index_path)
    config = ServiceConfig.load(config_path) if config_path else ServiceConfig()
    service = RecommenderService(store, index, config, data_dir)
    try:
        uvicorn.run(create_app(service), host=host, port=port, log_level="warning")
    finally:
        service.close()


_DIMENSIONS = ["algorithm", "latency", "setsize", "reshow", "day", "scorectr", "delay"]
_DIMENSION_MAP = {
    "algorithm": analytics.ALGORITHM,
    "latency": analytics.LATENCY,
    "setsize": analytics.SET_SIZE,
    "reshow": analytics.RESHOW,
    "day": analytics.DAY,
}

CSV_COLUMNS = ["bucket", "impressions", "clicks", "ctr", "wilson_lo", "wilson_hi"]


def _report_rows(report: analytics.CTRReport) -> list[list]:
    rows = []
    for r in report.rows:
        rows.append([
            r.bucket, r.impressions, r.clicks,
            "" if r.ctr is None else f"{r.ctr:.6f}",
            "" if r.wilson_lo is None else f"{r.wilson_lo:.6f}",
            "" if r.wilson_hi is None else f"{r.wilson_hi:.6f}",
        ])
    return rows


def _emit_table(header: list[str], rows: list[list]) -> str:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(header)]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    for r in rows:
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))
    return "\n".join(lines)


def _emit(header: list[str], rows: list[list], fmt: str, extra: dict | None = None) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue().rstrip("\n")
    if fmt == "json":
        payload = {"rows": [dict(zip(header, r)) for r in rows]}
        if extra:
            payload.update(extra)
        return json.dumps(payload, indent=2)
    out = _emit_table(header, rows)
    if extra:
        out += "\n" + "\n".join(f"{k}: {v}" for k, v in extra.items())
    return out


@main.command("report")
@click.option("--dimension", type=click.Choice(_DIMENSIONS), required=True)
@click.option("--reshow-delay", default=None, help="exclude redeliveries within this window, e.g. 24h")
@click.option("--data-dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--format", "fmt", type=click.Choice(["json", "csv", "table"]), default="table",
              show_default=True)
@click.option("--figures-dir", type=click.Path(file_okay=False), default=None,
              help="also render the report as a PNG figure here")
def report_cmd(dimension: str, reshow_delay: str, data_dir: str, fmt: str, figures_dir: str):
    """Compute a CTR report from the persisted event log."""
    snapshot = LogSnapshot.load(data_dir)
    delay = parse_duration(reshow_delay) if reshow_delay else None
    figure_path = None
    if figures_dir:
        Path(figures_dir).mkdir(parents=True, exist_ok=True)
        figure_path = Path(figures_dir) / f"{dimension}.png"

    if dimension == "delay":
        hist = analytics.click_delay_histogram(snapshot)
        rows = [[b.label, b.count, f"{b.fraction:.6f}"] for b in hist.buckets]
        out = _emit(["bucket", "clicks", "fraction"], rows, fmt,
                    extra={"total_clicks": hist.total_clicks})
        if figure_path:
            plots.plot_delay_histogram(hist, figure_path)
    elif dimension == "scorectr":
        report, rho, pvalue = analytics.score_ctr_correlation(snapshot)
        out = _emit(CSV_COLUMNS, _report_rows(report), fmt,
                    extra={"spearman": round(rho, 6), "p_value": round(pvalue, 6)})
        if figure_path:
            plots.plot_ctr_report(report, figure_path, title="CTR by relevance decile")
    else:
        report = analytics.ctr_report(snapshot, _DIMENSION_MAP[dimension],
                                      reshow_delay_filter=delay)
        out = _emit(CSV_COLUMNS, _report_rows(report), fmt)
        if figure_path:
            if dimension == "day":
                plots.plot_time_series(analytics.ctr_time_series(snapshot), figure_path)
            else:
                plots.plot_ctr_report(report, figure_path)
    click.echo(out)
    if figure_path:
        click.echo(f"figure: {figure_path}", err=True)


@main.command("simulate")
@click.option("--corpus-size", type=int, required=True)
@click.option("--requests", "num_requests", type=int, required=True)
@click.option("--users", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--target", default="inprocess", show_default=True,
              help="'inprocess' or a base URL like http://host:port")
@click.option("--data-dir", type=click.Path(file_okay=False), default=None,
              help="event-log/store location for the in-process target")
@click.option("--days", type=int, default=1, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def simulate_cmd(corpus_size, num_requests, users, seed, model_path, target,
                 data_dir, days, workers, out_path):
    """Generate a corpus, drive traffic with a planted click model, and write
    the ground-truth manifest."""
    model = simharness.ClickModel.load(model_path) if model_path else simharness.ClickModel()
    config = simharness.SimConfig(
        corpus_size=corpus_size, num_requests=num_requests, seed=seed,
        users=users, model=model, workers=workers, days=days,
    )
    if target == "inprocess":
        if not data_dir:
            raise click.ClickException("--data-dir is required for the in-process target")
        store = DocumentStore(data_dir)
        run_ingest(simharness.generate_corpus(corpus_size, seed), "jsonl", store)
        store.index_version += 1
        index = build_index(store.all_docs(), ScoringParams(), version=store.index_version)
        store.save()
        clock = simharness.SimClock()
        service = RecommenderService(store, index, ServiceConfig(master_seed=seed),
                                     data_dir, clock=clock.now)
        driver = simharness.InProcessTarget(service, clock)
        try:
            manifest = simharness.simulate_traffic(config, driver)
        finally:
            service.close()
    else:
        manifest = simharness.simulate_traffic(config, simharness.HttpTarget(target))
    Path(out_path).write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    click.echo(f"manifest: {out_path} ({manifest['impressions']} impressions, "
               f"{manifest['clicks']} clicks)")
