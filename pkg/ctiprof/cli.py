"""
Command-line front end.

    ctiprof ingest    --stix enterprise-attack.json --malpedia-actors actors.json ...
    ctiprof fetch     --refs out/refs.jsonl --cache .ctiprof-cache
    ctiprof overlap   --stix ... --malpedia-bib malpedia.bib --out overlap.csv
    ctiprof summarize --scope union --kinds tech,soft
    ctiprof profile   --group "Lazarus Group" --kinds tech
    ctiprof all       --config ctiprof.env --offline

Exit codes: 0 success, 1 invalid flags or configuration, 2 broken input data.
"""
import logging
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Sequence

import click
import typer
from rich.console import Console
from rich.markup import escape

from ctiprof import __version__
from ctiprof.config import load_settings
from ctiprof.exceptions import ConfigError, DataError
from ctiprof.schemas.pipeline import SINGLE_FILE_SUFFIXES, PipelineConfig
from ctiprof.services.outputs import OutputWriter
from ctiprof.services.pipeline import Pipeline

logger = logging.getLogger(__name__)
console = Console(stderr=True)

app = typer.Typer(
    name="ctiprof",
    help="Threat group profiles from ATT&CK and Malpedia: merge, fetch reports, extract, measure specificity",
    add_completion=False,
    no_args_is_help=True,
)

COMMAND_HELP = {
    "ingest": "Load the knowledge bases; write per-source summaries and the report reference list",
    "merge": "Resolve groups and software across sources; write the merge maps",
    "fetch": "Download every report into the cache (offline: only check what is cached)",
    "extract": "Extract CVE and technique IDs from cached reports; write the extraction tables and audit",
    "profile": "Build group profiles; write profiles, classifications, similarity and CDF tables",
    "overlap": "Compare the two knowledge bases (groups, techniques, software, reports)",
    "summarize": "Per scope and kind mask: groups with non-empty and with group-specific profiles",
    "all": "Run every command in order with one configuration",
}


def configure_logging(level: str, verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def _execute(command: str, config_file: Optional[Path], verbose: bool, out: Optional[Path], **flags) -> None:
    """Resolve settings and flags into a PipelineConfig, run the command, write the manifest"""
    if config_file is not None and not config_file.is_file():
        raise ConfigError(f"Config file not found: {config_file}")

    pipeline_flags = {key: flags.pop(key) for key in ("group", "refs_file")}
    if out is not None:
        if out.suffix.lower() in SINGLE_FILE_SUFFIXES:
            pipeline_flags["output_file"] = out
        else:
            flags["output_dir"] = out

    settings = load_settings(config_file, **flags)
    configure_logging(settings.log_level, verbose)
    config = PipelineConfig.from_settings(settings, **pipeline_flags)

    writer = OutputWriter.for_config(config)
    Pipeline(config).run(command, writer)
    manifest = writer.manifest(command, config)
    console.print(f"[green]✓[/green] {command}: {len(writer.written)} outputs, manifest at {manifest}")


def _register(name: str) -> None:
    def command(
        stix: Optional[List[Path]] = typer.Option(None, "--stix", help="ATT&CK STIX bundle (repeat for several domains)"),
        malpedia_actors: Optional[Path] = typer.Option(None, "--malpedia-actors", help="Malpedia actor dump (JSON)"),
        malpedia_families: Optional[Path] = typer.Option(None, "--malpedia-families", help="Malpedia family dump (JSON)"),
        malpedia_bib: Optional[Path] = typer.Option(None, "--malpedia-bib", help="Malpedia BibTeX library"),
        malpedia_date: Optional[datetime] = typer.Option(None, "--malpedia-date", formats=["%Y-%m-%d"], help="Retrieval date of the Malpedia dump"),
        rules: Optional[Path] = typer.Option(None, "--rules", help="Normalization rule table (JSON)"),
        refs: Optional[Path] = typer.Option(None, "--refs", help="fetch: report references (refs.jsonl from ingest) instead of the knowledge bases"),
        relationship_citations: Optional[bool] = typer.Option(
            None, "--relationship-citations/--no-relationship-citations",
            help="Count citations on ATT&CK \"uses\" relationships as group reports",
        ),
        cache: Optional[Path] = typer.Option(None, "--cache", help="Report cache directory"),
        offline: Optional[bool] = typer.Option(None, "--offline/--online", help="Use only the report cache"),
        concurrency: Optional[int] = typer.Option(None, "--concurrency", help="Concurrent report downloads"),
        rate: Optional[float] = typer.Option(None, "--rate", help="Requests per second per host"),
        timeout: Optional[float] = typer.Option(None, "--timeout", help="Per-request timeout in seconds"),
        scope: Optional[str] = typer.Option(None, "--scope", help="attack, malpedia or union (default: all three)"),
        kinds: Optional[str] = typer.Option(None, "--kinds", help="Kind mask, e.g. tech,soft or tech*,soft,vuln (default: every summary row)"),
        group: Optional[str] = typer.Option(None, "--group", help="profile: one group by name, alias or source ID"),
        similarity_threshold: Optional[float] = typer.Option(None, "--similarity-threshold", help="Jaccard at or above which a pair is similar"),
        co_occurrence_threshold: Optional[float] = typer.Option(None, "--co-occurrence-threshold", help="Minimum co-occurrence rate to report"),
        top_n: Optional[int] = typer.Option(None, "--top-n", help="Rows in the top-generic tables"),
        collapse_subtechniques: Optional[bool] = typer.Option(None, "--collapse-subtechniques/--keep-subtechniques", help="Count sub-techniques as their parent"),
        lenient_cve: Optional[bool] = typer.Option(None, "--lenient-cve/--strict-cve", help="Accept Unicode dashes and spaces inside CVE IDs"),
        keep_unknown: Optional[bool] = typer.Option(None, "--keep-unknown-techniques/--drop-unknown-techniques", help="Keep technique IDs missing from the taxonomy"),
        out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory, or a .csv/.json/.md file for the main table"),
        formats: Optional[List[str]] = typer.Option(None, "--format", "-f", help="csv, json or md (repeatable)"),
        config_file: Optional[Path] = typer.Option(None, "--config", "-c", help="KEY=value config file"),
        verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
    ):
        _execute(
            name,
            config_file,
            verbose,
            out,
            stix=stix or None,
            malpedia_actors=malpedia_actors,
            malpedia_families=malpedia_families,
            malpedia_bib=malpedia_bib,
            malpedia_date=malpedia_date.date() if malpedia_date else None,
            rules_file=rules,
            refs_file=refs,
            attack_relationship_citations=relationship_citations,
            cache_dir=cache,
            offline=offline,
            fetch_concurrency=concurrency,
            fetch_rate_per_host=rate,
            fetch_timeout=timeout,
            scope=scope,
            kinds=kinds,
            group=group,
            similarity_threshold=similarity_threshold,
            co_occurrence_threshold=co_occurrence_threshold,
            generic_top_n=top_n,
            collapse_subtechniques=collapse_subtechniques,
            lenient_cve_separators=lenient_cve,
            keep_unknown_techniques=keep_unknown,
            output_formats=formats or None,
        )

    command.__doc__ = COMMAND_HELP[name]
    app.command(name)(command)


for _name in COMMAND_HELP:
    _register(_name)


@app.command("version")
def version():
    """Print the version"""
    typer.echo(f"ctiprof {__version__}")


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command line; returns the exit code instead of exiting"""
    command = typer.main.get_command(app)
    try:
        result = command.main(
            args=list(argv) if argv is not None else None,
            prog_name="ctiprof",
            standalone_mode=False,
        )
    except click.UsageError as e:
        e.show()
        return 1
    except click.Abort:
        return 1
    except ConfigError as e:
        console.print(f"[red]Configuration error:[/red] {escape(str(e))}")
        return 1
    except DataError as e:
        console.print(f"[red]Data error:[/red] {escape(str(e))}")
        return 2
    return result if isinstance(result, int) else 0
