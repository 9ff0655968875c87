"""
Table, document and manifest writers.

Every table goes out as CSV (strings quoted, UTF-8, LF line endings), JSON (sorted
keys, 2-space indent, trailing newline) and Markdown, per the configured formats.
Nothing except the manifest carries a timestamp, so identical inputs and config
give byte-identical files.
"""
import csv
import io
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Type, get_origin

from pydantic import BaseModel, TypeAdapter

from ctiprof import __version__
from ctiprof.exceptions import ConfigError
from ctiprof.schemas.manifest import Manifest
from ctiprof.schemas.pipeline import PipelineConfig
from ctiprof.services.entity_resolution import MergeMap, write_merge_map_csv
from ctiprof.utils.files import atomic_write_text, sha256_file

logger = logging.getLogger(__name__)

# Columns shown as-is even for not-applicable rows
LABEL_COLUMNS = {"scope", "kinds", "profile", "applicable"}


# ============ Cell formatting ============

def _columns(model: Type[BaseModel]) -> List[str]:
    """Scalar columns of a row model; nested lists stay in JSON only"""
    columns = []
    for name, info in model.model_fields.items():
        if get_origin(info.annotation) is list:
            continue
        columns.append(name)
    return columns


def _csv_cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return value


def _md_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "yes" if value else "no"
    return str(value).replace("|", "\\|")


def _not_applicable(row: BaseModel) -> bool:
    return getattr(row, "applicable", True) is False


# ============ Renderers ============

def render_csv(rows: Sequence[BaseModel], model: Type[BaseModel]) -> str:
    columns = _columns(model)
    buffer = io.StringIO()
    writer = csv.writer(buffer, quoting=csv.QUOTE_NONNUMERIC, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_csv_cell(getattr(row, column)) for column in columns])
    return buffer.getvalue()


def render_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def render_markdown(rows: Sequence[BaseModel], model: Type[BaseModel], title: str = "") -> str:
    """Pipe table; metric cells of not-applicable rows render as "-" """
    columns = _columns(model)
    lines = []
    if title:
        lines += [f"## {title}", ""]
    lines.append("| " + " | ".join(columns) + " |")
    lines.append("|" + "|".join("---" for _ in columns) + "|")
    for row in rows:
        skip = _not_applicable(row)
        cells = [
            "-" if skip and column not in LABEL_COLUMNS else _md_cell(getattr(row, column))
            for column in columns
        ]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_table(rows: Sequence[BaseModel], model: Type[BaseModel], fmt: str, title: str = "") -> str:
    if fmt == "csv":
        return render_csv(rows, model)
    if fmt == "json":
        return render_json([row.model_dump(mode="json") for row in rows])
    if fmt == "md":
        return render_markdown(rows, model, title)
    raise ConfigError(f"Unknown output format {fmt!r}")


# ============ Writer ============

class OutputWriter:
    """
    Writes a command's outputs into a directory, or its primary table into a
    single file when --out names a .csv/.json/.md file. Records every path written
    for the manifest.
    """

    def __init__(
        self,
        directory: Path,
        formats: Sequence[str] = ("csv", "json", "md"),
        single_file: Optional[Path] = None,
    ):
        self.directory = Path(single_file.parent if single_file else directory)
        self.formats = tuple(formats)
        self.single_file = single_file
        self.written: List[Path] = []

    @classmethod
    def for_config(cls, config: PipelineConfig) -> "OutputWriter":
        return cls(config.output_dir, config.output_formats, config.output_file)

    def _write(self, path: Path, text: str) -> Path:
        atomic_write_text(path, text)
        self.written.append(path)
        logger.debug(f"Wrote {path}")
        return path

    def require_directory(self, command: str) -> None:
        if self.single_file is not None:
            raise ConfigError(f"'{command}' writes several files; --out must name a directory")

    def table(
        self,
        name: str,
        rows: Sequence[BaseModel],
        model: Type[BaseModel],
        primary: bool = False,
        title: str = "",
    ) -> List[Path]:
        """Write one table in every configured format (single-file mode: primary table only)"""
        rows = list(rows)
        if self.single_file is not None:
            if not primary:
                return []
            fmt = self.single_file.suffix.lower().lstrip(".")
            return [self._write(self.single_file, render_table(rows, model, fmt, title))]
        return [
            self._write(self.directory / f"{name}.{fmt}", render_table(rows, model, fmt, title or name))
            for fmt in self.formats
        ]

    def document(self, name: str, obj: BaseModel) -> Optional[Path]:
        if self.single_file is not None:
            return None
        return self._write(self.directory / f"{name}.json", render_json(obj.model_dump(mode="json")))

    def jsonl(self, name: str, items: Iterable[BaseModel], model: Type[BaseModel]) -> Optional[Path]:
        if self.single_file is not None:
            return None
        adapter = TypeAdapter(model)
        lines = [adapter.dump_json(item).decode("utf-8") for item in items]
        return self._write(self.directory / f"{name}.jsonl", "".join(line + "\n" for line in lines))

    def merge_map(self, name: str, merge_map: MergeMap) -> Optional[Path]:
        if self.single_file is not None:
            return None
        path = self.directory / f"{name}.csv"
        write_merge_map_csv(merge_map, path)
        self.written.append(path)
        return path

    def manifest(self, command: str, config: PipelineConfig) -> Path:
        """manifest.json: tool version, command, resolved config, input hashes, outputs"""
        manifest = Manifest(
            version=__version__,
            command=command,
            created_at=datetime.now(timezone.utc),
            config=config.model_dump(mode="json"),
            inputs={role: sha256_file(path) for role, path in config.input_files()},
            outputs=sorted(str(path) for path in self.written),
        )
        path = self.directory / "manifest.json"
        atomic_write_text(path, render_json(manifest.model_dump(mode="json")))
        logger.info(f"{command}: wrote {len(self.written)} files and {path}")
        return path
