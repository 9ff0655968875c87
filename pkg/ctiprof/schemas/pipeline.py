from datetime import date
from pathlib import Path
from typing import FrozenSet, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError, field_validator

from ctiprof.config import Settings
from ctiprof.exceptions import ConfigError
from ctiprof.models.profiles import SUMMARY_ROWS, ProfileKind, Scope, kind_mask_label, parse_kind_mask, parse_scope

OutputFormat = Literal["csv", "json", "md"]
SINGLE_FILE_SUFFIXES = {".csv": "csv", ".json": "json", ".md": "md"}


class PipelineConfig(BaseModel):
    """Validated per-run view of the settings plus the command's own flags"""

    # Inputs
    stix: List[Path] = Field(default_factory=list)
    attack_relationship_citations: bool = False
    malpedia_actors: Optional[Path] = None
    malpedia_families: Optional[Path] = None
    malpedia_bib: Optional[Path] = None
    malpedia_date: Optional[date] = None
    malpedia_tag_fields: List[str] = Field(default_factory=lambda: ["keywords", "tags", "malpedia"])
    malpedia_cotag_associations: bool = False
    rules_file: Optional[Path] = None
    refs_file: Optional[Path] = None  # fetch from a refs.jsonl instead of the knowledge bases

    # Corpus
    cache_dir: Path = Path(".ctiprof-cache")
    offline: bool = False
    fetch_concurrency: int = Field(4, ge=1)
    fetch_rate_per_host: float = Field(1.0, ge=0)
    fetch_timeout: float = Field(30.0, gt=0)
    fetch_max_redirects: int = Field(3, ge=0)
    user_agent: str

    # Profiles
    scope: Optional[str] = None
    kinds: Optional[str] = None
    group: Optional[str] = None
    similarity_threshold: float = Field(0.4, ge=0.0, le=1.0)
    co_occurrence_threshold: float = Field(0.75, ge=0.0, le=1.0)
    generic_top_n: int = Field(10, ge=1)
    collapse_subtechniques: bool = False

    # Extraction
    lenient_cve_separators: bool = False
    keep_unknown_techniques: bool = True

    # Output
    output_dir: Path = Path("out")
    output_file: Optional[Path] = None
    output_formats: List[OutputFormat] = Field(default_factory=lambda: ["csv", "json", "md"])

    class Config:
        frozen = True

    @field_validator('stix')
    @classmethod
    def validate_bundles_exist(cls, v):
        missing = [str(path) for path in v if not path.is_file()]
        if missing:
            raise ValueError(f'STIX bundle not found: {", ".join(missing)}')
        return v

    @field_validator('malpedia_actors', 'malpedia_families', 'malpedia_bib', 'rules_file', 'refs_file')
    @classmethod
    def validate_file_exists(cls, v):
        if v is not None and not v.is_file():
            raise ValueError(f'file not found: {v}')
        return v

    @field_validator('scope')
    @classmethod
    def validate_scope(cls, v):
        if v is not None:
            parse_scope(v)
        return v

    @field_validator('kinds')
    @classmethod
    def validate_kinds(cls, v):
        if v is not None:
            parse_kind_mask(v)
        return v

    @field_validator('output_formats')
    @classmethod
    def validate_formats(cls, v):
        if not v:
            raise ValueError('at least one output format is required')
        return sorted(set(v), key=["csv", "json", "md"].index)

    @field_validator('output_file')
    @classmethod
    def validate_output_file(cls, v):
        if v is not None and v.suffix.lower() not in SINGLE_FILE_SUFFIXES:
            raise ValueError(f'single-file output must end in .csv, .json or .md: {v}')
        return v

    # ============ Derived views ============

    @property
    def scopes(self) -> Tuple[Scope, ...]:
        if self.scope is None:
            return (Scope.ATTACK, Scope.MALPEDIA, Scope.UNION)
        return (parse_scope(self.scope),)

    @property
    def kind_rows(self) -> Tuple[Tuple[str, FrozenSet[ProfileKind]], ...]:
        """(label, mask) pairs to profile; every summary row unless --kinds narrows it"""
        if self.kinds is None:
            return SUMMARY_ROWS
        mask = parse_kind_mask(self.kinds)
        for label, row_mask in SUMMARY_ROWS:
            if row_mask == mask:
                return ((label, mask),)
        return ((kind_mask_label(mask), mask),)

    @property
    def single_combination(self) -> bool:
        return len(self.scopes) == 1 and len(self.kind_rows) == 1

    @property
    def single_file_format(self) -> Optional[str]:
        if self.output_file is None:
            return None
        return SINGLE_FILE_SUFFIXES[self.output_file.suffix.lower()]

    @property
    def has_malpedia(self) -> bool:
        return any(p is not None for p in (self.malpedia_actors, self.malpedia_families, self.malpedia_bib))

    def input_files(self) -> List[Tuple[str, Path]]:
        """(role, path) of every input file, for the manifest"""
        files = [(f"stix[{i}]", path) for i, path in enumerate(self.stix)]
        for role in ("malpedia_actors", "malpedia_families", "malpedia_bib", "rules_file", "refs_file"):
            path = getattr(self, role)
            if path is not None:
                files.append((role, path))
        return files

    # ============ Construction ============

    @classmethod
    def from_settings(cls, settings: Settings, **flags) -> "PipelineConfig":
        """
        Merge settings with per-command flags (None = not given) and validate.
        Raises ConfigError listing every problem.
        """
        values = {name: getattr(settings, name) for name in cls.model_fields if hasattr(settings, name)}
        values.update({key: value for key, value in flags.items() if value is not None})
        try:
            return cls(**values)
        except ValidationError as e:
            problems = "; ".join(
                f"{'.'.join(str(part) for part in error['loc']) or 'config'}: {error['msg']}"
                for error in e.errors()
            )
            raise ConfigError(f"Invalid configuration: {problems}") from None
