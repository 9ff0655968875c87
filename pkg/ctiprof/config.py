from datetime import date
from functools import lru_cache
from pathlib import Path
from typing import List, Optional

from pydantic import AliasChoices, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from ctiprof import __version__
from ctiprof.exceptions import ConfigError


class Settings(BaseSettings):
    """
    Runtime configuration.

    Every key can be set through the environment (CTIPROF_<KEY>), a `.env` file,
    or a `--config` file in the same KEY=value format. List values are JSON arrays,
    e.g. CTIPROF_STIX=["enterprise-attack.json","mobile-attack.json"].
    """

    model_config = SettingsConfigDict(
        env_prefix="CTIPROF_",
        env_file=".env",
        extra="ignore",
    )

    # App
    app_name: str = "ctiprof"
    log_level: str = "INFO"

    # Knowledge base inputs
    stix: List[Path] = Field(default_factory=list)
    attack_relationship_citations: bool = False  # "uses" citations count as group reports
    malpedia_actors: Optional[Path] = None
    malpedia_families: Optional[Path] = None
    malpedia_bib: Optional[Path] = None
    malpedia_date: Optional[date] = None  # Falls back to newest family "updated"
    malpedia_tag_fields: List[str] = Field(
        default_factory=lambda: ["keywords", "tags", "malpedia"]
    )
    malpedia_cotag_associations: bool = False

    # Entity resolution (None = bundled default rule table)
    rules_file: Optional[Path] = None

    # Report cache - CTIPROF_CACHE overrides
    cache_dir: Path = Field(
        Path(".ctiprof-cache"),
        validation_alias=AliasChoices("CTIPROF_CACHE", "CTIPROF_CACHE_DIR", "cache_dir"),
    )
    offline: bool = False

    # Fetch politeness
    fetch_concurrency: int = 4
    fetch_rate_per_host: float = 1.0  # requests per second per host
    fetch_timeout: float = 30.0
    fetch_max_redirects: int = 3
    user_agent: str = f"ctiprof/{__version__} (threat report research crawler)"

    # Profiles
    scope: Optional[str] = None  # attack, malpedia, union; None = all three
    kinds: Optional[str] = None  # e.g. "tech,soft"; None = every summary row
    similarity_threshold: float = 0.4
    co_occurrence_threshold: float = 0.75
    generic_top_n: int = 10
    collapse_subtechniques: bool = False

    # Extraction
    lenient_cve_separators: bool = False
    keep_unknown_techniques: bool = True

    # Output
    output_dir: Path = Path("out")
    output_formats: List[str] = Field(default_factory=lambda: ["csv", "json", "md"])


@lru_cache()
def get_settings() -> Settings:
    return Settings()


def load_settings(config_file: Optional[Path] = None, **overrides) -> Settings:
    """
    Build settings from an optional KEY=value config file plus explicit overrides.
    Overrides with value None are ignored so unset CLI flags fall through.
    """
    explicit = {key: value for key, value in overrides.items() if value is not None}
    try:
        if config_file is None and not explicit:
            return get_settings()
        if config_file is not None:
            return Settings(_env_file=config_file, **explicit)
        return Settings(**explicit)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"Invalid settings: {problems}") from None
