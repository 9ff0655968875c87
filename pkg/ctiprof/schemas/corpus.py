from datetime import datetime
from typing import Dict, Optional

from pydantic import BaseModel, Field

from ctiprof.models.corpus import DocumentStatus, MediaKind


class CacheMeta(BaseModel):
    """Sidecar stored at cache/meta/<sha256(url)>.json"""
    url: str
    fqdn: str
    status: DocumentStatus
    sha256: Optional[str] = None
    content_type: Optional[str] = None
    media_kind: MediaKind = MediaKind.BINARY
    http_code: Optional[int] = None
    error: Optional[str] = None
    fetched_at: datetime


class CorpusSummary(BaseModel):
    total_urls: int = 0
    fetched: int = 0  # requested over the network in this run
    reused: int = 0  # already downloaded in the cache
    missing: int = 0  # offline and not cached
    by_status: Dict[str, int] = Field(default_factory=dict)
    downloaded: int = 0
    errors: int = 0
    error_rate: float = 0.0
    unique_hashes: int = 0
    unique_hashes_by_source: Dict[str, int] = Field(default_factory=dict)
