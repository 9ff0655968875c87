"""
Downloaded threat reports
"""
import enum
import re
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Optional

from ctiprof.models.entities import ReportRef

SHA256_RE = re.compile(r"^[0-9a-f]{64}$")


class DocumentStatus(str, enum.Enum):
    OK = "ok"
    HTTP_ERROR = "http_error"
    NETWORK_ERROR = "network_error"
    UNSUPPORTED_TYPE = "unsupported_type"  # Stored and hashed, but no text extraction


class MediaKind(str, enum.Enum):
    HTML = "html"
    PDF = "pdf"
    OTHER_TEXT = "other_text"
    BINARY = "binary"


@dataclass(frozen=True)
class ReportDocument:
    ref: ReportRef
    fetched_at: datetime
    status: DocumentStatus
    media_kind: MediaKind = MediaKind.BINARY
    content_sha256: Optional[str] = None
    content_type: Optional[str] = None
    http_code: Optional[int] = None
    error: Optional[str] = None
    blob_path: Optional[Path] = None

    def __post_init__(self):
        if self.status == DocumentStatus.OK and not self.content_sha256:
            raise ValueError(f"{self.ref.url}: OK document without content hash")
        if self.content_sha256 is not None and not SHA256_RE.match(self.content_sha256):
            raise ValueError(f"{self.ref.url}: malformed sha256 {self.content_sha256!r}")
        if self.status == DocumentStatus.HTTP_ERROR and self.http_code is None:
            raise ValueError(f"{self.ref.url}: HTTP error without status code")

    @property
    def downloaded(self) -> bool:
        """True when raw bytes were stored (OK or unsupported type)"""
        return self.content_sha256 is not None

    def with_ref(self, ref: ReportRef) -> "ReportDocument":
        """The same stored document seen through another source's ref"""
        return ReportDocument(
            ref=ref,
            fetched_at=self.fetched_at,
            status=self.status,
            media_kind=self.media_kind,
            content_sha256=self.content_sha256,
            content_type=self.content_type,
            http_code=self.http_code,
            error=self.error,
            blob_path=self.blob_path,
        )
