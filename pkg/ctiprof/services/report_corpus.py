"""
Threat report corpus: polite concurrent fetching into a content-addressed cache,
plus plain-text extraction from the stored bytes.

Cache layout:
    blobs/<first 2 hex>/<sha256>   raw bytes, shared by every URL with equal content
    meta/<sha256(url)>.json        CacheMeta sidecar per URL
    text/<sha256>.txt              extracted text, re-derivable from the blob
"""
import asyncio
import io
import logging
import time
from collections import Counter, defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Set, Tuple
from urllib.parse import urlsplit

import httpx
from bs4 import BeautifulSoup
from PyPDF2 import PdfReader
from pydantic import TypeAdapter, ValidationError

from ctiprof import __version__
from ctiprof.exceptions import DataError
from ctiprof.models.corpus import DocumentStatus, MediaKind, ReportDocument
from ctiprof.models.entities import ReportRef, Source
from ctiprof.schemas.corpus import CacheMeta, CorpusSummary
from ctiprof.schemas.knowledge import RefLine
from ctiprof.utils.files import atomic_write_bytes, atomic_write_text, sha256_bytes

logger = logging.getLogger(__name__)

DEFAULT_USER_AGENT = f"ctiprof/{__version__} (threat report research crawler)"

HTML_TYPES = {"text/html", "application/xhtml+xml"}
PDF_TYPES = {"application/pdf", "application/x-pdf"}
TEXT_TYPES = {"application/json", "application/xml", "application/javascript"}
GENERIC_TYPES = {"", "application/octet-stream", "binary/octet-stream", "application/download"}
# Word, RTF and other Office formats are stored and hashed but never parsed
OFFICE_TYPE_PREFIXES = (
    "application/msword",
    "application/rtf",
    "text/rtf",
    "application/vnd.ms-",
    "application/vnd.openxmlformats-officedocument",
)

HTML_EXTENSIONS = {".html", ".htm", ".xhtml"}
TEXT_EXTENSIONS = {".txt", ".csv", ".json", ".xml", ".md"}

STRIPPED_TAGS = ("script", "style", "noscript")


# ============ Media kinds ============

def _extension(url: str) -> str:
    path = urlsplit(url).path.lower()
    dot = path.rfind(".")
    return path[dot:] if dot > path.rfind("/") else ""


def _sniff(data: bytes) -> Optional[MediaKind]:
    head = data[:1024].lstrip()
    if head.startswith(b"%PDF-"):
        return MediaKind.PDF
    lowered = head.lower()
    if lowered.startswith(b"<!doctype html") or b"<html" in lowered:
        return MediaKind.HTML
    return None


def detect_media_kind(content_type: Optional[str], data: bytes, url: str = "") -> MediaKind:
    """Content-Type first, magic bytes second, URL extension last"""
    mime = (content_type or "").split(";")[0].strip().lower()
    if mime.startswith(OFFICE_TYPE_PREFIXES):
        return MediaKind.BINARY
    if mime in HTML_TYPES:
        return MediaKind.HTML
    if mime in PDF_TYPES:
        return MediaKind.PDF
    if mime.startswith("text/") or mime in TEXT_TYPES:
        return MediaKind.OTHER_TEXT
    if mime not in GENERIC_TYPES:
        return MediaKind.BINARY

    sniffed = _sniff(data)
    if sniffed is not None:
        return sniffed

    extension = _extension(url)
    if extension == ".pdf":
        return MediaKind.PDF
    if extension in HTML_EXTENSIONS:
        return MediaKind.HTML
    if extension in TEXT_EXTENSIONS:
        return MediaKind.OTHER_TEXT
    return MediaKind.BINARY


# ============ Text extraction ============

def _html_text(data: bytes) -> str:
    soup = BeautifulSoup(data, "html.parser")
    for tag in soup(STRIPPED_TAGS):
        tag.decompose()
    return " ".join(soup.get_text(" ").split())


def _pdf_text(data: bytes) -> str:
    reader = PdfReader(io.BytesIO(data))
    return "\n".join(page.extract_text() or "" for page in reader.pages)


def extract_text_from_bytes(data: bytes, media_kind: MediaKind) -> Tuple[str, Optional[str]]:
    """Returns (text, note); the note explains an empty result"""
    if media_kind == MediaKind.HTML:
        return _html_text(data), None
    if media_kind == MediaKind.PDF:
        try:
            return _pdf_text(data), None
        except Exception as e:
            # PyPDF2 raises a wide range of errors on damaged files
            return "", f"corrupt PDF: {e}"
    if media_kind == MediaKind.OTHER_TEXT:
        return data.decode("utf-8", errors="replace"), None
    return "", "unsupported type: no text extracted"


def extract_text(document: ReportDocument) -> str:
    """Plain text of a downloaded document, derived only from its stored bytes"""
    if not document.downloaded or document.blob_path is None:
        return ""
    text, note = extract_text_from_bytes(document.blob_path.read_bytes(), document.media_kind)
    if note:
        logger.warning(f"{document.ref.url}: {note}")
    return text


# ============ Cache ============

class ReportCache:
    """Content-addressed store of fetched reports"""

    def __init__(self, root: Path):
        self.root = Path(root)

    def blob_path(self, sha256: str) -> Path:
        return self.root / "blobs" / sha256[:2] / sha256

    def meta_path(self, url: str) -> Path:
        return self.root / "meta" / f"{sha256_bytes(url.encode('utf-8'))}.json"

    def text_path(self, sha256: str) -> Path:
        return self.root / "text" / f"{sha256}.txt"

    def _write_meta(self, meta: CacheMeta) -> None:
        atomic_write_text(self.meta_path(meta.url), meta.model_dump_json(indent=2) + "\n")

    def store(
        self,
        ref: ReportRef,
        data: bytes,
        content_type: Optional[str] = None,
        http_code: Optional[int] = 200,
        fetched_at: Optional[datetime] = None,
    ) -> ReportDocument:
        """Store downloaded bytes (deduplicated by hash) and the URL's sidecar"""
        digest = sha256_bytes(data)
        blob = self.blob_path(digest)
        if not blob.exists():
            atomic_write_bytes(blob, data)

        media_kind = detect_media_kind(content_type, data, ref.url)
        status = DocumentStatus.UNSUPPORTED_TYPE if media_kind == MediaKind.BINARY else DocumentStatus.OK
        meta = CacheMeta(
            url=ref.url,
            fqdn=ref.fqdn,
            status=status,
            sha256=digest,
            content_type=content_type,
            media_kind=media_kind,
            http_code=http_code,
            fetched_at=fetched_at or datetime.now(timezone.utc),
        )
        self._write_meta(meta)
        return self._document(ref, meta)

    def store_error(
        self,
        ref: ReportRef,
        status: DocumentStatus,
        error: str,
        http_code: Optional[int] = None,
        fetched_at: Optional[datetime] = None,
    ) -> ReportDocument:
        meta = CacheMeta(
            url=ref.url,
            fqdn=ref.fqdn,
            status=status,
            http_code=http_code,
            error=error,
            fetched_at=fetched_at or datetime.now(timezone.utc),
        )
        self._write_meta(meta)
        return self._document(ref, meta)

    def load_meta(self, url: str) -> Optional[CacheMeta]:
        path = self.meta_path(url)
        if not path.exists():
            return None
        try:
            return CacheMeta.model_validate_json(path.read_text("utf-8"))
        except ValidationError as e:
            logger.warning(f"Ignoring unreadable cache sidecar {path}: {e}")
            return None

    def load_bytes(self, sha256: str) -> bytes:
        return self.blob_path(sha256).read_bytes()

    def _document(self, ref: ReportRef, meta: CacheMeta) -> ReportDocument:
        return ReportDocument(
            ref=ref,
            fetched_at=meta.fetched_at,
            status=meta.status,
            media_kind=meta.media_kind,
            content_sha256=meta.sha256,
            content_type=meta.content_type,
            http_code=meta.http_code,
            error=meta.error,
            blob_path=self.blob_path(meta.sha256) if meta.sha256 else None,
        )

    def document_for(self, ref: ReportRef) -> Optional[ReportDocument]:
        """The cached document for a ref; downloaded entries need their blob present"""
        meta = self.load_meta(ref.url)
        if meta is None:
            return None
        if meta.sha256 and not self.blob_path(meta.sha256).exists():
            logger.warning(f"Cache blob missing for {ref.url}; treating as not cached")
            return None
        return self._document(ref, meta)

    def documents(self) -> Iterator[CacheMeta]:
        meta_dir = self.root / "meta"
        if not meta_dir.exists():
            return
        for path in sorted(meta_dir.glob("*.json")):
            try:
                yield CacheMeta.model_validate_json(path.read_text("utf-8"))
            except ValidationError as e:
                logger.warning(f"Ignoring unreadable cache sidecar {path}: {e}")

    def text_for(self, document: ReportDocument) -> str:
        """Extracted text, cached under text/ after the first extraction"""
        if not document.downloaded:
            return ""
        path = self.text_path(document.content_sha256)
        if path.exists():
            return path.read_text("utf-8")
        text = extract_text(document)
        atomic_write_text(path, text)
        return text


# ============ Fetching ============

class HostRateLimiter:
    """Spaces requests to the same host at least 1/rate seconds apart"""

    def __init__(self, rate_per_host: float):
        self.interval = 1.0 / rate_per_host if rate_per_host > 0 else 0.0
        self._next: Dict[str, float] = {}

    def reserve(self, host: str, now: float) -> float:
        """Book the host's next free slot; returns the delay until it"""
        start = max(now, self._next.get(host, now))
        self._next[host] = start + self.interval
        return start - now

    async def wait(self, host: str) -> None:
        if not self.interval:
            return
        delay = self.reserve(host, time.monotonic())
        if delay > 0:
            await asyncio.sleep(delay)


@dataclass(frozen=True)
class Corpus:
    documents: Tuple[ReportDocument, ...]
    summary: CorpusSummary

    def hashes_by_source(self) -> Dict[Source, Set[str]]:
        hashes: Dict[Source, Set[str]] = {source: set() for source in Source}
        for document in self.documents:
            if document.downloaded:
                hashes[document.ref.source].add(document.content_sha256)
        return hashes

    def downloaded(self) -> List[ReportDocument]:
        return [document for document in self.documents if document.downloaded]


def load_refs(path: Path) -> List[ReportRef]:
    """Report references from a refs.jsonl file as `ingest` writes it"""
    adapter = TypeAdapter(RefLine)
    refs: List[ReportRef] = []
    for number, line in enumerate(path.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            refs.append(adapter.validate_json(line).to_ref())
        except ValueError as e:
            raise DataError(f"{path}:{number}: not a report reference: {e}") from None
    logger.info(f"Loaded {len(refs)} report references from {path}")
    return refs


def _group_by_url(refs: Iterable[ReportRef]) -> Dict[str, List[ReportRef]]:
    by_url: Dict[str, List[ReportRef]] = {}
    for ref in refs:
        by_url.setdefault(ref.url, []).append(ref)
    return dict(sorted(by_url.items()))


def _summarize(per_url: Dict[str, ReportDocument], documents: List[ReportDocument], counters: Counter) -> CorpusSummary:
    by_status = Counter(document.status.value for document in per_url.values())
    errors = by_status[DocumentStatus.HTTP_ERROR.value] + by_status[DocumentStatus.NETWORK_ERROR.value]
    attempted = len(per_url) - counters["missing"]
    by_source: Dict[str, Set[str]] = defaultdict(set)
    for document in documents:
        if document.downloaded:
            by_source[document.ref.source.value].add(document.content_sha256)

    return CorpusSummary(
        total_urls=len(per_url),
        fetched=counters["fetched"],
        reused=counters["reused"],
        missing=counters["missing"],
        by_status=dict(sorted(by_status.items())),
        downloaded=sum(1 for document in per_url.values() if document.downloaded),
        errors=errors - counters["missing"],
        error_rate=(errors - counters["missing"]) / attempted if attempted else 0.0,
        unique_hashes=len({d.content_sha256 for d in per_url.values() if d.downloaded}),
        unique_hashes_by_source={source: len(hashes) for source, hashes in sorted(by_source.items())},
    )


def _build_corpus(by_url: Dict[str, List[ReportRef]], per_url: Dict[str, ReportDocument], counters: Counter) -> Corpus:
    documents = [
        per_url[url].with_ref(ref)
        for url, refs in by_url.items()
        for ref in sorted(refs, key=lambda r: r.source.value)
    ]
    summary = _summarize(per_url, documents, counters)
    logger.info(
        f"Corpus: {summary.total_urls} URLs, {summary.downloaded} downloaded "
        f"({summary.unique_hashes} unique), {summary.fetched} fetched, {summary.reused} from cache, "
        f"{summary.missing} missing, error rate {summary.error_rate:.1%}"
    )
    return Corpus(documents=tuple(documents), summary=summary)


def load_corpus(refs: Iterable[ReportRef], cache_dir: Path) -> Corpus:
    """Rebuild documents from the cache alone; uncached URLs become missing network errors"""
    cache = ReportCache(cache_dir)
    by_url = _group_by_url(refs)
    per_url: Dict[str, ReportDocument] = {}
    counters: Counter = Counter()
    for url, refs_for_url in by_url.items():
        document = cache.document_for(refs_for_url[0])
        if document is None:
            counters["missing"] += 1
            document = ReportDocument(
                ref=refs_for_url[0],
                fetched_at=datetime.now(timezone.utc),
                status=DocumentStatus.NETWORK_ERROR,
                error="not cached (offline)",
            )
        elif document.downloaded:
            counters["reused"] += 1
        per_url[url] = document
    return _build_corpus(by_url, per_url, counters)


async def _fetch_one(
    client: httpx.AsyncClient,
    cache: ReportCache,
    ref: ReportRef,
    semaphore: asyncio.Semaphore,
    limiter: HostRateLimiter,
) -> ReportDocument:
    # Host spacing is awaited before a fetch slot is taken
    await limiter.wait(ref.fqdn)
    async with semaphore:
        try:
            response = await client.get(ref.url)
        except httpx.TooManyRedirects as e:
            logger.error(f"Fetch failed for {ref.url}: too many redirects")
            return cache.store_error(ref, DocumentStatus.NETWORK_ERROR, f"too many redirects: {e}")
        except (httpx.HTTPError, httpx.InvalidURL) as e:
            logger.error(f"Fetch failed for {ref.url}: {type(e).__name__}: {e}")
            return cache.store_error(ref, DocumentStatus.NETWORK_ERROR, f"{type(e).__name__}: {e}")

    if response.status_code >= 400:
        logger.error(f"Fetch failed for {ref.url}: HTTP {response.status_code}")
        return cache.store_error(
            ref, DocumentStatus.HTTP_ERROR, f"HTTP {response.status_code}", http_code=response.status_code
        )
    return cache.store(ref, response.content, response.headers.get("content-type"), response.status_code)


async def fetch_corpus(
    refs: Iterable[ReportRef],
    cache_dir: Path,
    concurrency_limit: int = 4,
    rate_per_host: float = 1.0,
    timeout: float = 30.0,
    max_redirects: int = 3,
    user_agent: str = DEFAULT_USER_AGENT,
    offline: bool = False,
    transport: Optional[httpx.AsyncBaseTransport] = None,
) -> Corpus:
    """
    Fetch every URL not already downloaded in the cache. Per-URL failures are
    recorded in the cache and the summary; they never abort the batch.
    """
    if offline:
        return load_corpus(refs, cache_dir)

    cache = ReportCache(cache_dir)
    by_url = _group_by_url(refs)
    per_url: Dict[str, ReportDocument] = {}
    counters: Counter = Counter()
    pending: List[ReportRef] = []

    for url, refs_for_url in by_url.items():
        cached = cache.document_for(refs_for_url[0])
        if cached is not None and cached.downloaded:
            counters["reused"] += 1
            per_url[url] = cached
        else:
            pending.append(refs_for_url[0])

    if pending:
        semaphore = asyncio.Semaphore(max(concurrency_limit, 1))
        limiter = HostRateLimiter(rate_per_host)
        async with httpx.AsyncClient(
            headers={"User-Agent": user_agent},
            timeout=timeout,
            follow_redirects=True,
            max_redirects=max_redirects,
            transport=transport,
        ) as client:
            results = await asyncio.gather(
                *(_fetch_one(client, cache, ref, semaphore, limiter) for ref in pending)
            )
        for ref, document in zip(pending, results):
            per_url[ref.url] = document
        counters["fetched"] = len(pending)

    return _build_corpus(by_url, per_url, counters)


def fetch_corpus_sync(refs: Iterable[ReportRef], cache_dir: Path, **kwargs) -> Corpus:
    return asyncio.run(fetch_corpus(refs, cache_dir, **kwargs))
