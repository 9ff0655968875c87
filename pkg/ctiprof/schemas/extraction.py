from typing import List, Optional

from pydantic import BaseModel

from ctiprof.schemas.tables import TableRow


class ExtractionLine(BaseModel):
    """One line of extractions.jsonl"""
    sha256: str
    url: str
    source: str
    group: Optional[str] = None  # canonical name when exactly one group is assigned
    groups: List[str] = []
    cves: List[str] = []
    techniques: List[str] = []
    unknown_techniques: List[str] = []


class ExtractionSummaryRow(TableRow):
    """Per dataset: what CVE and technique ID extraction found in eligible reports"""
    dataset: str
    reports: int
    reports_with_cves: int
    reports_with_cves_pct: float
    unique_cves: int
    cve_groups: int
    reports_with_techniques: int
    reports_with_techniques_pct: float
    unique_techniques: int
    technique_groups: int


class GroupSpecificExampleRow(TableRow):
    group: str
    count: int
    behaviors: str  # space-separated


class AuditRow(TableRow):
    group: str
    cataloged: int
    extracted: int
    extracted_not_cataloged: int
    extracted_not_cataloged_ids: str  # space-separated


class AuditSummary(TableRow):
    reports: int
    reports_with_ids: int
    unique_extracted_ids: int
    unique_cataloged_ids: int
    extracted_not_cataloged_ids: int  # IDs extracted for some group but cataloged for none
    extracted_not_cataloged_pairs: int  # (group, ID) pairs missing from the catalog
    groups: int
