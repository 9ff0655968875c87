from ctiprof.schemas.corpus import CacheMeta, CorpusSummary
from ctiprof.schemas.extraction import ExtractionLine, ExtractionSummaryRow
from ctiprof.schemas.knowledge import AttackSummary, MalpediaSummary, RefLine
from ctiprof.schemas.manifest import Manifest
from ctiprof.schemas.pipeline import PipelineConfig
from ctiprof.schemas.rules import NormalizationRule, NormalizationRuleSet, RuleTable
from ctiprof.schemas.tables import OverlapRow, SimilarityStats, SpecificitySummary, TableRow

__all__ = [
    "CacheMeta",
    "CorpusSummary",
    "ExtractionLine",
    "ExtractionSummaryRow",
    "AttackSummary",
    "MalpediaSummary",
    "RefLine",
    "Manifest",
    "PipelineConfig",
    "NormalizationRule",
    "NormalizationRuleSet",
    "RuleTable",
    "OverlapRow",
    "SimilarityStats",
    "SpecificitySummary",
    "TableRow",
]
