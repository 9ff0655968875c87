from ctiprof.services.entity_resolution import MergeMap, build_merge_map, load_rules
from ctiprof.services.outputs import OutputWriter
from ctiprof.services.pipeline import KnowledgeBase, Pipeline
from ctiprof.services.report_corpus import Corpus, ReportCache, fetch_corpus, load_corpus

__all__ = [
    "MergeMap",
    "build_merge_map",
    "load_rules",
    "OutputWriter",
    "KnowledgeBase",
    "Pipeline",
    "Corpus",
    "ReportCache",
    "fetch_corpus",
    "load_corpus",
]
