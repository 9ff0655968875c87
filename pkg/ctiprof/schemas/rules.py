import enum
import re
from functools import lru_cache
from typing import List, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator


class RuleKind(str, enum.Enum):
    LOWERCASE = "lowercase"
    STRIP_SUFFIX = "strip_suffix"
    STRIP_PREFIX = "strip_prefix"
    REPLACE_TERM = "replace_term"
    REPLACE_CHARS = "replace_chars"
    COLLAPSE_WHITESPACE = "collapse_whitespace"


PATTERNLESS_KINDS = {RuleKind.LOWERCASE, RuleKind.COLLAPSE_WHITESPACE}


@lru_cache(maxsize=None)
def _compile(kind: RuleKind, pattern: str) -> "re.Pattern[str]":
    if kind == RuleKind.STRIP_PREFIX:
        return re.compile(rf"^(?:{pattern})")
    if kind == RuleKind.STRIP_SUFFIX:
        return re.compile(rf"(?:{pattern})$")
    return re.compile(pattern)


class NormalizationRule(BaseModel):
    """One rewrite step; patterns are Python regular expressions"""
    kind: RuleKind
    pattern: str = ""
    replacement: str = ""

    class Config:
        frozen = True

    @field_validator('pattern')
    @classmethod
    def validate_pattern(cls, v):
        try:
            re.compile(v)
        except re.error as e:
            raise ValueError(f'invalid regular expression {v!r}: {e}')
        return v

    @model_validator(mode='after')
    def validate_kind_needs_pattern(self):
        if self.kind not in PATTERNLESS_KINDS and not self.pattern:
            raise ValueError(f'{self.kind.value} rule needs a pattern')
        return self

    def apply(self, text: str) -> str:
        if self.kind == RuleKind.LOWERCASE:
            return text.lower()
        if self.kind == RuleKind.COLLAPSE_WHITESPACE:
            return " ".join(text.split())
        replacement = "" if self.kind in (RuleKind.STRIP_PREFIX, RuleKind.STRIP_SUFFIX) else self.replacement
        return _compile(self.kind, self.pattern).sub(replacement, text)


class NormalizationRuleSet(BaseModel):
    """Ordered rules for one entity kind, plus manual merge overrides"""
    rules: List[NormalizationRule]
    force_merge: List[Tuple[str, str]] = Field(default_factory=list)  # "source:id" pairs
    force_split: List[Tuple[str, str]] = Field(default_factory=list)

    class Config:
        frozen = True

    @field_validator('force_merge', 'force_split')
    @classmethod
    def validate_member_refs(cls, v):
        for pair in v:
            for member in pair:
                source, _, source_id = member.partition(":")
                if source not in ("attack", "malpedia") or not source_id:
                    raise ValueError(f'override member must look like "attack:G0032", got {member!r}')
        return v

    @model_validator(mode='after')
    def validate_no_conflicts(self):
        merged = {frozenset(pair) for pair in self.force_merge}
        split = {frozenset(pair) for pair in self.force_split}
        if merged & split:
            raise ValueError('a pair cannot be both force-merged and force-split')
        return self

    def apply_once(self, text: str) -> str:
        for rule in self.rules:
            text = rule.apply(text)
        return text


class RuleTable(BaseModel):
    version: str
    group: NormalizationRuleSet
    software: NormalizationRuleSet
