from datetime import datetime
from typing import Any, Dict, List

from pydantic import BaseModel, Field


class Manifest(BaseModel):
    """Written next to every command's outputs"""
    tool: str = "ctiprof"
    version: str
    command: str
    created_at: datetime
    config: Dict[str, Any]
    inputs: Dict[str, str] = Field(default_factory=dict)  # role -> sha256
    outputs: List[str] = Field(default_factory=list)
