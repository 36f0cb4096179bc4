"""
Run manifest - what a simulate run produced and how to verify it
"""
from datetime import datetime, timezone
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

MANIFEST_NAME = "manifest.json"


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class TrialEntry(BaseModel):
    """One trial directory"""

    model_config = ConfigDict(extra="forbid")

    subject: str
    key: str
    condition: str
    level: float
    duration: float
    seed: int
    directory: str
    stim_amplitude: Optional[float] = None
    mvc: float
    files: Dict[str, str] = Field(default_factory=dict)


class RunManifest(BaseModel):
    """Config identity, per-file content hashes, tool version and timestamps"""

    model_config = ConfigDict(extra="forbid")

    schema_version: int = 1
    tool_version: str
    config_hash: str
    master_seed: int
    subjects: List[str] = Field(default_factory=list)
    created_at: str = Field(default_factory=utc_now)
    completed_at: Optional[str] = None
    trials: List[TrialEntry] = Field(default_factory=list)
    file_hashes: Dict[str, str] = Field(default_factory=dict)

    def trials_for(self, subject: str) -> List[TrialEntry]:
        return [t for t in self.trials if t.subject == subject]

    def complete(self):
        self.completed_at = utc_now()
