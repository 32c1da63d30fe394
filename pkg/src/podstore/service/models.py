"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class StoreSettings(BaseModel):
    page_size: int = 1024
    c_pod: float = 1200.0
    max_pod_depth: int = 3
    thesaurus_bytes: int = 64 * 1024 * 1024
    digest: str = "xxh3-128"
    optimizer: str = "lga"
    volatility: str = "empirical"
    seed: int = 0


class CreateSessionRequest(BaseModel):
    settings: StoreSettings = Field(default_factory=StoreSettings)
    backend: str = "mem"  # "mem" or "dir"
    store_dir: Optional[str] = None
    use_async: bool = False


class SessionInfo(BaseModel):
    session_id: str
    backend: str
    use_async: bool
    variables: List[str]
    time_ids: List[int]


class StatementRequest(BaseModel):
    statement: str  # one script line


class StatementResponse(BaseModel):
    accessed: List[str]
    mutated_objects: int
    value: Optional[int] = None
    time_id: Optional[int] = None  # set when the statement was a checkpoint


class CheckpointResponse(BaseModel):
    time_id: int
    pods_written: int
    pods_skipped: int
    bytes_written: int


class LoadRequest(BaseModel):
    names: List[str]
    time_id: int
    include_bytes: bool = False


class LoadResponse(BaseModel):
    names: List[str]
    time_id: int
    objects: int
    canonical_sha256: str
    canonical_b64: Optional[str] = None


class CheckpointRow(BaseModel):
    time_id: int
    wall_s: float
    blocked_s: float
    pods_written: int
    pods_skipped: int
    bytes_written: int
    manifest_bytes: int
    objects_saved: int


class MetricsSummary(BaseModel):
    checkpoints: int
    storage_bytes: int
    pod_bytes: int
    manifest_bytes: int
    namespace_bytes: int
    objects_total: int
    throughput_objects_per_s: float
    save_wall_total_s: float
    blocked_total_s: float
    load_wall_total_s: float


class RunRequest(BaseModel):
    script: str
    settings: StoreSettings = Field(default_factory=StoreSettings)
    backend: str = "mem"
    store_dir: Optional[str] = None
    use_async: bool = False
    seed: int = 0


class RunResponse(BaseModel):
    summary: MetricsSummary
    checkpoints: List[CheckpointRow]
    csv: str
    audit_ok: bool


class SweepMutationRequest(BaseModel):
    scale: float = 0.01
    settings: StoreSettings = Field(default_factory=StoreSettings)


class SweepPoint(BaseModel):
    label: str
    summary: MetricsSummary


class SweepResponse(BaseModel):
    points: List[SweepPoint]


class CompareRequest(BaseModel):
    strategies: List[str]
    scale: float = 0.002
    settings: StoreSettings = Field(default_factory=StoreSettings)


class CompareRow(BaseModel):
    script: str
    optimizer: str
    storage_bytes: int
    pod_bytes: int
    manifest_bytes: int
    save_wall_total_s: float
    objects_total: int


class CompareResponse(BaseModel):
    rows: List[CompareRow]


class VerifyRequest(BaseModel):
    seed: int = 0


class VerifyCheck(BaseModel):
    name: str
    ok: bool
    detail: str


class VerifyResponse(BaseModel):
    ok: bool
    checks: List[VerifyCheck]
