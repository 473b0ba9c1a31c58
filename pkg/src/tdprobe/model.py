"""Domain types, configuration, SNI database and the on-disk session-log format.

Everything downstream (detection, replay server, measurement client, proxy,
reports) shares these types.  All of them are immutable after construction and
safe to pass between threads.

Unit conventions used throughout the package:
    1 MB   = 1,000,000 bytes (decimal, not binary)
    Mbps   = bytes * 8 / seconds / 1e6
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
import math
import os
import re
import secrets
from dataclasses import dataclass, field, replace
from typing import Iterable

log = logging.getLogger(__name__)

LOG_SCHEMA_VERSION = 1

# bytes/second carried by 1 Mbps
BYTES_PER_SEC_PER_MBPS = 125_000

QOS_CLASSES = ("video", "audio")

_HOSTNAME_RE = re.compile(
    r"^(?=.{1,253}$)([a-zA-Z0-9]([a-zA-Z0-9-]{0,61}[a-zA-Z0-9])?\.)*"
    r"[a-zA-Z0-9]([a-zA-Z0-9-]{0,61}[a-zA-Z0-9])?$"
)


class SniDbError(ValueError):
    """Raised for malformed or inconsistent SNI database files."""


class SessionLogError(ValueError):
    """Raised for malformed or invariant-violating session-log files."""


def mbps(byte_count: float, seconds: float) -> float:
    """Average throughput of `byte_count` bytes over `seconds`, in Mbps."""
    return byte_count * 8.0 / seconds / 1e6


def is_valid_hostname(name: str) -> bool:
    return bool(name) and _HOSTNAME_RE.match(name) is not None


@dataclass(frozen=True)
class ServiceProfile:
    """Identity of one replayable service.

    The `sni` hostname is what the measurement client puts into the TLS
    clientHello and what in-path classifiers key on; it must be unique
    across a database.  Content is served in fixed-size segments, so
    `content_size` must be a whole number of segments.
    """

    name: str
    sni: str
    qos_class: str
    content_size: int = 20_000_000
    segment_size: int = 2_000_000

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("service name must be non-empty")
        if not is_valid_hostname(self.sni):
            raise ValueError(f"{self.name}: invalid SNI hostname {self.sni!r}")
        if self.qos_class not in QOS_CLASSES:
            raise ValueError(
                f"{self.name}: qos_class must be one of {QOS_CLASSES}, got {self.qos_class!r}"
            )
        if self.segment_size <= 0 or self.content_size <= 0:
            raise ValueError(f"{self.name}: sizes must be positive")
        if self.content_size % self.segment_size != 0:
            raise ValueError(
                f"{self.name}: content_size {self.content_size} is not a multiple "
                f"of segment_size {self.segment_size}"
            )

    @property
    def n_segments(self) -> int:
        return self.content_size // self.segment_size


@dataclass(frozen=True)
class DetectionConfig:
    """Calibrated detection thresholds and the download contract.

    delta_mbps        throughput gap that marks a slot "low"
    slot_fraction_a   fraction of total slots driving the hard/soft thresholds
    slot_seconds      duration of one comparison slot
    break_threshold_b connection-break count that flags connectivity trouble
    download_bytes    per-service download target
    max_duration_s    per-service download deadline
    """

    delta_mbps: float = 1.75
    slot_fraction_a: float = 0.3
    slot_seconds: float = 1.75
    break_threshold_b: int = 5
    download_bytes: int = 20_000_000
    max_duration_s: float = 180.0

    def __post_init__(self) -> None:
        if not (0.0 < self.slot_fraction_a < 0.5):
            raise ValueError(
                f"slot_fraction_a must be in (0, 0.5), got {self.slot_fraction_a}"
            )
        if self.delta_mbps <= 0:
            raise ValueError(f"delta_mbps must be > 0, got {self.delta_mbps}")
        if self.slot_seconds <= 0:
            raise ValueError(f"slot_seconds must be > 0, got {self.slot_seconds}")
        if self.break_threshold_b < 1:
            raise ValueError(
                f"break_threshold_b must be >= 1, got {self.break_threshold_b}"
            )
        if self.download_bytes <= 0 or self.max_duration_s <= 0:
            raise ValueError("download_bytes and max_duration_s must be positive")


@dataclass(frozen=True)
class ByteSample:
    """One application-level receive observation for one service.

    t is seconds since the shared session start (monotonic clock);
    cum_bytes is the cumulative application payload received so far,
    including any re-fetched bytes after connection breaks.
    """

    t: float
    cum_bytes: int

    def __post_init__(self) -> None:
        if self.t < 0 or not math.isfinite(self.t):
            raise ValueError(f"sample time must be finite and >= 0, got {self.t}")
        if self.cum_bytes < 0:
            raise ValueError(f"cum_bytes must be >= 0, got {self.cum_bytes}")


@dataclass(frozen=True)
class ServiceRun:
    """One service's download within a session.

    completed means the configured download size of distinct content arrived
    before the deadline; n_cb counts abnormal connection terminations
    (resets, aborts, idle timeouts) observed while downloading.
    """

    service: ServiceProfile
    samples: tuple[ByteSample, ...]
    n_cb: int = 0
    completed: bool = False

    def __post_init__(self) -> None:
        if self.n_cb < 0:
            raise ValueError(f"n_cb must be >= 0, got {self.n_cb}")
        object.__setattr__(self, "samples", tuple(self.samples))
        last_t = -1.0
        last_b = -1
        for s in self.samples:
            if s.t <= last_t:
                raise ValueError(
                    f"{self.service.name}: sample times must be strictly increasing "
                    f"({s.t} after {last_t})"
                )
            if s.cum_bytes < last_b:
                raise ValueError(
                    f"{self.service.name}: cum_bytes must be non-decreasing "
                    f"({s.cum_bytes} after {last_b})"
                )
            last_t, last_b = s.t, s.cum_bytes

    @property
    def final_bytes(self) -> int:
        return self.samples[-1].cum_bytes if self.samples else 0

    @property
    def end_t(self) -> float:
        return self.samples[-1].t if self.samples else 0.0


@dataclass(frozen=True)
class SessionLog:
    """One measurement run: several same-class services downloaded in parallel.

    All runs share the t = 0 origin, so their samples are directly
    comparable on one slot grid.
    """

    user_id: str
    isp: str
    started_at: str
    runs: tuple[ServiceRun, ...]
    config: DetectionConfig = field(default_factory=DetectionConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "runs", tuple(self.runs))
        if len(self.runs) < 2:
            raise ValueError(f"session needs >= 2 runs, got {len(self.runs)}")
        classes = {r.service.qos_class for r in self.runs}
        if len(classes) != 1:
            raise ValueError(
                f"all runs must share one qos_class, got {sorted(classes)}"
            )
        names = [r.service.name for r in self.runs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate service in session: {names}")
        for r in self.runs:
            target = min(self.config.download_bytes, r.service.content_size)
            if r.completed and r.final_bytes < target:
                raise ValueError(
                    f"{r.service.name}: marked completed with only "
                    f"{r.final_bytes} of {target} bytes"
                )

    def download_target(self, run: ServiceRun) -> int:
        """Distinct bytes a run must deliver to count as completed."""
        return min(self.config.download_bytes, run.service.content_size)

    @property
    def qos_class(self) -> str:
        return self.runs[0].service.qos_class

    def run_for(self, service_name: str) -> ServiceRun:
        for r in self.runs:
            if r.service.name == service_name:
                return r
        raise KeyError(service_name)


@dataclass(frozen=True)
class SlotSeries:
    """Per-slot average throughput (Mbps) for one service on a shared grid."""

    service: str
    slot_seconds: float
    throughput: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "throughput", tuple(float(x) for x in self.throughput))
        if self.slot_seconds <= 0:
            raise ValueError("slot_seconds must be > 0")
        if any(x < 0 for x in self.throughput):
            raise ValueError(f"{self.service}: negative slot throughput")

    @property
    def n_t(self) -> int:
        return len(self.throughput)


TD_YES = "yes"
TD_NO = "no"
TD_INCONCLUSIVE = "inconclusive_bad_network"


@dataclass(frozen=True)
class Verdict:
    """Per-service detection outcome for one session."""

    service: str
    tcd: bool
    csd: bool
    td_detected: str
    n_l: int = 0
    n_s: int = 0

    def __post_init__(self) -> None:
        if self.td_detected not in (TD_YES, TD_NO, TD_INCONCLUSIVE):
            raise ValueError(f"bad td_detected value {self.td_detected!r}")


def make_user_id(now: _dt.datetime | None = None) -> str:
    """Session identifier: ISO-8601 timestamp plus a short random suffix."""
    stamp = (now or _dt.datetime.now(_dt.timezone.utc)).strftime("%Y%m%dT%H%M%SZ")
    return f"{stamp}-{secrets.token_hex(4)}"


# ---------------------------------------------------------------------------
# SNI database
# ---------------------------------------------------------------------------
#
# One JSON object per line:
#   {"name": "YouTube", "sni": "yt.example", "qos_class": "video",
#    "content_size": 20000000, "segment_size": 2000000}
# content_size / segment_size are optional and default to 20 MB / 2 MB.
# Blank lines and lines starting with '#' are ignored.

def load_sni_db(path: str | os.PathLike[str]) -> list[ServiceProfile]:
    """Load and validate the service database; reject duplicate SNIs."""
    profiles: list[ServiceProfile] = []
    seen_sni: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise SniDbError(f"{path}:{lineno}: invalid JSON: {e}") from e
            if not isinstance(rec, dict):
                raise SniDbError(f"{path}:{lineno}: expected an object")
            try:
                profile = ServiceProfile(
                    name=rec["name"],
                    sni=rec["sni"],
                    qos_class=rec["qos_class"],
                    content_size=int(rec.get("content_size", 20_000_000)),
                    segment_size=int(rec.get("segment_size", 2_000_000)),
                )
            except KeyError as e:
                raise SniDbError(f"{path}:{lineno}: missing field {e}") from e
            except ValueError as e:
                raise SniDbError(f"{path}:{lineno}: {e}") from e
            if profile.sni in seen_sni:
                raise SniDbError(
                    f"{path}:{lineno}: SNI {profile.sni!r} used by both "
                    f"{seen_sni[profile.sni]!r} and {profile.name!r}"
                )
            seen_sni[profile.sni] = profile.name
            profiles.append(profile)
    if not profiles:
        log.warning("SNI database %s contains no services", path)
    return profiles


def write_sni_db(profiles: Iterable[ServiceProfile], path: str | os.PathLike[str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in profiles:
            f.write(json.dumps(profile_to_dict(p), sort_keys=True) + "\n")


def profile_to_dict(p: ServiceProfile) -> dict:
    return {
        "name": p.name,
        "sni": p.sni,
        "qos_class": p.qos_class,
        "content_size": p.content_size,
        "segment_size": p.segment_size,
    }


def _profile_from_dict(d: dict) -> ServiceProfile:
    return ServiceProfile(
        name=d["name"],
        sni=d["sni"],
        qos_class=d["qos_class"],
        content_size=int(d["content_size"]),
        segment_size=int(d["segment_size"]),
    )


def config_to_dict(c: DetectionConfig) -> dict:
    return {
        "delta_mbps": c.delta_mbps,
        "slot_fraction_a": c.slot_fraction_a,
        "slot_seconds": c.slot_seconds,
        "break_threshold_b": c.break_threshold_b,
        "download_bytes": c.download_bytes,
        "max_duration_s": c.max_duration_s,
    }


def config_from_dict(d: dict) -> DetectionConfig:
    return DetectionConfig(
        delta_mbps=float(d["delta_mbps"]),
        slot_fraction_a=float(d["slot_fraction_a"]),
        slot_seconds=float(d["slot_seconds"]),
        break_threshold_b=int(d["break_threshold_b"]),
        download_bytes=int(d["download_bytes"]),
        max_duration_s=float(d["max_duration_s"]),
    )


# ---------------------------------------------------------------------------
# Session-log file format (versioned, line-delimited JSON)
# ---------------------------------------------------------------------------
#
# Line 1: {"type": "header", "version": 1, "user_id": ..., "isp": ...,
#          "started_at": ..., "config": {...}}
# Then one line per service run:
#         {"type": "run", "service": {...}, "n_cb": ..., "completed": ...,
#          "t": [...], "bytes": [...]}
#
# The format is append-friendly (a run line can be written as soon as its
# download stops) and diff-friendly for test fixtures.

def write_session_log(session: SessionLog, path: str | os.PathLike[str]) -> None:
    """Serialize a validated SessionLog; read_session_log() inverts this."""
    with open(path, "w", encoding="utf-8") as f:
        header = {
            "type": "header",
            "version": LOG_SCHEMA_VERSION,
            "user_id": session.user_id,
            "isp": session.isp,
            "started_at": session.started_at,
            "config": config_to_dict(session.config),
        }
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for run in session.runs:
            rec = {
                "type": "run",
                "service": profile_to_dict(run.service),
                "n_cb": run.n_cb,
                "completed": run.completed,
                "t": [s.t for s in run.samples],
                "bytes": [s.cum_bytes for s in run.samples],
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_session_log(path: str | os.PathLike[str]) -> SessionLog:
    """Parse and re-validate a session log; raises SessionLogError on any
    schema or invariant problem."""
    header = None
    runs: list[ServiceRun] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise SessionLogError(f"{path}:{lineno}: invalid JSON: {e}") from e
            kind = rec.get("type")
            if kind == "header":
                if header is not None:
                    raise SessionLogError(f"{path}:{lineno}: duplicate header")
                if rec.get("version") != LOG_SCHEMA_VERSION:
                    raise SessionLogError(
                        f"{path}:{lineno}: unsupported schema version "
                        f"{rec.get('version')!r} (expected {LOG_SCHEMA_VERSION})"
                    )
                header = rec
            elif kind == "run":
                if header is None:
                    raise SessionLogError(f"{path}:{lineno}: run before header")
                try:
                    samples = tuple(
                        ByteSample(t=float(t), cum_bytes=int(b))
                        for t, b in zip(rec["t"], rec["bytes"], strict=True)
                    )
                    runs.append(
                        ServiceRun(
                            service=_profile_from_dict(rec["service"]),
                            samples=samples,
                            n_cb=int(rec["n_cb"]),
                            completed=bool(rec["completed"]),
                        )
                    )
                except (KeyError, ValueError, TypeError) as e:
                    raise SessionLogError(f"{path}:{lineno}: {e}") from e
            else:
                raise SessionLogError(f"{path}:{lineno}: unknown record type {kind!r}")
    if header is None:
        raise SessionLogError(f"{path}: missing header line")
    try:
        return SessionLog(
            user_id=header["user_id"],
            isp=header["isp"],
            started_at=header["started_at"],
            runs=tuple(runs),
            config=config_from_dict(header["config"]),
        )
    except (KeyError, ValueError, TypeError) as e:
        raise SessionLogError(f"{path}: {e}") from e


def with_config(session: SessionLog, config: DetectionConfig) -> SessionLog:
    """Copy of `session` carrying a different detection config."""
    return replace(session, config=config)
