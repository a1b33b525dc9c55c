"""Core data types shared across the pipeline.

Everything here is immutable once constructed. Timestamps are timezone-aware
UTC datetimes truncated to whole seconds.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import IntEnum
from typing import Optional

import numpy as np


class EventKind(IntEnum):
    """Behavioral event vocabulary; the integer value is the one-hot index."""

    Comment = 0
    Stargazers = 1
    CommitAdditions = 2
    CommitDeletions = 3
    Subscribers = 4
    Create = 5
    Delete = 6
    IssueComment = 7
    CommitComment = 8
    PullRequestReviewComment = 9
    Member = 10
    Public = 11
    Push = 12
    Fork = 13
    Release = 14
    Issue = 15
    Watchers = 16
    PullRequest = 17


NUM_EVENT_KINDS = len(EventKind)
COMMIT_BEARING_KINDS = frozenset({EventKind.Push, EventKind.CommitAdditions, EventKind.CommitDeletions})


class Source(IntEnum):
    """Where an event came from. Higher value wins when duplicates collapse."""

    git = 0
    graphql = 1
    gharchive = 2


# Encoded row layout.
KIND_OFFSET = 0
HOUR_OFFSET = KIND_OFFSET + NUM_EVENT_KINDS  # 18
DOW_OFFSET = HOUR_OFFSET + 24  # 42
MONTH_OFFSET = DOW_OFFSET + 7  # 49
NUMERIC_OFFSET = MONTH_OFFSET + 12  # 61
NUMERIC_CHANNELS = ("additions", "deletions", "files_changed")
FEATURE_DIM = NUMERIC_OFFSET + len(NUMERIC_CHANNELS)  # 64

CVE_ID_RE = re.compile(r"^CVE-\d{4}-\d{4,}$")
SHA_RE = re.compile(r"^[0-9a-f]{40}$")


def event_kind_index(kind: EventKind) -> int:
    return int(kind)


def utc(ts: datetime) -> datetime:
    """Normalize to an aware UTC datetime with second precision."""
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    else:
        ts = ts.astimezone(timezone.utc)
    return ts.replace(microsecond=0)


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 instant such as ``2021-01-04T10:00:00Z``."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    return utc(datetime.fromisoformat(text))


def format_timestamp(ts: datetime) -> str:
    return utc(ts).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True, slots=True)
class RepoEvent:
    repo_id: str
    kind: EventKind
    timestamp: datetime
    source: Source
    additions: int = 0
    deletions: int = 0
    files_changed: int = 0
    commit_sha: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(self.kind))
        object.__setattr__(self, "source", Source(self.source))
        object.__setattr__(self, "timestamp", utc(self.timestamp))
        counts = (self.additions, self.deletions, self.files_changed)
        if any(c < 0 for c in counts):
            raise ValueError(f"negative commit counts on {self.kind.name} event")
        if self.kind not in COMMIT_BEARING_KINDS:
            if any(counts):
                raise ValueError(f"{self.kind.name} events cannot carry commit counts")
            if self.commit_sha is not None:
                raise ValueError(f"{self.kind.name} events cannot carry a commit sha")
        if self.commit_sha is not None:
            sha = self.commit_sha.lower()
            if not SHA_RE.match(sha):
                raise ValueError(f"invalid commit sha {self.commit_sha!r}")
            object.__setattr__(self, "commit_sha", sha)

    @property
    def is_commit(self) -> bool:
        """True for the event that stands for a specific commit (labelable)."""
        return self.kind is EventKind.Push and self.commit_sha is not None

    def sort_key(self) -> tuple:
        return (
            self.timestamp,
            int(self.source),
            int(self.kind),
            self.commit_sha or "",
            self.additions,
            self.deletions,
            self.files_changed,
        )


@dataclass(frozen=True)
class Timeline:
    repo_id: str
    events: tuple[RepoEvent, ...]

    def __len__(self) -> int:
        return len(self.events)

    def commit_indices(self) -> list[int]:
        return [i for i, ev in enumerate(self.events) if ev.is_commit]


def sort_events(events) -> list[RepoEvent]:
    """Canonical order: timestamp, then source priority, then kind index."""
    return sorted(events, key=RepoEvent.sort_key)


@dataclass(frozen=True, slots=True)
class CveLink:
    cve_id: str
    owner: str
    repo: str
    commit_sha: str

    def __post_init__(self):
        if not CVE_ID_RE.match(self.cve_id):
            raise ValueError(f"malformed CVE id {self.cve_id!r}")
        sha = self.commit_sha.lower()
        if not SHA_RE.match(sha):
            raise ValueError(f"invalid commit sha {self.commit_sha!r}")
        object.__setattr__(self, "commit_sha", sha)

    @property
    def repo_id(self) -> str:
        return f"{self.owner}/{self.repo}"


@dataclass(frozen=True, slots=True)
class CommitStats:
    commit_sha: str
    timestamp: datetime
    additions: int
    deletions: int
    files_changed: int
    repo_id: Optional[str] = None

    def __post_init__(self):
        if min(self.additions, self.deletions, self.files_changed) < 0:
            raise ValueError("commit counts must be nonnegative")
        sha = self.commit_sha.lower()
        if not SHA_RE.match(sha):
            raise ValueError(f"invalid commit sha {self.commit_sha!r}")
        object.__setattr__(self, "commit_sha", sha)
        object.__setattr__(self, "timestamp", utc(self.timestamp))

    def to_event(self, repo_id: Optional[str] = None) -> RepoEvent:
        repo_id = repo_id or self.repo_id
        if repo_id is None:
            raise ValueError("commit stats carry no repository id")
        return RepoEvent(
            repo_id,
            EventKind.Push,
            self.timestamp,
            Source.git,
            self.additions,
            self.deletions,
            self.files_changed,
            self.commit_sha,
        )


STATIC_BOOL_FIELDS = (
    "isCompany",
    "isEmployee",
    "isHirable",
    "isSiteAdmin",
    "isSponsoringViewer",
    "isGitHubStar",
    "isCampusExpert",
    "isDeveloperProgramMember",
    "isVerified",
    "isInOrganization",
    "hasIssuesEnabled",
    "hasWikiEnabled",
    "isMirror",
    "isSecurityPolicyEnabled",
)
STATIC_INT_FIELDS = ("createdAt", "diskUsage", "fundingLinks")


@dataclass(frozen=True)
class StaticRepoFeatures:
    """Repository-level attributes. Persisted with the store; never fed to models."""

    isCompany: Optional[bool] = None
    isEmployee: Optional[bool] = None
    isHirable: Optional[bool] = None
    isSiteAdmin: Optional[bool] = None
    isSponsoringViewer: Optional[bool] = None
    isGitHubStar: Optional[bool] = None
    isCampusExpert: Optional[bool] = None
    isDeveloperProgramMember: Optional[bool] = None
    isVerified: Optional[bool] = None
    isInOrganization: Optional[bool] = None
    createdAt: Optional[int] = None
    diskUsage: Optional[int] = None
    hasIssuesEnabled: Optional[bool] = None
    hasWikiEnabled: Optional[bool] = None
    isMirror: Optional[bool] = None
    isSecurityPolicyEnabled: Optional[bool] = None
    fundingLinks: Optional[int] = None
    languages: tuple[str, ...] = ()

    def __post_init__(self):
        for name in STATIC_BOOL_FIELDS:
            value = getattr(self, name)
            if value is not None and not isinstance(value, bool):
                raise TypeError(f"{name} must be a boolean")
        for name in STATIC_INT_FIELDS:
            value = getattr(self, name)
            if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
                raise TypeError(f"{name} must be an integer")
        if self.createdAt is not None:
            this_year = datetime.now(timezone.utc).year
            if not 2005 <= self.createdAt <= this_year:
                raise ValueError(f"createdAt year {self.createdAt} outside [2005, {this_year}]")
        object.__setattr__(self, "languages", tuple(str(lang) for lang in self.languages))

    @classmethod
    def from_dict(cls, data: dict) -> "StaticRepoFeatures":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        if isinstance(known.get("createdAt"), str):
            known["createdAt"] = parse_timestamp(known["createdAt"]).year
        return cls(**known)

    def to_dict(self) -> dict:
        out = {name: getattr(self, name) for name in self.__dataclass_fields__}
        out["languages"] = list(self.languages)
        return out


@dataclass(frozen=True)
class NormParams:
    """Min/max of log(1+x) per numeric channel (additions, deletions, files_changed)."""

    mins: tuple[float, float, float]
    maxs: tuple[float, float, float]

    def __post_init__(self):
        if len(self.mins) != 3 or len(self.maxs) != 3:
            raise ValueError("expected three numeric channels")
        if any(hi < lo for lo, hi in zip(self.mins, self.maxs)):
            raise ValueError("max must be >= min for every channel")

    def to_dict(self) -> dict:
        return {
            ch: {"min": lo, "max": hi}
            for ch, lo, hi in zip(NUMERIC_CHANNELS, self.mins, self.maxs)
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormParams":
        return cls(
            tuple(float(data[ch]["min"]) for ch in NUMERIC_CHANNELS),
            tuple(float(data[ch]["max"]) for ch in NUMERIC_CHANNELS),
        )


_ONE_HOT_BLOCKS = (
    (KIND_OFFSET, HOUR_OFFSET),
    (HOUR_OFFSET, DOW_OFFSET),
    (DOW_OFFSET, MONTH_OFFSET),
    (MONTH_OFFSET, NUMERIC_OFFSET),
)


@dataclass(frozen=True, eq=False)
class EventWindow:
    repo_id: str
    center_sha: str
    matrix: np.ndarray = field(repr=False)
    label: Optional[int]

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[1] != FEATURE_DIM:
            raise ValueError(f"window rows must have {FEATURE_DIM} features, got shape {m.shape}")
        if m.shape[0] % 2 != 1:
            raise ValueError("window length must be odd")
        if self.label not in (None, 0, 1):
            raise ValueError("label must be 0, 1 or None")
        for lo, hi in _ONE_HOT_BLOCKS:
            if not np.all(m[:, lo:hi].sum(axis=1) == 1):
                raise ValueError(f"window columns {lo}-{hi - 1} are not one-hot on every row")
        numeric = m[:, NUMERIC_OFFSET:]
        if np.any(numeric < 0) or np.any(numeric > 1):
            raise ValueError("numeric channels must lie in [0, 1]")

    @property
    def window_size(self) -> int:
        return self.matrix.shape[0] // 2
