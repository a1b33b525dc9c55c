"""Labeled, encoded event windows around commits."""
from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .domain import (
    DOW_OFFSET,
    FEATURE_DIM,
    HOUR_OFFSET,
    MONTH_OFFSET,
    NUMERIC_OFFSET,
    CveLink,
    EventKind,
    EventWindow,
    NormParams,
    RepoEvent,
    Timeline,
)
from .fileio import atomic_write_text, decode_f32, encode_f32

log = logging.getLogger(__name__)

MIN_REPO_EVENTS = 100
POSITIVE, NEGATIVE = 1, 0


class InsufficientContext(ValueError):
    """Fewer than W events on one side of the window center."""


@dataclass(frozen=True)
class LabeledCommit:
    repo_id: str
    commit_sha: str
    timeline_index: int
    label: Optional[int]


def filter_repos(timelines: Mapping[str, Timeline], min_events: int = MIN_REPO_EVENTS) -> dict[str, Timeline]:
    return {repo: tl for repo, tl in timelines.items() if len(tl) >= min_events}


def _has_context(index: int, n: int, context: int) -> bool:
    return index >= context and index + context < n


def label_commits(
    timeline: Timeline,
    links: Iterable[CveLink],
    seed: int,
    context: int = 0,
) -> list[LabeledCommit]:
    """Positives are CVE-linked commits; negatives a same-size seeded sample of the rest.

    With ``context > 0`` only commits that have that many events on both sides
    are eligible, so no labeled commit is later lost to window extraction and
    the per-repository balance survives.
    """
    repo_key = timeline.repo_id.lower()
    linked = {l.commit_sha for l in links if l.repo_id.lower() == repo_key}
    n = len(timeline)
    positives, candidates, seen = [], [], set()
    for i, ev in enumerate(timeline.events):
        if not ev.is_commit or ev.commit_sha in seen:
            continue
        seen.add(ev.commit_sha)
        if context and not _has_context(i, n, context):
            continue
        if ev.commit_sha in linked:
            positives.append(LabeledCommit(timeline.repo_id, ev.commit_sha, i, POSITIVE))
        else:
            candidates.append(LabeledCommit(timeline.repo_id, ev.commit_sha, i, NEGATIVE))
    if not positives:
        return []
    if len(candidates) < len(positives):
        log.warning(
            "%s: only %d negative commits for %d positives", timeline.repo_id, len(candidates), len(positives)
        )
        negatives = candidates
    else:
        negatives = random.Random(f"{seed}/{timeline.repo_id}").sample(candidates, len(positives))
    return sorted(positives + negatives, key=lambda c: c.timeline_index)


def unlabeled_commits(timeline: Timeline, links: Iterable[CveLink], context: int = 0) -> list[LabeledCommit]:
    """Every commit with enough context; linked ones labeled positive, the rest unlabeled."""
    repo_key = timeline.repo_id.lower()
    linked = {l.commit_sha for l in links if l.repo_id.lower() == repo_key}
    n = len(timeline)
    out, seen = [], set()
    for i, ev in enumerate(timeline.events):
        if ev.is_commit and ev.commit_sha not in seen and (not context or _has_context(i, n, context)):
            seen.add(ev.commit_sha)
            out.append(LabeledCommit(timeline.repo_id, ev.commit_sha, i, POSITIVE if ev.commit_sha in linked else None))
    return out


def extract_window(timeline: Timeline, center_index: int, window_size: int) -> tuple[RepoEvent, ...]:
    if window_size < 1:
        raise ValueError("window size must be >= 1")
    lo, hi = center_index - window_size, center_index + window_size
    if lo < 0 or hi >= len(timeline):
        raise InsufficientContext(
            f"{timeline.repo_id}: index {center_index} lacks {window_size} events of context"
        )
    return timeline.events[lo : hi + 1]


def _log_counts(ev: RepoEvent) -> np.ndarray:
    return np.log1p(np.array([ev.additions, ev.deletions, ev.files_changed], dtype=np.float64))


def fit_normalization(raw_windows: Iterable[Sequence[RepoEvent]]) -> NormParams:
    """Per-channel min/max of log(1+x) over the commit events of the training windows."""
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    found = False
    for window in raw_windows:
        for ev in window:
            if ev.commit_sha is None:
                continue
            v = _log_counts(ev)
            np.minimum(lo, v, out=lo)
            np.maximum(hi, v, out=hi)
            found = True
    if not found:
        raise ValueError("no commit events to fit normalization on")
    return NormParams(tuple(lo.tolist()), tuple(hi.tolist()))


def encode_event(event: RepoEvent, norm: NormParams) -> np.ndarray:
    row = np.zeros(FEATURE_DIM, dtype=np.float64)
    ts = event.timestamp
    row[int(event.kind)] = 1.0
    row[HOUR_OFFSET + ts.hour] = 1.0
    row[DOW_OFFSET + ts.weekday()] = 1.0
    row[MONTH_OFFSET + ts.month - 1] = 1.0
    if event.commit_sha is not None:
        v = _log_counts(event)
        lo = np.asarray(norm.mins)
        span = np.asarray(norm.maxs) - lo
        with np.errstate(divide="ignore", invalid="ignore"):
            scaled = np.where(span > 0, (v - lo) / np.where(span > 0, span, 1.0), 0.0)
        row[NUMERIC_OFFSET:] = np.clip(scaled, 0.0, 1.0)
    return row


def encode_window(
    raw_window: Sequence[RepoEvent],
    norm: NormParams,
    label: Optional[int] = None,
    repo_id: Optional[str] = None,
    center_sha: Optional[str] = None,
) -> EventWindow:
    center = raw_window[len(raw_window) // 2]
    matrix = np.stack([encode_event(ev, norm) for ev in raw_window]).astype(np.float32)
    return EventWindow(repo_id or center.repo_id, center_sha or center.commit_sha or "", matrix, label)


@dataclass
class DatasetManifest:
    window_size: int
    norm: NormParams
    seed: int
    event_kinds: list[str] = field(default_factory=lambda: [k.name for k in EventKind])
    splits: Optional[dict] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window size must be >= 1")
        if len(self.event_kinds) != len(EventKind):
            raise ValueError("event-kind ordering must have 18 entries")

    def to_dict(self) -> dict:
        return {
            "window_size": self.window_size,
            "event_kinds": list(self.event_kinds),
            "norm": self.norm.to_dict(),
            "seed": self.seed,
            "splits": self.splits,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        if data["event_kinds"] != [k.name for k in EventKind]:
            raise ValueError("manifest event-kind ordering differs from this build")
        return cls(
            window_size=int(data["window_size"]),
            norm=NormParams.from_dict(data["norm"]),
            seed=int(data["seed"]),
            event_kinds=list(data["event_kinds"]),
            splits=data.get("splits"),
            metadata=data.get("metadata", {}),
        )


def build_dataset(
    timelines: Mapping[str, Timeline],
    links: Iterable[CveLink],
    window_size: int,
    seed: int,
    *,
    all_commits: bool = False,
    min_events: int = MIN_REPO_EVENTS,
) -> tuple[list[EventWindow], DatasetManifest]:
    """Filter, label, cut and encode windows; fit normalization on the training split.

    The repository split is derived from ``seed`` (see ``training.split_repos``)
    and recorded in the manifest so training reuses it. With fewer than ten
    contributing repositories no split is made and normalization uses everything.
    """
    from .training import split_repos

    if window_size < 1:
        raise ValueError("window size must be >= 1")
    links = list(links)
    kept = filter_repos(timelines, min_events)
    dropped = sorted(set(timelines) - set(kept))

    labeled: dict[str, list[LabeledCommit]] = {}
    shortfall = {}
    for repo_id in sorted(kept):
        tl = kept[repo_id]
        if all_commits:
            commits = unlabeled_commits(tl, links, context=window_size)
        else:
            commits = label_commits(tl, links, seed, context=window_size)
            n_pos = sum(c.label == POSITIVE for c in commits)
            if len(commits) - n_pos < n_pos:
                shortfall[repo_id] = 2 * n_pos - len(commits)
        if commits:
            labeled[repo_id] = commits

    repo_ids = sorted(labeled)
    splits = None
    fit_repos = repo_ids
    if len(repo_ids) >= 10:
        plan = split_repos(repo_ids, seed)
        splits = plan.to_dict()
        fit_repos = plan.train

    def raw(repo_id):
        tl = kept[repo_id]
        return [extract_window(tl, c.timeline_index, window_size) for c in labeled[repo_id]]

    norm = fit_normalization(w for r in fit_repos for w in raw(r))

    windows = []
    for repo_id in repo_ids:
        tl = kept[repo_id]
        encoded = np.stack([encode_event(ev, norm) for ev in tl.events]).astype(np.float32)
        for c in labeled[repo_id]:
            lo, hi = c.timeline_index - window_size, c.timeline_index + window_size + 1
            windows.append(EventWindow(repo_id, c.commit_sha, encoded[lo:hi].copy(), c.label))

    manifest = DatasetManifest(
        window_size=window_size,
        norm=norm,
        seed=seed,
        splits=splits,
        metadata={
            "generator": f"patchsense {__version__}",
            "all_commits": all_commits,
            "repos_in": len(timelines),
            "repos_filtered_out": len(dropped),
            "repos_with_windows": len(repo_ids),
            "windows": len(windows),
            "positives": sum(w.label == POSITIVE for w in windows),
            "negatives": sum(w.label == NEGATIVE for w in windows),
            "negative_shortfall": shortfall,
        },
    )
    return windows, manifest


def manifest_path(windows_path) -> Path:
    p = Path(windows_path)
    return p.with_name(p.name + ".manifest.json")


def write_windows(path, windows: Sequence[EventWindow], manifest: Optional[DatasetManifest] = None) -> None:
    lines = []
    for w in windows:
        rows, cols = w.matrix.shape
        rec = {
            "repo_id": w.repo_id,
            "center_sha": w.center_sha,
            "label": w.label,
            "rows": rows,
            "cols": cols,
            "matrix": encode_f32(w.matrix),
        }
        lines.append(json.dumps(rec, separators=(",", ":"), sort_keys=True))
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    if manifest is not None:
        atomic_write_text(manifest_path(path), json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")


def read_windows(path) -> tuple[list[EventWindow], Optional[DatasetManifest]]:
    windows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            matrix = decode_f32(rec["matrix"], (rec["rows"], rec["cols"]))
            windows.append(EventWindow(rec["repo_id"], rec["center_sha"], matrix, rec["label"]))
    mpath = manifest_path(path)
    manifest = DatasetManifest.from_dict(json.loads(mpath.read_text(encoding="utf-8"))) if mpath.exists() else None
    return windows, manifest


def to_arrays(windows: Sequence[EventWindow]) -> tuple[np.ndarray, np.ndarray]:
    """Stack windows into (N, L, 64) float64 inputs and (N,) float64 labels (-1 if unlabeled)."""
    if not windows:
        return np.zeros((0, 0, FEATURE_DIM)), np.zeros(0)
    x = np.stack([w.matrix for w in windows]).astype(np.float64)
    y = np.array([-1.0 if w.label is None else float(w.label) for w in windows])
    return x, y


def group_by_repo(windows: Iterable[EventWindow]) -> dict[str, list[EventWindow]]:
    out: dict[str, list[EventWindow]] = {}
    for w in windows:
        out.setdefault(w.repo_id, []).append(w)
    return out
