"""Seeded synthetic repositories with a plantable security-patch signature.

Background events are i.i.d. draws from a base kind distribution at uniform
times over one year. Push events are commits (git source, with a sha and
line counts); every other kind is written to the event log.

A planted patch is a commit at a uniformly chosen position. With probability
``signal_strength`` its line counts are scaled 10x, and each of the
``window`` events after it is independently re-drawn from
{IssueComment, Push, Release} with the same probability. Re-drawn Push events
are log pushes without a commit of their own. At strength 0 planted commits
are indistinguishable from ordinary ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .domain import CommitStats, CveLink, EventKind, RepoEvent, Source, Timeline
from .fileio import atomic_write_text
from .ingest import format_commit_url, format_cve_csv, format_event_line, format_git_stats, merge_timelines

_BASE_WEIGHTS = {
    EventKind.Comment: 0.03,
    EventKind.Stargazers: 0.12,
    EventKind.Subscribers: 0.03,
    EventKind.Create: 0.05,
    EventKind.Delete: 0.03,
    EventKind.IssueComment: 0.15,
    EventKind.CommitComment: 0.02,
    EventKind.PullRequestReviewComment: 0.05,
    EventKind.Member: 0.01,
    EventKind.Public: 0.005,
    EventKind.Push: 0.20,
    EventKind.Fork: 0.07,
    EventKind.Release: 0.015,
    EventKind.Issue: 0.08,
    EventKind.Watchers: 0.07,
    EventKind.PullRequest: 0.07,
}
DEFAULT_BASE_DISTRIBUTION = tuple(_BASE_WEIGHTS.get(k, 0.0) for k in EventKind)
SIGNATURE_KINDS = (EventKind.IssueComment, EventKind.Push, EventKind.Release)
SIZE_SCALE = 10
YEAR_SECONDS = 365 * 24 * 3600


@dataclass(frozen=True)
class SynthConfig:
    repos: int = 200
    events_per_repo: int = 500
    positive_commits_per_repo: int = 16
    signal_strength: float = 1.0
    seed: int = 0
    window: int = 10
    base_distribution: Sequence[float] = field(default=DEFAULT_BASE_DISTRIBUTION)
    start: datetime = datetime(2021, 1, 1, tzinfo=timezone.utc)

    def __post_init__(self):
        if self.repos < 1 or self.positive_commits_per_repo < 1 or self.window < 1:
            raise ValueError("repos, positive commits and window must be positive")
        if self.events_per_repo < 100:
            raise ValueError("events_per_repo must be >= 100 or the repositories are filtered out downstream")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal strength must lie in [0, 1]")
        p = np.asarray(self.base_distribution, dtype=np.float64)
        if p.shape != (len(EventKind),) or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
            raise ValueError("base distribution must be 18 nonnegative probabilities summing to 1")
        if p[EventKind.Push] <= 0:
            raise ValueError("base distribution must produce Push events (commits)")
        if self.positive_commits_per_repo > self.events_per_repo - 2 * self.window:
            raise ValueError("too many planted commits for the repository length")


def repo_name(i: int) -> tuple[str, str]:
    return f"synth{i:03d}", f"project{i:03d}"


def _commit_counts(rng: np.random.Generator, scale: int = 1) -> tuple[int, int, int]:
    adds = int(rng.lognormal(np.log(20.0), 1.0)) * scale
    dels = int(rng.lognormal(np.log(5.0), 1.0)) * scale
    files = 1 + int(rng.poisson(1.0))
    return adds, dels, files


def _sha(rng: np.random.Generator) -> str:
    return rng.bytes(20).hex()


def _generate_repo(cfg: SynthConfig, index: int, rng: np.random.Generator) -> tuple[list[RepoEvent], list[str]]:
    owner, name = repo_name(index)
    repo_id = f"{owner}/{name}"
    n, w, s = cfg.events_per_repo, cfg.window, cfg.signal_strength
    p = np.asarray(cfg.base_distribution, dtype=np.float64)
    p = p / p.sum()

    offsets = np.sort(rng.choice(YEAR_SECONDS, size=n, replace=False))
    times = [cfg.start + timedelta(seconds=int(o)) for o in offsets]
    kinds = [EventKind(int(k)) for k in rng.choice(len(EventKind), size=n, p=p)]
    planted = set(int(i) for i in rng.choice(np.arange(w, n - w), size=cfg.positive_commits_per_repo, replace=False))

    # per-event: (kind, is_git_commit, scale)
    commit = [k is EventKind.Push for k in kinds]
    scale = [1] * n
    for c in sorted(planted):
        kinds[c], commit[c] = EventKind.Push, True
        if rng.random() < s:
            scale[c] = SIZE_SCALE
    for c in sorted(planted):
        for j in range(c + 1, c + w + 1):
            if j in planted:
                continue
            if rng.random() < s:
                kinds[j] = SIGNATURE_KINDS[int(rng.integers(len(SIGNATURE_KINDS)))]
                commit[j] = False

    events, positive_shas = [], []
    for i in range(n):
        if commit[i]:
            sha = _sha(rng)
            adds, dels, files = _commit_counts(rng, scale[i])
            events.append(RepoEvent(repo_id, EventKind.Push, times[i], Source.git, adds, dels, files, sha))
            if i in planted:
                positive_shas.append(sha)
        else:
            events.append(RepoEvent(repo_id, kinds[i], times[i], Source.gharchive))
    return events, positive_shas


def generate(config: SynthConfig) -> tuple[dict[str, Timeline], list[CveLink]]:
    """Build timelines and the CVE links of every planted commit."""
    seqs = np.random.SeedSequence(config.seed).spawn(config.repos)
    events: list[RepoEvent] = []
    links: list[CveLink] = []
    counter = 0
    for i, seq in enumerate(seqs):
        repo_events, shas = _generate_repo(config, i, np.random.default_rng(seq))
        events.extend(repo_events)
        owner, name = repo_name(i)
        for sha in shas:
            links.append(CveLink(f"CVE-2021-{10000 + counter}", owner, name, sha))
            counter += 1
    return merge_timelines(events), links


def write_synth_store(out_dir, timelines: dict[str, Timeline], links: Sequence[CveLink]) -> dict[str, Path]:
    """Write the raw inputs ``patchsense ingest`` consumes.

    Layout: events/events.jsonl, graphql/ (empty), git_stats.csv, cve.csv.
    """
    out = Path(out_dir)
    (out / "graphql").mkdir(parents=True, exist_ok=True)
    lines, stats = [], []
    for tl in timelines.values():
        for ev in tl.events:
            if ev.source is Source.git:
                stats.append(
                    CommitStats(ev.commit_sha, ev.timestamp, ev.additions, ev.deletions, ev.files_changed, ev.repo_id)
                )
            else:
                lines.append(format_event_line(ev))
    paths = {
        "events": out / "events" / "events.jsonl",
        "graphql": out / "graphql",
        "git_stats": out / "git_stats.csv",
        "cve_csv": out / "cve.csv",
    }
    atomic_write_text(paths["events"], "".join(line + "\n" for line in lines))
    atomic_write_text(paths["git_stats"], format_git_stats(stats))
    rows = [
        (
            link.cve_id,
            "Synthetic vulnerability",
            [f"https://example.org/advisories/{link.cve_id}", format_commit_url(link.owner, link.repo, link.commit_sha)],
        )
        for link in links
    ]
    atomic_write_text(paths["cve_csv"], format_cve_csv(rows))
    return paths
