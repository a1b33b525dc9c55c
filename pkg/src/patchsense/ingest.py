"""Parsers for the external input formats and the multi-source timeline merge."""
from __future__ import annotations

import csv
import gzip
import io
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, TextIO, Union

from .domain import (
    CVE_ID_RE,
    SHA_RE,
    CommitStats,
    CveLink,
    EventKind,
    RepoEvent,
    Source,
    StaticRepoFeatures,
    Timeline,
    format_timestamp,
    parse_timestamp,
    sort_events,
)
from .fileio import atomic_write_text

log = logging.getLogger(__name__)

TextSource = Union[str, TextIO, Iterable[str]]

_COMMIT_URL_RE = re.compile(
    r"^https?://(?:www\.)?github\.com/([\w.-]+)/([\w.-]+)/commit/([0-9a-f]{40})(?:[/?#].*)?$",
    re.IGNORECASE,
)
_URL_IN_TOKEN_RE = re.compile(r"https?://\S+", re.IGNORECASE)

# Event-log type names. Real archive names first, then the names this
# package writes for kinds the archive itself does not publish.
EVENT_TYPE_NAMES: dict[str, EventKind] = {
    "CreateEvent": EventKind.Create,
    "DeleteEvent": EventKind.Delete,
    "IssueCommentEvent": EventKind.IssueComment,
    "CommitCommentEvent": EventKind.CommitComment,
    "PullRequestReviewCommentEvent": EventKind.PullRequestReviewComment,
    "MemberEvent": EventKind.Member,
    "PublicEvent": EventKind.Public,
    "PushEvent": EventKind.Push,
    "ForkEvent": EventKind.Fork,
    "ReleaseEvent": EventKind.Release,
    "IssuesEvent": EventKind.Issue,
    "WatchEvent": EventKind.Watchers,
    "PullRequestEvent": EventKind.PullRequest,
}
EVENT_TYPE_NAMES.update({f"{k.name}Event": k for k in EventKind if f"{k.name}Event" not in EVENT_TYPE_NAMES})
_CANONICAL_TYPE_NAME = {EventKind.Issue: "IssuesEvent", EventKind.Watchers: "WatchEvent"}


def event_type_name(kind: EventKind) -> str:
    return _CANONICAL_TYPE_NAME.get(kind, f"{kind.name}Event")


class InputFormatError(ValueError):
    """Raised when an input file is structurally unusable (not per-line noise)."""


@dataclass
class IngestReport:
    """Bookkeeping for a parse run.

    ``lines_parsed`` counts input records (CSV rows, JSON lines, dump entries);
    each is either accepted (``events_emitted``) or skipped with a reason.
    ``outputs`` counts produced domain objects, which can exceed accepted
    records (one CVE row may yield several links).
    """

    files_read: int = 0
    lines_parsed: int = 0
    events_emitted: int = 0
    skip_reasons: Counter = field(default_factory=Counter)
    repos: set = field(default_factory=set)
    outputs: int = 0

    @property
    def lines_skipped(self) -> int:
        return sum(self.skip_reasons.values())

    @property
    def repos_seen(self) -> int:
        return len(self.repos)

    def skip(self, reason: str) -> None:
        self.lines_parsed += 1
        self.skip_reasons[reason] += 1

    def accept(self, outputs: int = 1, repo: Optional[str] = None) -> None:
        self.lines_parsed += 1
        self.events_emitted += 1
        self.outputs += outputs
        if repo is not None:
            self.repos.add(repo)

    def is_conserved(self) -> bool:
        return self.lines_parsed == self.events_emitted + self.lines_skipped

    def __iadd__(self, other: "IngestReport") -> "IngestReport":
        self.files_read += other.files_read
        self.lines_parsed += other.lines_parsed
        self.events_emitted += other.events_emitted
        self.skip_reasons.update(other.skip_reasons)
        self.repos |= other.repos
        self.outputs += other.outputs
        return self

    def to_dict(self) -> dict:
        return {
            "files_read": self.files_read,
            "lines_parsed": self.lines_parsed,
            "lines_skipped": self.lines_skipped,
            "skip_reasons": dict(sorted(self.skip_reasons.items())),
            "events_emitted": self.events_emitted,
            "outputs": self.outputs,
            "repos_seen": self.repos_seen,
        }


def _lines(text: TextSource) -> Iterable[str]:
    if isinstance(text, str):
        return io.StringIO(text)
    return text


def open_text(path: Union[str, Path]) -> TextIO:
    """Open a UTF-8 text file, transparently handling ``.gz``."""
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, encoding="utf-8", newline="")


def parse_commit_url(url: str) -> Optional[tuple[str, str, str]]:
    """Return (owner, repo, lowercase sha) for a GitHub commit URL, else None."""
    m = _COMMIT_URL_RE.match(url.strip())
    if m is None:
        return None
    owner, repo, sha = m.groups()
    return owner, repo, sha.lower()


def format_commit_url(owner: str, repo: str, sha: str) -> str:
    return f"https://github.com/{owner}/{repo}/commit/{sha}"


def _reference_urls(references: str, separator: str) -> list[str]:
    urls = []
    for token in references.split(separator):
        token = token.strip()
        if not token:
            continue
        # Upstream CSV prefixes references with tags such as "MISC:".
        m = _URL_IN_TOKEN_RE.search(token)
        if m:
            urls.append(m.group(0))
    return urls


def parse_cve_csv(text: TextSource, link_separator: str = "|") -> tuple[list[CveLink], IngestReport]:
    """Extract <CVE id, commit> links from the CVE list CSV.

    Rows before the ``Name,...,References`` header (the upstream file carries a
    short preamble) are ignored. Raises InputFormatError when no such header exists.
    """
    report = IngestReport(files_read=1)
    reader = csv.reader(_lines(text))
    header = None
    for row in reader:
        if "Name" in row and "References" in row:
            header = row
            break
    if header is None:
        raise InputFormatError("CVE CSV has no header with Name and References columns")
    name_col, ref_col = header.index("Name"), header.index("References")
    width = len(header)

    links: list[CveLink] = []
    while True:
        try:
            row = next(reader)
        except StopIteration:
            break
        except csv.Error:
            report.skip("malformed_row")
            continue
        if not row:
            continue
        if len(row) != width:
            report.skip("malformed_row")
            continue
        cve_id = row[name_col].strip()
        if not CVE_ID_RE.match(cve_id):
            report.skip("bad_cve_id")
            continue
        seen = set()
        row_links = []
        for url in _reference_urls(row[ref_col], link_separator):
            parsed = parse_commit_url(url)
            if parsed is None or parsed in seen:
                continue
            seen.add(parsed)
            row_links.append(CveLink(cve_id, *parsed))
        if not row_links:
            report.skip("no_commit_reference")
            continue
        links.extend(row_links)
        report.accept(len(row_links))
        report.repos.update(link.repo_id for link in row_links)
    return links, report


def parse_event_lines(
    json_lines: TextSource, repo_filter: Optional[set] = None
) -> tuple[list[RepoEvent], IngestReport]:
    """Parse archive-style JSON lines into events (source = gharchive)."""
    report = IngestReport(files_read=1)
    events: list[RepoEvent] = []
    for line in _lines(json_lines):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            report.skip("invalid_json")
            continue
        if not isinstance(obj, dict):
            report.skip("invalid_json")
            continue
        kind = EVENT_TYPE_NAMES.get(obj.get("type"))
        if kind is None:
            report.skip("untracked_type")
            continue
        repo = obj.get("repo")
        repo_id = repo.get("name") if isinstance(repo, dict) else None
        if not repo_id:
            report.skip("missing_repo")
            continue
        if repo_filter is not None and repo_id not in repo_filter:
            report.skip("filtered_repo")
            continue
        created = obj.get("created_at")
        if not created:
            report.skip("missing_created_at")
            continue
        try:
            ts = parse_timestamp(created)
        except (TypeError, ValueError):
            report.skip("bad_timestamp")
            continue
        events.append(RepoEvent(repo_id, kind, ts, Source.gharchive))
        report.accept(repo=repo_id)
    return events, report


def format_event_line(event: RepoEvent) -> str:
    return json.dumps(
        {
            "type": event_type_name(event.kind),
            "repo": {"name": event.repo_id},
            "created_at": format_timestamp(event.timestamp),
        },
        separators=(",", ":"),
    )


def _kind_from_dump(name) -> Optional[EventKind]:
    if not isinstance(name, str):
        return None
    if name in EventKind.__members__:
        return EventKind[name]
    return EVENT_TYPE_NAMES.get(name)


def parse_graphql_dump(
    document: Union[dict, str], repo_id: str
) -> tuple[list[RepoEvent], Optional[StaticRepoFeatures], IngestReport]:
    """Parse one repository's history dump.

    Document schema::

        {"static": {<table of repository attributes>},
         "events": [{"kind": "Push", "timestamp": "...Z",
                     "additions": 10, "deletions": 2, "files_changed": 1,
                     "sha": "<40 hex>"}, ...]}

    A Push entry with a sha is a commit: it yields the Push event plus
    CommitAdditions and CommitDeletions events at the same instant.
    """
    if isinstance(document, str):
        document = json.loads(document) if document.strip() else {}
    report = IngestReport(files_read=1)
    static = None
    raw_static = document.get("static")
    if isinstance(raw_static, dict):
        try:
            static = StaticRepoFeatures.from_dict(raw_static)
        except (TypeError, ValueError) as exc:
            log.warning("%s: static features rejected: %s", repo_id, exc)

    events: list[RepoEvent] = []
    for entry in document.get("events") or []:
        if not isinstance(entry, dict):
            report.skip("malformed_entry")
            continue
        kind = _kind_from_dump(entry.get("kind"))
        if kind is None:
            report.skip("untracked_type")
            continue
        try:
            ts = parse_timestamp(entry["timestamp"])
        except (KeyError, TypeError, ValueError):
            report.skip("bad_timestamp")
            continue
        sha = entry.get("sha")
        try:
            if kind is EventKind.Push and sha:
                adds = int(entry.get("additions", 0))
                dels = int(entry.get("deletions", 0))
                files = int(entry.get("files_changed", 0))
                produced = [
                    RepoEvent(repo_id, EventKind.Push, ts, Source.graphql, adds, dels, files, sha),
                    RepoEvent(repo_id, EventKind.CommitAdditions, ts, Source.graphql, adds, 0, 0, sha),
                    RepoEvent(repo_id, EventKind.CommitDeletions, ts, Source.graphql, 0, dels, 0, sha),
                ]
            elif kind in (EventKind.CommitAdditions, EventKind.CommitDeletions):
                n = int(entry.get("additions" if kind is EventKind.CommitAdditions else "deletions", 0))
                adds, dels = (n, 0) if kind is EventKind.CommitAdditions else (0, n)
                produced = [RepoEvent(repo_id, kind, ts, Source.graphql, adds, dels, 0, sha or None)]
            else:
                produced = [RepoEvent(repo_id, kind, ts, Source.graphql)]
        except (TypeError, ValueError):
            report.skip("invalid_values")
            continue
        events.extend(produced)
        report.accept(len(produced), repo=repo_id)
    return events, static, report


def parse_git_stats(
    text: TextSource, repo_id: Optional[str] = None
) -> tuple[list[CommitStats], IngestReport]:
    """Parse ``sha,timestamp,additions,deletions,files_changed`` rows.

    An optional ``repo`` column assigns each row its repository; otherwise
    ``repo_id`` (if given) is attached to every row.
    """
    report = IngestReport(files_read=1)
    reader = csv.DictReader(_lines(text))
    required = {"sha", "timestamp", "additions", "deletions", "files_changed"}
    if reader.fieldnames is None:
        return [], report
    missing = required - set(reader.fieldnames)
    if missing:
        raise InputFormatError(f"git stats CSV missing columns: {sorted(missing)}")
    out: list[CommitStats] = []
    for row in reader:
        if None in row or any(row.get(col) is None for col in required):
            report.skip("malformed_row")
            continue
        try:
            counts = [int(row[c]) for c in ("additions", "deletions", "files_changed")]
        except ValueError:
            report.skip("malformed_row")
            continue
        if min(counts) < 0:
            report.skip("negative_count")
            continue
        sha = row["sha"].strip().lower()
        if not SHA_RE.match(sha):
            report.skip("bad_sha")
            continue
        try:
            ts = parse_timestamp(row["timestamp"])
        except ValueError:
            report.skip("bad_timestamp")
            continue
        repo = (row.get("repo") or "").strip() or repo_id
        out.append(CommitStats(sha, ts, *counts, repo_id=repo))
        report.accept(repo=repo)
    return out, report


def format_git_stats(stats: Iterable[CommitStats]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["repo", "sha", "timestamp", "additions", "deletions", "files_changed"])
    for s in stats:
        writer.writerow(
            [s.repo_id or "", s.commit_sha, format_timestamp(s.timestamp), s.additions, s.deletions, s.files_changed]
        )
    return buf.getvalue()


def format_cve_csv(rows: Iterable[tuple[str, str, list[str]]], link_separator: str = "|") -> str:
    """Write (name, description, reference urls) rows in the CVE list layout."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["Name", "Description", "References"])
    for name, description, refs in rows:
        writer.writerow([name, description, link_separator.join(refs)])
    return buf.getvalue()


def _dedup_key(ev: RepoEvent) -> tuple:
    return (ev.repo_id, ev.timestamp, int(ev.kind), ev.commit_sha)


def _preference(ev: RepoEvent) -> tuple:
    # Total order so the surviving duplicate never depends on input order.
    return (int(ev.source), ev.additions, ev.deletions, ev.files_changed)


def merge_timelines(events: Iterable[RepoEvent]) -> dict[str, Timeline]:
    """Group events per repository, collapse cross-source duplicates, sort."""
    best: dict[tuple, RepoEvent] = {}
    for ev in events:
        key = _dedup_key(ev)
        cur = best.get(key)
        if cur is None or _preference(ev) > _preference(cur):
            best[key] = ev
    per_repo: dict[str, list[RepoEvent]] = {}
    for ev in best.values():
        per_repo.setdefault(ev.repo_id, []).append(ev)
    return {repo: Timeline(repo, tuple(sort_events(evs))) for repo, evs in sorted(per_repo.items())}


# On-disk timeline store written by ``patchsense ingest``:
#   timelines/<owner>__<repo>.jsonl   one event per line, canonical order
#   static/<owner>__<repo>.json       repository attributes, when known
#   links.csv                         cve_id,owner,repo,commit_sha
#   ingest_report.json


def repo_filename(repo_id: str) -> str:
    return repo_id.replace("/", "__")


def repo_from_filename(stem: str) -> str:
    return stem.replace("__", "/", 1)


def event_to_record(ev: RepoEvent) -> dict:
    return {
        "kind": ev.kind.name,
        "timestamp": format_timestamp(ev.timestamp),
        "source": ev.source.name,
        "additions": ev.additions,
        "deletions": ev.deletions,
        "files_changed": ev.files_changed,
        "sha": ev.commit_sha,
    }


def event_from_record(repo_id: str, rec: dict) -> RepoEvent:
    return RepoEvent(
        repo_id,
        EventKind[rec["kind"]],
        parse_timestamp(rec["timestamp"]),
        Source[rec["source"]],
        rec.get("additions", 0),
        rec.get("deletions", 0),
        rec.get("files_changed", 0),
        rec.get("sha"),
    )


def write_store(
    out_dir: Union[str, Path],
    timelines: dict[str, Timeline],
    links: Iterable[CveLink],
    static: Optional[dict[str, StaticRepoFeatures]] = None,
    report: Optional[IngestReport] = None,
) -> None:
    out = Path(out_dir)
    (out / "timelines").mkdir(parents=True, exist_ok=True)
    for repo_id, tl in timelines.items():
        body = "".join(
            json.dumps(event_to_record(ev), separators=(",", ":"), sort_keys=True) + "\n" for ev in tl.events
        )
        atomic_write_text(out / "timelines" / f"{repo_filename(repo_id)}.jsonl", body)
    if static:
        (out / "static").mkdir(exist_ok=True)
        for repo_id, feats in sorted(static.items()):
            atomic_write_text(
                out / "static" / f"{repo_filename(repo_id)}.json",
                json.dumps(feats.to_dict(), sort_keys=True, indent=2) + "\n",
            )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["cve_id", "owner", "repo", "commit_sha"])
    for link in sorted(set(links), key=lambda l: (l.cve_id, l.owner, l.repo, l.commit_sha)):
        writer.writerow([link.cve_id, link.owner, link.repo, link.commit_sha])
    atomic_write_text(out / "links.csv", buf.getvalue())
    if report is not None:
        atomic_write_text(out / "ingest_report.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def load_store(
    store_dir: Union[str, Path],
) -> tuple[dict[str, Timeline], list[CveLink], dict[str, StaticRepoFeatures]]:
    store = Path(store_dir)
    if not (store / "timelines").is_dir():
        raise FileNotFoundError(f"{store} is not a timeline store (no timelines/ directory)")
    timelines = {}
    for path in sorted((store / "timelines").glob("*.jsonl")):
        repo_id = repo_from_filename(path.stem)
        with open(path, encoding="utf-8") as fh:
            events = tuple(event_from_record(repo_id, json.loads(line)) for line in fh if line.strip())
        timelines[repo_id] = Timeline(repo_id, events)
    links = []
    links_path = store / "links.csv"
    if links_path.exists():
        with open(links_path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                links.append(CveLink(row["cve_id"], row["owner"], row["repo"], row["commit_sha"]))
    static = {}
    if (store / "static").is_dir():
        for path in sorted((store / "static").glob("*.json")):
            static[repo_from_filename(path.stem)] = StaticRepoFeatures.from_dict(
                json.loads(path.read_text(encoding="utf-8"))
            )
    return timelines, links, static
