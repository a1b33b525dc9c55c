import math

import numpy as np
import pytest

from patchsense.domain import EventKind, NormParams, Source, Timeline
from patchsense.features import (
    DatasetManifest,
    InsufficientContext,
    build_dataset,
    encode_event,
    encode_window,
    extract_window,
    filter_repos,
    fit_normalization,
    label_commits,
    read_windows,
    to_arrays,
    unlabeled_commits,
    write_windows,
)
from patchsense.training import SplitPlan

from helpers import T0, commit, event, link, sha, timeline

UNIT = NormParams((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))


class TestFilter:
    def test_boundary(self):
        tls = {"a/b": timeline("F" * 99, "a/b"), "c/d": timeline("F" * 100, "c/d")}
        assert list(filter_repos(tls)) == ["c/d"]

    def test_empty(self):
        assert filter_repos({}) == {}


class TestLabel:
    def _repo(self):
        # commits at even positions 0..24: 13 commits
        return timeline(["C" if i % 2 == 0 else "F" for i in range(25)])

    def test_balance(self):
        tl = self._repo()
        links = [link(0), link(2), link(4)]
        out = label_commits(tl, links, seed=1)
        assert sum(c.label == 1 for c in out) == 3
        assert sum(c.label == 0 for c in out) == 3
        assert {c.commit_sha for c in out if c.label == 1} == {sha(0), sha(2), sha(4)}

    def test_no_links(self):
        assert label_commits(self._repo(), [], seed=1) == []

    def test_deterministic_per_seed(self):
        tl, links = self._repo(), [link(0), link(2)]
        assert label_commits(tl, links, 5) == label_commits(tl, links, 5)
        samples = {tuple(c.commit_sha for c in label_commits(tl, links, s)) for s in range(20)}
        assert len(samples) > 1

    def test_links_for_other_repo_ignored(self):
        assert label_commits(self._repo(), [link(0, repo="x/y")], 1) == []

    def test_context_excludes_edge_commits(self):
        tl = self._repo()
        out = label_commits(tl, [link(0), link(12)], seed=1, context=3)
        assert [c.commit_sha for c in out if c.label == 1] == [sha(12)]
        assert all(3 <= c.timeline_index < len(tl) - 3 for c in out)

    def test_unlabeled_commits(self):
        out = unlabeled_commits(self._repo(), [link(2)])
        assert len(out) == 13
        assert [c.label for c in out if c.label is not None] == [1]

    def test_log_pushes_are_not_commits(self):
        tl = Timeline("a/b", tuple(event(EventKind.Push, i) for i in range(5)))
        assert tl.commit_indices() == []


class TestExtract:
    def test_exact_fit(self):
        tl = timeline("FFCFF")
        assert extract_window(tl, 2, 2) == tl.events

    def test_insufficient(self):
        with pytest.raises(InsufficientContext):
            extract_window(timeline("FFCFF"), 1, 2)

    def test_eleven_events(self):
        assert len(extract_window(timeline("F" * 30), 15, 5)) == 11


class TestNormalization:
    def test_constant_channel(self):
        n = fit_normalization([[commit(1, 0, adds=7), commit(2, 1, adds=7)]])
        assert n.mins[0] == n.maxs[0] == pytest.approx(math.log(8))

    def test_log1p_endpoints(self):
        # counts are integers, so {0, 1} stands in for {0, e - 1}: log1p maps them to {0, log 2}
        n = fit_normalization([[commit(1, 0, adds=0), commit(2, 1, adds=1)]])
        assert n.mins[0] == 0.0
        assert n.maxs[0] == pytest.approx(math.log(2), abs=1e-15)

    def test_ignores_non_commits(self):
        n = fit_normalization([[event(EventKind.Fork, 0), commit(1, 1, adds=3, dels=0, files=2)]])
        assert n.mins == n.maxs == (math.log(4), 0.0, math.log(3))

    def test_empty(self):
        with pytest.raises(ValueError):
            fit_normalization([[event(EventKind.Fork, 0)]])


class TestEncode:
    def test_monday_push(self):
        row = encode_event(event(EventKind.Push, 0), UNIT)
        assert np.flatnonzero(row).tolist() == [12, 28, 42, 49]

    def test_fork_has_no_numeric(self):
        row = encode_event(event(EventKind.Fork, 0), UNIT)
        assert np.all(row[61:] == 0)

    def test_training_max_maps_to_one(self):
        evs = [commit(1, 0, adds=2, dels=1, files=1), commit(2, 1, adds=40, dels=9, files=3)]
        norm = fit_normalization([evs])
        hi = encode_event(evs[1], norm)
        lo = encode_event(evs[0], norm)
        assert hi[61:].tolist() == [1.0, 1.0, 1.0]
        assert lo[61:].tolist() == [0.0, 0.0, 0.0]

    def test_clamped_and_degenerate(self):
        norm = NormParams((0.0, 1.0, 1.0), (1.0, 1.0, 2.0))
        row = encode_event(commit(1, 0, adds=1000, dels=5, files=0), norm)
        assert row[61] == 1.0 and row[62] == 0.0 and row[63] == 0.0

    def test_calendar_blocks(self):
        ts_event = event(EventKind.Release, 3600 * 24 * 180 + 3600 * 13)  # 2021-07-03 23:00, a Saturday
        row = encode_event(ts_event, UNIT)
        assert row[int(EventKind.Release)] == 1 and row[18 + 23] == 1 and row[42 + 5] == 1 and row[49 + 6] == 1

    @pytest.mark.parametrize("w", [1, 5, 10, 99])
    def test_window_shape(self, w):
        tl = timeline(["C" if i % 3 == 0 else "F" for i in range(2 * w + 1)])
        win = encode_window(tl.events, UNIT, label=1)
        assert win.matrix.shape == (2 * w + 1, 64)
        ones = win.matrix[:, :61].sum(axis=1)
        assert np.all(ones == 4)
        for lo, hi in ((0, 18), (18, 42), (42, 49), (49, 61)):
            assert np.all(win.matrix[:, lo:hi].sum(axis=1) == 1)


def _dataset_repos(n_repos=12, n_events=120):
    """Repos with commits every 4th event; two linked commits each."""
    tls, links = {}, []
    for r in range(n_repos):
        repo = f"o{r:02d}/p"
        evs = [commit(r * 1000 + i, i, repo, adds=i + 1) if i % 4 == 0 else event(EventKind.Fork, i, repo)
               for i in range(n_events)]
        tls[repo] = Timeline(repo, tuple(evs))
        links += [link(r * 1000 + 40, repo), link(r * 1000 + 60, repo)]
    return tls, links


class TestBuildDataset:
    def test_windows_balanced_and_shaped(self):
        tls, links = _dataset_repos()
        windows, manifest = build_dataset(tls, links, 10, seed=3)
        assert len(windows) == 12 * 4
        assert sum(w.label for w in windows) == 24
        assert all(w.matrix.shape == (21, 64) for w in windows)
        assert manifest.metadata["negative_shortfall"] == {}
        plan = SplitPlan.from_dict(manifest.splits)
        assert plan.is_disjoint() and len(plan.test) == 2

    def test_small_repo_contributes_nothing(self):
        tls, links = _dataset_repos()
        repo = "small/repo"
        evs = [commit(99000 + i, i, repo) if i % 4 == 0 else event(EventKind.Fork, i, repo) for i in range(99)]
        tls[repo] = Timeline(repo, tuple(evs))
        links.append(link(99040, repo))
        windows, manifest = build_dataset(tls, links, 10, seed=3)
        assert repo not in {w.repo_id for w in windows}
        assert manifest.metadata["repos_filtered_out"] == 1

    def test_normalization_fit_on_train_only(self):
        tls, links = _dataset_repos()
        # make one repo's commits enormous; if it lands in test it must not move the max
        windows, manifest = build_dataset(tls, links, 10, seed=3)
        plan = SplitPlan.from_dict(manifest.splits)
        test_repo = plan.test[0]
        evs = [
            commit(int(e.commit_sha, 16), i, test_repo, adds=10**6) if e.is_commit else e
            for i, e in enumerate(tls[test_repo].events)
        ]
        tls[test_repo] = Timeline(test_repo, tuple(evs))
        _, manifest2 = build_dataset(tls, links, 10, seed=3)
        assert manifest2.norm == manifest.norm

    def test_deterministic_bytes(self, tmp_path):
        tls, links = _dataset_repos()
        for name in ("a", "b"):
            windows, manifest = build_dataset(tls, links, 5, seed=9)
            write_windows(tmp_path / f"{name}.jsonl", windows, manifest)
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
        assert (tmp_path / "a.jsonl.manifest.json").read_bytes() == (tmp_path / "b.jsonl.manifest.json").read_bytes()

    def test_round_trip(self, tmp_path):
        tls, links = _dataset_repos()
        windows, manifest = build_dataset(tls, links, 5, seed=9, all_commits=True)
        write_windows(tmp_path / "w.jsonl", windows, manifest)
        back, m2 = read_windows(tmp_path / "w.jsonl")
        assert m2.to_dict() == manifest.to_dict()
        assert DatasetManifest.from_dict(manifest.to_dict()).norm == manifest.norm
        assert [(w.repo_id, w.center_sha, w.label) for w in back] == [(w.repo_id, w.center_sha, w.label) for w in windows]
        assert all(np.array_equal(a.matrix, b.matrix) for a, b in zip(back, windows))
        x, y = to_arrays(back)
        assert x.shape == (len(back), 11, 64) and set(y.tolist()) == {-1.0, 1.0}

    def test_bad_window_size(self):
        tls, links = _dataset_repos()
        with pytest.raises(ValueError):
            build_dataset(tls, links, 0, seed=1)
