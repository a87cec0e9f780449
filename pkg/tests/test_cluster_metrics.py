import itertools
import math
from collections import Counter, deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faceclust.cluster import (ClusterPartition, LinkageSet, cluster_links, sweep_threshold, threshold_links,
                               union_find_clusters)
from faceclust.graph import UsageError
from faceclust.metrics import auc, bcubed_f, evaluate, nmi, pairwise_f, roc_points


# -- independent oracles --------------------------------------------------------
def bfs_components(n, edges):
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    comp = [-1] * n
    cid = 0
    for s in range(n):
        if comp[s] >= 0:
            continue
        comp[s] = cid
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if comp[v] < 0:
                    comp[v] = cid
                    queue.append(v)
        cid += 1
    return comp


def brute_pairwise(pred, truth):
    tp = ps = ts = 0
    for i, j in itertools.combinations(range(len(pred)), 2):
        sp, st_ = pred[i] == pred[j], truth[i] == truth[j]
        tp += sp and st_
        ps += sp
        ts += st_
    p = tp / ps if ps else 0.0
    r = tp / ts if ts else 0.0
    return p, r, (2 * p * r / (p + r) if p + r else 0.0)


def brute_bcubed(pred, truth):
    n = len(pred)
    ps, rs = [], []
    for i in range(n):
        c = {j for j in range(n) if pred[j] == pred[i]}
        lab = {j for j in range(n) if truth[j] == truth[i]}
        ps.append(len(c & lab) / len(c))
        rs.append(len(c & lab) / len(lab))
    p, r = math.fsum(ps) / n, math.fsum(rs) / n
    return p, r, 2 * p * r / (p + r)


def brute_nmi(pred, truth):
    n = len(pred)
    cp, ct, joint = Counter(pred), Counter(truth), Counter(zip(pred, truth))
    hp = -math.fsum(c / n * math.log(c / n) for c in cp.values())
    ht = -math.fsum(c / n * math.log(c / n) for c in ct.values())
    mi = math.fsum(c / n * math.log((c / n) / ((cp[a] / n) * (ct[b] / n))) for (a, b), c in joint.items())
    if hp == 0 or ht == 0:
        return 1.0 if len(cp) == len(ct) == 1 else 0.0
    return max(0.0, mi / math.sqrt(hp * ht))


def random_partition(rng, n, k):
    return rng.integers(0, k, size=n).tolist()


# -- cluster ----------------------------------------------------------------------
def links(q, k, p, tau=0.5):
    return LinkageSet(np.array(q), np.array(k), np.array(p, dtype=np.float32), tau)


class TestThreshold:
    def test_tau_one_empty(self):
        assert threshold_links(links([0, 1], [1, 2], [1.0, 0.9]), 1.0).shape == (0, 2)

    def test_tau_zero_links_all_positive(self):
        assert len(threshold_links(links([0, 1, 2], [1, 2, 0], [0.1, 0.2, 1e-3]), 0.0)) == 3

    def test_direct_count(self):
        assert len(threshold_links(links([0, 1, 2], [1, 2, 3], [0.3, 0.7, 0.9]), 0.5)) == 2

    def test_strict(self):
        assert len(threshold_links(links([0], [1], [0.5]), 0.5)) == 0

    def test_invalid_probability(self):
        with pytest.raises(ValueError):
            links([0], [1], [1.5])


class TestUnionFind:
    def test_no_edges(self):
        part = union_find_clusters(5, [])
        assert part.assignment.tolist() == [0, 1, 2, 3, 4] and part.count == 5

    def test_chain(self):
        assert union_find_clusters(4, [(0, 1), (1, 2), (2, 3)]).assignment.tolist() == [0, 0, 0, 0]

    def test_ids_follow_smallest_member(self):
        assert union_find_clusters(5, [(4, 3), (1, 2)]).assignment.tolist() == [0, 1, 1, 2, 2]

    def test_out_of_range(self):
        with pytest.raises(UsageError):
            union_find_clusters(3, [(0, 3)])

    def test_matches_bfs_100_nodes(self):
        rng = np.random.default_rng(0)
        edges = rng.integers(0, 100, size=(70, 2))
        assert union_find_clusters(100, edges).assignment.tolist() == bfs_components(100, edges.tolist())

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 60), st.lists(st.tuples(st.integers(0, 59), st.integers(0, 59)), max_size=80))
    def test_matches_bfs_property(self, n, edges):
        edges = [(a % n, b % n) for a, b in edges]
        assert union_find_clusters(n, edges).assignment.tolist() == bfs_components(n, edges)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000))
    def test_order_and_duplication_invariant(self, seed):
        rng = np.random.default_rng(seed)
        edges = rng.integers(0, 30, size=(25, 2))
        base = union_find_clusters(30, edges).assignment
        shuffled = np.concatenate([edges, edges[:5]])[rng.permutation(30)]
        np.testing.assert_array_equal(union_find_clusters(30, shuffled).assignment, base)
        np.testing.assert_array_equal(union_find_clusters(30, shuffled[:, ::-1]).assignment, base)


def refines(fine, coarse) -> bool:
    """Every cluster of ``fine`` lies inside one cluster of ``coarse``."""
    mapping = {}
    for f, c in zip(fine, coarse):
        if mapping.setdefault(f, c) != c:
            return False
    return True


class TestSweep:
    def test_single_value_grid(self):
        rows, best = sweep_threshold(links([0], [1], [0.8]), np.array([0, 0, 1]), [0.5])
        assert len(rows) == 1 and best is rows[0]

    def test_separable(self):
        truth = np.array([0, 0, 0, 1, 1])
        q = [0, 1, 0, 3, 2, 1]
        k = [1, 2, 2, 4, 3, 4]
        p = [0.9 if truth[a] == truth[b] else 0.1 for a, b in zip(q, k)]
        rows, _ = sweep_threshold(links(q, k, p), truth, [0.15, 0.5, 0.85])
        assert all(r.pairwise_f == 1.0 for r in rows)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_refinement_monotone(self, seed):
        rng = np.random.default_rng(seed)
        n = 40
        q, k = rng.integers(0, n, 120), rng.integers(0, n, 120)
        ls = links(q, k, rng.random(120))
        grid = np.linspace(0.0, 1.0, 11)
        parts = [cluster_links(n, ls, t).assignment for t in grid]
        counts = [len(set(p.tolist())) for p in parts]
        assert all(a <= b for a, b in zip(counts, counts[1:]))
        for lo, hi in zip(parts, parts[1:]):
            assert refines(hi, lo)


class TestLinkageIO:
    def test_csv_roundtrip(self):
        ls = links([0, 0, 1], [1, 2, 0], [0.25, 0.123456789, 1.0])
        back = LinkageSet.from_csv(ls.to_csv())
        np.testing.assert_array_equal(back.probs, ls.probs)
        np.testing.assert_array_equal(back.candidates, ls.candidates)

    def test_partition_text(self):
        part = ClusterPartition(np.array([0, 1, 0]))
        assert part.to_text() == "0\t0\n1\t1\n2\t0\n"
        np.testing.assert_array_equal(ClusterPartition.from_text(part.to_text()).assignment, part.assignment)


# -- metrics --------------------------------------------------------------------
class TestMetrics:
    def test_identical(self):
        t = [0, 0, 1, 2, 2, 2]
        assert pairwise_f(t, t) == (1.0, 1.0, 1.0)
        assert bcubed_f(t, t) == (1.0, 1.0, 1.0)
        assert nmi(t, t) == pytest.approx(1.0, abs=1e-12)

    def test_fixed_example(self):
        truth = [0, 0, 0, 1, 1]        # {a,b,c},{d,e}
        pred = [0, 0, 1, 1, 1]         # {a,b},{c,d,e}
        assert brute_pairwise(pred, truth) == (0.5, 0.5, 0.5)
        assert pairwise_f(pred, truth) == (0.5, 0.5, 0.5)

    def test_all_singletons(self):
        assert pairwise_f([0, 1, 2, 3], [0, 0, 1, 1]) == (0.0, 0.0, 0.0)

    def test_bcubed_one_cluster(self):
        m = 7
        p, r, f = bcubed_f([0] * (2 * m), [0] * m + [1] * m)
        assert (p, r) == (0.5, 1.0) and f == pytest.approx(2 / 3)

    def test_nmi_independent(self):
        assert nmi([0, 1, 0, 1], [0, 0, 1, 1]) == pytest.approx(0.0, abs=1e-12)
        assert brute_nmi([0, 1, 0, 1], [0, 0, 1, 1]) == pytest.approx(0.0, abs=1e-12)

    def test_nmi_degenerate(self):
        assert nmi([0, 0, 0], [5, 5, 5]) == 1.0
        assert nmi([0, 0, 0], [0, 1, 1]) == 0.0

    def test_length_mismatch(self):
        for fn in (pairwise_f, bcubed_f, nmi):
            with pytest.raises(UsageError):
                fn([0, 1], [0])

    def test_bcubed_random_40(self):
        rng = np.random.default_rng(11)
        pred, truth = random_partition(rng, 40, 6), random_partition(rng, 40, 5)
        np.testing.assert_allclose(bcubed_f(pred, truth), brute_bcubed(pred, truth), rtol=0, atol=1e-12)

    def test_oracle_equivalence_200_pairs(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            n = int(rng.integers(1, 51))
            pred = random_partition(rng, n, int(rng.integers(1, n + 1)))
            truth = random_partition(rng, n, int(rng.integers(1, n + 1)))
            np.testing.assert_allclose(pairwise_f(pred, truth), brute_pairwise(pred, truth), atol=1e-12)
            np.testing.assert_allclose(bcubed_f(pred, truth), brute_bcubed(pred, truth), atol=1e-12)
            assert abs(nmi(pred, truth) - brute_nmi(pred, truth)) < 1e-12

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 4), min_size=1, max_size=30), st.data())
    def test_symmetry_and_relabeling(self, pred, data):
        truth = data.draw(st.lists(st.integers(0, 4), min_size=len(pred), max_size=len(pred)))
        assert nmi(pred, truth) == nmi(truth, pred)
        relabel = {v: 100 - 7 * v for v in range(5)}
        pred2 = [relabel[v] for v in pred]
        truth2 = [relabel[(v + 2) % 5] for v in truth]
        assert pairwise_f(pred2, truth2) == pairwise_f(pred, truth)
        np.testing.assert_allclose(bcubed_f(pred2, truth2), bcubed_f(pred, truth), atol=1e-15)
        assert abs(nmi(pred2, truth2) - nmi(pred, truth)) < 1e-12
        for score in (pairwise_f(pred, truth), bcubed_f(pred, truth)):
            assert all(0.0 <= s <= 1.0 + 1e-12 for s in score)

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=2, max_size=12), st.data())
    def test_perfect_score_iff_identical(self, pred, data):
        truth = data.draw(st.lists(st.integers(0, 3), min_size=len(pred), max_size=len(pred)))
        same = union_find_partition_equal(pred, truth)
        assert (bcubed_f(pred, truth)[2] == 1.0) == same
        fp = pairwise_f(pred, truth)
        if len(set(truth)) < len(truth):   # some same-identity pair exists
            assert (fp[2] == 1.0) == same

    def test_report(self):
        rep = evaluate(np.array([0, 0, 1, 1, 1]), np.array([0, 0, 0, 1, 1]))
        assert rep.pairwise_f == 0.5 and rep.predicted_clusters == 2 and rep.true_clusters == 2
        assert "pairwise_f: 0.500000" in rep.to_text()
        header, values = rep.to_csv().strip().split("\n")
        assert header.split(",")[2] == "pairwise_f" and values.split(",")[2] == "0.500000"


def union_find_partition_equal(a, b) -> bool:
    return refines(a, b) and refines(b, a)


class TestRoc:
    def test_separated_hits_corner(self):
        truth = np.array([0, 0, 1, 1])
        q = np.array([0, 1, 2, 0, 2, 3])
        k = np.array([1, 0, 3, 2, 1, 0])
        p = np.array([0.9, 0.8, 0.95, 0.1, 0.2, 0.05])
        pts = roc_points(q, k, p, truth, top_k=5)
        assert (pts[0][1], pts[0][2]) == (0.0, 0.0)
        assert any(f == 0.0 and t == 1.0 for _, f, t in pts)
        assert (pts[-1][1], pts[-1][2]) == (1.0, 1.0)
        assert auc(pts) == pytest.approx(1.0)

    def test_monotone_and_top_k(self):
        rng = np.random.default_rng(0)
        n, k = 60, 10
        q = np.repeat(np.arange(n), k)
        c = rng.integers(0, n, n * k)
        p = rng.random(n * k)
        truth = rng.integers(0, 4, n)
        pts = roc_points(q, c, p, truth, top_k=3)
        fpr = [x[1] for x in pts]
        tpr = [x[2] for x in pts]
        assert fpr == sorted(fpr) and tpr == sorted(tpr)
        # only the 3 best rows per query were scored; the lowest threshold is their minimum
        top = np.sort(p.reshape(n, k), axis=1)[:, -3:]
        assert pts[-1][0] == pytest.approx(top.min())

    def test_random_scores_near_diagonal(self):
        rng = np.random.default_rng(1)
        n, k = 2000, 10
        q = np.repeat(np.arange(n), k)
        c = rng.integers(0, n, n * k)
        truth = rng.integers(0, 2, n)
        assert abs(auc(roc_points(q, c, rng.random(n * k), truth, top_k=k)) - 0.5) < 0.05
