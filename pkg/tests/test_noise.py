"""Reliability tensor estimation: agreement oracles, back-off, clamping.

Neighbor sets and agreement fractions are checked against brute-force
reference implementations on small random instances; the aggregation
is checked on hand-computed cases and property-style perturbations.
"""

from __future__ import annotations

import inspect

import numpy as np
import pytest

from noisescope.annotate import (
    Annotation,
    AnnotationSet,
    SimulatedAnnotator,
    cluster_conditional_noise,
    simulate_annotations,
)
from noisescope.cluster import ClusterModel
from noisescope.errors import (
    ArgumentError,
    FormatError,
    IoError,
    NoNeighborEvidence,
)
from noisescope.graphio import Graph
from noisescope.noise import (
    AgreementRecord,
    TransitionTensor,
    agreement,
    agreement_bias_report,
    agreement_records,
    collapse_to_global,
    estimate_tc,
    load_tensor,
    neighbor_set,
    save_tensor,
    tensor_from_agreements,
)
from noisescope.rng import rng_for
from noisescope.seeds import SeedPlan


def _annset(labels: dict[int, int]) -> AnnotationSet:
    return AnnotationSet(
        records={
            v: Annotation(node=v, label=lab, is_probe=True, votes=[(lab, 100.0)])
            for v, lab in labels.items()
        }
    )


def _graph(n: int, edges: list[tuple[int, int]], num_classes: int = 2, d: int = 2,
           features: np.ndarray | None = None) -> Graph:
    if features is None:
        features = rng_for(0, "feat", n).normal(size=(n, d))
    return Graph(
        n=n,
        edges=np.array(sorted(set(tuple(sorted(e)) for e in edges)), dtype=np.int64).reshape(-1, 2),
        features=np.asarray(features, dtype=np.float32),
        num_classes=num_classes,
    )


def _random_instance(seed: int, n: int = 50, p: float = 0.1, C: int = 3):
    rng = rng_for(seed, "inst")
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    emb = rng.normal(size=(n, 4))
    g = _graph(n, edges, num_classes=C, features=emb)
    ann_nodes = sorted(rng.choice(n, size=n // 2, replace=False).tolist())
    labels = {int(v): int(rng.integers(C)) for v in ann_nodes}
    return g, emb.astype(np.float64), _annset(labels)


def _brute_neighbors(v, ann, g, emb, k_feat):
    ann_nodes = set(ann.nodes())
    out = set()
    for u, w in g.edges.tolist():
        if u == v and w in ann_nodes:
            out.add(w)
        if w == v and u in ann_nodes:
            out.add(u)
    ranked = sorted(
        (float(np.linalg.norm(emb[u] - emb[v])), u)
        for u in ann_nodes
        if u != v
    )
    out.update(u for _, u in ranked[:k_feat])
    return sorted(out)


class TestNeighborSet:
    def test_graph_only(self):
        g = _graph(5, [(0, 1), (0, 2), (0, 3)])
        ann = _annset({0: 0, 1: 1, 2: 0})
        nbrs = neighbor_set(0, ann, g, g.features, k_feat=0)
        assert nbrs.tolist() == [1, 2]

    def test_feature_only_isolated_node(self):
        emb = np.array([[float(i), 0.0] for i in range(11)])
        g = _graph(11, [(1, 2)], features=emb)
        ann = _annset({v: 0 for v in range(11)})
        nbrs = neighbor_set(0, ann, g, emb, k_feat=5)
        assert nbrs.tolist() == [1, 2, 3, 4, 5]

    def test_equidistant_ties_prefer_lower_id(self):
        emb = np.array([
            [0.0, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [-1.0, 0.0],
            [0.0, -1.0],
        ])
        g = _graph(5, [], features=emb)
        ann = _annset({v: 0 for v in range(5)})
        nbrs = neighbor_set(0, ann, g, emb, k_feat=2)
        assert nbrs.tolist() == [1, 2]

    def test_unannotated_node_rejected(self):
        g = _graph(3, [(0, 1)])
        ann = _annset({1: 0})
        with pytest.raises(ArgumentError):
            neighbor_set(0, ann, g, g.features, k_feat=2)

    def test_may_be_empty(self):
        g = _graph(3, [], num_classes=2)
        ann = _annset({0: 0})
        assert neighbor_set(0, ann, g, g.features, k_feat=0).size == 0

    def test_matches_brute_force_union(self):
        for seed in range(10):
            g, emb, ann = _random_instance(seed)
            for v in ann.nodes():
                got = neighbor_set(v, ann, g, emb, k_feat=5).tolist()
                want = _brute_neighbors(v, ann, g, emb, 5)
                assert got == want, f"seed {seed} node {v}"


class TestAgreement:
    def test_unanimous(self):
        ann = _annset({0: 1, 1: 1, 2: 1, 3: 1, 4: 1})
        assert agreement(0, np.array([1, 2, 3, 4]), ann) == 1.0

    def test_two_of_three(self):
        ann = _annset({0: 1, 1: 1, 2: 1, 3: 0})
        assert agreement(0, np.array([1, 2, 3]), ann) == pytest.approx(2 / 3)

    def test_empty_neighbors_raise(self):
        ann = _annset({0: 1})
        with pytest.raises(NoNeighborEvidence):
            agreement(0, np.array([], dtype=np.int64), ann)

    def test_matches_brute_force_count(self):
        for seed in range(10):
            g, emb, ann = _random_instance(seed + 100)
            labels = ann.labels()
            for v in ann.nodes():
                nbrs = neighbor_set(v, ann, g, emb, k_feat=5)
                if nbrs.size == 0:
                    continue
                want = sum(1 for u in nbrs if labels[int(u)] == labels[v]) / nbrs.size
                assert agreement(v, nbrs, ann) == pytest.approx(want, rel=1e-12)

    def test_records_skip_nodes_without_evidence(self):
        g = _graph(3, [], num_classes=2)
        ann = _annset({0: 0, 1: 0})
        recs = agreement_records(ann, g, g.features, k_feat=0)
        assert recs == []


class TestTensorAggregation:
    def test_hand_computed_star(self):
        # star 0-{1,2,3}, labels A,A,A,B, one cluster, graph neighbors only:
        # agreements 2/3, 1, 1, 0; cell (0,A) = mean(2/3,1,1) = 8/9,
        # cell (0,B) has support 1 -> cluster mean 2/3
        g = _graph(4, [(0, 1), (0, 2), (0, 3)], num_classes=2)
        ann = _annset({0: 0, 1: 0, 2: 0, 3: 1})
        cm = ClusterModel(
            K=1,
            assignment=np.zeros(4, dtype=np.int64),
            centroids=np.zeros((1, 2)),
            inertia=0.0,
            seed=0,
        )
        t = estimate_tc(ann, cm, g, g.features, min_support=3, k_feat=0)
        assert t.diag(0, 0) == pytest.approx(8 / 9)
        assert t.tensor[0, 0, 1] == pytest.approx(1 / 9)
        assert t.diag(0, 1) == pytest.approx(2 / 3)
        assert t.support.tolist() == [[3, 1]]
        assert t.backoff[0, 0] == "cell"
        assert t.backoff[0, 1] == "cluster"

    def test_cell_mean_of_three(self):
        records = [
            AgreementRecord(node=0, neighbors=np.array([1]), a=1.0),
            AgreementRecord(node=1, neighbors=np.array([0]), a=0.5),
            AgreementRecord(node=2, neighbors=np.array([0]), a=0.75),
        ]
        labels = {0: 0, 1: 0, 2: 0}
        t = tensor_from_agreements(
            records, labels, np.zeros(3, dtype=np.int64), K=1, C=2, min_support=3
        )
        assert t.diag(0, 0) == pytest.approx(0.75)

    def test_unanimous_agreement_hits_upper_clamp(self):
        records = [
            AgreementRecord(node=i, neighbors=np.array([0]), a=1.0) for i in range(6)
        ]
        labels = {i: i % 2 for i in range(6)}
        t = tensor_from_agreements(
            records, labels, np.zeros(6, dtype=np.int64), K=1, C=2, min_support=3
        )
        for c in range(2):
            assert t.diag(0, c) == pytest.approx(0.999)
            assert t.tensor[0, c, 1 - c] == pytest.approx(0.001)

    def test_zero_agreement_hits_chance_clamp(self):
        records = [
            AgreementRecord(node=i, neighbors=np.array([0]), a=0.0) for i in range(4)
        ]
        labels = {i: 0 for i in range(4)}
        t = tensor_from_agreements(
            records, labels, np.zeros(4, dtype=np.int64), K=1, C=4, min_support=3
        )
        # diag clamped to 1/C, fill is uniform: the whole row is flat
        np.testing.assert_allclose(t.tensor[0, 0], 0.25)

    def test_empty_cluster_backs_off_to_global(self):
        records = [
            AgreementRecord(node=i, neighbors=np.array([0]), a=0.8) for i in range(4)
        ]
        labels = {i: 0 for i in range(4)}
        assignment = np.zeros(4, dtype=np.int64)
        t = tensor_from_agreements(records, labels, assignment, K=2, C=2, min_support=3)
        assert t.backoff[1, 0] == "global"
        assert t.backoff[1, 1] == "global"
        assert t.diag(1, 0) == pytest.approx(0.8)

    def test_backoff_switches_when_support_drops(self):
        # three records keep the cell; removing one drops it below
        # min_support and the value becomes the cluster mean
        mk = lambda i, a: AgreementRecord(node=i, neighbors=np.array([0]), a=a)
        assignment = np.zeros(6, dtype=np.int64)
        labels = {0: 0, 1: 0, 2: 0, 3: 1, 4: 1, 5: 1}
        full = [mk(0, 0.9), mk(1, 0.8), mk(2, 0.7), mk(3, 0.4), mk(4, 0.5), mk(5, 0.6)]
        t0 = tensor_from_agreements(full, labels, assignment, K=1, C=2, min_support=3)
        assert t0.backoff[0, 0] == "cell"
        assert t0.diag(0, 0) == pytest.approx(0.8)
        dropped = full[1:]
        t1 = tensor_from_agreements(dropped, labels, assignment, K=1, C=2, min_support=3)
        assert t1.backoff[0, 0] == "cluster"
        cluster_mean = np.mean([0.8, 0.7, 0.4, 0.5, 0.6])
        assert t1.diag(0, 0) == pytest.approx(cluster_mean)

    def test_monotone_in_agreements(self):
        rng = rng_for(7, "mono")
        n = 40
        assignment = rng.integers(0, 3, size=n).astype(np.int64)
        labels = {i: int(rng.integers(3)) for i in range(n)}
        base_a = rng.uniform(0.1, 0.8, size=n)
        mk = lambda vals: [
            AgreementRecord(node=i, neighbors=np.array([0]), a=float(vals[i]))
            for i in range(n)
        ]
        lo = tensor_from_agreements(mk(base_a), labels, assignment, K=3, C=3, min_support=3)
        hi = tensor_from_agreements(
            mk(np.clip(base_a + 0.15, 0, 1)), labels, assignment, K=3, C=3, min_support=3
        )
        for k in range(3):
            for c in range(3):
                assert hi.diag(k, c) >= lo.diag(k, c) - 1e-12

    def test_rows_stochastic_on_random_probes(self):
        for seed in range(25):
            g, emb, ann = _random_instance(seed + 300, n=30, C=3)
            cm = ClusterModel(
                K=4,
                assignment=rng_for(seed, "asg").integers(0, 4, size=30).astype(np.int64),
                centroids=np.zeros((4, 2)),
                inertia=0.0,
                seed=0,
            )
            t = estimate_tc(ann, cm, g, emb, min_support=3, k_feat=5)
            t.validate()
            assert np.all(np.abs(t.tensor.sum(axis=2) - 1.0) < 1e-9)
            assert np.all(t.tensor >= 0) and np.all(t.tensor <= 1)

    def test_empty_probe_rejected(self):
        g = _graph(3, [(0, 1)])
        cm = ClusterModel(
            K=1, assignment=np.zeros(3, dtype=np.int64),
            centroids=np.zeros((1, 2)), inertia=0.0, seed=0,
        )
        with pytest.raises(ArgumentError):
            estimate_tc(AnnotationSet(records={}), cm, g, g.features)

    def test_min_support_must_be_positive(self):
        g = _graph(3, [(0, 1)])
        cm = ClusterModel(
            K=1, assignment=np.zeros(3, dtype=np.int64),
            centroids=np.zeros((1, 2)), inertia=0.0, seed=0,
        )
        with pytest.raises(ArgumentError):
            estimate_tc(_annset({0: 0}), cm, g, g.features, min_support=0)

    def test_estimator_api_has_no_truth_parameter(self):
        params = inspect.signature(estimate_tc).parameters
        assert "truth" not in params
        assert "eval_ctx" not in params

    def test_single_class_rejected(self):
        with pytest.raises(ArgumentError):
            tensor_from_agreements([], {}, np.zeros(1, dtype=np.int64), K=1, C=1, min_support=3)


class TestTensorType:
    def _tensor(self) -> TransitionTensor:
        records = [
            AgreementRecord(node=i, neighbors=np.array([0]), a=0.2 + 0.1 * (i % 4))
            for i in range(24)
        ]
        labels = {i: i % 2 for i in range(24)}
        assignment = (np.arange(24) // 12).astype(np.int64)
        return tensor_from_agreements(records, labels, assignment, K=2, C=2, min_support=3)

    def test_diag_answers_any_cluster_when_collapsed(self):
        t = collapse_to_global(self._tensor())
        assert t.K == 1
        assert t.diag(0, 1) == t.diag(5, 1)

    def test_global_matrix_is_cluster_mean(self):
        t = self._tensor()
        np.testing.assert_allclose(t.global_matrix(), t.tensor.mean(axis=0))

    def test_validate_rejects_bad_tag(self):
        t = self._tensor()
        t.backoff[0, 0] = "mystery"
        with pytest.raises(ArgumentError):
            t.validate()

    def test_validate_rejects_tag_support_mismatch(self):
        t = self._tensor()
        t.support[0, 0] = 0
        with pytest.raises(ArgumentError):
            t.validate()

    def test_validate_rejects_non_stochastic_rows(self):
        t = self._tensor()
        t.tensor[0, 0, 0] += 0.01
        with pytest.raises(ArgumentError):
            t.validate()


class TestCollapse:
    def test_two_cluster_mean(self):
        # C=5 keeps the chance clamp (1/C = 0.2) from lifting the low slice
        records = (
            [AgreementRecord(node=i, neighbors=np.array([0]), a=0.2) for i in range(3)]
            + [AgreementRecord(node=i, neighbors=np.array([0]), a=0.8) for i in range(3, 6)]
        )
        labels = {i: 0 for i in range(6)}
        assignment = np.array([0, 0, 0, 1, 1, 1], dtype=np.int64)
        t = tensor_from_agreements(records, labels, assignment, K=2, C=5, min_support=3)
        assert t.diag(0, 0) == pytest.approx(0.2)
        assert t.diag(1, 0) == pytest.approx(0.8)
        flat = collapse_to_global(t)
        assert flat.diag(0, 0) == pytest.approx(0.5)
        assert np.all(np.abs(flat.tensor.sum(axis=2) - 1.0) < 1e-9)

    def test_collapse_is_fixed_point_for_single_cluster(self):
        records = [
            AgreementRecord(node=i, neighbors=np.array([0]), a=0.6) for i in range(6)
        ]
        labels = {i: i % 2 for i in range(6)}
        t = tensor_from_agreements(
            records, labels, np.zeros(6, dtype=np.int64), K=1, C=2, min_support=3
        )
        flat = collapse_to_global(t)
        np.testing.assert_allclose(flat.tensor, t.tensor)
        assert flat.K == 1

    def test_collapse_pools_support(self):
        t = TestTensorType()._tensor()
        flat = collapse_to_global(t)
        np.testing.assert_array_equal(flat.support, t.support.sum(axis=0, keepdims=True))


class TestAgreementBias:
    def test_perfect_annotator_has_no_wrong_group(self):
        g = _graph(6, [(i, j) for i in range(6) for j in range(i + 1, 6)], num_classes=2)
        truth = np.array([0, 0, 0, 1, 1, 1])
        ann = _annset({v: int(truth[v]) for v in range(6)})
        rep = agreement_bias_report(ann, truth, g, g.features, k_feat=0)
        assert rep.agree_wrong == []
        assert rep.mean_wrong is None
        assert rep.gap is None

    def test_independent_noise_shows_positive_gap(self):
        # correct labels sit among agreeing neighbors; mislabeled ones
        # disagree with their surroundings, so the gap is positive
        rng = rng_for(11, "bias")
        n = 300
        truth = (np.arange(n) % 2).astype(np.int64)
        feats = rng.normal(size=(n, 2)) + truth[:, None] * 4.0
        edges = []
        for c in (0, 1):
            members = np.where(truth == c)[0]
            for _ in range(600):
                u, v = rng.choice(members, size=2, replace=False)
                if u != v:
                    edges.append((min(u, v), max(u, v)))
        g = _graph(n, edges, num_classes=2, features=feats)
        labels = {}
        for v in range(n):
            if rng.random() < 0.75:
                labels[v] = int(truth[v])
            else:
                labels[v] = int(1 - truth[v])
        ann = _annset(labels)
        rep = agreement_bias_report(ann, truth, g, feats.astype(np.float64), k_feat=5)
        assert rep.mean_correct is not None and rep.mean_wrong is not None
        assert rep.gap > 0.1


class TestTensorSerialization:
    def test_round_trip(self, tmp_path):
        t = TestTensorType()._tensor()
        path = tmp_path / "tc.json"
        save_tensor(t, path)
        back = load_tensor(path)
        np.testing.assert_allclose(back.tensor, t.tensor)
        np.testing.assert_array_equal(back.support, t.support)
        assert back.min_support == t.min_support
        for k in range(t.K):
            for c in range(t.C):
                assert back.backoff[k, c] == t.backoff[k, c]

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoError):
            load_tensor(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "tc.json"
        path.write_text("{not json")
        with pytest.raises(FormatError):
            load_tensor(path)

    def test_missing_key(self, tmp_path):
        path = tmp_path / "tc.json"
        path.write_text('{"K": 1, "C": 2}')
        with pytest.raises(FormatError):
            load_tensor(path)

    def test_corrupt_rows_rejected(self, tmp_path):
        import json

        t = TestTensorType()._tensor()
        path = tmp_path / "tc.json"
        save_tensor(t, path)
        payload = json.loads(path.read_text())
        payload["tensor"][0][0][0] += 0.01
        path.write_text(json.dumps(payload))
        with pytest.raises(FormatError):
            load_tensor(path)


class TestEstimatorRecovery:
    def test_planted_diagonals_correlate(self):
        # one compact end-to-end recovery check; the acceptance suite
        # repeats this across seeds with the full pipeline settings
        from noisescope.synth import SynthSpec, generate
        from noisescope.cluster import kmeans, choose_embedding
        from noisescope.seeds import select_seeds

        spec = SynthSpec(seed=3)
        g, cm_true, noise = generate(spec)
        emb = choose_embedding(g)
        cm = kmeans(emb, 8, seed=0)
        plan = select_seeds(g, cm, 200, rho=0.4, seed=0, emb=emb)
        ann = SimulatedAnnotator(g.truth, noise, cm_true).annotate(plan, nodes=plan.probe)
        t = estimate_tc(ann, cm, g, np.asarray(g.features, dtype=np.float64))
        est, planted = [], []
        for k in range(cm.K):
            for c in range(g.num_classes):
                if t.backoff[k, c] != "cell":
                    continue
                members = [
                    v for v in ann.nodes()
                    if cm.assignment[v] == k and ann.records[v].label == c
                ]
                if not members:
                    continue
                true_diag = float(
                    np.mean([noise.tensor[cm_true.assignment[v], c, c] for v in members])
                )
                est.append(t.diag(k, c))
                planted.append(true_diag)
        assert len(est) >= 8
        r = float(np.corrcoef(est, planted)[0, 1])
        assert r > 0.6
