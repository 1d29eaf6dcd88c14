"""Synthetic generator: planted partitions, mixtures, noise grids.

Structural invariants (block alignment, purity, homophily, marginal
frequencies) are checked by direct counting on generated instances.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from noisescope.annotate import PlantedNoiseModel, global_noise
from noisescope.errors import ArgumentError, FormatError, IoError
from noisescope.synth import (
    SynthSpec,
    default_noise_grid,
    edge_homophily,
    generate,
    load_planted,
    mixture_rows,
    save_planted,
)
from noisescope.graphio import Graph


class TestMixtureRows:
    def test_shape_and_mass(self):
        rows = mixture_rows(8, 4, 0.7)
        assert rows.shape == (8, 4)
        np.testing.assert_allclose(rows.sum(axis=1), 1.0)
        for k in range(8):
            assert rows[k].argmax() == k % 4
            assert rows[k, k % 4] == pytest.approx(0.7)
            off = np.delete(rows[k], k % 4)
            np.testing.assert_allclose(off, 0.1)

    def test_pure_is_one_hot(self):
        rows = mixture_rows(4, 2, 1.0)
        np.testing.assert_allclose(rows, np.eye(2)[[0, 1, 0, 1]])

    def test_dominant_range(self):
        with pytest.raises(ArgumentError):
            mixture_rows(4, 2, 0.0)
        with pytest.raises(ArgumentError):
            mixture_rows(4, 2, 1.2)


class TestDefaultNoiseGrid:
    def test_grid_placement(self):
        m = default_noise_grid(3, 2, lo=0.2, hi=0.95)
        assert m.kind == "cluster_conditional"
        assert m.tensor.shape == (3, 2, 2)
        want = np.linspace(0.2, 0.95, 6).reshape(3, 2)
        for k in range(3):
            for c in range(2):
                assert m.tensor[k, c, c] == pytest.approx(want[k, c])
        np.testing.assert_allclose(m.tensor.sum(axis=2), 1.0)

    def test_custom_range(self):
        m = default_noise_grid(2, 2, lo=0.5, hi=0.8)
        diags = [m.tensor[k, c, c] for k in range(2) for c in range(2)]
        np.testing.assert_allclose(diags, np.linspace(0.5, 0.8, 4))


class TestSynthSpecValidation:
    def test_defaults_are_valid(self):
        spec = SynthSpec()
        spec.validate()
        assert (spec.n, spec.num_classes, spec.k_true) == (2000, 4, 8)
        assert (spec.p_in, spec.p_out) == (0.02, 0.002)
        assert (spec.d, spec.sep) == (16, 6.0)

    def test_size_ordering(self):
        with pytest.raises(ArgumentError):
            SynthSpec(n=5, k_true=8).validate()
        with pytest.raises(ArgumentError):
            SynthSpec(k_true=3, num_classes=4).validate()
        with pytest.raises(ArgumentError):
            SynthSpec(num_classes=1, k_true=4).validate()

    def test_edge_probabilities(self):
        SynthSpec(p_in=0.1, p_out=0.0).validate()  # p_out may be zero
        with pytest.raises(ArgumentError):
            SynthSpec(p_in=0.002, p_out=0.02).validate()
        with pytest.raises(ArgumentError):
            SynthSpec(p_in=1.5).validate()
        with pytest.raises(ArgumentError):
            SynthSpec(p_out=-0.1).validate()

    def test_feature_knobs(self):
        with pytest.raises(ArgumentError):
            SynthSpec(d=0).validate()
        with pytest.raises(ArgumentError):
            SynthSpec(sep=-1.0).validate()

    def test_mixture_shape_and_rows(self):
        ok = SynthSpec(mixture=mixture_rows(8, 4, 0.8))
        ok.validate()
        with pytest.raises(ArgumentError):
            SynthSpec(mixture=np.ones((3, 4)) / 4).validate()
        bad = np.full((8, 4), 0.3)
        with pytest.raises(ArgumentError):
            SynthSpec(mixture=bad).validate()
        with pytest.raises(ArgumentError):
            SynthSpec(mixture=-mixture_rows(8, 4, 1.0) * -1 - 1).validate()


class TestSpecFromDict:
    def test_empty_gives_defaults(self):
        spec = SynthSpec.from_dict({})
        assert spec.n == 2000 and spec.seed == 0
        assert spec.mixture is None and spec.noise is None

    def test_unknown_key_rejected(self):
        with pytest.raises(FormatError):
            SynthSpec.from_dict({"n": 100, "fanout": 3})

    def test_mix_dominant_builds_rows(self):
        spec = SynthSpec.from_dict({"k_true": 4, "num_classes": 2,
                                    "n": 100, "mix_dominant": 0.8})
        np.testing.assert_allclose(spec.mixture, mixture_rows(4, 2, 0.8))

    def test_explicit_mixture_wins(self):
        rows = mixture_rows(8, 4, 0.9)
        spec = SynthSpec.from_dict({"mixture": rows.tolist()})
        np.testing.assert_allclose(spec.mixture, rows)

    def test_noise_tensor_passthrough(self):
        t = np.eye(4)[None].repeat(8, axis=0).tolist()
        spec = SynthSpec.from_dict(
            {"noise": {"kind": "cluster_conditional", "tensor": t, "seed": 3}}
        )
        assert spec.noise.kind == "cluster_conditional"
        assert spec.noise.tensor.shape == (8, 4, 4)
        assert spec.noise.seed == 3

    def test_noise_grid_shorthand(self):
        spec = SynthSpec.from_dict(
            {"noise": {"kind": "cluster_conditional", "grid": [0.3, 0.9]}}
        )
        diags = np.array(
            [spec.noise.tensor[k, c, c] for k in range(8) for c in range(4)]
        )
        np.testing.assert_allclose(diags, np.linspace(0.3, 0.9, 32))

    def test_noise_global_shorthand(self):
        spec = SynthSpec.from_dict({"noise": {"kind": "global", "diag": 0.62}})
        assert spec.noise.kind == "global"
        assert spec.noise.tensor[0, 0, 0] == pytest.approx(0.62)

    def test_noise_class_conditional_shorthand(self):
        spec = SynthSpec.from_dict(
            {"noise": {"kind": "class_conditional", "diag": [0.9, 0.8, 0.7, 0.6]}}
        )
        assert spec.noise.kind == "class_conditional"
        diags = [spec.noise.tensor[0, c, c] for c in range(4)]
        assert diags == pytest.approx([0.9, 0.8, 0.7, 0.6])


class TestGenerate:
    def test_deterministic(self):
        a, cma, na = generate(SynthSpec(n=300, seed=4))
        b, cmb, nb = generate(SynthSpec(n=300, seed=4))
        np.testing.assert_array_equal(a.edges, b.edges)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.truth, b.truth)
        np.testing.assert_array_equal(cma.assignment, cmb.assignment)
        np.testing.assert_allclose(na.tensor, nb.tensor)

    def test_seed_changes_draw(self):
        a, _, _ = generate(SynthSpec(n=300, seed=4))
        b, _, _ = generate(SynthSpec(n=300, seed=5))
        assert not np.array_equal(a.features, b.features)

    def test_structure(self):
        g, cm, noise = generate(SynthSpec(n=250, seed=1))
        g.validate()
        assert g.n == 250
        assert g.features.shape == (250, 16)
        assert g.features.dtype == np.float32
        assert g.truth is not None and g.num_classes == 4
        sizes = cm.sizes()
        assert sizes.sum() == 250
        assert sizes.max() - sizes.min() <= 1
        # contiguous block assignment
        assert np.all(np.diff(cm.assignment) >= 0)
        # centroids are the actual block means
        feats = np.asarray(g.features, dtype=np.float64)
        for k in range(cm.K):
            np.testing.assert_allclose(
                cm.centroids[k], feats[cm.assignment == k].mean(axis=0)
            )
        assert noise.tensor.shape == (8, 4, 4)

    def test_pure_default_truth_follows_clusters(self):
        g, cm, _ = generate(SynthSpec(n=200, seed=2))
        np.testing.assert_array_equal(g.truth, cm.assignment % 4)

    def test_block_diagonal_limit(self):
        g, cm, _ = generate(SynthSpec(n=200, p_in=0.2, p_out=0.0, seed=3))
        same = cm.assignment[g.edges[:, 0]] == cm.assignment[g.edges[:, 1]]
        assert g.num_edges > 0
        assert np.all(same)
        assert edge_homophily(g) == 1.0

    def test_default_homophily(self):
        for seed in (0, 1, 2):
            g, _, _ = generate(SynthSpec(seed=seed))
            assert edge_homophily(g) >= 0.6

    def test_mixture_purity(self):
        for seed in (0, 1):
            g, cm, _ = generate(SynthSpec(mixture=mixture_rows(8, 4, 0.7), seed=seed))
            fracs = []
            for k in range(cm.K):
                members = cm.assignment == k
                fracs.append(np.mean(g.truth[members] == k % 4))
            assert np.mean(fracs) == pytest.approx(0.70, abs=0.03)

    def test_class_marginals_match_mixture(self):
        for seed in (0, 1):
            mix = mixture_rows(8, 4, 0.6)
            spec = SynthSpec(mixture=mix, seed=seed)
            g, cm, _ = generate(spec)
            sizes = cm.sizes().astype(np.float64)
            expected = sizes @ mix  # per-class expected counts
            observed = np.bincount(g.truth, minlength=4).astype(np.float64)
            sd = np.sqrt(expected * (1.0 - expected / g.n))
            assert np.all(np.abs(observed - expected) <= 1.96 * sd + 1e-9)

    def test_noise_shape_validation(self):
        with pytest.raises(ArgumentError):
            generate(SynthSpec(n=100, noise=global_noise(0.6, 3)))
        bad = default_noise_grid(5, 4)
        with pytest.raises(ArgumentError):
            generate(SynthSpec(n=100, noise=bad))

    def test_invalid_spec_propagates(self):
        with pytest.raises(ArgumentError):
            generate(SynthSpec(n=4, k_true=8))

    def test_tiny_instances(self):
        g, cm, _ = generate(SynthSpec(n=40, num_classes=2, k_true=4,
                                      p_in=0.3, p_out=0.01, d=4, seed=6))
        assert g.n == 40 and cm.K == 4
        g2, cm2, _ = generate(SynthSpec(n=8, num_classes=2, k_true=8,
                                        p_in=0.5, p_out=0.1, d=2, seed=6))
        assert cm2.sizes().tolist() == [1] * 8


class TestEdgeHomophily:
    def test_hand_counts(self):
        g = Graph(
            n=4,
            edges=np.array([[0, 1], [1, 2], [2, 3]], dtype=np.int64),
            features=np.zeros((4, 2), dtype=np.float32),
            num_classes=2,
            truth=np.array([0, 0, 1, 0]),
        )
        assert edge_homophily(g) == pytest.approx(1 / 3)

    def test_no_edges(self):
        g = Graph(
            n=2,
            edges=np.zeros((0, 2), dtype=np.int64),
            features=np.zeros((2, 2), dtype=np.float32),
            num_classes=2,
            truth=np.array([0, 1]),
        )
        assert edge_homophily(g) == 0.0

    def test_needs_truth(self):
        g = Graph(
            n=2,
            edges=np.zeros((0, 2), dtype=np.int64),
            features=np.zeros((2, 2), dtype=np.float32),
            num_classes=2,
        )
        with pytest.raises(ArgumentError):
            edge_homophily(g)


class TestPlantedIo:
    def test_round_trip(self, tmp_path):
        g, cm, noise = generate(SynthSpec(n=60, num_classes=2, k_true=2,
                                          p_in=0.2, p_out=0.01, d=4, seed=7))
        path = tmp_path / "planted.json"
        save_planted(cm, noise, path)
        assignment, loaded = load_planted(path)
        np.testing.assert_array_equal(assignment, cm.assignment)
        assert loaded.kind == noise.kind
        np.testing.assert_allclose(loaded.tensor, noise.tensor)
        assert loaded.seed == noise.seed

    def test_mixture_stored_when_given(self, tmp_path):
        g, cm, noise = generate(SynthSpec(n=60, num_classes=2, k_true=2,
                                          p_in=0.2, p_out=0.01, d=4, seed=7))
        path = tmp_path / "planted.json"
        rows = mixture_rows(2, 2, 0.9)
        save_planted(cm, noise, path, mixture=rows)
        payload = json.loads(path.read_text(encoding="utf-8"))
        np.testing.assert_allclose(np.asarray(payload["mixture"]), rows)

    def test_load_errors(self, tmp_path):
        with pytest.raises(IoError):
            load_planted(tmp_path / "absent.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{", encoding="utf-8")
        with pytest.raises(FormatError):
            load_planted(bad)
        partial = tmp_path / "partial.json"
        partial.write_text(json.dumps({"assignment": [0, 1]}), encoding="utf-8")
        with pytest.raises(FormatError):
            load_planted(partial)
