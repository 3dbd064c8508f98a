import numpy as np
import pytest

from hiercause.errors import MalformedSpecError
from hiercause.graphs import (
    MAX_MIXING_CONDITION,
    BasisSyntheticConfig,
    GraphSpec,
    NodeSpec,
    ScmInstance,
    basis_synthetic_params,
    random_scm,
    sample_basis_synthetic,
    sample_scm,
    validate_spec,
)
from hiercause.nn import MlpParams


def balanced_tree() -> GraphSpec:
    nodes = [NodeSpec("z1", 2, "latent"), NodeSpec("z2", 2, "latent"),
             NodeSpec("z3", 2, "latent")]
    nodes += [NodeSpec(f"x{i}", 2, "observed") for i in range(1, 5)]
    edges = [("z1", "z2"), ("z1", "z3"),
             ("z2", "x1"), ("z2", "x2"), ("z3", "x3"), ("z3", "x4")]
    return GraphSpec(nodes, edges, seed=7)


class TestValidate:
    def test_balanced_tree_is_valid(self):
        assert validate_spec(balanced_tree()) == []

    def test_empty_graph_is_valid(self):
        assert validate_spec(GraphSpec([], [])) == []

    def test_single_pure_child_violation(self):
        spec = GraphSpec([NodeSpec("z1", 2, "latent"),
                          NodeSpec("x1", 2, "observed")],
                         [("z1", "x1")])
        violations = validate_spec(spec)
        assert [v.clause for v in violations] == ["two-pure-children"]
        assert violations[0].nodes == ("z1",)

    def test_sibling_directed_path_violation(self):
        # z1 -> {z2, z3}, z2 -> z3: siblings with a directed path
        nodes = [NodeSpec("z1", 1, "latent"), NodeSpec("z2", 1, "latent"),
                 NodeSpec("z3", 1, "latent")]
        nodes += [NodeSpec(f"x{i}", 1, "observed") for i in range(1, 7)]
        edges = [("z1", "z2"), ("z1", "z3"), ("z2", "z3"),
                 ("z1", "x1"), ("z1", "x2"), ("z2", "x3"), ("z2", "x4"),
                 ("z3", "x5"), ("z3", "x6")]
        violations = validate_spec(GraphSpec(nodes, edges))
        assert any(v.clause == "no-sibling-paths" and v.nodes == ("z2", "z3")
                   for v in violations)

    def test_observed_with_children_flagged(self):
        nodes = [NodeSpec("x1", 1, "observed"), NodeSpec("x2", 1, "observed")]
        violations = validate_spec(GraphSpec(nodes, [("x1", "x2")]))
        assert any(v.clause == "observed-is-leaf" for v in violations)

    def test_cycle_flagged(self):
        nodes = [NodeSpec("a", 1, "latent"), NodeSpec("b", 1, "latent")]
        violations = validate_spec(GraphSpec(nodes, [("a", "b"), ("b", "a")]))
        assert [v.clause for v in violations] == ["acyclic"]

    def test_malformed_raises_not_reports(self):
        with pytest.raises(MalformedSpecError, match="duplicate"):
            GraphSpec([NodeSpec("a", 1, "latent"), NodeSpec("a", 1, "latent")], [])
        with pytest.raises(MalformedSpecError, match="unknown node"):
            GraphSpec([NodeSpec("a", 1, "latent")], [("a", "ghost")])
        with pytest.raises(MalformedSpecError, match="dim"):
            GraphSpec([NodeSpec("a", 0, "latent")], [])

    def test_json_roundtrip(self, tmp_path):
        spec = balanced_tree()
        spec.save(tmp_path / "g.json")
        again = GraphSpec.load(tmp_path / "g.json")
        assert again.to_json() == spec.to_json()


class TestSampleScm:
    def test_deterministic(self):
        inst = random_scm(balanced_tree())
        a = sample_scm(inst, 1000, seed=3)
        b = sample_scm(inst, 1000, seed=3)
        assert a.data.tobytes() == b.data.tobytes()

    def test_root_moments(self):
        spec = GraphSpec([NodeSpec("z", 2, "latent"),
                          NodeSpec("x1", 2, "observed"),
                          NodeSpec("x2", 2, "observed")],
                         [("z", "x1"), ("z", "x2")])
        table = sample_scm(random_scm(spec), 10000, seed=0)
        z = table.get("z")
        n = z.shape[0]
        assert np.abs(z.mean(axis=0)).max() < 4 / np.sqrt(n)
        assert np.abs(z.var(axis=0) - 1.0).max() < 0.1

    def test_identity_chain_zero_noise(self):
        spec = GraphSpec([NodeSpec("z", 2, "latent"),
                          NodeSpec("x", 2, "observed")],
                         [("z", "x")], exogenous_dim=2)
        # single linear layer [I | 0] maps (z ++ eps) -> z
        w = np.concatenate([np.eye(2), np.zeros((2, 2))], axis=1)
        gen = MlpParams([w], [np.zeros(2)])
        inst = ScmInstance(spec, {"z": None, "x": gen}, noise_scale=0.0)
        table = sample_scm(inst, 500, seed=1)
        np.testing.assert_array_equal(table.get("x"), table.get("z"))

    def test_stream_extension_keeps_prefix(self):
        inst = random_scm(balanced_tree())
        small = sample_scm(inst, 200, seed=9)
        large = sample_scm(inst, 500, seed=9)
        np.testing.assert_array_equal(large.data[:200], small.data)

    def test_fork_d_separation_probe(self):
        # partial correlation of the two children given the parent stays
        # small once the probe can express the (nonlinear) parent effect;
        # a purely linear probe leaves ~0.18 of unexplained common signal
        spec = GraphSpec([NodeSpec("z", 2, "latent"),
                          NodeSpec("x1", 2, "observed"),
                          NodeSpec("x2", 2, "observed")],
                         [("z", "x1"), ("z", "x2")])
        table = sample_scm(random_scm(spec), 10000, seed=4)
        z, x1, x2 = table.get("z"), table.get("x1"), table.get("x2")
        feats = np.concatenate([z, np.maximum(z, 0), z ** 2,
                                np.ones((z.shape[0], 1))], axis=1)
        r1 = x1 - feats @ np.linalg.lstsq(feats, x1, rcond=None)[0]
        r2 = x2 - feats @ np.linalg.lstsq(feats, x2, rcond=None)[0]
        corr = np.corrcoef(r1.T, r2.T)[:2, 2:]
        assert np.abs(corr).max() <= 0.1

    def test_generator_width_validation(self):
        spec = GraphSpec([NodeSpec("z", 2, "latent"),
                          NodeSpec("x", 2, "observed")],
                         [("z", "x")], exogenous_dim=2)
        bad = MlpParams([np.zeros((2, 3))], [np.zeros(2)])  # wants 4 inputs
        with pytest.raises(ValueError, match="in-dim"):
            ScmInstance(spec, {"z": None, "x": bad})


class TestBasisSynthetic:
    def test_view_widths_and_finite(self):
        cfg = BasisSyntheticConfig(2, 2, 2, seed=0)
        table = sample_basis_synthetic(cfg, 2000, seed=5)
        assert table.width("v1") == 4 and table.width("v2") == 4
        assert np.all(np.isfinite(table.data))

    def test_determinism(self):
        cfg = BasisSyntheticConfig(2, 2, 2, seed=3)
        a = sample_basis_synthetic(cfg, 1000, seed=2)
        b = sample_basis_synthetic(cfg, 1000, seed=2)
        assert a.data.tobytes() == b.data.tobytes()
        pa = basis_synthetic_params(cfg)
        pb = basis_synthetic_params(cfg)
        np.testing.assert_array_equal(pa.coupling, pb.coupling)

    def test_z_s2_dependence_matches_stored_coupling(self):
        # cov(z, s2) is the coupling matrix: s2 = C z + b + eta with z ~ N(0, I)
        cfg = BasisSyntheticConfig(2, 2, 2, seed=0)
        table = sample_basis_synthetic(cfg, 10000, seed=11)
        z, s2 = table.get("z"), table.get("s2")
        cov = (z - z.mean(0)).T @ (s2 - s2.mean(0)) / z.shape[0]
        coupling = basis_synthetic_params(cfg).coupling
        np.testing.assert_allclose(cov, coupling.T, atol=0.08)
        assert np.abs(cov).max() > 0.1

    def test_mixing_condition_number_bounded(self):
        params = basis_synthetic_params(BasisSyntheticConfig(3, 2, 4, seed=1))
        for net in (params.g1, params.g2):
            for w in net.weights:
                assert np.linalg.cond(w) <= MAX_MIXING_CONDITION + 1e-9

    def test_sign_split_views(self):
        # flipping z to all-negative must leave v1 at its zero-z value
        cfg = BasisSyntheticConfig(1, 1, 1, seed=2)
        params = basis_synthetic_params(cfg)
        from hiercause.nn import mlp_forward
        s1 = np.array([[0.3]])
        neg = mlp_forward(params.g1, np.concatenate([np.maximum([[-2.0]], 0), s1], axis=1))
        zero = mlp_forward(params.g1, np.concatenate([[[0.0]], s1], axis=1))
        np.testing.assert_array_equal(neg, zero)
