"""Hierarchical causal graph specs, structural validation, and SCM sampling.

A GraphSpec declares a DAG of multi-dimensional latent/observed variables.
Validation checks the structural conditions the identification theory needs:
observed variables are leaves, every latent has at least two pure children,
and no directed path connects two siblings. An ScmInstance attaches a
generating MLP to every non-root node; sampling walks the graph in
topological order and keeps the latent columns so runs can be scored against
ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MalformedSpecError, NumericOverflowError
from .nn import MlpParams, mlp_forward, mlp_init
from .rng import rng_for
from .tables import SampleTable, from_columns

KINDS = ("latent", "observed")


@dataclass(frozen=True)
class NodeSpec:
    id: str
    dim: int
    kind: str  # "latent" | "observed"


@dataclass
class GraphSpec:
    """Declarative DAG of variables plus generator configuration."""

    nodes: list[NodeSpec]
    edges: list[tuple[str, str]]  # (parent id, child id)
    exogenous_dim: int = 2
    seed: int = 0

    def __post_init__(self):
        self.edges = [tuple(e) for e in self.edges]
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise MalformedSpecError(f"duplicate node ids: {dupes}")
        known = set(ids)
        for p, c in self.edges:
            if p not in known or c not in known:
                raise MalformedSpecError(f"edge ({p!r}, {c!r}) references unknown node")
        if len(set(self.edges)) != len(self.edges):
            raise MalformedSpecError("duplicate edges")
        for n in self.nodes:
            if n.dim < 1:
                raise MalformedSpecError(f"node {n.id!r} has non-positive dim")
            if n.kind not in KINDS:
                raise MalformedSpecError(f"node {n.id!r} has unknown kind {n.kind!r}")
        if self.exogenous_dim < 1:
            raise MalformedSpecError("exogenous_dim must be positive")

    def node(self, node_id: str) -> NodeSpec:
        return next(n for n in self.nodes if n.id == node_id)

    def parents(self, node_id: str) -> list[str]:
        return sorted(p for p, c in self.edges if c == node_id)

    def children(self, node_id: str) -> list[str]:
        return sorted(c for p, c in self.edges if p == node_id)

    def observed_ids(self) -> list[str]:
        return [n.id for n in self.nodes if n.kind == "observed"]

    def latent_ids(self) -> list[str]:
        return [n.id for n in self.nodes if n.kind == "latent"]

    def topological_order(self) -> list[str]:
        """Parents-first order; raises MalformedSpecError on a cycle."""
        order = _topological_order(self)
        if order is None:
            raise MalformedSpecError("graph contains a cycle")
        return order

    def to_json(self) -> dict:
        return {
            "nodes": [{"id": n.id, "dim": n.dim, "kind": n.kind} for n in self.nodes],
            "edges": [list(e) for e in self.edges],
            "exogenous_dim": self.exogenous_dim,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(obj: dict) -> "GraphSpec":
        try:
            nodes = [NodeSpec(str(n["id"]), int(n["dim"]), str(n["kind"]))
                     for n in obj["nodes"]]
            edges = [(str(p), str(c)) for p, c in obj["edges"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedSpecError(f"bad graph json: {exc}") from exc
        return GraphSpec(nodes, edges,
                         int(obj.get("exogenous_dim", 2)), int(obj.get("seed", 0)))

    @staticmethod
    def load(path: str | Path) -> "GraphSpec":
        return GraphSpec.from_json(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))


def _topological_order(spec: GraphSpec) -> list[str] | None:
    in_deg = {n.id: 0 for n in spec.nodes}
    for _, c in spec.edges:
        in_deg[c] += 1
    frontier = sorted(i for i, d in in_deg.items() if d == 0)
    order: list[str] = []
    while frontier:
        node = frontier.pop(0)
        order.append(node)
        changed = False
        for c in spec.children(node):
            in_deg[c] -= 1
            if in_deg[c] == 0:
                frontier.append(c)
                changed = True
        if changed:
            frontier.sort()
    return order if len(order) == len(spec.nodes) else None


def _reachable(spec: GraphSpec, start: str) -> set[str]:
    seen, stack = set(), [start]
    while stack:
        for c in spec.children(stack.pop()):
            if c not in seen:
                seen.add(c)
                stack.append(c)
    return seen


@dataclass(frozen=True)
class Violation:
    """One violated structural clause with the offending node ids."""

    clause: str
    nodes: tuple[str, ...]
    detail: str

    def __str__(self):
        return f"{self.clause}: {self.detail}"


def validate_spec(spec: GraphSpec) -> list[Violation]:
    """Check the structural conditions; empty list means the spec is valid.

    Syntactic problems (duplicate ids, dangling edges) raise
    MalformedSpecError instead of being reported as violations; those are
    already rejected by the GraphSpec constructor.
    """
    violations: list[Violation] = []

    if _topological_order(spec) is None:
        on_cycle = _nodes_on_cycles(spec)
        violations.append(Violation("acyclic", tuple(on_cycle),
                                    f"cycle through {sorted(on_cycle)}"))
        return violations  # reachability below assumes a DAG

    for n in spec.nodes:
        if n.kind == "observed" and spec.children(n.id):
            violations.append(Violation(
                "observed-is-leaf", (n.id,),
                f"observed node {n.id!r} has children {spec.children(n.id)}"))

    for n in spec.nodes:
        if n.kind != "latent":
            continue
        pure = [c for c in spec.children(n.id) if spec.parents(c) == [n.id]]
        if len(pure) < 2:
            violations.append(Violation(
                "two-pure-children", (n.id,),
                f"latent {n.id!r} has {len(pure)} pure children, needs >= 2"))

    reach = {n.id: _reachable(spec, n.id) for n in spec.nodes}
    flagged = set()
    for n in spec.nodes:
        kids = spec.children(n.id)
        for i, a in enumerate(kids):
            for b in kids[i + 1:]:
                for u, v in ((a, b), (b, a)):
                    if v in reach[u] and (u, v) not in flagged:
                        flagged.add((u, v))
                        violations.append(Violation(
                            "no-sibling-paths", (u, v),
                            f"directed path from {u!r} to its sibling {v!r}"))
    return violations


def _nodes_on_cycles(spec: GraphSpec) -> tuple[str, ...]:
    in_deg = {n.id: 0 for n in spec.nodes}
    for _, c in spec.edges:
        in_deg[c] += 1
    frontier = [i for i, d in in_deg.items() if d == 0]
    while frontier:
        for c in spec.children(frontier.pop()):
            in_deg[c] -= 1
            if in_deg[c] == 0:
                frontier.append(c)
    return tuple(sorted(i for i, d in in_deg.items() if d > 0))


@dataclass
class ScmInstance:
    """A GraphSpec with concrete generating functions.

    Non-root nodes need an MLP mapping (parents in sorted-id order, then the
    exogenous draw) to the node's values. Roots may map ``None``, in which
    case they are drawn directly from N(0, I); a root with an explicit
    generator is fed its exogenous draw only. ``noise_scale`` multiplies the
    exogenous draws of generator-backed nodes (0 disables endogenous noise
    without touching direct-draw roots).
    """

    spec: GraphSpec
    generators: dict[str, MlpParams | None]
    noise_scale: float = 1.0

    def __post_init__(self):
        for n in self.spec.nodes:
            gen = self.generators.get(n.id)
            parents = self.spec.parents(n.id)
            if gen is None:
                if parents:
                    raise ValueError(f"non-root node {n.id!r} needs a generator")
                continue
            pa_dim = sum(self.spec.node(p).dim for p in parents)
            want_in = pa_dim + self.spec.exogenous_dim
            if gen.in_dim != want_in:
                raise ValueError(f"{n.id!r}: generator in-dim {gen.in_dim} != "
                                 f"parent dims + exogenous = {want_in}")
            if gen.out_dim != n.dim:
                raise ValueError(f"{n.id!r}: generator out-dim {gen.out_dim} != "
                                 f"node dim {n.dim}")


#: Fraction of a generated node's variance driven by its parents (rather
#: than its exogenous draw). Leaves keep most of their parents' signal so
#: the hierarchy stays recoverable from data; latent-to-latent links carry
#: fresh noise so adjacent levels remain clearly distinct variables.
PARENT_SHARE_OBSERVED = 0.9
PARENT_SHARE_LATENT = 0.6


def random_scm(spec: GraphSpec, noise_scale: float = 1.0,
               parent_share_observed: float = PARENT_SHARE_OBSERVED,
               parent_share_latent: float = PARENT_SHARE_LATENT) -> ScmInstance:
    """Default instance: roots are N(0, I), non-roots get 2-layer MLPs.

    Each generator is a 2-layer MLP over (parents ++ exogenous) with a
    block structure: a well-conditioned nonlinear pathway for the parents
    summed with an independently mixed exogenous pathway, scaled so the
    node's conditional-variance share matches the target for its kind.
    Generator draws come from per-node streams derived from the spec seed,
    so editing one node leaves the others' functions untouched.

    The parent pathway is kept information-preserving on purpose: with
    unconstrained dense draws the recoverability of a parent from its
    children is seed luck, and the theory's information-conservation
    assumption fails unpredictably.
    """
    generators: dict[str, MlpParams | None] = {}
    for n in spec.nodes:
        parents = spec.parents(n.id)
        if not parents:
            generators[n.id] = None
            continue
        pa_dim = sum(spec.node(p).dim for p in parents)
        share = (parent_share_observed if n.kind == "observed"
                 else parent_share_latent)
        generators[n.id] = _structured_generator(
            pa_dim, spec.exogenous_dim, n.dim, share,
            rng_for(spec.seed, "generator", n.id))
    return ScmInstance(spec, generators, noise_scale)


def _structured_generator(pa_dim: int, d_eps: int, d_out: int, share: float,
                          rng: np.random.Generator,
                          probe_n: int = 4096) -> MlpParams:
    """2-layer generator g(Pa ++ eps) = M @ lrelu(P @ Pa) + s * C @ lrelu(D @ eps).

    Written as one MLP with a block-diagonal first layer. P collapses the
    parents with bounded condition number and M is square well-conditioned,
    so every parent direction survives into the output; s sets the
    exogenous pathway's variance share.
    """
    p_in = _well_conditioned(rng, d_out, pa_dim)
    m_mix = _well_conditioned(rng, d_out, d_out)
    d_in = _well_conditioned(rng, d_out, d_eps)
    c_mix = _well_conditioned(rng, d_out, d_out)

    alpha = 0.2
    pa = rng.standard_normal((probe_n, pa_dim))
    eps = rng.standard_normal((probe_n, d_eps))

    def whitened(mix: np.ndarray, front: np.ndarray,
                 x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # whiten the pathway output under the probe: no output direction of
        # the parent signal may be thin, or it drowns in the other pathway
        act = x @ front.T
        out = np.where(act > 0, act, alpha * act) @ mix.T
        mu = out.mean(axis=0)
        cov = np.cov(out.T) + 1e-9 * np.eye(d_out)
        evals, evecs = np.linalg.eigh(cov)
        white = evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T
        return white @ mix, white @ mu

    m_white, mu_pa = whitened(m_mix, p_in, pa)
    c_white, mu_eps = whitened(c_mix, d_in, eps)
    # both pathways now have unit covariance, so the share sets the scale
    scale = np.sqrt((1.0 - share) / share)
    norm = np.sqrt(1.0 + scale * scale)

    w1 = np.zeros((2 * d_out, pa_dim + d_eps))
    w1[:d_out, :pa_dim] = p_in
    w1[d_out:, pa_dim:] = d_in
    w2 = np.concatenate([m_white, scale * c_white], axis=1) / norm
    bias2 = -(mu_pa + scale * mu_eps) / norm
    return MlpParams([w1, w2], [np.zeros(2 * d_out), bias2], alpha=alpha)


def sample_scm(instance: ScmInstance, n: int, seed: int) -> SampleTable:
    """Draw n joint samples; both latent and observed slices are retained.

    Per-node noise streams are derived from (seed, node id), so growing n
    extends each stream without disturbing earlier rows, and identical
    (instance, n, seed) calls are bit-identical.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    spec = instance.spec
    values: dict[str, np.ndarray] = {}
    for node_id in spec.topological_order():
        node = spec.node(node_id)
        gen = instance.generators.get(node_id)
        rng = rng_for(seed, "noise", node_id)
        if gen is None:
            values[node_id] = rng.standard_normal((n, node.dim))
            continue
        eps = instance.noise_scale * rng.standard_normal((n, spec.exogenous_dim))
        parents = spec.parents(node_id)
        if parents:
            inp = np.concatenate([values[p] for p in parents] + [eps], axis=1)
        else:
            inp = eps
        out = mlp_forward(gen, inp)
        if not np.all(np.isfinite(out)):
            raise NumericOverflowError(node_id)
        values[node_id] = out
    ordered = {nid: values[nid] for nid in (x.id for x in spec.nodes)}
    return from_columns(ordered)


@dataclass
class BasisSyntheticConfig:
    """Generator settings for the two-view synthetic benchmark."""

    d_z: int = 2
    d_s1: int = 2
    d_s2: int = 2
    mixing_depth: int = 2
    mixing_width: int | None = None  # hidden width; None = square mixing
    seed: int = 0

    def __post_init__(self):
        if min(self.d_z, self.d_s1, self.d_s2) < 1:
            raise ValueError("latent dims must be >= 1")
        if self.mixing_depth < 1:
            raise ValueError("mixing depth must be >= 1")


@dataclass
class BasisSyntheticParams:
    """Frozen draw of the synthetic generating process."""

    coupling: np.ndarray  # s2 mean = coupling @ z + offset
    offset: np.ndarray
    g1: MlpParams
    g2: MlpParams


MAX_MIXING_CONDITION = 4.0


def _well_conditioned(rng: np.random.Generator, d_out: int, d_in: int) -> np.ndarray:
    """Gaussian matrix with singular values rescaled into [0.5, 2.0]."""
    w = rng.standard_normal((d_out, d_in))
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    if s.max() > s.min():
        s = 0.5 + 1.5 * (s - s.min()) / (s.max() - s.min())
    else:
        s = np.full_like(s, 1.0)
    w = (u * s) @ vt
    assert np.linalg.cond(w) <= MAX_MIXING_CONDITION + 1e-9
    return w


def _mixing_mlp(rng: np.random.Generator, d_in: int, depth: int,
                width: int | None) -> MlpParams:
    """Invertible Leaky-ReLU mixing: square well-conditioned layers, no bias.

    Square layers with bounded condition number compose with the (invertible)
    Leaky-ReLU into a provably invertible map, which is the whole point of
    the construction; a non-square hidden width would void that guarantee.
    """
    if width is not None and width != d_in:
        raise ValueError("mixing layers must stay square (width == input dim) "
                         "to keep the mixing invertible")
    weights = [_well_conditioned(rng, d_in, d_in) for _ in range(depth)]
    biases = [np.zeros(d_in) for _ in range(depth)]
    return MlpParams(weights, biases, alpha=0.2)


def basis_synthetic_params(cfg: BasisSyntheticConfig) -> BasisSyntheticParams:
    """Deterministic structural draw (coupling, offset, mixing nets) for cfg."""
    rng_struct = rng_for(cfg.seed, "basis-structure")
    coupling = rng_struct.uniform(-1.0, 1.0, size=(cfg.d_s2, cfg.d_z))
    offset = rng_struct.uniform(-1.0, 1.0, size=cfg.d_s2)
    g1 = _mixing_mlp(rng_for(cfg.seed, "basis-g1"), cfg.d_z + cfg.d_s1,
                     cfg.mixing_depth, cfg.mixing_width)
    g2 = _mixing_mlp(rng_for(cfg.seed, "basis-g2"), cfg.d_z + cfg.d_s2,
                     cfg.mixing_depth, cfg.mixing_width)
    return BasisSyntheticParams(coupling, offset, g1, g2)


def sample_basis_synthetic(cfg: BasisSyntheticConfig, n: int,
                           seed: int) -> SampleTable:
    """Two-view synthetic data with slices z, s1, s2, v1, v2.

    z and s1 are standard normal; s2 is normal around an affine image of z,
    making (z, s2) dependent. The views mix the sign-split halves of z:
    v1 = g1(max(z, 0), s1), v2 = g2(min(z, 0), s2), so g1 and g2 are only
    jointly invertible.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    params = basis_synthetic_params(cfg)
    z = rng_for(seed, "z").standard_normal((n, cfg.d_z))
    s1 = rng_for(seed, "s1").standard_normal((n, cfg.d_s1))
    s2 = (z @ params.coupling.T + params.offset
          + rng_for(seed, "s2").standard_normal((n, cfg.d_s2)))
    v1 = mlp_forward(params.g1, np.concatenate([np.maximum(z, 0.0), s1], axis=1))
    v2 = mlp_forward(params.g2, np.concatenate([np.minimum(z, 0.0), s2], axis=1))
    return from_columns({"z": z, "s1": s1, "s2": s2, "v1": v1, "v2": v2})
