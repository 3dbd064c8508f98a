"""Active-set search that assembles the latent hierarchy.

Each iteration fits one two-view estimator per active variable (the variable
against the concatenated rest), merges estimates that are mutual predictions
of each other, splits estimates that turn out to be concatenations of other
estimates (super-variables at shared children), tests whether substituting
an estimated parent would create a directed path inside the active set, and
finally swaps children for the parents that passed. Variables independent of
everything else are retired. The loop ends when the active set empties,
which on a valid hierarchy happens right after the root is absorbed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .basis import BasisConfig, fit_basis
from .errors import PartialResultError, TrainingDivergenceError
from .evaluate import DEFAULT_EPS, DEFAULT_TAU, kernel_r2
from .presets import PRESETS, TrainSettings
from .rng import derive_seed
from .tables import SampleTable

log = logging.getLogger(__name__)


@dataclass
class SearchConfig:
    tau: float = DEFAULT_TAU
    eps: float = DEFAULT_EPS
    latent_dim: int | None = None  # None: sweep once on the first fit
    train: TrainSettings = field(
        default_factory=lambda: PRESETS["search-desk"])
    seed: int = 0
    max_iterations: int | None = None  # None: 2 * number of observed variables
    min_samples: int = 200
    supervariable_subset_limit: int = 3

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must be in (0, 1)")
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must be in (0, 1)")


@dataclass
class ActiveVariable:
    """One frontier variable: an observed slice or an estimated latent."""

    id: str
    samples: np.ndarray
    origin: str  # "observed" | "estimated"
    level: int = 0

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass
class Estimate:
    """Extracted latent samples from one stage-1 or stage-4 fit."""

    id: str
    source: str  # active-variable id the fit used as v1
    samples: np.ndarray
    fit_loss: float


@dataclass
class JointEntry:
    """A cluster of co-parent estimates with the union of their children."""

    cluster: list[Estimate]
    children: set[str]


@dataclass
class ParentTable:
    """Algorithm state for one iteration: P, JointP, and the suppressed set R.

    ``entries`` maps each active variable to its estimated parents (a
    singleton until super-variable resolution replaces an estimate with the
    set of estimates that explains it).
    """

    entries: dict[str, list[Estimate]]
    joint_entries: list[JointEntry] = field(default_factory=list)
    suppressed: set[str] = field(default_factory=set)

    def estimates(self) -> list[Estimate]:
        seen: dict[str, Estimate] = {}
        for ests in self.entries.values():
            for e in ests:
                seen.setdefault(e.id, e)
        return [seen[k] for k in sorted(seen)]


class ScoreCache:
    """Memoized directional kernel-R^2 between estimates.

    Stage 2 merge scores get reused by the stage 3 asymmetry scan, which
    would otherwise refit the same regressions.
    """

    def __init__(self, tau: float, split_seed: int = 0):
        self.tau = tau
        self.split_seed = split_seed
        self._scores: dict[tuple[str, str], float] = {}

    def score(self, a: Estimate, b: Estimate) -> float:
        key = (a.id, b.id)
        if key not in self._scores:
            self._scores[key] = kernel_r2(a.samples, b.samples,
                                          split_seed=self.split_seed).value
        return self._scores[key]

    def predicts(self, a: Estimate, b: Estimate) -> bool:
        return self.score(a, b) >= self.tau

    def equivalent(self, a: Estimate, b: Estimate) -> bool:
        return self.predicts(a, b) and self.predicts(b, a)


class FitCounter:
    """Counts estimator fits for the complexity contract."""

    def __init__(self):
        self.count = 0


def _basis_cfg(cfg: SearchConfig, d_v1: int, d_v2: int, d_z: int,
               seed: int) -> BasisConfig:
    """Per-fit dimensions: tight s2 (so the z slots stay useful to the wide
    view's decoder), s1 sized to the narrow view's own width."""
    d_z = max(1, min(d_z, d_v1 + d_v2 - 1))
    d_s2 = max(d_v2 - d_z, 1)
    d_s1 = d_v1
    return cfg.train.basis_config(d_v1, d_v2, d_z, d_s1, d_s2, seed)


def _fit_estimate(v1: np.ndarray, v2: np.ndarray, cfg: SearchConfig,
                  d_z: int, seed: int, counter: FitCounter | None) -> np.ndarray:
    bcfg = _basis_cfg(cfg, v1.shape[1], v2.shape[1], d_z, seed)
    if counter is not None:
        counter.count += 1
    return fit_basis(v1, v2, bcfg).z_hat


def _concat(variables: list[ActiveVariable]) -> np.ndarray:
    return np.concatenate([a.samples for a in variables], axis=1)


def estimate_parents(active: list[ActiveVariable], cfg: SearchConfig,
                     d_z: int, iteration: int = 1,
                     counter: FitCounter | None = None) -> ParentTable:
    """Stage 1: fit each active variable against the concatenated rest.

    Returns an empty table when fewer than two variables remain (no second
    view to fit against). Per-variable fits run with derived seeds; a
    diverging fit is logged and skipped rather than aborting the iteration.
    """
    if len(active) < 2:
        return ParentTable({})
    ordered = sorted(active, key=lambda a: a.id)
    entries: dict[str, list[Estimate]] = {}
    for a in ordered:
        others = [b for b in ordered if b.id != a.id]
        seed = derive_seed(cfg.seed, "stage1", iteration, a.id)
        try:
            bcfg = _basis_cfg(cfg, a.dim, sum(b.dim for b in others), d_z, seed)
            if counter is not None:
                counter.count += 1
            fit = fit_basis(a.samples, _concat(others), bcfg)
        except TrainingDivergenceError as exc:
            log.warning("stage-1 fit for %s diverged (%s); skipping", a.id, exc)
            continue
        entries[a.id] = [Estimate(f"p({a.id})", a.id, fit.z_hat,
                                  fit.final_loss)]
    return ParentTable(entries)


def merge_duplicates(table: ParentTable, tau: float,
                     cache: ScoreCache) -> ParentTable:
    """Stage 2: collapse mutually-predicting estimates to one representative.

    Equivalence classes are the transitive closure of the pairwise mutual
    prediction test; the lexicographically lowest estimate id represents its
    class, so merging is deterministic.
    """
    ests = table.estimates()
    parent = {e.id: e.id for e in ests}

    def find(i: str) -> str:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in combinations(ests, 2):
        if find(a.id) == find(b.id):
            continue
        if cache.equivalent(a, b):
            ra, rb = find(a.id), find(b.id)
            lo, hi = sorted((ra, rb))
            parent[hi] = lo
    reps = {e.id: e for e in ests}
    entries = {}
    for child, lst in table.entries.items():
        seen = []
        for e in lst:
            rep = reps[find(e.id)]
            if rep.id not in [x.id for x in seen]:
                seen.append(rep)
        entries[child] = sorted(seen, key=lambda e: e.id)
    return ParentTable(entries, suppressed=set(table.suppressed))


def resolve_supervariables(table: ParentTable, tau: float, cache: ScoreCache,
                           cfg: SearchConfig | None = None) -> ParentTable:
    """Stage 3: split estimates that are concatenations of other estimates.

    An estimate is a super-variable candidate when it predicts some other
    estimate that cannot predict it back. If a subset of the other estimates
    jointly predicts the candidate, the candidate is replaced by that subset
    everywhere; otherwise it is suppressed for this iteration. The subset
    search tries the candidate's one-way prediction targets first (a valid
    explaining set is made of estimates the super-variable contains, hence
    predicts), then falls back to small subsets of everything else.
    """
    limit = cfg.supervariable_subset_limit if cfg else 3
    entries = {c: list(lst) for c, lst in table.entries.items()}
    suppressed = set(table.suppressed)
    for cand in table.estimates():
        others = [e for e in table.estimates() if e.id != cand.id]
        targets = [e for e in others
                   if cache.predicts(cand, e) and not cache.predicts(e, cand)]
        if not targets:
            continue
        subset = _explaining_subset(cand, targets, others, tau, cache, limit)
        if subset is None:
            suppressed.add(cand.id)
            continue
        for child, lst in entries.items():
            if any(e.id == cand.id for e in lst):
                kept = [e for e in lst if e.id != cand.id]
                for s in subset:
                    if s.id not in [e.id for e in kept]:
                        kept.append(s)
                entries[child] = sorted(kept, key=lambda e: e.id)
    return ParentTable(entries, suppressed=suppressed)


def _explaining_subset(cand: Estimate, targets: list[Estimate],
                       others: list[Estimate], tau: float, cache: ScoreCache,
                       limit: int) -> list[Estimate] | None:
    def joint_predicts(subset: tuple[Estimate, ...]) -> bool:
        stacked = np.concatenate([e.samples for e in subset], axis=1)
        return kernel_r2(stacked, cand.samples,
                         split_seed=cache.split_seed).value >= tau

    pools = [targets] + ([others] if len(others) > len(targets) else [])
    for pool in pools:
        for size in range(1, min(limit, len(pool)) + 1):
            for subset in combinations(pool, size):
                if joint_predicts(subset):
                    return sorted(subset, key=lambda e: e.id)
    # greedy forward selection beyond the exhaustive budget
    chosen: list[Estimate] = []
    remaining = list(others)
    best_score = -np.inf
    while remaining:
        scored = []
        for e in remaining:
            stacked = np.concatenate([x.samples for x in chosen + [e]], axis=1)
            scored.append((kernel_r2(stacked, cand.samples,
                                     split_seed=cache.split_seed).value, e.id, e))
        scored.sort(key=lambda t: (-t[0], t[1]))
        score, _, pick = scored[0]
        if score <= best_score:
            break
        chosen.append(pick)
        remaining = [e for e in remaining if e.id != pick.id]
        best_score = score
        if score >= tau:
            return sorted(chosen, key=lambda e: e.id)
    return None


def cluster_spouses(table: ParentTable) -> list[JointEntry]:
    """Stage lines 13-14: group estimates sharing any child into clusters.

    Clusters are connected components of the shared-child relation; each is
    paired with the union of its members' children.
    """
    ests = table.estimates()
    parent = {e.id: e.id for e in ests}

    def find(i: str) -> str:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for lst in table.entries.values():
        ids = sorted(e.id for e in lst)
        for other in ids[1:]:
            ra, rb = find(ids[0]), find(other)
            if ra != rb:
                lo, hi = sorted((ra, rb))
                parent[hi] = lo
    groups: dict[str, list[Estimate]] = {}
    for e in ests:
        groups.setdefault(find(e.id), []).append(e)
    joint = []
    for root in sorted(groups):
        cluster = sorted(groups[root], key=lambda e: e.id)
        member_ids = {e.id for e in cluster}
        children = {c for c, lst in table.entries.items()
                    if any(e.id in member_ids for e in lst)}
        joint.append(JointEntry(cluster, children))
    table.joint_entries = joint
    return joint


def detect_directed_paths(table: ParentTable, active: list[ActiveVariable],
                          cfg: SearchConfig, d_z: int, cache: ScoreCache,
                          iteration: int = 1,
                          counter: FitCounter | None = None) -> set[str]:
    """Stage 4: suppress clusters whose substitution would create a directed
    path inside the active set.

    For each cluster, a test fit uses the cluster as one view and the active
    set minus the cluster's children as the other. If the test latent
    predicts a cluster member, that member's information is still present
    elsewhere in the active set (some of its children or descendants remain),
    so the whole cluster waits. An empty second view means nothing is left
    to conflict with and the cluster passes. Failed fits suppress
    conservatively.
    """
    added: set[str] = set()
    by_id = {a.id: a for a in active}
    for entry in table.joint_entries:
        member_ids = {e.id for e in entry.cluster}
        if member_ids & table.suppressed:
            continue  # already suppressed; the outcome cannot change
        rest = [by_id[i] for i in sorted(by_id) if i not in entry.children]
        if not rest:
            continue
        v1 = np.concatenate([e.samples for e in entry.cluster], axis=1)
        seed = derive_seed(cfg.seed, "stage4", iteration, entry.cluster[0].id)
        try:
            z_test = _fit_estimate(v1, _concat(rest), cfg, d_z, seed, counter)
        except TrainingDivergenceError as exc:
            log.warning("stage-4 fit for cluster %s diverged (%s); "
                        "suppressing conservatively", sorted(member_ids), exc)
            added |= member_ids
            continue
        probe = Estimate(f"test({entry.cluster[0].id})@{iteration}",
                         "", z_test, 0.0)
        for member in entry.cluster:
            if cache.predicts(probe, member):
                added |= member_ids
                break
    table.suppressed |= added
    return added


@dataclass
class DiscoveredNode:
    id: str
    dim: int
    level: int
    samples: np.ndarray


@dataclass
class DiscoveredEdge:
    parent: str
    child: str
    iteration: int
    scores: dict[str, float] = field(default_factory=dict)


@dataclass
class DiscoveredGraph:
    """Output DAG: per-node latent samples plus edge provenance."""

    nodes: list[DiscoveredNode]
    edges: list[DiscoveredEdge]
    iterations: list[dict] = field(default_factory=list)
    dropped: list[dict] = field(default_factory=list)
    n_basis_fits: int = 0

    def node(self, node_id: str) -> DiscoveredNode:
        return next(n for n in self.nodes if n.id == node_id)

    def parents(self, node_id: str) -> list[str]:
        return sorted(e.parent for e in self.edges if e.child == node_id)

    def children(self, node_id: str) -> list[str]:
        return sorted(e.child for e in self.edges if e.parent == node_id)

    def leaf_ids(self) -> list[str]:
        with_children = {e.parent for e in self.edges}
        return sorted(n.id for n in self.nodes if n.id not in with_children)

    def assert_acyclic(self) -> None:
        marks: dict[str, int] = {}

        def visit(nid: str) -> None:
            state = marks.get(nid, 0)
            if state == 1:
                raise AssertionError("discovered graph has a cycle")
            if state == 2:
                return
            marks[nid] = 1
            for c in self.children(nid):
                visit(c)
            marks[nid] = 2

        for n in self.nodes:
            visit(n.id)

    def to_json(self) -> dict:
        return {
            "nodes": [{"id": n.id, "dim": n.dim, "level": n.level}
                      for n in self.nodes],
            "edges": [{"parent": e.parent, "child": e.child,
                       "iteration": e.iteration, "scores": e.scores}
                      for e in self.edges],
            "dropped": self.dropped,
            "n_basis_fits": self.n_basis_fits,
        }


def _independence_scores(a: ActiveVariable, rest: list[ActiveVariable],
                         split_seed: int) -> tuple[float, float]:
    stacked = _concat(rest)
    fwd = kernel_r2(a.samples, stacked, split_seed=split_seed).value
    bwd = kernel_r2(stacked, a.samples, split_seed=split_seed).value
    return fwd, bwd


def discover(table: SampleTable, observed_ids: list[str],
             cfg: SearchConfig) -> DiscoveredGraph:
    """Run the full active-set search over the observed slices of a table.

    Returns the discovered graph whose leaves are exactly the observed
    variables (minus any reported as independent), with per-node latent
    samples, per-edge provenance, and a per-iteration audit log. Raises
    PartialResultError carrying the partial graph when the iteration cap is
    hit.
    """
    for oid in observed_ids:
        if oid not in table.slices:
            raise ValueError(f"observed id {oid!r} not present in table")
    if table.n_samples < cfg.min_samples:
        raise ValueError(f"need at least {cfg.min_samples} samples, "
                         f"got {table.n_samples}")

    active = [ActiveVariable(i, table.get(i), "observed")
              for i in sorted(observed_ids)]
    graph = DiscoveredGraph(
        nodes=[DiscoveredNode(a.id, a.dim, 0, a.samples) for a in active],
        edges=[])
    counter = FitCounter()
    d_z = cfg.latent_dim or _sweep_latent_dim(active, cfg, counter)
    cap = cfg.max_iterations or 2 * len(observed_ids)
    next_latent = 1

    iteration = 0
    while active:
        iteration += 1
        if iteration > cap:
            graph.n_basis_fits = counter.count
            raise PartialResultError(
                graph, f"active set not empty after {cap} iterations "
                       f"({sorted(a.id for a in active)} remain)")
        record: dict = {"iteration": iteration,
                        "active": sorted(a.id for a in active)}
        cache = ScoreCache(cfg.tau, split_seed=derive_seed(cfg.seed, "kernel"))

        ptab = estimate_parents(active, cfg, d_z, iteration, counter)
        record["estimates"] = {c: [e.id for e in lst]
                               for c, lst in ptab.entries.items()}
        ptab = merge_duplicates(ptab, cfg.tau, cache)
        record["merged"] = {c: [e.id for e in lst]
                            for c, lst in ptab.entries.items()}
        ptab = resolve_supervariables(ptab, cfg.tau, cache, cfg)
        record["after_supervariables"] = {c: [e.id for e in lst]
                                          for c, lst in ptab.entries.items()}
        cluster_spouses(ptab)
        record["clusters"] = [{"members": [e.id for e in j.cluster],
                               "children": sorted(j.children)}
                              for j in ptab.joint_entries]
        detect_directed_paths(ptab, active, cfg, d_z, cache, iteration, counter)
        record["suppressed"] = sorted(ptab.suppressed)

        # lines 19-21: substitute children with unsuppressed clusters
        substitutions = []
        new_active = list(active)
        for entry in ptab.joint_entries:
            member_ids = {e.id for e in entry.cluster}
            if member_ids & ptab.suppressed:
                continue
            child_level = max(next(a.level for a in active if a.id == c)
                              for c in entry.children)
            id_map = {}
            for est in entry.cluster:
                node_id = f"zhat{next_latent}"
                next_latent += 1
                id_map[est.id] = node_id
                var = ActiveVariable(node_id, est.samples, "estimated",
                                     level=child_level + 1)
                new_active.append(var)
                graph.nodes.append(DiscoveredNode(node_id, est.samples.shape[1],
                                                  child_level + 1, est.samples))
            for child in sorted(entry.children):
                for est in ptab.entries.get(child, []):
                    if est.id in id_map:
                        own = ptab.entries[child]
                        scores = {}
                        if len(own) >= 1:
                            scores["equivalence"] = cache._scores.get(
                                (f"p({child})", est.id), 1.0)
                        graph.edges.append(DiscoveredEdge(
                            id_map[est.id], child, iteration, scores))
            new_active = [a for a in new_active if a.id not in entry.children]
            substitutions.append({"members": sorted(id_map.values()),
                                  "children": sorted(entry.children)})
        record["substitutions"] = substitutions

        # line 22: retire variables independent of the rest
        removed = []
        if len(new_active) == 1:
            removed.append({"id": new_active[0].id, "reason": "last-variable"})
            new_active = []
        elif new_active:
            keep = []
            split_seed = derive_seed(cfg.seed, "independence")
            for a in sorted(new_active, key=lambda v: v.id):
                rest = [b for b in new_active if b.id != a.id]
                fwd, bwd = _independence_scores(a, rest, split_seed)
                if max(fwd, bwd) <= cfg.eps:
                    removed.append({"id": a.id, "forward": fwd,
                                    "backward": bwd})
                else:
                    keep.append(a)
            new_active = keep
        if removed:
            graph.dropped.extend(
                {**r, "iteration": iteration} for r in removed)
        record["removed"] = removed
        record["fits_so_far"] = counter.count
        graph.iterations.append(record)
        log.info("iteration %d: %d active -> %d", iteration, len(active),
                 len(new_active))
        active = new_active

    graph.n_basis_fits = counter.count
    graph.assert_acyclic()
    return graph


def _sweep_latent_dim(active: list[ActiveVariable], cfg: SearchConfig,
                      counter: FitCounter) -> int:
    """Run-level default for the estimated latent width: reconstruction-loss
    sweep on the first variable (smallest width within 5% of the best)."""
    from .basis import DIM_SWEEP_SLACK

    ordered = sorted(active, key=lambda a: a.id)
    a, others = ordered[0], ordered[1:]
    v2 = _concat(others)
    d_max = max(2, 2 * a.dim)
    losses = []
    for dz in range(1, d_max + 1):
        seed = derive_seed(cfg.seed, "dim-sweep", dz)
        bcfg = _basis_cfg(cfg, a.dim, v2.shape[1], dz, seed)
        bcfg.steps = max(500, cfg.train.steps // 4)
        counter.count += 1
        losses.append(fit_basis(a.samples, v2, bcfg).final_loss)
    best = min(losses)
    for dz, loss in enumerate(losses, start=1):
        if loss <= best * (1.0 + DIM_SWEEP_SLACK):
            log.info("latent-dim sweep picked %d (losses: %s)", dz,
                     [round(l, 5) for l in losses])
            return dz
    return d_max
