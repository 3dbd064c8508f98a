"""Experiment harness: benchmark graphs, end-to-end runs, and artifact IO.

Everything the CLI executes lives here as plain functions so the acceptance
suite can call the same code paths. Experiments are deterministic given
(seed list, preset); aggregates report mean and population standard
deviation over seeds.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import BasisConfig, extract_latent, fit_basis, fit_individual_baseline
from .errors import NotApplicableError
from .evaluate import PredictionMatrix, kernel_r2, pairwise_matrix
from .graphs import (
    BasisSyntheticConfig,
    GraphSpec,
    NodeSpec,
    random_scm,
    sample_basis_synthetic,
    sample_scm,
    validate_spec,
)
from .presets import PRESETS, TrainSettings, get_preset
from .rng import derive_seed
from .search import DiscoveredGraph, SearchConfig, discover
from .tables import SampleTable, from_columns

log = logging.getLogger(__name__)


def _tree_spec(latent_edges: list[tuple[str, str]],
               leaf_map: dict[str, list[str]], dim: int = 2,
               seed: int = 0) -> GraphSpec:
    latents = sorted({p for p, _ in latent_edges}
                     | {c for _, c in latent_edges} | set(leaf_map))
    nodes = [NodeSpec(z, dim, "latent") for z in latents]
    edges = list(latent_edges)
    leaves = sorted({x for xs in leaf_map.values() for x in xs})
    nodes += [NodeSpec(x, dim, "observed") for x in leaves]
    for z, xs in leaf_map.items():
        edges += [(z, x) for x in xs]
    return GraphSpec(nodes, edges, seed=seed)


def builtin_graph(name: str, seed: int = 0) -> GraphSpec:
    """Benchmark hierarchies used by the reproduction experiments.

    balanced-tree: two latents under a root, two leaves each.
    v-structure:   like balanced-tree but the middle leaf has both parents.
    unbalanced-tree: one branch is a level deeper than the other.
    double-v:      two branches of three leaves sharing a third co-parented
                   latent (the worked search-schedule example).
    wide-tree:     two latents with three leaves each.
    deep-tree:     three latent levels over seven leaves.
    """
    if name == "balanced-tree":
        return _tree_spec([("z1", "z2"), ("z1", "z3")],
                          {"z2": ["x1", "x2"], "z3": ["x3", "x4"]}, seed=seed)
    if name == "v-structure":
        return _tree_spec([("z1", "z2"), ("z1", "z3")],
                          {"z2": ["x1", "x2", "x3"],
                           "z3": ["x3", "x4", "x5"]}, seed=seed)
    if name == "unbalanced-tree":
        return _tree_spec([("z1", "z2"), ("z1", "z3"), ("z2", "z4")],
                          {"z2": ["x3"], "z4": ["x1", "x2"],
                           "z3": ["x4", "x5"]}, seed=seed)
    if name == "double-v":
        return _tree_spec(
            [("z1", "z2"), ("z1", "z3"), ("z2", "z4"), ("z3", "z4")],
            {"z2": ["x1", "x2", "x3"], "z3": ["x7", "x8", "x9"],
             "z4": ["x4", "x5", "x6"]}, seed=seed)
    if name == "wide-tree":
        return _tree_spec([("z1", "z2"), ("z1", "z3")],
                          {"z2": ["x1", "x2", "x3"],
                           "z3": ["x4", "x5", "x6"]}, seed=seed)
    if name == "deep-tree":
        return _tree_spec(
            [("z1", "z2"), ("z1", "z3"), ("z2", "z4"), ("z2", "z5")],
            {"z4": ["x1", "x2"], "z5": ["x3", "x4"],
             "z3": ["x5", "x6", "x7"]}, seed=seed)
    raise KeyError(f"unknown builtin graph {name!r}")


BUILTIN_GRAPHS = ("balanced-tree", "v-structure", "unbalanced-tree",
                  "double-v", "wide-tree", "deep-tree")


def _canonical_form(children_of, node, leaves, memo):
    if node in memo:
        return memo[node]
    kids = children_of(node)
    if not kids:
        form = ("leaf", node) if node in leaves else ("leaf?", node)
    else:
        form = ("node", tuple(sorted(_canonical_form(children_of, k, leaves,
                                                     memo) for k in kids)))
    memo[node] = form
    return form


def graphs_isomorphic(found: DiscoveredGraph, spec: GraphSpec) -> bool:
    """Structural equality with observed labels fixed and latents anonymous."""
    leaves = set(spec.observed_ids())
    if set(found.leaf_ids()) - {d["id"] for d in found.dropped} != leaves \
            and set(found.leaf_ids()) != leaves:
        return False
    if len(found.nodes) != len(spec.nodes) or \
            len(found.edges) != len(spec.edges):
        return False
    memo_f, memo_s = {}, {}
    roots_f = sorted(n.id for n in found.nodes if not found.parents(n.id))
    roots_s = sorted(n.id for n in spec.nodes if not spec.parents(n.id))
    forms_f = sorted(_canonical_form(found.children, r, leaves, memo_f)
                     for r in roots_f)
    forms_s = sorted(_canonical_form(spec.children, r, leaves, memo_s)
                     for r in roots_s)
    return forms_f == forms_s


def match_latents(found: DiscoveredGraph, spec: GraphSpec) -> dict[str, str]:
    """Map discovered latent ids to spec latent ids by leaf-descendant sets.

    Only meaningful when the graphs are isomorphic; unmatched ids are
    omitted.
    """
    def leaf_set(children_of, node):
        kids = children_of(node)
        if not kids:
            return frozenset([node])
        return frozenset().union(*(leaf_set(children_of, k) for k in kids))

    spec_by_leaves = {}
    for z in spec.latent_ids():
        spec_by_leaves.setdefault(leaf_set(spec.children, z), z)
    mapping = {}
    for node in found.nodes:
        if found.children(node.id):
            key = leaf_set(found.children, node.id)
            if key in spec_by_leaves:
                mapping[node.id] = spec_by_leaves[key]
    return mapping


# ---------------------------------------------------------------------------
# experiments


def basis_identifiability_run(dims: tuple[int, int, int], n: int,
                              settings: TrainSettings, seed: int) -> dict:
    """One seed of the two-view benchmark: generate, fit, score.

    The estimator uses the generator's true partition widths; scores are
    kernel R^2 for predicting the true latent from the extracted one, plus
    the leakage score predicting the extracted latent from the true private
    factor.
    """
    d_z, d_s1, d_s2 = dims
    data_cfg = BasisSyntheticConfig(d_z, d_s1, d_s2, seed=seed)
    table = sample_basis_synthetic(data_cfg, n, seed=derive_seed(seed, "samples"))
    cfg = settings.basis_config(d_z + d_s1, d_z + d_s2, d_z, d_s1, d_s2, seed)
    fit = fit_basis(table.get("v1"), table.get("v2"), cfg)
    return {
        "seed": seed,
        "r2": kernel_r2(fit.z_hat, table.get("z")).value,
        "s1_leakage": kernel_r2(table.get("s1"), fit.z_hat).value,
        "loss": fit.final_loss,
    }


def individual_baseline_run(dims: tuple[int, int, int], n: int,
                            settings: TrainSettings, seed: int) -> dict:
    """One seed of the per-view (individual-invertibility) baseline."""
    d_z, d_s1, d_s2 = dims
    data_cfg = BasisSyntheticConfig(d_z, d_s1, d_s2, seed=seed)
    table = sample_basis_synthetic(data_cfg, n, seed=derive_seed(seed, "samples"))
    cfg = settings.basis_config(d_z + d_s1, d_z + d_s2, d_z, d_s1, d_s2, seed)
    fit = fit_individual_baseline(table.get("v1"), table.get("v2"), cfg)
    return {
        "seed": seed,
        "r2": kernel_r2(fit.z_hat, table.get("z")).value,
        "loss": fit.final_loss,
    }


def aggregate(per_seed: list[dict], key: str = "r2") -> dict:
    values = np.array([r[key] for r in per_seed], dtype=float)
    return {"mean": float(values.mean()), "std": float(values.std()),
            "values": values.tolist()}


def stage1_estimates(table: SampleTable, observed_ids: list[str],
                     search_cfg: SearchConfig) -> list[tuple[str, np.ndarray]]:
    """The per-variable latent estimates of one search iteration, keyed by
    which variable served as the first view (the pairwise-table rows)."""
    from .search import ActiveVariable, estimate_parents

    act = [ActiveVariable(i, table.get(i), "observed")
           for i in sorted(observed_ids)]
    d_z = search_cfg.latent_dim or 2
    ptab = estimate_parents(act, search_cfg, d_z)
    return [(child, ests[0].samples)
            for child, ests in sorted(ptab.entries.items())]


def pairwise_experiment(graph_name: str, n: int, search_cfg: SearchConfig,
                        data_seed: int = 0) -> PredictionMatrix:
    """Stage-1 estimates on a benchmark graph, scored pairwise."""
    spec = builtin_graph(graph_name, seed=data_seed)
    table = sample_scm(random_scm(spec), n, seed=derive_seed(data_seed, "scm"))
    estimates = stage1_estimates(table, spec.observed_ids(), search_cfg)
    return pairwise_matrix(estimates, split_seed=derive_seed(data_seed, "eval"))


def discovery_experiment(spec: GraphSpec, n: int, search_cfg: SearchConfig,
                         data_seed: int = 0) -> dict:
    """Full search on synthetic data from a spec, scored against the truth."""
    if validate_spec(spec):
        raise ValueError("spec violates the structural conditions")
    table = sample_scm(random_scm(spec), n, seed=derive_seed(data_seed, "scm"))
    graph = discover(table, spec.observed_ids(), search_cfg)
    iso = graphs_isomorphic(graph, spec)
    latent_scores = {}
    if iso:
        for found_id, true_id in match_latents(graph, spec).items():
            latent_scores[true_id] = kernel_r2(
                graph.node(found_id).samples, table.get(true_id)).value
    return {"graph": graph, "isomorphic": iso, "fits": graph.n_basis_fits,
            "latent_r2": latent_scores,
            "iterations": [r["active"] for r in graph.iterations]}


def samplesize_sweep(sizes: list[int], seeds: list[int],
                     settings: TrainSettings,
                     dims: tuple[int, int, int] = (2, 2, 2)) -> dict:
    """Basis-model scores across training-set sizes (mean over seeds)."""
    per_size = []
    for n in sizes:
        runs = [basis_identifiability_run(dims, n, settings, seed)
                for seed in seeds]
        per_size.append({"n": n, **aggregate(runs)})
    return {"sizes": sizes, "results": per_size}


# ---------------------------------------------------------------------------
# artifact IO


def export_dot(graph: DiscoveredGraph, path: str | Path) -> None:
    """Deterministic DOT rendering: sorted nodes and edges, one per line."""
    lines = ["digraph discovered {"]
    for node in sorted(graph.nodes, key=lambda n: n.id):
        lines.append(f'  "{node.id}" [label="{node.id}:{node.dim}:'
                     f'{node.level}"];')
    for edge in sorted(graph.edges, key=lambda e: (e.parent, e.child)):
        lines.append(f'  "{edge.parent}" -> "{edge.child}";')
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n")


def ingest_csv(path: str | Path,
               grouping: dict[str, str]) -> SampleTable:
    """Load a numeric CSV and group columns into observed variables.

    ``grouping`` maps a column-name prefix to a variable id; each variable
    gets every column whose name starts with its prefix (longest prefix
    wins). Rows containing non-numeric cells are dropped and counted in a
    log message. Columns matching no prefix are ignored.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")

    by_var: dict[str, list[int]] = {var: [] for var in grouping.values()}
    for idx, col in enumerate(header):
        best = None
        for prefix, var in grouping.items():
            if col.startswith(prefix):
                if best is None or len(prefix) > len(best[0]):
                    best = (prefix, var)
        if best is not None:
            by_var[best[1]].append(idx)
    missing = sorted(v for v, cols in by_var.items() if not cols)
    if missing:
        raise ValueError(f"{path}: no columns matched prefixes for {missing}")

    parsed, dropped = [], 0
    for row in rows:
        try:
            parsed.append([float(row[i]) for cols in by_var.values()
                           for i in cols])
        except (ValueError, IndexError):
            dropped += 1
    if not parsed:
        raise ValueError(f"{path}: all {dropped} rows dropped as non-numeric")
    if dropped:
        log.warning("%s: dropped %d of %d rows with non-numeric cells",
                    path, dropped, len(rows))
    data = np.asarray(parsed)
    columns, off = {}, 0
    for var, cols in by_var.items():
        columns[var] = data[:, off:off + len(cols)]
        off += len(cols)
    return from_columns(columns)
