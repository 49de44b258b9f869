"""Archive-side machinery behind the diversity objective.

Pipeline per generation: flatten archived images, project them to a few
principal directions, group them with a density clustering built on
mutual-reachability distances, then pick one medoid per cluster as the
representative the diversity objective compares against.

The clustering is a single-linkage walk over the minimum spanning tree
of mutual reachability d_mr(a, b) = max(core(a), core(b), d(a, b)),
where core(x) is the distance from x to its k_core-th nearest neighbor
(the point itself counts, so k_core=5 looks at 4 other points).  The
linkage hierarchy is cut top-down, discarding components below
min_cluster_size as noise; among the surviving components, clusters are
chosen by excess-of-mass stability so incidental splits inside one
dense group do not fragment it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NOISE = -1

_BLOCK = 512  # row block for streamed pairwise distance work


@dataclass
class ClusterModel:
    assignments: np.ndarray          # per-point cluster id, NOISE for outliers
    clusters: list[list[int]]        # member indices per cluster, sorted
    representatives: list[int] = field(default_factory=list)
    reduced_dim: int = 0
    min_cluster_size: int = 0

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


def reduce_dims(features, target_dim: int = 8, seed: int = 0) -> np.ndarray:
    """Deterministic linear projection onto the top principal directions.

    Data already at or below target_dim passes through unchanged.
    Degenerate directions project to zero-variance columns and are kept.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("features must be a non-empty 2-D array")
    n, d = X.shape
    if d <= target_dim:
        return X
    centered = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:target_dim]
    # fix sign per component so the projection is reproducible
    for row in comps:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    out = centered @ comps.T
    if out.shape[1] < target_dim:
        out = np.hstack([out, np.zeros((n, target_dim - out.shape[1]))])
    return out


def _core_distances(X: np.ndarray, k: int) -> np.ndarray:
    """Distance to the k-th nearest neighbor, self included, streamed."""
    n = X.shape[0]
    sq = np.einsum("ij,ij->i", X, X)
    core = np.empty(n)
    for lo in range(0, n, _BLOCK):
        hi = min(lo + _BLOCK, n)
        d2 = sq[lo:hi, None] + sq[None, :] - 2.0 * (X[lo:hi] @ X.T)
        np.maximum(d2, 0.0, out=d2)
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
        core[lo:hi] = np.sqrt(kth)
    return core


def _mst_edges(X: np.ndarray, core: np.ndarray) -> list[tuple[float, int, int]]:
    """Prim's algorithm on mutual reachability, one row at a time."""
    n = X.shape[0]
    sq = np.einsum("ij,ij->i", X, X)

    def mr_row(i: int) -> np.ndarray:
        d2 = sq[i] + sq - 2.0 * (X @ X[i])
        np.maximum(d2, 0.0, out=d2)
        return np.maximum(np.sqrt(d2), np.maximum(core[i], core))

    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best_w = mr_row(0)
    best_w[0] = np.inf
    best_from = np.zeros(n, dtype=np.int64)
    edges = []
    for _ in range(n - 1):
        j = int(np.argmin(best_w))
        edges.append((float(best_w[j]), int(best_from[j]), j))
        in_tree[j] = True
        row = mr_row(j)
        better = (row < best_w) & ~in_tree
        best_from[better] = j
        best_w[better] = row[better]
        best_w[j] = np.inf
    return edges


def _merge_forest(n: int, edges: list[tuple[float, int, int]]):
    """Single-linkage merge tree with equal-weight merges coalesced into
    one multi-child node, so ties (e.g. identical points) collapse in a
    single step instead of an arbitrary pairwise order.

    Returns (children, size, weight, root_id); node ids below n are leaf
    points, ``weight`` is the formation distance of each internal node.
    """
    edges = sorted(edges, key=lambda e: e[0])
    parent = list(range(n))            # union-find over points

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    top_node = {i: i for i in range(n)}    # point-set root -> current top node
    min_leaf = {i: i for i in range(n)}    # node id -> smallest leaf beneath it
    children: dict[int, list[int]] = {}
    size: dict[int, int] = {i: 1 for i in range(n)}
    weight: dict[int, float] = {}
    next_id = n
    i = 0
    while i < len(edges):
        w = edges[i][0]
        j = i
        while j < len(edges) and edges[j][0] == w:
            j += 1
        lparent: dict[int, int] = {}

        def lfind(a: int) -> int:
            lparent.setdefault(a, a)
            while lparent[a] != a:
                lparent[a] = lparent[lparent[a]]
                a = lparent[a]
            return a

        involved = set()
        for _, u, v in edges[i:j]:
            nu = top_node[find(u)]
            nv = top_node[find(v)]
            if nu == nv:
                continue
            involved.update((nu, nv))
            ra, rb = lfind(nu), lfind(nv)
            if ra != rb:
                lparent[max(ra, rb)] = min(ra, rb)
        groups: dict[int, list[int]] = {}
        for node in involved:
            groups.setdefault(lfind(node), []).append(node)
        for _, members in sorted(groups.items()):
            if len(members) < 2:
                continue
            members = sorted(members, key=lambda m: min_leaf[m])
            node_id = next_id
            next_id += 1
            children[node_id] = members
            size[node_id] = sum(size[m] for m in members)
            weight[node_id] = w
            min_leaf[node_id] = min_leaf[members[0]]
            base = find(min_leaf[members[0]])
            for m in members[1:]:
                parent[find(min_leaf[m])] = base
            top_node[find(base)] = node_id
        i = j
    return children, size, weight, top_node[find(0)]


def _subtree_points(node: int, children: dict[int, list[int]]) -> list[int]:
    out = []
    stack = [node]
    while stack:
        cur = stack.pop()
        if cur in children:
            stack.extend(children[cur])
        else:
            out.append(cur)
    return sorted(out)


def density_cluster(points, min_cluster_size: int = 5, k_core: int = 5) -> ClusterModel:
    """Mutual-reachability single-linkage clustering.

    Clusters are read off the pruned hierarchy by excess-of-mass
    stability, so a unimodal group survives its own incidental density
    fluctuations while genuinely separated groups split.  Fewer than
    min_cluster_size points is a degenerate state: every point stands as
    its own representative and nothing is noise.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("points must be a 2-D array")
    n = X.shape[0]
    if min_cluster_size < 2:
        raise ValueError("min_cluster_size must be at least 2")
    if n < min_cluster_size:
        model = ClusterModel(
            assignments=np.arange(n, dtype=np.int64),
            clusters=[[i] for i in range(n)],
            reduced_dim=int(X.shape[1]) if n else 0,
            min_cluster_size=min_cluster_size,
        )
        model.representatives = list(range(n))
        return model

    core = _core_distances(X, min(k_core, n))
    children, size, weight, root = _merge_forest(n, _mst_edges(X, core))

    def lam(node: int) -> float:
        w = weight[node]
        return np.inf if w == 0.0 else 1.0 / w

    def condense(root_birth: int) -> dict:
        """Follow each erosion chain from its birth component until it
        splits into two viable children or dies; small shards along the
        way fall out of the cluster at their level's lambda.  Iterative,
        so deep hierarchies cannot blow the recursion limit."""
        top = {"birth": root_birth, "stability": 0.0, "children": [],
               "death_remnant": None}
        stack = [(top, 0.0)]
        while stack:
            rec, birth_lambda = stack.pop()
            node = rec["birth"]
            stability = 0.0
            while True:
                # a live cluster has size >= min_cluster_size >= 2, so
                # its component node is always internal
                kids = children[node]
                big = [c for c in kids if size[c] >= min_cluster_size]
                if len(big) == 1:
                    shed = size[node] - size[big[0]]
                    stability += shed * (lam(node) - birth_lambda)
                    node = big[0]
                    continue
                stability += size[node] * (lam(node) - birth_lambda)
                rec["stability"] = stability
                if len(big) >= 2:
                    for c in big:
                        sub = {"birth": c, "stability": 0.0, "children": [],
                               "death_remnant": None}
                        rec["children"].append(sub)
                        stack.append((sub, lam(node)))
                else:
                    rec["death_remnant"] = node   # dissolved below min size
                break
        return top

    def select(tree: dict) -> list[list[int]]:
        """Excess-of-mass selection: a cluster beats its descendants when
        its own stability exceeds their combined selected mass.  The root
        is never selected while any viable split exists below it."""
        order = []
        stack = [tree]
        while stack:
            rec = stack.pop()
            order.append(rec)
            stack.extend(rec["children"])
        picks: dict[int, list[list[int]]] = {}
        mass: dict[int, float] = {}
        for rec in reversed(order):   # children always precede parents
            key = id(rec)
            if not rec["children"]:
                picks[key] = [_subtree_points(rec["birth"], children)]
                mass[key] = rec["stability"]
                continue
            sub_picks, sub_mass = [], 0.0
            for ch in rec["children"]:
                sub_picks.extend(picks[id(ch)])
                sub_mass += mass[id(ch)]
            if rec is not tree and rec["stability"] > sub_mass:
                picks[key] = [_subtree_points(rec["birth"], children)]
                mass[key] = rec["stability"]
            else:
                picks[key] = sub_picks
                mass[key] = sub_mass if rec is tree else max(sub_mass,
                                                             rec["stability"])
        return picks[id(tree)]

    tree = condense(root)
    if tree["children"]:
        clusters = select(tree)
    else:
        # the hierarchy never split: the root erodes to its death remnant
        # and everything it shed on the way down stays noise
        clusters = [_subtree_points(tree["death_remnant"], children)]
    clusters.sort(key=lambda m: m[0])

    assignments = np.full(n, NOISE, dtype=np.int64)
    for cid, members in enumerate(clusters):
        assignments[members] = cid
    model = ClusterModel(assignments=assignments, clusters=clusters,
                         reduced_dim=int(X.shape[1]),
                         min_cluster_size=min_cluster_size)
    model.representatives = representatives(model, X)
    return model


def representatives(model: ClusterModel, points) -> list[int]:
    """Medoid of each cluster: the member minimizing the summed distance
    to the other members, ties broken toward the lowest index."""
    X = np.asarray(points, dtype=np.float64)
    reps = []
    for members in model.clusters:
        if len(members) == 1:
            reps.append(members[0])
            continue
        sub = X[members]
        sums = np.zeros(len(members))
        for lo in range(0, len(members), _BLOCK):
            hi = min(lo + _BLOCK, len(members))
            d2 = (np.einsum("ij,ij->i", sub[lo:hi], sub[lo:hi])[:, None]
                  + np.einsum("ij,ij->i", sub, sub)[None, :]
                  - 2.0 * (sub[lo:hi] @ sub.T))
            np.maximum(d2, 0.0, out=d2)
            sums += np.sqrt(d2).sum(axis=0)
        reps.append(members[int(np.argmin(sums))])
    return reps


def refresh_representatives(archive, target_dim: int = 8,
                            min_cluster_size: int = 5, k_core: int = 5,
                            seed: int = 0):
    """Recompute the representative images for an archive.

    Small archives (fewer records than min_cluster_size) return every
    archived image, so early in a run the diversity objective compares
    against the whole archive.
    """
    records = archive.records
    if not records:
        return []
    if len(records) < min_cluster_size:
        return [r.image for r in records]
    X = np.stack([r.image.flat() for r in records])
    reduced = reduce_dims(X, target_dim=target_dim, seed=seed)
    model = density_cluster(reduced, min_cluster_size=min_cluster_size,
                            k_core=k_core)
    return [records[i].image for i in model.representatives]
