"""Density clustering on the reduced embedding space.

HDBSCAN is implemented from first principles: core distances, a Prim MST
under mutual reachability, a condensed single-linkage hierarchy with a
minimum-cluster-size gate, per-cluster stability
S(C) = sum_j (lambda_out(x_j, C) - lambda_birth(C)) with lambda = 1/epsilon,
and excess-of-mass selection over the hierarchy. Spherical k-means and a
diagonal-covariance GMM serve as non-rejecting baselines, with the silhouette
score for k selection.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError

_EPS_FLOOR = 1e-12  # epsilon clamp so lambda = 1/epsilon stays finite


@dataclass(frozen=True)
class MstEdge:
    a: int
    b: int
    weight: float


@dataclass
class CondensedNode:
    id: int
    parent: int | None
    lambda_birth: float
    lambda_death: float = 0.0
    # direct fall-outs: (point index, lambda at which it left this cluster)
    points: list[tuple[int, float]] = field(default_factory=list)
    children: list[int] = field(default_factory=list)
    # lambda at which this node split into `children` (0 if it never split)
    lambda_split: float = 0.0


@dataclass
class ClusterModel:
    algorithm: str  # "hdbscan" | "km" | "gmm"
    labels: np.ndarray
    clusters: list[tuple[int, int, float]]  # (id, member count, stability)
    params: dict
    ref_coords: np.ndarray | None = None
    core: np.ndarray | None = None
    mst: list[MstEdge] | None = None
    condensed: dict[int, CondensedNode] | None = None
    cluster_birth: dict[int, float] | None = None
    centroids: np.ndarray | None = None

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


def _pairwise(X: np.ndarray) -> np.ndarray:
    # exact differences (not the Gram-matrix identity, which loses ~1e-10
    # to cancellation); chunked to bound peak memory at large n
    n, d = X.shape
    D = np.empty((n, n))
    chunk = max(1, (1 << 22) // max(1, n * d))
    for s in range(0, n, chunk):
        diff = X[s:s + chunk, None, :] - X[None, :, :]
        D[s:s + chunk] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return D


def core_distances(X: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance from each point to its min_samples-th nearest neighbor."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if not 0 < min_samples < n:
        raise ValidationError(f"need 0 < min_samples < n (got {min_samples}, n={n})")
    D = _pairwise(X)
    np.fill_diagonal(D, np.inf)
    part = np.partition(D, min_samples - 1, axis=1)
    return part[:, min_samples - 1]


def build_mst(X: np.ndarray, core: np.ndarray) -> list[MstEdge]:
    """Prim MST of the complete mutual-reachability graph.

    d_mr(i, j) = max(core_i, core_j, d(i, j)).
    """
    X = np.asarray(X, dtype=float)
    core = np.asarray(core, dtype=float)
    n = X.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    best_from = np.zeros(n, dtype=np.int64)
    edges: list[MstEdge] = []
    current = 0
    in_tree[0] = True
    for _ in range(n - 1):
        d = np.sqrt(np.maximum(np.sum((X - X[current]) ** 2, axis=1), 0.0))
        mr = np.maximum(np.maximum(d, core), core[current])
        closer = mr < best
        best[closer] = mr[closer]
        best_from[closer] = current
        best[in_tree] = np.inf
        nxt = int(np.argmin(best))
        edges.append(MstEdge(a=int(best_from[nxt]), b=nxt, weight=float(best[nxt])))
        in_tree[nxt] = True
        current = nxt
    return edges


def _single_linkage(mst: list[MstEdge], n: int):
    """Union-find agglomeration of MST edges in ascending weight order.

    Returns (children, deltas): node ids 0..n-1 are points; node n+i is the
    merge made by the i-th edge, with children (left, right) and merge
    distance epsilon.
    """
    order = sorted(range(len(mst)), key=lambda e: mst[e].weight)
    parent = list(range(2 * n - 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    children: dict[int, tuple[int, int]] = {}
    eps: dict[int, float] = {}
    nxt = n
    for e in order:
        edge = mst[e]
        ra, rb = find(edge.a), find(edge.b)
        children[nxt] = (ra, rb)
        eps[nxt] = edge.weight
        parent[ra] = parent[rb] = nxt
        nxt += 1
    return children, eps


def condense_tree(mst: list[MstEdge], min_cluster_size: int,
                  n: int) -> dict[int, CondensedNode]:
    """Condense the single-linkage dendrogram with a size gate.

    Splits where one side is smaller than min_cluster_size are treated as
    points falling out of the surviving cluster; true splits create child
    clusters born at the split density.
    """
    if min_cluster_size < 2:
        raise ValidationError("min_cluster_size must be >= 2")
    children, eps = _single_linkage(mst, n)
    sizes = np.ones(2 * n - 1, dtype=np.int64)
    for node in range(n, 2 * n - 1):
        l, r = children[node]
        sizes[node] = sizes[l] + sizes[r]

    def leaves(node: int) -> list[int]:
        out, stack = [], [node]
        while stack:
            v = stack.pop()
            if v < n:
                out.append(v)
            else:
                stack.extend(children[v])
        return out

    root_sl = 2 * n - 2
    root_lambda = 1.0 / max(eps[root_sl], _EPS_FLOOR) if n > 1 else 0.0
    nodes: dict[int, CondensedNode] = {
        0: CondensedNode(id=0, parent=None, lambda_birth=root_lambda)
    }
    next_id = 1
    # stack entries: (sl node, condensed cluster id it belongs to)
    stack = [(root_sl, 0)]
    while stack:
        sl, cid = stack.pop()
        node = nodes[cid]
        if sl < n:
            # singleton cluster remnant: the point falls out at its birth
            node.points.append((sl, node.lambda_birth))
            node.lambda_death = max(node.lambda_death, node.lambda_birth)
            continue
        lam = 1.0 / max(eps[sl], _EPS_FLOOR)
        l, r = children[sl]
        big = [c for c in (l, r) if sizes[c] >= min_cluster_size]
        small = [c for c in (l, r) if sizes[c] < min_cluster_size]
        if len(big) == 2:
            node.lambda_split = lam
            node.lambda_death = max(node.lambda_death, lam)
            for c in (l, r):
                child = CondensedNode(id=next_id, parent=cid, lambda_birth=lam)
                nodes[next_id] = child
                node.children.append(next_id)
                stack.append((c, next_id))
                next_id += 1
        elif len(big) == 1:
            for c in small:
                for pt in leaves(c):
                    node.points.append((pt, lam))
            node.lambda_death = max(node.lambda_death, lam)
            stack.append((big[0], cid))
        else:
            for c in (l, r):
                for pt in leaves(c):
                    node.points.append((pt, lam))
            node.lambda_death = max(node.lambda_death, lam)
    return nodes


def subtree_points(nodes: dict[int, CondensedNode], cid: int) -> list[tuple[int, float]]:
    """All (point, lambda it left cluster `cid`) pairs, capping descendants'
    points at the split density where they left `cid`."""
    out = list(nodes[cid].points)
    stack = [(child, nodes[cid].lambda_split) for child in nodes[cid].children]
    while stack:
        c, cap = stack.pop()
        for pt, _ in nodes[c].points:
            out.append((pt, cap))
        for g in nodes[c].children:
            stack.append((g, cap))
    return out


def stability(nodes: dict[int, CondensedNode], cid: int) -> float:
    """S(C) = sum over members of (lambda_out - lambda_birth)."""
    birth = nodes[cid].lambda_birth
    return float(sum(lam - birth for _, lam in subtree_points(nodes, cid)))


def _eom_select(nodes: dict[int, CondensedNode]) -> list[int]:
    """Excess-of-mass selection: a parent wins on S(parent) >= sum of its
    selected descendants' scores (ties prefer the parent)."""
    stab = {cid: stability(nodes, cid) for cid in nodes}
    selected: dict[int, list[int]] = {}
    score: dict[int, float] = {}

    def visit(cid: int):
        for c in nodes[cid].children:
            visit(c)
        child_score = sum(score[c] for c in nodes[cid].children)
        if not nodes[cid].children or stab[cid] >= child_score:
            selected[cid] = [cid]
            score[cid] = stab[cid]
        else:
            selected[cid] = [s for c in nodes[cid].children for s in selected[c]]
            score[cid] = child_score

    visit(0)
    return selected[0]


def condense_and_extract(mst: list[MstEdge], min_cluster_size: int,
                         X: np.ndarray | None = None,
                         core: np.ndarray | None = None) -> ClusterModel:
    """Condensed-tree construction plus excess-of-mass cluster selection."""
    n = len(mst) + 1
    nodes = condense_tree(mst, min_cluster_size, n)
    chosen = _eom_select(nodes)
    labels = np.full(n, -1, dtype=np.int64)
    clusters: list[tuple[int, int, float]] = []
    birth: dict[int, float] = {}
    for cid in sorted(chosen):
        members = [pt for pt, _ in subtree_points(nodes, cid)]
        if len(members) < min_cluster_size:
            continue  # degenerate remnant, treat as noise
        labels[members] = cid
        clusters.append((cid, len(members), stability(nodes, cid)))
        birth[cid] = nodes[cid].lambda_birth
    return ClusterModel(
        algorithm="hdbscan",
        labels=labels,
        clusters=clusters,
        params={"min_cluster_size": min_cluster_size},
        ref_coords=None if X is None else np.asarray(X, dtype=float),
        core=None if core is None else np.asarray(core, dtype=float),
        mst=mst,
        condensed=nodes,
        cluster_birth=birth,
    )


def hdbscan_fit(X: np.ndarray, min_cluster_size: int = 25,
                min_samples: int | None = None) -> ClusterModel:
    """core distances -> mutual-reachability MST -> condense and select."""
    X = np.asarray(X, dtype=float)
    if min_samples is None:
        min_samples = min_cluster_size  # convention: tie to the size gate
    min_samples = min(min_samples, X.shape[0] - 1)
    core = core_distances(X, min_samples)
    mst = build_mst(X, core)
    model = condense_and_extract(mst, min_cluster_size, X=X, core=core)
    model.params["min_samples"] = min_samples
    return model


def assign_new(model: ClusterModel, Y: np.ndarray) -> np.ndarray:
    """Label new points by the density at which they would join the MST.

    Each point inherits its nearest reference point's cluster when the
    implied join density 1/max(d, core_nearest) clears that cluster's birth
    density; otherwise it is noise.
    """
    if model.algorithm != "hdbscan":
        raise ValidationError("assign_new requires an hdbscan model")
    Y = np.asarray(Y, dtype=float)
    ref = model.ref_coords
    if Y.ndim != 2 or Y.shape[1] != ref.shape[1]:
        raise DimensionError(f"expected m x {ref.shape[1]} coords, got {Y.shape}")
    out = np.full(Y.shape[0], -1, dtype=np.int64)
    for i, y in enumerate(Y):
        d = np.sqrt(np.maximum(np.sum((ref - y) ** 2, axis=1), 0.0))
        j = int(np.argmin(d))
        lab = int(model.labels[j])
        if lab == -1:
            continue
        lam_join = 1.0 / max(d[j], model.core[j], _EPS_FLOOR)
        if lam_join >= model.cluster_birth[lab]:
            out[i] = lab
    return out


def _kmeanspp_init(X: np.ndarray, k: int, rng: np.random.Generator,
                   dist_fn) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    for _ in range(k - 1):
        d2 = np.min(
            np.stack([dist_fn(X, c) for c in centers], axis=1), axis=1
        ) ** 2
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(n)])
            continue
        centers.append(X[rng.choice(n, p=d2 / total)])
    return np.stack(centers)


def spherical_kmeans(X: np.ndarray, k: int, seed: int = 0,
                     max_iter: int = 300) -> ClusterModel:
    """Lloyd iterations under cosine distance on L2-normalized rows."""
    X = np.asarray(X, dtype=float)
    if k < 1:
        raise ValidationError("k must be >= 1")
    norms = np.linalg.norm(X, axis=1)
    if (norms == 0).any():
        raise ValidationError("spherical k-means requires non-zero rows")
    Xn = X / norms[:, None]
    rng = np.random.default_rng(seed)

    def cos_dist(A, c):
        return 1.0 - A @ c

    C = _kmeanspp_init(Xn, k, rng, cos_dist)
    C = C / np.linalg.norm(C, axis=1)[:, None]
    labels = np.full(X.shape[0], -1, dtype=np.int64)
    for _ in range(max_iter):
        sims = Xn @ C.T
        new_labels = np.argmax(sims, axis=1)
        for c in range(k):
            mask = new_labels == c
            if not mask.any():
                # reseed empty cluster from the overall worst-fit point
                far = int(np.argmin(np.max(sims, axis=1)))
                C[c] = Xn[far]
                new_labels[far] = c
                continue
            m = Xn[mask].mean(axis=0)
            nm = np.linalg.norm(m)
            C[c] = m / nm if nm > 0 else C[c]
        if (new_labels == labels).all():
            break
        labels = new_labels
    counts = [(c, int((labels == c).sum()), 0.0) for c in range(k)]
    return ClusterModel(
        algorithm="km", labels=labels, clusters=counts,
        params={"k": k, "seed": seed}, centroids=C, ref_coords=X,
    )


def gmm_fit(X: np.ndarray, k: int, seed: int = 0, max_iter: int = 200,
            tol: float = 1e-6) -> ClusterModel:
    """Diagonal-covariance EM with k-means initialization; hard labels by
    maximum responsibility."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if k < 1 or n <= k:
        raise ValidationError(f"need 1 <= k < n (got k={k}, n={n})")
    rng = np.random.default_rng(seed)

    def euc_dist(A, c):
        return np.sqrt(np.maximum(np.sum((A - c) ** 2, axis=1), 0.0))

    mu = _kmeanspp_init(X, k, rng, euc_dist)
    # short Lloyd refinement for the initial means
    for _ in range(10):
        d2 = np.sum((X[:, None, :] - mu[None]) ** 2, axis=2)
        lab = np.argmin(d2, axis=1)
        for c in range(k):
            if (lab == c).any():
                mu[c] = X[lab == c].mean(axis=0)
    var_floor = 1e-6 * max(X.var(), 1e-12)
    var = np.full((k, d), max(X.var(axis=0).mean(), var_floor))
    pi = np.full(k, 1.0 / k)
    prev_ll = -np.inf
    log_liks: list[float] = []
    reseeded = set()
    for _ in range(max_iter):
        log_prob = (
            -0.5 * np.sum(np.log(2 * np.pi * var), axis=1)[None, :]
            - 0.5 * np.sum((X[:, None, :] - mu[None]) ** 2 / var[None], axis=2)
            + np.log(pi)[None, :]
        )
        mx = log_prob.max(axis=1, keepdims=True)
        lse = mx[:, 0] + np.log(np.exp(log_prob - mx).sum(axis=1))
        resp = np.exp(log_prob - lse[:, None])
        ll = float(lse.sum())
        log_liks.append(ll)
        if ll - prev_ll < tol and np.isfinite(prev_ll):
            break
        prev_ll = ll
        nk = resp.sum(axis=0)
        for c in range(k):
            if nk[c] < 1e-10:
                if c in reseeded:
                    raise ValidationError(f"GMM component {c} collapsed twice")
                reseeded.add(c)
                far = int(np.argmin(lse))
                mu[c] = X[far]
                var[c] = max(X.var(axis=0).mean(), var_floor)
                pi[c] = 1.0 / n
                continue
            mu[c] = resp[:, c] @ X / nk[c]
            var[c] = np.maximum(resp[:, c] @ (X - mu[c]) ** 2 / nk[c], var_floor)
            pi[c] = nk[c] / n
        pi = pi / pi.sum()
    labels = np.argmax(resp, axis=1).astype(np.int64)
    counts = [(c, int((labels == c).sum()), 0.0) for c in range(k)]
    model = ClusterModel(
        algorithm="gmm", labels=labels, clusters=counts,
        params={"k": k, "seed": seed}, centroids=mu, ref_coords=X,
    )
    model.params["log_likelihoods"] = log_liks
    return model


def silhouette(X: np.ndarray, labels) -> float:
    """Mean silhouette score over non-noise points."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    mask = labels != -1
    X, labels = X[mask], labels[mask]
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ValidationError("silhouette undefined for fewer than 2 clusters")
    D = _pairwise(X)
    scores = np.empty(len(X))
    for i in range(len(X)):
        own = labels == labels[i]
        n_own = own.sum()
        if n_own == 1:
            scores[i] = 0.0
            continue
        a = D[i, own].sum() / (n_own - 1)
        b = min(D[i, labels == c].mean() for c in uniq if c != labels[i])
        scores[i] = (b - a) / max(a, b)
    return float(scores.mean())


def save_cluster_model(model: ClusterModel, json_path, coords_path) -> None:
    """JSON for labels/clusters/params; binary sidecar for reference coords
    (8-byte header: uint32 n, uint32 k little-endian, then float32 rows)."""
    obj = {
        "algorithm": model.algorithm,
        "labels": model.labels.tolist(),
        "clusters": [[int(c), int(m), float(s)] for c, m, s in model.clusters],
        "params": {k: v for k, v in model.params.items() if k != "log_likelihoods"},
        "cluster_birth": (
            None if model.cluster_birth is None
            else {str(k): v for k, v in model.cluster_birth.items()}
        ),
        "core": None if model.core is None else model.core.tolist(),
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
    if model.ref_coords is not None:
        coords = np.ascontiguousarray(model.ref_coords, dtype="<f4")
        with open(coords_path, "wb") as fh:
            fh.write(struct.pack("<II", coords.shape[0], coords.shape[1]))
            fh.write(coords.tobytes())


def load_cluster_model(json_path, coords_path=None) -> ClusterModel:
    with open(json_path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    coords = None
    if coords_path is not None:
        with open(coords_path, "rb") as fh:
            n, k = struct.unpack("<II", fh.read(8))
            coords = np.frombuffer(fh.read(), dtype="<f4").reshape(n, k).astype(float)
    return ClusterModel(
        algorithm=obj["algorithm"],
        labels=np.array(obj["labels"], dtype=np.int64),
        clusters=[tuple(c) for c in obj["clusters"]],
        params=obj["params"],
        ref_coords=coords,
        core=None if obj["core"] is None else np.array(obj["core"]),
        cluster_birth=(
            None if obj["cluster_birth"] is None
            else {int(k): v for k, v in obj["cluster_birth"].items()}
        ),
    )
