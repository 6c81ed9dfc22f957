"""Morphological patch segmentation of spectrograms.

The spectrogram is treated as a single-channel image and clustered with a
k-means superpixel scheme: seeds start on a regular grid with spacing
S = sqrt(T*C/k), each cluster claims nearby cells by minimizing

    D = sqrt(d_val^2 + (d_spatial / S)^2 * m^2)

with d_val the log-energy difference, d_spatial the Euclidean grid distance
and m the compactness weight. After the iterations a connectivity pass
splits stray fragments off, merges those below a minimum size into the
adjacent patch with the longest shared boundary, and folds the smallest
leftover patches until at most k remain, so every returned patch is a
4-connected region and ids are dense.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.ndimage import gaussian_filter
from scipy.sparse.csgraph import connected_components

from . import binio
from .errors import DomainError, FormatError, InfeasibleError


@dataclass
class SegmentationConfig:
    phis: tuple = (400.0, 500.0, 600.0)
    tau_s: float = 7.5
    compactness: float = 10.0
    n_iters: int = 10
    sigma: float = 0.0

    def __post_init__(self):
        if any(p <= 0 for p in self.phis):
            raise DomainError("phis must be strictly positive")
        if self.tau_s <= 0:
            raise DomainError("tau_s must be positive")


@dataclass
class SegmentationMap:
    labels: np.ndarray
    n_patches: int
    scale_phi: float = 0.0

    @property
    def shape(self):
        return self.labels.shape


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def patch_count(duration_s, tau_s, phi):
    """Duration-adaptive patch count: round(min(duration, tau) * phi), >= 2."""
    if duration_s <= 0 or tau_s <= 0 or phi <= 0:
        raise DomainError("duration_s, tau_s and phi must all be positive")
    return max(2, _round_half_up(min(duration_s, tau_s) * phi))


def _seed_grid(t_dim, c_dim, k, step):
    """Regular seed grid with at most k and at least 2 seeds."""
    n_t = max(1, min(t_dim, _round_half_up(t_dim / step)))
    n_c = max(1, min(c_dim, _round_half_up(c_dim / step)))
    while n_t * n_c > k:
        if n_t >= n_c and n_t > 1:
            n_t -= 1
        elif n_c > 1:
            n_c -= 1
        else:
            n_t -= 1
    if n_t * n_c < 2:
        if t_dim >= c_dim:
            n_t = min(t_dim, 2)
        else:
            n_c = min(c_dim, 2)
    ts = (np.arange(n_t) + 0.5) * t_dim / n_t
    cs = (np.arange(n_c) + 0.5) * c_dim / n_c
    tt, cc = np.meshgrid(ts, cs, indexing="ij")
    return tt.ravel(), cc.ravel()


def _nudge_seeds(values, ct, cc):
    """Move each seed to the lowest-gradient cell in its 3x3 neighborhood."""
    gt, gc = np.gradient(values)
    grad = gt * gt + gc * gc
    t_dim, c_dim = values.shape
    out_t = np.empty_like(ct)
    out_c = np.empty_like(cc)
    for j in range(len(ct)):
        ti = min(int(ct[j]), t_dim - 1)
        ci = min(int(cc[j]), c_dim - 1)
        t0, t1 = max(ti - 1, 0), min(ti + 2, t_dim)
        c0, c1 = max(ci - 1, 0), min(ci + 2, c_dim)
        win = grad[t0:t1, c0:c1]
        flat = int(np.argmin(win))
        out_t[j] = t0 + flat // win.shape[1]
        out_c[j] = c0 + flat % win.shape[1]
    return out_t, out_c


def _label_components(labels):
    """4-connected components of a label image (same-label adjacency)."""
    t_dim, c_dim = labels.shape
    n = t_dim * c_dim
    idx = np.arange(n).reshape(t_dim, c_dim)
    same_h = labels[:, :-1] == labels[:, 1:]
    same_v = labels[:-1, :] == labels[1:, :]
    rows = np.concatenate([idx[:, :-1][same_h], idx[:-1, :][same_v]])
    cols = np.concatenate([idx[:, 1:][same_h], idx[1:, :][same_v]])
    graph = sparse.coo_matrix(
        (np.ones(len(rows), dtype=bool), (rows, cols)), shape=(n, n)
    )
    n_comp, comp = connected_components(graph, directed=False)
    return comp.reshape(t_dim, c_dim), n_comp


def _component_adjacency(comp, n_comp):
    """Shared-boundary length between adjacent components."""
    u = np.concatenate([comp[:, :-1].ravel(), comp[:-1, :].ravel()])
    v = np.concatenate([comp[:, 1:].ravel(), comp[1:, :].ravel()])
    diff = u != v
    u, v = u[diff], v[diff]
    lo = np.minimum(u, v).astype(np.int64)
    hi = np.maximum(u, v).astype(np.int64)
    keys, counts = np.unique(lo * n_comp + hi, return_counts=True)
    neighbors = [dict() for _ in range(n_comp)]
    for key, cnt in zip(keys, counts):
        a, b = divmod(int(key), n_comp)
        neighbors[a][b] = int(cnt)
        neighbors[b][a] = int(cnt)
    return neighbors


def _enforce_connectivity(labels, k, min_size):
    """Split fragments, merge small ones, and cap the patch count at k."""
    comp, n_comp = _label_components(labels)
    sizes = np.bincount(comp.ravel(), minlength=n_comp).astype(np.int64)
    first_pos = np.full(n_comp, comp.size, dtype=np.int64)
    np.minimum.at(first_pos, comp.ravel(), np.arange(comp.size))
    neighbors = _component_adjacency(comp, n_comp)

    parent = list(range(n_comp))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def boundary_by_root(root):
        agg = {}
        for nb, cnt in neighbors[root].items():
            nb_root = find(nb)
            if nb_root != root:
                agg[nb_root] = agg.get(nb_root, 0) + cnt
        return agg

    def merge(src, dst):
        parent[src] = dst
        sizes[dst] += sizes[src]
        first_pos[dst] = min(first_pos[dst], first_pos[src])
        for nb, cnt in neighbors[src].items():
            neighbors[dst][nb] = neighbors[dst].get(nb, 0) + cnt
        neighbors[src] = {}

    def best_neighbor(root):
        agg = boundary_by_root(root)
        if not agg:
            return None
        # longest shared boundary, ties resolved toward the earliest patch
        return min(agg.items(), key=lambda kv: (-kv[1], first_pos[kv[0]]))[0]

    live = set(range(n_comp))
    for root in sorted(live, key=lambda c: first_pos[c]):
        if find(root) != root or sizes[root] >= min_size:
            continue
        target = best_neighbor(root)
        if target is None:
            continue
        merge(root, target)
        live.discard(root)

    while len(live) > k:
        smallest = min(live, key=lambda c: (sizes[c], first_pos[c]))
        target = best_neighbor(smallest)
        if target is None:
            break
        merge(smallest, target)
        live.discard(smallest)

    roots = np.fromiter((find(c) for c in range(n_comp)), dtype=np.int64)
    cell_root = roots[comp]
    uniq, first_idx = np.unique(cell_root, return_index=True)
    order = np.argsort(first_idx)
    dense = np.empty(len(uniq), dtype=np.int32)
    dense[order] = np.arange(len(uniq), dtype=np.int32)
    out = dense[np.searchsorted(uniq, cell_root)]
    return out, len(uniq)


def slic(s, k, cfg):
    """Cluster a spectrogram into k morphological patches.

    Returns a SegmentationMap whose labels cover every cell, are dense in
    [0, n_patches) and 4-connected, with n_patches <= k.
    """
    values = np.asarray(s.frames, dtype=np.float64)
    t_dim, c_dim = values.shape
    if k < 2:
        raise DomainError(f"k must be at least 2, got {k}")
    if k > t_dim * c_dim:
        raise InfeasibleError(
            f"k={k} exceeds the {t_dim}x{c_dim}={t_dim * c_dim} cell grid"
        )
    if cfg.sigma > 0:
        values = gaussian_filter(values, cfg.sigma)

    step = math.sqrt(t_dim * c_dim / k)
    ct, cc = _seed_grid(t_dim, c_dim, k, step)
    ct, cc = _nudge_seeds(values, ct, cc)
    cv = values[ct.astype(int), cc.astype(int)]
    n_seeds = len(ct)

    spatial_w = (cfg.compactness / step) ** 2
    labels = np.full((t_dim, c_dim), -1, dtype=np.int32)
    t_coord = np.arange(t_dim, dtype=np.float64)[:, None]
    c_coord = np.arange(c_dim, dtype=np.float64)[None, :]
    flat_t = np.repeat(np.arange(t_dim, dtype=np.float64), c_dim)
    flat_c = np.tile(np.arange(c_dim, dtype=np.float64), t_dim)
    flat_v = values.ravel()
    win = max(1, int(math.ceil(2.0 * step)))

    for _ in range(cfg.n_iters):
        dist = np.full((t_dim, c_dim), np.inf)
        for j in range(n_seeds):
            ti, ci = int(round(ct[j])), int(round(cc[j]))
            t0, t1 = max(ti - win, 0), min(ti + win + 1, t_dim)
            c0, c1 = max(ci - win, 0), min(ci + win + 1, c_dim)
            if t0 >= t1 or c0 >= c1:
                continue
            dval = values[t0:t1, c0:c1] - cv[j]
            dsp2 = (t_coord[t0:t1] - ct[j]) ** 2 + (c_coord[:, c0:c1] - cc[j]) ** 2
            # squared form of D; the argmin is unchanged
            cand = dval * dval + dsp2 * spatial_w
            sub = dist[t0:t1, c0:c1]
            upd = cand < sub  # strict: ties stay with the lowest patch id
            sub[upd] = cand[upd]
            labels[t0:t1, c0:c1][upd] = j

        missing = labels < 0
        if missing.any():
            mt = np.nonzero(missing.ravel())[0]
            dval = flat_v[mt][:, None] - cv[None, :]
            dsp2 = (flat_t[mt][:, None] - ct[None, :]) ** 2 + (
                flat_c[mt][:, None] - cc[None, :]
            ) ** 2
            cand = dval * dval + dsp2 * spatial_w
            labels.ravel()[mt] = np.argmin(cand, axis=1)

        flat = labels.ravel()
        cnt = np.bincount(flat, minlength=n_seeds)
        sum_t = np.bincount(flat, weights=flat_t, minlength=n_seeds)
        sum_c = np.bincount(flat, weights=flat_c, minlength=n_seeds)
        sum_v = np.bincount(flat, weights=flat_v, minlength=n_seeds)
        live = cnt > 0
        ct[live] = sum_t[live] / cnt[live]
        cc[live] = sum_c[live] / cnt[live]
        cv[live] = sum_v[live] / cnt[live]

    min_size = max(1, int((t_dim * c_dim / k) / 4))
    out, n_patches = _enforce_connectivity(labels, k, min_size)
    return SegmentationMap(labels=out, n_patches=n_patches)


def multiscale_segment(s, cfg):
    """Segment a spectrogram once per phi in cfg.phis."""
    maps = []
    for phi in cfg.phis:
        k = patch_count(s.duration_s, cfg.tau_s, phi)
        seg = slic(s, k, cfg)
        seg.scale_phi = float(phi)
        maps.append(seg)
    return maps


def write_segmentation(path, seg, k):
    header = {
        "T": int(seg.labels.shape[0]),
        "C": int(seg.labels.shape[1]),
        "k": int(k),
        "phi": float(seg.scale_phi),
    }
    binio.write_record(path, header, [(seg.labels, "<u4")])


def read_segmentation(path):
    header, payload = binio.read_record(path)
    for key in ("T", "C", "k", "phi"):
        if key not in header:
            raise FormatError(f"{path}: segmentation header missing '{key}'")
    t, c = int(header["T"]), int(header["C"])
    (labels,) = binio.split_payload(payload, [((t, c), "<u4")])
    labels = labels.astype(np.int32)
    return SegmentationMap(
        labels=labels,
        n_patches=int(labels.max()) + 1,
        scale_phi=float(header["phi"]),
    )
