"""3D gray-level texture matrices (GLCM, GLRLM, GLSZM, NGTDM) and their 40 features.

Every matrix is built once per ROI by merging the 13 unique directions of the
26-voxel neighbourhood. Co-occurrence counts are kept separately for the three
neighbour distances (1, sqrt 2, sqrt 3) so the distance weighting rule is
applied only when the normalized GLCM is formed.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..quantization import QuantizedRoi

# first non-zero component positive: one representative per +/- pair
DIRECTIONS = tuple(d for d in itertools.product((-1, 0, 1), repeat=3) if d > (0, 0, 0))
NEIGHBOURS = tuple(d for d in itertools.product((-1, 0, 1), repeat=3) if d != (0, 0, 0))

GLCM_WEIGHTINGS = ("inverse", "none")

GLCM_FEATURES = (
    "Energy", "Contrast", "Correlation", "Homogeneity", "Variance",
    "SumAverage", "Entropy", "Dissimilarity", "AutoCorrelation",
)
GLRLM_FEATURES = (
    "SRE", "LRE", "GLN", "RLN", "RP", "LGRE", "HGRE",
    "SRLGE", "SRHGE", "LRLGE", "LRHGE", "GLV", "RLV",
)
GLSZM_FEATURES = (
    "SZE", "LZE", "GLN", "ZSN", "ZP", "LGZE", "HGZE",
    "SZLGE", "SZHGE", "LZLGE", "LZHGE", "GLV", "ZSV",
)
NGTDM_FEATURES = ("Coarseness", "Contrast", "Busyness", "Complexity", "Strength")

TEXTURE_FEATURES = tuple(
    [("GLCM", n) for n in GLCM_FEATURES]
    + [("GLRLM", n) for n in GLRLM_FEATURES]
    + [("GLSZM", n) for n in GLSZM_FEATURES]
    + [("NGTDM", n) for n in NGTDM_FEATURES]
)

COARSENESS_SENTINEL = 1e6


@dataclass(frozen=True, eq=False)
class TextureMatrices:
    """Unnormalized texture matrices of one quantized ROI.

    ``glcm_counts[k]`` holds symmetric co-occurrence counts for neighbours at
    squared distance ``k + 1``. ``glrlm`` and ``glszm`` are indexed
    ``[level - 1, length - 1]``.
    """

    levels: int
    voxel_count: int
    glcm_counts: np.ndarray
    glrlm: np.ndarray
    glszm: np.ndarray
    ngtdm_s: np.ndarray
    ngtdm_n: np.ndarray
    glcm_weighting: str = "inverse"

    def glcm(self):
        """Distance-weighted GLCM normalized to unit sum (all zeros if no pairs)."""
        if self.glcm_weighting == "inverse":
            weights = 1.0 / np.sqrt([1.0, 2.0, 3.0])
        else:
            weights = np.ones(3)
        p = np.tensordot(weights, self.glcm_counts.astype(np.float64), axes=1)
        total = p.sum()
        return p / total if total > 0 else p


@dataclass(frozen=True)
class TextureFeatureSet:
    values: dict
    degenerate: frozenset = field(default_factory=frozenset)

    def __getitem__(self, key):
        return self.values[key]

    def as_vector(self):
        return np.array([self.values[f"{fam}_{name}"] for fam, name in TEXTURE_FEATURES])


def _shifted(padded, d):
    nx, ny, nz = (s - 2 for s in padded.shape)
    dx, dy, dz = d
    return padded[1 + dx:1 + dx + nx, 1 + dy:1 + dy + ny, 1 + dz:1 + dz + nz]


def _line_keys(coords, d, dims):
    """Sort keys ordering voxels by (line along d, position along that line)."""
    t = np.full(coords[0].shape, np.iinfo(np.int64).max, dtype=np.int64)
    for c, dc, n in zip(coords, d, dims):
        if dc == 1:
            t = np.minimum(t, c)
        elif dc == -1:
            t = np.minimum(t, n - 1 - c)
    origin = [c - t * dc for c, dc in zip(coords, d)]
    line = np.ravel_multi_index(origin, dims)
    return line * max(dims) + t, t


def run_lengths(labels, d):
    """Gray level and length of every maximal run along direction ``d``."""
    padded = np.pad(labels, 1)
    centre = padded[1:-1, 1:-1, 1:-1]
    prev = _shifted(padded, tuple(-c for c in d))
    nxt = _shifted(padded, d)
    in_roi = centre > 0
    starts = np.nonzero(in_roi & (prev != centre))
    ends = np.nonzero(in_roi & (nxt != centre))
    key_s, t_s = _line_keys(starts, d, labels.shape)
    key_e, t_e = _line_keys(ends, d, labels.shape)
    os_ = np.argsort(key_s, kind="stable")
    oe = np.argsort(key_e, kind="stable")
    lengths = t_e[oe] - t_s[os_] + 1
    level = centre[starts][os_]
    return level, lengths


def _glcm_counts(padded, centre, levels):
    counts = np.zeros((3, levels, levels), dtype=np.int64)
    for d in DIRECTIONS:
        other = _shifted(padded, d)
        valid = (centre > 0) & (other > 0)
        code = (centre[valid].astype(np.int64) - 1) * levels + (other[valid] - 1)
        c = np.bincount(code, minlength=levels * levels).reshape(levels, levels)
        counts[sum(abs(x) for x in d) - 1] += c + c.T
    return counts


def _glrlm(labels, levels):
    runs = [run_lengths(labels, d) for d in DIRECTIONS]
    level = np.concatenate([r[0] for r in runs]).astype(np.int64)
    length = np.concatenate([r[1] for r in runs]).astype(np.int64)
    rmax = int(length.max())
    m = np.bincount((level - 1) * rmax + (length - 1), minlength=levels * rmax)
    return m.reshape(levels, rmax)


def zone_sizes(labels):
    """Level and voxel count of every 26-connected constant-level zone."""
    roi = labels > 0
    n = int(roi.sum())
    index = np.full(labels.shape, -1, dtype=np.int64)
    index[roi] = np.arange(n)
    padded_idx = np.pad(index, 1, constant_values=-1)
    padded = np.pad(labels, 1)
    rows, cols = [], []
    for d in DIRECTIONS:
        other = _shifted(padded, d)
        same = roi & (other == labels)
        rows.append(index[same])
        cols.append(_shifted(padded_idx, d)[same])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    graph = coo_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n, n))
    n_zones, comp = connected_components(graph, directed=False)
    sizes = np.bincount(comp, minlength=n_zones)
    zone_level = np.zeros(n_zones, dtype=np.int64)
    zone_level[comp] = labels[roi]
    return zone_level, sizes


def _glszm(labels, levels):
    zone_level, sizes = zone_sizes(labels)
    zmax = int(sizes.max())
    m = np.bincount((zone_level - 1) * zmax + (sizes - 1), minlength=levels * zmax)
    return m.reshape(levels, zmax)


def _ngtdm(padded, centre, levels):
    total = np.zeros(centre.shape, dtype=np.float64)
    count = np.zeros(centre.shape, dtype=np.int64)
    for d in NEIGHBOURS:
        other = _shifted(padded, d)
        total += other
        count += other > 0
    valid = (centre > 0) & (count > 0)
    lvl = centre[valid]
    diff = np.abs(lvl - total[valid] / count[valid])
    s = np.bincount(lvl - 1, weights=diff, minlength=levels)
    n = np.bincount(lvl - 1, minlength=levels).astype(np.int64)
    return s, n


def build_matrices(q: QuantizedRoi, glcm_weighting: str = "inverse") -> TextureMatrices:
    if glcm_weighting not in GLCM_WEIGHTINGS:
        raise ValueError(f"glcm_weighting must be one of {GLCM_WEIGHTINGS}")
    labels = np.asarray(q.labels, dtype=np.int64)
    padded = np.pad(labels, 1)
    centre = padded[1:-1, 1:-1, 1:-1]
    s, n = _ngtdm(padded, centre, q.levels)
    return TextureMatrices(
        levels=q.levels,
        voxel_count=q.voxel_count,
        glcm_counts=_glcm_counts(padded, centre, q.levels),
        glrlm=_glrlm(labels, q.levels),
        glszm=_glszm(labels, q.levels),
        ngtdm_s=s,
        ngtdm_n=n,
        glcm_weighting=glcm_weighting,
    )


# ------------------------------------------------------------------ features

def glcm_features(p):
    ng = p.shape[0]
    i, j = np.meshgrid(np.arange(1, ng + 1), np.arange(1, ng + 1), indexing="ij")
    out = {}
    degenerate = set()
    if p.sum() == 0:
        return {n: 0.0 for n in GLCM_FEATURES}, set(GLCM_FEATURES)
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    lv = np.arange(1, ng + 1)
    mu_x = float(lv @ px)
    mu_y = float(lv @ py)
    sd_x = float(np.sqrt(((lv - mu_x) ** 2) @ px))
    sd_y = float(np.sqrt(((lv - mu_y) ** 2) @ py))
    nz = p > 0
    out["Energy"] = float((p ** 2).sum())
    out["Contrast"] = float(((i - j) ** 2 * p).sum())
    if sd_x * sd_y > 0:
        out["Correlation"] = float((((i - mu_x) * (j - mu_y)) * p).sum() / (sd_x * sd_y))
    else:
        out["Correlation"] = 0.0
        degenerate.add("Correlation")
    out["Homogeneity"] = float((p / (1.0 + np.abs(i - j))).sum())
    out["Variance"] = float(((i - mu_x) ** 2 * p).sum())
    out["SumAverage"] = float(((i + j) * p).sum())
    out["Entropy"] = float(-(p[nz] * np.log2(p[nz])).sum())
    out["Dissimilarity"] = float((np.abs(i - j) * p).sum())
    out["AutoCorrelation"] = float((i * j * p).sum())
    return out, degenerate


def _length_matrix_features(m, names):
    """Shared formulas of the run-length and size-zone matrices.

    ``names`` maps the 13 features in the fixed order short, long, level
    nonuniformity, length nonuniformity, percentage, low/high level emphasis,
    the four joint emphases, level variance and length variance.
    """
    m = m.astype(np.float64)
    ng, nl = m.shape
    i = np.arange(1, ng + 1, dtype=np.float64)[:, None]
    j = np.arange(1, nl + 1, dtype=np.float64)[None, :]
    total = m.sum()
    voxels = (m * j).sum()
    p = m / total
    mu_i = (p * i).sum()
    mu_j = (p * j).sum()
    values = (
        (m / j ** 2).sum() / total,
        (m * j ** 2).sum() / total,
        (m.sum(axis=1) ** 2).sum() / total,
        (m.sum(axis=0) ** 2).sum() / total,
        total / voxels,
        (m / i ** 2).sum() / total,
        (m * i ** 2).sum() / total,
        (m / (i ** 2 * j ** 2)).sum() / total,
        (m * i ** 2 / j ** 2).sum() / total,
        (m * j ** 2 / i ** 2).sum() / total,
        (m * i ** 2 * j ** 2).sum() / total,
        (p * (i - mu_i) ** 2).sum(),
        (p * (j - mu_j) ** 2).sum(),
    )
    return {name: float(v) for name, v in zip(names, values)}


def ngtdm_features(s, n):
    s = np.asarray(s, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    degenerate = set()
    nvp = n.sum()
    if nvp == 0:
        out = {name: 0.0 for name in NGTDM_FEATURES}
        out["Coarseness"] = COARSENESS_SENTINEL
        return out, set(NGTDM_FEATURES)
    p = n / nvp
    present = p > 0
    lv = np.arange(1, len(p) + 1, dtype=np.float64)[present]
    pi = p[present]
    si = s[present]
    ngp = int(present.sum())
    ps = float(pi @ si)
    s_total = float(si.sum())
    di = lv[:, None] - lv[None, :]
    out = {}
    if ps > 0:
        out["Coarseness"] = 1.0 / ps
    else:
        out["Coarseness"] = COARSENESS_SENTINEL
        degenerate.add("Coarseness")
    if ngp > 1:
        out["Contrast"] = float((pi[:, None] * pi[None, :] * di ** 2).sum() / (ngp * (ngp - 1)) * s_total / nvp)
    else:
        out["Contrast"] = 0.0
        degenerate.add("Contrast")
    ip = lv * pi
    busy_den = float(np.abs(ip[:, None] - ip[None, :]).sum())
    if busy_den > 0:
        out["Busyness"] = ps / busy_den
    else:
        out["Busyness"] = 0.0
        degenerate.add("Busyness")
    psi = pi * si
    out["Complexity"] = float(
        (np.abs(di) * (psi[:, None] + psi[None, :]) / (pi[:, None] + pi[None, :])).sum() / nvp
    )
    if s_total > 0:
        out["Strength"] = float(((pi[:, None] + pi[None, :]) * di ** 2).sum() / s_total)
    else:
        out["Strength"] = 0.0
        degenerate.add("Strength")
    return out, degenerate


def texture_features(m: TextureMatrices) -> TextureFeatureSet:
    values = {}
    degenerate = set()
    glcm, bad = glcm_features(m.glcm())
    values.update({f"GLCM_{k}": v for k, v in glcm.items()})
    degenerate.update(f"GLCM_{k}" for k in bad)
    values.update({f"GLRLM_{k}": v for k, v in _length_matrix_features(m.glrlm, GLRLM_FEATURES).items()})
    values.update({f"GLSZM_{k}": v for k, v in _length_matrix_features(m.glszm, GLSZM_FEATURES).items()})
    ngtdm, bad = ngtdm_features(m.ngtdm_s, m.ngtdm_n)
    values.update({f"NGTDM_{k}": v for k, v in ngtdm.items()})
    degenerate.update(f"NGTDM_{k}" for k in bad)
    return TextureFeatureSet(values, frozenset(degenerate))
