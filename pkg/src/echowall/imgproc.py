"""Binary-mask utilities: thresholding, morphology, components, resizing,
and endocardial boundary tracing.

Frames are float arrays in [0, 1], masks are boolean arrays, and boundary
paths are (n, 2) integer arrays of (row, col) pixel coordinates ordered from
the basal-left endpoint through the apex to the basal-right endpoint.
"""

from __future__ import annotations

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import (
    AmbiguousCavityError,
    ConfigError,
    EmptyMaskError,
    GeometryError,
    ShapeError,
)

# 3x3 all-ones structuring element used for the opening post-processing.
OPEN_KERNEL = np.ones((3, 3), dtype=bool)

# 8-connectivity structure for wall components.
EIGHT_CONN = np.ones((3, 3), dtype=bool)
# 4-connectivity structure for background (cavity) components.
FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def binarize(prob_map: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold a probability map into a wall mask (inclusive: p >= t)."""
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must lie strictly in (0, 1), got {threshold}")
    return np.asarray(prob_map) >= threshold


def morphological_open(mask: np.ndarray) -> np.ndarray:
    """Opening with the 3x3 all-ones element: erosion followed by dilation.

    Pixels outside the image count as background for the erosion and never
    contribute to the dilation, so the operation never grows the wall at
    image edges.
    """
    mask = np.asarray(mask, dtype=bool)
    eroded = ndimage.binary_erosion(mask, structure=OPEN_KERNEL, border_value=0)
    return ndimage.binary_dilation(eroded, structure=OPEN_KERNEL, border_value=0)


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Keep only the largest 8-connected component of a mask.

    Ties are broken in favor of the component containing the smallest
    row-major pixel index.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMaskError("mask has no foreground pixels")
    labels, n = ndimage.label(mask, structure=EIGHT_CONN)
    if n == 1:
        return mask
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    best = np.flatnonzero(sizes == sizes.max())
    if len(best) > 1:
        # earliest first-occurrence in row-major order wins
        flat = labels.ravel()
        best = min(best, key=lambda k: int(np.argmax(flat == k)))
    else:
        best = best[0]
    return labels == best


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two masks; two empty masks count as 1.0."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def find_cavity(mask: np.ndarray) -> np.ndarray:
    """Locate the blood-pool cavity enclosed by the wall mask.

    Candidate cavities are 4-connected background components that touch no
    image border except possibly the bottom one (the horseshoe opening).
    Among candidates the one with the largest wall-adjacency count wins,
    which makes the choice robust to small background holes in noisy
    predictions. An exact tie between top candidates is an ambiguity error.
    """
    mask = np.asarray(mask, dtype=bool)
    bg = ~mask
    labels, n = ndimage.label(bg, structure=FOUR_CONN)
    if n == 0:
        raise GeometryError("mask has no background pixels at all")
    forbidden = set(labels[0, :].tolist()) | set(labels[:, 0].tolist()) | set(labels[:, -1].tolist())
    forbidden.discard(0)
    # background pixels 4-adjacent to a wall pixel
    near_wall = ndimage.binary_dilation(mask, structure=FOUR_CONN) & bg
    contact = np.bincount(labels[near_wall], minlength=n + 1)
    candidates = [k for k in range(1, n + 1) if k not in forbidden and contact[k] > 0]
    if not candidates:
        raise GeometryError("no identifiable cavity: every background region touches a side or top border")
    top = max(contact[k] for k in candidates)
    tied = [k for k in candidates if contact[k] == top]
    if len(tied) > 1:
        raise AmbiguousCavityError(
            f"{len(tied)} of {len(candidates)} candidate cavities tie with wall-adjacency {top}"
        )
    return labels == tied[0]


def _adjacent8(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1


def _rim_adjacency(rim_set: set) -> dict:
    adj = {}
    for r, c in rim_set:
        nb = [
            (r + dr, c + dc)
            for dr in (-1, 0, 1)
            for dc in (-1, 0, 1)
            if (dr, dc) != (0, 0) and (r + dr, c + dc) in rim_set
        ]
        adj[(r, c)] = sorted(nb)
    return adj


def _walk_all(adj: dict, start: tuple[int, int]) -> list[tuple[int, int]] | None:
    """Depth-first search for a simple path from ``start`` covering every rim
    pixel. The rim is a near-path graph, so the walk is effectively linear;
    branch points (thicker rim spots on noisy masks) are resolved by
    backtracking under a step budget. Neighbor preference: axis steps before
    diagonal ones, low-degree continuations first.
    """
    n = len(adj)
    budget = 60 * n + 200

    def options(p, visited):
        cand = [q for q in adj[p] if q not in visited]
        cand.sort(
            key=lambda q: (
                abs(q[0] - p[0]) + abs(q[1] - p[1]),  # 1 for axis, 2 for diagonal
                sum(1 for z in adj[q] if z not in visited),
                q,
            )
        )
        return cand

    path = [start]
    visited = {start}
    stack = [options(start, visited)]
    steps = 0
    while stack:
        steps += 1
        if steps > budget:
            return None
        if len(path) == n:
            return path
        cand = stack[-1]
        if cand:
            q = cand.pop(0)
            if q in visited:
                continue
            path.append(q)
            visited.add(q)
            stack.append(options(q, visited))
        else:
            visited.discard(path.pop())
            stack.pop()
    return None


def _walk_cycle(adj: dict) -> list[tuple[int, int]]:
    """Walk a closed degree-2 rim into its cycle order."""
    if any(len(v) != 2 for v in adj.values()):
        raise GeometryError("enclosed cavity rim is not a simple closed curve")
    start = min(adj)
    cycle = [start]
    prev, cur = None, start
    while True:
        a, b = adj[cur]
        nxt = a if a != prev else b
        if nxt == start:
            return cycle
        cycle.append(nxt)
        prev, cur = cur, nxt
        if len(cycle) > len(adj):
            raise GeometryError("enclosed cavity rim does not close into one cycle")


def _validate_chain(chain: list[tuple[int, int]]) -> None:
    if len(chain) < 3:
        raise GeometryError(f"boundary chain too short ({len(chain)} pixels)")
    if len(set(chain)) != len(chain):
        raise GeometryError("boundary chain revisits a pixel")
    for a, b in zip(chain, chain[1:]):
        if not _adjacent8(a, b):
            raise GeometryError(f"boundary chain breaks between {a} and {b}")


def extract_endocardial_boundary(mask: np.ndarray, cavity: np.ndarray | None = None) -> np.ndarray:
    """Order the wall pixels lining the cavity into the endocardial boundary.

    The rim is the set of wall pixels sharing an edge (4-adjacency) with the
    cavity; it is returned as a chain of 8-adjacent pixels running from the
    basal-left endpoint (bottom-most rim pixel on the left arm) through the
    apex to the basal-right endpoint. Accepts both the open-horseshoe case
    (cavity touching the bottom image border) and a fully enclosed cavity; in
    the enclosed case the chain is the rim arc passing through the apex
    between the two basal endpoints, excluding the bottom seal.

    Returns an (n, 2) int array of (row, col) coordinates.
    """
    mask = np.asarray(mask, dtype=bool)
    if cavity is None:
        cavity = find_cavity(mask)
    rim = mask & ndimage.binary_dilation(cavity, structure=FOUR_CONN)
    rim_set = {(int(r), int(c)) for r, c in zip(*np.nonzero(rim))}
    if len(rim_set) < 3:
        raise GeometryError(f"only {len(rim_set)} wall pixels line the cavity")
    adj = _rim_adjacency(rim_set)

    h, _w = mask.shape
    if cavity[h - 1, :].any():
        # open horseshoe: the rim is an open curve with free ends at the base
        ends = sorted((p for p, nb in adj.items() if len(nb) <= 1),
                      key=lambda p: (-p[0], p[1]))
        chain = None
        for start in ends:
            chain = _walk_all(adj, start)
            if chain is not None:
                break
        if chain is None:
            raise GeometryError("cavity rim cannot be ordered into a single chain")
    else:
        cycle = _walk_cycle(adj)
        chain = _cut_cycle_at_base(cycle, cavity)

    if chain[0][1] > chain[-1][1]:
        chain.reverse()
    _validate_chain(chain)
    return np.array(chain, dtype=np.intp)


def _cut_cycle_at_base(cycle: list[tuple[int, int]], cavity: np.ndarray) -> list[tuple[int, int]]:
    """Cut a closed rim cycle into the basal-left -> apex -> basal-right arc."""
    dedup = list(dict.fromkeys(cycle))
    ccol = float(np.nonzero(cavity)[1].mean())
    left = [p for p in dedup if p[1] < ccol]
    right = [p for p in dedup if p[1] >= ccol]
    if not left or not right:
        raise GeometryError("rim cycle lies entirely on one side of the cavity")
    bl = max(left, key=lambda p: (p[0], -p[1]))
    br = max(right, key=lambda p: (p[0], p[1]))
    i, j = dedup.index(bl), dedup.index(br)
    arc_a = dedup[i:] + dedup[: j + 1] if j < i else dedup[i : j + 1]
    k = len(dedup)
    arc_b_idx = [(j + t) % k for t in range((i - j) % k + 1)]
    arc_b = [dedup[t] for t in arc_b_idx]
    apex_row = min(p[0] for p in dedup)
    pick = arc_a if any(p[0] == apex_row for p in arc_a) else list(reversed(arc_b))
    return pick


def resize_bilinear(frame: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling.

    Output corners sample input corners exactly; a size-1 output axis samples
    position 0. Resizing to the identical size returns a bit-identical copy.
    """
    if out_w < 1 or out_h < 1:
        raise ConfigError(f"output size must be >= 1, got {out_w}x{out_h}")
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise ShapeError(f"expected a 2-d frame, got shape {frame.shape}")
    in_h, in_w = frame.shape
    pr = _corner_positions(out_h, in_h)
    pc = _corner_positions(out_w, in_w)
    r0 = np.floor(pr).astype(np.intp)
    c0 = np.floor(pc).astype(np.intp)
    r1 = np.minimum(r0 + 1, in_h - 1)
    c1 = np.minimum(c0 + 1, in_w - 1)
    fr = (pr - r0)[:, None]
    fc = (pc - c0)[None, :]
    top = frame[np.ix_(r0, c0)] * (1 - fc) + frame[np.ix_(r0, c1)] * fc
    bot = frame[np.ix_(r1, c0)] * (1 - fc) + frame[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bot * fr


def resize_nearest(mask: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Nearest-neighbor variant of :func:`resize_bilinear` for masks."""
    if out_w < 1 or out_h < 1:
        raise ConfigError(f"output size must be >= 1, got {out_w}x{out_h}")
    mask = np.asarray(mask)
    in_h, in_w = mask.shape
    # half-up rounding keeps the choice deterministic at exact midpoints
    rr = np.floor(_corner_positions(out_h, in_h) + 0.5).astype(np.intp)
    cc = np.floor(_corner_positions(out_w, in_w) + 0.5).astype(np.intp)
    return mask[np.ix_(np.minimum(rr, in_h - 1), np.minimum(cc, in_w - 1))]


def _corner_positions(n_out: int, n_in: int) -> np.ndarray:
    if n_out == 1:
        return np.zeros(1)
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def save_gray(path, frame: np.ndarray) -> None:
    """Write a [0, 1] frame as an 8-bit grayscale PNG."""
    arr = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L").save(path, format="PNG")


def load_gray(path) -> np.ndarray:
    """Read an 8-bit grayscale PNG into a [0, 1] float frame."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def save_mask(path, mask: np.ndarray) -> None:
    """Write a boolean mask as a 0/255 grayscale PNG."""
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    """Read a 0/255 mask PNG back into a boolean array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= 128
