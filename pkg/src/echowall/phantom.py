"""Synthetic one-cycle echo phantom with ground-truth wall masks.

The wall is an elliptic horseshoe opening toward the image bottom (apex up,
as in an apical 4-chamber view). Frame 0 is the fully relaxed reference; the
inner boundary then moves radially inward following a half-sine over the
cycle, scaled per segment, so mid-cycle is peak contraction. Speckle noise
and contrast scaling touch the rendered frames only, never the truth masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyDatasetError, MissingInputError
from . import imgproc
from .wallgeom import ANALYZED_SEGMENTS

# half-angle of the mitral opening sector, radians
OPENING_HALF_ANGLE = 0.45

_WALL_LEVEL = 0.92
_TISSUE_LEVEL = 0.18
_BLOOD_LEVEL = 0.06
_EDGE_BLUR_SIGMA = 0.7


@dataclass(frozen=True)
class PhantomConfig:
    image_size: int = 64
    n_frames: int = 25  # one cycle at 25 fps
    wall_thickness: float = 7.0
    base_amplitude: float = 5.0
    segment_amplitudes: tuple = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)  # order 1,2,3,5,6,7
    speckle_sigma: float = 0.05
    contrast: float = 1.0
    rng_seed: int = 0
    abnormality_threshold: float = 0.5

    def validate(self) -> None:
        if self.image_size < 32:
            raise ConfigError(f"image_size must be >= 32, got {self.image_size}")
        if self.n_frames < 3:
            raise ConfigError(f"n_frames must be >= 3, got {self.n_frames}")
        if self.wall_thickness < 2:
            raise ConfigError(f"wall_thickness must be >= 2, got {self.wall_thickness}")
        if len(self.segment_amplitudes) != 6:
            raise ConfigError("segment_amplitudes must hold 6 factors (segments 1,2,3,5,6,7)")
        for i, a in enumerate(self.segment_amplitudes):
            if not 0.0 <= a <= 1.0:
                raise ConfigError(f"segment_amplitudes[{i}] must lie in [0, 1], got {a}")
        if self.base_amplitude < 0:
            raise ConfigError(f"base_amplitude must be >= 0, got {self.base_amplitude}")
        if not 0.0 < self.contrast <= 1.0:
            raise ConfigError(f"contrast must lie in (0, 1], got {self.contrast}")
        if self.speckle_sigma < 0:
            raise ConfigError(f"speckle_sigma must be >= 0, got {self.speckle_sigma}")
        geo = _Geometry.from_config(self)
        if min(geo.a_in, geo.b_in) - self.base_amplitude < 2.0:
            raise ConfigError(
                "base_amplitude too large: the contracted cavity would collapse "
                f"(inner semi-axes {geo.a_in:.1f}x{geo.b_in:.1f})"
            )
        if geo.cy + geo.b_out - self.base_amplitude < self.image_size:
            raise ConfigError(
                "base_amplitude too large: the contracted arms would detach "
                "from the bottom image border"
            )


@dataclass
class PhantomEcho:
    frames: np.ndarray        # (T, H, W) float in [0, 1]
    truth_masks: np.ndarray   # (T, H, W) bool
    truth_segment_labels: np.ndarray  # (6,) bool, True = abnormal, order 1,2,3,5,6,7
    echo_label: bool          # True = MI
    config: PhantomConfig


@dataclass(frozen=True)
class _Geometry:
    """Ellipse parameters of the horseshoe, in pixel units."""
    cy: float
    cx: float
    a_out: float
    b_out: float
    a_in: float
    b_in: float

    @classmethod
    def from_config(cls, cfg: PhantomConfig) -> "_Geometry":
        # deep ellipse: arms cross the bottom border steeply so the basal
        # truncation angle barely moves as the wall contracts
        s = float(cfg.image_size)
        cy = 0.68 * s
        cx = (s - 1.0) / 2.0  # symmetric about the vertical center line
        a_out = 0.40 * s
        b_out = 0.62 * s
        return cls(cy, cx, a_out, b_out, a_out - cfg.wall_thickness, b_out - cfg.wall_thickness)


def _ellipse_radius(theta, a, b):
    return (a * b) / np.sqrt((b * np.cos(theta)) ** 2 + (a * np.sin(theta)) ** 2)


def _sweep_fraction(theta):
    """Map pixel angle to the wall sweep coordinate in [0, 1].

    0 is the basal-left end of the horseshoe, 0.5 the apex, 1 the basal-right
    end; values above 1 fall inside the mitral opening sector.
    """
    span = 2.0 * math.pi - 2.0 * OPENING_HALF_ANGLE
    psi = np.mod(-math.pi / 2.0 - OPENING_HALF_ANGLE - theta, 2.0 * math.pi)
    return psi / span


def _segment_index(u):
    """Bin a sweep fraction into 0..5 for segments (1,2,3,5,6,7)."""
    return np.minimum((np.asarray(u) * 6).astype(np.intp), 5)


def _amplitude_profile(cfg: PhantomConfig) -> np.ndarray:
    return np.asarray(cfg.segment_amplitudes, dtype=np.float64)


def cycle_excursion(cfg: PhantomConfig, t: int) -> float:
    """Half-sine temporal profile: 0 at frame 0, peak mid-cycle."""
    return math.sin(math.pi * t / (cfg.n_frames - 1))


def peak_frame(cfg: PhantomConfig) -> int:
    """Frame index with the largest inward excursion."""
    return max(range(cfg.n_frames), key=lambda t: cycle_excursion(cfg, t))


def analytic_max_excursion(cfg: PhantomConfig, segment: int) -> float:
    """Ground-truth maximum radial inward excursion of a segment, pixels."""
    i = ANALYZED_SEGMENTS.index(segment)
    return cfg.base_amplitude * cfg.segment_amplitudes[i] * cycle_excursion(cfg, peak_frame(cfg))


def generate_echo(config: PhantomConfig) -> PhantomEcho:
    """Render one phantom echo: frames, truth masks, and labels.

    A pure function of the config; the same seed gives bit-identical output.
    """
    config.validate()
    cfg = config
    geo = _Geometry.from_config(cfg)
    s = cfg.image_size
    rows, cols = np.mgrid[0:s, 0:s].astype(np.float64)
    dx = cols - geo.cx
    dy = geo.cy - rows
    theta = np.arctan2(dy, dx)
    radius = np.hypot(dx, dy)
    u = _sweep_fraction(theta)
    in_sweep = u <= 1.0
    seg_idx = _segment_index(np.clip(u, 0.0, 1.0))
    factor = _amplitude_profile(cfg)[seg_idx]
    r_out = _ellipse_radius(theta, geo.a_out, geo.b_out)
    r_in = _ellipse_radius(theta, geo.a_in, geo.b_in)

    try:
        from scipy.ndimage import gaussian_filter
    except ImportError:  # pragma: no cover
        gaussian_filter = None

    rng = np.random.default_rng(np.random.SeedSequence(cfg.rng_seed))
    frames = np.empty((cfg.n_frames, s, s), dtype=np.float64)
    masks = np.empty((cfg.n_frames, s, s), dtype=bool)
    for t in range(cfg.n_frames):
        # the whole wall band shifts radially inward, both boundaries
        inward = cfg.base_amplitude * factor * cycle_excursion(cfg, t)
        wall = in_sweep & (radius >= r_in - inward) & (radius <= r_out - inward)
        masks[t] = wall
        cavity_like = (radius < r_in - inward) | (~in_sweep & (radius <= r_out))
        img = np.full((s, s), _TISSUE_LEVEL)
        img[cavity_like] = _BLOOD_LEVEL
        img[wall] = _WALL_LEVEL
        if gaussian_filter is not None:
            img = gaussian_filter(img, _EDGE_BLUR_SIGMA)
        img *= cfg.contrast
        if cfg.speckle_sigma > 0:
            img = img + rng.normal(0.0, cfg.speckle_sigma, size=img.shape)
        frames[t] = np.clip(img, 0.0, 1.0)

    abnormal = np.asarray(
        [a < cfg.abnormality_threshold for a in cfg.segment_amplitudes], dtype=bool
    )
    return PhantomEcho(
        frames=frames,
        truth_masks=masks,
        truth_segment_labels=abnormal,
        echo_label=bool(abnormal.any()),
        config=cfg,
    )


def generate_dataset(
    n_echos: int,
    mi_prevalence: float,
    config_template: PhantomConfig,
    rng_seed: int,
    abnormal_range: tuple = (0.0, 0.4),
    normal_range: tuple = (0.7, 1.0),
    max_abnormal_segments: int = 3,
) -> list:
    """Generate a dataset with exactly round(n_echos * mi_prevalence) MI echos.

    Per-echo seeds and amplitude factors are derived deterministically from
    ``rng_seed``. MI echos get 1..max_abnormal_segments segments with factors
    drawn from ``abnormal_range``; all other factors come from
    ``normal_range``. The ranges must fall on opposite sides of the config's
    abnormality threshold so the intended labels actually hold.
    """
    if n_echos < 1:
        raise EmptyDatasetError("n_echos must be >= 1")
    if not 0.0 <= mi_prevalence <= 1.0:
        raise ConfigError(f"mi_prevalence must lie in [0, 1], got {mi_prevalence}")
    thr = config_template.abnormality_threshold
    if not abnormal_range[1] < thr <= normal_range[0]:
        raise ConfigError(
            "abnormal_range/normal_range must straddle the abnormality threshold "
            f"{thr} (got {abnormal_range} and {normal_range})"
        )

    n_mi = round(n_echos * mi_prevalence)
    children = np.random.SeedSequence(rng_seed).spawn(n_echos + 1)
    assign_rng = np.random.default_rng(children[0])
    flags = np.zeros(n_echos, dtype=bool)
    flags[:n_mi] = True
    assign_rng.shuffle(flags)

    echos = []
    for i in range(n_echos):
        child = children[i + 1]
        rng = np.random.default_rng(child)
        if flags[i]:
            k = int(rng.integers(1, max_abnormal_segments + 1))
            bad = rng.choice(6, size=k, replace=False)
            amps = rng.uniform(normal_range[0], normal_range[1], size=6)
            amps[bad] = rng.uniform(abnormal_range[0], abnormal_range[1], size=k)
        else:
            amps = rng.uniform(normal_range[0], normal_range[1], size=6)
        cfg = replace(
            config_template,
            segment_amplitudes=tuple(float(a) for a in amps),
            rng_seed=int(child.generate_state(1)[0]),
        )
        echos.append(generate_echo(cfg))
    return echos


# ------------------------------------------------------------------ disk io
#
# One directory per echo: frame_0000.png ... (8-bit grayscale), mask_0000.png
# ... (255 = wall), and labels.txt with a single line of integers: echo label
# then the six segment labels, 1 = normal, 2 = abnormal, order 1,2,3,5,6,7.

def write_echo_dir(echo: PhantomEcho, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for t in range(echo.frames.shape[0]):
        imgproc.save_gray(out / f"frame_{t:04d}.png", echo.frames[t])
        imgproc.save_mask(out / f"mask_{t:04d}.png", echo.truth_masks[t])
    labels = [2 if echo.echo_label else 1]
    labels += [2 if bad else 1 for bad in echo.truth_segment_labels]
    (out / "labels.txt").write_text(" ".join(str(v) for v in labels) + "\n")


def write_dataset(echos, out_dir) -> list:
    """Write echos as echo_0000/, echo_0001/, ...; returns the echo ids."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    for i, echo in enumerate(echos):
        eid = f"echo_{i:04d}"
        write_echo_dir(echo, out / eid)
        ids.append(eid)
    return ids


def load_echo_dir(echo_dir):
    """Read one echo directory: (frames, masks or None, labels or None)."""
    d = Path(echo_dir)
    frame_files = sorted(d.glob("frame_*.png"))
    if not frame_files:
        raise MissingInputError(f"no frame_*.png files in {d}")
    frames = np.stack([imgproc.load_gray(f) for f in frame_files])
    mask_files = sorted(d.glob("mask_*.png"))
    masks = np.stack([imgproc.load_mask(f) for f in mask_files]) if mask_files else None
    if masks is not None and masks.shape[0] != frames.shape[0]:
        raise MissingInputError(
            f"{d}: {frames.shape[0]} frames but {masks.shape[0]} masks"
        )
    labels = None
    lf = d / "labels.txt"
    if lf.exists():
        vals = [int(v) for v in lf.read_text().split()]
        labels = {"echo": vals[0] == 2, "segments": [v == 2 for v in vals[1:7]]}
    return frames, masks, labels


def load_dataset(root):
    """Read every echo_* subdirectory of a dataset directory, sorted by id."""
    root = Path(root)
    if not root.is_dir():
        raise MissingInputError(f"dataset directory {root} does not exist")
    out = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        frames, masks, labels = load_echo_dir(d)
        out.append((d.name, frames, masks, labels))
    if not out:
        raise MissingInputError(f"no echo subdirectories under {root}")
    return out


# ------------------------------------------------------- geometry oracles

def segment_sweep_spans() -> dict:
    """Sweep-fraction interval covered by each analyzed segment."""
    return {seg: (i / 6.0, (i + 1) / 6.0) for i, seg in enumerate(ANALYZED_SEGMENTS)}


def _continuous_inner_boundary(cfg: PhantomConfig, t: int, n_quad: int = 40001):
    """Continuous inner-boundary curve at frame t, clipped to the image.

    Returns (row, col, cumulative_arc_length) arrays sweeping basal-left to
    basal-right, for use as an independent pixel-free oracle.
    """
    geo = _Geometry.from_config(cfg)
    span = 2.0 * math.pi - 2.0 * OPENING_HALF_ANGLE
    psi = np.linspace(0.0, span, n_quad)
    theta = -math.pi / 2.0 - OPENING_HALF_ANGLE - psi
    seg_idx = np.minimum(((psi / span) * 6).astype(np.intp), 5)
    amp = _amplitude_profile(cfg)[seg_idx]
    r = _ellipse_radius(theta, geo.a_in, geo.b_in) - cfg.base_amplitude * amp * cycle_excursion(cfg, t)
    row = geo.cy - r * np.sin(theta)
    col = geo.cx + r * np.cos(theta)
    ok = row <= cfg.image_size - 1
    i0, i1 = int(np.argmax(ok)), len(ok) - int(np.argmax(ok[::-1]))
    row, col = row[i0:i1], col[i0:i1]
    steps = np.hypot(np.diff(row), np.diff(col))
    return row, col, np.concatenate([[0.0], np.cumsum(steps)])


def analytic_boundary_l1_peak(cfg: PhantomConfig, segment: int, n_samples: int = 10) -> float:
    """Expected peak mean-L1 boundary displacement of a segment.

    Mirrors the measurement protocol on the continuous generator geometry:
    equal-thirds division of each half (zero apical fraction) on the frame's
    own boundary, midpoint arc-length sampling, pairing by sample index
    against frame 0. Pixel rasterization is the only unmodeled effect.
    """
    sampled = []
    for t in (0, peak_frame(cfg)):
        row, col, cum = _continuous_inner_boundary(cfg, t)
        apex = int(np.argmin(row))
        left, right = cum[apex], cum[-1] - cum[apex]
        if segment in (1, 2, 3):
            k = segment - 1
            lo, hi = left * k / 3.0, left * (k + 1) / 3.0
        else:
            k = segment - 5
            lo, hi = left + right * k / 3.0, left + right * (k + 1) / 3.0
        pos = lo + (np.arange(n_samples) + 0.5) * (hi - lo) / n_samples
        sampled.append((np.interp(pos, cum, row), np.interp(pos, cum, col)))
    (r0, c0), (rp, cp) = sampled
    return float(np.mean(np.abs(r0 - rp) + np.abs(c0 - cp)))
