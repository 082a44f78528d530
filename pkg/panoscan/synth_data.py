"""Procedural panoramas with localized distortions and a closed-form MOS.

A scene is fully described by its :class:`SceneSpec`; images are rendered
from it on demand, and the label is :func:`oracle_mos` of the scene.
"""
from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import math
import os.path
from collections.abc import Sequence
from typing import Any

import numpy as np
import numpy.typing as npt

from panoscan import pngio
from panoscan.diffcore import Array
from panoscan.distortions import apply_spec
from panoscan.distortions import DEFAULT_TABLE
from panoscan.distortions import DistortionSpec
from panoscan.distortions import normalized_severity
from panoscan.distortions import sample_spec
from panoscan.distortions import Severity
from panoscan.distortions import SeverityTable
from panoscan.errors import ArgumentError
from panoscan.errors import DataError
from panoscan.sphere_geom import pixel_lonlat

SPLIT_NAMES = {
    2: ('train', 'test'),
    3: ('train', 'val', 'test'),
}
MAX_REGIONS = 4


@dataclasses.dataclass(frozen=True)
class Region:
    """A yaw-pitch rectangle on the sphere; ``yaw_span`` wraps around the
    ``+-pi`` seam."""
    yaw: float
    yaw_span: float
    pitch_lo: float
    pitch_hi: float
    spec: DistortionSpec
    weight: float

    def __post_init__(self) -> None:
        if not 0 < self.yaw_span <= 2 * math.pi:
            raise ArgumentError(f'yaw span must be in (0, 2pi], got {self.yaw_span}')
        if not -math.pi / 2 <= self.pitch_lo < self.pitch_hi <= math.pi / 2:
            raise ArgumentError(
                f'bad pitch range [{self.pitch_lo}, {self.pitch_hi}]',
            )
        if not 0.0 <= self.weight <= 1.0:
            raise ArgumentError(f'region weight must be in [0, 1], got {self.weight}')

    @property
    def area_fraction(self) -> float:
        """Solid angle of the rectangle over the full sphere."""
        band = (math.sin(self.pitch_hi) - math.sin(self.pitch_lo)) / 2
        return self.yaw_span / (2 * math.pi) * band

    def contains(self, lon: Array | float, lat: Array | float) -> Array:
        d = np.mod(np.asarray(lon) - self.yaw + math.pi, 2 * math.pi) - math.pi
        in_yaw = (np.abs(d) <= self.yaw_span / 2) | (self.yaw_span >= 2 * math.pi)
        lat_arr = np.asarray(lat)
        return in_yaw & (lat_arr >= self.pitch_lo) & (lat_arr <= self.pitch_hi)

    def to_json(self) -> dict[str, Any]:
        return {
            'yaw': self.yaw,
            'yaw_span': self.yaw_span,
            'pitch_lo': self.pitch_lo,
            'pitch_hi': self.pitch_hi,
            'spec': self.spec.to_json(),
            'weight': self.weight,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> Region:
        return cls(
            yaw=float(obj['yaw']),
            yaw_span=float(obj['yaw_span']),
            pitch_lo=float(obj['pitch_lo']),
            pitch_hi=float(obj['pitch_hi']),
            spec=DistortionSpec.from_json(obj['spec']),
            weight=float(obj['weight']),
        )


@dataclasses.dataclass(frozen=True)
class SceneSpec:
    seed: int
    octaves: int = 4
    base_freq: float = 2.0
    regions: tuple[Region, ...] = ()

    def to_json(self) -> dict[str, Any]:
        return {
            'seed': self.seed,
            'octaves': self.octaves,
            'base_freq': self.base_freq,
            'regions': [r.to_json() for r in self.regions],
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> SceneSpec:
        return cls(
            seed=int(obj['seed']),
            octaves=int(obj['octaves']),
            base_freq=float(obj['base_freq']),
            regions=tuple(Region.from_json(r) for r in obj['regions']),
        )


@dataclasses.dataclass(frozen=True)
class LabeledSample:
    name: str
    image: str
    mos: float
    scene: SceneSpec
    features: str | None = None

    def load_erp(self) -> Array:
        return pngio.load_png(self.image)


def _unit_vectors(width: int, height: int) -> Array:
    lon, lat = pixel_lonlat(width, height)
    return np.stack(
        [np.cos(lat) * np.sin(lon), np.sin(lat), np.cos(lat) * np.cos(lon)],
        axis=-1,
    )


def _smoothstep(t: Array) -> Array:
    return t * t * (3.0 - 2.0 * t)


def value_noise(points: Array, perm: npt.NDArray[np.int64], values: Array) -> Array:
    """Trilinear value noise over the integer lattice; ``perm`` holds 512
    entries (a doubled permutation of 256)."""
    base = np.floor(points)
    frac = _smoothstep(points - base)
    idx = base.astype(np.int64) & 255
    ret = np.zeros(points.shape[:-1])
    for dx in (0, 1):
        wx = frac[..., 0] if dx else 1.0 - frac[..., 0]
        hx = perm[(idx[..., 0] + dx) & 255]
        for dy in (0, 1):
            wy = frac[..., 1] if dy else 1.0 - frac[..., 1]
            hy = perm[hx + ((idx[..., 1] + dy) & 255)]
            for dz in (0, 1):
                wz = frac[..., 2] if dz else 1.0 - frac[..., 2]
                h = perm[hy + ((idx[..., 2] + dz) & 255)]
                ret += wx * wy * wz * values[h]
    return ret


def fractal_noise(
        points: Array,
        rng: np.random.Generator,
        octaves: int,
        base_freq: float,
) -> Array:
    perm = rng.permutation(256)
    perm = np.concatenate([perm, perm])
    values = rng.uniform(0.0, 1.0, size=256)
    total = np.zeros(points.shape[:-1])
    norm = 0.0
    for octave in range(octaves):
        freq = base_freq * 2 ** octave
        amp = 0.5 ** octave
        offset = rng.uniform(0.0, 256.0, size=3)
        total += amp * value_noise(points * freq + offset, perm, values)
        norm += amp
    return total / norm


def texture_params(seed: int) -> tuple[int, float]:
    rng = np.random.default_rng([seed, 7])
    return int(rng.integers(3, 5, endpoint=True)), float(rng.uniform(1.5, 3.0))


def gen_panorama(
        seed: int,
        width: int = 512,
        height: int = 256,
        octaves: int | None = None,
        base_freq: float | None = None,
) -> Array:
    """Value-noise texture sampled on the sphere plus a horizon gradient."""
    if width != 2 * height or height < 2:
        raise ArgumentError(f'ERP size must be 2:1, got {width}x{height}')
    default_octaves, default_freq = texture_params(seed)
    octaves = default_octaves if octaves is None else octaves
    base_freq = default_freq if base_freq is None else base_freq

    rng = np.random.default_rng([seed, 11])
    points = _unit_vectors(width, height)
    lum = fractal_noise(points, rng, octaves, base_freq)
    chroma = np.stack(
        [fractal_noise(points, rng, 2, base_freq / 2) for _ in range(3)],
        axis=-1,
    )
    tint = rng.uniform(0.8, 1.2, size=3)
    _, lat = pixel_lonlat(width, height)

    img = 0.5 + 1.8 * (lum[..., None] - 0.5)
    img = img * tint + 0.4 * (chroma - 0.5)
    img = img + 0.15 * np.sin(lat)[..., None]
    return np.clip(img, 0.0, 1.0)


def apply_regions(erp: Array, scene: SceneSpec) -> Array:
    """Replaces each region's pixels by the distorted image, in list order."""
    out = erp.copy()
    if not scene.regions:
        return out
    lon, lat = pixel_lonlat(erp.shape[1], erp.shape[0])
    for region in scene.regions:
        mask = region.contains(lon, lat)
        if not np.any(mask):
            continue
        distorted = apply_spec(out, region.spec)
        out = np.where(mask[..., None], distorted, out)
    return out


def render_scene(scene: SceneSpec, width: int = 512, height: int = 256) -> Array:
    erp = gen_panorama(scene.seed, width, height, scene.octaves, scene.base_freq)
    return apply_regions(erp, scene)


def oracle_mos(scene: SceneSpec) -> float:
    """``100 * (1 - sum(w * area * severity))`` clamped to ``[0, 100]``."""
    damage = sum(
        r.weight * r.area_fraction * normalized_severity(r.spec)
        for r in scene.regions
    )
    return float(np.clip(100.0 * (1.0 - damage), 0.0, 100.0))


def sample_region(
        rng: np.random.Generator,
        seed: int,
        table: SeverityTable = DEFAULT_TABLE,
) -> Region:
    severity = list(Severity)[int(rng.integers(3))]
    spec = sample_spec(severity, seed, table)
    yaw_span = math.radians(float(rng.uniform(60.0, 360.0)))
    pitch_span = math.radians(float(rng.uniform(40.0, 180.0)))
    pitch_lo = float(rng.uniform(-math.pi / 2, math.pi / 2 - pitch_span))
    return Region(
        yaw=float(rng.uniform(-math.pi, math.pi)),
        yaw_span=yaw_span,
        pitch_lo=pitch_lo,
        pitch_hi=min(pitch_lo + pitch_span, math.pi / 2),
        spec=spec,
        weight=float(rng.uniform(0.6, 1.0)),
    )


def sample_scene(seed: int, table: SeverityTable = DEFAULT_TABLE) -> SceneSpec:
    """Draws a scene description without rendering it."""
    rng = np.random.default_rng([seed, 3])
    octaves, base_freq = texture_params(seed)
    n_regions = int(rng.integers(0, MAX_REGIONS, endpoint=True))
    regions = tuple(
        sample_region(rng, scene_seed(seed, 1000 + i), table)
        for i in range(n_regions)
    )
    return SceneSpec(seed, octaves, base_freq, regions)


def split_counts(n: int, split: Sequence[float]) -> list[int]:
    if len(split) not in SPLIT_NAMES:
        raise ArgumentError(f'split needs 2 or 3 fractions, got {len(split)}')
    if any(f < 0 for f in split) or abs(sum(split) - 1.0) > 1e-9:
        raise ArgumentError(f'split fractions must sum to 1, got {list(split)}')
    counts = [int(round(n * f)) for f in split[:-1]]
    counts.append(n - sum(counts))
    if counts[-1] < 0:
        raise ArgumentError(f'split {list(split)} does not fit {n} samples')
    return counts


def scene_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, i]).generate_state(1)[0])


def _write_sample(
        out_dir: str,
        i: int,
        seed: int,
        width: int,
        height: int,
        table: SeverityTable,
) -> tuple[str, SceneSpec]:
    scene = sample_scene(scene_seed(seed, i), table)
    rel = os.path.join('images', f'{i:05d}.png')
    pngio.save_png(os.path.join(out_dir, rel), render_scene(scene, width, height))
    return rel, scene


def make_dataset(
        out_dir: str,
        n: int,
        seed: int,
        split: Sequence[float] = (0.8, 0.2),
        width: int = 512,
        height: int = 256,
        table: SeverityTable = DEFAULT_TABLE,
        label_noise: float = 0.0,
        threads: int = 1,
) -> dict[str, str]:
    """Writes ``n`` PNGs and one JSON-lines manifest per split.

    Returns the manifest path per split name.
    """
    counts = split_counts(n, split)
    names = SPLIT_NAMES[len(split)]
    try:
        os.makedirs(os.path.join(out_dir, 'images'), exist_ok=True)
    except OSError as e:
        raise DataError(f'cannot create {out_dir}: {e}')

    with concurrent.futures.ThreadPoolExecutor(max(1, threads)) as pool:
        written = list(pool.map(
            lambda i: _write_sample(out_dir, i, seed, width, height, table),
            range(n),
        ))

    noise_rng = np.random.default_rng([seed, 13])
    lines = []
    for i, (rel, scene) in enumerate(written):
        mos = oracle_mos(scene)
        if label_noise > 0:
            mos = float(np.clip(mos + noise_rng.normal(0.0, label_noise), 0.0, 100.0))
        lines.append(json.dumps(
            {'image': rel, 'mos': mos, 'scene': scene.to_json()},
            sort_keys=True,
        ))

    order = np.random.default_rng([seed, 17]).permutation(n)
    ret = {}
    start = 0
    for name, count in zip(names, counts):
        chosen = sorted(int(i) for i in order[start:start + count])
        start += count
        path = os.path.join(out_dir, f'{name}.jsonl')
        try:
            with open(path, 'w') as f:
                for i in chosen:
                    f.write(lines[i] + '\n')
        except OSError as e:
            raise DataError(f'cannot write manifest {path}: {e}')
        ret[name] = path
    return ret


def load_manifest(path: str) -> list[LabeledSample]:
    if not os.path.exists(path):
        raise DataError(f'manifest not found: {path}')
    base = os.path.dirname(os.path.abspath(path))
    ret = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                scene = SceneSpec.from_json(obj['scene'])
                features = obj.get('features')
                ret.append(LabeledSample(
                    name=obj['image'],
                    image=os.path.join(base, obj['image']),
                    mos=float(obj['mos']),
                    scene=scene,
                    features=None if features is None else os.path.join(base, features),
                ))
            except (KeyError, TypeError, ValueError) as e:
                raise DataError(f'{path}:{lineno}: bad manifest line: {e}')
    return ret
