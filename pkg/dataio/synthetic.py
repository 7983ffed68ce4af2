"""Synthetic two-domain abdominal benchmark for desk-scale runs."""

from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from dataio.manifest import DatasetManifest, ManifestEntry, save_manifest, split_dataset
from dataio.volumes import LabelMask, Volume, save_volume

# class id -> (center row, center col, radius rows, radius cols, half extent along slices),
# all relative to the image / volume size
ORGAN_LAYOUT: Dict[int, Tuple[float, float, float, float, float]] = {
    1: (0.40, 0.30, 0.20, 0.16, 0.45),  # liver
    2: (0.72, 0.30, 0.08, 0.07, 0.30),  # right kidney
    3: (0.72, 0.70, 0.08, 0.07, 0.30),  # left kidney
    4: (0.40, 0.72, 0.13, 0.10, 0.35),  # spleen
}

DEFAULT_SOURCE_INTENSITY = {
    0: (0.10, 0.03),
    1: (0.40, 0.03),
    2: (0.60, 0.03),
    3: (0.60, 0.03),
    4: (0.75, 0.03),
}

Dataset = List[Tuple[Volume, LabelMask]]


class SyntheticSpec(BaseModel):
    """Geometry and intensity styles of the synthetic source/target pair."""
    image_size: int = Field(default=64, gt=0)
    organ_count: int = Field(default=4, ge=1, le=len(ORGAN_LAYOUT))
    num_classes: int = Field(default=5, ge=2)
    slices_per_volume: int = Field(default=10, ge=1)
    volumes_per_domain: int = Field(default=20, ge=1)
    source_intensity: Dict[int, Tuple[float, float]] = Field(
        default_factory=lambda: dict(DEFAULT_SOURCE_INTENSITY),
        description="class id -> (mean intensity, noise sigma) in the source style",
    )
    target_intensity: Optional[Dict[int, Tuple[float, float]]] = Field(
        default=None,
        description="class id -> (mean, sigma) in the target style; derived from the source style when omitted",
    )
    target_gamma: float = Field(default=0.35, gt=0, description="Monotone remap mean -> mean ** gamma")
    target_noise: float = Field(default=0.10, ge=0)
    target_bias: float = Field(
        default=0.35, ge=0, lt=1,
        description="Peak amplitude of a smooth multiplicative intensity field drawn per target volume",
    )
    position_jitter: float = Field(default=0.03, ge=0)
    size_jitter: float = Field(default=0.15, ge=0, lt=1)
    overlap_tolerance: float = Field(default=0.02, ge=0)
    max_attempts: int = Field(default=20, ge=1)

    @model_validator(mode="after")
    def _check_styles(self):
        if self.organ_count + 1 > self.num_classes:
            raise ValueError(f"organ_count + 1 ({self.organ_count + 1}) exceeds num_classes ({self.num_classes})")
        if self.target_intensity is None:
            self.target_intensity = {
                c: (float(mean ** self.target_gamma), self.target_noise)
                for c, (mean, _) in self.source_intensity.items()
            }
        for name, style in (("source", self.source_intensity), ("target", self.target_intensity)):
            for c in range(self.organ_count + 1):
                if c not in style:
                    raise ValueError(f"{name}_intensity has no entry for class {c}")
            for c, (mean, sigma) in style.items():
                if not 0.0 <= mean <= 1.0:
                    raise ValueError(f"{name}_intensity mean for class {c} must be in [0, 1], got {mean}")
                if sigma < 0:
                    raise ValueError(f"{name}_intensity sigma for class {c} must be >= 0, got {sigma}")
        return self


def _sample_geometry(spec: SyntheticSpec, rng: np.random.Generator) -> Dict[int, np.ndarray]:
    """Jittered organ parameters, rejected while organs overlap too much."""
    size = spec.image_size
    rows, cols = np.mgrid[0:size, 0:size]
    rows = (rows + 0.5) / size
    cols = (cols + 0.5) / size

    for attempt in range(1, spec.max_attempts + 1):
        params = {}
        for c in range(1, spec.organ_count + 1):
            cy, cx, ry, rx, hz = ORGAN_LAYOUT[c]
            shift = rng.uniform(-1, 1, size=3) * spec.position_jitter
            scale = 1.0 + rng.uniform(-1, 1, size=3) * spec.size_jitter
            params[c] = np.array([cy + shift[0], cx + shift[1], ry * scale[0], rx * scale[1], 0.5 + shift[2], hz * scale[2]])

        # overlap is largest at the widest cross-section
        footprints = {
            c: ((rows - p[0]) / p[2]) ** 2 + ((cols - p[1]) / p[3]) ** 2 <= 1.0 for c, p in params.items()
        }
        worst = 0.0
        for a in footprints:
            for b in footprints:
                if a < b:
                    inter = np.logical_and(footprints[a], footprints[b]).sum()
                    smaller = max(min(footprints[a].sum(), footprints[b].sum()), 1)
                    worst = max(worst, inter / smaller)
        if worst <= spec.overlap_tolerance:
            return params

    raise ValueError(
        f"Could not place organs within overlap tolerance {spec.overlap_tolerance} "
        f"after {spec.max_attempts} attempts; reduce the jitter"
    )


def _render_labels(spec: SyntheticSpec, params: Dict[int, np.ndarray]) -> np.ndarray:
    size, depth = spec.image_size, spec.slices_per_volume
    rows, cols = np.mgrid[0:size, 0:size]
    rows = (rows + 0.5) / size
    cols = (cols + 0.5) / size

    labels = np.zeros((depth, size, size), dtype=np.uint8)
    for s in range(depth):
        z = (s + 0.5) / depth
        for c, (cy, cx, ry, rx, zc, hz) in params.items():
            profile = 1.0 - ((z - zc) / hz) ** 2
            if profile <= 0:
                continue
            shrink = np.sqrt(profile)
            inside = ((rows - cy) / (ry * shrink)) ** 2 + ((cols - cx) / (rx * shrink)) ** 2 <= 1.0
            labels[s][inside] = c
    return labels


def _bias_field(size: int, strength: float, rng: np.random.Generator) -> np.ndarray:
    """Quadratic in-plane field 1 + strength * f with max |f| = 1, shared by all slices of a volume."""
    rows, cols = np.mgrid[0:size, 0:size]
    rows = (rows + 0.5) / size - 0.5
    cols = (cols + 0.5) / size - 0.5
    basis = np.stack([rows, cols, rows * cols, rows ** 2 - 1 / 12, cols ** 2 - 1 / 12])
    field = np.tensordot(rng.uniform(-1, 1, size=len(basis)), basis, axes=1)
    field /= max(np.abs(field).max(), 1e-8)
    return 1.0 + strength * field


def _render_image(
    labels: np.ndarray,
    style: Dict[int, Tuple[float, float]],
    rng: np.random.Generator,
    bias: float = 0.0,
) -> np.ndarray:
    means = np.zeros(labels.shape, dtype=np.float64)
    sigmas = np.zeros(labels.shape, dtype=np.float64)
    for c, (mean, sigma) in style.items():
        region = labels == c
        means[region] = mean
        sigmas[region] = sigma
    if bias > 0:
        means = means * _bias_field(labels.shape[-1], bias, rng)
    image = means + sigmas * rng.standard_normal(labels.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def make_synthetic_pair(spec: SyntheticSpec, seed: int) -> Tuple[Dataset, Dataset]:
    """
    Generate labeled source and target volumes sharing one geometry distribution.

    Target masks are returned for evaluation only.

    Returns:
        (source dataset, target dataset), each a list of (Volume, LabelMask)
    """
    source_geo, target_geo, source_noise, target_noise = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)
    )

    datasets = []
    for tag, geo_rng, noise_rng, style, bias in (
        ("source", source_geo, source_noise, spec.source_intensity, 0.0),
        ("target", target_geo, target_noise, spec.target_intensity, spec.target_bias),
    ):
        dataset = []
        for i in range(spec.volumes_per_domain):
            labels = _render_labels(spec, _sample_geometry(spec, geo_rng))
            volume = Volume(
                _render_image(labels, style, noise_rng, bias),
                modality_tag=f"{tag}_like",
                name=f"{tag}_{i:03d}",
            )
            dataset.append((volume, LabelMask(labels, spec.num_classes)))
        datasets.append(dataset)

    print(
        f"[DATAIO] ✓ Generated {spec.volumes_per_domain} source + {spec.volumes_per_domain} target volumes "
        f"({spec.slices_per_volume}x{spec.image_size}x{spec.image_size}, seed {seed})"
    )
    return datasets[0], datasets[1]


def write_synthetic_pair(
    source: Dataset,
    target: Dataset,
    out_dir,
    train_fraction: float = 0.8,
    seed: int = 0,
) -> Tuple[Path, Path]:
    """Write both domains as portable-raw files plus one split manifest per domain."""
    out_dir = Path(out_dir)
    manifests = []
    for tag, dataset in (("source", source), ("target", target)):
        entries = []
        for volume, mask in dataset:
            path = save_volume(volume, mask, out_dir / tag / f"{volume.name}.sfda", format="raw")
            entries.append(ManifestEntry(volume=str(path.relative_to(out_dir)), modality_tag=volume.modality_tag))
        manifest = split_dataset(DatasetManifest(entries=entries), train_fraction, seed)
        manifests.append(save_manifest(manifest, out_dir / f"{tag}_manifest.json"))
    print(f"[DATAIO] ✓ Wrote synthetic pair to {out_dir}")
    return manifests[0], manifests[1]
