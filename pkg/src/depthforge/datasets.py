"""On-disk dataset and pseudo-label stores.

A dataset directory holds three splits plus a manifest describing exactly
what produced them. Depth and masks travel as PFM; images as PPM (which
quantizes them to 8 bits, so a loaded dataset is self-consistent but not
bit-equal to its in-memory source). A pseudo-label directory pairs PFM
maps with the checksums of the images they were predicted from.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .fileio import pfm_read, pfm_write, ppm_read, ppm_write
from .maps import DepthMap, DepthSample, DisparityMap, PseudoSample, array_checksum
from .synth import SynthData

MANIFEST_NAME = "manifest.json"
DATASET_KIND = "depthforge-dataset"
PSEUDO_KIND = "depthforge-pseudo-labels"


def _write_manifest(directory: Path, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    (directory / MANIFEST_NAME).write_text(text, encoding="utf-8")


def _read_manifest(directory: Path, expected_kind: str) -> dict:
    path = directory / MANIFEST_NAME
    if not path.is_file():
        raise DomainError(f"no manifest at {path}")
    payload = json.loads(path.read_text(encoding="utf-8"))
    kind = payload.get("kind")
    if kind != expected_kind:
        raise ConfigError(f"{path}: expected kind {expected_kind!r}, found {kind!r}")
    return payload


def _sample_stem(index: int) -> str:
    return f"{index:05d}"


def write_datasets(directory, data: SynthData, config_echo: dict | None = None) -> None:
    """Write labeled/unlabeled/test splits plus the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split, samples in (("labeled", data.labeled), ("test", data.test)):
        split_dir = directory / split
        split_dir.mkdir(exist_ok=True)
        for i, sample in enumerate(samples):
            stem = _sample_stem(i)
            ppm_write(split_dir / f"{stem}_image.ppm", sample.image)
            pfm_write(split_dir / f"{stem}_depth.pfm", sample.depth.values)
            sky = sample.sky if sample.sky is not None else np.zeros(sample.depth.shape, bool)
            pfm_write(split_dir / f"{stem}_sky.pfm", sky.astype(np.float64))
    unlabeled_dir = directory / "unlabeled"
    unlabeled_dir.mkdir(exist_ok=True)
    for i, image in enumerate(data.unlabeled):
        ppm_write(unlabeled_dir / f"{_sample_stem(i)}_image.ppm", image)
    _write_manifest(
        directory,
        {
            "kind": DATASET_KIND,
            "counts": {
                "labeled": len(data.labeled),
                "unlabeled": len(data.unlabeled),
                "test": len(data.test),
            },
            "config": config_echo or {},
        },
    )


def _load_labeled_split(directory: Path, count: int) -> tuple[DepthSample, ...]:
    samples = []
    for i in range(count):
        stem = _sample_stem(i)
        image = ppm_read(directory / f"{stem}_image.ppm")
        depth_values = pfm_read(directory / f"{stem}_depth.pfm")
        sky = pfm_read(directory / f"{stem}_sky.pfm") > 0.5
        valid = depth_values > 0.0
        samples.append(DepthSample(image, DepthMap(depth_values, valid), sky))
    return tuple(samples)


def load_datasets(directory) -> tuple[SynthData, dict]:
    """Read a dataset directory back; returns the data and its manifest."""
    directory = Path(directory)
    manifest = _read_manifest(directory, DATASET_KIND)
    counts = manifest["counts"]
    labeled = _load_labeled_split(directory / "labeled", counts["labeled"])
    test = _load_labeled_split(directory / "test", counts["test"])
    unlabeled = tuple(
        ppm_read(directory / "unlabeled" / f"{_sample_stem(i)}_image.ppm")
        for i in range(counts["unlabeled"])
    )
    return SynthData(labeled=labeled, unlabeled=unlabeled, test=test), manifest


def write_pseudo_labels(directory, pseudo, model_checksum: str = "") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    checksums = []
    for i, item in enumerate(pseudo):
        pfm_write(directory / f"{_sample_stem(i)}_pseudo.pfm", item.pseudo_disparity.values)
        checksums.append(item.source_checksum)
    _write_manifest(
        directory,
        {
            "kind": PSEUDO_KIND,
            "count": len(checksums),
            "source_checksums": checksums,
            "model_checksum": model_checksum,
        },
    )


def load_pseudo_labels(directory, images) -> list[PseudoSample]:
    """Pair stored pseudo-label maps with their source images by position.

    The stored checksums must match the images handed in; a mismatch means
    the pseudo-labels were produced from different data.
    """
    directory = Path(directory)
    manifest = _read_manifest(directory, PSEUDO_KIND)
    images = list(images)
    count = manifest["count"]
    if len(images) != count:
        raise DomainError(f"{count} pseudo-labels cannot pair with {len(images)} images")
    pseudo = []
    for i, image in enumerate(images):
        stored = manifest["source_checksums"][i]
        if stored and array_checksum(np.asarray(image, dtype=np.float64)) != stored:
            raise DomainError(f"pseudo-label {i} was predicted from a different image")
        values = pfm_read(directory / f"{_sample_stem(i)}_pseudo.pfm")
        disparity = DisparityMap(values, np.ones(values.shape, dtype=bool))
        pseudo.append(PseudoSample(image, disparity, stored))
    return pseudo
