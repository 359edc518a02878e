"""
On-disk formats: dataset directory, model checkpoint and PPM images.

Dataset directory layout:

- ``manifest.json``: codebook seed, dimension, dedupe flag, split spec, record
  count and format version.
- ``images.bin``: little-endian float32, 2352 values per record.
- ``encodings.bin``: little-endian float32, ``dim`` values per record.
- ``labels.csv``: ``index,pos1,shape1,color1,pos2,shape2,color2,q1..q5,g1..g3,split``
  with booleans written as 0/1.
"""

import io
import logging
import struct
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from PIL import Image
from pydantic import BaseModel, ValidationError

from src.errors import CheckpointError, DatasetFormatError
from src.hdc import Codebook
from src.network import PARAMETER_NAMES, MlpModel, layer_shapes
from src.scenes import (
    GENERALIZATION_LABELS,
    IMAGE_LEN,
    IMAGE_SIZE,
    CHANNELS,
    QUESTION_LABELS,
    DatasetRecord,
    Scene,
    SceneDataset,
    SplitSpec,
    encode_scene,
    label_scene,
)
from src.utils import PathLike, atomic_write_bytes, atomic_write_text, read_file

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_FILE = "manifest.json"
IMAGES_FILE = "images.bin"
ENCODINGS_FILE = "encodings.bin"
LABELS_FILE = "labels.csv"
LABEL_COLUMNS = ["index", "pos1", "shape1", "color1", "pos2", "shape2", "color2",
                 *QUESTION_LABELS, *GENERALIZATION_LABELS, "split"]

CHECKPOINT_MAGIC = b"HDVQA1"


class DatasetManifest(BaseModel):
    format_version: int = FORMAT_VERSION
    codebook_seed: int
    dim: int
    dedupe: bool
    split: SplitSpec
    record_count: int
    image_len: int = IMAGE_LEN


def _labels_frame(dataset: SceneDataset) -> pd.DataFrame:
    rows = []
    for r in dataset.records:
        (a, b) = r.scene.placements
        row = {
            "index": r.index,
            "pos1": a.position.value, "shape1": a.figure.shape.value, "color1": a.figure.color.value,
            "pos2": b.position.value, "shape2": b.figure.shape.value, "color2": b.figure.color.value,
        }
        row.update({name: int(v) for name, v in zip(QUESTION_LABELS, r.q)})
        row.update({name: int(v) for name, v in zip(GENERALIZATION_LABELS, r.g)})
        row["split"] = r.split
        rows.append(row)
    return pd.DataFrame(rows, columns=LABEL_COLUMNS)


def write_dataset(dataset: SceneDataset, out_dir: PathLike) -> DatasetManifest:
    """
    Writes the dataset directory; every file is written atomically.

    Returns:
        DatasetManifest: The manifest that was written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = np.stack([r.image.reshape(-1) for r in dataset.records]).astype("<f4")
    encodings = np.stack([r.m for r in dataset.records]).astype("<f4")

    atomic_write_bytes(out_dir / IMAGES_FILE, images.tobytes())
    atomic_write_bytes(out_dir / ENCODINGS_FILE, encodings.tobytes())
    atomic_write_text(out_dir / LABELS_FILE, _labels_frame(dataset).to_csv(index=False, lineterminator="\n"))

    manifest = DatasetManifest(codebook_seed=dataset.codebook_seed, dim=dataset.dim, dedupe=dataset.dedupe,
                               split=dataset.split_spec, record_count=len(dataset))
    atomic_write_text(out_dir / MANIFEST_FILE, manifest.model_dump_json(indent=2) + "\n")
    logger.info("wrote %d records to %s", len(dataset), out_dir)
    return manifest


def read_manifest(data_dir: PathLike) -> DatasetManifest:
    path = Path(data_dir) / MANIFEST_FILE
    try:
        return DatasetManifest.model_validate_json(read_file(path))
    except (IOError, ValidationError) as e:
        raise DatasetFormatError(f"invalid dataset manifest {path}: {e}") from e


def _read_floats(path: Path, width: int, count: int) -> np.ndarray:
    try:
        raw = np.fromfile(path, dtype="<f4")
    except OSError as e:
        raise DatasetFormatError(f"cannot read {path}: {e}") from e
    if raw.size != width * count:
        raise DatasetFormatError(f"{path.name} holds {raw.size} floats, expected {count} x {width}")
    return raw.reshape(count, width)


def read_dataset(data_dir: PathLike, cb: Optional[Codebook] = None) -> SceneDataset:
    """
    Loads a dataset directory written by ``write_dataset``.

    Args:
        data_dir: Dataset directory.
        cb (Optional[Codebook]): If given, every stored encoding is checked
            against a fresh ``encode_scene`` and labels against ``label_scene``.

    Raises:
        DatasetFormatError: On missing files, wrong sizes or inconsistent rows.
    """
    data_dir = Path(data_dir)
    manifest = read_manifest(data_dir)
    if manifest.format_version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported dataset format version {manifest.format_version}")
    n = manifest.record_count
    images = _read_floats(data_dir / IMAGES_FILE, IMAGE_LEN, n)
    encodings = _read_floats(data_dir / ENCODINGS_FILE, manifest.dim, n)
    try:
        labels = pd.read_csv(data_dir / LABELS_FILE)
    except (OSError, pd.errors.ParserError) as e:
        raise DatasetFormatError(f"cannot read {LABELS_FILE}: {e}") from e
    if list(labels.columns) != LABEL_COLUMNS or len(labels) != n:
        raise DatasetFormatError(f"{LABELS_FILE} must have columns {LABEL_COLUMNS} and {n} rows")

    records: List[DatasetRecord] = []
    for i, row in enumerate(labels.to_dict("records")):
        try:
            scene = Scene.of((row["pos1"], row["shape1"], row["color1"]), (row["pos2"], row["shape2"], row["color2"]))
        except (ValueError, ValidationError) as e:
            raise DatasetFormatError(f"{LABELS_FILE} row {i}: {e}") from e
        q = tuple(bool(row[name]) for name in QUESTION_LABELS)
        g = tuple(bool(row[name]) for name in GENERALIZATION_LABELS)
        m = encodings[i].astype(np.float64)
        if cb is not None:
            if not np.array_equal(m, encode_scene(scene, cb)):
                raise DatasetFormatError(f"record {i}: stored encoding does not match the codebook")
            if (q, g) != label_scene(scene):
                raise DatasetFormatError(f"record {i}: stored labels do not match the scene")
        records.append(DatasetRecord(
            index=int(row["index"]), scene=scene,
            image=images[i].reshape(IMAGE_SIZE, IMAGE_SIZE, CHANNELS).copy(),
            m=m, q=q, g=g, split=row["split"],
        ))
    return SceneDataset(records, codebook_seed=manifest.codebook_seed, dim=manifest.dim, split_spec=manifest.split)


def image_to_bytes(image: np.ndarray) -> np.ndarray:
    """[0, 1] floats to uint8, rounding half up."""
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(image: np.ndarray, path: PathLike) -> None:
    """Saves a ``(28, 28, 3)`` image as binary PPM (P6, maxval 255)."""
    buffer = io.BytesIO()
    Image.fromarray(image_to_bytes(image)).save(buffer, format="PPM")
    atomic_write_bytes(path, buffer.getvalue())


def read_ppm(path: PathLike) -> np.ndarray:
    """Loads a PPM (or any Pillow-readable RGB image) as ``(28, 28, 3)`` floats in [0, 1]."""
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as e:
        raise DatasetFormatError(f"cannot read image {path}: {e}") from e
    if pixels.shape != (IMAGE_SIZE, IMAGE_SIZE, CHANNELS):
        raise DatasetFormatError(f"image {path} is {pixels.shape}, expected {(IMAGE_SIZE, IMAGE_SIZE, CHANNELS)}")
    return pixels


def checkpoint_bytes(model: MlpModel, codebook_seed: int) -> bytes:
    """
    Serializes a model.

    Layout: ``HDVQA1``, u32 layer count, u32 widths (count + 1 of them),
    float32 tensors W1 b1 W2 b2 W3 b3 (row-major), u64 init seed, u64 codebook
    seed. All integers and floats little-endian.
    """
    sizes = model.layer_sizes
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(sizes) - 1), struct.pack(f"<{len(sizes)}I", *sizes)]
    parts += [p.astype("<f4").tobytes() for p in model.params]
    parts.append(struct.pack("<QQ", model.init_seed, codebook_seed))
    return b"".join(parts)


def write_checkpoint(model: MlpModel, codebook_seed: int, path: PathLike) -> None:
    """Writes a checkpoint via write-then-rename."""
    model.check_finite()
    atomic_write_bytes(path, checkpoint_bytes(model, codebook_seed))


def read_checkpoint(path: PathLike) -> Tuple[MlpModel, int]:
    """
    Loads a checkpoint.

    Returns:
        Tuple[MlpModel, int]: The model and the codebook seed it was trained with.

    Raises:
        CheckpointError: On a bad magic, truncated file or trailing bytes.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")

    try:
        offset = len(CHECKPOINT_MAGIC)
        (layers,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if layers != 3:
            raise CheckpointError(f"{path}: expected 3 layers, found {layers}")
        sizes = struct.unpack_from(f"<{layers + 1}I", data, offset)
        offset += 4 * (layers + 1)
        params = []
        for shape in layer_shapes(sizes):
            count = int(np.prod(shape))
            tensor = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
            params.append(tensor.astype(np.float64).reshape(shape))
            offset += 4 * count
        init_seed, codebook_seed = struct.unpack_from("<QQ", data, offset)
        offset += 16
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path} is truncated: {e}") from e
    if offset != len(data):
        raise CheckpointError(f"{path} has {len(data) - offset} trailing bytes")

    model = MlpModel(sizes, params, init_seed=init_seed)
    logger.debug("loaded checkpoint %s (%s)", path, ", ".join(PARAMETER_NAMES))
    return model, codebook_seed
