"""
Binary parameter files.

Layout (little-endian):

    8 bytes   magic b"LAMGNET\\0"
    uint32    format version
    uint32    header length H
    H bytes   UTF-8 JSON header: preset, normalizer, fallback size and the
              ordered (name, shape) list of arrays
    float64   every array, row-major, in header order
"""
import json
import logging
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from lamg.exceptions import ParamsFormatError
from lamg.mesher.sizing import SizingNormalizer
from lamg.models.config_models import ModelPreset
from lamg.nnet.network import NetParams

logger = logging.getLogger(__name__)

MAGIC = b"LAMGNET\0"
VERSION = 1


def save_params(path: str, params: NetParams) -> None:
    header = {
        "preset": params.preset.model_dump(),
        "normalizer": params.normalizer.to_dict() if params.normalizer else None,
        "fallback_size": params.fallback_size,
        "arrays": [[name, list(w.shape)] for name, w in params.weights.items()],
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(encoded)))
        f.write(encoded)
        for w in params.weights.values():
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
    logger.info(f"Saved {params.count} parameters to {path}")


def load_params(path: str) -> NetParams:
    """
    Read a parameter file.

    Raises:
        ParamsFormatError: on a wrong magic or version, a truncated body or
            shapes that do not fit the stored preset
    """
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise ParamsFormatError(f"{path}: not a parameter file")
    offset = len(MAGIC)
    if len(data) < offset + 8:
        raise ParamsFormatError(f"{path}: truncated header")
    version, header_len = struct.unpack_from("<II", data, offset)
    if version != VERSION:
        raise ParamsFormatError(f"{path}: unsupported version {version}")
    offset += 8
    try:
        header = json.loads(data[offset:offset + header_len].decode("utf-8"))
        preset = ModelPreset(**header["preset"])
    except (ValueError, KeyError, TypeError) as e:
        raise ParamsFormatError(f"{path}: malformed header: {e}") from e
    offset += header_len

    expected = NetParams.layer_shapes(preset)
    stored = [(name, tuple(shape)) for name, shape in header["arrays"]]
    if stored != list(expected.items()):
        raise ParamsFormatError(f"{path}: array shapes do not match the preset")

    weights = OrderedDict()
    for name, shape in stored:
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(data):
            raise ParamsFormatError(f"{path}: truncated at array {name}")
        weights[name] = np.frombuffer(data[offset:end], dtype="<f8").astype(float).reshape(shape)
        offset = end
    if offset != len(data):
        raise ParamsFormatError(f"{path}: {len(data) - offset} trailing bytes")

    normalizer = SizingNormalizer.from_dict(header["normalizer"]) if header.get("normalizer") else None
    return NetParams(preset, weights, normalizer, float(header.get("fallback_size", 0.5)))
