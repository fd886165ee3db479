"""Binary file formats: models, compressed models, datasets.

All three formats share one frame:

    magic (4 bytes) | version (u16 LE) | header_len (u32 LE) |
    header (canonical JSON, UTF-8) | payload | crc32 (u32 LE)

The checksum covers every byte before it.  Numeric payloads are
little-endian regardless of host; weights and biases are stored as 32-bit
floats, images as 16-bit unsigned ADC values.  Writes go to a temporary
file in the target directory and are renamed into place, so a reader
never observes a half-written file.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .compression import (
    CompressedLayer,
    CompressedModel,
    HuffmanTable,
    huffman_decode,
    huffman_encode,
    layer_core_block,
    pack_bits,
    unpack_bits,
)
from .errors import (
    ChecksumMismatch,
    CorruptStream,
    InvalidParams,
    PixelOutOfRange,
    Truncated,
    VersionUnsupported,
)
from .features import ADC_MAX, AnnotatedSequence, Annotation
from .model import (
    Activation,
    LayerKind,
    LayerParams,
    LayerSpec,
    ModelSpec,
    Parameters,
    chain,
    validate,
)

FORMAT_VERSION = 1

MAGIC_MODEL = b"MGNN"
MAGIC_COMPRESSED = b"MGCM"
MAGIC_DATASET = b"MGDS"

_PREFIX = struct.Struct("<4sHI")


def _atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _frame(magic: bytes, header: dict, payload: bytes) -> bytes:
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = _PREFIX.pack(magic, FORMAT_VERSION, len(header_bytes)) + header_bytes + payload
    return body + struct.pack("<I", zlib.crc32(body))


def _unframe(data: bytes, magic: bytes) -> tuple[dict, bytes]:
    if len(data) < _PREFIX.size + 4:
        raise Truncated("file shorter than the fixed prelude")
    got_magic, version, header_len = _PREFIX.unpack_from(data)
    if got_magic != magic:
        raise CorruptStream(f"bad magic {got_magic!r}, expected {magic!r}")
    if version > FORMAT_VERSION:
        raise VersionUnsupported(f"file version {version} is newer than {FORMAT_VERSION}")
    if len(data) < _PREFIX.size + header_len + 4:
        raise Truncated("file ends inside the header")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) != stored_crc:
        raise ChecksumMismatch("checksum does not match file contents")
    header_bytes = data[_PREFIX.size : _PREFIX.size + header_len]
    try:
        header = json.loads(header_bytes.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptStream(f"unreadable header: {exc}") from None
    return header, data[_PREFIX.size + header_len : -4]


def _spec_to_header(spec: ModelSpec) -> dict:
    return {
        "features": spec.features,
        "layers": [
            {
                "kind": layer.kind.value,
                "neurons": layer.neurons,
                "activation": layer.activation.value,
            }
            for layer in spec.layers
        ],
    }


def _spec_from_header(header: dict) -> ModelSpec:
    try:
        return chain(
            int(header["features"]),
            [
                (
                    LayerKind(entry["kind"]),
                    int(entry["neurons"]),
                    Activation(entry["activation"]),
                )
                for entry in header["layers"]
            ],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptStream(f"malformed model description: {exc}") from None


# --- model files -------------------------------------------------------------

def save_model(
    path: str | Path,
    spec: ModelSpec,
    params: Parameters,
    meta: dict | None = None,
) -> None:
    """Write spec and parameters; values are rounded to 32-bit floats."""
    validate(spec, params)
    header = _spec_to_header(spec)
    header["format"] = "model"
    if meta:
        header["meta"] = meta
    blocks = []
    for lp in params.layers:
        blocks.append(np.asarray(lp.weights, dtype="<f4").tobytes())
        blocks.append(np.asarray(lp.biases, dtype="<f4").tobytes())
    _atomic_write(path, _frame(MAGIC_MODEL, header, b"".join(blocks)))


def load_model(path: str | Path) -> tuple[ModelSpec, Parameters]:
    """Read a model file back; inverse of :func:`save_model`."""
    header, payload = _unframe(Path(path).read_bytes(), MAGIC_MODEL)
    spec = _spec_from_header(header)
    expected = 4 * sum(l.neurons * l.fan_in + l.neurons for l in spec.layers)
    if len(payload) != expected:
        raise Truncated(
            f"payload holds {len(payload)} bytes, header implies {expected}"
        )
    layers = []
    offset = 0
    for layer in spec.layers:
        n_w = layer.neurons * layer.fan_in
        w = np.frombuffer(payload, dtype="<f4", count=n_w, offset=offset)
        offset += 4 * n_w
        b = np.frombuffer(payload, dtype="<f4", count=layer.neurons, offset=offset)
        offset += 4 * layer.neurons
        layers.append(
            LayerParams(
                w.astype(float).reshape(layer.neurons, layer.fan_in),
                b.astype(float),
            )
        )
    return spec, Parameters(layers)


def load_model_meta(path: str | Path) -> dict:
    header, _ = _unframe(Path(path).read_bytes(), MAGIC_MODEL)
    return header.get("meta", {})


# --- compressed model files --------------------------------------------------

def save_compressed(path: str | Path, cm: CompressedModel) -> None:
    """Write a compressed model; core blocks optionally Huffman coded."""
    layer_entries = []
    for spec_layer, layer in zip(cm.spec.layers, cm.layers):
        layer_entries.append(
            {
                "kind": spec_layer.kind.value,
                "neurons": spec_layer.neurons,
                "activation": spec_layer.activation.value,
                "shape": list(layer.shape),
                "bits": layer.bits,
                "n_centroids": len(layer.centroids),
                "n_entries": len(layer.indices),
            }
        )
    header = {
        "format": "compressed",
        "features": cm.spec.features,
        "layers": layer_entries,
        "huffman": bool(cm.huffman),
    }
    if cm.stage_sizes:
        header["stage_sizes"] = {k: int(v) for k, v in cm.stage_sizes.items()}
    core = b"".join(layer_core_block(layer) for layer in cm.layers)
    if cm.huffman:
        encoded, table = huffman_encode(core)
        header["code"] = {
            "lengths": {str(sym): length for sym, length in sorted(table.lengths.items())},
            "n_symbols": table.n_symbols,
        }
        core = encoded
    biases = b"".join(
        np.asarray(layer.biases, dtype="<f4").tobytes() for layer in cm.layers
    )
    _atomic_write(path, _frame(MAGIC_COMPRESSED, header, core + biases))


def load_compressed(path: str | Path) -> CompressedModel:
    header, payload = _unframe(Path(path).read_bytes(), MAGIC_COMPRESSED)
    try:
        spec = chain(
            int(header["features"]),
            [
                (
                    LayerKind(e["kind"]),
                    int(e["neurons"]),
                    Activation(e["activation"]),
                )
                for e in header["layers"]
            ],
        )
        entries = header["layers"]
        huffman = bool(header["huffman"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptStream(f"malformed compressed header: {exc}") from None

    bias_bytes = 4 * sum(int(e["neurons"]) for e in entries)
    if len(payload) < bias_bytes:
        raise Truncated("payload shorter than the bias block")
    core, bias_block_bytes = payload[: len(payload) - bias_bytes], payload[len(payload) - bias_bytes :]

    if huffman:
        code = header.get("code")
        if not isinstance(code, dict):
            raise CorruptStream("huffman flag set but no code table present")
        try:
            table = HuffmanTable(
                {int(sym): int(length) for sym, length in code["lengths"].items()},
                int(code["n_symbols"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptStream(f"malformed code table: {exc}") from None
        core = huffman_decode(core, table)

    layers = []
    offset = 0
    for entry in entries:
        try:
            shape = tuple(int(v) for v in entry["shape"])
            bits = int(entry["bits"])
            n_centroids = int(entry["n_centroids"])
            n_entries = int(entry["n_entries"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptStream(f"malformed layer entry: {exc}") from None
        packed_len = (n_entries * bits + 7) // 8
        need = 4 * n_centroids + packed_len + n_entries
        if offset + need > len(core):
            raise Truncated("core stream ends inside a layer block")
        centroids = np.frombuffer(core, dtype="<f4", count=n_centroids, offset=offset).astype(float)
        offset += 4 * n_centroids
        indices = unpack_bits(core[offset : offset + packed_len], bits, n_entries)
        offset += packed_len
        deltas = np.frombuffer(core, dtype=np.uint8, count=n_entries, offset=offset).astype(np.uint16)
        offset += n_entries
        if bits and n_centroids and indices.size and indices.max() >= n_centroids:
            raise CorruptStream("index stream references a missing centroid")
        layers.append(
            CompressedLayer(
                shape=shape,
                centroids=centroids,
                indices=indices,
                deltas=deltas,
                biases=np.zeros(0),
                bits=bits,
            )
        )
    if offset != len(core):
        raise CorruptStream("core stream longer than the layer blocks imply")

    bias_offset = 0
    for entry, layer in zip(entries, layers):
        n = int(entry["neurons"])
        layer.biases = np.frombuffer(
            bias_block_bytes, dtype="<f4", count=n, offset=bias_offset
        ).astype(float)
        bias_offset += 4 * n

    cm = CompressedModel(spec=spec, layers=layers, huffman=huffman)
    if "stage_sizes" in header:
        cm.stage_sizes = {k: int(v) for k, v in header["stage_sizes"].items()}
    return cm


def compressed_payload_size(path: str | Path) -> int:
    """On-disk payload bytes (parameters only, header and framing excluded).

    This is the measurement compression ratios are judged by: encoded core
    stream plus bias block, plus the serialized code table when Huffman is
    enabled.
    """
    data = Path(path).read_bytes()
    header, payload = _unframe(data, MAGIC_COMPRESSED)
    size = len(payload)
    code = header.get("code")
    if code:
        size += 2 + 2 * len(code["lengths"])
    return size


# --- dataset files -----------------------------------------------------------

def save_dataset(path: str | Path, dataset: AnnotatedSequence) -> None:
    """Write frames and annotations losslessly."""
    frames = np.asarray(dataset.frames)
    if frames.size and (frames.min() < 0 or frames.max() > ADC_MAX):
        raise PixelOutOfRange(f"pixel values must lie in 0..{ADC_MAX}")
    n = len(frames)
    for ann in dataset.annotations:
        if not 0 <= ann.frame < n:
            raise InvalidParams(f"annotation frame {ann.frame} out of range")
    header = {
        "format": "dataset",
        "width": dataset.width,
        "height": dataset.height,
        "fps": dataset.fps,
        "n_frames": n,
        "label_kind": dataset.label_kind,
        "annotations": [[int(a.frame), int(a.label)] for a in dataset.annotations],
    }
    payload = np.ascontiguousarray(frames, dtype="<u2").tobytes()
    _atomic_write(path, _frame(MAGIC_DATASET, header, payload))


def load_dataset(path: str | Path) -> AnnotatedSequence:
    header, payload = _unframe(Path(path).read_bytes(), MAGIC_DATASET)
    try:
        width = int(header["width"])
        height = int(header["height"])
        n = int(header["n_frames"])
        fps = float(header["fps"])
        label_kind = str(header["label_kind"])
        annotations = [
            Annotation(int(frame), int(label)) for frame, label in header["annotations"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptStream(f"malformed dataset header: {exc}") from None
    expected = 2 * n * width * height
    if len(payload) != expected:
        raise Truncated(f"payload holds {len(payload)} bytes, header implies {expected}")
    frames = (
        np.frombuffer(payload, dtype="<u2")
        .reshape(n, height, width)
        .astype(np.uint16)
    )
    dataset = AnnotatedSequence(
        width=width,
        height=height,
        frames=frames,
        annotations=annotations,
        label_kind=label_kind,
        fps=fps,
    )
    dataset.check()
    return dataset
