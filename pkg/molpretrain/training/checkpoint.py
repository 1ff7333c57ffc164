"""Checkpoint directory reading and writing.

Binary tensor files (``params.bin``, ``adam.bin``) use this layout, all
integers unsigned 32 bit little endian::

    b"MPCK" | version | count
    count x ( name_len | name (utf-8) | rank | dims... | float32 LE data )
    crc32 of everything above

Loading reads and verifies a whole file into a temporary dict before anything
is handed back, so a truncated or corrupted file never leaves a model half
loaded. Every file is written to a temporary name and moved into place with
``os.replace``; ``cursor.txt`` is written last and carries a CRC32 of each
other state file, which ties the set to one step.
"""

from __future__ import annotations

from typing import Any, Mapping

import json
import os
import struct
import zlib
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from molpretrain.errors import CheckpointError
from molpretrain.model.config import ModelConfig, param_shapes
from molpretrain.model.encoder import TransformerModel
from molpretrain.seeding import rng_from_json, rng_state_to_json
from molpretrain.tensor.optim import AdamState
from molpretrain.tensor.tensor import Tensor

MAGIC = b"MPCK"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")

PARAMS_FILE = "params.bin"
ADAM_FILE = "adam.bin"
CONFIG_FILE = "config.txt"
TRAIN_FILE = "train.txt"
RNG_FILE = "rng.txt"
CURSOR_FILE = "cursor.txt"
VOCAB_FILE = "vocab.txt"
NORM_FILE = "norm_stats.csv"
LOG_FILE = "log.jsonl"


def atomic_write(path: Path, payload: bytes | str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(payload, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def encode_tensors(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(arrays))]
    for name, array in arrays.items():
        raw = name.encode()
        parts += [_U32.pack(len(raw)), raw, _U32.pack(array.ndim)]
        parts += [_U32.pack(d) for d in array.shape]
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + _U32.pack(zlib.crc32(body))


def decode_tensors(blob: bytes, source: str = "checkpoint") -> OrderedDict[str, np.ndarray]:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError(f"{source}: not a tensor file")
    body, trailer = blob[:-4], blob[-4:]
    if zlib.crc32(body) != _U32.unpack(trailer)[0]:
        raise CheckpointError(f"{source}: checksum mismatch (truncated or corrupted)")
    (version,) = _U32.unpack_from(body, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported format version {version}")
    (count,) = _U32.unpack_from(body, 8)
    offset = 12
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    try:
        for _ in range(count):
            (name_len,) = _U32.unpack_from(body, offset)
            offset += 4
            name = body[offset : offset + name_len].decode()
            offset += name_len
            (rank,) = _U32.unpack_from(body, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}I", body, offset)
            offset += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            end = offset + 4 * size
            if end > len(body):
                raise CheckpointError(f"{source}: tensor {name} is truncated")
            out[name] = np.frombuffer(body[offset:end], dtype="<f4").reshape(shape).astype(np.float32)
            offset = end
    except (struct.error, UnicodeDecodeError) as err:
        raise CheckpointError(f"{source}: malformed tensor record ({err})") from None
    if offset != len(body):
        raise CheckpointError(f"{source}: trailing bytes after {count} tensors")
    return out


def save_tensors(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    atomic_write(Path(path), encode_tensors(arrays))


def load_tensors(path: str | Path) -> OrderedDict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"missing tensor file {path}")
    return decode_tensors(path.read_bytes(), str(path))


def payload_bytes(path: str | Path) -> int:
    """Bytes of tensor data in a tensor file (headers and trailer excluded)."""
    return sum(a.nbytes for a in load_tensors(path).values())


@dataclass
class Cursor:
    """Where training stands: loader position, step and early-stopping bookkeeping.

    ``eval_pending`` marks a step on the evaluation schedule whose evaluation
    has not been logged yet.
    """

    pass_index: int = 0
    row: int = 0
    step: int = 0
    best_val: float = float("inf")
    best_step: int = 0
    loss_sum: float = 0.0
    loss_count: int = 0
    stopped_by: str | None = None
    eval_pending: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> Cursor:
        try:
            return cls(**json.loads(text))
        except (TypeError, json.JSONDecodeError) as err:
            raise CheckpointError(f"malformed cursor file: {err}") from None


def load_model(checkpoint_dir: str | Path) -> TransformerModel:
    """Model from ``config.txt`` and ``params.bin``, verified against the name order contract."""
    checkpoint_dir = Path(checkpoint_dir)
    config = ModelConfig.load(checkpoint_dir / CONFIG_FILE)
    arrays = load_tensors(checkpoint_dir / PARAMS_FILE)
    expected = param_shapes(config)
    if [n for n, _ in expected] != list(arrays):
        raise CheckpointError(f"{checkpoint_dir}: parameter names or order do not match config.txt")
    for name, shape in expected:
        if arrays[name].shape != shape:
            raise CheckpointError(f"{checkpoint_dir}: {name} has shape {arrays[name].shape}, expected {shape}")
    params = OrderedDict((n, Tensor(a, requires_grad=True, name=n, dtype=np.float32)) for n, a in arrays.items())
    return TransformerModel(config, params)


def save_model(checkpoint_dir: str | Path, model: TransformerModel) -> None:
    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    atomic_write(checkpoint_dir / CONFIG_FILE, model.config.to_text())
    names = [n for n, _ in param_shapes(model.config)]
    save_tensors(checkpoint_dir / PARAMS_FILE, OrderedDict((n, model.params[n].data) for n in names))


def _digest(payload: bytes | str) -> int:
    return zlib.crc32(payload.encode() if isinstance(payload, str) else payload)


def save_training_state(
    checkpoint_dir: str | Path,
    model: TransformerModel,
    adam: AdamState,
    rng: np.random.Generator,
    cursor: Cursor,
    train_settings: Mapping[str, Any],
) -> None:
    """Write everything needed to continue a run bit for bit.

    The cursor file goes last and records a CRC32 of every other state file,
    so a save cut short leaves a set that fails to load instead of one that
    mixes two steps.
    """
    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    names = [n for n, _ in param_shapes(model.config)]
    moments: OrderedDict[str, np.ndarray] = OrderedDict()
    for name in names:
        moments["m." + name] = adam.m.get(name, np.zeros_like(model.params[name].data))
        moments["v." + name] = adam.v.get(name, np.zeros_like(model.params[name].data))
    payloads: dict[str, bytes | str] = {
        CONFIG_FILE: model.config.to_text(),
        PARAMS_FILE: encode_tensors(OrderedDict((n, model.params[n].data) for n in names)),
        ADAM_FILE: encode_tensors(moments),
        RNG_FILE: rng_state_to_json(rng),
        TRAIN_FILE: "".join(f"{k}={v}\n" for k, v in train_settings.items()),
    }
    for name, payload in payloads.items():
        atomic_write(checkpoint_dir / name, payload)
    record = {
        **asdict(cursor),
        "adam_step": adam.step,
        "files": {name: _digest(payload) for name, payload in payloads.items()},
    }
    atomic_write(checkpoint_dir / CURSOR_FILE, json.dumps(record, sort_keys=True))


def load_training_state(
    checkpoint_dir: str | Path,
) -> tuple[TransformerModel, AdamState, np.random.Generator, Cursor, dict[str, str]]:
    """Inverse of :func:`save_training_state`; nothing is returned unless every file checks out."""
    checkpoint_dir = Path(checkpoint_dir)
    for required in (CONFIG_FILE, PARAMS_FILE, ADAM_FILE, RNG_FILE, CURSOR_FILE, TRAIN_FILE):
        if not (checkpoint_dir / required).is_file():
            raise CheckpointError(f"{checkpoint_dir} is incomplete: {required} is missing")
    try:
        raw_cursor = json.loads((checkpoint_dir / CURSOR_FILE).read_text())
    except json.JSONDecodeError as err:
        raise CheckpointError(f"malformed cursor file: {err}") from None
    digests = raw_cursor.pop("files", None) if isinstance(raw_cursor, dict) else None
    if not isinstance(digests, dict):
        raise CheckpointError(f"{checkpoint_dir}: {CURSOR_FILE} does not list the state files")
    for name, expected_crc in digests.items():
        if _digest((checkpoint_dir / name).read_bytes()) != expected_crc:
            raise CheckpointError(f"{checkpoint_dir}: {name} was not written at step {raw_cursor.get('step')}")
    model = load_model(checkpoint_dir)
    moments = load_tensors(checkpoint_dir / ADAM_FILE)
    names = [n for n, _ in param_shapes(model.config)]
    expected = [p + n for n in names for p in ("m.", "v.")]
    if list(moments) != expected:
        raise CheckpointError(f"{checkpoint_dir}: optimizer state does not match the parameters")
    adam = AdamState(
        m={n: moments["m." + n] for n in names},
        v={n: moments["v." + n] for n in names},
        step=int(raw_cursor.pop("adam_step", 0)),
    )
    cursor = Cursor.from_json(json.dumps(raw_cursor))
    try:
        rng = rng_from_json((checkpoint_dir / RNG_FILE).read_text())
    except (ValueError, KeyError, AttributeError) as err:
        raise CheckpointError(f"{checkpoint_dir}: unreadable RNG state ({err})") from None
    settings = {}
    for line in (checkpoint_dir / TRAIN_FILE).read_text().splitlines():
        key, _, value = line.partition("=")
        settings[key] = value
    return model, adam, rng, cursor, settings
