"""Run configuration files, binary checkpoints and PNG image I/O."""
from __future__ import annotations

import dataclasses
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from .errors import CheckpointError, ConfigError, InputError
from .networks import HyperModel, ModelConfig, PrimaryConfig
from .optim import AdamState
from .pyramid import ScaleGeometry, compute_geometry
from .trainer import Checkpoint, TrainConfig, TrainState

MAGIC = b"MILC"
FORMAT_VERSION = 1
_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}

PathLike = Union[str, os.PathLike]


# -- run configuration

@dataclass
class RunConfig:
    images: list = field(default_factory=list)
    output_dir: str = "runs/default"
    height: Optional[int] = None
    width: Optional[int] = None
    s0: int = 15
    scale_factor: float = 0.6
    num_scales: Optional[int] = None
    blocks: int = 5
    channels: int = 32
    activation: str = "leaky_relu"
    leaky_slope: float = 0.02
    embedding_dim: int = 64
    encoder_channels: list = field(default_factory=lambda: [16, 32, 64, 128])
    encoder_input_size: int = 64
    projection_depth: int = 1
    freeze_embedding: bool = False
    discriminator_mode: str = "hyper"
    encoder_mode: str = "separate"
    precision: int = 32
    iterations_per_scale: int = 500
    lr_g: float = 5e-4
    lr_d: float = 5e-4
    betas: list = field(default_factory=lambda: [0.5, 0.999])
    lr_decay_factor: float = 0.1
    lr_decay_at: float = 0.8
    grad_clip_norm: float = 1.0
    batch_size: int = 1
    lambda_gp: float = 0.1
    lambda_rec: float = 50.0
    d_steps: int = 1
    g_steps: int = 1
    gp_mode: str = "real"
    gp_reduction: str = "patch"
    detach_prev_adv: bool = True
    acc_rec: str = "accumulate"
    seed: int = 0

    def __post_init__(self):
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        defaults = cls()
        for key, value in d.items():
            _check_type(key, value, getattr(defaults, key), known[key].type)
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def model_config(self, num_scales: int) -> ModelConfig:
        return ModelConfig(
            num_scales=num_scales,
            primary=PrimaryConfig(blocks=self.blocks, channels=self.channels,
                                  leaky_slope=self.leaky_slope, activation=self.activation),
            embedding_dim=self.embedding_dim, encoder_channels=tuple(self.encoder_channels),
            encoder_input_size=self.encoder_input_size, projection_depth=self.projection_depth,
            freeze_embedding=self.freeze_embedding, discriminator_mode=self.discriminator_mode,
            encoder_mode=self.encoder_mode)

    def train_config(self) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in self.to_dict().items() if k in names})

    def geometry(self, height: int, width: int) -> ScaleGeometry:
        return compute_geometry(self.s0, self.scale_factor, self.height or height, self.width or width,
                                self.num_scales)


def _check_type(key: str, value, default, annotation: str) -> None:
    optional = "Optional" in str(annotation)
    if value is None:
        if optional:
            return
        raise ConfigError(f"config key {key!r} must not be null")
    kind = type(default) if default is not None else int
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"config key {key!r} expects int, got bool")
    if not isinstance(value, kind):
        raise ConfigError(f"config key {key!r} expects {kind.__name__}, got {type(value).__name__}")


def load_run_config(path: PathLike) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object of key/value pairs")
    return RunConfig.from_dict(data)


def save_run_config(cfg: RunConfig, path: PathLike) -> None:
    _atomic_write(Path(path), (json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n").encode())


# -- checkpoints

def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_array(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    dt = np.dtype(arr.dtype).newbyteorder("<")
    if dt not in _DTYPE_TAGS:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<BB", _DTYPE_TAGS[dt], arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def _read_exact(fh: io.BytesIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("checkpoint is truncated")
    return data


def _read_array(fh: io.BytesIO):
    (n,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, n).decode("utf-8")
    tag, ndim = struct.unpack("<BB", _read_exact(fh, 2))
    if tag not in _TAG_DTYPES:
        raise CheckpointError(f"unknown dtype tag {tag} for {name}")
    shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
    dt = _TAG_DTYPES[tag]
    count = int(np.prod(shape, dtype=np.int64))
    arr = np.frombuffer(_read_exact(fh, count * dt.itemsize), dtype=dt).reshape(shape)
    return name, arr.astype(dt.newbyteorder("="))


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    model, state = ckpt.model, ckpt.state
    header = {
        "model_config": model.cfg.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "run_config": ckpt.run_config,
        "geometry": {"sizes": [list(s) for s in ckpt.geometry.sizes],
                     "scale_factor": ckpt.geometry.scale_factor, "s0": ckpt.geometry.s0},
        "model_scale": model.scale,
        "frozen": sorted(model.frozen),
        "state": {"scale": state.scale, "iteration": state.iteration,
                  "completed_scales": state.completed_scales, "optimizer_steps": state.optimizer_steps,
                  "adam_t": {n: s.t for n, s in sorted(state.adam.items())},
                  "sigma_ids": list(state.sigmas),
                  "rng": state.rng.bit_generator.state},
    }
    arrays = [(f"param/{n}", p.data) for n, p in sorted(model.params.items())]
    for n, s in sorted(state.adam.items()):
        arrays += [(f"adam.m/{n}", s.m), (f"adam.v/{n}", s.v)]
    arrays += [(f"sigma/{i}", np.asarray(v, dtype=np.float64)) for i, v in state.sigmas.items()]
    arrays.append(("z0", state.z0))
    buf = io.BytesIO()
    buf.write(MAGIC)
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<II", FORMAT_VERSION, len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        _write_array(buf, name, arr)
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path: PathLike) -> None:
    """Write atomically (temp file, then rename)."""
    _atomic_write(Path(path), checkpoint_bytes(ckpt))


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    from .autodiff import Tensor

    fh = io.BytesIO(data)
    if fh.read(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, n = struct.unpack("<II", _read_exact(fh, 8))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    header = json.loads(_read_exact(fh, n).decode("utf-8"))
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    entries = dict(_read_array(fh) for _ in range(count))
    if fh.read(1):
        raise CheckpointError("trailing bytes after the last entry")

    cfg = ModelConfig.from_dict(header["model_config"])
    frozen = set(header["frozen"])
    params = {k[6:]: Tensor(v, requires_grad=k[6:] not in frozen, dtype=v.dtype)
              for k, v in entries.items() if k.startswith("param/")}
    model = HyperModel(cfg, params, header["model_scale"], frozen)
    st = header["state"]
    rng = np.random.default_rng()
    rng.bit_generator.state = st["rng"]
    adam = {name: AdamState(entries[f"adam.m/{name}"], entries[f"adam.v/{name}"], t)
            for name, t in st["adam_t"].items()}
    sigmas = {i: [float(x) for x in entries[f"sigma/{i}"]] for i in st["sigma_ids"]}
    state = TrainState(scale=st["scale"], iteration=st["iteration"], z0=entries["z0"], rng=rng,
                       adam=adam, sigmas=sigmas, completed_scales=st["completed_scales"],
                       optimizer_steps=st["optimizer_steps"])
    g = header["geometry"]
    geom = ScaleGeometry(tuple(tuple(s) for s in g["sizes"]), g["scale_factor"], g["s0"])
    tc = header["train_config"]
    return Checkpoint(model, state, geom, TrainConfig(**tc), header["run_config"])


def load_checkpoint(path: PathLike) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    return checkpoint_from_bytes(data)


# -- images

def load_png(path: PathLike) -> np.ndarray:
    """8-bit RGB image as a float32 ``[3, H, W]`` array in [-1, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except FileNotFoundError:
        raise InputError(f"image not found: {path}") from None
    except OSError as exc:
        raise InputError(f"cannot read image {path}: {exc}") from None
    return (arr / np.float32(127.5) - np.float32(1.0)).transpose(2, 0, 1).copy()


def to_uint8(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise InputError(f"expected a [3, H, W] image, got {arr.shape}")
    return np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def save_png(path: PathLike, image: np.ndarray) -> None:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(image), mode="RGB").save(buf, format="PNG")
    _atomic_write(Path(path), buf.getvalue())


def list_images(directory: PathLike) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise InputError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() == ".png")
