"""Named-tensor checkpoint archive.

The file is a safetensors archive: an 8-byte little-endian header length, a
JSON header giving every tensor's dtype, shape and byte range, then the raw
little-endian data.  Run metadata (model spec, step, seed, config hash, ...)
is stored as one JSON string under the ``typeshift`` metadata key.

Tensor names:

* ``gen/<layer>/<param>``, e.g. ``gen/conv3/kernel``, ``gen/conv3/bn/running_mean``,
  ``gen/deconv8/cin/gamma``, ``gen/style_embedding``
* ``disc/<layer>/<param>``, e.g. ``disc/conv2/kernel``, ``disc/fc/weight``
* ``opt_g/<param name>/{exp_avg,exp_avg_sq,step}`` and the same under ``opt_d``
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import torch
from safetensors.torch import load as st_load
from safetensors.torch import save as st_save

from .errors import ConfigMismatch, CorruptCheckpoint
from .netarch import Discriminator, Generator, ModelSpec

META_KEY = "typeshift"
HASH_ALGORITHM = "sha256-canonical-json"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def module_tensors(prefix: str, module: torch.nn.Module) -> dict:
    return {f"{prefix}/{k.replace('.', '/')}": v.detach().clone().contiguous()
            for k, v in module.state_dict().items()}


def load_module_tensors(prefix: str, module: torch.nn.Module, tensors: dict) -> None:
    state = {}
    for key in module.state_dict():
        name = f"{prefix}/{key.replace('.', '/')}"
        if name not in tensors:
            raise ConfigMismatch(f"checkpoint lacks tensor {name}")
        state[key] = tensors[name]
    module.load_state_dict(state)


def optimizer_tensors(prefix: str, opt: torch.optim.Optimizer, module: torch.nn.Module) -> dict:
    out = {}
    for name, p in module.named_parameters():
        st = opt.state.get(p)
        if not st:
            continue
        for key, val in st.items():
            out[f"{prefix}/{name.replace('.', '/')}/{key}"] = val.detach().clone().contiguous()
    return out


def load_optimizer_tensors(prefix: str, opt: torch.optim.Optimizer, module: torch.nn.Module,
                           tensors: dict) -> None:
    for name, p in module.named_parameters():
        base = f"{prefix}/{name.replace('.', '/')}/"
        keys = [k for k in tensors if k.startswith(base) and "/" not in k[len(base):]]
        if keys:
            opt.state[p] = {k[len(base):]: tensors[k].clone() for k in keys}


@dataclass
class Checkpoint:
    tensors: dict
    meta: dict = field(default_factory=dict)

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(**self.meta["spec"])

    @property
    def step(self) -> int:
        return int(self.meta.get("step", 0))

    def to_bytes(self) -> bytes:
        meta = json.dumps(self.meta, sort_keys=True, separators=(",", ":"))
        return st_save(self.tensors, metadata={META_KEY: meta})

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        try:
            header_len = int.from_bytes(blob[:8], "little")
            header = json.loads(blob[8:8 + header_len])
            meta_raw = (header.get("__metadata__") or {}).get(META_KEY)
        except (ValueError, AttributeError) as exc:
            raise CorruptCheckpoint(f"not a checkpoint archive: {exc}") from exc
        if meta_raw is None:
            raise CorruptCheckpoint("archive carries no typeshift metadata")
        try:
            tensors = st_load(blob)
        except Exception as exc:  # safetensors raises its own error type
            raise CorruptCheckpoint(f"unreadable tensor data: {exc}") from exc
        return cls(tensors, json.loads(meta_raw))

    def save(self, path) -> Path:
        """Atomic write: temp file in the destination directory, then rename."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".ckpt")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(self.to_bytes())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def generator(self, dtype=None) -> Generator:
        g = Generator(self.spec)
        sample = self.tensors.get("gen/conv1/kernel")
        g.to(dtype or (sample.dtype if sample is not None else torch.float32))
        load_module_tensors("gen", g, self.tensors)
        return g

    def discriminator(self, dtype=None) -> Discriminator:
        d = Discriminator(self.spec)
        sample = self.tensors.get("disc/conv1/kernel")
        d.to(dtype or (sample.dtype if sample is not None else torch.float32))
        load_module_tensors("disc", d, self.tensors)
        return d


def from_models(gen: Generator, disc: Discriminator | None = None, meta: dict | None = None,
                opt_g=None, opt_d=None) -> Checkpoint:
    tensors = module_tensors("gen", gen)
    if disc is not None:
        tensors.update(module_tensors("disc", disc))
    if opt_g is not None:
        tensors.update(optimizer_tensors("opt_g", opt_g, gen))
    if opt_d is not None and disc is not None:
        tensors.update(optimizer_tensors("opt_d", opt_d, disc))
    meta = dict(meta or {})
    meta.setdefault("spec", gen.spec.to_dict())
    return Checkpoint(tensors, meta)


def as_checkpoint(obj) -> Checkpoint:
    if isinstance(obj, Checkpoint):
        return obj
    return Checkpoint.load(obj)
