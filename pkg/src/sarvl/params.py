"""Named parameter collections, seeded initialization, and the binary checkpoint format.

Checkpoint layout: magic ``SKLP``, format version u32 LE, u32 byte length of the
canonical (sorted-keys) config JSON followed by that JSON, then every parameter
in lexicographic name order as (name length u32, name bytes, rank u32,
dims u32 x rank, payload little-endian f32).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Iterator, Tuple

import numpy as np
import torch

from .config import ModelConfig
from .errors import CheckpointError, NumericError

DTYPE = torch.float64
MAGIC = b"SKLP"
FORMAT_VERSION = 1
FFN_MULT = 4


@dataclass
class ParamSet:
    """Ordered name -> float64 tensor map plus the config that shaped it.

    Enumeration order is always lexicographic in the parameter name, which is
    what the checkpoint format and the optimizer state rely on.
    """

    entries: Dict[str, torch.Tensor]
    config: ModelConfig
    version: int = 0

    def __post_init__(self):
        self.entries = {name: self.entries[name] for name in sorted(self.entries)}

    def names(self) -> list:
        return list(self.entries)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.entries[name]

    def items(self) -> Iterator[Tuple[str, torch.Tensor]]:
        return iter(self.entries.items())

    def clone(self) -> "ParamSet":
        return ParamSet({n: t.detach().clone() for n, t in self.entries.items()},
                        self.config, self.version)

    def with_grad(self) -> "ParamSet":
        """Detached copy whose tensors require grad (for gradient evaluation)."""
        return ParamSet({n: t.detach().clone().requires_grad_(True) for n, t in self.entries.items()},
                        self.config, self.version)

    def check_finite(self) -> None:
        for name, tensor in self.entries.items():
            if not bool(torch.isfinite(tensor).all()):
                raise NumericError(f"parameter {name!r} contains non-finite values")

    def quantized_f32(self) -> "ParamSet":
        """Round-trip every tensor through float32, as checkpoint IO would."""
        return ParamSet({n: t.detach().to(torch.float32).to(DTYPE) for n, t in self.entries.items()},
                        self.config, self.version)


def _shape_table(cfg: ModelConfig) -> list:
    """Ordered (name, shape, fan_in) triples; fan_in None means init to zeros/ones."""
    d = cfg.embed_dim
    hidden = FFN_MULT * d
    patch_dim = cfg.patch_size * cfg.patch_size
    table = []

    def block(prefix: str):
        for mat, fan in (("wq", d), ("wk", d), ("wv", d), ("wo", d)):
            table.append((f"{prefix}.attn.{mat}", (d, d), fan))
            table.append((f"{prefix}.attn.{mat[1]}b", (d,), None))
        table.append((f"{prefix}.ln1.g", (d,), "one"))
        table.append((f"{prefix}.ln1.b", (d,), None))
        table.append((f"{prefix}.ln2.g", (d,), "one"))
        table.append((f"{prefix}.ln2.b", (d,), None))
        table.append((f"{prefix}.ffn.w1", (d, hidden), d))
        table.append((f"{prefix}.ffn.b1", (hidden,), None))
        table.append((f"{prefix}.ffn.w2", (hidden, d), hidden))
        table.append((f"{prefix}.ffn.b2", (d,), None))

    table.append(("vis.patch_embed.w", (patch_dim, d), patch_dim))
    table.append(("vis.patch_embed.b", (d,), None))
    table.append(("vis.pos", (cfg.max_patches, d), d))
    for layer in range(cfg.num_layers):
        block(f"vis.blk{layer}")
    table.append(("vis.ln_out.g", (d,), "one"))
    table.append(("vis.ln_out.b", (d,), None))
    table.append(("vis.proj.w", (d, d), d))
    table.append(("vis.proj.b", (d,), None))

    table.append(("txt.tok", (cfg.vocab_size, d), d))
    table.append(("txt.pos", (cfg.max_text_len, d), d))
    for layer in range(cfg.num_layers):
        block(f"txt.blk{layer}")
    table.append(("txt.ln_out.g", (d,), "one"))
    table.append(("txt.ln_out.b", (d,), None))
    table.append(("txt.proj.w", (d, d), d))
    table.append(("txt.proj.b", (d,), None))

    for layer in range(cfg.num_layers):
        block(f"fus.blk{layer}")
    table.append(("fus.ln_out.g", (d,), "one"))
    table.append(("fus.ln_out.b", (d,), None))

    table.append(("itm.w", (d,), d))
    table.append(("itm.b", (1,), None))
    table.append(("mlm.w", (d, cfg.vocab_size), d))
    table.append(("mlm.b", (cfg.vocab_size,), None))
    return table


def init_params(config: ModelConfig, seed: int) -> ParamSet:
    """Deterministic init: zero-mean normals scaled by 1/sqrt(fan_in), zero biases."""
    gen = torch.Generator(device="cpu")
    gen.manual_seed(int(seed) & 0x7FFF_FFFF_FFFF_FFFF)
    entries = {}
    for name, shape, fan_in in _shape_table(config):
        if fan_in is None:
            entries[name] = torch.zeros(shape, dtype=DTYPE)
        elif fan_in == "one":
            entries[name] = torch.ones(shape, dtype=DTYPE)
        else:
            scale = 1.0 / float(fan_in) ** 0.5
            entries[name] = torch.randn(shape, generator=gen, dtype=DTYPE) * scale
    params = ParamSet(entries, config, version=0)
    params.check_finite()
    return params


def _config_json(config: ModelConfig) -> bytes:
    payload = {f.name: getattr(config, f.name) for f in fields(config)}
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path: Path, params: ParamSet) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    cfg_bytes = _config_json(params.config)
    buf.write(struct.pack("<I", len(cfg_bytes)))
    buf.write(cfg_bytes)
    for name in sorted(params.entries):
        tensor = params.entries[name]
        name_bytes = name.encode("ascii")
        buf.write(struct.pack("<I", len(name_bytes)))
        buf.write(name_bytes)
        dims = tuple(tensor.shape)
        buf.write(struct.pack("<I", len(dims)))
        for dim in dims:
            buf.write(struct.pack("<I", dim))
        payload = tensor.detach().to(torch.float32).numpy().astype("<f4")
        buf.write(payload.tobytes(order="C"))
    Path(path).write_bytes(buf.getvalue())


def _read_exact(stream: io.BufferedReader, n: int, what: str) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise CheckpointError(f"checkpoint truncated while reading {what}")
    return data


def load_checkpoint(path: Path) -> ParamSet:
    path = Path(path)
    with path.open("rb") as stream:
        magic = stream.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r} in {path}")
        (version,) = struct.unpack("<I", _read_exact(stream, 4, "format version"))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {version}")
        (cfg_len,) = struct.unpack("<I", _read_exact(stream, 4, "config length"))
        config = ModelConfig(**json.loads(_read_exact(stream, cfg_len, "config").decode("utf-8")))
        entries = {}
        while True:
            head = stream.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("checkpoint truncated while reading name length")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(stream, name_len, "name").decode("ascii")
            (rank,) = struct.unpack("<I", _read_exact(stream, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(stream, 4 * rank, "dims"))
            count = int(np.prod(dims)) if dims else 1
            raw = _read_exact(stream, 4 * count, f"payload of {name}")
            arr = np.frombuffer(raw, dtype="<f4").reshape(dims)
            entries[name] = torch.from_numpy(arr.astype(np.float64))
    return ParamSet(entries, config, version=0)


def gradient_of(loss_fn, params: ParamSet) -> Dict[str, torch.Tensor]:
    """Exact analytic gradients of `loss_fn(params)` for every parameter.

    The closure is evaluated on a grad-tracking copy; parameters the loss never
    touches come back as zeros. A non-finite loss raises NumericError.
    """
    tracked = params.with_grad()
    loss = loss_fn(tracked)
    loss = torch.as_tensor(loss, dtype=DTYPE)
    if loss.ndim != 0:
        raise NumericError(f"loss closure must return a scalar, got shape {tuple(loss.shape)}")
    if not bool(torch.isfinite(loss)):
        raise NumericError("loss closure returned a non-finite value")
    leaves = list(tracked.entries.values())
    if loss.grad_fn is None:
        # constant loss: nothing depends on the parameters
        return {n: torch.zeros_like(t) for n, t in params.entries.items()}
    grads = torch.autograd.grad(loss, leaves, allow_unused=True)
    out = {}
    for (name, leaf), grad in zip(tracked.entries.items(), grads):
        out[name] = torch.zeros_like(leaf) if grad is None else grad.detach()
    return out
