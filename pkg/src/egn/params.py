"""Model parameters: declaration, seeded initialization, binary container.

The container format is: magic bytes ``EGN1``, nine little-endian u32 header
words (blocks, d_u, d_v, d_e, d_t, d_bil, k_rbf, l_sbf, variant code), then
the raw float64 weight blobs in declaration order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .config import DIMENET, GEMNET, ModelConfig
from .elements import MAX_Z

MAGIC = b"EGN1"
_VARIANT_CODE = {DIMENET: 0, GEMNET: 1}
_CODE_VARIANT = {code: name for name, code in _VARIANT_CODE.items()}


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    fan_in: int


def param_specs(config: ModelConfig) -> list[ParamSpec]:
    """All weight arrays of the model, in declaration (= serialization) order."""
    c = config
    specs = [
        ParamSpec("atom_embedding", (MAX_Z, c.d_v), 1),
        ParamSpec("edge_init.w", (c.d_e, c.k_rbf), c.k_rbf),
        ParamSpec("edge_init.b", (c.d_e,), c.k_rbf),
    ]
    for b in range(c.blocks):
        p = f"block{b}."
        specs.append(ParamSpec(p + "tu.down", (c.d_t, c.d_e), c.d_e))
        specs.append(ParamSpec(p + "tu.rbf_gate", (c.d_t, c.k_rbf), c.k_rbf))
        specs.append(ParamSpec(p + "tu.sbf_gate", (c.d_t, c.k_rbf * c.l_sbf), c.k_rbf * c.l_sbf))
        if c.variant == GEMNET:
            specs.append(ParamSpec(p + "tu.bilinear_a", (c.d_bil, c.d_t), c.d_t))
            specs.append(ParamSpec(p + "tu.bilinear_b", (c.d_bil, c.d_t), c.d_t))
            specs.append(ParamSpec(p + "tu.bilinear_proj", (c.d_t, c.d_bil), c.d_bil))
        specs.append(ParamSpec(p + "tu.up", (c.d_e, c.d_t), c.d_t))
        specs.append(ParamSpec(p + "eu.w1", (c.d_e, 2 * c.d_e), 2 * c.d_e))
        specs.append(ParamSpec(p + "eu.b1", (c.d_e,), 2 * c.d_e))
        specs.append(ParamSpec(p + "eu.w2", (c.d_e, c.d_e), c.d_e))
        specs.append(ParamSpec(p + "eu.b2", (c.d_e,), c.d_e))
        specs.append(ParamSpec(p + "nu.w1", (c.d_v, c.d_e), c.d_e))
        specs.append(ParamSpec(p + "nu.b1", (c.d_v,), c.d_e))
        specs.append(ParamSpec(p + "nu.w2", (c.d_v, c.d_v), c.d_v))
        specs.append(ParamSpec(p + "nu.b2", (c.d_v,), c.d_v))
        if c.variant == GEMNET:
            specs.append(ParamSpec(p + "eu2.w1", (c.d_e, c.d_e + c.d_v), c.d_e + c.d_v))
            specs.append(ParamSpec(p + "eu2.b1", (c.d_e,), c.d_e + c.d_v))
            specs.append(ParamSpec(p + "eu2.w2", (c.d_e, c.d_e), c.d_e))
            specs.append(ParamSpec(p + "eu2.b2", (c.d_e,), c.d_e))
            specs.append(ParamSpec(p + "sym.w", (c.d_e, c.d_e), c.d_e))
        specs.append(ParamSpec(p + "gu.w1", (c.d_u, c.d_v), c.d_v))
        specs.append(ParamSpec(p + "gu.b1", (c.d_u,), c.d_v))
        specs.append(ParamSpec(p + "gu.w2", (c.d_u, c.d_u), c.d_u))
        specs.append(ParamSpec(p + "gu.b2", (c.d_u,), c.d_u))
    specs.append(ParamSpec("energy_head.w", (1, c.d_u), c.d_u))
    specs.append(ParamSpec("energy_head.b", (1,), c.d_u))
    if c.variant == GEMNET:
        specs.append(ParamSpec("force_head.w", (1, c.d_e), c.d_e))
    return specs


@dataclass(frozen=True)
class ModelParams:
    config: ModelConfig
    arrays: dict[str, np.ndarray]  # insertion order == declaration order

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def validate(self) -> None:
        specs = param_specs(self.config)
        if [s.name for s in specs] != list(self.arrays):
            raise ValueError("parameter names do not match the declared layout")
        for spec in specs:
            arr = self.arrays[spec.name]
            if arr.shape != spec.shape or arr.dtype != np.float64:
                raise ValueError(f"{spec.name}: expected float64 {spec.shape}, got {arr.dtype} {arr.shape}")

    def map_arrays(self, fn) -> dict[str, np.ndarray]:
        return {name: fn(arr) for name, arr in self.arrays.items()}


def init_params(config: ModelConfig) -> ModelParams:
    """Initialize all weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].

    Each array draws from its own stream split off the config seed, so the
    initialization of early arrays never shifts when later ones are added.
    """
    root = np.random.SeedSequence(config.seed)
    specs = param_specs(config)
    children = root.spawn(len(specs))
    arrays: dict[str, np.ndarray] = {}
    for spec, child in zip(specs, children):
        rng = np.random.default_rng(child)
        bound = 1.0 / np.sqrt(spec.fan_in)
        arrays[spec.name] = rng.uniform(-bound, bound, size=spec.shape)
    return ModelParams(config, arrays)


def zero_params(config: ModelConfig) -> ModelParams:
    arrays = {s.name: np.zeros(s.shape, dtype=np.float64) for s in param_specs(config)}
    return ModelParams(config, arrays)


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.arrays.items()}


def save_params(params: ModelParams, path) -> None:
    c = params.config
    params.validate()
    header = struct.pack(
        "<9I",
        c.blocks, c.d_u, c.d_v, c.d_e, c.d_t, c.d_bil, c.k_rbf, c.l_sbf,
        _VARIANT_CODE[c.variant],
    )
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header)
        for arr in params.arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path, cutoff: float = 1.5, seed: int = 0, workers: int = 1) -> ModelParams:
    """Read a container; non-header config fields come from the arguments."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"bad magic bytes {blob[:4]!r}")
    head = struct.unpack("<9I", blob[4:40])
    variant = _CODE_VARIANT.get(head[8])
    if variant is None:
        raise ValueError(f"unknown variant code {head[8]}")
    config = ModelConfig(
        variant=variant, blocks=head[0], d_u=head[1], d_v=head[2], d_e=head[3],
        d_t=head[4], d_bil=head[5], k_rbf=head[6], l_sbf=head[7],
        cutoff=cutoff, seed=seed, workers=workers,
    )
    arrays: dict[str, np.ndarray] = {}
    offset = 40
    for spec in param_specs(config):
        count = int(np.prod(spec.shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(blob):
            raise ValueError("container truncated")
        flat = np.frombuffer(blob[offset:end], dtype="<f8")
        arrays[spec.name] = flat.reshape(spec.shape).astype(np.float64)
        offset = end
    if offset != len(blob):
        raise ValueError("container has trailing bytes")
    return ModelParams(config, arrays)
