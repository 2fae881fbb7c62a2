"""Network configuration and the full parameter shape table.

The same parameter set runs instances of any size: every matrix acts on
feature or embedding dimensions, never on node counts.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

from . import hetgraph
from . import numkernel as nk

# Edge types each attention block aggregates over. The operation block sees
# machine and vehicle neighbors, the machine block sees operation neighbors
# plus all machines (loaded-travel edges), the vehicle block sees operation
# neighbors. The global block handles all three edge types.
BLOCK_EDGE_TYPES = {
    "op": ("om", "ov"),
    "mach": ("om", "mm"),
    "veh": ("ov",),
}
GLOBAL_EDGE_TYPES = ("om", "ov", "mm")


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions of the encoder/decoder stack.

    The reference setup uses d_h=128, d_e=1, 8 heads, d_z=16, d_ff=512 and
    two encoding layers (one per-class layer plus the global layer).
    """
    d_h: int = 128
    d_e: int = 1
    heads: int = 8
    d_z: int = 16
    d_ff: int = 512
    layers: int = 2
    logit_clip: float = 10.0

    def __post_init__(self):
        if self.d_h % self.heads != 0:
            raise ValueError(f"d_h={self.d_h} must be divisible by heads={self.heads}")
        if self.layers < 1:
            raise ValueError("at least one encoding layer is required")

    @property
    def d_k(self):
        return self.d_h // self.heads

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


def _attention_shapes(table, prefix, cfg, query_dim):
    for z in range(cfg.heads):
        table[f"{prefix}/Wq{z}"] = (cfg.d_k, query_dim)
        table[f"{prefix}/Wk{z}"] = (cfg.d_k, cfg.d_h)
        table[f"{prefix}/Wv{z}"] = (cfg.d_k, cfg.d_h)
        table[f"{prefix}/Wo{z}"] = (cfg.d_h, cfg.d_k)


def _edge_shapes(table, prefix, cfg, edge_types):
    for et in edge_types:
        table[f"{prefix}/edge_{et}/We1"] = (cfg.d_z, 1 + cfg.d_e)
        table[f"{prefix}/edge_{et}/We2"] = (1, cfg.d_z)
        table[f"{prefix}/edge_{et}/We3"] = (cfg.d_e, 1)


def _block_shapes(table, prefix, cfg, edge_types):
    _attention_shapes(table, prefix, cfg, cfg.d_h)
    _edge_shapes(table, prefix, cfg, edge_types)
    table[f"{prefix}/an1/g"] = (1, cfg.d_h)
    table[f"{prefix}/an1/b"] = (1, cfg.d_h)
    table[f"{prefix}/ff/W1"] = (cfg.d_ff, cfg.d_h)
    table[f"{prefix}/ff/W2"] = (cfg.d_h, cfg.d_ff)
    table[f"{prefix}/an2/g"] = (1, cfg.d_h)
    table[f"{prefix}/an2/b"] = (1, cfg.d_h)


def parameter_shapes(cfg):
    """Ordered {name: (rows, cols)} table for every trainable matrix."""
    table = {}
    table["proj/op/W"] = (cfg.d_h, hetgraph.OP_FEATS)
    table["proj/op/b"] = (1, cfg.d_h)
    table["proj/mach/W"] = (cfg.d_h, hetgraph.MACH_FEATS)
    table["proj/mach/b"] = (1, cfg.d_h)
    table["proj/veh/W"] = (cfg.d_h, hetgraph.VEH_FEATS)
    table["proj/veh/b"] = (1, cfg.d_h)
    for et in GLOBAL_EDGE_TYPES:
        table[f"proj/edge_{et}/W"] = (cfg.d_e, 1)
        table[f"proj/edge_{et}/b"] = (1, cfg.d_e)
    for layer in range(1, cfg.layers):
        for cls, etypes in BLOCK_EDGE_TYPES.items():
            _block_shapes(table, f"enc{layer}/{cls}", cfg, etypes)
    _block_shapes(table, "encG", cfg, GLOBAL_EDGE_TYPES)
    _attention_shapes(table, "dec1", cfg, 2 * cfg.d_h)
    _attention_shapes(table, "dec2", cfg, cfg.d_h)
    _attention_shapes(table, "dec3", cfg, cfg.d_h)
    return table


def make_parameters(cfg, seed):
    """Freshly initialized parameter store for this configuration."""
    return nk.init_parameters(parameter_shapes(cfg), seed)
