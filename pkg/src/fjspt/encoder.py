"""Structure-aware heterogeneous graph encoder.

Nodes are embedded per class, then refined by per-class attention blocks:
operations aggregate from their machine and vehicle neighbors, machines
from their operation neighbors and all machines, vehicles from their
operation neighbors. Attention scores are augmented with the edge
embedding through a small two-layer transform before the softmax, and the
edge embeddings themselves are refreshed from those augmented scores. A
final global block repeats the same aggregation with one shared parameter
set over all classes. Edges run both directions between two class blocks;
their two refreshed embeddings are summed before the next layer.

A node whose neighbors are all masked (e.g. a finished operation) passes
through the attention block unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .model import ModelConfig  # noqa: F401  (re-exported for callers)


@dataclass
class EmbeddingSet:
    """Node and edge embeddings after some number of layers.

    Edge embeddings are stored flat: edge_om is (|O|*m, d_e) in
    operation-major order, edge_ov is (|O|*v, d_e) operation-major and
    edge_mm is (m*m, d_e) row-major.
    """
    ops: nk.Tensor2
    machines: nk.Tensor2
    vehicles: nk.Tensor2
    edge_om: nk.Tensor2
    edge_ov: nk.Tensor2
    edge_mm: nk.Tensor2
    layer: int

    @property
    def counts(self):
        return self.ops.shape[0], self.machines.shape[0], self.vehicles.shape[0]


def _pair_transpose(edge_flat, rows, cols):
    """Reorder a flat (rows*cols, d_e) pair tensor from row-major to
    column-major pair order."""
    perm = np.arange(rows * cols).reshape(rows, cols).T.ravel()
    return nk.gather_rows(edge_flat, perm)


def project_inputs(feats, params, cfg):
    """Affine per-class projections of raw features into embedding space."""
    ops = nk.affine(nk.constant(feats.op_feats), params["proj/op/W"], params["proj/op/b"])
    machines = nk.affine(nk.constant(feats.mach_feats),
                         params["proj/mach/W"], params["proj/mach/b"])
    vehicles = nk.affine(nk.constant(feats.veh_feats),
                         params["proj/veh/W"], params["proj/veh/b"])

    def edge(raw, et):
        flat = nk.constant(raw.reshape(-1, 1))
        return nk.affine(flat, params[f"proj/edge_{et}/W"], params[f"proj/edge_{et}/b"])

    return EmbeddingSet(ops=ops, machines=machines, vehicles=vehicles,
                        edge_om=edge(feats.edge_om, "om"),
                        edge_ov=edge(feats.edge_ov, "ov"),
                        edge_mm=edge(feats.edge_mm, "mm"),
                        layer=0)


def hmha(params, prefix, cfg, x, groups):
    """Heterogeneous multi-head attention for one node class.

    `groups` is a list of (edge_type, neighbors, edge_flat, mask) with
    neighbors (N_y, d_h), edge_flat (N_x*N_y, d_e) x-major and mask
    (N_x, N_y). Scores q.k/sqrt(d_k) are concatenated with the edge
    embedding and passed through the per-edge-type two-layer transform;
    the masked softmax runs over all groups jointly. Returns the updated
    node embeddings and one refreshed edge tensor per group (head-mean
    augmented score through a linear map).

    Rows with no admissible neighbor bypass the block unchanged.
    """
    n_x = x.shape[0]
    inv_sqrt_dk = 1.0 / math.sqrt(cfg.d_k)
    full_mask = np.concatenate([mask for (_, _, _, mask) in groups], axis=1)
    isolated = ~full_mask.any(axis=1)
    soft_mask = full_mask
    if isolated.any():
        # Give isolated rows a throwaway uniform softmax; their attention
        # output is discarded by the bypass below.
        soft_mask = full_mask.copy()
        soft_mask[isolated, :] = True

    aug_sums = [None] * len(groups)  # per-group, summed over heads
    total = None
    for z in range(cfg.heads):
        q = nk.linear(x, params[f"{prefix}/Wq{z}"])
        augs = []
        for gi, (etype, neigh, edge_flat, mask) in enumerate(groups):
            k = nk.linear(neigh, params[f"{prefix}/Wk{z}"])
            sigma = nk.scale(nk.matmul(q, nk.transpose(k)), inv_sqrt_dk)
            flat = nk.reshape(sigma, n_x * neigh.shape[0], 1)
            cat = nk.concat_cols([flat, edge_flat])
            hidden = nk.relu(nk.linear(cat, params[f"{prefix}/edge_{etype}/We1"]))
            aug_flat = nk.linear(hidden, params[f"{prefix}/edge_{etype}/We2"])
            aug = nk.reshape(aug_flat, n_x, neigh.shape[0])
            augs.append(aug)
            aug_sums[gi] = aug if aug_sums[gi] is None else nk.add(aug_sums[gi], aug)
        attn = nk.softmax_masked(nk.concat_cols(augs), soft_mask)
        values = nk.concat_rows([nk.linear(neigh, params[f"{prefix}/Wv{z}"])
                                 for (_, neigh, _, _) in groups])
        contrib = nk.linear(nk.matmul(attn, values), params[f"{prefix}/Wo{z}"])
        total = contrib if total is None else nk.add(total, contrib)

    if isolated.any():
        keep = nk.constant(isolated.astype(float).reshape(n_x, 1))
        passthrough = nk.constant(1.0 - isolated.astype(float).reshape(n_x, 1))
        total = nk.add(nk.mul(total, passthrough), nk.mul(x, keep))

    new_edges = []
    for gi, (etype, neigh, _, _) in enumerate(groups):
        mean_aug = nk.scale(aug_sums[gi], 1.0 / cfg.heads)
        flat = nk.reshape(mean_aug, n_x * neigh.shape[0], 1)
        new_edges.append(nk.linear(flat, params[f"{prefix}/edge_{etype}/We3"]))
    return total, new_edges


def _add_norm_ff(params, prefix, cfg, x, attended):
    h1 = nk.instance_norm(nk.add(x, attended),
                          params[f"{prefix}/an1/g"], params[f"{prefix}/an1/b"])
    ff = nk.linear(nk.relu(nk.linear(h1, params[f"{prefix}/ff/W1"])),
                   params[f"{prefix}/ff/W2"])
    return nk.instance_norm(nk.add(h1, ff),
                            params[f"{prefix}/an2/g"], params[f"{prefix}/an2/b"])


def sub_encode_layer(E, feats, params, cfg, layer):
    """One per-class encoding layer (operation, machine, vehicle blocks).

    All three blocks read the previous layer's embeddings. The two
    directed refreshes of each operation-machine and operation-vehicle
    edge are summed into the edge tensor passed onward.
    """
    n_ops, m, v = E.counts
    mask_mm = np.ones((m, m), dtype=bool)
    om_t = _pair_transpose(E.edge_om, n_ops, m)
    ov_t = _pair_transpose(E.edge_ov, n_ops, v)

    hm_ops, (e_om_o, e_ov_o) = hmha(
        params, f"enc{layer}/op", cfg, E.ops,
        [("om", E.machines, E.edge_om, feats.mask_om),
         ("ov", E.vehicles, E.edge_ov, feats.mask_ov)])
    hm_mach, (e_om_m, e_mm) = hmha(
        params, f"enc{layer}/mach", cfg, E.machines,
        [("om", E.ops, om_t, feats.mask_om.T),
         ("mm", E.machines, E.edge_mm, mask_mm)])
    hm_veh, (e_ov_v,) = hmha(
        params, f"enc{layer}/veh", cfg, E.vehicles,
        [("ov", E.ops, ov_t, feats.mask_ov.T)])

    ops = _add_norm_ff(params, f"enc{layer}/op", cfg, E.ops, hm_ops)
    machines = _add_norm_ff(params, f"enc{layer}/mach", cfg, E.machines, hm_mach)
    vehicles = _add_norm_ff(params, f"enc{layer}/veh", cfg, E.vehicles, hm_veh)

    edge_om = nk.add(e_om_o, _pair_transpose(e_om_m, m, n_ops))
    edge_ov = nk.add(e_ov_o, _pair_transpose(e_ov_v, v, n_ops))
    return EmbeddingSet(ops=ops, machines=machines, vehicles=vehicles,
                        edge_om=edge_om, edge_ov=edge_ov, edge_mm=e_mm,
                        layer=layer)


def global_encode_layer(E, feats, params, cfg):
    """Final layer: one shared attention/feed-forward parameter set over
    all node classes, normalized jointly across the whole node set."""
    n_ops, m, v = E.counts
    mask_mm = np.ones((m, m), dtype=bool)
    om_t = _pair_transpose(E.edge_om, n_ops, m)
    ov_t = _pair_transpose(E.edge_ov, n_ops, v)

    hm_ops, (e_om_o, e_ov_o) = hmha(
        params, "encG", cfg, E.ops,
        [("om", E.machines, E.edge_om, feats.mask_om),
         ("ov", E.vehicles, E.edge_ov, feats.mask_ov)])
    hm_mach, (e_om_m, e_mm) = hmha(
        params, "encG", cfg, E.machines,
        [("om", E.ops, om_t, feats.mask_om.T),
         ("mm", E.machines, E.edge_mm, mask_mm)])
    hm_veh, (e_ov_v,) = hmha(
        params, "encG", cfg, E.vehicles,
        [("ov", E.ops, ov_t, feats.mask_ov.T)])

    merged = _add_norm_ff(params, "encG", cfg,
                          nk.concat_rows([E.ops, E.machines, E.vehicles]),
                          nk.concat_rows([hm_ops, hm_mach, hm_veh]))
    ops = nk.gather_rows(merged, np.arange(n_ops))
    machines = nk.gather_rows(merged, np.arange(n_ops, n_ops + m))
    vehicles = nk.gather_rows(merged, np.arange(n_ops + m, n_ops + m + v))

    edge_om = nk.add(e_om_o, _pair_transpose(e_om_m, m, n_ops))
    edge_ov = nk.add(e_ov_o, _pair_transpose(e_ov_v, v, n_ops))
    return EmbeddingSet(ops=ops, machines=machines, vehicles=vehicles,
                        edge_om=edge_om, edge_ov=edge_ov, edge_mm=e_mm,
                        layer=E.layer + 1)


def encode(feats, params, cfg):
    """Full encoder pass for one decision step."""
    E = project_inputs(feats, params, cfg)
    for layer in range(1, cfg.layers):
        E = sub_encode_layer(E, feats, params, cfg, layer)
    return global_encode_layer(E, feats, params, cfg)
