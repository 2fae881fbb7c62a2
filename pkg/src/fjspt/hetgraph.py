"""Per-step graph features for the scheduling state.

The state is viewed as a heterogeneous graph over operation, machine and
vehicle nodes with three edge sets: operation-machine (processing times),
operation-vehicle (empty-travel times from the vehicle to the product) and
machine-machine (loaded travel times). The first two are dynamic: an
unscheduled operation is connected to its idle compatible machines and to
all idle vehicles; once assigned, an operation keeps exactly its chosen
machine and vehicle edges until it completes, after which its rows mask
out entirely.

All time-valued entries are divided by the instance's largest single
processing/travel time so feature magnitudes stay comparable across
instance scales.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

OP_FEATS = 7
MACH_FEATS = 4
VEH_FEATS = 4


@dataclass
class HeteroGraphFeatures:
    op_feats: np.ndarray     # |O| x 7
    mach_feats: np.ndarray   # m x 4
    veh_feats: np.ndarray    # v x 4
    edge_om: np.ndarray      # |O| x m scaled processing times (0 if incompatible)
    edge_ov: np.ndarray      # |O| x v scaled off-load travel times
    edge_mm: np.ndarray      # m x m scaled loaded travel times
    mask_om: np.ndarray      # |O| x m bool
    mask_ov: np.ndarray      # |O| x v bool
    scale: float


@dataclass
class NeighborCounts:
    op_machines: np.ndarray  # |𝒩_m(O)| per operation
    op_vehicles: np.ndarray  # |𝒩_v(O)| per operation
    machine_ops: np.ndarray  # |𝒩(M)| per machine
    vehicle_ops: np.ndarray  # |𝒩(V)| per vehicle


def _dynamic_masks(state):
    inst = state.inst
    t = state.clock
    mask_om = np.zeros((inst.total_ops, inst.m), dtype=bool)
    mask_ov = np.zeros((inst.total_ops, inst.v), dtype=bool)
    mach_idle = np.array([b <= t for b in state.mach_busy_until])
    veh_idle = np.array([b <= t for b in state.veh_busy_until])
    for oid, (i, j) in enumerate(inst.op_ids):
        rec = state.records[oid]
        if rec is None:
            for k in inst.jobs[i][j]:
                mask_om[oid, k] = mach_idle[k]
            mask_ov[oid, :] = veh_idle
        elif rec.completion > t:
            mask_om[oid, rec.machine] = True
            mask_ov[oid, rec.vehicle] = True
        # completed operations keep no edges
    return mask_om, mask_ov


def neighbor_counts(state):
    """Node degrees in the two dynamic edge sets, counted from the masks."""
    mask_om, mask_ov = _dynamic_masks(state)
    return NeighborCounts(
        op_machines=mask_om.sum(axis=1),
        op_vehicles=mask_ov.sum(axis=1),
        machine_ops=mask_om.sum(axis=0),
        vehicle_ops=mask_ov.sum(axis=0),
    )


def featurize(state, inst=None):
    """Extract raw node/edge features and masks for the current step.

    Pure function of the state: no mutation, no randomness.

    Operation features: assignment status, machine/vehicle degree, scaled
    processing time (actual if assigned, else the compatible-set mean),
    unfinished-operation count of the job, scaled (estimated) job
    completion, scaled (estimated) start time. Estimates accumulate mean
    processing times of unfinished operations after the last operation
    finished by the clock.
    """
    inst = inst if inst is not None else state.inst
    t = state.clock
    scale = float(inst.max_time())
    mask_om, mask_ov = _dynamic_masks(state)

    op_feats = np.zeros((inst.total_ops, OP_FEATS))
    op_feats[:, 1] = mask_om.sum(axis=1)
    op_feats[:, 2] = mask_ov.sum(axis=1)

    for i in range(inst.n):
        n_i = inst.num_ops(i)
        # last operation of the job finished by the clock
        last_fin = -1
        for j in range(state.next_op[i] - 1, -1, -1):
            if state.op_record(i, j).completion <= t:
                last_fin = j
                break
        fin_completion = state.op_record(i, last_fin).completion if last_fin >= 0 else 0
        unfinished = n_i - (last_fin + 1)
        est_completion = fin_completion + sum(
            float(inst.mean_proc_time(i, j)) for j in range(last_fin + 1, n_i))
        cum_start = float(fin_completion)
        for j in range(n_i):
            oid = inst.op_index(i, j)
            rec = state.records[oid]
            op_feats[oid, 0] = 1.0 if rec is not None else 0.0
            if rec is not None:
                op_feats[oid, 3] = inst.proc_time(i, j, rec.machine) / scale
            else:
                op_feats[oid, 3] = float(inst.mean_proc_time(i, j)) / scale
            op_feats[oid, 4] = unfinished
            op_feats[oid, 5] = est_completion / scale
            if rec is not None:
                op_feats[oid, 6] = rec.start / scale
            else:
                op_feats[oid, 6] = cum_start / scale
            if j > last_fin:
                cum_start += float(inst.mean_proc_time(i, j))

    mach_feats = np.zeros((inst.m, MACH_FEATS))
    for k in range(inst.m):
        mach_feats[k, 0] = 1.0 if state.mach_busy_until[k] > t else 0.0
        mach_feats[k, 1] = mask_om[:, k].sum()
        mach_feats[k, 2] = state.mach_busy_until[k] / scale
        mach_feats[k, 3] = state.machine_utilization(k)

    veh_feats = np.zeros((inst.v, VEH_FEATS))
    for u in range(inst.v):
        veh_feats[u, 0] = 1.0 if state.veh_busy_until[u] > t else 0.0
        veh_feats[u, 1] = mask_ov[:, u].sum()
        veh_feats[u, 2] = state.veh_busy_until[u] / scale
        veh_feats[u, 3] = state.veh_loc[u] / inst.m

    edge_om = np.zeros((inst.total_ops, inst.m))
    for oid, (i, j) in enumerate(inst.op_ids):
        for k, p in inst.jobs[i][j].items():
            edge_om[oid, k] = p / scale

    edge_ov = np.zeros((inst.total_ops, inst.v))
    product = [state.product_location(i) for i in range(inst.n)]
    for oid, (i, j) in enumerate(inst.op_ids):
        for u in range(inst.v):
            edge_ov[oid, u] = inst.travel[state.veh_loc[u]][product[i]] / scale

    edge_mm = np.array([[inst.travel[a + 1][b + 1] for b in range(inst.m)]
                        for a in range(inst.m)], dtype=float) / scale

    return HeteroGraphFeatures(op_feats=op_feats, mach_feats=mach_feats,
                               veh_feats=veh_feats, edge_om=edge_om,
                               edge_ov=edge_ov, edge_mm=edge_mm,
                               mask_om=mask_om, mask_ov=mask_ov, scale=scale)


def features_to_json(feats):
    """Serializable dump of every feature matrix and mask for one step."""
    return json.dumps({
        "op_feats": feats.op_feats.tolist(),
        "mach_feats": feats.mach_feats.tolist(),
        "veh_feats": feats.veh_feats.tolist(),
        "edge_om": feats.edge_om.tolist(),
        "edge_ov": feats.edge_ov.tolist(),
        "edge_mm": feats.edge_mm.tolist(),
        "mask_om": feats.mask_om.astype(int).tolist(),
        "mask_ov": feats.mask_ov.astype(int).tolist(),
        "scale": feats.scale,
    }, indent=1)
