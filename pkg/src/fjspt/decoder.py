"""Three-stage action decoder and episode rollout.

Each decision step selects an operation, then a machine for it, then a
vehicle, each from a masked categorical distribution. The first stage
queries a context built from the mean graph embedding and the previous
step's glimpse (sum of the previously chosen node embeddings, zero at the
first step). Later stages query with the previous stage's attention
output; their keys add the relevant edge embedding of the already chosen
operation. Selection logits are clipped with a tanh before masking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import numkernel as nk
from .environment import (ActionTriple, ScheduleError, apply_action,
                          feasible_structure, makespan, makespan_lower_bound,
                          reset)
from .hetgraph import featurize
from .encoder import encode


@dataclass
class DecodedAction:
    action: ActionTriple
    logp: nk.Tensor2                 # (1, 1) log-probability of the triple
    stage_logps: list                # three (1, 1) tensors
    glimpse: nk.Tensor2              # (1, d_h) sum of the chosen embeddings
    stage_probs: list = field(default_factory=list)    # numpy copies
    stage_logits: list = field(default_factory=list)   # pre-mask numpy copies
    stage_candidates: list = field(default_factory=list)


def _mha(params, prefix, cfg, query_in, keys_in, values_from=None):
    """Single-query multi-head attention; returns a (1, d_h) context."""
    values_from = values_from if values_from is not None else keys_in
    inv_sqrt_dk = 1.0 / math.sqrt(cfg.d_k)
    ones = np.ones((1, keys_in.shape[0]), dtype=bool)
    out = None
    for z in range(cfg.heads):
        q = nk.linear(query_in, params[f"{prefix}/Wq{z}"])
        k = nk.linear(keys_in, params[f"{prefix}/Wk{z}"])
        v = nk.linear(values_from, params[f"{prefix}/Wv{z}"])
        attn = nk.softmax_masked(nk.scale(nk.matmul(q, nk.transpose(k)), inv_sqrt_dk),
                                 ones)
        contrib = nk.linear(nk.matmul(attn, v), params[f"{prefix}/Wo{z}"])
        out = contrib if out is None else nk.add(out, contrib)
    return out


def _selection_logits(context, candidates, cfg):
    """Clipped compatibility between the stage context and each candidate."""
    raw = nk.scale(nk.matmul(context, nk.transpose(candidates)),
                   1.0 / math.sqrt(cfg.d_k))
    return nk.scale(nk.tanh(raw), cfg.logit_clip)


def _pick(probs, mode, rng, forced_pos):
    if forced_pos is not None:
        return forced_pos
    p = probs.value[0]
    if mode == "greedy":
        return int(np.argmax(p))
    if mode != "sample":
        raise ValueError(f"unknown decode mode {mode!r}")
    if rng is None:
        raise ValueError("sample mode requires an rng")
    cum = np.cumsum(p)
    pos = int(np.searchsorted(cum, rng.random(), side="right"))
    if pos >= len(p):  # guard against cumulative rounding below 1.0
        pos = int(np.flatnonzero(p > 0.0)[-1])
    return pos


def _logp_of(probs, pos):
    return nk.log(nk.gather_rows(nk.transpose(probs), [pos]))


def decode(E, state, params, cfg, mode="sample", rng=None, glimpse=None,
           forced=None):
    """Select one feasible (operation, machine, vehicle) triple.

    mode "sample" draws from each stage's distribution, "greedy" takes the
    argmax (ties to the lowest index). `forced` replays a given triple,
    returning its log-probability under the current parameters.
    """
    inst = state.inst
    ops, machines_for, vehicles = feasible_structure(state)
    if not ops:
        raise ScheduleError("decode requires at least one feasible action")

    n_ops, n_mach, n_veh = E.counts
    d = DecodedAction(action=None, logp=None, stage_logps=[], glimpse=None)

    # Stage 1: operation. The attention ranges over every operation node;
    # only feasible operations survive the selection mask.
    hbar = nk.mean_rows(nk.concat_rows([E.ops, E.machines, E.vehicles]))
    if glimpse is None:
        glimpse = nk.constant(np.zeros((1, cfg.d_h)))
    ctx0 = nk.concat_cols([hbar, glimpse])
    h_c1 = _mha(params, "dec1", cfg, ctx0, E.ops)
    logits1 = _selection_logits(h_c1, E.ops, cfg)
    mask1 = np.zeros((1, n_ops), dtype=bool)
    eligible_ids = [inst.op_index(i, j) for (i, j) in ops]
    mask1[0, eligible_ids] = True
    probs1 = nk.softmax_masked(logits1, mask1)
    forced_pos1 = None
    if forced is not None:
        forced_pos1 = inst.op_index(forced.job, forced.op)
        if not mask1[0, forced_pos1]:
            raise ScheduleError(f"forced operation {forced} is not feasible")
    sel_op = _pick(probs1, mode, rng, forced_pos1)
    job, op = inst.op_ids[sel_op]
    d.stage_logps.append(_logp_of(probs1, sel_op))
    d.stage_probs.append(probs1.value.copy())
    d.stage_logits.append(logits1.value.copy())
    d.stage_candidates.append(eligible_ids)

    # Stage 2: machine among the idle compatible ones; keys carry the
    # chosen operation's machine-edge embedding.
    cand_m = machines_for[(job, op)]
    mach_rows = nk.gather_rows(E.machines, cand_m)
    edge_rows = nk.gather_rows(E.edge_om, [sel_op * n_mach + k for k in cand_m])
    h_c2 = _mha(params, "dec2", cfg, h_c1, nk.add(mach_rows, edge_rows),
                values_from=None)
    logits2 = _selection_logits(h_c2, mach_rows, cfg)
    probs2 = nk.softmax_masked(logits2, np.ones((1, len(cand_m)), dtype=bool))
    forced_pos2 = None
    if forced is not None:
        if forced.machine not in cand_m:
            raise ScheduleError(f"forced machine {forced.machine} is not feasible")
        forced_pos2 = cand_m.index(forced.machine)
    sel_m = _pick(probs2, mode, rng, forced_pos2)
    machine = cand_m[sel_m]
    d.stage_logps.append(_logp_of(probs2, sel_m))
    d.stage_probs.append(probs2.value.copy())
    d.stage_logits.append(logits2.value.copy())
    d.stage_candidates.append(list(cand_m))

    # Stage 3: vehicle among the idle ones; keys carry the chosen
    # operation's vehicle-edge embedding.
    veh_rows = nk.gather_rows(E.vehicles, vehicles)
    vedge_rows = nk.gather_rows(E.edge_ov, [sel_op * n_veh + u for u in vehicles])
    h_c3 = _mha(params, "dec3", cfg, h_c2, nk.add(veh_rows, vedge_rows),
                values_from=None)
    logits3 = _selection_logits(h_c3, veh_rows, cfg)
    probs3 = nk.softmax_masked(logits3, np.ones((1, len(vehicles)), dtype=bool))
    forced_pos3 = None
    if forced is not None:
        if forced.vehicle not in vehicles:
            raise ScheduleError(f"forced vehicle {forced.vehicle} is not feasible")
        forced_pos3 = vehicles.index(forced.vehicle)
    sel_v = _pick(probs3, mode, rng, forced_pos3)
    vehicle = vehicles[sel_v]
    d.stage_logps.append(_logp_of(probs3, sel_v))
    d.stage_probs.append(probs3.value.copy())
    d.stage_logits.append(logits3.value.copy())
    d.stage_candidates.append(list(vehicles))

    d.action = ActionTriple(job, op, machine, vehicle)
    d.logp = nk.add(nk.add(d.stage_logps[0], d.stage_logps[1]), d.stage_logps[2])
    d.glimpse = nk.add(nk.add(nk.gather_rows(E.ops, [sel_op]),
                              nk.gather_rows(E.machines, [machine])),
                       nk.gather_rows(E.vehicles, [vehicle]))
    return d


@dataclass
class TrajectoryStep:
    features: object
    action: ActionTriple
    logp: float
    reward: Fraction


@dataclass
class Trajectory:
    steps: list
    makespan: int
    initial_bound: Fraction
    instance_name: str
    logp_nodes: list = field(default_factory=list)  # only when recording grads

    @property
    def total_return(self):
        return sum((s.reward for s in self.steps), Fraction(0))

    @property
    def total_logp(self):
        return sum(s.logp for s in self.steps)


def rollout(inst, params, cfg, mode="sample", rng=None, record_grad=False,
            keep_features=True):
    """Run one full episode: featurize, encode, decode, apply, repeat.

    With record_grad the per-step log-probability nodes stay connected to
    the parameters so a policy-gradient loss can be backpropagated;
    otherwise the whole rollout runs without graph construction.
    """
    state = reset(inst)
    initial_bound = makespan_lower_bound(state)
    steps = []
    logp_nodes = []

    def run():
        glimpse = None
        while not state.done:
            feats = featurize(state)
            E = encode(feats, params, cfg)
            da = decode(E, state, params, cfg, mode=mode, rng=rng, glimpse=glimpse)
            out = apply_action(state, da.action)
            glimpse = da.glimpse
            steps.append(TrajectoryStep(features=feats if keep_features else None,
                                        action=da.action,
                                        logp=float(da.logp.value[0, 0]),
                                        reward=out.reward))
            if record_grad:
                logp_nodes.append(da.logp)

    if record_grad:
        run()
    else:
        with nk.no_grad():
            run()
    return Trajectory(steps=steps, makespan=makespan(state),
                      initial_bound=initial_bound, instance_name=inst.name,
                      logp_nodes=logp_nodes)
