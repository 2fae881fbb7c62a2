import numpy as np
import pytest

import fjspt.numkernel as nk
from fjspt import environment as env
from fjspt.encoder import (EmbeddingSet, encode, hmha, project_inputs,
                           sub_encode_layer)
from fjspt.hetgraph import featurize
from fjspt.instance import Instance, generate_instance
from fjspt.model import ModelConfig, make_parameters
from tests.fdtools import fd_check, scalarize

TINY = ModelConfig(d_h=8, heads=2, d_z=4, d_ff=16, layers=2)


def _feats(inst):
    return featurize(env.reset(inst))


def test_projection_shapes_and_bias_only_on_zero_features():
    inst = generate_instance(3, 2, 2, seed=0)
    feats = _feats(inst)
    store = make_parameters(TINY, seed=1)
    E = project_inputs(feats, store, TINY)
    assert E.ops.shape == (inst.total_ops, TINY.d_h)
    assert E.machines.shape == (inst.m, TINY.d_h)
    assert E.vehicles.shape == (inst.v, TINY.d_h)
    assert E.edge_om.shape == (inst.total_ops * inst.m, TINY.d_e)

    feats.op_feats[:] = 0.0
    E0 = project_inputs(feats, store, TINY)
    assert np.allclose(E0.ops.value, store["proj/op/b"].value)


def _single_pair_params():
    """Fixed 1-head, d_h=2 parameters for the hand-worked example."""
    store = nk.ParameterStore(seed=0)
    store.add("blk/Wq0", np.array([[0.1, 0.2], [0.3, 0.4]]))
    store.add("blk/Wk0", np.array([[0.5, 0.6], [0.7, 0.8]]))
    store.add("blk/Wv0", np.array([[1.0, 0.0], [0.0, 1.0]]))
    store.add("blk/Wo0", np.array([[1.0, 0.0], [0.0, 1.0]]))
    store.add("blk/edge_om/We1", np.array([[0.2, 0.4], [-0.3, 0.5]]))
    store.add("blk/edge_om/We2", np.array([[0.6, -0.2]]))
    store.add("blk/edge_om/We3", np.array([[2.0]]))
    return store


def test_hmha_hand_computed_single_pair():
    cfg = ModelConfig(d_h=2, heads=1, d_z=2, d_ff=4, layers=2)
    store = _single_pair_params()
    x = nk.constant(np.array([[1.0, 2.0]]))
    y = nk.constant(np.array([[0.5, -1.0]]))
    edge = nk.constant(np.array([[0.25]]))
    mask = np.array([[True]])
    out, (new_edge,) = hmha(store, "blk", cfg, x, [("om", y, edge, mask)])

    # independent straight-line recomputation
    q = np.array([0.1 * 1 + 0.2 * 2, 0.3 * 1 + 0.4 * 2])
    k = np.array([0.5 * 0.5 + 0.6 * -1, 0.7 * 0.5 + 0.8 * -1])
    sigma = float(q @ k) / np.sqrt(2.0)
    hidden = np.maximum(np.array([0.2 * sigma + 0.4 * 0.25,
                                  -0.3 * sigma + 0.5 * 0.25]), 0.0)
    aug = 0.6 * hidden[0] - 0.2 * hidden[1]
    # one neighbor: attention weight is exactly 1, so the node output is
    # Wo @ (Wv @ y) = y under identity value/output maps
    assert np.allclose(out.value, [[0.5, -1.0]], atol=1e-12)
    assert new_edge.value[0, 0] == pytest.approx(2.0 * aug, abs=1e-12)


def test_single_neighbor_attention_weight_is_one():
    cfg = TINY
    store = make_parameters(cfg, seed=5)
    x = nk.constant(np.random.default_rng(0).normal(size=(1, cfg.d_h)))
    y = nk.constant(np.random.default_rng(1).normal(size=(1, cfg.d_h)))
    edge = nk.constant(np.array([[0.4]]))
    out, _ = hmha(store, "enc1/op", cfg, x, [("om", y, edge, np.array([[True]]))])
    # attention over a singleton is 1 regardless of scores: output must be
    # sum_z Wo_z @ Wv_z @ y
    expected = sum(store[f"enc1/op/Wo{z}"].value @ store[f"enc1/op/Wv{z}"].value
                   @ y.value.T for z in range(cfg.heads)).T
    assert np.allclose(out.value, expected, atol=1e-12)


def test_masked_neighbor_values_have_no_influence():
    inst = generate_instance(3, 3, 2, seed=2)
    state = env.reset(inst)
    env.apply_action(state, env.feasible_actions(state)[0])
    feats = featurize(state)
    store = make_parameters(TINY, seed=3)
    ref = encode(feats, store, TINY)

    # perturb every masked edge feature: embeddings must not move at all
    tampered = featurize(state)
    tampered.edge_om = tampered.edge_om.copy()
    tampered.edge_om[~tampered.mask_om] = 999.0
    tampered.edge_ov = tampered.edge_ov.copy()
    tampered.edge_ov[~tampered.mask_ov] = -555.0
    new = encode(tampered, store, TINY)
    assert np.array_equal(ref.ops.value, new.ops.value)
    assert np.array_equal(ref.machines.value, new.machines.value)
    assert np.array_equal(ref.vehicles.value, new.vehicles.value)


def test_isolated_node_passes_through_hmha():
    cfg = TINY
    store = make_parameters(cfg, seed=7)
    rng = np.random.default_rng(4)
    x = nk.constant(rng.normal(size=(3, cfg.d_h)))
    y = nk.constant(rng.normal(size=(2, cfg.d_h)))
    edge = nk.constant(rng.normal(size=(6, 1)))
    mask = np.array([[True, False], [False, False], [True, True]])
    out, _ = hmha(store, "enc1/op", cfg, x, [("om", y, edge, mask)])
    assert np.array_equal(out.value[1], x.value[1])
    assert not np.array_equal(out.value[0], x.value[0])


def test_machine_embeddings_ignore_vehicle_features_after_one_sublayer():
    inst = generate_instance(3, 2, 2, seed=6)
    feats = _feats(inst)
    store = make_parameters(TINY, seed=8)
    E = project_inputs(feats, store, TINY)
    out = sub_encode_layer(E, feats, store, TINY, 1)

    tampered = featurize(env.reset(inst))
    tampered.veh_feats = tampered.veh_feats + 3.0
    E2 = project_inputs(tampered, store, TINY)
    out2 = sub_encode_layer(E2, tampered, store, TINY, 1)
    # no machine-vehicle edges: machines cannot see vehicle features yet
    assert np.allclose(out.machines.value, out2.machines.value, atol=1e-12)
    assert not np.allclose(out.ops.value, out2.ops.value, atol=1e-6)


def test_shapes_preserved_through_layers():
    inst = generate_instance(4, 3, 2, seed=1)
    feats = _feats(inst)
    store = make_parameters(TINY, seed=2)
    E = encode(feats, store, TINY)
    assert E.layer == TINY.layers
    assert E.ops.shape == (inst.total_ops, TINY.d_h)
    assert E.machines.shape == (inst.m, TINY.d_h)
    assert E.vehicles.shape == (inst.v, TINY.d_h)
    assert E.edge_om.shape == (inst.total_ops * inst.m, TINY.d_e)
    assert E.edge_ov.shape == (inst.total_ops * inst.v, TINY.d_e)
    assert E.edge_mm.shape == (inst.m * inst.m, TINY.d_e)


def test_reference_config_dimensions():
    cfg = ModelConfig()
    assert cfg.layers == 2
    assert cfg.d_h == 128 and cfg.d_e == 1
    assert cfg.heads == 8 and cfg.d_k == 16
    assert cfg.d_ff == 512 and cfg.d_z == 16


def test_permutation_equivariance():
    jobs = (
        ({0: 3, 1: 5}, {0: 2}),
        ({1: 4}, {0: 6, 1: 1}),
        ({0: 2},),
    )
    travel = ((0, 2, 1), (2, 0, 3), (1, 3, 0))
    inst = Instance(name="perm", n=3, m=2, v=2, jobs=jobs, travel=travel)
    perm_jobs = (jobs[2], jobs[0], jobs[1])
    inst_p = Instance(name="perm2", n=3, m=2, v=2, jobs=perm_jobs, travel=travel)
    store = make_parameters(TINY, seed=11)
    E = encode(_feats(inst), store, TINY)
    E_p = encode(_feats(inst_p), store, TINY)

    # op row mapping: original jobs (0,1,2) -> permuted positions (1,2,0)
    orig_rows = {(i, j): inst.op_index(i, j) for (i, j) in inst.op_ids}
    new_pos = {0: 1, 1: 2, 2: 0}
    for (i, j), row in orig_rows.items():
        prow = inst_p.op_index(new_pos[i], j)
        assert np.allclose(E.ops.value[row], E_p.ops.value[prow], atol=1e-9)
    assert np.allclose(E.machines.value, E_p.machines.value, atol=1e-9)
    assert np.allclose(E.vehicles.value, E_p.vehicles.value, atol=1e-9)


def test_same_parameters_run_any_size():
    store = make_parameters(TINY, seed=4)
    for shape in ((1, 1, 1), (3, 2, 2), (6, 4, 3)):
        inst = generate_instance(*shape, seed=0)
        E = encode(_feats(inst), store, TINY)
        assert E.ops.shape == (inst.total_ops, TINY.d_h)


def test_encoder_gradients_match_finite_differences():
    inst = generate_instance(2, 2, 1, seed=0)
    feats = _feats(inst)
    cfg = ModelConfig(d_h=4, heads=2, d_z=2, d_ff=4, layers=2)
    store = make_parameters(cfg, seed=9)
    rng = np.random.default_rng(3)
    w_ops = rng.normal(size=(inst.total_ops, cfg.d_h))

    leaves = [store[name] for name in
              ("proj/op/W", "enc1/op/Wq0", "enc1/op/edge_om/We1",
               "enc1/mach/ff/W1", "encG/an2/g", "proj/edge_ov/W")]

    def build():
        E = encode(feats, store, cfg)
        return scalarize(E.ops, w_ops)

    assert fd_check(build, leaves) < 1e-4
