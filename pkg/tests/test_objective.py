import numpy as np
import pytest
from conftest import rel_err
from hypothesis import given, settings
from hypothesis import strategies as st

from uvq import objective as obj
from uvq.assignment import LayerAssignment, build_assignment, ratios, reconstruct_hard
from uvq.codebook import fit_universal_codebook
from uvq.errors import ContractError, StateError
from uvq.nn import build_net, zoo
from uvq.pnc import PncConfig, build_assignments


def test_task_loss_examples():
    y = np.array([[0.2, 0.8], [1.0, 0.0]])
    assert obj.task_loss(y, y) == 0.0
    assert obj.task_loss(y + 1.0, y) == 1.0
    out = np.array([[np.sqrt(0.5)], [np.sqrt(1.5)]])
    assert obj.task_loss(out, np.zeros((2, 1))) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        obj.task_loss(y, y[:, :1])


def test_task_loss_grad_matches_definition():
    rng = np.random.default_rng(0)
    out, y = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    g = obj.task_loss_grad(out, y)
    h = 1e-6
    e = np.zeros_like(out)
    e[1, 2] = h
    fd = (obj.task_loss(out + e, y) - obj.task_loss(out - e, y)) / (2 * h)
    assert g[1, 2] == pytest.approx(fd, rel=1e-7)


def test_kd_loss_examples():
    f = {"a": np.zeros((1, 4)), "b": np.ones((1, 2))}
    assert obj.kd_loss(f, f) == 0.0
    shifted = {"a": np.ones((1, 4)), "b": np.ones((1, 2))}
    assert obj.kd_loss(f, shifted) == 4.0
    f2 = {**f, "c": np.full((1, 3), 7.0)}
    s2 = {**shifted, "c": np.full((1, 3), 7.0)}
    assert obj.kd_loss(f2, s2) == obj.kd_loss(f, shifted)


def test_kd_loss_batch_mean():
    fp = {"a": np.zeros((2, 2))}
    q = {"a": np.array([[1.0, 1.0], [0.0, 0.0]])}
    assert obj.kd_loss(fp, q) == 1.0


def test_kd_missing_block():
    with pytest.raises(ContractError):
        obj.kd_loss({"a": np.zeros(1)}, {"b": np.zeros(1)})


def _uniform_la(n, s, frozen=None):
    la = LayerAssignment(0, 1, s, 1, np.tile(np.arange(n), (s, 1)), np.zeros((s, n)), np.arange(n)[:, None] * 1.0)
    if frozen is not None:
        la.frozen[:] = frozen
    return la


def test_reg_loss_examples():
    assert obj.reg_loss([_uniform_la(4, 5)]) == pytest.approx(3.0)
    assert obj.reg_loss([_uniform_la(4, 5), _uniform_la(2, 3)]) == pytest.approx(4.0)
    assert obj.reg_loss([_uniform_la(4, 5, frozen=0)]) == 0.0
    one_hot = _uniform_la(3, 2)
    one_hot.logits[:] = [[800.0, 0.0, 0.0], [0.0, 0.0, 800.0]]
    assert obj.reg_loss([one_hot]) == 0.0


def test_reg_loss_excludes_frozen_but_divides_by_all():
    la = _uniform_la(4, 4, frozen=[0, 1, -1, -1])
    assert obj.reg_loss([la]) == pytest.approx(4 * 2 * 0.75 / 4)


def test_total_loss():
    assert obj.total_loss(0.0, 0.0, 0.0).total == 0.0
    parts = obj.total_loss(1.0, 2.0, 3.0)
    assert parts.total == 6.0
    assert parts.as_dict() == {"task": 1.0, "kd": 2.0, "reg": 3.0, "total": 6.0}
    assert obj.total_loss(1.0, 2.0, 3.0, (1.0, 0.0, 2.0)).total == 7.0


# ---------------------------------------------------------------------------
# gradients into the logits

def _setup(name, seed=0, n=4, k=64):
    net = build_net(name, seed)
    cb = fit_universal_codebook([build_net(m, seed) for m in zoo.NET_NAMES], k, 4, seed=seed).at_storage_precision()
    fp, q = net.copy(), net.copy()
    assignments = build_assignments(q, cb, PncConfig(candidates=n, head_policy="universal", seed=seed))
    rng = np.random.default_rng(seed)
    for la in assignments:
        la.logits = la.logits + rng.normal(scale=0.5, size=la.logits.shape)
    qnet = obj.QuantizedNet(q, assignments)
    x = rng.normal(size=(6, *net.input_shape))
    y = rng.normal(size=(6, net.predict(x[:1]).shape[1]))
    taps = q.block_names()
    _, feats_fp = fp.forward(x, taps=taps)
    fp.clear()

    def loss():
        qnet.load_soft()
        out, feats = qnet.forward(x, taps=taps)
        q.clear()
        return obj.task_loss(out, y) + obj.kd_loss(feats_fp, feats) + obj.reg_loss(assignments)

    def grads():
        qnet.load_soft()
        out, feats = qnet.forward(x, taps=taps)
        return obj.backward_to_logits(qnet, obj.task_loss_grad(out, y), obj.kd_loss_grads(feats_fp, feats))

    return qnet, assignments, loss, grads


def logit_fd_errors(name, seed, samples=8, h=1e-5):
    qnet, assignments, loss, grads = _setup(name, seed)
    logit_grads, _ = grads()
    rng = np.random.default_rng(seed + 100)
    errs = []
    for _ in range(samples):
        la = assignments[rng.integers(len(assignments))]
        s = rng.integers(la.num_subvectors)
        row = la.logits[s]
        fd = np.zeros(la.n)
        for m in range(la.n):
            z0 = row[m]
            row[m] = z0 + h
            lp = loss()
            row[m] = z0 - h
            lm = loss()
            row[m] = z0
            fd[m] = (lp - lm) / (2 * h)
        errs.append(rel_err(logit_grads[la.layer][s], fd))
    return errs


@pytest.mark.parametrize("name", zoo.NET_NAMES)
def test_logit_gradients_match_finite_differences(name):
    assert max(logit_fd_errors(name, seed=0)) < 1e-4


@pytest.mark.parametrize("name", ["mlp-3x64", "cnn-small"])
def test_aux_parameter_gradients(name):
    qnet, _, loss, grads = _setup(name, seed=1)
    _, param_grads = grads()
    params = qnet.net.parameters()
    h = 1e-7  # small enough not to cross a ReLU kink with random inputs
    for key in qnet.aux_parameter_names()[:3]:
        p = params[key]
        fd = np.zeros_like(p)
        for j in range(min(p.size, 5)):
            old = p.flat[j]
            p.flat[j] = old + h
            lp = loss()
            p.flat[j] = old - h
            lm = loss()
            p.flat[j] = old
            fd.flat[j] = (lp - lm) / (2 * h)
        n = min(p.size, 5)
        assert rel_err(param_grads[key].flat[:n], fd.flat[:n]) < 1e-5, key


def test_aux_parameters_exclude_compressed_weights():
    qnet, assignments, _, grads = _setup("mlp-3x64")
    names = qnet.aux_parameter_names()
    assert not any(n.endswith(".weight") for n in names)
    _, param_grads = grads()
    for la in assignments:
        assert f"{la.layer}.weight" not in param_grads


def test_logit_gradients_sum_to_zero():
    _, _, _, grads = _setup("mlp-2x32", seed=3)
    for g in grads()[0].values():
        assert np.abs(g.sum(axis=1)).max() < 1e-9


def test_frozen_rows_get_zero_gradient():
    _, assignments, _, grads = _setup("ae-small", seed=2)
    assignments[0].frozen[::2] = 0
    for la in assignments[1:]:
        la.frozen[:] = 1
    g = grads()[0]
    assert not g[assignments[0].layer][::2].any()
    assert g[assignments[0].layer][1::2].any()
    for la in assignments[1:]:
        assert not g[la.layer].any()


def test_fully_frozen_network_is_hard_network():
    qnet, assignments, _, grads = _setup("mlp-2x32", seed=4)
    for la in assignments:
        la.frozen[:] = la.hard_slots()
    assert obj.reg_loss(assignments) == 0.0
    logit_grads, _ = grads()
    assert all(not g.any() for g in logit_grads.values())
    x = np.random.default_rng(0).normal(size=(5, 2))
    qnet.load_soft()
    soft_out = qnet.net.predict(x)
    for la in assignments:
        qnet.net.set_weight_matrix(la.layer, reconstruct_hard(la))
    np.testing.assert_array_equal(qnet.net.predict(x), soft_out)


def test_stale_forward_state_rejected():
    qnet, assignments, _, _ = _setup("mlp-2x32")
    with pytest.raises(StateError):
        obj.backward_to_logits(qnet, np.zeros((1, 2)))
    qnet.load_soft()
    out, _ = qnet.forward(np.zeros((1, 2)))
    assignments[0].logits[0, 0] += 1.0
    with pytest.raises(StateError):
        obj.backward_to_logits(qnet, np.zeros_like(out))


def test_forward_requires_loaded_weights():
    qnet, _, _, _ = _setup("mlp-2x32")
    with pytest.raises(StateError):
        qnet.forward(np.zeros((1, 2)))


def test_losses_are_non_negative():
    qnet, assignments, loss, _ = _setup("cnn-small")
    assert loss() >= 0
    assert obj.reg_loss(assignments) >= 0


# ---------------------------------------------------------------------------
# Adamax step

def test_step_zero_gradient_keeps_logits():
    z = {0: np.array([[1.0, -2.0]])}
    out = obj.step(obj.make_ratio_optimizer(), z, {0: np.zeros((1, 2))})
    np.testing.assert_array_equal(out[0], z[0])


@settings(max_examples=50, deadline=None)
@given(g=st.floats(-1e3, 1e3).filter(lambda v: abs(v) > 1e-3))
def test_step_first_update_magnitude_is_lr(g):
    out = obj.step(obj.make_ratio_optimizer(0.3), {0: np.zeros((1, 1))}, {0: np.full((1, 1), g)})
    assert out[0][0, 0] == pytest.approx(-0.3 * np.sign(g), rel=1e-6)


def test_step_deterministic():
    rng = np.random.default_rng(0)
    z = {1: rng.normal(size=(3, 4))}
    g = {1: rng.normal(size=(3, 4))}
    a = obj.step(obj.make_ratio_optimizer(), z, g)
    b = obj.step(obj.make_ratio_optimizer(), z, g)
    assert a[1].tobytes() == b[1].tobytes()


def test_step_shape_mismatch():
    with pytest.raises(ValueError):
        obj.step(obj.make_ratio_optimizer(), {0: np.zeros((2, 2))}, {0: np.zeros((2, 3))})


def test_soft_ratios_unchanged_by_forward():
    qnet, assignments, loss, _ = _setup("mlp-3x64")
    before = [ratios(la).copy() for la in assignments]
    loss()
    for la, r in zip(assignments, before):
        np.testing.assert_array_equal(ratios(la), r)


def test_gradient_of_init_assignment():
    # a sub-vector identical to its best candidate still gets a finite gradient
    c = np.array([[0.0, 0.0], [1.0, 1.0]])
    la = build_assignment(0, np.array([[1.0, 1.0]]), c, 2)
    assert np.isfinite(la.logits).all()
