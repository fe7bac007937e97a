import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fingerpose.encoding import SoftLabel
from fingerpose.errors import DegenerateDistributionError, InvalidArgumentError, NumericFaultError
from fingerpose.estimator import (
    AdamW,
    BatchOutput,
    EstimatorModel,
    HeadOutput,
    NetConfig,
    TrainConfig,
    batch_from_arrays,
    batch_loss,
    cosine_lr,
    forward,
    forward_batch,
    grad_check,
    gradients,
    init_model,
    load_checkpoint,
    loss,
    predict_pose2d,
    random_batch,
    save_checkpoint,
    tiny_config,
    train,
)

HEADS = ("softbin", "trig", "direct")


def _entropy_floor(batch):
    def h(t):
        return float(-np.sum(t * np.log(np.where(t > 0, t, 1.0)))) / t.shape[0]
    return h(batch.t_row) + h(batch.t_col) + 2 * h(batch.t_ang)


def _set(model, name, value):
    model[name][...] = value


def _zero_heads(model):
    for name in model.layout:
        if name.startswith("head."):
            _set(model, name, 0.0)


def test_head_distributions_sum_to_one():
    cfg = tiny_config()
    model = init_model(cfg)
    batch = random_batch(cfg, 6, seed=3)
    out = forward_batch(model, batch.cap, batch.patch)
    for p in (out.p_row, out.p_col, out.p_sin, out.p_cos):
        assert np.all(p >= 0)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_default_network_runs_on_sensor_sized_inputs():
    model = init_model(NetConfig())
    rng = np.random.default_rng(0)
    out = forward(model, rng.random((7, 7)), rng.random((120, 120)))
    assert out.p_row.probs.shape == (64,) and out.p_sin.probs.shape == (120,)
    assert out.p_sin.probs.sum() == pytest.approx(1, abs=1e-6)


def test_zero_output_layer_gives_uniform_heads():
    cfg = tiny_config()
    model = init_model(cfg)
    _zero_heads(model)
    batch = random_batch(cfg, 3)
    out = forward_batch(model, batch.cap, batch.patch)
    assert np.allclose(out.p_row, 1 / cfg.T_pos) and np.allclose(out.p_sin, 1 / cfg.T_ang)


def test_forward_is_deterministic():
    cfg = tiny_config()
    a, b = init_model(cfg), init_model(cfg)
    assert np.array_equal(a.params, b.params)
    batch = random_batch(cfg, 2)
    x = forward_batch(a, batch.cap, batch.patch)
    y = forward_batch(b, batch.cap, batch.patch)
    assert np.array_equal(x.p_row, y.p_row) and np.array_equal(x.p_cos, y.p_cos)


def test_input_shape_errors():
    cfg = tiny_config()
    model = init_model(cfg)
    with pytest.raises(InvalidArgumentError):
        forward(model, np.zeros((4, 4)), np.zeros((16, 16)))
    with pytest.raises(InvalidArgumentError):
        forward_batch(model, np.zeros((2, 5, 5)), np.zeros((3, 16, 16)))
    with pytest.raises(InvalidArgumentError):
        EstimatorModel(cfg, np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        NetConfig(angle_head="polar")


def test_one_hot_heads_decode_to_bin_centres():
    # width-4 position bins from origin 0, 3-degree angle bins
    cfg = NetConfig(pos_origin=(0.0, 0.0), pos_range=256.0, cap_channels=(2,), patch_channels=(2,),
                    fused_dim=4)
    model = init_model(cfg)
    _zero_heads(model)
    pos, ang = cfg.pos_table, cfg.ang_table
    for head, value in (("row", 100.0), ("col", 50.0)):
        bias = np.zeros(cfg.T_pos)
        bias[int(np.argmin(np.abs(pos.centers - value)))] = 60.0
        _set(model, f"head.{head}.bias", bias)
    bias = np.zeros(cfg.T_ang)
    bias[int(np.argmin(np.abs(ang.centers - 30.0)))] = 60.0
    _set(model, "head.sin.bias", bias)
    _set(model, "head.cos.bias", bias)
    rng = np.random.default_rng(0)
    pose = predict_pose2d(model, rng.random((7, 7)), rng.random((120, 120)))
    assert abs(pose.c - 50) <= pos.width / 2 and abs(pose.r - 100) <= pos.width / 2
    assert abs(pose.theta - 30) <= ang.width / 2


def test_uniform_angle_heads_are_degenerate():
    cfg = tiny_config()
    model = init_model(cfg)
    _zero_heads(model)
    with pytest.raises(DegenerateDistributionError):
        predict_pose2d(model, np.zeros((5, 5)), np.zeros((16, 16)))


def _label_output(batch):
    return BatchOutput(batch.t_row.copy(), batch.t_col.copy(), batch.t_ang.copy(), batch.t_ang.copy())


def test_loss_at_labels_is_entropy_floor():
    cfg = tiny_config()
    batch = random_batch(cfg, 5)
    assert loss(_label_output(batch), batch) == pytest.approx(_entropy_floor(batch), abs=1e-9)
    one = batch.subset(slice(0, 1))
    head = HeadOutput(SoftLabel(one.t_row[0], "position"), SoftLabel(one.t_col[0], "position"),
                      SoftLabel(one.t_ang[0], "angle-sin"), SoftLabel(one.t_ang[0], "angle-cos"))
    assert loss(head, one) == pytest.approx(_entropy_floor(one), abs=1e-9)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.45))
def test_loss_floor_and_monotone_mismatch(seed, lam):
    cfg = tiny_config()
    batch = random_batch(cfg, 3, seed=seed % 1000)
    rng = np.random.default_rng(seed)

    def mixed(weight):
        out = []
        for t in (batch.t_row, batch.t_col, batch.t_ang, batch.t_ang):
            noise = rng.dirichlet(np.ones(t.shape[1]), t.shape[0])
            out.append((1 - weight) * t + weight * noise)
        return out

    state = rng.bit_generator.state
    near = BatchOutput(*mixed(lam))
    rng.bit_generator.state = state
    far = BatchOutput(*mixed(2 * lam))
    floor = _entropy_floor(batch)
    assert loss(near, batch) >= floor - 1e-9
    assert loss(far, batch) > loss(near, batch)


def test_loss_shape_mismatch():
    cfg = tiny_config()
    batch = random_batch(cfg, 2)
    out = _label_output(batch)
    with pytest.raises(InvalidArgumentError):
        loss(BatchOutput(out.p_row[:, :4], out.p_col, out.p_sin, out.p_cos), batch)


def test_parameter_without_influence_has_zero_gradient():
    cfg = tiny_config()
    model = init_model(cfg)
    fused = model["fused.bias"]
    fused[2] = -1e3  # unit 2 never fires
    _, grad = gradients(model, random_batch(cfg, 4))
    probe = EstimatorModel(cfg, grad)
    assert np.all(probe["head.row.weight"][2] == 0) and np.all(probe["head.sin.weight"][2] == 0)
    assert np.all(probe["fused.weight"][:, 2] == 0) and probe["fused.bias"][2] == 0


def test_duplicated_batch_has_same_gradient():
    cfg = tiny_config()
    model = init_model(cfg)
    one = random_batch(cfg, 1, seed=5)
    many = one.subset(np.zeros(6, dtype=int))
    l1, g1 = gradients(model, one)
    l6, g6 = gradients(model, many)
    assert l6 == pytest.approx(l1, rel=1e-12)
    assert np.allclose(g6, g1, rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("head", HEADS)
def test_gradients_match_finite_differences(head):
    cfg = tiny_config(angle_head=head)
    model = init_model(cfg)
    batch = random_batch(cfg, 4, seed=0)
    err = grad_check(model, batch, 1e-5)
    assert err < 1e-4
    # halving the step must not blow up the discrepancy
    assert grad_check(model, batch, 5e-6) <= 10 * max(err, 1e-7)


@pytest.mark.parametrize("modality", ("patch", "cap"))
def test_unimodal_gradients_match_finite_differences(modality):
    cfg = tiny_config(modality=modality)
    model = init_model(cfg)
    # a constant input with zero biases parks the silenced branch exactly on a ReLU kink
    for name in model.layout:
        if ".conv" in name and name.endswith(".bias"):
            _set(model, name, 0.05)
    assert grad_check(model, random_batch(cfg, 4, seed=0)) < 1e-4


def test_output_bias_gradient_is_prediction_minus_label():
    cfg = tiny_config()
    model = init_model(cfg)
    batch = random_batch(cfg, 3, seed=2)
    _, grad = gradients(model, batch)
    g = EstimatorModel(cfg, grad)
    out = forward_batch(model, batch.cap, batch.patch)
    assert np.allclose(g["head.row.bias"], (out.p_row - batch.t_row).mean(axis=0), atol=1e-9)
    assert np.allclose(g["head.cos.bias"], (out.p_cos - batch.t_ang).mean(axis=0), atol=1e-9)
    # contrive outputs equal to labels through the final biases alone
    one = batch.subset(slice(0, 1))
    _zero_heads(model)
    _set(model, "head.row.bias", np.log(np.maximum(one.t_row[0], 1e-300)))
    _set(model, "head.sin.bias", np.log(np.maximum(one.t_ang[0], 1e-300)))
    _, grad = gradients(model, one)
    g = EstimatorModel(cfg, grad)
    assert np.abs(g["head.row.bias"]).max() < 1e-9 and np.abs(g["head.sin.bias"]).max() < 1e-9


def test_numeric_fault_names_the_layer():
    cfg = tiny_config()
    model = init_model(cfg)
    model["patch.conv1.weight"][0, 0] = np.nan
    batch = random_batch(cfg, 2)
    with pytest.raises(NumericFaultError) as info:
        gradients(model, batch)
    assert info.value.layer == "patch.conv1"
    with pytest.raises(NumericFaultError) as info:
        train(model, batch, TrainConfig(epochs=1))
    assert info.value.layer == "patch.conv1" and info.value.epoch == 0


def test_zeroed_modality_ignores_its_input():
    cfg = tiny_config(modality="cap")
    model = init_model(cfg)
    batch = random_batch(cfg, 2)
    a = forward_batch(model, batch.cap, batch.patch)
    b = forward_batch(model, batch.cap, np.zeros_like(batch.patch))
    assert np.array_equal(a.p_sin, b.p_sin)


def test_cosine_schedule():
    assert cosine_lr(0, 100, 1e-3, 1e-6) == pytest.approx(1e-3)
    assert cosine_lr(99, 100, 1e-3, 1e-6) == pytest.approx(1e-6)
    assert cosine_lr(1, 3, 1.0, 0.0) == pytest.approx(0.5)
    vals = [cosine_lr(s, 50, 1e-3, 1e-6) for s in range(50)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    with pytest.raises(InvalidArgumentError):
        TrainConfig(lr_start=1e-6, lr_end=1e-3)


def test_adamw_first_step_by_hand():
    opt = AdamW(2, weight_decay=0.1)
    p = np.array([1.0, -2.0])
    opt.step(p, np.array([0.5, -0.25]), lr=0.01)
    # decay first, then a bias-corrected step of size lr * sign(g)
    expected = np.array([1.0, -2.0]) * (1 - 0.001) - 0.01 * np.array([1, -1]) / (1 + 1e-8 / 0.5 * np.array([1, 2]))
    assert np.allclose(p, expected, rtol=1e-12)


def test_zero_learning_rate_leaves_parameters_unchanged():
    cfg = tiny_config()
    model = init_model(cfg)
    trained, hist = train(model, random_batch(cfg, 8), TrainConfig(lr_start=0.0, lr_end=0.0, epochs=2, batch_size=3))
    assert np.array_equal(trained.params, model.params)
    assert len(hist.rows) == 3 and hist.rows[0]["epoch"] == 0


def test_zero_epochs_returns_the_initialisation():
    cfg = tiny_config()
    model = init_model(cfg)
    trained, hist = train(model, random_batch(cfg, 4), TrainConfig(epochs=0))
    assert np.array_equal(trained.params, model.params) and len(hist.rows) == 1
    with pytest.raises(InvalidArgumentError):
        train(model, random_batch(cfg, 4).subset(slice(0, 0)), TrainConfig(epochs=1))


def test_training_is_deterministic_and_reduces_loss():
    cfg = tiny_config()
    batch = random_batch(cfg, 16, seed=4)
    tc = TrainConfig(epochs=15, batch_size=4, lr_start=1e-2, lr_end=1e-4, seed=3)
    a, ha = train(init_model(cfg), batch, tc, val_batch=batch)
    b, hb = train(init_model(cfg), batch, tc, val_batch=batch)
    assert np.array_equal(a.params, b.params) and ha.rows == hb.rows
    assert batch_loss(a, batch) < ha.rows[0]["train_loss"]
    assert ha.rows[-1]["val_loss"] < ha.rows[0]["val_loss"]


def test_memorises_a_single_sample():
    cfg = NetConfig(cap_channels=(8, 16))
    rng = np.random.default_rng(0)
    batch = batch_from_arrays(rng.random((1, 7, 7)), rng.random((1, 120, 120)), [10.0], [-20.0], [35.0], cfg)
    model, _ = train(init_model(cfg), batch, TrainConfig(epochs=500, batch_size=1))
    assert batch_loss(model, batch) - _entropy_floor(batch) < 0.05


def test_history_csv(tmp_path):
    cfg = tiny_config()
    batch = random_batch(cfg, 4)
    _, hist = train(init_model(cfg), batch, TrainConfig(epochs=2, batch_size=2), val_batch=batch)
    path = tmp_path / "h.csv"
    hist.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_yaw_mae,val_pos_mae" and len(lines) == 4
    _, hist = train(init_model(cfg), batch, TrainConfig(epochs=1))
    hist.write_csv(path)
    assert path.read_text().splitlines()[1].endswith(",,,")


@pytest.mark.parametrize("head", HEADS)
def test_checkpoint_round_trip(tmp_path, head):
    cfg = tiny_config(angle_head=head, init_seed=9)
    model = init_model(cfg)
    path = tmp_path / "ck.bin"
    save_checkpoint(path, model, seed=9, epoch=0)
    loaded, header = load_checkpoint(path)
    assert loaded.config == cfg and np.array_equal(loaded.params, model.params)
    assert header["seed"] == 9 and header["n_params"] == model.n_params
    assert header["layout"][0][0] == "cap.conv0.weight"
    batch = random_batch(cfg, 2)
    assert batch_loss(loaded, batch) == batch_loss(model, batch)


def test_checkpoint_rejects_corruption(tmp_path):
    model = init_model(tiny_config())
    path = tmp_path / "ck.bin"
    save_checkpoint(path, model)
    raw = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(InvalidArgumentError):
        load_checkpoint(tmp_path / "short.bin")
    (tmp_path / "fmt.bin").write_bytes(raw.replace(b"fingerpose-checkpoint/1", b"other/9", 1))
    with pytest.raises(InvalidArgumentError):
        load_checkpoint(tmp_path / "fmt.bin")
    assert math.isfinite(load_checkpoint(path)[0].params.sum())


def test_evaluation_scores_degenerate_angles_as_uniform_guess():
    from fingerpose.estimator import evaluate, predict_batch

    cfg = tiny_config()
    model = init_model(cfg)
    _zero_heads(model)
    batch = random_batch(cfg, 5)
    _, _, theta = predict_batch(model, batch.cap, batch.patch, strict=False)
    assert np.all(np.isnan(theta))
    assert evaluate(model, batch)["yaw_mae"] == 90.0
