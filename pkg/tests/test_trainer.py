import math

import numpy as np
import pytest

from prunekit import trainer as tr
from prunekit.arch import ArchSpec, LayerSpec
from prunekit.checkpoint import dumps
from prunekit.config import RunConfig
from prunekit.data import SyntheticDataset
from prunekit.network import Network
from prunekit.pruning import FilterMask, FilterState, Mode, ScheduleConfig
from prunekit.tensor import SgdConfig

from runs import desk_config, traced_run

HARD = FilterState.HARD


def small(mode="GHFP", rate=0.4, seed=0, t_max=6, **kw):
    kw.setdefault("n_train", 320)
    kw.setdefault("n_test", 100)
    return desk_config(mode, rate, seed, t_max, **kw)


def weights_bytes(net):
    return [p.data.tobytes() for _, p in net.parameters()]


# --- epoch_train ----------------------------------------------------------------

def linear_model():
    L = LayerSpec
    arch = ArchSpec("lin", (L("input", "input", 2, 2, out_spatial=(1, 1)),
                            L("fc", "linear", 2, 2, predecessors=("input",)),
                            L("output", "output", 2, 2, predecessors=("fc",))), ())
    net = Network.init(arch, 0)
    net.weights["fc"].data[:] = [[0.5, -0.25], [0.1, 0.3]]
    net.biases["fc"].data[:] = [0.0, 0.2]
    return net


def test_single_batch_linear_step_matches_hand_computation():
    net = linear_model()
    x = np.array([[1.0, 2.0], [-1.0, 0.5]])
    y = np.array([0, 1])
    data = SyntheticDataset(x.reshape(2, 2, 1, 1), y, "train", 0)
    lr = 0.1
    vel = {n: np.zeros_like(p.data) for n, p in net.parameters()}
    tr.epoch_train(net, data, SgdConfig(lr, 0.0, 0.0), FilterMask(), vel,
                   np.random.default_rng(0), batch_size=2)

    # by hand: p = softmax(Wx + b), dL/dz = (p - onehot) / B
    W = np.array([[0.5, -0.25], [0.1, 0.3]])
    b = np.array([0.0, 0.2])
    z = x @ W.T + b
    p = np.exp(z) / np.exp(z).sum(1, keepdims=True)
    d = (p - np.eye(2)[y]) / 2
    W1, b1 = W - lr * d.T @ x, b - lr * d.sum(0)
    np.testing.assert_allclose(net.weights["fc"].data, W1, atol=1e-15)
    np.testing.assert_allclose(net.biases["fc"].data, b1, atol=1e-15)
    z1 = x @ W1.T + b1
    hand_loss = float(np.mean(np.log(np.exp(z1).sum(1)) - z1[[0, 1], y]))
    assert tr.evaluate_loss(net, data) == pytest.approx(hand_loss, abs=1e-14)
    assert hand_loss < float(np.mean(np.log(np.exp(z).sum(1)) - z[[0, 1], y]))


def test_zero_learning_rate_leaves_model_unchanged():
    cfg = small(n_train=256)
    from prunekit.data import make_dataset
    train, _ = make_dataset(0, n_train=256, n_test=10)
    net = Network.init(tr.build_arch("tinyconvnet"), 0)
    before = weights_bytes(net)
    vel = {n: np.zeros_like(p.data) for n, p in net.parameters()}
    mask = FilterMask.all_active({"conv1": 16, "conv2": 16, "conv3": 32})
    loss = tr.epoch_train(net, train, SgdConfig(0.0, 0.9, 5e-4), mask, vel,
                          np.random.default_rng(1), batch_size=64)
    assert weights_bytes(net) == before
    assert loss == pytest.approx(tr.evaluate_loss(net, train), abs=1e-12)


def test_nan_loss_aborts_naming_epoch_and_layer():
    from prunekit.data import make_dataset
    train, _ = make_dataset(0, n_train=64, n_test=10)
    net = Network.init(tr.build_arch("tinyconvnet"), 0)
    net.weights["conv2"].data[0, 0, 0, 0] = np.nan
    vel = {n: np.zeros_like(p.data) for n, p in net.parameters()}
    with pytest.raises(tr.NaNLossError, match="epoch 3, layer conv2"):
        tr.epoch_train(net, train, SgdConfig(), FilterMask(), vel, np.random.default_rng(0),
                       epoch=3)


def test_empty_dataset_rejected():
    empty = SyntheticDataset(np.zeros((0, 3, 8, 8)), np.zeros(0, np.int64), "train", 0)
    with pytest.raises(ValueError):
        tr.epoch_train(linear_model(), empty, SgdConfig(), FilterMask(), {},
                       np.random.default_rng(0))


def test_loss_halves_within_ten_epochs():
    result, _, _ = traced_run("GHFP", 0.0, 0)
    cfg = desk_config("GHFP", 0.0, 0)
    from prunekit.data import make_dataset
    train, _ = make_dataset(0, n_train=2000)
    initial = tr.evaluate_loss(Network.init(tr.build_arch("tinyconvnet"),
                                            tr._seeded(cfg, 0).integers(2**63)), train)
    assert min(m.train_loss for m in result.metrics[:10]) <= 0.5 * initial


# --- run_ghfp ------------------------------------------------------------------

def test_zero_rate_equals_plain_sgd_bitwise():
    cfg = small(rate=0.0)
    pruned = tr.run_ghfp(cfg)
    plain = tr.run_ghfp(cfg, prune=False)
    assert weights_bytes(pruned.network) == weights_bytes(plain.network)
    assert [m.test_acc for m in pruned.metrics] == [m.test_acc for m in plain.metrics]


def test_metrics_rows_are_consistent():
    result = tr.run_ghfp(small())
    lines = result.metrics_csv().splitlines()
    assert lines[0] == ",".join(tr.METRICS_HEADER)
    assert len(lines) == 7
    for m in result.metrics:
        for lid, h, s in zip(("conv1", "conv2", "conv3"), m.hard_counts, m.soft_counts):
            assert (h, s) == result.mask.counts(lid) or m.t < 5


def test_reproducible_metrics_and_checkpoint(tmp_path):
    cfg = small(metrics_path=str(tmp_path / "m.csv"), checkpoint_path=str(tmp_path / "c.pkpt"))
    outputs = []
    for _ in range(2):
        tr.run_ghfp(cfg)
        outputs.append(((tmp_path / "m.csv").read_bytes(), (tmp_path / "c.pkpt").read_bytes()))
    assert outputs[0] == outputs[1]


def test_hfp_selected_filters_never_change():
    # compare weights right after training, before the mask could re-zero anything
    _, snaps, trained = traced_run("HFP", 0.5, 0, t_max=12, n_train=400)
    frozen: dict = {}
    for t in range(len(snaps)):
        for lid, cols in frozen.items():
            for j, w in cols.items():
                assert trained[t][1][lid][j].tobytes() == w
        for lid, s in snaps[t][2].items():
            for j in np.flatnonzero(s == HARD):
                frozen.setdefault(lid, {}).setdefault(j, snaps[t][1][lid][j].tobytes())
    assert sum(len(v) for v in frozen.values()) > 0


def _zeroized(w):
    return int((np.abs(w.reshape(len(w), -1)).sum(1) == 0).sum())


@pytest.mark.parametrize("mode,rate", [("GHFP", 0.4), ("ASFP", 0.6), ("SoftAndHard", 0.3)])
def test_zeroized_count_and_nesting(mode, rate):
    result, snaps, _ = traced_run(mode, rate, 1, t_max=10, n_train=400)
    prev = {}
    for (t, weights, states), m in zip(snaps, result.metrics):
        for i, lid in enumerate(("conv1", "conv2", "conv3")):
            n = len(states[lid])
            assert _zeroized(weights[lid]) == math.floor(m.rate[i] * n)
            hard = set(np.flatnonzero(states[lid] == HARD))
            assert prev.get(lid, set()) <= hard
            prev[lid] = hard


def test_soft_filters_revive_in_asfp():
    _, snaps, trained = traced_run("ASFP", 0.6, 1, t_max=10, n_train=400)
    revived = 0
    for (_, _, states), (_, w_trained, _) in zip(snaps, trained[1:]):
        for lid, s in states.items():
            norms = np.abs(w_trained[lid].reshape(len(s), -1)).sum(1)
            revived += int((norms[s == FilterState.SOFT] > 0).sum())
    assert revived > 0


def _ghfp(**kw):
    return ScheduleConfig(mode=Mode.GHFP, goal_rate=0.4, t_max=8, **kw)


@pytest.mark.parametrize("general,dedicated", [
    (_ghfp(alpha0=0.0, lambda_i=0.0, lambda_f=0.0), "ASFP"),
    (_ghfp(alpha0=1.0, lambda_i=0.0, lambda_f=0.0), "ASRFP"),
    (_ghfp(lambda_i=1.0, lambda_f=1.0), "HFP"),
    (_ghfp(lambda_i=0.0, lambda_f=0.0, rate_ramp="constant"), "SFP"),
])
def test_mode_reductions_select_identically(general, dedicated):
    base = RunConfig(n_train=320, n_test=100, seed=2)
    sel = []
    for sched in (general, ScheduleConfig.for_mode(dedicated, 0.4, t_max=8)):
        rows = []
        res = tr.run_ghfp(base.replace(schedule=sched),
                          snapshot=lambda t, net, mask: rows.append(
                              {l: s.tobytes() for l, s in mask.items()}))
        sel.append((rows, weights_bytes(res.network)))
    assert sel[0] == sel[1]


def test_final_model_is_compactible():
    from prunekit.compactor import compact, verify_equivalence
    result, _, _ = traced_run("GHFP", 0.4, 1, t_max=10, n_train=400)
    assert result.metrics[-1].alpha == 0.0 and result.metrics[-1].lambda_h == 1.0
    assert all(s == 0 for m in [result.metrics[-1]] for s in m.soft_counts)
    out = compact(result.network, result.mask)
    assert verify_equivalence(result.network, out.network) <= 1e-9


def test_pretrained_start_uses_tenth_learning_rate(tmp_path, monkeypatch):
    first = small(rate=0.0, t_max=3, checkpoint_path=str(tmp_path / "pre.pkpt"))
    pre = tr.run_ghfp(first)
    seen = []
    real = tr.epoch_train
    monkeypatch.setattr(tr, "epoch_train",
                        lambda net, data, sgd, *a, **k: seen.append(sgd) or real(net, data, sgd, *a, **k))
    tr.run_ghfp(small(t_max=2, pretrained=str(tmp_path / "pre.pkpt")))
    assert [s.learning_rate for s in seen] == pytest.approx([0.005, 0.005])
    assert pre.network.arch.name == "tinyconvnet"


def test_sweep_writes_one_file_per_seed(tmp_path):
    cfg = small(t_max=2, metrics_path=str(tmp_path / "m.csv"))
    csvs = tr.run_sweep(cfg, [0, 1, 2], workers=1)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["m_seed0.csv", "m_seed1.csv", "m_seed2.csv"]
    assert (tmp_path / "m_seed1.csv").read_text() == csvs[1]
    assert csvs[0] != csvs[1]
    assert tr.run_sweep(cfg.replace(metrics_path=None), [1], workers=1)[0] == csvs[1]


@pytest.mark.slow
def test_ghfp_against_soft_and_hard_desk_example():
    from runs import final_acc, last10_mean
    wins = []
    for s in range(4):
        base = final_acc(traced_run("GHFP", 0.0, s)[0])
        ghfp = traced_run("GHFP", 0.4, s)[0]
        sah = traced_run("SoftAndHard", 0.4, s)[0]
        wins.append(abs(final_acc(ghfp) - base) <= 0.05 and last10_mean(ghfp) > last10_mean(sah))
        print(f"seed{s}: base={base:.3f} ghfp final={final_acc(ghfp):.3f} "
              f"last10={last10_mean(ghfp):.4f} sah last10={last10_mean(sah):.4f}")
    assert sum(wins) > 2, wins
