import struct

import numpy as np
import pytest

from prunekit import checkpoint as ck
from prunekit.arch import build_arch
from prunekit.network import Network
from prunekit.pruning import FilterMask, PruneState


def sample():
    net = Network.init(build_arch("tinyconvnet"), 5)
    mask = FilterMask.all_active({"conv1": 16, "conv2": 16, "conv3": 32})
    mask.set_selection("conv2", [3, 4], [9])
    state = PruneState(7, 0.25, 0.5, {"conv1": 0.0, "conv2": 0.1875, "conv3": 0.0},
                       {"conv2": (np.array([3, 4]), np.array([9]))})
    return ck.Checkpoint(net, mask, state, "mode = GHFP\nseed = 3\n")


def test_roundtrip_is_exact(tmp_path):
    c = sample()
    ck.save(tmp_path / "a.pkpt", c)
    back = ck.load(tmp_path / "a.pkpt")
    assert back.arch == c.arch
    for (n1, p1), (n2, p2) in zip(c.network.parameters(), back.network.parameters()):
        assert n1 == n2 and p1.data.tobytes() == p2.data.tobytes()
    for lid in c.mask:
        np.testing.assert_array_equal(back.mask[lid], c.mask[lid])
    assert (back.state.t, back.state.alpha, back.state.lambda_h) == (7, 0.25, 0.5)
    assert back.state.rates == c.state.rates
    assert back.state.selection["conv2"][0].tolist() == [3, 4]
    assert back.config_text == c.config_text
    assert ck.dumps(back) == ck.dumps(c)


def test_header():
    data = ck.dumps(sample())
    assert data[:4] == b"PKPT"
    assert struct.unpack("<I", data[4:8])[0] == ck.VERSION


def test_bad_magic():
    data = ck.dumps(sample())
    with pytest.raises(ck.CheckpointError, match="magic"):
        ck.loads(b"XXXX" + data[4:])


def test_bad_version():
    data = ck.dumps(sample())
    with pytest.raises(ck.CheckpointError, match="version"):
        ck.loads(data[:4] + struct.pack("<I", 99) + data[8:])


@pytest.mark.parametrize("cut", [3, 10, 200, -1])
def test_truncation_detected(cut):
    data = ck.dumps(sample())
    with pytest.raises(ck.CheckpointError):
        ck.loads(data[:cut])


def test_missing_state_allowed():
    c = sample()
    c.state = None
    assert ck.loads(ck.dumps(c)).state is None
