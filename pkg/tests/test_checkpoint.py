import json
import struct

import numpy as np
import pytest

from refed.checkpoint import MAGIC, CheckpointError, dumps_checkpoint, load_checkpoint, loads_checkpoint, save_checkpoint
from refed.config import RunConfig
from refed.nn import AdamW
from refed.refed import RefedModel
from refed.tempcnn import TempCNN


def trained_refed():
    m = RefedModel(6, 2, 3, seed=2)
    x = np.random.default_rng(0).standard_normal((8, 6, 2)).astype(np.float32)
    m.train().forward_losses(x, [0, 1, 2, 0, 1, 2, 0, 1], [0, 0, 0, 0, 1, 1, 1, 1], backward=False)
    m.best_epoch = 4
    return m.eval(), x


def test_refed_round_trip(tmp_path):
    m, x = trained_refed()
    cfg = RunConfig(mode="refed", epochs=3)
    save_checkpoint(tmp_path / "m.ckpt", m, cfg, meta={"scaling": {"lower": [0.0]}})
    back, header, extra = load_checkpoint(tmp_path / "m.ckpt")
    assert header["kind"] == "refed" and header["best_epoch"] == 4 == back.best_epoch
    assert header["meta"]["scaling"] == {"lower": [0.0]}
    assert header["config_digest"] == cfg.digest()
    assert not extra
    for k, v in m.state_dict().items():
        np.testing.assert_array_equal(back.state_dict()[k], v)
    np.testing.assert_array_equal(back.predict_proba(x), m.predict_proba(x))


def test_tempcnn_round_trip_with_optimizer():
    net = TempCNN(5, 1, 2, seed=1)
    opt = AdamW(net.parameters())
    cfg = RunConfig(mode="only_target", epochs=1)
    buf = dumps_checkpoint(net, cfg, optimizer=opt)
    back, header, extra = loads_checkpoint(buf)
    assert header["kind"] == "tempcnn" and header["has_optimizer"]
    assert extra
    x = np.ones((2, 5, 1), np.float32)
    np.testing.assert_array_equal(back.predict_proba(x), net.predict_proba(x))


def test_serialization_is_deterministic():
    m, _ = trained_refed()
    cfg = RunConfig()
    assert dumps_checkpoint(m, cfg) == dumps_checkpoint(m, cfg)


def split(buf):
    (hlen,) = struct.unpack("<I", buf[8:12])
    return json.loads(buf[12:12 + hlen]), buf[12 + hlen:]


def join(header, payload):
    h = json.dumps(header).encode()
    return MAGIC + struct.pack("<I", len(h)) + h + payload


@pytest.fixture(scope="module")
def good_buf():
    return dumps_checkpoint(TempCNN(5, 1, 2), RunConfig(mode="only_target"))


def test_bad_magic(good_buf):
    with pytest.raises(CheckpointError, match="magic"):
        loads_checkpoint(b"NOTACKPT" + good_buf[8:])


def test_truncated_payload(good_buf):
    with pytest.raises(CheckpointError):
        loads_checkpoint(good_buf[:-4])


def test_garbled_header(good_buf):
    with pytest.raises(CheckpointError):
        loads_checkpoint(good_buf[:12] + b"\xff" + good_buf[13:])


def test_shape_mismatch(good_buf):
    header, payload = split(good_buf)
    header["tensors"][0]["shape"] = [1, 1]
    with pytest.raises(CheckpointError):
        loads_checkpoint(join(header, payload))


def test_missing_tensor(good_buf):
    header, payload = split(good_buf)
    header["tensors"] = header["tensors"][1:]
    with pytest.raises(CheckpointError, match="lacks"):
        loads_checkpoint(join(header, payload))


def test_unknown_kind(good_buf):
    header, payload = split(good_buf)
    header["kind"] = "resnet"
    with pytest.raises(CheckpointError, match="kind"):
        loads_checkpoint(join(header, payload))


def test_header_missing_fields(good_buf):
    header, payload = split(good_buf)
    del header["tensors"]
    with pytest.raises(CheckpointError):
        loads_checkpoint(join(header, payload))
