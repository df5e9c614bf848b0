import zipfile

import numpy as np
import pytest
import torch
from torch import nn

from siman.checkpoint import Checkpoint, param_digest, save_checkpoint, state_digest


def model():
    return nn.Sequential(nn.Conv2d(3, 4, 3), nn.BatchNorm2d(4), nn.Linear(5, 2))


def test_roundtrip_restores_everything(tmp_path):
    torch.manual_seed(0)
    net = model()
    opt = torch.optim.Adam(net.parameters(), lr=1e-3, betas=(0.5, 0.999))
    net[1].train()
    loss = net(torch.randn(2, 3, 7, 7)).square().mean()
    loss.backward()
    opt.step()
    rng = np.random.default_rng(5)
    rng.random(3)
    torch.manual_seed(11)
    path = save_checkpoint(tmp_path / "c.zip", {"gen": net}, spec={"a": 1}, iteration=7, optimizers={"g": opt},
                           np_rng=rng, extra={"note": "x"})
    expected_np = rng.random(4)
    expected_torch = torch.rand(3)

    ck = Checkpoint(path)
    assert (ck.iteration, ck.spec, ck.extra) == (7, {"a": 1}, {"note": "x"})
    assert set(zipfile.ZipFile(path).namelist()) == {"meta.json", "params.npz", "optim.npz", "optim.json",
                                                     "rng_torch.npy"}
    assert all(v.dtype == np.dtype("<f4") for v in ck.params.values())
    assert "gen/1.running_mean" in ck.params

    other = model()
    ck.load_module("gen", other)
    assert state_digest(other) == state_digest(net)
    opt2 = torch.optim.Adam(other.parameters(), lr=5.0)
    ck.load_optimizer("g", opt2)
    assert opt2.param_groups[0]["lr"] == 1e-3
    assert tuple(opt2.param_groups[0]["betas"]) == (0.5, 0.999)
    for p, q in zip(net.parameters(), other.parameters()):
        assert torch.equal(opt.state[p]["exp_avg"], opt2.state[q]["exp_avg"])
    assert np.array_equal(ck.np_rng().random(4), expected_np)
    ck.restore_torch_rng()
    assert torch.equal(torch.rand(3), expected_torch)


def test_missing_network_raises(tmp_path):
    path = save_checkpoint(tmp_path / "c.zip", {"gen": model()})
    with pytest.raises(KeyError):
        Checkpoint(path).load_module("disc", model())


def test_atomic_write_leaves_no_temp_files(tmp_path):
    save_checkpoint(tmp_path / "c.zip", {"gen": model()})
    save_checkpoint(tmp_path / "c.zip", {"gen": model()}, iteration=2)
    assert [p.name for p in tmp_path.iterdir()] == ["c.zip"]
    assert Checkpoint(tmp_path / "c.zip").iteration == 2


def test_digests_track_changes():
    torch.manual_seed(0)
    net = model()
    a, pa = state_digest(net), param_digest(net.parameters())
    assert state_digest(net) == a
    with torch.no_grad():
        net[0].weight[0, 0, 0, 0] += 1e-3
    assert state_digest(net) != a and param_digest(net.parameters()) != pa
    net2 = model()
    net2.load_state_dict(net.state_dict())
    net2[1].running_mean += 1
    assert param_digest(net2.parameters()) == param_digest(net.parameters())
    assert state_digest(net2) != state_digest(net)
