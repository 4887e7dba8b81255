"""Checkpoint format: bitwise round trips, corruption detection, config gating."""

import numpy as np
import pytest

from skelgcn.checkpoint import load_checkpoint, save_checkpoint
from skelgcn.data import Dataset, center_on_spine, pad_frames
from skelgcn.errors import CheckpointError
from skelgcn.network import (BlockSpec, ModelConfig, init_model, model_forward,
                             named_parameters, unfreeze_model)
from skelgcn.synth import synth_dataset, synth_topology
from skelgcn.training import Schedule, init_optimizer, train


def make_model(seed=0, num_classes=4, dtype="float32"):
    topo = synth_topology()
    cfg = ModelConfig(topology=topo,
                      blocks=(BlockSpec(3, 4, 1, True, True), BlockSpec(4, 8, 2, True, True)),
                      num_classes=num_classes, in_channels=3, max_frames=12, bodies=1,
                      kernel_t=3, kernel_s=3, kernel_t_att=3, dtype=dtype)
    return init_model(cfg, seed=seed)


def trained_model(tmp_path, epochs=2):
    model = make_model()
    ds = synth_dataset(2, t=12, seed=0)
    ds = Dataset(samples=[pad_frames(center_on_spine(s, 0), 12) for s in ds.samples],
                 class_names=ds.class_names)
    sched = Schedule(base_lr=0.01, milestones=(), gamma=0.1, total_epochs=epochs)
    opt = init_optimizer(model, lr=0.01)
    train(model, ds, sched, opt, freeze_epochs=1, seed=0, batch_size=4)
    return model, opt


class TestRoundTrip:
    def test_save_load_save_byte_identical(self, tmp_path):
        model, opt = trained_model(tmp_path)
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(model, opt, 2, p1)
        loaded, opt2, epoch = load_checkpoint(p1)
        assert epoch == 2
        save_checkpoint(loaded, opt2, epoch, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_forward_identical_after_load(self, tmp_path):
        model, opt = trained_model(tmp_path)
        path = tmp_path / "m.bin"
        save_checkpoint(model, opt, 2, path)
        loaded, _, _ = load_checkpoint(path)
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 3, 12, 9, 1)).astype(np.float32)
        a = model_forward(x, model, mode="eval").data
        b = model_forward(x, loaded, mode="eval").data
        assert a.tobytes() == b.tobytes()

    def test_every_parameter_bitwise(self, tmp_path):
        model, opt = trained_model(tmp_path)
        path = tmp_path / "m.bin"
        save_checkpoint(model, opt, 2, path)
        loaded, opt2, _ = load_checkpoint(path)
        originals = dict((n, t.data) for n, t, _ in named_parameters(model))
        for n, t, _ in named_parameters(loaded):
            assert t.data.tobytes() == originals[n].tobytes(), n
        for name, v in opt.velocity.items():
            assert v.tobytes() == opt2.velocity[name].tobytes(), name

    def test_freeze_flags_preserved(self, tmp_path):
        model, opt = trained_model(tmp_path)
        unfreeze_model(model)
        path = tmp_path / "m.bin"
        save_checkpoint(model, opt, 2, path)
        loaded, _, _ = load_checkpoint(path)
        assert all(not bp.gcn.b_frozen for bp in loaded.blocks)

    def test_without_optimizer(self, tmp_path):
        model, _ = trained_model(tmp_path)
        path = tmp_path / "m.bin"
        save_checkpoint(model, None, 7, path)
        loaded, opt, epoch = load_checkpoint(path)
        assert opt is None and epoch == 7


class TestCorruption:
    def test_flipped_byte_detected(self, tmp_path):
        model, opt = trained_model(tmp_path)
        path = tmp_path / "m.bin"
        save_checkpoint(model, opt, 2, path)
        blob = bytearray(path.read_bytes())
        target = len(blob) // 2          # inside the parameter sections
        blob[target] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(path)

    def test_truncated_file_detected(self, tmp_path):
        model, opt = trained_model(tmp_path)
        path = tmp_path / "m.bin"
        save_checkpoint(model, opt, 2, path)
        path.write_bytes(path.read_bytes()[:-40])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "nope.bin"
        path.write_bytes(b"hello world, definitely not a checkpoint here")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


class TestConfigGate:
    def test_mismatching_config_rejected(self, tmp_path):
        model, opt = trained_model(tmp_path)
        path = tmp_path / "m.bin"
        save_checkpoint(model, opt, 2, path)
        other = make_model(num_classes=7).config
        with pytest.raises(CheckpointError, match="config"):
            load_checkpoint(path, expect_config=other)

    def test_matching_config_accepted(self, tmp_path):
        model, opt = trained_model(tmp_path)
        path = tmp_path / "m.bin"
        save_checkpoint(model, opt, 2, path)
        loaded, _, _ = load_checkpoint(path, expect_config=model.config)
        assert loaded.config.num_classes == 4
