import numpy as np
import pytest

from czsl_engine.autodiff import Tensor
from czsl_engine.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from czsl_engine.errors import DataError, FormatError
from czsl_engine.runner import build_model


@pytest.fixture
def saved(tiny_run, tmp_path):
    model = build_model(tiny_run.config, tiny_run.split, tiny_run.vectors, tiny_run.store)
    path = tmp_path / "model.oadc"
    save_checkpoint(path, model, tiny_run.config, tiny_run.split.train_pairs, {"epoch": 3, "val_auc": 0.25})
    return model, path


def test_round_trip_restores_the_model(tiny_run, saved):
    model, path = saved
    ckpt = load_checkpoint(path)
    assert ckpt.attributes == model.attributes and ckpt.objects == model.objects
    assert ckpt.seen_pairs == tiny_run.split.train_pairs
    assert ckpt.meta == {"epoch": 3, "val_auc": 0.25}
    assert ckpt.config.to_flat() == tiny_run.config.to_flat()
    assert set(ckpt.tensors) == set(model.state_arrays())

    restored = ckpt.build_model()
    raw = Tensor(tiny_run.store.stack(tiny_run.split.test_ids[:4]))
    pairs = tiny_run.split.train_pairs[:5]
    np.testing.assert_array_equal(restored.forward_infer(raw, pairs), model.forward_infer(raw, pairs))


def test_saving_twice_gives_identical_bytes(tiny_run, saved, tmp_path):
    model, path = saved
    other = tmp_path / "again.oadc"
    save_checkpoint(other, model, tiny_run.config, tiny_run.split.train_pairs, {"epoch": 3, "val_auc": 0.25})
    assert other.read_bytes() == path.read_bytes()
    assert not list(tmp_path.glob("*.tmp"))


def test_bad_magic(saved):
    _, path = saved
    path.write_bytes(b"XXXX" + path.read_bytes()[len(MAGIC):])
    with pytest.raises(FormatError) as info:
        load_checkpoint(path)
    assert info.value.offset == 0


def test_truncated_and_trailing(saved):
    _, path = saved
    data = path.read_bytes()
    path.write_bytes(data[:-3])
    with pytest.raises(FormatError, match="ends inside"):
        load_checkpoint(path)
    path.write_bytes(data + b"\x00")
    with pytest.raises(FormatError, match="trailing"):
        load_checkpoint(path)


def test_corrupt_json_block(saved):
    _, path = saved
    data = bytearray(path.read_bytes())
    data[12] = ord("!")
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError) as info:
        load_checkpoint(path)
    assert info.value.offset == 12


def test_missing_checkpoint(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "none.oadc")


def test_tensor_name_must_be_utf8(saved):
    _, path = saved
    data = bytearray(path.read_bytes())
    block_len = int(np.frombuffer(bytes(data[8:12]), dtype="<u4")[0])
    name_start = 12 + block_len + 4 + 4
    data[name_start] = 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="not UTF-8") as info:
        load_checkpoint(path)
    assert info.value.offset == name_start
