"""
Module provides tests to test the serialization module.
"""
import os
import gzip
import numpy as np
import pytest

from pathomil.nn import FocalLossConfig
from pathomil.wsi import SegmentationConfig
from pathomil.data import SyntheticSpec
from pathomil.gbdt import GBDTConfig
from pathomil.heatmap import OverlayConfig
from pathomil.harness import TrainConfig
from pathomil.metrics import MetricsReport
from pathomil.models import KIND_ABMIL
from pathomil.exceptions import FormatError
from pathomil.serialization import to_stable_json, atomic_write, pack_container, \
    unpack_container, save_to_file, load_from_file

from .utils import get_temp_folder


def _configs() -> list:
    return [TrainConfig(model_kind=KIND_ABMIL, lr=1e-3, class_weights=[1., 2., 1.],
                        model_dims={"n_heads": 2}),
            FocalLossConfig(alpha=[1., 2., 1.], gamma=1.5, smoothing_eps=0.),
            SegmentationConfig(target_downsample=16., min_component_area_px=100),
            SyntheticSpec(n_bags_per_class=[4, 5, 6], feature_dim=16, seed=3),
            GBDTConfig(n_rounds=10, max_depth=3),
            OverlayConfig(alpha=.6, mode="bilinear", class_index=2),
            MetricsReport(np.array([[3, 1, 0], [0, 2, 0], [1, 0, 4]]), [.75, 2 / 3, 1.],
                          [.75, 1., .8], [.75, .8, 8 / 9], auc_macro_ovr=.9)]


def test_config_files():
    folder = get_temp_folder()
    for config in _configs():
        f_out = config.save_to_file(os.path.join(folder, "config"))
        assert f_out == os.path.join(folder, "config" + config.file_ext())
        assert type(config).load_from_file(f_out) == config

        assert config.save_to_file(f_out, use_zip=False) == f_out
        assert type(config).load_from_file(f_out, use_zip=False) == config

    f_out = os.path.join(folder, "config.pmil_train")
    TrainConfig(seed=5).save_to_file(f_out)
    with open(f_out, "rb") as f:
        first = f.read()
    TrainConfig(seed=5).save_to_file(f_out)
    with open(f_out, "rb") as f:
        assert f.read() == first


def test_config_file_errors():
    folder = get_temp_folder()
    f_config = GBDTConfig(n_rounds=3).save_to_file(os.path.join(folder, "errors"))
    with pytest.raises(FormatError):
        TrainConfig.load_from_file(f_config)
    with pytest.raises(FormatError):
        GBDTConfig.load_from_file(f_config, use_zip=False)

    f_broken = os.path.join(folder, "broken.pmil_gbdt")
    with open(f_config, "rb") as f:
        data = gzip.decompress(f.read())
    atomic_write(f_broken, gzip.compress(data[:-3]))
    with pytest.raises(FormatError):
        GBDTConfig.load_from_file(f_broken)

    with pytest.raises(FileNotFoundError):
        GBDTConfig.load_from_file(os.path.join(folder, "missing.pmil_gbdt"))


def test_plain_data_files():
    f_out = os.path.join(get_temp_folder(), "data.msgpack")
    save_to_file(f_out, {"a": [1, 2], "b": "x"})
    assert load_from_file(f_out) == {"a": [1, 2], "b": "x"}


def test_stable_json():
    assert to_stable_json({"b": 1, "a": np.float64(.5)}, indent=None) == '{"a":0.5,"b":1}'
    assert to_stable_json({"x": np.arange(2)}, indent=None) == '{"x":[0,1]}'
    with pytest.raises(ValueError):
        to_stable_json({"x": float("nan")})


def test_atomic_write():
    f_out = os.path.join(get_temp_folder(), "atomic.txt")
    atomic_write(f_out, "first")
    atomic_write(f_out, b"second")
    with open(f_out, "rb") as f:
        assert f.read() == b"second"
    assert not any(name.startswith(".tmp-") for name in os.listdir(get_temp_folder()))


def test_container():
    data = pack_container(b"TEST", {"b": 2, "a": [1]}, b"\x00\x01")
    assert data[:4] == b"TEST"

    header, offset = unpack_container(data, b"TEST")
    assert header == {"a": [1], "b": 2}
    assert offset == 8 + len(b'{"a":[1],"b":2}')
    assert data[offset:] == b"\x00\x01"

    with pytest.raises(FormatError):
        unpack_container(data, b"XXXX")
    with pytest.raises(FormatError):
        unpack_container(data[:10], b"TEST")
    with pytest.raises(FormatError):
        unpack_container(data[:5], b"TEST")
    with pytest.raises(ValueError):
        pack_container(b"TOOLONG", {}, b"")
