import warnings

import numpy as np
import pytest

from rissense.config import ConfigError, ScenarioConfig, config_from_mapping, dump_config, load_config


def test_defaults_reproduce_reference_setup():
    cfg = ScenarioConfig()
    sc = cfg.scenario()
    assert sc.ris_array.size == 2500 and sc.ue_array.size == 16
    assert sc.n_transmissions == 40 and sc.n_subcarriers == 1600
    assert sc.wavelength == pytest.approx(0.01, rel=1e-3)
    assert cfg.sp_box_low == [30.0, -30.0, 2.0] and cfg.sp_box_high == [50.0, 50.0, 10.0]
    assert (cfg.p_fa, cfg.merge_threshold, cfg.n_epochs) == (1e-3, 36.0, 15)
    np.testing.assert_array_equal(cfg.initial_ue().position, [50.0, -30.0, 0.0])


def test_bandwidth_mismatch_warns():
    with pytest.warns(UserWarning, match="bandwidth"):
        ScenarioConfig()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ScenarioConfig(bandwidth=192e6)


def test_toml_round_trip(tmp_path):
    cfg = ScenarioConfig(seed=5, runs=3, ris_shape=[8, 8], ris_profile_mode="direct", dump_posteriors=True)
    path = tmp_path / "c.toml"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_nested_tables_and_partial_files(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("runs = 4\n\n[ris]\nposition = [31.0, 1.0, 19.0]\n")
    cfg = load_config(path)
    assert cfg.runs == 4 and cfg.ris_position == [31.0, 1.0, 19.0]
    assert cfg.n_epochs == 15


@pytest.mark.parametrize("text,line,key", [
    ("runs = 2\nseed = 1\np_fa = 2.0\n", 3, "p_fa"),
    ("runs = 2\n\nn_transmissions = 7\n", 3, "n_transmissions"),
    ("n_epochs = 'many'\n", 1, "n_epochs"),
    ("seed = 1\nbogus_key = 3\n", 2, "bogus_key"),
    ("ris_position = [1.0, 2.0]\n", 1, "ris_position"),
    ("seed = 0\nsp_box_low = [60.0, -30.0, 2.0]\n", None, "sp_box_high"),
    ("ris_profile_mode = \"aimed\"\n", 1, "ris_profile_mode"),
])
def test_errors_name_the_line(tmp_path, text, line, key):
    path = tmp_path / "bad.toml"
    path.write_text(text)
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    msg = str(exc.value)
    assert key in msg
    if line is not None:
        assert f"line {line}" in msg


def test_syntax_error_is_config_error(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("runs = = 2\n")
    with pytest.raises(ConfigError):
        load_config(path)


@pytest.mark.parametrize("kw", [{"runs": 0}, {"dt": -1.0}, {"fusion_weight_ris": 1.0}, {"carrier_frequency": float("inf")},
                                {"ue_shape": [0, 4]}, {"gospa_alpha": 2.5}])
def test_direct_construction_validates(kw):
    with pytest.raises(ConfigError):
        ScenarioConfig(**kw)


def test_integer_fields_reject_floats():
    with pytest.raises(ConfigError):
        config_from_mapping({"runs": 2.5})
    assert config_from_mapping({"dt": 1}).dt == 1.0


def test_dp_map_scenario_faces_ris():
    sc, ue = ScenarioConfig().dp_map_scenario()
    assert sc.tx_power_dbm == 20.0 and sc.n_transmissions == 20
    np.testing.assert_array_equal(sc.ris.position, [30.0, 0.0, 0.0])
    assert ue.heading == pytest.approx(-np.pi)
