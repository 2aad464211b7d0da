from __future__ import annotations

import math
import tomllib

import pytest

from arnoldlab.config import (
    ExperimentConfig,
    config_from_mapping,
    describe,
    load_calibration,
    load_config,
)
from arnoldlab.errors import ConfigError, WindowError
from arnoldlab.trig import arnold, normalized_class


def test_defaults_are_valid() -> None:
    config = ExperimentConfig()

    assert config.perturbation.preset == "normalized"
    assert config.nhil.kappa == (0.05, 0.5, 0.2, 0.5)
    assert config.model_samples == 100_000
    assert config.with_overrides(full_scale=True).model_samples == 1_000_000
    assert config.polynomial().terms() == normalized_class(0.05).terms()


def test_digest_tracks_content_not_location() -> None:
    base = ExperimentConfig()

    assert base.digest() == ExperimentConfig(base_dir="/elsewhere").digest()
    assert base.digest() != base.with_overrides(seed=1).digest()
    assert base.with_overrides(seed=None) == base


def test_load_config_file(tmp_path) -> None:
    path = tmp_path / "lab.toml"
    path.write_text(
        "seed = 5\nworkers = 2\n\n[sepmap]\neps_values = [1e-3, 1e-4]\norder = 2\n\n"
        "[diffuse]\nfull_flow = false\n",
        encoding="utf-8",
    )

    config = load_config(path)

    assert (config.seed, config.workers) == (5, 2)
    assert config.sepmap.eps_values == (1e-3, 1e-4)
    assert config.sepmap.order == 2
    assert config.diffuse.full_flow is False
    assert config.base_dir == str(tmp_path.resolve())
    assert config.resolve("family.json") == tmp_path.resolve() / "family.json"


def test_harmonic_table_is_resolved_next_to_the_config(tmp_path) -> None:
    (tmp_path / "arnold.txt").write_text("0 1 0 1.0 0.0\n0 0 1 1.0 0.0\n", encoding="utf-8")
    path = tmp_path / "lab.toml"
    path.write_text('[perturbation]\ntable = "arnold.txt"\n', encoding="utf-8")

    assert load_config(path).polynomial().terms() == arnold().terms()


def test_rows_override_the_preset() -> None:
    config = config_from_mapping({"perturbation": {"rows": [[0, 1, 1.0, 0.0], [1, 0, 1.0, 0.0]]}})

    assert config.polynomial().terms() == arnold().terms()


@pytest.mark.parametrize(
    "data",
    [
        {"colour": 1},
        {"sepmap": {"epsilon": 1e-3}},
        {"workers": 1.5},
        {"seed": -1},
        {"workers": 0},
        {"nhil": {"word": "0120"}},
        {"nhil": {"kappa": [0.1, 0.2]}},
        {"perturbation": {"preset": "unknown"}},
        {"perturbation": {"rows": [[0, 1]]}},
        {"diffuse": {"ito_dt": 0.1}},
        {"diffuse": {"s_values": [1.0]}},
        {"melnikov": {"t_cut": 10.0}},
        {"twist": {"n_points": 4}},
    ],
)
def test_invalid_configs_exit_with_code_two(data) -> None:
    with pytest.raises(ConfigError) as info:
        config_from_mapping(data)

    assert info.value.exit_code == 2


@pytest.mark.parametrize(
    "data",
    [
        {"sepmap": {"eps_values": [0.5]}},
        {"nhil": {"eps": 0.0}},
        {"diffuse": {"full_eps": 0.2}},
        {"twist": {"eps_values": [1e-3]}},
    ],
)
def test_out_of_window_eps(data) -> None:
    with pytest.raises(WindowError):
        config_from_mapping(data)


def test_malformed_or_missing_file(tmp_path) -> None:
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = \n", encoding="utf-8")

    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")


def test_describe_renders_loadable_toml() -> None:
    config = ExperimentConfig(seed=3)

    text = describe(config)

    assert text.startswith("# arnoldlab experiment configuration\n")
    assert config_from_mapping(tomllib.loads(text)).digest() == config.digest()


def test_packaged_calibration() -> None:
    cal = load_calibration()

    assert cal.kappa(1) == cal.kappa(-1) == 1.0 / 32.0
    assert cal.fitted["melnikov_bound"] == 8.0
    low, high = cal.w_window(1e-4, 1)
    assert low == pytest.approx(1e-8 / 4.0)
    assert high == pytest.approx(4.0 * 1e-4**0.875)
    assert cal.w_window(1e-4, 2) == pytest.approx((1e-7 / 4.0, 4e-4))
    assert cal.delta_window(1e-4) == pytest.approx((1e-3, 0.1))


def test_calibration_windows_raise() -> None:
    cal = load_calibration()

    cal.check_w(1e-5, 1e-4, 1)
    with pytest.raises(WindowError):
        cal.check_w(1e-9, 1e-4, 1)
    with pytest.raises(ConfigError):
        cal.w_window(1e-4, 3)
    with pytest.raises(WindowError):
        cal.check_delta(0.5, 1e-4)
    with pytest.raises(WindowError):
        cal.check_action(1.0, 0.01)
    cal.check_action(0.01 * math.e, 0.01)


def test_custom_calibration_file(tmp_path) -> None:
    path = tmp_path / "cal.toml"
    path.write_text("[separatrix]\nkappa_plus = 0.05\n", encoding="utf-8")
    assert load_calibration(path).kappa(1) == 0.05
    assert load_calibration(path).kappa(-1) == 1.0 / 32.0

    path.write_text("[separatrix]\nrho = 0.9\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_calibration(path)
    with pytest.raises(ConfigError):
        load_calibration(tmp_path / "absent.toml")
