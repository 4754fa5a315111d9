import pytest
from hypothesis import given
from hypothesis import strategies as st

from latentlob.config import (ConfigError, ExperimentConfig, MeasureConfig, MetaOrderSpec,
                              MetaStyle, Termination, dump_config, load_config, parse_config)
from latentlob.flow import PolicyKind

BASE = """
[model]
mu = 0.1
lambda_w = 5e-3
nu = 1e-4
"""


def test_defaults_are_baseline_regime():
    m = ExperimentConfig()
    assert (m.mu, m.lambda_w, m.nu, m.gamma, m.zeta) == (0.1, 5e-3, 1e-7, 0.5, 0.95)
    assert m.depth == pytest.approx(5e4)


def test_parse_minimal():
    cfg = parse_config(BASE)
    assert cfg.model.nu == 1e-4
    assert cfg.meta is None
    assert cfg.measure == MeasureConfig()


def test_parse_all_sections():
    cfg = parse_config(BASE + """
gamma = 0.4
policy = psi
psi = 0.5
[meta]
style = limit
fraction = 0.25
q = 40
[measure]
q_grid = 1 2 5, 10
hurst_range = 100 1e4
[run]
seed = 9
replicas = 4
stationary_seed = no
""")
    assert cfg.model.policy_kind == PolicyKind.PSI and cfg.model.policy_param == 0.5
    assert cfg.meta.style == MetaStyle.LIMIT and cfg.meta.fraction == 0.25
    assert cfg.measure.q_grid == (1, 2, 5, 10)
    assert cfg.measure.hurst_range == (100, 1e4)
    assert cfg.run.replicas == 4 and cfg.run.stationary_seed is False


@pytest.mark.parametrize("key", ["mu", "lambda_w", "nu"])
def test_missing_required_key_is_named(key):
    text = "\n".join(line for line in BASE.splitlines() if not line.startswith(key + " "))
    with pytest.raises(ConfigError, match=key):
        parse_config(text)


@pytest.mark.parametrize("text,fragment", [
    (BASE + "alpha = 1.5\n", "alpha"),
    (BASE + "zeta = 0\n", "zeta"),
    (BASE + "policy = wild\n", "policy"),
    (BASE + "nu = -1\n", "nu"),
    (BASE + "bogus = 1\n", "bogus"),
    (BASE + "[extra]\nx = 1\n", "extra"),
    (BASE + "mu = fast\n", "mu"),
    ("[run]\nseed = 1\n", "model"),
    (BASE + "[meta]\nphi = 0\n", "phi"),
    (BASE + "[meta]\nstyle = limit\ntermination = fixed_t\nduration = 5\n", "termination"),
    (BASE + "[meta]\ntermination = fixed_t\n", "duration"),
    (BASE + "[measure]\nprop_signs = gauss\n", "prop_signs"),
])
def test_invalid_values_name_the_field(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text)


def test_round_trip():
    cfg = parse_config(BASE + "[meta]\nq = 17\npost_horizon = 100\n[run]\nseed = 3\n")
    again = parse_config(dump_config(cfg))
    assert again == cfg
    assert again.meta.termination == Termination.FIXED_Q


@given(st.floats(1e-9, 1e3), st.floats(1e-9, 1e3), st.floats(1e-9, 1.0),
       st.floats(0.0, 1.0), st.floats(0.01, 10.0))
def test_round_trip_property(mu, lam, nu, alpha, zeta):
    cfg = parse_config(f"[model]\nmu = {mu!r}\nlambda_w = {lam!r}\nnu = {nu!r}\n"
                       f"alpha = {alpha!r}\nzeta = {zeta!r}\n")
    assert parse_config(dump_config(cfg)) == cfg


def test_participation():
    assert MetaOrderSpec(phi=0.316).participation == pytest.approx(0.316 / 1.316)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")
