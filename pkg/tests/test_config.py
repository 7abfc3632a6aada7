import math

import pytest

from fractal_spde import ParseError, SchemaError, load_config, parse_config
from fractal_spde.config import bundled_config_path, bundled_configs, parse_config_text

BASE = """
[ifs]
ratios = [0.5, 0.5]
offsets = [0.0, 0.5]
weights = [0.5, 0.5]

[grid]
level = 4
boundary = "neumann"
"""

SIM = """
[simulation]
T = 0.5
dt = 0.0625
paths = 8
"""


def test_bundled_cantor_config():
    cfg = load_config("cantor_hausdorff")
    assert cfg.spec.ratios == pytest.approx((1 / 3, 1 / 3))
    assert cfg.spec.offsets[1] == pytest.approx(2 / 3)
    assert cfg.level == 8 and cfg.boundary == "neumann" and cfg.num_eigs == 400
    assert cfg == parse_config(bundled_config_path("cantor_hausdorff.toml"))


def test_every_bundled_config_parses():
    names = bundled_configs()
    assert {"cantor_hausdorff", "lebesgue", "skewed", "intermittency"} <= set(names)
    for name in names:
        assert len(load_config(name).fingerprint) == 64


def test_minimal_config_defaults():
    cfg = parse_config_text(BASE)
    assert cfg.simulation is None
    assert cfg.tolerance == 1e-8 and cfg.t_min == 1e-4
    assert cfg.p == (2.0, 4.0, 8.0)


def test_dt_below_t_min():
    text = BASE + SIM.replace("dt = 0.0625", "dt = 5e-05").replace("T = 0.5", "T = 0.001")
    with pytest.raises(SchemaError) as info:
        parse_config_text(text)
    msg = str(info.value)
    assert "5e-05" in msg and "0.0001" in msg
    assert info.value.field == "simulation.dt"


def test_bad_weights():
    with pytest.raises(SchemaError) as info:
        parse_config_text(BASE.replace("weights = [0.5, 0.5]", "weights = [0.5, 0.49]"))
    assert info.value.reason == "BadWeights"
    assert info.value.field == "ifs.weights"


def test_overlapping_maps_are_schema_errors():
    with pytest.raises(SchemaError) as info:
        parse_config_text(BASE.replace("ratios = [0.5, 0.5]", "ratios = [0.6, 0.5]"))
    assert info.value.reason == "OverlappingCells"


@pytest.mark.parametrize("snippet,field", [
    ("[grid]\nlevel = 4\ncolour = 1\n", "grid.colour"),
    ("[extras]\nx = 1\n", "extras"),
])
def test_unknown_keys_rejected(snippet, field):
    text = BASE.split("[grid]")[0] + snippet
    if "[grid]" not in snippet:
        text = BASE + snippet
    with pytest.raises(SchemaError) as info:
        parse_config_text(text)
    assert info.value.field == field
    assert info.value.reason == "UnknownKey"


def test_unknown_coefficient_parameter():
    text = BASE + SIM + '\n[coefficients]\ng = { kind = "linear", a = 1.0, c = 2.0 }\n'
    with pytest.raises(SchemaError) as info:
        parse_config_text(text)
    assert info.value.field == "coefficients.g.c"


def test_parse_error_has_location():
    with pytest.raises(ParseError) as info:
        parse_config_text(BASE + "\nlevel = = 3\n", source="bad.toml")
    assert "bad.toml" in str(info.value) and "line" in str(info.value)


def test_num_eigs_bounded_by_grid():
    with pytest.raises(SchemaError) as info:
        parse_config_text(BASE.replace('boundary = "neumann"', 'boundary = "neumann"\nnum_eigs = 18'))
    assert info.value.reason == "ExceedsGrid"
    cfg = parse_config_text(BASE.replace('boundary = "neumann"',
                                         'boundary = "neumann"\nnum_eigs = 17'))
    assert cfg.num_eigs == 17


@pytest.mark.parametrize("line,reason", [
    ("output_times = [0.0, 0.7]", "OutOfRange"),
    ("output_times = [0.0, 0.1]", "NotMultiple"),
    ("output_times = [0.25, 0.125]", "NotIncreasing"),
    ("output_every = 0.1", "NotMultiple"),
])
def test_output_time_validation(line, reason):
    with pytest.raises(SchemaError) as info:
        parse_config_text(BASE + SIM + line + "\n")
    assert info.value.reason == reason


def test_output_every_and_fractions():
    text = BASE.replace("ratios = [0.5, 0.5]", 'ratios = ["1/2", "1/2"]') + SIM \
        + "output_every = 0.125\n"
    cfg = parse_config_text(text)
    assert cfg.simulation.output_times == (0.0, 0.125, 0.25, 0.375, 0.5)
    assert cfg.spec.ratios == (0.5, 0.5)


def test_type_errors():
    with pytest.raises(SchemaError):
        parse_config_text(BASE.replace("level = 4", "level = 4.5"))
    with pytest.raises(SchemaError):
        parse_config_text(BASE.replace("level = 4", "level = true"))
    with pytest.raises(SchemaError):
        parse_config_text(BASE + SIM.replace("paths = 8", "paths = 0"))
    with pytest.raises(SchemaError):
        parse_config_text(BASE + SIM + "seed = -3\n")
    with pytest.raises(SchemaError):
        parse_config_text(BASE.replace("weights = [0.5, 0.5]", 'weights = ["half", 0.5]'))


def test_fingerprint_is_canonical():
    a = parse_config_text(BASE + SIM)
    # reordered keys and an explicit default do not change the content
    reordered = BASE.replace('level = 4\nboundary = "neumann"',
                             'boundary = "neumann"\nlevel = 4') + SIM + "seed = 0\n"
    b = parse_config_text(reordered)
    assert a.fingerprint == b.fingerprint
    assert a.with_seed(5).fingerprint != a.fingerprint
    assert a.with_seed(5).simulation.seed == 5


def test_missing_sections_and_files(tmp_path):
    with pytest.raises(SchemaError):
        parse_config_text("[ifs]\nratios=[0.5,0.5]\noffsets=[0,0.5]\nweights=[0.5,0.5]\n")
    with pytest.raises(OSError):
        parse_config(tmp_path / "missing.toml")
    with pytest.raises(FileNotFoundError):
        load_config("no_such_config")


def test_coefficients_need_simulation():
    with pytest.raises(SchemaError):
        parse_config_text(BASE + '[coefficients]\ng = { kind = "linear", a = 1.0 }\n')


def test_intermittency_config_matches_setting():
    cfg = load_config("intermittency")
    sim = cfg.simulation
    assert sim.paths == 10_000 and sim.T == 2.0
    assert sim.g.kind == "linear" and sim.g.a == 1.0 and sim.f.is_zero
    assert math.isclose(sim.u0.c, 1.0)
