"""FLOPs accounting: formula against a loop oracle, ratios, shipped profiles."""

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from internlab.costmodel import (
    METHODS,
    ModelDims,
    TokenProfile,
    cost_report,
    load_cost_config,
    relative_flops,
    render_cost_table,
    sequence_flops,
)
from internlab.errors import CostModelError

TINY = ModelDims(1.1e9, 22, 2048)
BIG = ModelDims(7.0e9, 32, 4096)


def loop_flops(dims, passes, attention=True):
    """Position-by-position oracle: F(i) = 2P + 4·L·d·i summed explicitly."""
    total = 0.0
    for p, g in passes:
        for i in range(p + g):
            total += 2.0 * dims.n_params
            if attention:
                total += 4.0 * dims.n_layers * dims.hidden * i
    return total


# ---------------------------------------------------------------------------
# sequence_flops
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("attention", [True, False])
def test_zero_length_profile_costs_nothing(attention):
    profile = TokenProfile("std_cot", ((0, 0),))
    assert sequence_flops(TINY, profile, attention=attention) == 0.0


@given(
    p=st.integers(0, 300),
    g=st.integers(0, 300),
    attention=st.booleans(),
)
def test_single_pass_matches_loop_oracle(p, g, attention):
    profile = TokenProfile("std_cot", ((p, g),))
    assert sequence_flops(TINY, profile, attention=attention) == pytest.approx(
        loop_flops(TINY, [(p, g)], attention), rel=1e-12
    )


@pytest.mark.parametrize("attention", [True, False])
def test_multi_pass_sums_passes(attention):
    profile = TokenProfile("cascod", ((120, 220), (340, 40)))
    assert sequence_flops(BIG, profile, attention=attention) == pytest.approx(
        loop_flops(BIG, [(120, 220), (340, 40)], attention), rel=1e-12
    )


def test_doubling_counts_doubles_cost_without_attention():
    a = TokenProfile("std_cot", ((120, 220),))
    b = TokenProfile("std_cot", ((240, 440),))
    assert relative_flops((TINY, b), (TINY, a), attention=False) == 2.0


def test_doubling_counts_near_two_when_attention_negligible():
    dims = ModelDims(1.0e9, 1, 1)
    a = TokenProfile("std_cot", ((120, 220),))
    b = TokenProfile("std_cot", ((240, 440),))
    assert abs(relative_flops((dims, b), (dims, a)) - 2.0) < 1e-5


@given(
    p=st.integers(0, 200),
    g=st.integers(0, 200),
    attention=st.booleans(),
)
def test_adding_tokens_never_reduces_cost(p, g, attention):
    base = sequence_flops(TINY, TokenProfile("std_cot", ((p, g),)), attention=attention)
    more_prompt = sequence_flops(TINY, TokenProfile("std_cot", ((p + 1, g),)), attention=attention)
    more_generated = sequence_flops(TINY, TokenProfile("std_cot", ((p, g + 1),)), attention=attention)
    assert more_prompt >= base
    assert more_generated >= base


def test_cost_exactly_linear_in_params_without_attention():
    profile = TokenProfile("std_cot", ((120, 220),))
    assert sequence_flops(TINY, profile, attention=False) == 2.0 * TINY.n_params * 340
    doubled = ModelDims(2 * TINY.n_params, TINY.n_layers, TINY.hidden)
    assert relative_flops((doubled, profile), (TINY, profile), attention=False) == 2.0


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kwargs", [
    {"n_params": 0},
    {"n_layers": 0},
    {"hidden": -1},
])
def test_model_dims_must_be_positive(kwargs):
    with pytest.raises(CostModelError):
        ModelDims(**{"n_params": 1e9, "n_layers": 22, "hidden": 2048, **kwargs})


def test_profile_rejects_unknown_method():
    with pytest.raises(CostModelError, match="unknown method"):
        TokenProfile("chain_of_drafts", ((1, 1),))


def test_profile_rejects_negative_counts():
    with pytest.raises(CostModelError):
        TokenProfile("std_cot", ((-1, 10),))


def test_profile_rejects_empty_passes():
    with pytest.raises(CostModelError):
        TokenProfile("std_cot", ())


def test_single_pass_methods_take_exactly_one_pass():
    with pytest.raises(CostModelError, match="single-pass"):
        TokenProfile("kard", ((900, 0), (120, 220)))
    TokenProfile("cascod", ((120, 220), (340, 40)))  # multi-pass method is fine


def test_profile_token_totals():
    profile = TokenProfile("cascod", ((120, 220), (340, 40)))
    assert profile.prompt_tokens == 460
    assert profile.generated_tokens == 260


# ---------------------------------------------------------------------------
# ratios
# ---------------------------------------------------------------------------


def test_self_ratio_is_exactly_one():
    pair = (TINY, TokenProfile("std_cot", ((120, 220),)))
    assert relative_flops(pair, pair) == 1.0


def test_internalized_matches_std_cot_under_equal_lengths():
    std = (TINY, TokenProfile("std_cot", ((120, 220),)))
    ours = (TINY, TokenProfile("internalized", ((120, 220),)))
    assert relative_flops(ours, std) == 1.0
    assert relative_flops(ours, std, attention=False) == 1.0


def test_parameter_scale_ratio_attention_off():
    profile = TokenProfile("zero_shot", ((220, 120),))
    ratio = relative_flops((BIG, profile), (TINY, profile), attention=False)
    assert ratio == pytest.approx(6.36, abs=0.01)
    assert ratio == pytest.approx(7.0 / 1.1)


def test_zero_reference_is_rejected():
    empty = (TINY, TokenProfile("std_cot", ((0, 0),)))
    full = (TINY, TokenProfile("std_cot", ((1, 1),)))
    with pytest.raises(CostModelError, match="zero cost"):
        relative_flops(full, empty)


# ---------------------------------------------------------------------------
# shipped defaults
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def config():
    return load_cost_config()


def test_default_config_contents(config):
    assert set(config.profiles) == set(METHODS)
    assert config.models["tinyllama"] == TINY
    assert config.models["llama2_7b"] == BIG
    assert config.profiles["kard"].prompt_tokens == 1020  # +900 retrieved tokens
    assert len(config.profiles["cascod"].passes) == 2
    assert config.notes


@pytest.mark.parametrize("attention", [True, False])
def test_kard_ratio_in_documented_range(config, attention):
    kard = (TINY, config.profiles["kard"])
    ours = (TINY, config.profiles["internalized"])
    assert 3.0 <= relative_flops(kard, ours, attention=attention) <= 4.5


@pytest.mark.parametrize("attention", [True, False])
def test_method_cost_ordering(config, attention):
    cost = {
        m: sequence_flops(TINY, config.profiles[m], attention=attention)
        for m in ("internalized", "std_cot", "cascod", "kard")
    }
    assert cost["internalized"] == cost["std_cot"]
    assert cost["std_cot"] < cost["cascod"] < cost["kard"]


def test_zero_shot_anchor_costs_like_internalized(config):
    # 220+120 and 120+220 visit the same number of positions.
    anchor = (TINY, config.profiles["zero_shot"])
    ours = (TINY, config.profiles["internalized"])
    assert relative_flops(ours, anchor) == 1.0


def test_load_custom_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({
        "models": {"m": {"n_params": 1e6, "n_layers": 2, "hidden": 8}},
        "profiles": {"std_cot": [[10, 20]]},
    }))
    config = load_cost_config(path)
    assert config.models["m"].n_layers == 2
    assert config.profiles["std_cot"].generated_tokens == 20
    assert config.notes == ""


@pytest.mark.parametrize("payload", ["{not json", '{"profiles": {}}', '{"models": {}}'])
def test_malformed_config_is_rejected(tmp_path, payload):
    path = tmp_path / "bad.json"
    path.write_text(payload)
    with pytest.raises(CostModelError, match="bad.json"):
        load_cost_config(path)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def test_cost_report_rows(config):
    rows = cost_report(config)
    assert len(rows) == len(config.models) * len(config.profiles)
    ref = next(r for r in rows if r["model"] == "tinyllama" and r["method"] == "zero_shot")
    assert ref["relative"] == 1.0
    anchor = (config.models["tinyllama"], config.profiles["zero_shot"])
    for row in rows:
        pair = (config.models[row["model"]], config.profiles[row["method"]])
        assert row["relative"] == pytest.approx(relative_flops(pair, anchor))


def test_cost_report_rejects_unknown_reference(config):
    with pytest.raises(CostModelError):
        cost_report(config, reference=("gpt99", "zero_shot"))
    with pytest.raises(CostModelError):
        cost_report(config, reference=("tinyllama", "few_shot"))


def test_render_cost_table(config):
    rows = cost_report(config)
    text = render_cost_table(rows)
    lines = text.splitlines()
    assert len(lines) == 2 + len(rows)
    assert "method" in lines[0]
    assert all(line.endswith("x") for line in lines[2:])
