import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from framescope.core import DuplicateStage, StageId, UnknownStage
from framescope.ipt import ClassicShadow, StageParams
from framescope.strategy import (
    Strategy,
    apply_stage,
    apply_strategy,
    format_strategy,
    parse_strategy,
    validate_strategy,
)

stage_lists = st.permutations(list(StageId)).flatmap(lambda p: st.integers(0, 4).map(lambda k: p[:k]))


def test_duplicate_rejected():
    with pytest.raises(DuplicateStage):
        validate_strategy([StageId.SR, StageId.CE, StageId.SR])


def test_unknown_stage_names_the_token():
    with pytest.raises(UnknownStage, match="XX"):
        parse_strategy("SR+XX")


@pytest.mark.parametrize("text", ["", "none", "Without IPT", "  "])
def test_baseline_spellings(text):
    assert parse_strategy(text).is_baseline


def test_parse_is_case_and_space_insensitive():
    assert parse_strategy(" sr + Cn+ce ").stages == (StageId.SR, StageId.CN, StageId.CE)


def test_labels():
    assert parse_strategy("").label() == "Without IPT"
    assert parse_strategy("SR+CN").label() == "SR + CN"


@given(stage_lists)
def test_format_parse_roundtrip(stages):
    s = validate_strategy(stages)
    assert parse_strategy(format_strategy(s)) == s


def test_canonical_encoding_ignores_unused_params():
    a = Strategy((StageId.CE,), StageParams(shadow=ClassicShadow(0.5)))
    b = Strategy((StageId.CE,))
    assert a.canonical_encoding() == b.canonical_encoding()
    c = Strategy((StageId.SR,), StageParams(shadow=ClassicShadow(0.5)))
    assert c.canonical_encoding() != Strategy((StageId.SR,)).canonical_encoding()


def test_empty_strategy_is_exact_copy(rng):
    img = rng.random((9, 7, 3))
    out = apply_strategy(Strategy(), img)
    assert np.array_equal(out, img) and out is not img


@settings(max_examples=20, deadline=None)
@given(stage_lists, st.integers(0, 4))
def test_apply_is_left_to_right_composition(stages, cut):
    img = np.random.default_rng(len(stages)).uniform(0.1, 0.9, (12, 12, 3))
    s = validate_strategy(stages)
    cut = min(cut, len(stages))
    head = apply_strategy(validate_strategy(stages[:cut]), img)
    tail = apply_strategy(validate_strategy(stages[cut:]), head)
    assert np.array_equal(apply_strategy(s, img), tail)


def test_single_stage_matches_apply_stage(rng):
    img = rng.uniform(0.1, 0.9, (16, 16, 3))
    for stage in StageId:
        out = apply_strategy(validate_strategy([stage]), img)
        assert np.array_equal(out, apply_stage(stage, img, StageParams()))


def test_cn_on_neutral_image_is_identity(rng):
    # gray-world of a gray image already equals the target white
    g = rng.uniform(0.2, 0.8, (10, 10, 1)).repeat(3, axis=2)
    np.testing.assert_allclose(apply_strategy(parse_strategy("CN"), g), g, atol=1e-6)


def test_order_matters(rng):
    img = rng.uniform(0.1, 0.9, (24, 24, 3)) * np.array([1.0, 0.8, 0.6])
    a = apply_strategy(parse_strategy("CE+IN"), img)
    b = apply_strategy(parse_strategy("IN+CE"), img)
    assert not np.allclose(a, b)
