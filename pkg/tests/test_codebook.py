import numpy as np
import pytest

from codebook import (
    CODEBOOK,
    CORNERS,
    GATE_NAMES,
    M,
    M_INV,
    NAME_TO_GATE,
    classify,
    complement,
    corner_to_poly,
    gate_id,
    gate_outputs,
    poly_eval,
    poly_to_corner,
    snap,
    ste_derivative_table,
    truth_table,
    validate_codebook,
)
from gate_types import GateClass


@pytest.mark.parametrize("name, row", [
    ("AND", [0, 0, 0, 1]),
    ("OR", [0, 1, 1, -1]),
    ("XOR", [0, 1, 1, -2]),
    ("A", [0, 1, 0, 0]),
    ("FALSE", [0, 0, 0, 0]),
    ("TRUE", [1, 0, 0, 0]),
    ("NAND", [1, 0, 0, -1]),
    ("XNOR", [1, -1, -1, 2]),
])
def test_known_rows(name, row):
    assert CODEBOOK[NAME_TO_GATE[name]].tolist() == row


def test_ids_follow_truth_bits():
    assert NAME_TO_GATE["FALSE"] == 0
    assert NAME_TO_GATE["AND"] == 8
    assert NAME_TO_GATE["XOR"] == 6
    assert NAME_TO_GATE["OR"] == 14
    assert NAME_TO_GATE["TRUE"] == 15
    assert truth_table(8).tolist() == [0, 0, 0, 1]


def test_codebook_is_read_only():
    with pytest.raises(ValueError):
        CODEBOOK[0, 0] = 1


def test_column_sums_are_zero():
    assert CODEBOOK[:, 1:].sum(axis=0).tolist() == [0, 0, 0]


def test_collapse_at_every_corner():
    for j in range(16):
        for corner, (a, b) in enumerate(CORNERS):
            assert poly_eval(CODEBOOK[j], a, b) == truth_table(j)[corner]


def test_gate_outputs_match_truth_tables():
    a = np.array([0, 1, 0, 1])
    b = np.array([0, 0, 1, 1])
    outputs = gate_outputs(a, b)
    for j in range(16):
        assert outputs[:, j].tolist() == truth_table(j).tolist()


def test_validate_codebook_accepts_real_codebook():
    assert validate_codebook(CODEBOOK) == []


def test_validate_codebook_catches_sign_flip():
    broken = CODEBOOK.copy()
    broken[NAME_TO_GATE["AND"], 3] = -1
    errors = validate_codebook(broken)
    assert any("cab" in e for e in errors)
    assert any("AND" in e for e in errors)


def test_validate_codebook_rejects_wrong_shape():
    assert validate_codebook(np.zeros((15, 4))) != []


def test_bijection_is_exact():
    assert np.array_equal(M @ M_INV, np.eye(4, dtype=np.int64))
    assert np.array_equal(M_INV @ M, np.eye(4, dtype=np.int64))


def test_corner_poly_roundtrip_preserves_dtype(rng):
    s = rng.random((5, 4)).astype(np.float32)
    c = corner_to_poly(s)
    assert c.dtype == np.float32
    np.testing.assert_allclose(poly_to_corner(c), s, atol=1e-6)


def test_corner_vectors_map_to_codebook_rows():
    for j in range(16):
        assert np.array_equal(corner_to_poly(truth_table(j)), CODEBOOK[j])


def test_snap_exact_rows():
    for j in range(16):
        g, row = snap(CODEBOOK[j].astype(np.float64))
        assert g == j
        assert np.array_equal(row, CODEBOOK[j])


def test_snap_ties_go_to_smallest_id():
    # Midpoint between FALSE (0) and AND (8)
    g, _ = snap(np.array([0.0, 0.0, 0.0, 0.5]))
    assert g == 0


def test_snap_batch_shape(rng):
    ids, rows = snap(rng.normal(size=(3, 7, 4)))
    assert ids.shape == (3, 7)
    assert rows.shape == (3, 7, 4)


def test_snap_rejects_non_finite():
    with pytest.raises(ValueError):
        snap(np.array([0.0, np.nan, 0.0, 0.0]))


def test_complement_pairs():
    for j in range(16):
        assert complement(j) == 15 - j
        np.testing.assert_array_equal(CODEBOOK[complement(j)], np.array([1, 0, 0, 0]) - CODEBOOK[j])


def test_classification_counts():
    classes = [classify(j) for j in range(16)]
    assert classes.count(GateClass.CONSTANT) == 2
    assert classes.count(GateClass.SEPARABLE) == 4
    assert classes.count(GateClass.WEAK_INTERACTION) == 8
    assert classes.count(GateClass.STRONG_INTERACTION) == 2
    assert classify(NAME_TO_GATE["XOR"]) == GateClass.STRONG_INTERACTION


def test_derivative_table():
    rows = ste_derivative_table()
    assert len(rows) == 12
    assert all(max(abs(r["at_b0"]), abs(r["at_b1"])) >= 1 for r in rows)
    xor = next(r for r in rows if r["gate"] == "XOR")
    assert (xor["at_b0"], xor["at_b1"]) == (1, -1)


def test_gate_id_lookup():
    assert gate_id("and") == 8
    assert gate_id(" XOR ") == 6
    assert gate_id(3) == 3
    assert gate_id("12") == 12
    assert GATE_NAMES[gate_id("NOT_A")] == "NOT_A"


def test_gate_id_suggests_close_name():
    with pytest.raises(ValueError, match="XNOR|XOR"):
        gate_id("XORR")


def test_gate_id_out_of_range():
    with pytest.raises(ValueError):
        gate_id(16)
