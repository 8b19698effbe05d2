import numpy as np
import pandas as pd
import pytest

from circuit import (
    HardCircuit,
    NetlistError,
    apply_gates,
    eval_scalar,
    export,
    format_netlist,
    pack_bits,
    packed_scores,
    parse_netlist,
    predict,
    read_netlist,
    scalar_scores,
    unpack_bits,
    validate_circuit,
    write_netlist,
    write_predictions,
)
from codebook import NAME_TO_GATE, truth_table
from gate_types import Method
from netarch import Network, NetworkConfig
from verify import random_circuit


def xor_and_circuit():
    """One layer: neuron 0 = XOR(x0, x1) for class 0, neuron 1 = AND(x0, x1) for class 1."""
    return HardCircuit(
        input_dim=2,
        classes=2,
        gates=[np.array([NAME_TO_GATE["XOR"], NAME_TO_GATE["AND"]])],
        wiring=[np.array([[0, 1], [0, 1]])],
    )


NETLIST = """DLGN v1
config 2 1 2 2
g 0 0 XOR 0 1
g 0 1 AND 0 1
"""


class TestPacking:
    def test_lane_layout(self):
        x = np.zeros((70, 2), dtype=np.uint8)
        x[0, 0] = 1
        x[65, 1] = 1
        words, batch = pack_bits(x)
        assert batch == 70
        assert words.shape == (2, 2)
        assert words.dtype == np.uint64
        assert words[0, 0] == 1
        assert words[1, 1] == 2
        assert words[0, 1] == 0

    def test_unpack_inverts_pack(self, rng):
        x = rng.integers(0, 2, size=(130, 5)).astype(np.uint8)
        words, batch = pack_bits(x)
        assert np.array_equal(unpack_bits(words, batch), x.T)

    def test_gate_masks_reproduce_truth_tables(self):
        a = np.array([[0b1010]], dtype=np.uint64)
        b = np.array([[0b1100]], dtype=np.uint64)
        for g in range(16):
            out = int(apply_gates(np.array([g]), a, b)[0, 0]) & 0b1111
            assert [(out >> i) & 1 for i in range(4)] == truth_table(g).tolist()


class TestEvaluation:
    def test_known_circuit(self):
        x = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=np.uint8)
        packed, batch = pack_bits(x)
        scores = packed_scores(xor_and_circuit(), packed, batch)
        assert scores.tolist() == [[0, 0], [1, 0], [1, 0], [0, 1]]
        # tie at (0, 0) goes to class 0
        assert predict(xor_and_circuit(), x).tolist() == [0, 0, 0, 1]

    def test_packed_equals_scalar_on_random_circuits(self, rng):
        for _ in range(50):
            circuit = random_circuit(rng)
            x = rng.integers(0, 2, size=(int(rng.integers(1, 200)), circuit.input_dim)).astype(np.uint8)
            packed, batch = pack_bits(x)
            assert np.array_equal(packed_scores(circuit, packed, batch), scalar_scores(circuit, x))

    def test_workers_do_not_change_output(self, rng):
        circuit = random_circuit(rng)
        x = rng.integers(0, 2, size=(1000, circuit.input_dim)).astype(np.uint8)
        assert np.array_equal(predict(circuit, x, workers=4), predict(circuit, x, workers=1))

    def test_padding_lanes_ignored(self):
        # TRUE gates output 1 on padding lanes too; only real samples count
        circuit = HardCircuit(2, 1, [np.array([15, 15])], [np.array([[0, 1], [1, 0]])])
        packed, batch = pack_bits(np.zeros((3, 2), dtype=np.uint8))
        assert packed_scores(circuit, packed, batch).tolist() == [[2], [2], [2]]

    def test_dimension_mismatch_names_both(self):
        with pytest.raises(ValueError, match="input_dim=2.*3 features"):
            predict(xor_and_circuit(), np.zeros((4, 3), dtype=np.uint8))

    def test_export_matches_hard_forward(self, rng):
        config = NetworkConfig(input_dim=7, depth=3, width=12, classes=3, method=Method.SOFT_MIX)
        network = Network(config, rng=rng)
        x = rng.integers(0, 2, size=(100, 7)).astype(np.uint8)
        _, logits, _ = network.forward(x, mode="hard")
        circuit = export(network)
        packed, batch = pack_bits(x)
        assert np.array_equal(packed_scores(circuit, packed, batch), logits.astype(np.int64))
        assert np.array_equal(eval_scalar(circuit, x), np.argmax(logits, axis=1))


class TestValidation:
    def test_valid(self):
        assert validate_circuit(xor_and_circuit()) == []

    def test_self_loop_and_range(self):
        circuit = xor_and_circuit()
        circuit.wiring[0] = np.array([[0, 0], [0, 5]])
        errors = validate_circuit(circuit)
        assert any("same input" in e for e in errors)
        assert any("outside" in e for e in errors)

    def test_uneven_groups(self):
        circuit = xor_and_circuit()
        circuit.classes = 3
        assert any("divisible" in e for e in validate_circuit(circuit))


class TestNetlist:
    def test_format(self):
        assert format_netlist(xor_and_circuit()) == NETLIST

    def test_parse(self):
        assert parse_netlist(NETLIST) == xor_and_circuit()

    def test_comments_and_blank_lines(self):
        text = "# exported\nDLGN v1\n\nconfig 2 1 2 2\n# layer 0\ng 0 1 AND 0 1\ng 0 0 xor 0 1\n"
        assert parse_netlist(text) == xor_and_circuit()

    def test_file_roundtrip_of_exported_network(self, tmp_path, rng):
        config = NetworkConfig(input_dim=5, depth=2, width=6, classes=2, method=Method.MULTILINEAR_COVJAC)
        circuit = export(Network(config, rng=rng))
        path = tmp_path / "model.net"
        write_netlist(circuit, path)
        assert read_netlist(path) == circuit

    @pytest.mark.parametrize("text, message", [
        ("DLGN v2\nconfig 2 1 2 2\ng 0 0 XOR 0 1\ng 0 1 AND 0 1\n", "header"),
        ("DLGN v1\nconfig 2 1 2\n", "config"),
        ("DLGN v1\nconfig 2 1 3 2\n", "divisible"),
        ("DLGN v1\nconfig 2 1 2 2\ng 0 0 XOR 0 1\ng 0 1 FOO 0 1\n", "Unknown gate"),
        ("DLGN v1\nconfig 2 1 2 2\ng 0 0 XOR 0 1\ng 0 1 8 0 1\n", "named"),
        ("DLGN v1\nconfig 2 1 2 2\ng 0 0 XOR 0 1\ng 0 1 AND 0 2\n", "out of range"),
        ("DLGN v1\nconfig 2 1 2 2\ng 0 0 XOR 0 1\ng 0 1 AND 1 1\n", "same input"),
        ("DLGN v1\nconfig 2 1 2 2\ng 0 0 XOR 0 1\ng 0 0 AND 0 1\n", "duplicate"),
        ("DLGN v1\nconfig 2 1 2 2\ng 0 0 XOR 0 1\n", "missing"),
        ("DLGN v1\nconfig 2 1 2 2\ng 0 0 XOR 0 1\ng 1 1 AND 0 1\n", "layer 1 out of range"),
        ("DLGN v1\nconfig 2 1 2 2\ng 0 0 XOR 0\n", "expected"),
        ("", "empty"),
    ])
    def test_malformed(self, text, message):
        with pytest.raises(NetlistError, match=message):
            parse_netlist(text)

    def test_error_carries_line_number(self):
        with pytest.raises(NetlistError) as info:
            parse_netlist("DLGN v1\nconfig 2 1 2 2\ng 0 0 XOR 0 1\ng 0 1 FOO 0 1\n")
        assert info.value.line == 4

    def test_refuses_to_write_invalid_circuit(self, tmp_path):
        circuit = xor_and_circuit()
        circuit.wiring[0] = np.array([[0, 0], [0, 1]])
        with pytest.raises(NetlistError):
            write_netlist(circuit, tmp_path / "bad.net")
        assert not (tmp_path / "bad.net").exists()

    def test_missing_file(self, tmp_path):
        with pytest.raises(NetlistError, match="not found"):
            read_netlist(tmp_path / "none.net")


def test_write_predictions(tmp_path):
    path = tmp_path / "pred.csv"
    write_predictions(path, np.array([1, 0, 2]))
    df = pd.read_csv(path)
    assert list(df.columns) == ["sample_index", "predicted_class"]
    assert df["predicted_class"].tolist() == [1, 0, 2]
