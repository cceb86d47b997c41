import numpy as np
import pytest

import oracles
from stseg import nn
from stseg.convlstm import (ConvLstmConfig, ConvLstmState, convlstm_apply,
                            convlstm_cell, convlstm_init, temporal_forward)
from stseg.tensor import Tensor, sigmoid

SMALL = ConvLstmConfig(input_channels=2, hidden_filters=4, kernel=3, layers=1)


def zeroed_store(cfg, seed=0):
    store = convlstm_init(cfg, seed)
    for _, t in store.items():
        t.data = np.zeros_like(t.data)
    return store


class TestInit:
    def test_forget_bias_one(self):
        store = convlstm_init(SMALL, 0)
        assert np.array_equal(store["rnn.l0.b_f"].data, np.ones(4, np.float32))
        assert np.array_equal(store["rnn.l0.b_i"].data, np.zeros(4, np.float32))

    def test_peepholes_zero(self):
        store = convlstm_init(SMALL, 0)
        for gate in ("i", "f", "o"):
            assert np.array_equal(store[f"rnn.l0.W_c{gate}"].data,
                                  np.zeros(4, np.float32))

    def test_same_seed_bit_identical(self):
        a, b = convlstm_init(SMALL, 9), convlstm_init(SMALL, 9)
        for name in a.names():
            assert np.array_equal(a[name].data, b[name].data)

    def test_parameter_tally(self):
        def tally(d, r, k, layers, lc):
            total, din = 0, d
            for _ in range(layers):
                total += 4 * r * din * k * k + 4 * r * r * k * k + 3 * r + 4 * r
                din = r
            return total + lc * r + lc

        cfg = ConvLstmConfig(input_channels=2, hidden_filters=32, kernel=3, layers=2)
        assert convlstm_init(cfg, 0).n_parameters() == 113_410
        assert convlstm_init(cfg, 0).n_parameters() == tally(2, 32, 3, 2, 2)
        assert convlstm_init(SMALL, 0).n_parameters() == tally(2, 4, 3, 1, 2)

    def test_per_element_peephole_shape(self):
        cfg = ConvLstmConfig(input_channels=2, hidden_filters=3, kernel=3,
                             layers=1, peephole="per-element", spatial=(8, 8))
        store = convlstm_init(cfg, 0)
        assert store["rnn.l0.W_ci"].data.shape == (3, 8, 8)

    def test_per_element_needs_spatial(self):
        with pytest.raises(ValueError):
            ConvLstmConfig(peephole="per-element")


class TestCell:
    def test_zero_params_zero_state(self, rng):
        store = zeroed_store(SMALL)
        x = Tensor(rng.random((1, 2, 8, 8)).astype(np.float32))
        state = ConvLstmState.zeros(1, 4, 8, 8)
        gates: dict = {}
        out = convlstm_cell(x, state, store, SMALL, gates_out=gates)
        assert np.allclose(gates["i"], 0.5) and np.allclose(gates["f"], 0.5)
        assert np.allclose(gates["o"], 0.5)
        assert np.array_equal(out.c.data, np.zeros_like(out.c.data))
        assert np.array_equal(out.h.data, np.zeros_like(out.h.data))

    def test_gates_bounded(self, f64, rng):
        store = convlstm_init(SMALL, 3).astype(np.float64)
        x = Tensor(rng.standard_normal((2, 2, 8, 8)))
        state = ConvLstmState(
            h=Tensor(rng.standard_normal((2, 4, 8, 8))),
            c=Tensor(rng.standard_normal((2, 4, 8, 8))))
        gates: dict = {}
        convlstm_cell(x, state, store, SMALL, gates_out=gates)
        for g in ("i", "f", "o"):
            assert (gates[g] > 0).all() and (gates[g] < 1).all()

    def test_memory_conservation_probe(self, rng):
        store = convlstm_init(SMALL, 3)
        x = Tensor(rng.standard_normal((1, 2, 8, 8)).astype(np.float32))
        c_prev = rng.standard_normal((1, 4, 8, 8)).astype(np.float32)
        state = ConvLstmState(h=Tensor(np.zeros_like(c_prev)), c=Tensor(c_prev))
        out = convlstm_cell(x, state, store, SMALL,
                            gate_overrides={"f": 1.0, "i": 0.0})
        assert np.array_equal(out.c.data, c_prev)

    def test_hidden_shape_default_width(self, rng):
        cfg = ConvLstmConfig(input_channels=2, hidden_filters=32, kernel=3,
                             layers=1)
        store = convlstm_init(cfg, 0)
        x = Tensor(rng.random((1, 2, 64, 64)).astype(np.float32))
        out = convlstm_cell(x, ConvLstmState.zeros(1, 32, 64, 64), store, cfg)
        assert out.h.shape == (1, 32, 64, 64)

    def test_state_shape_mismatch_rejected(self, rng):
        store = convlstm_init(SMALL, 0)
        x = Tensor(rng.random((1, 2, 8, 8)).astype(np.float32))
        with pytest.raises(ValueError):
            convlstm_cell(x, ConvLstmState.zeros(1, 4, 4, 4), store, SMALL)

    def test_nan_state_rejected(self, rng):
        store = convlstm_init(SMALL, 0)
        x = Tensor(rng.random((1, 2, 8, 8)).astype(np.float32))
        bad = ConvLstmState.zeros(1, 4, 8, 8)
        bad.c.data[0, 0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            convlstm_cell(x, bad, store, SMALL)


class TestScalarOracle:
    def _store_from(self, p, cfg, dtype=np.float64):
        store = convlstm_init(cfg, 0).astype(dtype)
        sym = {"W_xi": "wxi", "W_hi": "whi", "W_ci": "wci", "b_i": "bi",
               "W_xf": "wxf", "W_hf": "whf", "W_cf": "wcf", "b_f": "bf",
               "W_xc": "wxc", "W_hc": "whc", "b_c": "bc",
               "W_xo": "wxo", "W_ho": "who", "W_co": "wco", "b_o": "bo"}
        for name, key in sym.items():
            t = store[f"rnn.l0.{name}"]
            t.data = np.full_like(t.data, p[key])
        return store

    @pytest.mark.parametrize("o_state", ["prev", "current"])
    def test_matches_scalar_recurrence(self, f64, rng, o_state):
        cfg = ConvLstmConfig(input_channels=1, hidden_filters=1, kernel=1,
                             layers=1, o_peephole_state=o_state)
        keys = ["wxi", "whi", "wci", "bi", "wxf", "whf", "wcf", "bf",
                "wxc", "whc", "bc", "wxo", "who", "wco", "bo"]
        for _ in range(5):
            p = {k: float(rng.uniform(-1, 1)) for k in keys}
            store = self._store_from(p, cfg)
            xs = rng.uniform(-1, 1, size=5)
            h = c = 0.0
            state = ConvLstmState.zeros(1, 1, 1, 1, dtype=np.float64)
            for x in xs:
                state = convlstm_cell(
                    Tensor(np.full((1, 1, 1, 1), x)), state, store, cfg)
                h, c = oracles.scalar_lstm_step(x, h, c, p, o_peephole=o_state)
                assert abs(state.h.data[0, 0, 0, 0] - h) < 1e-12
                assert abs(state.c.data[0, 0, 0, 0] - c) < 1e-12


class TestTemporalForward:
    def test_t1_equals_cell_plus_head(self, rng):
        cfg = ConvLstmConfig(input_channels=2, hidden_filters=4, layers=1)
        store = convlstm_init(cfg, 4)
        x = rng.random((1, 2, 8, 8)).astype(np.float32)
        fused = temporal_forward([Tensor(x)], store, cfg)
        state = convlstm_cell(Tensor(x), ConvLstmState.zeros(1, 4, 8, 8),
                              store, cfg)
        manual = sigmoid(nn.conv2d(state.h, store["head.weight"],
                                   store["head.bias"]))
        assert np.array_equal(fused.data, manual.data)

    def test_zero_recurrence_identical_inputs_order_invariant(self, rng):
        cfg = ConvLstmConfig(input_channels=2, hidden_filters=4, layers=2)
        store = convlstm_init(cfg, 4)
        for layer in range(2):
            for gate in ("i", "f", "c", "o"):
                w = store[f"rnn.l{layer}.W_h{gate}"]
                w.data = np.zeros_like(w.data)
        x = rng.random((1, 2, 8, 8)).astype(np.float32)
        seqs = [[Tensor(x.copy()) for _ in range(3)] for _ in range(2)]
        outs = [temporal_forward(s, store, cfg).data for s in seqs]
        assert np.array_equal(outs[0], outs[1])

    def test_outputs_in_unit_interval(self, rng):
        cfg = ConvLstmConfig(input_channels=2, hidden_filters=4, layers=2)
        store = convlstm_init(cfg, 4)
        seq = rng.random((2, 3, 2, 16, 16)).astype(np.float32)
        fused = temporal_forward(seq, store, cfg)
        assert fused.shape == (2, 2, 16, 16)
        assert (fused.data > 0).all() and (fused.data < 1).all()

    def test_empty_sequence_rejected(self):
        store = convlstm_init(SMALL, 0)
        with pytest.raises(ValueError):
            temporal_forward([], store, SMALL)

    def test_channel_mismatch_rejected(self, rng):
        store = convlstm_init(SMALL, 0)
        with pytest.raises(ValueError):
            temporal_forward([Tensor(rng.random((1, 3, 8, 8)))], store, SMALL)

    def test_interlayer_projection_path(self, rng):
        cfg = ConvLstmConfig(input_channels=2, hidden_filters=4, layers=2,
                             interlayer_projection=True)
        store = convlstm_init(cfg, 1)
        assert "proj.l0.weight" in store
        seq = rng.random((1, 3, 2, 8, 8)).astype(np.float32)
        assert temporal_forward(seq, store, cfg).shape == (1, 2, 8, 8)

    def test_apply_helper_single_batch_parity(self, rng):
        cfg = ConvLstmConfig(input_channels=2, hidden_filters=4, layers=2)
        store = convlstm_init(cfg, 4)
        seq = rng.random((3, 2, 8, 8)).astype(np.float32)
        single = convlstm_apply(seq, store, cfg)
        batched = convlstm_apply(seq[None], store, cfg)[0]
        assert np.array_equal(single, batched)
