from fractions import Fraction

import numpy as np
import pytest

from spikeseq.data import gen_adding
from spikeseq.network import ModelSpec, Network
from spikeseq.numerics import Rng
from spikeseq.profiler import (
    FOOTNOTE,
    OpCountReport,
    closed_form_cost,
    count_dataset,
    count_inference,
    dense_reference,
    normalized_report,
    predicted_cost,
    report_csv,
    report_text,
)


def calibrated(variant, m=4, n=4, layers=1, seed=0, label_mode="sequence"):
    spec = ModelSpec(variant=variant, input_dim=m, classes=3, layers=layers, units=n,
                     n_bits=3, k_threshold=1, label_mode=label_mode)
    net = Network(spec, seed=seed)
    net.forward(np.random.default_rng(seed).uniform(0, 2, size=(6, 8, m)), train=True)
    return net


def test_lif_cost_by_hand():
    assert closed_form_cost("lif", 4, 4, Fraction(1, 4)) == 20


def test_dense_costs_by_hand():
    assert closed_form_cost("gru", 4, 4) == 108
    assert closed_form_cost("lstm", 4, 4) == 140
    assert closed_form_cost("gru", 4, 4) / closed_form_cost("lif", 4, 4, Fraction(1, 4)) == Fraction(27, 5)
    assert closed_form_cost("lstm", 4, 4) / closed_form_cost("gru", 4, 4) == Fraction(35, 27)


def test_gated_costs():
    assert closed_form_cost("gated_v1", 4, 4, Fraction(1, 2)) == 16 + 20
    assert closed_form_cost("gated_v2", 4, 4, Fraction(1, 2), Fraction(1, 4)) == 16 + 8 + 20


def test_cost_validation():
    with pytest.raises(ValueError):
        closed_form_cost("rnn", 4, 4)
    with pytest.raises(ValueError):
        closed_form_cost("lif", 0, 4)
    with pytest.raises(ValueError):
        closed_form_cost("lif", 4, 4, 1.5)
    with pytest.raises(ValueError):
        OpCountReport("lif", -1)


def test_all_zero_input_costs_state_updates_only():
    net = calibrated("lif")
    N = 7
    rep = count_inference(net, np.zeros((N, 4)))
    assert rep.mults == N * 4 * 4
    assert rep.layers[0].input_density == 0.0
    assert rep.readout_mults == 0 or rep.readout_mults % 3 == 0


@pytest.mark.parametrize("variant", ["lif", "gated_v1", "gated_v2", "gru", "lstm"])
def test_counts_equal_closed_form_with_measured_density(variant):
    net = calibrated(variant, m=5, n=4)
    gen = np.random.default_rng(1)
    x = gen.uniform(0, 2, size=(9, 3, 5)) * (gen.random((9, 3, 5)) < 0.4)
    rep = count_inference(net, x)
    y = net.layers[0].forward(x, train=False)
    assert rep.mults == predicted_cost(variant, x, y)


def test_multi_layer_counts_add_up():
    net = calibrated("gated_v2", m=3, n=4, layers=2)
    x = np.random.default_rng(2).uniform(0, 2, size=(5, 2, 3))
    rep = count_inference(net, x)
    y0 = net.layers[0].forward(x, train=False)
    y1 = net.layers[1].forward(y0, train=False)
    assert rep.mults == predicted_cost("gated_v2", x, y0) + predicted_cost("gated_v2", y0, y1)
    assert rep.zero_output_fraction == pytest.approx(
        (np.sum(y0 == 0) + np.sum(y1 == 0)) / (y0.size + y1.size))


def test_dataset_report_normalises_lstm_to_one():
    ds = gen_adding(Rng(0), 12, 10)
    models = {v: calibrated(v, m=2, n=4, seed=i) for i, v in enumerate(["lif", "gru", "lstm"])}
    rows = {r.arch: r for r in normalized_report(models, ds)}
    assert rows["lstm"].normalized == 1.0
    assert rows["gru"].normalized == pytest.approx(float(Fraction(
        closed_form_cost("gru", 2, 4), closed_form_cost("lstm", 2, 4))), rel=1e-12)
    assert rows["lif"].normalized < rows["gru"].normalized


def test_report_uses_dense_reference_when_base_missing():
    ds = gen_adding(Rng(0), 6, 10)
    net = calibrated("gated_v1", m=2, n=4)
    rows = normalized_report({"gated_v1": net}, ds, "lstm")
    assert rows[-1].arch == "lstm" and rows[-1].normalized == 1.0
    assert rows[0].normalized == pytest.approx(
        count_dataset(net, ds).mults_per_inference / dense_reference("lstm", net.spec, ds))
    with pytest.raises(ValueError):
        dense_reference("lif", net.spec, ds)
    text = report_text(rows)
    assert FOOTNOTE in text and "gated_v1" in text
    assert report_csv(rows).splitlines()[0].startswith("arch,mults_per_inference,normalized")


def test_empty_dataset_rejected():
    ds = gen_adding(Rng(0), 4, 10).subset([])
    with pytest.raises(ValueError):
        count_dataset(calibrated("lif", m=2), ds)
