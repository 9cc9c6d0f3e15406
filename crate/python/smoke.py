"""Smoke test for the `tlens` Python module.

Build and install the extension first:
    pip install --no-build-isolation ./crates/py
then run from the repository root:
    python python/smoke.py
"""

import json
import math
import tempfile
from pathlib import Path

import tlens

ROOT = Path(__file__).resolve().parent.parent


def check_ranks() -> None:
    assert tlens.fractional_rank([0.3, 0.3, 0.7]) == [1.5, 1.5, 3.0]
    assert tlens.important_neuron_count(30) == 3
    assert tlens.cosine([1.0, 0.0], [0.0, 0.0]) == 0.0
    assert abs(tlens.cosine([1.0, 2.0], [2.0, 4.0]) - 1.0) < 1e-12


def check_model() -> None:
    model = tlens.Model.create([1, 12, 12], 3, conv_channels=[4, 8], hidden_units=[16], seed=3)
    assert model.neuron_layers == [0, 3, 7], model.neuron_layers
    back = tlens.Model.from_bytes(model.to_bytes())
    x = [((i * 7) % 13) / 13 for i in range(144)]
    assert back.logits(x) == model.logits(x)

    # completeness: conductance over a layer sums to the logit change from a zero input
    target = model.predict(x)
    delta = model.logits(x)[target] - model.logits([0.0] * 144)[target]
    total = sum(model.layer_conductance(x, target, 3, steps=256))
    assert abs(total - delta) <= 0.02 * abs(delta) + 1e-6, (total, delta)
    assert len(model.neuron_attribution(x, target, 3)) == model.neuron_count(3)


def check_dataset() -> None:
    data = tlens.Dataset.synthetic(2, 10, side=8, seed=1)
    assert len(data) == 20 and data.instance_shape == [1, 8, 8]
    model = tlens.Model.create([1, 8, 8], 2, conv_channels=[2, 4], hidden_units=[6])
    ranking = data.important_neurons(model, 0, 0, steps=8)
    assert ranking["k"] == 1 and len(ranking["aggregated_rank"]) == 2
    weights = data.important_weights(model, 0, 0, 3)
    assert weights["n_from"] == 2 and weights["n_to"] == 4


def check_tsne_and_svm() -> None:
    rows = [[float(i % 2) * 5 + 0.01 * j for j in range(4)] for i in range(30)]
    out = tlens.tsne(rows, perplexity=5.0, iterations=250)
    assert len(out["coordinates"]) == 30 and math.isfinite(out["kl"])
    labels = [i % 2 for i in range(30)]
    fit = tlens.train_svm(rows, labels)
    assert fit["cv_accuracy"] >= 0.95, fit["cv_accuracy"]


def check_pipeline() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        run_id, run_dir, summary = tlens.run_pipeline(ROOT / "configs" / "toy.toml", tmp)
        manifest = json.loads((Path(run_dir) / "manifest.json").read_text())
        assert run_id == "toy" == manifest["run_id"]
        assert "score" in summary["transferability"]


if __name__ == "__main__":
    for check in (check_ranks, check_model, check_dataset, check_tsne_and_svm, check_pipeline):
        check()
        print(f"ok {check.__name__}")
