"""Smoke test for the philab extension: config, tasks, model, KL, coder."""

import math
import tempfile

import philab


def main():
    cfg = philab.Config("desk", "transformer")
    cfg.set("model.phi_position", "1")
    cfg.set("model.num_layers", "2")
    cfg.set("model.model_dim", "16")
    cfg.set("model.num_heads", "2")
    cfg.set("model.mlp_dim", "32")
    assert philab.Config.from_json(cfg.to_json()).run_id() == cfg.run_id()

    try:
        cfg.set("train.bogus", "1")
    except philab.PhilabError as e:
        assert "train.bogus" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    seq = philab.generate(cfg, "icll", seed=7)
    assert seq.task == "icll" and seq.complexity_bits > 0
    assert philab.generate(cfg, "icll", seed=7).tokens == seq.tokens

    assert abs(philab.complexity_bits(3, 3, 4, 18) - 27.089) < 1e-3

    kl = philab.gaussian_kl([0.0, 1.0], [1.0, 0.5], [0.0, 0.0], [1.0, 1.0])
    assert kl[0] == 0.0
    assert abs(kl[1] - (math.log(2.0) + (0.25 + 1.0) / 2 - 0.5)) < 1e-12

    model = philab.Model(cfg, seed=1)
    nll, phi = model.losses(seq.tokens)
    assert len(nll) == len(seq.tokens) - 1 and len(phi) == len(seq.tokens)
    assert all(x >= 0 for x in phi)
    rows = model.logits(seq.tokens)
    assert len(rows) == len(seq.tokens)

    probs = [[0.5, 0.25, 0.25]] * 600
    tokens = [i % 3 for i in range(600)]
    assert philab.code_round_trip(probs, tokens) == tokens
    bits, ideal = philab.code_length(probs, tokens)
    assert bits <= ideal * 1.01

    with tempfile.TemporaryDirectory() as out:
        cfg.set("out_dir", out)
        cfg.set("train.steps", "3")
        cfg.set("eval.per_task", "2")
        cfg.set("data.examples_per_seq", "[2, 3]")
        cfg.set("data.example_len", "[10, 12]")
        assert philab.gen_data(cfg) == 8
        assert len(philab.train(cfg)) == 3
        assert philab.evaluate(cfg) > 0
        philab.analyze(cfg)
        trained = philab.Model.load(cfg, out + "/checkpoint.bin")
        assert trained.num_params == model.num_params

    print("smoke test ok")


if __name__ == "__main__":
    main()
