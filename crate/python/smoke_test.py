"""Smoke test for the spikefed extension module."""

import json
import math
import os
import tempfile

import spikefed


def main():
    v, s = spikefed.lif_step([0.0, 0.95], [0.5, 0.2], beta=0.9, threshold=1.0)
    assert s == [0.0, 1.0], s
    assert math.isclose(v[0], 0.5) and math.isclose(v[1], 0.9 * 0.95 + 0.2 - 1.0)

    raster = spikefed.delta_encode([[0.0, 2.0, 2.0, -1.0]], 1.0)
    # The reference moves by one threshold per event, so a jump of 2 fires twice.
    assert raster == [[0.0, 1.0, 1.0, -1.0]], raster
    rates = spikefed.rate_encode([[0.0, 1.0]], 4, 3)
    assert [step[0] for step in rates] == [[0, 1]] * 4

    wsp = dict(spikefed.compute_wsp([("snn", 0.6, 1e-6), ("cnn", 0.7, 4e-6)]))
    assert math.isclose(wsp["cnn"], 0.5 + 0.5 * 0.25)
    assert math.isclose(spikefed.estimate_energy(1000, 2000.0), 1000 * 4.6e-12 + 2000 * 0.9e-12)

    trunk = json.dumps({"in_channels": 4, "window": 32, "conv1_channels": 4, "conv2_channels": 4, "hidden": 8})
    model = spikefed.Model("cnn", trunk=trunk)
    a, b = model.init_params(1), model.init_params(2)
    avg = spikefed.fedavg([("c1", a, 1), ("c2", b, 3)])
    expected = [0.25 * x + 0.75 * y for x, y in zip(a.flat(), b.flat())]
    assert all(math.isclose(x, y, abs_tol=1e-15) for x, y in zip(avg.flat(), expected))
    back = spikefed.Params.from_checkpoint(avg.to_checkpoint())
    assert back.flat() == avg.flat() and back.fingerprint == avg.fingerprint
    logits = model.forward(a, [[math.sin(i + c) for i in range(32)] for c in range(4)])
    assert len(logits) == 4 and all(math.isfinite(x) for x in logits)

    try:
        spikefed.parse_edf(b"not an edf")
    except spikefed.SpikefedError:
        pass
    else:
        raise AssertionError("garbage parsed as EDF")

    with tempfile.TemporaryDirectory() as tmp:
        cfg = os.path.join(tmp, "exp.toml")
        with open(cfg, "w") as f:
            f.write(
                "seed = 5\n"
                f"output_dir = {json.dumps(os.path.join(tmp, 'runs'))}\n"
                "[dataset]\nsynthetic = true\nwindow = 64\n"
                "[synthetic]\nrecords = 40\n"
                "[model.trunk]\nwindow = 64\nconv1_channels = 4\nconv2_channels = 4\n"
                "conv1_stride = 2\nconv2_stride = 2\nhidden = 8\n"
                "[model.lstm]\nwindow = 64\nhidden = 4\n"
                "[federated]\nrounds = 2\nbatch = 16\n"
            )
        exp = spikefed.Experiment(cfg)
        print(exp.ingest())
        for method in ("snn", "cnn", "lstm"):
            curve = exp.train(method)
            assert len(curve) == 2
        report = json.loads(exp.compare())
        methods = [m["method"] for m in report["energy"]["methods"]]
        assert methods == ["snn", "cnn", "lstm"], methods
        rec = spikefed.read_edf(os.path.join(tmp, "runs", "synthetic", "S001", "S001R04.edf"))
        assert rec.subject_id == "S001" and len(rec.channel_labels) == 64
        assert spikefed.parse_edf(rec.to_bytes()).channel(0) == rec.channel(0)

    print("smoke test passed")


if __name__ == "__main__":
    main()
