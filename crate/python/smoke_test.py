"""Smoke test for the gazesep extension module.

Build and copy the module next to this file first:

    cargo build --release -p gazesep-python --features extension-module
    cp target/release/libgazesep_py.so python/gazesep.so
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import gazesep  # noqa: E402


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def check_geometry():
    v = gazesep.yaw_pitch_to_vector(0.3, -0.2)
    assert close(math.sqrt(sum(x * x for x in v)), 1.0)
    yaw, pitch = gazesep.vector_to_yaw_pitch(v)
    assert close(yaw, 0.3) and close(pitch, -0.2)
    assert close(gazesep.angular_error_deg([1, 0, 0], [0, 0, -1]), 90.0)
    assert close(gazesep.cosine_similarity([1, 2], [2, 4]), 1.0)
    try:
        gazesep.cosine_similarity([0, 0], [1, 0])
    except ValueError:
        pass
    else:
        raise AssertionError("zero vector accepted")


def check_losses():
    assert close(gazesep.distill_loss([1, 0], [-1, 0]), 1.0)
    assert close(gazesep.gaze_loss([0, 0, -2], [0, 0, -1]), 0.0, 1e-6)
    w = gazesep.softmax([1.0, 2.0, 3.0])
    assert close(sum(w), 1.0)
    feats = [[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [-1.0, 0.2]]
    labels = [gazesep.yaw_pitch_to_vector(y, 0.0) for y in (0.0, 0.1, 0.8, 1.2)]
    assert gazesep.rank_loss(feats, labels, seed=1) >= 0.0
    for kind in ("cr", "l1", "l2", "kl"):
        assert gazesep.rank_variant_loss(kind, feats, labels) >= 0.0
    assert close(gazesep.spearman([1, 2, 3], [10, 20, 30]), 1.0)


def check_bank(tmp):
    factors = gazesep.FactorSet.default()
    subset = factors.filter_by_groups("appearance,quality")
    assert 0 < len(subset) < len(factors)
    enc = gazesep.MockTextEncoder(dim=16)
    bank = gazesep.FeatureBank.build(factors, enc)
    assert len(bank) == len(factors) and bank.dim == 16
    path = os.path.join(tmp, "bank.bin")
    bank.save(path)
    again = gazesep.FeatureBank.load(path, factors)
    assert again.factor_ids() == factors.ids()
    f = enc.encode("a face with glasses")
    weights = gazesep.correlation_weights(f, bank)
    assert close(sum(weights), 1.0, 1e-9)
    assert -1.0 <= gazesep.irrelevant_loss(f, f, bank) <= 1.0


def check_training(tmp):
    data = gazesep.make_synthetic_dataset(os.path.join(tmp, "data"), n=48, seed=2)
    config = gazesep.TrainConfig.desk()
    config.epochs = 2
    config.batch_size = 8
    assert config.weights == (1.0, 1.0, 1.0)
    assert "epochs = 2" in config.to_toml()
    log = gazesep.train_model(config, data, os.path.join(tmp, "run"))
    assert [int(r["epoch"]) for r in log] == [1, 2]
    assert all(math.isfinite(r["total"]) for r in log)
    model = gazesep.Model.load(os.path.join(tmp, "run", "checkpoint.bin"))
    assert model.epoch == 2
    preds = model.predict(data)
    assert len(preds) == 48
    err = model.evaluate(data)
    assert 0.0 <= err <= 180.0


def main():
    check_geometry()
    check_losses()
    with tempfile.TemporaryDirectory() as tmp:
        check_bank(tmp)
        check_training(tmp)
    print("gazesep", gazesep.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
