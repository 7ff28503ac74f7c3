"""Quick end-to-end check of the Python bindings.

Build first:  maturin develop --release -m crates/python/Cargo.toml
"""

import json
import math
import os
import tempfile

import rmtgb_py as rm


def main():
    train, test, outliers = rm.generate("regression", seed=3, train_per_task=60, test_per_task=60)
    print(train, test, "outliers", outliers)
    assert train.num_tasks == 10 and len(outliers) == 2

    model = rm.fit_rmtgb(train, m1=10, m2=10, m3=5, seed=1)
    scores = model.predict(test.features, test.task_of)
    rmse = rm.metric("rmse", test.targets, [s[0] for s in scores])
    print("rmtgb test rmse", round(rmse, 4))
    assert math.isfinite(rmse)

    gates = model.gates()
    assert len(gates) == 10 and all(0.0 < g < 1.0 for g in gates)
    again = rm.Model.from_json(model.to_json())
    assert again.predict(test.features, test.task_of) == scores
    assert json.loads(model.to_json())["family"] == "rmtgb"

    pooled = rm.fit_baseline("dp-gb", train, rounds=20)
    assert pooled.gates() is None
    dp = rm.metric("rmse", test.targets, [s[0] for s in pooled.predict(test.features, test.task_of)])
    print("dp-gb test rmse", round(dp, 4))

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "train.csv")
        train.to_csv(path)
        back = rm.Dataset.from_csv(path)
        assert len(back) == len(train) and back.task_of == train.task_of

    aligned = rm.align_theta([[0.25, 0.75], [0.875, 0.125]])
    assert aligned[1] == [0.125, 0.875]
    assert abs(rm.critical_distance(4, 10) - 1.4832) < 1e-3
    ranks = rm.rank_models([[1.0, 2.0, 3.0], [1.0, 3.0, 2.0]], [False, False])
    assert ranks["avg_rank"] == [1.0, 2.5, 2.5]

    try:
        rm.fit_baseline("rmtgb", train, rounds=1)
    except ValueError as e:
        print("rejected:", e)
    else:
        raise AssertionError("expected ValueError")

    print("smoke test ok")


if __name__ == "__main__":
    main()
