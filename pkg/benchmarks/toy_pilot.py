"""Pilot run for the toy end-to-end check; writes tests/fixtures/toy_pilot.json.

Trains the hashing encoder on the separable 8-topic task for seeds 0-9 and
records held-out nDCG@10 (trained and at random init) and the last/first
epoch loss ratio. The acceptance thresholds are read from this file.
"""

import json
import sys
from pathlib import Path

import numpy as np

from embedforge.batching import TrainingConfig
from embedforge.evaluation import eval_retrieval
from embedforge.toy import ToyEncoder, make_separable_task, train_toy

SETTINGS = dict(batch_size=32, epochs=3, learning_rate=1.0, temperature=0.05, warmup_ratio=0.25)


def ndcg10(enc, coll):
    q, d = sorted(coll.queries), sorted(coll.corpus)
    res = eval_retrieval(
        enc.to_store(q, [coll.queries[i] for i in q]), enc.to_store(d, [coll.corpus[i] for i in d]), coll
    )
    return res["ndcg_at_10"] / 100.0


def run(seed):
    train, held = make_separable_task(seed=seed)
    cfg = TrainingConfig(seed=seed, **SETTINGS)
    init = ToyEncoder.init(seed=seed)
    enc, losses = train_toy(train, cfg, encoder=init)
    per_epoch = np.array_split(np.asarray(losses), cfg.epochs)
    return {
        "seed": seed,
        "trained_ndcg_at_10": round(ndcg10(enc, held), 4),
        "random_ndcg_at_10": round(ndcg10(init, held), 4),
        "loss_ratio": round(float(per_epoch[-1].mean() / per_epoch[0].mean()), 4),
    }


def main(out="tests/fixtures/toy_pilot.json"):
    rows = [run(s) for s in range(10)]
    doc = {
        "task": {"n_train": 512, "n_topics": 8, "vocab_per_topic": 16, "hash_dim": 4096, "embed_dim": 64},
        "training": SETTINGS,
        "runs": rows,
        "thresholds": {"trained_ndcg_at_10_min": 0.9, "random_ndcg_at_10_max": 0.3, "loss_ratio_max": 0.25},
        "acceptance_seed": 0,
    }
    Path(out).write_text(json.dumps(doc, indent=2) + "\n")
    for r in rows:
        print(r)


if __name__ == "__main__":
    main(*sys.argv[1:])
