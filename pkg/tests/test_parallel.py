import time

import numpy as np

from mogpc.classifier import evaluate
from mogpc.model import ModelBundle
from mogpc.parallel import n_workers, pmap

from conftest import random_theta, tiny_dataset


def test_worker_count_from_environment(monkeypatch):
    monkeypatch.delenv("MOGP_THREADS", raising=False)
    assert n_workers() == 1
    monkeypatch.setenv("MOGP_THREADS", "3")
    assert n_workers() == 3
    monkeypatch.setenv("MOGP_THREADS", "0")
    assert n_workers() >= 1
    monkeypatch.setenv("MOGP_THREADS", "lots")
    assert n_workers() == 1


def test_pmap_keeps_input_order(monkeypatch):
    monkeypatch.setenv("MOGP_THREADS", "4")

    def slow(i):
        time.sleep(0.002 * (10 - i))
        return i * i

    assert pmap(slow, range(10)) == [i * i for i in range(10)]


def test_threaded_evaluation_matches_serial(monkeypatch, rng, cfg1):
    ds = tiny_dataset(rng, n_per_class=3)
    model = ModelBundle((random_theta(rng), random_theta(rng)), cfg1, ds.class_names)
    monkeypatch.setenv("MOGP_THREADS", "1")
    serial = evaluate(model, ds)
    monkeypatch.setenv("MOGP_THREADS", "4")
    threaded = evaluate(model, ds)
    np.testing.assert_array_equal(serial.confusion, threaded.confusion)
    for a, b in zip(serial.predictions, threaded.predictions):
        np.testing.assert_array_equal(a.scores, b.scores)
