import threading

import numpy as np
import pytest

from gosgd.baselines import (
    CenterState,
    EasgdConfig,
    easgd_worker_iteration,
    heavy_ball_spectral_radius,
    naive_worker_iteration,
    plain_sgd,
)
from gosgd.errors import ConfigError
from gosgd.numeric_core import RandomSource, as_vector
from gosgd.objectives import QuadraticObjective
from gosgd.protocol import GossipConfig, data_stream, init_workers, worker_iteration


def test_published_defaults():
    cfg = EasgdConfig(p=0.02)
    assert cfg.elastic_alpha == 0.887 and cfg.momentum == 0.99
    assert cfg.tau == 50


@pytest.mark.parametrize("p, tau", [(1.0, 1), (0.5, 2), (0.3, 3), (0.02, 50)])
def test_tau_from_p(p, tau):
    assert EasgdConfig(p=p).tau == tau


@pytest.mark.parametrize("kw", [
    dict(p=0.0),
    dict(tau=0),
    dict(elastic_alpha=2.0),
    dict(elastic_alpha=-0.1),
    dict(momentum=1.0),
])
def test_easgd_config_validation(kw):
    kw.setdefault("p", 0.5)
    with pytest.raises(ConfigError):
        EasgdConfig(**kw)


def test_easgd_with_couplings_off_is_plain_sgd(mlp):
    cfg = EasgdConfig(M=1, tau=1, momentum=0.0, elastic_alpha=0.0, batch_size=16, p=1.0)
    (w,) = init_workers(cfg, mlp)
    x0 = w.x
    center = CenterState(x0)
    for _ in range(50):
        easgd_worker_iteration(w, center, cfg, mlp)
    x_ref, _ = plain_sgd(mlp, x0, cfg.eta, 16, 50, data_stream(cfg.seed, 0))
    assert np.array_equal(w.x, x_ref)


def test_elastic_half_meets_in_the_middle():
    center = CenterState(as_vector([4.0, -2.0]))
    x = center.exchange(as_vector([0.0, 2.0]), 0.5)
    np.testing.assert_array_equal(x, [2.0, 0.0])
    np.testing.assert_array_equal(center.x, [2.0, 0.0])


def test_exchange_moves_by_plus_minus_e():
    r = RandomSource(1, 0)
    x = as_vector(r.normal(5))
    c0 = as_vector(r.normal(5))
    center = CenterState(c0)
    x_new = center.exchange(x, 0.887)
    e = 0.887 * (x - c0)
    np.testing.assert_allclose(x - x_new, e, rtol=1e-14)
    np.testing.assert_allclose(center.x - c0, e, rtol=1e-14)
    np.testing.assert_allclose(x_new + center.x, x + c0, rtol=1e-14)


def test_center_displacement_is_sum_of_exchanges_under_threads():
    center = CenterState(as_vector(np.zeros(3)))
    r = RandomSource(2, 0)
    points = [as_vector(r.normal(3)) for _ in range(8)]

    def hammer(pt):
        x = pt
        for _ in range(200):
            x = center.exchange(x, 0.3)

    threads = [threading.Thread(target=hammer, args=(p,)) for p in points]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert center.exchanges == 1600
    np.testing.assert_allclose(center.x, center.displacement, atol=1e-12)


def test_easgd_exchanges_every_tau(quadratic):
    cfg = EasgdConfig(M=1, tau=5, p=0.2)
    (w,) = init_workers(cfg, quadratic)
    center = CenterState(w.x)
    hits = [easgd_worker_iteration(w, center, cfg, quadratic).pushed_to is not None for _ in range(20)]
    assert [i + 1 for i, h in enumerate(hits) if h] == [5, 10, 15, 20]
    assert center.exchanges == 4


def test_heavy_ball_stability_boundary():
    assert heavy_ball_spectral_radius(0.01, 0.99, 1.0) < 1
    assert heavy_ball_spectral_radius(3.9, 0.99, 1.0) < 1
    assert heavy_ball_spectral_radius(4.0, 0.99, 1.0) >= 1


def test_easgd_default_constants_converge_on_quadratic():
    target = RandomSource(6, 0).normal(20)
    obj = QuadraticObjective(target)
    eta = 0.01
    assert heavy_ball_spectral_radius(eta, 0.99, 1.0) < 1
    cfg = EasgdConfig(M=4, tau=50, p=0.02, eta=eta, momentum=0.99, elastic_alpha=0.887)
    ws = init_workers(cfg, obj)
    center = CenterState(ws[0].x)
    for _ in range(5000):
        for w in ws:
            easgd_worker_iteration(w, center, cfg, obj)
    assert np.max(np.abs(center.x - target)) < 1e-4
    for w in ws:
        assert np.max(np.abs(w.x - target)) < 1e-4


def test_naive_equals_gosgd_p0(mlp):
    cfg = GossipConfig(M=3, p=0.0, batch_size=8)
    a = init_workers(cfg, mlp)
    b = init_workers(cfg, mlp)
    inboxes = [w.inbox for w in a]
    for _ in range(40):
        for wa, wb in zip(a, b):
            worker_iteration(wa, mlp, cfg, inboxes)
            naive_worker_iteration(wb, mlp, cfg)
    for wa, wb in zip(a, b):
        assert np.array_equal(wa.x, wb.x)


def test_naive_workers_are_independent_sgd_runs(mlp):
    cfg = GossipConfig(M=3, p=0.0, batch_size=8)
    ws = init_workers(cfg, mlp)
    x0 = ws[0].x
    for _ in range(25):
        for w in ws:
            naive_worker_iteration(w, mlp, cfg)
    for w in ws:
        x_ref, _ = plain_sgd(mlp, x0, cfg.eta, 8, 25, data_stream(cfg.seed, w.id))
        assert np.array_equal(w.x, x_ref)
