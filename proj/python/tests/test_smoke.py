import numpy as np
import pytest

import uet_distill as ud


def rand_pyramid(seed=0):
    rng = np.random.default_rng(seed)
    return [rng.normal(size=(4, 8 >> s, 8 >> s)) for s in range(3)]


def test_schedule_ratios():
    assert ud.schedule_ratios("fixed", 5) == [0.15] * 5
    assert ud.schedule_ratios("arithmetic", 5) == [0.05, 0.10, 0.15, 0.20, 0.25]
    assert ud.schedule_ratios("epoch_growing", 5, epoch=10) == [0.30, 0.35, 0.40, 0.45, 0.50]
    with pytest.raises(ValueError):
        ud.schedule_ratios("bogus", 5)


def test_estimate_uncertainty():
    f = rand_pyramid()
    out = ud.estimate_uncertainty(f, [0.0, 0.0], residual=False)
    for a, b in zip(out, f):
        np.testing.assert_array_equal(a, b)

    doubled = ud.estimate_uncertainty(f, [0.0], residual=True)
    for a, b in zip(doubled, f):
        np.testing.assert_array_equal(a, 2 * b)

    live = ud.estimate_uncertainty(f, ud.schedule_ratios("arithmetic", 5), seed=3)
    again = ud.estimate_uncertainty(f, ud.schedule_ratios("arithmetic", 5), seed=3)
    for a, b in zip(live, again):
        np.testing.assert_array_equal(a, b)  # deterministic per seed


def test_extract_and_distance():
    a, b = rand_pyramid(1), rand_pyramid(2)
    assert ud.distance("l2", a, a) == 0.0
    assert ud.distance("l2", a, b) > 0.0
    # pearson distance ignores positive affine maps
    scaled = [3.0 * x + 1.0 for x in a]
    assert ud.distance("pearson", a, scaled) == pytest.approx(0.0, abs=1e-9)

    norm = ud.extract("pearson_norm", a)
    for t in norm:
        per_channel = t.reshape(t.shape[0], -1)
        np.testing.assert_allclose(per_channel.mean(axis=1), 0.0, atol=1e-9)


def test_detnet_and_loss():
    teacher = ud.DetNet(width=8, depth=1, role="teacher", seed=0)
    student = ud.DetNet(width=4, depth=1, role="student", seed=1)
    image = np.random.default_rng(0).normal(size=(1, 32, 32))

    pyr = teacher.pyramid(image)
    assert [p.shape for p in pyr] == [(8, 32, 32), (8, 16, 16), (8, 8, 8)]
    assert teacher.digest() == ud.DetNet(width=8, depth=1, role="teacher", seed=0).digest()

    uet = ud.uet_loss(teacher, student, image, n=5, seed=7)
    again = ud.uet_loss(teacher, student, image, n=5, seed=7)
    et = ud.uet_loss(teacher, student, image, n=0)
    assert uet >= 0.0 and et >= 0.0
    assert uet == again  # deterministic per seed


def test_gradcheck():
    results = ud.gradcheck()
    assert len(results) > 30
    assert all(ok for _, _, ok in results)
