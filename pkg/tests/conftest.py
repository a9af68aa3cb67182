"""Shared helpers for the test suite."""
import numpy as np

from cplm.image import RgbImage


def assert_trace_invariants(records, nu0=2.0):
    """Damping-control invariants every solver run must satisfy."""
    accepted_norms = []
    prev_mu = None
    prev_rejected = False
    for rec in records:
        assert rec.mu > 0.0
        assert rec.nu > 1.0
        assert rec.step_norm >= 0.0
        if rec.accepted:
            assert rec.residual_norm_after < rec.residual_norm_before
            accepted_norms.append(rec.residual_norm_after)
        else:
            assert rec.residual_norm_after == rec.residual_norm_before
            if prev_rejected:
                # consecutive rejections must keep growing the damping
                assert rec.mu > prev_mu
        prev_mu = rec.mu
        prev_rejected = not rec.accepted
    assert all(b < a for a, b in zip(accepted_norms, accepted_norms[1:]))


def smooth_test_image(height=100, width=100):
    """Deterministic smooth RGB raster; low CP rank fits it well."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    r = np.hypot(xx - 0.3 * width, yy - 0.4 * height)
    g = np.hypot(xx - 0.7 * width, yy - 0.6 * height)
    chan = [
        0.5 + 0.5 * np.sin(xx / 11.0) * np.cos(yy / 7.0),
        np.exp(-r / 35.0),
        0.3 + 0.7 * np.exp(-g / 25.0) * (0.5 + 0.5 * np.sin((xx + yy) / 13.0)),
    ]
    arr = np.clip(np.stack(chan, axis=-1), 0.0, 1.0)
    return RgbImage(np.floor(arr * 255.0 + 0.5).astype(np.uint8))


def random_image(rng, height, width):
    return RgbImage(
        rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    )
