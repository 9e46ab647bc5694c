"""Parity between the pure-numpy kernels and the compiled extension.

Each kernel's *correctness* is established elsewhere against independent
oracles (test_model.py, test_scoring.py); this file checks that the two
implementations agree with each other and that backend selection obeys
FEDANOM_BACKEND.
"""

import os
import subprocess
import sys

import numpy as np
import pytest

import fedanom.backends as backends_pkg
from fedanom.backends import pure

from conftest import ALL_BACKENDS, fast_backend, make_xy

needs_ext = pytest.mark.skipif(
    fast_backend is None, reason="compiled extension not built"
)


def fresh_window(cap, m):
    buf = np.zeros((cap, m))
    s1 = np.zeros(m)
    s2 = np.zeros((m, m))
    return buf, s1, s2, 0, 0


class TestSelection:
    def test_name_attributes(self):
        names = {b.NAME for b in ALL_BACKENDS}
        assert "pure" in names
        if fast_backend is not None:
            assert fast_backend.NAME == "cython"

    def test_active_backend_is_one_of_the_known_modules(self):
        assert backends_pkg.get_backend().NAME in {"pure", "cython"}

    def test_env_forces_pure(self):
        out = self._name_under_env("pure")
        assert out == "pure"

    @needs_ext
    def test_env_forces_cython(self):
        out = self._name_under_env("cython")
        assert out == "cython"

    def test_env_rejects_unknown_value(self):
        env = dict(os.environ, FEDANOM_BACKEND="fortran")
        proc = subprocess.run(
            [sys.executable, "-c", "import fedanom.backends"],
            capture_output=True,
            text=True,
            env=env,
        )
        assert proc.returncode != 0
        assert "FEDANOM_BACKEND" in proc.stderr

    @staticmethod
    def _name_under_env(value):
        env = dict(os.environ, FEDANOM_BACKEND=value)
        proc = subprocess.run(
            [
                sys.executable,
                "-c",
                "import fedanom.backends as b; print(b.get_backend().NAME)",
            ],
            capture_output=True,
            text=True,
            env=env,
        )
        assert proc.returncode == 0, proc.stderr
        return proc.stdout.strip()


@needs_ext
class TestModelKernelParity:
    """Loop-based compiled math vs BLAS-based numpy math: tiny rounding
    differences are expected, anything beyond ~1e-12 relative is a bug."""

    D, H = 5, 7

    def _params(self, rng):
        size = self.H * (self.D + 2) + 1
        return rng.standard_normal(size) * 0.3

    def test_forward_agrees(self, rng):
        x, _ = make_xy(rng, n=40, d=self.D)
        v = self._params(rng)
        p_pure, e_pure = pure.forward(v, self.D, self.H, x)
        p_fast, e_fast = fast_backend.forward(v, self.D, self.H, x)
        np.testing.assert_allclose(p_fast, p_pure, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(e_fast, e_pure, rtol=1e-12, atol=1e-14)

    def test_loss_and_gradient_agree(self, rng):
        x, y = make_xy(rng, n=48, d=self.D)
        v = self._params(rng)
        lam = 0.01
        lp = pure.loss_value(v, self.D, self.H, x, y, lam)
        lf = fast_backend.loss_value(v, self.D, self.H, x, y, lam)
        assert abs(lf - lp) <= 1e-12 * max(abs(lp), 1.0)
        gp = pure.gradient(v, self.D, self.H, x, y, lam)
        gf = fast_backend.gradient(v, self.D, self.H, x, y, lam)
        np.testing.assert_allclose(gf, gp, rtol=1e-11, atol=1e-14)

    def test_train_epochs_agree_after_thirty_epochs(self, rng):
        x, y = make_xy(rng, n=32, d=self.D)
        v = self._params(rng)
        order = np.stack(
            [np.random.default_rng(9).permutation(32) for _ in range(30)]
        ).astype(np.int64)
        args = (self.D, self.H, x, y, 0.001, 0.1, 8, order)
        vp, lp, ep, bp = pure.train_epochs(v.copy(), *args)
        vf, lf, ef, bf = fast_backend.train_epochs(v.copy(), *args)
        assert (ep, bp) == (-1, -1) and (ef, bf) == (-1, -1)
        np.testing.assert_allclose(vf, vp, rtol=1e-9, atol=1e-12)
        assert abs(lf - lp) <= 1e-9 * max(abs(lp), 1.0)

    def test_train_epochs_agree_on_failure_location(self, rng):
        x, y = make_xy(rng, n=16, d=self.D)
        v = self._params(rng)
        order = np.stack([np.arange(16, dtype=np.int64) for _ in range(3)])
        args = (self.D, self.H, x, y, 0.0, 1e300, 4, order)
        with np.errstate(over="ignore", invalid="ignore"):
            _, lp, ep, bp = pure.train_epochs(v.copy(), *args)
            _, lf, ef, bf = fast_backend.train_epochs(v.copy(), *args)
        assert not np.isfinite(lp) and not np.isfinite(lf)
        assert (ep, bp) == (ef, bf)
        assert ep >= 0


@needs_ext
class TestWindowParity:
    """The sliding-window update is written as the same elementwise
    expressions on both sides, so the resulting state must be bitwise
    identical, not merely close."""

    def test_window_state_bitwise_identical_after_mixed_feeds(self, rng):
        m, cap = 4, 8
        vs = rng.standard_normal((30, m)) * np.array([1.0, 3.0, 0.5, 10.0])
        bp, s1p, s2p, hp, cp = fresh_window(cap, m)
        bf, s1f, s2f, hf, cf = fresh_window(cap, m)
        hp, cp = pure.window_feed(bp, s1p, s2p, hp, cp, vs)
        hf, cf = fast_backend.window_feed(bf, s1f, s2f, hf, cf, vs)
        assert (hp, cp) == (hf, cf)
        assert np.array_equal(bp, bf)
        assert np.array_equal(s1p, s1f)
        assert np.array_equal(s2p, s2f)

    def test_mahal_batch_matches_scalar_scores(self, backend, rng):
        m, cap = 3, 16
        buf, s1, s2, head, count = fresh_window(cap, m)
        head, count = backend.window_feed(
            buf, s1, s2, head, count, rng.standard_normal((16, m))
        )
        xs = rng.standard_normal((12, m))
        batch = backend.mahal_batch(s1, s2, count, 1e-3, 1e-9, xs)
        singles = [
            backend.mahal_score(s1, s2, count, 1e-3, 1e-9, xs[i])
            for i in range(12)
        ]
        np.testing.assert_allclose(batch, singles, rtol=1e-12, atol=1e-12)

    def test_mahal_scores_agree_across_backends(self, rng):
        m = 5
        buf, s1, s2, head, count = fresh_window(64, m)
        head, count = pure.window_feed(
            buf, s1, s2, head, count, rng.standard_normal((64, m))
        )
        xs = rng.standard_normal((20, m)) * 2.0
        a = pure.mahal_batch(s1, s2, count, 0.35, 1e-9, xs)
        b = fast_backend.mahal_batch(s1, s2, count, 0.35, 1e-9, xs)
        np.testing.assert_allclose(b, a, rtol=1e-10, atol=1e-12)

    def test_score_stream_agrees_and_leaves_identical_windows(self, rng):
        m, cap = 3, 8
        warm = rng.standard_normal((8, m))
        stream = np.concatenate(
            [rng.standard_normal((40, m)), rng.standard_normal((5, m)) * 8.0]
        )
        bp, s1p, s2p, hp, cp = fresh_window(cap, m)
        hp, cp = pure.window_feed(bp, s1p, s2p, hp, cp, warm)
        bf, s1f, s2f, hf, cf = fresh_window(cap, m)
        hf, cf = fast_backend.window_feed(bf, s1f, s2f, hf, cf, warm)

        tau = 9.0
        sc_p, de_p, hp, cp = pure.score_stream(
            bp, s1p, s2p, hp, cp, stream, tau, 1e-3, 1e-9
        )
        sc_f, de_f, hf, cf = fast_backend.score_stream(
            bf, s1f, s2f, hf, cf, stream, tau, 1e-3, 1e-9
        )
        assert np.array_equal(de_p, de_f)
        assert de_p.sum() > 0  # the amplified tail must trip the threshold
        np.testing.assert_allclose(sc_f, sc_p, rtol=1e-10, atol=1e-12)
        assert (hp, cp) == (hf, cf)
        assert np.array_equal(bp, bf)
        assert np.array_equal(s1p, s1f)
        assert np.array_equal(s2p, s2f)
