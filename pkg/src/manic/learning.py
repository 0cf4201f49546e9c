"""Belief state, transition model, and the bi-directional observation model.

A LearningSystem bundles three networks around a d-dimensional belief
vector clamped to [-1, 1]:

  f       : (belief, action) -> next belief
  g       : (belief, pixel x, pixel y) -> color channels of that pixel
  g_plus  : downsampled frame -> belief (optional; inference through g can
            replace it entirely)

The decoder treats the image as a continuous function of normalized pixel
coordinates, so one small network covers any resolution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DivergedError,
    EncoderAbsentError,
    PreconditionError,
    ShapeError,
)
from .net import Approximator, init_network, load_model


@dataclass
class Observation:
    """A flat camera frame: row-major, channel-interleaved, values in [0,1]."""

    width: int
    height: int
    channels: int
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        expected = self.width * self.height * self.channels
        if self.pixels.shape != (expected,):
            raise ShapeError(
                f"pixel buffer has shape {self.pixels.shape}, expected ({expected},)"
            )

    def as_array(self) -> np.ndarray:
        """View as (height, width, channels)."""
        return self.pixels.reshape(self.height, self.width, self.channels)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Observation":
        arr = np.asarray(arr, dtype=np.float64)
        h, w, c = arr.shape
        return cls(width=w, height=h, channels=c, pixels=arr.reshape(-1).copy())


def pixel_center(i: int, j: int, width: int, height: int) -> tuple[float, float]:
    """Normalized coordinates of the center of pixel (column i, row j)."""
    return (i + 0.5) / width, (j + 0.5) / height


def downsample(obs: Observation, factor: int = 4) -> np.ndarray:
    """Area-average the frame by `factor` per axis; flat result.

    Falls back to the raw pixels when the frame is not divisible by the
    factor (tiny fixture frames).
    """
    if obs.width % factor or obs.height % factor:
        return obs.pixels.copy()
    arr = obs.as_array()
    h, w, c = arr.shape
    pooled = arr.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))
    return pooled.reshape(-1)


def downsampled_len(width: int, height: int, channels: int, factor: int = 4) -> int:
    if width % factor or height % factor:
        return width * height * channels
    return (width // factor) * (height // factor) * channels


def clamp_belief(v: np.ndarray) -> np.ndarray:
    return np.clip(v, -1.0, 1.0)


class LearningSystem:
    """The three mappings plus the dimension bookkeeping that ties them."""

    def __init__(
        self,
        f: Approximator,
        g: Approximator,
        g_plus: Optional[Approximator],
        d: int,
        width: int,
        height: int,
        channels: int,
        a_dims: int,
        encoder_extra: int = 0,
    ):
        self.f = f
        self.g = g
        self.g_plus = g_plus
        self.d = int(d)
        self.width = int(width)
        self.height = int(height)
        self.channels = int(channels)
        self.a_dims = int(a_dims)
        # extra flat entries appended to the percept before encoding
        # (introspection); zero for a plain camera agent.
        self.encoder_extra = int(encoder_extra)
        if f.in_dim != self.d + self.a_dims or f.out_dim != self.d:
            raise ShapeError(
                f"transition net maps {f.in_dim}->{f.out_dim}, "
                f"expected {self.d + self.a_dims}->{self.d}"
            )
        if g.in_dim != self.d + 2 or g.out_dim != self.channels:
            raise ShapeError(
                f"decoder net maps {g.in_dim}->{g.out_dim}, "
                f"expected {self.d + 2}->{self.channels}"
            )
        if g_plus is not None:
            expect_in = downsampled_len(self.width, self.height, self.channels) + self.encoder_extra
            if g_plus.in_dim != expect_in or g_plus.out_dim != self.d:
                raise ShapeError(
                    f"encoder net maps {g_plus.in_dim}->{g_plus.out_dim}, "
                    f"expected {expect_in}->{self.d}"
                )

    # -- belief dynamics -----------------------------------------------------

    def predict_transition(self, v: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Next belief from (belief, action), clamped to [-1, 1]."""
        v = np.asarray(v, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        if v.shape != (self.d,):
            raise ShapeError(f"belief has shape {v.shape}, expected ({self.d},)")
        if u.shape != (self.a_dims,):
            raise ShapeError(f"action has shape {u.shape}, expected ({self.a_dims},)")
        return clamp_belief(self.f.forward(np.concatenate([v, u])))

    def rollout(self, v0: np.ndarray, plan: np.ndarray) -> list[np.ndarray]:
        """Beliefs after each action of the plan, threading the transition
        model; element k is the belief after k+1 steps."""
        plan = np.atleast_2d(np.asarray(plan, dtype=np.float64))
        if plan.shape[0] == 0:
            raise PreconditionError("plan must contain at least one action")
        beliefs = []
        v = np.asarray(v0, dtype=np.float64)
        for u in plan:
            v = self.predict_transition(v, u)
            beliefs.append(v)
        return beliefs

    # -- decoding ------------------------------------------------------------

    def decode_pixel(self, v: np.ndarray, px: float, py: float) -> np.ndarray:
        """Color channels at normalized coordinates (px, py), in [0, 1]."""
        if not (0.0 <= px <= 1.0 and 0.0 <= py <= 1.0):
            raise PreconditionError(f"pixel coords ({px}, {py}) outside [0, 1]")
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.d,):
            raise ShapeError(f"belief has shape {v.shape}, expected ({self.d},)")
        out = self.g.forward(np.concatenate([v, [px, py]]))
        return np.clip(out, 0.0, 1.0)

    def decode_frame(self, v: np.ndarray) -> Observation:
        """Full anticipated frame; bit-identical to looping decode_pixel over
        all pixels in row-major order (the loop IS the implementation)."""
        w, h, c = self.width, self.height, self.channels
        pixels = np.empty(w * h * c)
        pos = 0
        for j in range(h):
            py = (j + 0.5) / h
            for i in range(w):
                px = (i + 0.5) / w
                pixels[pos:pos + c] = self.decode_pixel(v, px, py)
                pos += c
        return Observation(width=w, height=h, channels=c, pixels=pixels)

    def decode_pixels_batch(self, v: np.ndarray, coords: np.ndarray) -> np.ndarray:
        """Fast decode of many pixels at once; coords is (n, 2) of (px, py).

        Internal path for training and refinement: may differ from
        decode_pixel in the last float bits.
        """
        n = coords.shape[0]
        x = np.empty((self.d + 2, n))
        x[: self.d, :] = np.asarray(v, dtype=np.float64)[:, None]
        x[self.d:, :] = coords.T
        return np.clip(self.g.forward_batch(x), 0.0, 1.0)

    def imagine_video(self, v0: np.ndarray, plan: np.ndarray) -> list[Observation]:
        """Anticipated frames for a plan: decode_frame over the rollout."""
        return [self.decode_frame(v) for v in self.rollout(v0, plan)]

    # -- encoding ------------------------------------------------------------

    def encode(self, x: Observation | np.ndarray) -> np.ndarray:
        """Belief from a frame via the encoder network (when present)."""
        if self.g_plus is None:
            raise EncoderAbsentError("this learning system was built without an encoder")
        flat = self._encoder_input(x)
        return clamp_belief(self.g_plus.forward(flat))

    def _encoder_input(self, x: Observation | np.ndarray) -> np.ndarray:
        if isinstance(x, Observation):
            base = downsample(x)
        else:
            base = np.asarray(x, dtype=np.float64)
        if base.shape != (self.g_plus.in_dim,):
            raise ShapeError(
                f"encoder input has shape {base.shape}, expected ({self.g_plus.in_dim},)"
            )
        return base

    # -- inference-based encoding ---------------------------------------------

    def refine_beliefs(
        self,
        v_init: np.ndarray,
        x: Observation,
        steps: int,
        rate: float,
        sample_pixels: int = 64,
        seed: int = 0,
    ) -> np.ndarray:
        """Gradient-refine a belief until decoding it matches the frame.

        Each step draws `sample_pixels` random pixels, descends the summed
        squared reconstruction error on them, and rejects the step (halving
        the rate) if that error did not decrease. The belief stays clamped
        to [-1, 1].
        """
        if steps < 1:
            raise PreconditionError(f"steps must be >= 1, got {steps}")
        if rate <= 0.0:
            raise PreconditionError(f"rate must be positive, got {rate}")
        if x.width != self.width or x.height != self.height or x.channels != self.channels:
            raise ShapeError("observation dims do not match the learning system")
        rng = np.random.default_rng(seed)
        v = clamp_belief(np.asarray(v_init, dtype=np.float64).copy())
        w, h, c = self.width, self.height, self.channels
        n_px = w * h
        frame = x.as_array()
        for _ in range(steps):
            idx = rng.integers(0, n_px, size=min(sample_pixels, n_px))
            cols = idx % w
            rows = idx // w
            coords = np.stack([(cols + 0.5) / w, (rows + 0.5) / h], axis=1)
            targets = frame[rows, cols, :].T  # (c, n)
            err0, grad = self._subsample_error_and_grad(v, coords, targets)
            if not np.isfinite(err0) or not np.all(np.isfinite(grad)):
                raise DivergedError("belief refinement produced non-finite values")
            candidate = clamp_belief(v - rate * grad)
            err1 = self._subsample_error(candidate, coords, targets)
            if err1 > err0:
                rate *= 0.5
            else:
                v = candidate
        return v

    def _subsample_error_and_grad(self, v, coords, targets):
        # per-sample forwards so that a pixel exactly reproduced by
        # decode_pixel gives an exactly zero residual (fixed-point contract);
        # the objective is on *clamped* decoded pixels, so the gradient is
        # zeroed wherever the output clamp is active (subgradient)
        err = 0.0
        grad = np.zeros(self.d)
        inp = np.empty(self.d + 2)
        inp[: self.d] = v
        weights = self.g.weights
        for k in range(coords.shape[0]):
            inp[self.d:] = coords[k]
            acts = self.g._forward_trace(inp)
            y_raw = acts[-1]
            residual = np.clip(y_raw, 0.0, 1.0) - targets[:, k]
            err += 0.5 * float(residual @ residual)
            delta = residual * ((y_raw > 0.0) & (y_raw < 1.0))
            for l in range(len(weights) - 1, -1, -1):
                delta = weights[l].T @ delta
                if l > 0:
                    delta = delta * (1.0 - acts[l] ** 2)
            grad += delta[: self.d]
        return err, grad

    def _subsample_error(self, v, coords, targets):
        err = 0.0
        inp = np.empty(self.d + 2)
        inp[: self.d] = v
        for k in range(coords.shape[0]):
            inp[self.d:] = coords[k]
            residual = np.clip(self.g.forward(inp), 0.0, 1.0) - targets[:, k]
            err += 0.5 * float(residual @ residual)
        return err

    def reconstruction_error(self, v: np.ndarray, x: Observation) -> float:
        """Mean absolute pixel error between decode_frame(v) and x."""
        return float(np.mean(np.abs(self.decode_frame(v).pixels - x.pixels)))

    # -- persistence ----------------------------------------------------------

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.f.save(directory / "transition.mncm")
        self.g.save(directory / "decoder.mncm")
        if self.g_plus is not None:
            self.g_plus.save(directory / "encoder.mncm")
        meta = {
            "d": self.d,
            "width": self.width,
            "height": self.height,
            "channels": self.channels,
            "a_dims": self.a_dims,
            "encoder_extra": self.encoder_extra,
            "has_encoder": self.g_plus is not None,
        }
        (directory / "meta.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, directory) -> "LearningSystem":
        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text())
        g_plus = None
        if meta["has_encoder"]:
            g_plus = load_model(directory / "encoder.mncm")
        return cls(
            f=load_model(directory / "transition.mncm"),
            g=load_model(directory / "decoder.mncm"),
            g_plus=g_plus,
            d=meta["d"],
            width=meta["width"],
            height=meta["height"],
            channels=meta["channels"],
            a_dims=meta["a_dims"],
            encoder_extra=meta.get("encoder_extra", 0),
        )


def error_signal(x: Observation, x_hat: Observation) -> np.ndarray:
    """Elementwise difference actual - anticipated; the training signal."""
    if (x.width, x.height, x.channels) != (x_hat.width, x_hat.height, x_hat.channels):
        raise ShapeError("observations have mismatched dimensions")
    return x.pixels - x_hat.pixels


def build_learning_system(
    d: int,
    width: int,
    height: int,
    channels: int,
    a_dims: int,
    f_hidden: Sequence[int] = (32,),
    g_hidden: Sequence[int] = (64, 64),
    g_plus_hidden: Sequence[int] = (64,),
    with_encoder: bool = True,
    encoder_extra: int = 0,
    seed: int = 0,
) -> LearningSystem:
    """Construct fresh untrained networks with consistent topologies."""
    f = init_network([d + a_dims, *f_hidden, d], seed)
    g = init_network([d + 2, *g_hidden, channels], seed + 1)
    g_plus = None
    if with_encoder:
        enc_in = downsampled_len(width, height, channels) + encoder_extra
        g_plus = init_network([enc_in, *g_plus_hidden, d], seed + 2)
    return LearningSystem(
        f=f, g=g, g_plus=g_plus, d=d, width=width, height=height,
        channels=channels, a_dims=a_dims, encoder_extra=encoder_extra,
    )
