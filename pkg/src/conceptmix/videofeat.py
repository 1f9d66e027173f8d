"""First-frame feature injection for video extension.

At the first sampling timestep the residual features of frames ``2..F`` are
pulled towards frame 1:

    f^i <- eta * f^1 + (1 - eta) * f^i,   i = 2..F

with ``eta`` chosen per layer. There is no video network here; the operator is
exposed as a hook over named feature grids plus a synthetic demo bundle.
"""

from __future__ import annotations

import fnmatch
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .imageio import atomic_write

STATUS_OK = "ok"
STATUS_TOO_FEW_FRAMES = "skipped: fewer than 2 frames"

DEFAULT_RULES = (("mid.*", 1.0), ("up.0", 0.3))
DEMO_LAYERS = ("down.0", "mid.0", "mid.1", "up.0", "up.1")

_MAGIC = b"CMFB"


@dataclass(frozen=True)
class FrameFeatures:
    """Features of one layer for every frame, stacked along axis 0."""

    layer_id: str
    frames: np.ndarray
    status: str = STATUS_OK

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim < 1:
            raise ValueError("frames needs a leading frame axis")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return self.frames.shape[1:]

    @classmethod
    def from_list(cls, layer_id: str, frames: Sequence[np.ndarray]) -> FrameFeatures:
        shapes = {np.shape(f) for f in frames}
        if len(shapes) > 1:
            raise ValueError(f"layer {layer_id!r}: frames have differing shapes {sorted(shapes)}")
        return cls(layer_id, np.stack([np.asarray(f, dtype=np.float64) for f in frames]))


def _check_eta(eta: float) -> float:
    eta = float(eta)
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    return eta


def inject(features: FrameFeatures, eta: float) -> FrameFeatures:
    """Interpolate frames ``2..F`` towards frame 1; frame 1 is untouched.

    With fewer than two frames nothing happens and the returned object carries
    a warning status.
    """
    eta = _check_eta(eta)
    if features.num_frames < 2:
        return FrameFeatures(features.layer_id, features.frames.copy(), STATUS_TOO_FEW_FRAMES)
    out = features.frames.copy()
    if eta == 1.0:
        out[1:] = out[0]
    elif eta != 0.0:
        out[1:] = eta * out[0] + (1.0 - eta) * out[1:]
    return FrameFeatures(features.layer_id, out)


@dataclass(frozen=True)
class InjectionPolicy:
    """Layer selectors (shell-style patterns) with their ``eta``.

    The first matching rule wins. Injection happens only at ``t == T`` unless
    ``timestep_range`` (inclusive ``(lo, hi)``) is given.
    """

    rules: tuple[tuple[str, float], ...] = DEFAULT_RULES
    num_steps: int = 50
    timestep_range: tuple[int, int] | None = None

    def __post_init__(self):
        rules = tuple((str(sel), _check_eta(eta)) for sel, eta in self.rules)
        object.__setattr__(self, "rules", rules)
        if self.timestep_range is not None:
            lo, hi = self.timestep_range
            if not 0 <= lo <= hi <= self.num_steps:
                raise ValueError(f"timestep_range must satisfy 0 <= lo <= hi <= {self.num_steps}")

    def active(self, t: int) -> bool:
        if self.timestep_range is None:
            return t == self.num_steps
        lo, hi = self.timestep_range
        return lo <= t <= hi

    def eta_for(self, layer_id: str) -> float | None:
        for sel, eta in self.rules:
            if fnmatch.fnmatchcase(layer_id, sel):
                return eta
        return None

    def unmatched(self, layer_ids: Sequence[str]) -> list[str]:
        return [sel for sel, _ in self.rules if not any(fnmatch.fnmatchcase(l, sel) for l in layer_ids)]


def apply_policy(bundle: Sequence[FrameFeatures], policy: InjectionPolicy, t: int) -> list[FrameFeatures]:
    """Apply the policy to every layer in ``bundle`` at timestep ``t``."""
    for sel in policy.unmatched([f.layer_id for f in bundle]):
        warnings.warn(f"injection selector {sel!r} matches no layer", stacklevel=2)
    if not policy.active(t):
        return list(bundle)
    out = []
    for feat in bundle:
        eta = policy.eta_for(feat.layer_id)
        out.append(feat if eta is None else inject(feat, eta))
    return out


def demo_bundle(num_frames: int = 4, shape: tuple[int, ...] = (4, 8, 8), seed: int = 0,
                layers: Sequence[str] = DEMO_LAYERS) -> list[FrameFeatures]:
    """Synthetic per-layer features: a shared pattern plus per-frame drift."""
    rng = np.random.default_rng(seed)
    out = []
    for layer in layers:
        common = rng.standard_normal(shape)
        drift = rng.standard_normal((num_frames, *shape))
        steps = np.arange(num_frames).reshape(-1, *([1] * len(shape))) / max(num_frames - 1, 1)
        out.append(FrameFeatures(layer, common + steps * drift))
    return out


def frame_drift(feat: FrameFeatures) -> float:
    """Mean absolute difference of frames ``2..F`` from frame 1."""
    if feat.num_frames < 2:
        return 0.0
    return float(np.abs(feat.frames[1:] - feat.frames[0]).mean())


def encode_bundle(bundle: Sequence[FrameFeatures]) -> bytes:
    """Magic, header length, JSON header, then each layer as little-endian float64."""
    header = {
        "dtype": "<f8",
        "layers": [{"id": f.layer_id, "shape": list(f.frames.shape), "status": f.status} for f in bundle],
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(f.frames, dtype="<f8").tobytes() for f in bundle)
    return _MAGIC + struct.pack("<I", len(head)) + head + body


def decode_bundle(buf: bytes) -> list[FrameFeatures]:
    if buf[:4] != _MAGIC:
        raise ValueError("not a feature bundle")
    (n,) = struct.unpack("<I", buf[4:8])
    header = json.loads(buf[8 : 8 + n])
    pos = 8 + n
    out = []
    for layer in header["layers"]:
        shape = tuple(layer["shape"])
        count = int(np.prod(shape))
        data = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
        out.append(FrameFeatures(layer["id"], data.astype(np.float64), layer.get("status", STATUS_OK)))
    if pos != len(buf):
        raise ValueError(f"bundle has {len(buf) - pos} trailing bytes")
    return out


def write_bundle(path, bundle: Sequence[FrameFeatures]) -> None:
    atomic_write(path, encode_bundle(bundle))


def read_bundle(path) -> list[FrameFeatures]:
    return decode_bundle(Path(path).read_bytes())


@dataclass
class DemoResult:
    before: list[FrameFeatures]
    after: list[FrameFeatures]
    rows: list[dict] = field(default_factory=list)


def run_demo(policy: InjectionPolicy | None = None, num_frames: int = 4, seed: int = 0,
             bundle: Sequence[FrameFeatures] | None = None) -> DemoResult:
    """Inject at ``t = T`` and report per-layer drift before and after."""
    policy = policy or InjectionPolicy()
    before = list(bundle) if bundle is not None else demo_bundle(num_frames, seed=seed)
    after = apply_policy(before, policy, policy.num_steps)
    rows = [
        {
            "layer": b.layer_id,
            "eta": policy.eta_for(b.layer_id),
            "drift_before": frame_drift(b),
            "drift_after": frame_drift(a),
            "status": a.status,
        }
        for b, a in zip(before, after)
    ]
    return DemoResult(before, after, rows)
