"""Dense kernel targets: analytic shape generators and PGM/PPM I/O.

Images are plain 2D float64 arrays (H, W); multi-channel images are (H, W, C)
and handled channel-wise by the filtering code. Kernels are odd-sized square
grids centered at the middle pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "KernelError",
    "DenseKernel",
    "KernelSpec",
    "generate_kernel",
    "gaussian_kernel",
    "disk_kernel",
    "ring_kernel",
    "polygon_kernel",
    "star_kernel",
    "heart_kernel",
    "delta_kernel",
    "load_kernel_image",
    "save_kernel_image",
    "read_image",
    "write_image",
    "SUPPORT_THRESHOLD_REL",
]

# support = pixels above this fraction of the peak (anti-aliased edges need a tolerance)
SUPPORT_THRESHOLD_REL = 1e-4

_SUBSAMPLES = 4  # 4x4 supersampling for analytic shapes


class KernelError(ValueError):
    """Invalid kernel parameters or malformed kernel data."""


@dataclass(frozen=True, eq=False)
class DenseKernel:
    """Odd-sized square weight grid centered at its middle pixel."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise KernelError(f"kernel must be square 2D, got shape {w.shape}")
        if w.shape[0] % 2 == 0:
            raise KernelError(f"kernel size must be odd, got {w.shape[0]}")
        if not np.all(np.isfinite(w)):
            raise KernelError("kernel weights must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def radius(self) -> int:
        return self.weights.shape[0] // 2

    def normalized(self) -> "DenseKernel":
        s = float(self.weights.sum())
        if abs(s) < 1e-300:
            raise KernelError("kernel has empty support")
        return DenseKernel(self.weights / s)

    def embedded(self, size: int) -> "DenseKernel":
        """Zero-pad to a larger odd canvas, keeping the center fixed."""
        if size % 2 == 0:
            raise KernelError(f"canvas size must be odd, got {size}")
        if size < self.size:
            raise KernelError(f"cannot embed size {self.size} into smaller canvas {size}")
        pad = (size - self.size) // 2
        return DenseKernel(np.pad(self.weights, pad))

    def support_mask(self, threshold_rel: float = SUPPORT_THRESHOLD_REL) -> np.ndarray:
        peak = float(np.abs(self.weights).max())
        if peak == 0.0:
            raise KernelError("kernel has empty support")
        return self.weights > threshold_rel * peak

    def support_bbox(self, threshold_rel: float = SUPPORT_THRESHOLD_REL):
        """Bounding box of the support in centered pixel coords: (xmin, xmax, ymin, ymax)."""
        mask = self.support_mask(threshold_rel)
        rows, cols = np.nonzero(mask)
        if rows.size == 0:
            raise KernelError("kernel has empty support")
        c = self.radius
        return (
            float(cols.min() - c),
            float(cols.max() - c),
            float(rows.min() - c),
            float(rows.max() - c),
        )


@dataclass(frozen=True)
class KernelSpec:
    """Recipe for a target kernel.

    Shapes and positional params:
      gaussian:SIGMA[:SIZE]             disk:RADIUS[:SIZE]
      ring:INNER:OUTER[:SIZE]           polygon:SIDES:RADIUS[:SIZE[:ROT_DEG]]
      star:POINTS:RADIUS[:SIZE[:ROT_DEG]]   heart:RADIUS[:SIZE]
      delta[:SIZE]                      file:PATH
    """

    shape: str
    params: tuple = ()
    size: int | None = None
    rotation: float = 0.0
    path: str | None = None

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        parts = text.strip().split(":")
        shape = parts[0].lower()
        args = parts[1:]
        try:
            if shape == "file":
                if not args:
                    raise KernelError("file kernel needs a path: file:PATH")
                return cls("file", path=":".join(args))
            if shape == "delta":
                size = int(args[0]) if args else 1
                return cls("delta", size=size)
            vals = [float(a) for a in args]
            if shape == "gaussian":
                return cls("gaussian", (vals[0],), size=int(vals[1]) if len(vals) > 1 else None)
            if shape == "disk":
                return cls("disk", (vals[0],), size=int(vals[1]) if len(vals) > 1 else None)
            if shape == "ring":
                return cls("ring", (vals[0], vals[1]), size=int(vals[2]) if len(vals) > 2 else None)
            if shape in ("polygon", "star"):
                size = int(vals[2]) if len(vals) > 2 else None
                rot = math.radians(vals[3]) if len(vals) > 3 else 0.0
                return cls(shape, (int(vals[0]), vals[1]), size=size, rotation=rot)
            if shape == "heart":
                return cls("heart", (vals[0],), size=int(vals[1]) if len(vals) > 1 else None)
        except (IndexError, ValueError) as exc:
            raise KernelError(f"cannot parse kernel spec {text!r}: {exc}") from exc
        raise KernelError(f"unknown kernel shape {shape!r}")


def generate_kernel(spec: KernelSpec) -> DenseKernel:
    """Build the normalized dense kernel described by `spec`."""
    if spec.shape == "gaussian":
        return gaussian_kernel(spec.params[0], spec.size)
    if spec.shape == "disk":
        return disk_kernel(spec.params[0], spec.size)
    if spec.shape == "ring":
        return ring_kernel(spec.params[0], spec.params[1], spec.size)
    if spec.shape == "polygon":
        return polygon_kernel(int(spec.params[0]), spec.params[1], spec.size, spec.rotation)
    if spec.shape == "star":
        return star_kernel(int(spec.params[0]), spec.params[1], spec.size, rotation=spec.rotation)
    if spec.shape == "heart":
        return heart_kernel(spec.params[0], spec.size)
    if spec.shape == "delta":
        return delta_kernel(spec.size or 1)
    if spec.shape == "file":
        return load_kernel_image(spec.path)
    raise KernelError(f"unknown kernel shape {spec.shape!r}")


def _check_odd_size(size: int) -> int:
    if size % 2 == 0 or size < 1:
        raise KernelError(f"kernel size must be odd and positive, got {size}")
    return size


def gaussian_kernel(sigma: float, size: int | None = None) -> DenseKernel:
    """Normalized sampled Gaussian, exp(-(i^2+j^2)/(2 sigma^2)) on the pixel grid.

    Auto extent is the smallest odd M >= 6*sigma (covers +/-3 sigma). Built as an
    outer product of one symmetric 1D profile so the 4-fold symmetry is exact in
    floating point.
    """
    if sigma <= 0:
        raise KernelError(f"gaussian sigma must be positive, got {sigma}")
    min_size = math.ceil(6 * sigma)
    if min_size % 2 == 0:
        min_size += 1
    if size is None:
        size = min_size
    else:
        _check_odd_size(size)
        if size < min_size:
            raise KernelError(f"gaussian sigma={sigma} needs size >= {min_size}, got {size}")
    i = np.arange(size, dtype=np.float64) - size // 2
    g1 = np.exp(-(i * i) / (2.0 * sigma * sigma))
    k = np.outer(g1, g1)
    return DenseKernel(k / k.sum())


def _rasterize(inside, radius: float, size: int | None) -> DenseKernel:
    """Rasterize `inside(x, y) -> bool` with 4x4 supersampling and normalize.

    Enforces a one-pixel zero border so bounding-box logic stays well-defined.
    """
    if radius <= 0:
        raise KernelError(f"shape radius must be positive, got {radius}")
    if size is None:
        size = 2 * math.ceil(radius) + 3
    else:
        _check_odd_size(size)
    c = size // 2
    sub = (np.arange(_SUBSAMPLES) + 0.5) / _SUBSAMPLES - 0.5
    base = np.arange(size, dtype=np.float64) - c
    x = (base[:, None] + sub[None, :]).reshape(1, size, 1, _SUBSAMPLES)
    y = (base[:, None] + sub[None, :]).reshape(size, 1, _SUBSAMPLES, 1)
    cov = inside(x, y).mean(axis=(2, 3), dtype=np.float64)
    if cov.sum() <= 0:
        raise KernelError("kernel has empty support")
    border = np.concatenate([cov[0], cov[-1], cov[:, 0], cov[:, -1]])
    if np.any(border > 0):
        raise KernelError(
            f"shape of radius {radius} does not fit size {size} with a one-pixel border"
        )
    return DenseKernel(cov / cov.sum())


def disk_kernel(radius: float, size: int | None = None) -> DenseKernel:
    """Filled disk indicator, anti-aliased."""
    return _rasterize(lambda x, y: x * x + y * y <= radius * radius, radius, size)


def ring_kernel(inner: float, outer: float, size: int | None = None) -> DenseKernel:
    """Annulus indicator with inner <= r <= outer."""
    if not 0 < inner < outer:
        raise KernelError(f"ring needs 0 < inner < outer, got {inner}, {outer}")

    def inside(x, y):
        d2 = x * x + y * y
        return (d2 >= inner * inner) & (d2 <= outer * outer)

    return _rasterize(inside, outer, size)


def polygon_kernel(sides: int, radius: float, size: int | None = None,
                   rotation: float = 0.0) -> DenseKernel:
    """Regular convex polygon with `sides` vertices on a circle of `radius`."""
    if sides < 3:
        raise KernelError(f"polygon needs >= 3 sides, got {sides}")
    apothem = radius * math.cos(math.pi / sides)
    step = 2.0 * math.pi / sides

    def inside(x, y):
        theta = np.arctan2(y, x) - rotation
        local = np.mod(theta, step) - step / 2.0
        return np.hypot(x, y) * np.cos(local) <= apothem

    return _rasterize(inside, radius, size)


def _point_in_polygon(x, y, verts) -> np.ndarray:
    """Even-odd crossing test, vectorized over broadcastable x, y."""
    inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    n = len(verts)
    for k in range(n):
        x0, y0 = verts[k]
        x1, y1 = verts[(k + 1) % n]
        crosses = (y0 > y) != (y1 > y)
        denom = y1 - y0 if y1 != y0 else 1.0
        xint = x0 + (y - y0) * (x1 - x0) / denom
        inside ^= crosses & (x < xint)
    return inside


def star_kernel(points: int, radius: float, size: int | None = None,
                inner_ratio: float = 0.4, rotation: float = 0.0) -> DenseKernel:
    """Star with `points` spikes: a 2*points-gon alternating outer/inner radius."""
    if points < 2:
        raise KernelError(f"star needs >= 2 points, got {points}")
    if not 0 < inner_ratio < 1:
        raise KernelError(f"star inner_ratio must be in (0, 1), got {inner_ratio}")
    verts = []
    for k in range(2 * points):
        r = radius if k % 2 == 0 else radius * inner_ratio
        a = rotation + math.pi * k / points
        verts.append((r * math.cos(a), r * math.sin(a)))
    return _rasterize(lambda x, y: _point_in_polygon(x, y, verts), radius, size)


def heart_kernel(radius: float, size: int | None = None) -> DenseKernel:
    """Heart silhouette from the classic sextic (x^2+y^2-1)^3 - x^2 y^3 <= 0."""
    scale = radius / 1.3  # curve extent is ~1.3 in these units

    def inside(x, y):
        u = x / scale
        v = -y / scale  # rows grow downward; flip so the heart is upright
        a = u * u + v * v - 1.0
        return a * a * a - u * u * v * v * v <= 0.0

    return _rasterize(inside, radius, size)


def delta_kernel(size: int = 1) -> DenseKernel:
    """Unit impulse: all mass at the center pixel."""
    _check_odd_size(size)
    w = np.zeros((size, size))
    w[size // 2, size // 2] = 1.0
    return DenseKernel(w)


# ---------------------------------------------------------------------------
# PGM / PPM I/O.  Kernels go to 16-bit PGM with the peak at 65535 and the
# original scale recorded in a '# sum-scale <float>' comment; images map
# linearly to [0, 1].

def _read_netpbm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2].decode("ascii", errors="replace")
    if magic not in ("P2", "P5", "P3", "P6"):
        raise KernelError(f"{path}: not a PGM/PPM file (magic {magic!r})")
    pos = 2
    comments = []
    fields = []

    def next_token():
        nonlocal pos
        while pos < len(data):
            ch = data[pos:pos + 1]
            if ch == b"#":
                end = data.find(b"\n", pos)
                end = len(data) if end < 0 else end
                comments.append(data[pos + 1:end].decode("ascii", errors="replace").strip())
                pos = end + 1
            elif ch.isspace():
                pos += 1
            else:
                start = pos
                while pos < len(data) and not data[pos:pos + 1].isspace():
                    pos += 1
                return data[start:pos].decode("ascii")
        raise KernelError(f"{path}: truncated header")

    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except ValueError as exc:
        raise KernelError(f"{path}: malformed header: {exc}") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise KernelError(f"{path}: bad dimensions {width}x{height} maxval {maxval}")
    channels = 3 if magic in ("P3", "P6") else 1
    count = width * height * channels
    if magic in ("P2", "P3"):
        try:
            vals = np.array(data[pos:].split(), dtype=np.int64)
        except ValueError as exc:
            raise KernelError(f"{path}: malformed ASCII data: {exc}") from exc
    else:
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = data[pos:pos + count * dtype.itemsize]
        if len(raw) < count * dtype.itemsize:
            raise KernelError(f"{path}: truncated pixel data")
        vals = np.frombuffer(raw, dtype=dtype).astype(np.int64)
    if vals.size != count:
        raise KernelError(f"{path}: expected {count} samples, got {vals.size}")
    if channels == 3:
        arr = vals.reshape(height, width, 3).astype(np.float64)
    else:
        arr = vals.reshape(height, width).astype(np.float64)
    return arr, maxval, comments


def load_kernel_image(path) -> DenseKernel:
    """Load a PGM kernel, apply its sum-scale comment, and normalize to sum 1."""
    arr, maxval, comments = _read_netpbm(path)
    if arr.ndim != 2:
        raise KernelError(f"{path}: kernel images must be grayscale PGM")
    h, w = arr.shape
    if h != w:
        raise KernelError(f"{path}: kernel must be square, got {w}x{h}")
    if h % 2 == 0:
        raise KernelError(f"{path}: kernel dimension must be odd, got {h}")
    scale = 1.0 / maxval
    for c in comments:
        if c.startswith("sum-scale"):
            scale = float(c.split()[1])
    weights = arr * scale
    if weights.sum() <= 0:
        raise KernelError(f"{path}: kernel has empty support")
    return DenseKernel(weights).normalized()


def save_kernel_image(kernel: DenseKernel, path) -> None:
    """Write a kernel as 16-bit binary PGM, peak scaled to 65535.

    Negative weights (possible in optimized impulse responses) clip to zero;
    the round-trip contract covers non-negative kernels.
    """
    w = np.clip(kernel.weights, 0.0, None)
    peak = float(w.max())
    if peak <= 0:
        raise KernelError("cannot save kernel with empty support")
    raw = np.rint(w / peak * 65535.0).astype(">u2")
    scale = peak / 65535.0
    with open(path, "wb") as fh:
        fh.write(b"P5\n")
        fh.write(f"# sum-scale {scale!r}\n".encode("ascii"))
        fh.write(f"{kernel.size} {kernel.size}\n65535\n".encode("ascii"))
        fh.write(raw.tobytes())


def read_image(path) -> np.ndarray:
    """Read a PGM/PPM image into float64 in [0, 1]; (H, W) or (H, W, 3)."""
    arr, maxval, _ = _read_netpbm(path)
    return arr / maxval


def write_image(img: np.ndarray, path, maxval: int = 65535) -> None:
    """Write an image as binary PGM (2D) or PPM (3-channel), clipping to [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise KernelError(f"image must be (H, W) or (H, W, 3), got {img.shape}")
    quant = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    magic = b"P5" if img.ndim == 2 else b"P6"
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        fh.write(f"{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(quant.astype(dtype).tobytes())
