"""Rectangular grids, scalar fields, transport costs and c-transforms.

The domain is a box discretized by cell centers: node i of an axis with
extent L and n cells sits at (i + 1/2) L / n.  Transforms take exact
discrete extrema over grid nodes; the fast quadratic path evaluates the
same minimum through a lower-envelope sweep and must agree with the brute
force to near machine precision.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from ._kernels import envelope_rows


@dataclass(frozen=True)
class Grid:
    """Cell-centered box discretization in one or two dimensions."""

    extents: tuple
    shape: tuple

    def __post_init__(self):
        ext = tuple(float(e) for e in np.atleast_1d(self.extents))
        shp = tuple(int(n) for n in np.atleast_1d(self.shape))
        if len(ext) != len(shp) or len(ext) not in (1, 2):
            raise ValueError("grid must be 1-D or 2-D with matching extents/shape")
        if any(e <= 0 for e in ext) or any(n < 2 for n in shp):
            raise ValueError("extents must be positive and each axis needs >= 2 cells")
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "shape", shp)

    @property
    def dim(self):
        return len(self.shape)

    @property
    def spacing(self):
        return tuple(e / n for e, n in zip(self.extents, self.shape))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def volume(self):
        return float(np.prod(self.extents))

    def axis_centers(self, axis):
        n = self.shape[axis]
        h = self.spacing[axis]
        return (np.arange(n) + 0.5) * h

    @property
    def coords(self):
        """Node coordinates: (n,) for d=1, (n1, n2, 2) for d=2."""
        if self.dim == 1:
            return self.axis_centers(0)
        X1, X2 = np.meshgrid(self.axis_centers(0), self.axis_centers(1), indexing="ij")
        return np.stack([X1, X2], axis=-1)

    @property
    def flat_coords(self):
        """(N, dim) array of all node coordinates in row-major order."""
        if self.dim == 1:
            return self.axis_centers(0)[:, None]
        return self.coords.reshape(-1, 2)


@dataclass
class ScalarField:
    """Values at cell centers with a role tag (density or pressure)."""

    grid: Grid
    values: np.ndarray
    role: str = "density"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} != grid shape {self.grid.shape}")
        if self.role not in ("density", "pressure"):
            raise ValueError("role must be 'density' or 'pressure'")
        if self.role == "density":
            if np.any(vals < 0):
                raise ValueError("density fields must be nonnegative")
            if not np.all(np.isfinite(vals)):
                raise ValueError("density fields must be finite")
        self.values = vals

    def mass(self):
        return float(self.values.sum() * self.grid.cell_volume)

    def with_values(self, vals, role=None):
        return ScalarField(self.grid, vals, role or self.role)

    def interp(self, points):
        """Multilinear interpolation at continuous points (clamped)."""
        g = self.grid
        if g.dim == 1:
            xs = g.axis_centers(0)
            return np.interp(np.asarray(points, float), xs, self.values)
        pts = np.asarray(points, float).reshape(-1, 2)
        out = np.empty(pts.shape[0])
        h1, h2 = g.spacing
        n1, n2 = g.shape
        g1 = np.clip(pts[:, 0] / h1 - 0.5, 0, n1 - 1)
        g2 = np.clip(pts[:, 1] / h2 - 0.5, 0, n2 - 1)
        i1 = np.minimum(g1.astype(int), n1 - 2)
        i2 = np.minimum(g2.astype(int), n2 - 2)
        w1 = g1 - i1
        w2 = g2 - i2
        v = self.values
        out = (
            v[i1, i2] * (1 - w1) * (1 - w2)
            + v[i1 + 1, i2] * w1 * (1 - w2)
            + v[i1, i2 + 1] * (1 - w1) * w2
            + v[i1 + 1, i2 + 1] * w1 * w2
        )
        return out


# --- field CSV format -------------------------------------------------------

def write_field(f, fld):
    """Write a field: header line then row-major values, 17 significant digits."""
    own = isinstance(f, str)
    fh = open(f, "w") if own else f
    try:
        g = fld.grid
        ns = ",".join(str(n) for n in g.shape)
        es = ",".join(format(e, ".17g") for e in g.extents)
        fh.write(f"# dim={g.dim} n={ns} extent={es}\n")
        for v in np.asarray(fld.values).ravel():
            fh.write(format(v, ".17g") + "\n")
    finally:
        if own:
            fh.close()


def read_field(f, role="density"):
    """Parse the field format written by write_field."""
    own = isinstance(f, str)
    fh = open(f, "r") if own else f
    try:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError(f"line 1: expected header starting with '#', got {header!r}")
        parts = dict(
            kv.split("=", 1) for kv in header[1:].split() if "=" in kv
        )
        try:
            dim = int(parts["dim"])
            shape = tuple(int(t) for t in parts["n"].split(","))
            extents = tuple(float(t) for t in parts["extent"].split(","))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"line 1: malformed header {header!r} ({exc})")
        if len(shape) != dim or len(extents) != dim:
            raise ValueError(f"line 1: header dim={dim} does not match n/extent arity")
        vals = []
        for ln, raw in enumerate(fh, start=2):
            raw = raw.strip()
            if not raw:
                continue
            try:
                vals.append(float(raw))
            except ValueError:
                raise ValueError(f"line {ln}: not a number: {raw!r}")
        expected = int(np.prod(shape))
        if len(vals) != expected:
            raise ValueError(f"expected {expected} values, found {len(vals)}")
        grid = Grid(extents, shape)
        return ScalarField(grid, np.asarray(vals).reshape(shape), role)
    finally:
        if own:
            fh.close()


def field_to_string(fld):
    buf = io.StringIO()
    write_field(buf, fld)
    return buf.getvalue()


# --- transport costs --------------------------------------------------------


class QuadraticCost:
    """c(x, y) = |x - y|^2 / (2 tau)."""

    kind = "quadratic"

    def __init__(self, tau):
        if not tau > 0:
            raise ValueError("time step tau must be positive")
        self.tau = float(tau)

    def c(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        d = x - y
        if d.ndim and d.shape[-1:] == (2,):
            return (d * d).sum(axis=-1) / (2 * self.tau)
        return d * d / (2 * self.tau)

    def grad_x(self, x, y):
        return (np.asarray(x, float) - np.asarray(y, float)) / self.tau


class KernelCost:
    """Translation-invariant cost c(x, y) = k(|x - y|) from a convex table.

    The kernel table (r_k, k(r_k)) must start at k(0) = 0 and be convex;
    evaluation is linear interpolation.  Transforms use brute force.
    """

    kind = "kernel"

    def __init__(self, r_grid, k_values):
        r = np.asarray(r_grid, float)
        k = np.asarray(k_values, float)
        if r[0] != 0.0 or abs(k[0]) > 0:
            raise ValueError("kernel table must start at r=0 with k(0)=0")
        if np.any(np.diff(r) <= 0):
            raise ValueError("kernel radii must increase")
        sl = np.diff(k) / np.diff(r)
        if np.any(np.diff(sl) < -1e-12 * max(1.0, np.abs(k).max())):
            raise ValueError("kernel table must be convex")
        if np.any(k < 0):
            raise ValueError("kernel must be nonnegative")
        self.r = r
        self.k = k

    def _kr(self, r):
        if np.any(r > self.r[-1] * (1 + 1e-12)):
            raise ValueError("kernel table does not cover the domain diameter")
        return np.interp(r, self.r, self.k)

    def c(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        d = x - y
        if d.ndim and d.shape[-1:] == (2,):
            r = np.sqrt((d * d).sum(axis=-1))
        else:
            r = np.abs(d)
        return self._kr(r)

    def grad_x(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        d = x - y
        if d.ndim and d.shape[-1:] == (2,):
            r = np.sqrt((d * d).sum(axis=-1))
        else:
            r = np.abs(d)
        dk = np.gradient(self.k, self.r)
        slope = np.interp(r, self.r, dk)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, d / r[..., None], 0.0) if d.ndim and d.shape[-1:] == (2,) else np.sign(d)
        return slope[..., None] * unit if d.ndim and d.shape[-1:] == (2,) else slope * unit


def cost_matrix(cost, grid):
    """Dense c(x_i, y_j) over all node pairs (row = source i, column = target j)."""
    pts = grid.flat_coords
    if grid.dim == 1:
        return cost.c(pts[:, None, 0], pts[None, :, 0])
    return cost.c(pts[:, None, :], pts[None, :, :])


# --- transforms --------------------------------------------------------------


def _check_pressure(fld):
    if not np.all(np.isfinite(fld.values)):
        raise ValueError("transform input must be finite everywhere")


def c_transform_brute(fld, cost, return_argmin=False, block=256):
    """Exact discrete transform: out(y) = min over nodes x of p(x) + c(x, y).

    Evaluates every node pair (blocked to limit memory); ties resolve to
    the lowest flat index.  Optionally returns the per-target argmin index.
    """
    _check_pressure(fld)
    g = fld.grid
    pts = g.flat_coords
    p = fld.values.ravel()
    N = p.size
    out = np.empty(N)
    arg = np.empty(N, dtype=np.int64) if return_argmin else None
    for start in range(0, N, block):
        stop = min(start + block, N)
        tgt = pts[start:stop]
        if g.dim == 1:
            C = cost.c(pts[:, None, 0], tgt[None, :, 0])
        else:
            C = cost.c(pts[:, None, :], tgt[None, :, :])
        M = p[:, None] + C
        out[start:stop] = M.min(axis=0)
        if return_argmin:
            arg[start:stop] = M.argmin(axis=0)
    res = fld.with_values(out.reshape(g.shape), role="pressure")
    return (res, arg.reshape(g.shape)) if return_argmin else res


def cbar_transform_brute(fld, cost, return_argmax=False):
    """Exact discrete conjugate transform: out(x) = max over y of q(y) - c(x, y)."""
    neg = fld.with_values(-fld.values, role="pressure")
    if return_argmax:
        res, arg = c_transform_brute(neg, cost, return_argmin=True)
        return res.with_values(-res.values), arg
    res = c_transform_brute(neg, cost)
    return res.with_values(-res.values)


def c_transform_fast(fld, cost):
    """Envelope evaluation of the quadratic-cost transform, O(n) per axis.

    Contract: agrees with c_transform_brute to ~1e-12 relative everywhere.
    """
    _check_pressure(fld)
    if cost.kind != "quadratic":
        return c_transform_brute(fld, cost)
    g = fld.grid
    tau = cost.tau
    if g.dim == 1:
        h = g.spacing[0]
        a = h * h / (2 * tau)
        vals = fld.values[None, :].copy()
        out = np.empty_like(vals)
        arg = np.empty(vals.shape, dtype=np.int64)
        envelope_rows(vals, a, out, arg)
        return fld.with_values(out[0], role="pressure")
    h1, h2 = g.spacing
    a1 = h1 * h1 / (2 * tau)
    a2 = h2 * h2 / (2 * tau)
    v = np.ascontiguousarray(fld.values)
    tmp = np.empty_like(v)
    arg = np.empty(v.shape, dtype=np.int64)
    envelope_rows(v, a2, tmp, arg)          # min over axis 1
    vt = np.ascontiguousarray(tmp.T)
    out = np.empty_like(vt)
    arg2 = np.empty(vt.shape, dtype=np.int64)
    envelope_rows(vt, a1, out, arg2)        # then axis 0
    return fld.with_values(np.ascontiguousarray(out.T), role="pressure")


def cbar_transform_fast(fld, cost):
    neg = fld.with_values(-fld.values, role="pressure")
    res = c_transform_fast(neg, cost)
    return res.with_values(-res.values)


def c_transform(fld, cost, fast=True):
    if fast and cost.kind == "quadratic":
        return c_transform_fast(fld, cost)
    return c_transform_brute(fld, cost)


def cbar_transform(fld, cost, fast=True):
    if fast and cost.kind == "quadratic":
        return cbar_transform_fast(fld, cost)
    return cbar_transform_brute(fld, cost)


def c_concavify(fld, cost, fast=True):
    """Double transform p -> min(p^{c cbar}, p).

    The result never exceeds the input (the min clip removes roundoff) and
    is a fixed point of the operation up to roundoff.
    """
    pc = c_transform(fld, cost, fast)
    pcc = cbar_transform(pc, cost, fast)
    return fld.with_values(np.minimum(pcc.values, fld.values), role="pressure")


def is_c_concave(fld, cost, tol=1e-9):
    pcc = c_concavify(fld, cost)
    scale = max(1.0, float(np.abs(fld.values).max()))
    return float(np.abs(pcc.values - fld.values).max()) <= tol * scale


# --- transport maps and pushforward ------------------------------------------


@dataclass
class TransportMapSample:
    """Sampled transport map: per source node an image point in the box.

    images has shape grid.shape (+ (2,) in 2-D) holding continuous
    coordinates clamped to the domain; inverse_images likewise for the
    inverse map.  argmin holds the flat node index minimizing
    p(x) + c(x, y) per source node y when available.
    """

    grid: Grid
    images: np.ndarray
    inverse_images: np.ndarray = None
    argmin: np.ndarray = None


def grad_field(values, grid):
    """Discrete gradient: centered in the interior, one-sided at walls."""
    if grid.dim == 1:
        h = grid.spacing[0]
        g = np.empty_like(values)
        g[1:-1] = (values[2:] - values[:-2]) / (2 * h)
        g[0] = (values[1] - values[0]) / h
        g[-1] = (values[-1] - values[-2]) / h
        return g
    h1, h2 = grid.spacing
    g = np.empty(values.shape + (2,))
    g[1:-1, :, 0] = (values[2:, :] - values[:-2, :]) / (2 * h1)
    g[0, :, 0] = (values[1, :] - values[0, :]) / h1
    g[-1, :, 0] = (values[-1, :] - values[-2, :]) / h1
    g[:, 1:-1, 1] = (values[:, 2:] - values[:, :-2]) / (2 * h2)
    g[:, 0, 1] = (values[:, 1] - values[:, 0]) / h2
    g[:, -1, 1] = (values[:, -1] - values[:, -2]) / h2
    return g


def _clamp_to_box(pts, grid):
    if grid.dim == 1:
        return np.clip(pts, 0.0, grid.extents[0])
    out = pts.copy()
    out[..., 0] = np.clip(out[..., 0], 0.0, grid.extents[0])
    out[..., 1] = np.clip(out[..., 1], 0.0, grid.extents[1])
    return out


def forward_map(fld, cost, concavity_tol=1e-8):
    """Map y -> argmin_x p(x) + c(x, y) sampled at the nodes.

    Requires a c-concave input.  For the quadratic cost the image is
    y - tau * grad(p^c)(y) (clamped to the box) and the inverse map is
    x + tau * grad(p)(x); otherwise images snap to the argmin nodes.
    """
    g = fld.grid
    pcc = c_concavify(fld, cost)
    scale = max(1.0, float(np.abs(fld.values).max()))
    dev = float(np.abs(pcc.values - fld.values).max())
    if dev > concavity_tol * scale:
        raise ValueError(
            f"input is not c-concave (double-transform deviation {dev:.3e})"
        )
    if cost.kind == "quadratic":
        pc = c_transform(fld, cost)
        gp_c = grad_field(pc.values, g)
        gp = grad_field(fld.values, g)
        if g.dim == 1:
            imgs = g.coords - cost.tau * gp_c
            inv = g.coords + cost.tau * gp
        else:
            imgs = g.coords - cost.tau * gp_c
            inv = g.coords + cost.tau * gp
        return TransportMapSample(g, _clamp_to_box(imgs, g), _clamp_to_box(inv, g))
    _, arg = c_transform_brute(fld, cost, return_argmin=True)
    pts = g.flat_coords
    imgs = pts[arg.ravel()].reshape(g.shape + ((2,) if g.dim == 2 else ()))
    if g.dim == 1:
        imgs = imgs.reshape(g.shape)
    _, arginv = cbar_transform_brute(c_transform(fld, cost, fast=False), cost, return_argmax=True)
    inv = pts[arginv.ravel()].reshape(imgs.shape)
    return TransportMapSample(g, imgs, inv, argmin=arg)


def pushforward(fld, tmap):
    """Mass-preserving multilinear deposit of a density through a map.

    Each cell's mass travels to its image point and splats onto the
    neighboring cell centers; total mass is conserved to roundoff and the
    output is nonnegative.
    """
    if fld.role != "density":
        raise ValueError("pushforward acts on density fields")
    g = fld.grid
    rho = fld.values
    if g.dim == 1:
        n = g.shape[0]
        h = g.spacing[0]
        pos = np.clip(np.asarray(tmap.images, float), 0.0, g.extents[0])
        frac = np.clip(pos / h - 0.5, 0.0, n - 1.0)
        lo = np.minimum(frac.astype(int), n - 2)
        w = frac - lo
        out = np.bincount(lo, weights=rho * (1 - w), minlength=n)
        out += np.bincount(lo + 1, weights=rho * w, minlength=n)
        return fld.with_values(out)
    n1, n2 = g.shape
    h1, h2 = g.spacing
    pos = _clamp_to_box(np.asarray(tmap.images, float), g)
    f1 = np.clip(pos[..., 0] / h1 - 0.5, 0.0, n1 - 1.0).ravel()
    f2 = np.clip(pos[..., 1] / h2 - 0.5, 0.0, n2 - 1.0).ravel()
    i1 = np.minimum(f1.astype(int), n1 - 2)
    i2 = np.minimum(f2.astype(int), n2 - 2)
    w1 = f1 - i1
    w2 = f2 - i2
    m = rho.ravel()
    out = np.zeros(n1 * n2)
    flat = i1 * n2 + i2
    np.add.at(out, flat, m * (1 - w1) * (1 - w2))
    np.add.at(out, flat + n2, m * w1 * (1 - w2))
    np.add.at(out, flat + 1, m * (1 - w1) * w2)
    np.add.at(out, flat + n2 + 1, m * w1 * w2)
    return fld.with_values(out.reshape(n1, n2))


def pushforward_argmin(fld, argmin):
    """Deposit each cell's mass entirely onto its argmin node."""
    g = fld.grid
    out = np.bincount(
        np.asarray(argmin).ravel(), weights=fld.values.ravel(), minlength=int(np.prod(g.shape))
    )
    return fld.with_values(out.reshape(g.shape))
