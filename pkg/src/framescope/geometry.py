"""Four-point homography estimation and inverse-mapped bilinear warping.

Coordinates are ``(x, y)`` in pixel-index units: pixel ``(row, col)`` sits at
``x = col, y = row``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .core import FramescopeError, as_image


class DegenerateConfiguration(FramescopeError, ValueError):
    pass


def _check_no_collinear(pts: np.ndarray, what: str) -> None:
    span = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-300)
    for a, b, c in combinations(range(4), 3):
        u, v = pts[b] - pts[a], pts[c] - pts[a]
        if abs(u[0] * v[1] - u[1] * v[0]) <= 1e-9 * span * span:
            raise DegenerateConfiguration(f"{what} points {a}, {b}, {c} are collinear")


@dataclass(frozen=True)
class QuadCorrespondence:
    src: tuple
    dst: tuple

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.float64)
        dst = np.asarray(self.dst, dtype=np.float64)
        if src.shape != (4, 2) or dst.shape != (4, 2):
            raise ValueError("a quad correspondence needs exactly 4 src and 4 dst points")
        _check_no_collinear(src, "src")
        _check_no_collinear(dst, "dst")
        object.__setattr__(self, "src", tuple(map(tuple, src)))
        object.__setattr__(self, "dst", tuple(map(tuple, dst)))


def _normalizer(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    a = np.zeros((8, 8))
    rhs = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        rhs[2 * i], rhs[2 * i + 1] = u, v
    try:
        h = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateConfiguration("singular correspondence system") from exc
    return np.append(h, 1.0).reshape(3, 3)


def estimate_homography(corr: QuadCorrespondence) -> np.ndarray:
    """Direct linear transform on 4 point pairs with ``h33 = 1``.

    Points are conditioned (centred, mean distance sqrt(2)) before the 8x8
    solve, then one residual-correction solve polishes the result.
    """
    src = np.asarray(corr.src)
    dst = np.asarray(corr.dst)
    ts, td = _normalizer(src), _normalizer(dst)
    src_n = project(ts, src)
    dst_n = project(td, dst)
    hn = _dlt(src_n, dst_n)
    h = np.linalg.solve(td, hn @ ts)
    if abs(h[2, 2]) < 1e-12:
        raise DegenerateConfiguration("homography has a vanishing h33")
    h = h / h[2, 2]
    # refine in the original coordinates; the unconditioned system is fine
    # for a small correction
    for _ in range(2):
        resid = dst - project(h, src)
        if np.abs(resid).max() == 0:
            break
        try:
            h = h + _dlt_correction(h, src, dst)
        except np.linalg.LinAlgError:
            break
    if abs(np.linalg.det(h)) <= 1e-12:
        raise DegenerateConfiguration("homography is singular")
    return h


def _dlt_correction(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    # Gauss-Newton step on the 8 free entries of h
    jac = np.zeros((8, 8))
    res = np.zeros(8)
    for i, (x, y) in enumerate(src):
        p = np.array([x, y, 1.0])
        num_u, num_v, den = h[0] @ p, h[1] @ p, h[2] @ p
        u, v = num_u / den, num_v / den
        res[2 * i], res[2 * i + 1] = dst[i, 0] - u, dst[i, 1] - v
        jac[2 * i, 0:3] = p / den
        jac[2 * i, 6:8] = -u * p[:2] / den
        jac[2 * i + 1, 3:6] = p / den
        jac[2 * i + 1, 6:8] = -v * p[:2] / den
    step = np.linalg.solve(jac, res)
    delta = np.zeros(9)
    delta[:8] = step
    return delta.reshape(3, 3)


def project(h: np.ndarray, pts) -> np.ndarray:
    """Apply homography ``h`` to ``(N, 2)`` points."""
    pts = np.asarray(pts, dtype=np.float64)
    homog = np.column_stack([pts, np.ones(len(pts))]) @ h.T
    return homog[:, :2] / homog[:, 2:3]


def _bilinear_zero(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample ``img`` at (u=x, v=y) treating everything outside as 0."""
    h, w = img.shape[:2]
    pad = np.zeros((h + 2, w + 2, img.shape[2]))
    pad[1:-1, 1:-1] = img
    # shift by one for the zero border; anything further out is zero too
    up = u + 1.0
    vp = v + 1.0
    inside = (up > -1.0) & (up < w + 2.0) & (vp > -1.0) & (vp < h + 2.0)
    up = np.where(inside, up, 0.0)
    vp = np.where(inside, vp, 0.0)
    x0 = np.floor(up).astype(np.int64)
    y0 = np.floor(vp).astype(np.int64)
    fx = (up - x0)[..., None]
    fy = (vp - y0)[..., None]

    def tap(yy, xx):
        ok = (xx >= 0) & (xx < w + 2) & (yy >= 0) & (yy < h + 2) & inside
        vals = pad[np.clip(yy, 0, h + 1), np.clip(xx, 0, w + 1)]
        return np.where(ok[..., None], vals, 0.0)

    top = tap(y0, x0) * (1 - fx) + tap(y0, x0 + 1) * fx
    bot = tap(y0 + 1, x0) * (1 - fx) + tap(y0 + 1, x0 + 1) * fx
    return top * (1 - fy) + bot * fy


def warp(image, h: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Inverse-map each output pixel through ``h^-1`` and sample bilinearly (zero fill)."""
    img = as_image(image)
    h = np.asarray(h, dtype=np.float64)
    if abs(np.linalg.det(h)) <= 1e-12:
        raise DegenerateConfiguration("homography is not invertible")
    hinv = np.linalg.inv(h)
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    den = hinv[2, 0] * xs + hinv[2, 1] * ys + hinv[2, 2]
    u = (hinv[0, 0] * xs + hinv[0, 1] * ys + hinv[0, 2]) / den
    v = (hinv[1, 0] * xs + hinv[1, 1] * ys + hinv[1, 2]) / den
    return np.clip(_bilinear_zero(img, u, v), 0.0, 1.0)


def rectangle_corners(width: int, height: int) -> np.ndarray:
    """Corner pixel centres in TL, TR, BR, BL order."""
    return np.array([[0, 0], [width - 1, 0], [width - 1, height - 1], [0, height - 1]], dtype=np.float64)


def rectify_quad(image, quad, out_w: int = 500, out_h: int = 500) -> np.ndarray:
    """Map quad corners (TL, TR, BR, BL) onto the corners of an ``out_w x out_h`` image."""
    corr = QuadCorrespondence(quad, rectangle_corners(out_w, out_h))
    return warp(image, estimate_homography(corr), out_w, out_h)


@dataclass(frozen=True)
class Sidecar:
    image_id: str
    src: tuple
    dst_width: int = 500
    dst_height: int = 500


def load_sidecar(path) -> Sidecar:
    doc = json.loads(Path(path).read_text())
    return Sidecar(
        image_id=str(doc["image_id"]),
        src=tuple(tuple(float(c) for c in p) for p in doc["src"]),
        dst_width=int(doc.get("dst_width", 500)),
        dst_height=int(doc.get("dst_height", 500)),
    )


def save_sidecar(path, sidecar: Sidecar) -> None:
    doc = {
        "image_id": sidecar.image_id,
        "src": [list(p) for p in sidecar.src],
        "dst_width": sidecar.dst_width,
        "dst_height": sidecar.dst_height,
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def rectify_sidecar(image, sidecar: Sidecar) -> np.ndarray:
    return rectify_quad(image, sidecar.src, sidecar.dst_width, sidecar.dst_height)
