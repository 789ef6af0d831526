"""Closed specular paths from a base point back to itself.

For a base point ``x`` and an ordered list of surfaces, the closed optical
path is the minimiser of

    l(y_1..y_n) = |x - y_1| + sum |y_i - y_{i+1}| + |y_n - x|

over reflection points ``y_i`` constrained to their surfaces.  The solver
works on whole batches of base points: each iteration takes a damped Newton
step in the tangent planes of the current reflection points and maps it back
onto the surfaces.

Paths are then checked against the scene (extent, shadowing, reflection on
the vacuum side, grazing incidence); the result carries a status code per
point.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geometry import in_vacuum, segment_blocked

MAX_ITER = 200
GRAD_TOL = 1e-13
RESIDUAL_TOL = 1e-8
GRAZING_ANGLE = 1e-6


class Status(enum.IntEnum):
    VALID = 0
    NO_CONVERGENCE = 1
    OFF_SURFACE = 2
    SHADOWED = 3
    GRAZING = 4
    OUTSIDE_DOMAIN = 5
    CAUSTIC = 6


@dataclass(frozen=True)
class ReflectionSequence:
    """Ordered surface indices of one reflection class and its multiplicity."""

    surfaces: Tuple[int, ...]
    multiplicity: int

    def __post_init__(self):
        if len(self.surfaces) < 1:
            raise ValueError("a reflection sequence needs at least one surface")
        for a, b in zip(self.surfaces, self.surfaces[1:]):
            if a == b:
                raise ValueError("consecutive reflections off the same surface")
        if self.multiplicity not in (1, 2):
            raise ValueError("multiplicity must be 1 or 2")

    @property
    def order(self) -> int:
        return len(self.surfaces)

    def reversed(self) -> "ReflectionSequence":
        return ReflectionSequence(tuple(reversed(self.surfaces)), self.multiplicity)

    def label(self, names: Optional[Sequence[str]] = None) -> str:
        if names is None:
            return "-".join(str(s) for s in self.surfaces)
        return "-".join(names[s] for s in self.surfaces)


def _surfaces(scene):
    return list(getattr(scene, "surfaces", scene))


def enumerate_sequences(scene, max_reflections: int) -> List[ReflectionSequence]:
    """All reflection classes up to ``max_reflections`` bounces.

    Sequences never repeat a surface twice in a row.  A sequence and its
    reversal describe the same closed path run backwards, so only one
    representative is kept, with multiplicity 2; palindromic sequences are
    their own reversal and keep multiplicity 1.  The direct path (no
    reflection) is never produced.
    """
    if max_reflections < 1:
        raise ValueError("max_reflections must be >= 1")
    k = len(_surfaces(scene))
    out = []
    for n in range(1, max_reflections + 1):
        seen = set()
        for seq in itertools.product(range(k), repeat=n):
            if any(a == b for a, b in zip(seq, seq[1:])):
                continue
            rev = tuple(reversed(seq))
            if seq in seen or rev in seen:
                continue
            seen.add(seq)
            out.append(ReflectionSequence(seq, 1 if seq == rev else 2))
    return out


@dataclass
class PathBatch:
    """Closed paths for a batch of base points sharing one sequence."""

    x: np.ndarray          # (B, 3)
    points: np.ndarray     # (B, n, 3)
    sequence: ReflectionSequence
    length: np.ndarray     # (B,)
    residual: np.ndarray   # (B,)
    iterations: np.ndarray  # (B,)
    status: np.ndarray     # (B,) Status codes

    @property
    def valid(self):
        return self.status == Status.VALID

    def __len__(self):
        return len(self.length)

    def path(self, i: int) -> "OpticalPath":
        return OpticalPath(
            x=self.x[i].copy(),
            points=self.points[i].copy(),
            sequence=self.sequence,
            length=float(self.length[i]),
            residual=float(self.residual[i]),
            status=Status(int(self.status[i])),
        )


@dataclass
class OpticalPath:
    """One closed path ``x -> y_1 -> ... -> y_n -> x``."""

    x: np.ndarray
    points: np.ndarray
    sequence: ReflectionSequence
    length: float
    residual: float
    status: Status

    @property
    def valid(self) -> bool:
        return self.status == Status.VALID

    @property
    def vertices(self):
        return np.vstack([self.x, self.points, self.x])

    def chart_values(self, scene):
        surfaces = _surfaces(scene)
        return [surfaces[s].point_to_chart(y) for s, y in zip(self.sequence.surfaces, self.points)]

    def reversed(self) -> "OpticalPath":
        return OpticalPath(self.x.copy(), self.points[::-1].copy(), self.sequence.reversed(),
                           self.length, self.residual, self.status)

    def as_batch(self) -> PathBatch:
        return PathBatch(self.x[None], self.points[None], self.sequence,
                         np.array([self.length]), np.array([self.residual]),
                         np.zeros(1, dtype=int), np.array([int(self.status)]))


# ---------------------------------------------------------------------------
# length functional and its derivatives
# ---------------------------------------------------------------------------

def _segments(x, y):
    verts = np.concatenate([x[:, None, :], y, x[:, None, :]], axis=1)
    d = np.diff(verts, axis=1)
    length = np.linalg.norm(d, axis=-1)
    u = d / np.maximum(length, 1e-300)[..., None]
    return length, u


def path_length(x, y):
    """Total closed-path length for base points ``x`` (B,3) and ``y`` (B,n,3)."""
    length, _ = _segments(np.asarray(x, float), np.asarray(y, float))
    return length.sum(axis=-1)


def _surface_data(surfaces, seq, y):
    """Normals, tangent bases and curvature operators at the reflection points."""
    B, n, _ = y.shape
    normals = np.empty((B, n, 3))
    basis = np.empty((B, n, 3, 2))
    curv = np.empty((B, n, 3, 3))
    for i, s in enumerate(seq):
        surf = surfaces[s]
        normals[:, i] = surf.normal_at(y[:, i])
        e1, e2 = surf.tangent_basis(y[:, i])
        basis[:, i, :, 0] = e1
        basis[:, i, :, 1] = e2
        curv[:, i] = surf.curvature_operator(y[:, i])
    return normals, basis, curv


def _gradient(u, basis):
    """Euclidean gradient per reflection point and its tangent components."""
    g = u[:, :-1] - u[:, 1:]
    gt = np.einsum("bnk,bnkj->bnj", g, basis)
    return g, gt


def _hessian(length, u, g, normals, basis, curv):
    B, n = g.shape[:2]
    eye = np.eye(3)
    seg = (eye - u[..., :, None] * u[..., None, :]) / np.maximum(length, 1e-300)[..., None, None]
    gn = np.sum(g * normals, axis=-1)
    H = np.zeros((B, 2 * n, 2 * n))
    for i in range(n):
        Ei = basis[:, i]
        block = seg[:, i] + seg[:, i + 1] - gn[:, i, None, None] * curv[:, i]
        H[:, 2 * i:2 * i + 2, 2 * i:2 * i + 2] = np.einsum("bki,bkl,blj->bij", Ei, block, Ei)
        if i + 1 < n:
            off = -np.einsum("bki,bkl,blj->bij", Ei, seg[:, i + 1], basis[:, i + 1])
            H[:, 2 * i:2 * i + 2, 2 * i + 2:2 * i + 4] = off
            H[:, 2 * i + 2:2 * i + 4, 2 * i:2 * i + 2] = np.swapaxes(off, -1, -2)
    return H


def _retract(surfaces, seq, y, step):
    out = np.empty_like(y)
    for i, s in enumerate(seq):
        out[:, i] = surfaces[s].retract(y[:, i], step[:, i])
    return out


def initial_points(x, seq, surfaces):
    """Nearest-point feet of ``x`` on each surface of the sequence."""
    x = np.asarray(x, float)
    return np.stack([surfaces[s].project(x) for s in seq], axis=1)


def minimize_length(x, seq, surfaces, y0=None, max_iter=MAX_ITER, gtol=GRAD_TOL):
    """Damped Newton minimisation of the closed-path length on the surfaces.

    Returns ``(y, residual, iterations)`` where ``residual`` is the largest
    tangential gradient component at the end.
    """
    x = np.asarray(x, float)
    B = x.shape[0]
    n = len(seq)
    y = initial_points(x, seq, surfaces) if y0 is None else np.array(y0, float)
    lam = np.full(B, 1e-6)
    iters = np.zeros(B, dtype=int)

    length, u = _segments(x, y)
    normals, basis, curv = _surface_data(surfaces, seq, y)
    g, gt = _gradient(u, basis)
    res = np.max(np.abs(gt), axis=(1, 2))
    total = length.sum(axis=1)
    active = res > gtol

    for _ in range(max_iter):
        if not active.any():
            break
        ia = np.flatnonzero(active)
        H = _hessian(length[ia], u[ia], g[ia], normals[ia], basis[ia], curv[ia])
        rhs = -gt[ia].reshape(len(ia), 2 * n)
        scale = np.maximum(np.abs(np.diagonal(H, axis1=1, axis2=2)).max(axis=1), 1e-300)
        A = H + (lam[ia] * scale)[:, None, None] * np.eye(2 * n)
        try:
            delta = np.linalg.solve(A, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            delta = np.empty_like(rhs)
            for j in range(len(ia)):
                delta[j] = np.linalg.lstsq(A[j], rhs[j], rcond=None)[0]
        delta = delta.reshape(len(ia), n, 2)
        step = np.einsum("bnkj,bnj->bnk", basis[ia], delta)
        # limit the move to half the shortest segment (or 5% of the path)
        cap = np.maximum(0.5 * length[ia].min(axis=1), 0.05 * total[ia])
        smax = np.linalg.norm(step, axis=-1).max(axis=1)
        factor = np.minimum(1.0, cap / np.maximum(smax, 1e-300))
        step *= factor[:, None, None]

        y_new = _retract(surfaces, seq, y[ia], step)
        len_new, u_new = _segments(x[ia], y_new)
        tot_new = len_new.sum(axis=1)
        nrm_new, bas_new, curv_new = _surface_data(surfaces, seq, y_new)
        g_new, gt_new = _gradient(u_new, bas_new)
        res_new = np.max(np.abs(gt_new), axis=(1, 2))

        tol_len = 1e-14 * np.maximum(total[ia], 1e-300)
        accept = (tot_new <= total[ia] + tol_len) | (res_new < res[ia] * 1e-3)
        acc = ia[accept]
        y[acc] = y_new[accept]
        length[acc] = len_new[accept]
        u[acc] = u_new[accept]
        normals[acc] = nrm_new[accept]
        basis[acc] = bas_new[accept]
        curv[acc] = curv_new[accept]
        g[acc] = g_new[accept]
        gt[acc] = gt_new[accept]
        res[acc] = res_new[accept]
        total[acc] = tot_new[accept]
        lam[acc] = np.maximum(lam[acc] / 10.0, 1e-12)
        rej = ia[~accept]
        lam[rej] = lam[rej] * 10.0
        iters[ia] += 1
        active = (res > gtol) & (lam < 1e12)
    return y, res, iters


def validate_paths(x, y, seq, surfaces, residual=None):
    """Status code per path: extent, vacuum side, grazing, shadowing."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    B, n, _ = y.shape
    status = np.full(B, int(Status.VALID))

    def mark(mask, code):
        status[(status == Status.VALID) & mask] = int(code)

    mark(~in_vacuum(x, surfaces), Status.OUTSIDE_DOMAIN)
    if residual is not None:
        mark(~(residual <= RESIDUAL_TOL), Status.NO_CONVERGENCE)

    length, u = _segments(x, y)
    cos_limit = np.sin(GRAZING_ANGLE)
    for i, s in enumerate(seq):
        surf = surfaces[s]
        nrm = surf.normal_at(y[:, i])
        cin = -np.sum(u[:, i] * nrm, axis=-1)
        cout = np.sum(u[:, i + 1] * nrm, axis=-1)
        mark(~surf.in_extent(y[:, i]), Status.OFF_SURFACE)
        mark((cin <= 0) | (cout <= 0), Status.OFF_SURFACE)
        mark((cin < cos_limit) | (cout < cos_limit), Status.GRAZING)
    verts = np.concatenate([x[:, None, :], y, x[:, None, :]], axis=1)
    check = status == Status.VALID
    if check.any():
        for k in range(n + 1):
            blocked = np.zeros(B, dtype=bool)
            blocked[check] = segment_blocked(verts[check, k], verts[check, k + 1], surfaces)
            mark(blocked, Status.SHADOWED)
    return status


def solve_paths(x, seq: ReflectionSequence, scene, y0=None, max_iter=MAX_ITER) -> PathBatch:
    """Closed stationary paths and their validity for a batch of base points."""
    surfaces = _surfaces(scene)
    x = np.atleast_2d(np.asarray(x, float))
    y, res, iters = minimize_length(x, seq.surfaces, surfaces, y0=y0, max_iter=max_iter)
    length = path_length(x, y)
    status = validate_paths(x, y, seq.surfaces, surfaces, residual=res)
    return PathBatch(x=x, points=y, sequence=seq, length=length, residual=res,
                     iterations=iters, status=status)


def find_closed_path(x, seq: ReflectionSequence, scene) -> OpticalPath:
    """Closed path for a single base point from the canonical starting guess."""
    return solve_paths(np.asarray(x, float)[None], seq, scene).path(0)


def validate_path(path: OpticalPath, scene) -> Status:
    surfaces = _surfaces(scene)
    res = np.array([path.residual])
    return Status(int(validate_paths(path.x[None], path.points[None], path.sequence.surfaces,
                                     surfaces, residual=res)[0]))


def find_closed_paths(x, seq: ReflectionSequence, scene, restarts: int = 8,
                      seed: int = 0, spread: float = 0.5) -> List[OpticalPath]:
    """All distinct valid minimisers reached from the canonical and perturbed starts.

    Perturbed starts displace every reflection point tangentially by a random
    amount of order ``spread`` times its distance from ``x``.
    """
    surfaces = _surfaces(scene)
    x = np.asarray(x, float)
    base = initial_points(x[None], seq.surfaces, surfaces)
    rng = np.random.default_rng(seed)
    starts = [base]
    for _ in range(restarts):
        y0 = base.copy()
        for i, s in enumerate(seq.surfaces):
            dist = np.linalg.norm(base[0, i] - x)
            e1, e2 = surfaces[s].tangent_basis(base[0, i])
            c = rng.normal(size=2) * spread * dist
            y0[0, i] = surfaces[s].retract(base[0, i], c[0] * e1 + c[1] * e2)
        starts.append(y0)
    y0 = np.concatenate(starts, axis=0)
    xs = np.repeat(x[None], len(starts), axis=0)
    batch = solve_paths(xs, seq, scene, y0=y0)
    found: List[OpticalPath] = []
    for i in range(len(batch)):
        if not batch.valid[i]:
            continue
        p = batch.path(i)
        scale = max(p.length, 1e-300)
        if all(np.max(np.abs(q.points - p.points)) > 1e-7 * scale for q in found):
            found.append(p)
    return found
