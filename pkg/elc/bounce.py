"""Bounce-point prediction by minimum fitting loss over uncertain points.

The analysis window is split into a descending phase (before the bounce, image y growing)
and an ascending phase (after it). Points whose phase is unclear from local velocity are
marked uncertain, every admissible way of assigning them is tried, and the assignment
whose two least-squares quadratics fit best wins. The bounce is where those two curves meet.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from elc.errors import (
    AnalysisFailed,
    Degenerate,
    IdenticalCurves,
    NoFeasibleAssignment,
    NoIntersection,
    PhaseStarved,
    TooShort,
)
from elc.tracker import Trajectory

logger = logging.getLogger(__name__)

MIN_WINDOW = 7
MIN_PHASE_POINTS = 3
BRACKET_MARGIN = 2.0
FLAT_EPS = 1e-12
FRAME_SLACK = 0.10


class Phase(str, Enum):
    DESCENDING = "D"
    ASCENDING = "A"
    UNCERTAIN = "U"


class AbscissaMode(str, Enum):
    X = "X"
    T = "T"


class SearchMode(str, Enum):
    EXHAUSTIVE = "Exhaustive"
    MONOTONE_SPLIT = "MonotoneSplit"


Assignment = Tuple[Phase, ...]


class BounceConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    tau_v: float = Field(1.5, ge=0)
    w: int = Field(3, alias="W", ge=0)
    k_max: int = Field(10, alias="K_max", ge=0, le=20)
    mode: SearchMode = SearchMode.EXHAUSTIVE
    abscissa: Literal["auto", "X", "T"] = "auto"


# ---------------------------------------------------------------------------
# Least squares
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadraticFit:
    """y = a*u^2 + b*u + c, stored alongside the centred/scaled form it was solved in."""

    a: float
    b: float
    c: float
    sse: float
    n: int
    center: float = 0.0
    scale: float = 1.0
    local: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @classmethod
    def from_coeffs(cls, a: float, b: float, c: float) -> "QuadraticFit":
        return cls(a, b, c, sse=0.0, n=3, center=0.0, scale=1.0, local=(a, b, c))

    @property
    def coeffs(self) -> Tuple[float, float, float]:
        return self.a, self.b, self.c

    def __call__(self, u):
        v = (np.asarray(u, dtype=np.float64) - self.center) / self.scale
        al, be, ga = self.local
        return (al * v + be) * v + ga

    def about(self, u0: float) -> Tuple[float, float, float]:
        """Coefficients of the same curve as a polynomial in (u - u0)."""
        al = self.local[0] / self.scale ** 2
        be = self.local[1] / self.scale
        d = u0 - self.center
        return al, 2.0 * al * d + be, (al * d + be) * d + self.local[2]


def _fit(u: np.ndarray, y: np.ndarray) -> QuadraticFit:
    n = len(u)
    if n < 3 or len(np.unique(u)) < 3:
        raise Degenerate(f"Need at least 3 distinct abscissae, got {len(np.unique(u))} of {n}")
    center = float(u.mean())
    scale = float(np.max(np.abs(u - center)))
    v = (u - center) / scale
    basis = np.stack([v * v, v, np.ones_like(v)], axis=1)
    try:
        local = np.linalg.solve(basis.T @ basis, basis.T @ y)
    except np.linalg.LinAlgError as exc:
        raise Degenerate(f"Singular normal equations: {exc}") from exc
    if not np.all(np.isfinite(local)):
        raise Degenerate("Non-finite least-squares solution")

    resid = y - basis @ local
    al, be, ga = (float(c) for c in local)
    a = al / scale ** 2
    b = be / scale - 2.0 * a * center
    c = a * center ** 2 - be / scale * center + ga
    return QuadraticFit(a, b, c, float(resid @ resid), n, center, scale, (al, be, ga))


def fit_quadratic(points: Iterable[Tuple[float, float]]) -> QuadraticFit:
    arr = np.asarray(list(points), dtype=np.float64).reshape(-1, 2)
    return _fit(arr[:, 0], arr[:, 1])


# ---------------------------------------------------------------------------
# Phase labelling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseLabeling:
    frames: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    labels: Tuple[Phase, ...]
    abscissa_mode: AbscissaMode
    anchor: int

    @property
    def u(self) -> np.ndarray:
        return self.xs if self.abscissa_mode is AbscissaMode.X else self.frames

    @property
    def uncertain(self) -> List[int]:
        return [i for i, lab in enumerate(self.labels) if lab is Phase.UNCERTAIN]

    def count(self, phase: Phase) -> int:
        return sum(1 for lab in self.labels if lab is phase)

    def resolve(self, asg: Assignment) -> np.ndarray:
        """Boolean array, True where the point belongs to the descending phase."""
        unc = self.uncertain
        if len(asg) != len(unc):
            raise ValueError(f"Assignment has {len(asg)} entries for {len(unc)} uncertain points")
        desc = np.array([lab is Phase.DESCENDING for lab in self.labels])
        for i, phase in zip(unc, asg):
            desc[i] = phase is Phase.DESCENDING
        return desc


def _velocities(frames: np.ndarray, ys: np.ndarray) -> np.ndarray:
    v = np.empty_like(ys)
    v[:-1] = np.diff(ys) / np.diff(frames)
    v[-1] = v[-2]
    return v


def label_phases(window: Trajectory, tau_v: float = 1.5, W: int = 3, K_max: int = 10,
                 abscissa: str = "auto") -> PhaseLabeling:
    n = len(window)
    if n < MIN_WINDOW:
        raise TooShort(f"Analysis window has {n} points, need {MIN_WINDOW}")
    frames, xs, ys = window.frames, window.xs, window.ys
    v = _velocities(frames, ys)
    anchor = int(np.argmax(ys))
    fa = frames[anchor]

    labels = []
    for f, vy in zip(frames, v):
        if abs(f - fa) < W or abs(vy) <= tau_v:
            labels.append(Phase.UNCERTAIN)
        elif vy > tau_v and f < fa + W:
            labels.append(Phase.DESCENDING)
        elif vy < -tau_v and f > fa - W:
            labels.append(Phase.ASCENDING)
        else:
            labels.append(Phase.UNCERTAIN)

    unc = [i for i, lab in enumerate(labels) if lab is Phase.UNCERTAIN]
    if len(unc) > K_max:
        keep = set(sorted(unc, key=lambda i: (abs(frames[i] - fa), frames[i]))[:K_max])
        for i in unc:
            if i in keep:
                continue
            if v[i] > 0 or (v[i] == 0 and frames[i] < fa):
                labels[i] = Phase.DESCENDING
            else:
                labels[i] = Phase.ASCENDING

    n_d = labels.count(Phase.DESCENDING)
    n_a = labels.count(Phase.ASCENDING)
    n_u = labels.count(Phase.UNCERTAIN)
    if n_d + n_u < MIN_PHASE_POINTS or n_a + n_u < MIN_PHASE_POINTS:
        raise PhaseStarved(f"Phases too small: descending={n_d} ascending={n_a} uncertain={n_u}")

    if abscissa == "auto":
        span = float(xs.max() - xs.min())
        mode = AbscissaMode.X if span >= 1.5 * n else AbscissaMode.T
    else:
        mode = AbscissaMode(abscissa)

    logger.debug(f"Labelled window: D={n_d} A={n_a} U={n_u} anchor={anchor} abscissa={mode.value}")
    return PhaseLabeling(frames, xs, ys, tuple(labels), mode, anchor)


# ---------------------------------------------------------------------------
# Assignment search
# ---------------------------------------------------------------------------

def evaluate_assignment(labeling: PhaseLabeling, asg: Assignment) -> Tuple[QuadraticFit, QuadraticFit, float]:
    desc = labeling.resolve(asg)
    u, y = labeling.u, labeling.ys
    fit_d = _fit(u[desc], y[desc])
    fit_a = _fit(u[~desc], y[~desc])
    mse = (fit_d.sse + fit_a.sse) / (fit_d.n + fit_a.n)
    return fit_d, fit_a, mse


def assignment_bits(asg: Assignment) -> str:
    return "".join("1" if p is Phase.ASCENDING else "0" for p in asg)


def enumerate_assignments(k: int, mode: SearchMode) -> List[Assignment]:
    """Candidate assignments in enumeration order.

    Exhaustive: integer m = 0 .. 2^k - 1, bit j set means the j-th uncertain point (time order)
    is ascending. MonotoneSplit: the first s uncertain points descending, the rest ascending,
    s = 0 .. k.
    """
    D, A = Phase.DESCENDING, Phase.ASCENDING
    if mode is SearchMode.MONOTONE_SPLIT:
        return [tuple([D] * s + [A] * (k - s)) for s in range(k + 1)]
    return [tuple(A if (m >> j) & 1 else D for j in range(k)) for m in range(2 ** k)]


@dataclass(frozen=True)
class SearchResult:
    assignment: Assignment
    fit_d: QuadraticFit
    fit_a: QuadraticFit
    combined_mse: float


def search_min_mse(labeling: PhaseLabeling, mode: SearchMode = SearchMode.EXHAUSTIVE,
                   k_max: int = 10) -> SearchResult:
    unc = labeling.uncertain
    k = len(unc)
    if k > k_max:
        raise ValueError(f"{k} uncertain points exceed K_max={k_max}")
    n_d0 = labeling.count(Phase.DESCENDING)
    n_a0 = labeling.count(Phase.ASCENDING)

    best, best_key = None, None
    for order, asg in enumerate(enumerate_assignments(k, SearchMode(mode))):
        n_d = n_d0 + sum(1 for p in asg if p is Phase.DESCENDING)
        n_a = n_a0 + k - (n_d - n_d0)
        if n_d < MIN_PHASE_POINTS or n_a < MIN_PHASE_POINTS:
            continue
        try:
            fit_d, fit_a, mse = evaluate_assignment(labeling, asg)
        except Degenerate:
            continue
        key = (mse, abs(n_d - n_a), order)
        if best_key is None or key < best_key:
            best_key = key
            best = SearchResult(asg, fit_d, fit_a, mse)

    if best is None:
        raise NoFeasibleAssignment(f"No assignment of {k} uncertain points gives two fittable phases")
    return best


# ---------------------------------------------------------------------------
# Intersection
# ---------------------------------------------------------------------------

def intersect(fit_d: QuadraticFit, fit_a: QuadraticFit, bracket: Sequence[float]) -> Tuple[float, float]:
    lo, hi = sorted(float(b) for b in bracket)
    u0 = 0.5 * (lo + hi)
    ad, bd, cd = fit_d.about(u0)
    aa, ba, ca = fit_a.about(u0)
    qa, qb, qc = ad - aa, bd - ba, cd - ca

    if abs(qa) < FLAT_EPS:
        if abs(qb) < FLAT_EPS:
            if abs(qc) < FLAT_EPS:
                raise IdenticalCurves("Descending and ascending fits coincide")
            raise NoIntersection("Fits are parallel")
        roots = [-qc / qb]
    else:
        disc = qb * qb - 4.0 * qa * qc
        if disc < 0:
            raise NoIntersection("Fits have no real intersection")
        q = -0.5 * (qb + math.copysign(math.sqrt(disc), qb))
        roots = [q / qa, qc / q] if q != 0 else [0.0]

    inside = [w for w in roots if lo - u0 <= w <= hi - u0]
    if not inside:
        raise NoIntersection(f"No intersection in bracket [{lo:.3f}, {hi:.3f}]")
    w = min(inside, key=abs)
    u_star = u0 + w
    return u_star, float(fit_d(u_star))


def _bracket(labeling: PhaseLabeling, asg: Assignment) -> Tuple[float, float]:
    desc = labeling.resolve(asg)
    u = labeling.u
    last_d = u[np.nonzero(desc)[0][-1]]
    first_a = u[np.nonzero(~desc)[0][0]]
    lo, hi = sorted((float(last_d), float(first_a)))
    return lo - BRACKET_MARGIN, hi + BRACKET_MARGIN


def rise_after_anchor(labeling: PhaseLabeling) -> float:
    """How far the ball climbs (image y decreasing) after the lowest window point; 0 with nothing after it."""
    after = labeling.ys[labeling.anchor + 1:]
    if len(after) == 0:
        return 0.0
    return float(labeling.ys[labeling.anchor] - after.min())


def x_at_frame(frames: np.ndarray, xs: np.ndarray, frame: float) -> float:
    fc = frames - frames.mean()
    slope = float(fc @ (xs - xs.mean()) / (fc @ fc))
    return float(xs.mean() + slope * (frame - frames.mean()))


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BouncePrediction:
    x: float
    y: float
    u_star: float
    assignment: Assignment
    combined_mse: float
    confident: bool
    abscissa_mode: AbscissaMode
    search_mode: SearchMode
    fit_d: Optional[QuadraticFit] = None
    fit_a: Optional[QuadraticFit] = None
    reason: Optional[str] = None

    @property
    def point(self) -> Tuple[float, float]:
        return self.x, self.y

    def to_record(self) -> dict:
        record = {
            "x": self.x,
            "y": self.y,
            "u_star": self.u_star,
            "combined_mse": self.combined_mse,
            "confident": self.confident,
            "assignment_bits": assignment_bits(self.assignment),
            "mode": self.abscissa_mode.value,
            "search": self.search_mode.value,
        }
        if self.fit_d is not None and self.fit_a is not None:
            record["fit_descending"] = list(self.fit_d.coeffs)
            record["fit_ascending"] = list(self.fit_a.coeffs)
        if self.reason:
            record["fallback_reason"] = self.reason
        return record


def _inside_frame(x: float, y: float, frame_size: Optional[Tuple[int, int]]) -> bool:
    if frame_size is None:
        return True
    width, height = frame_size
    return (-FRAME_SLACK * width <= x <= (1 + FRAME_SLACK) * width
            and -FRAME_SLACK * height <= y <= (1 + FRAME_SLACK) * height)


def predict_bounce(window: Trajectory, cfg: Optional[BounceConfig] = None) -> BouncePrediction:
    cfg = cfg or BounceConfig()
    try:
        labeling = label_phases(window, cfg.tau_v, cfg.w, cfg.k_max, cfg.abscissa)
        result = search_min_mse(labeling, cfg.mode, cfg.k_max)
    except (TooShort, PhaseStarved, NoFeasibleAssignment, Degenerate) as exc:
        raise AnalysisFailed(f"{type(exc).__name__}: {exc}") from exc

    mode = labeling.abscissa_mode
    try:
        rise = rise_after_anchor(labeling)
        if rise <= cfg.tau_v:
            raise NoIntersection(f"Ball does not rise after the lowest point (rise {rise:.2f} px)")
        u_star, y_star = intersect(result.fit_d, result.fit_a, _bracket(labeling, result.assignment))
        x_star = u_star if mode is AbscissaMode.X else x_at_frame(labeling.frames, labeling.xs, u_star)
        if not _inside_frame(x_star, y_star, window.frame_size):
            raise NoIntersection(f"Intersection ({x_star:.1f}, {y_star:.1f}) lies outside the frame")
        confident, reason = True, None
    except (NoIntersection, IdenticalCurves) as exc:
        logger.warning(f"Falling back to the lowest window point: {exc}")
        a = labeling.anchor
        x_star, y_star = float(labeling.xs[a]), float(labeling.ys[a])
        u_star = float(labeling.u[a])
        confident, reason = False, f"{type(exc).__name__}: {exc}"

    logger.info(
        f"Bounce at ({x_star:.2f}, {y_star:.2f}) mse={result.combined_mse:.4f} "
        f"abscissa={mode.value} uncertain={len(result.assignment)} confident={confident}"
    )
    return BouncePrediction(
        x=float(x_star),
        y=float(y_star),
        u_star=float(u_star),
        assignment=result.assignment,
        combined_mse=float(result.combined_mse),
        confident=confident,
        abscissa_mode=mode,
        search_mode=SearchMode(cfg.mode),
        fit_d=result.fit_d,
        fit_a=result.fit_a,
        reason=reason,
    )
