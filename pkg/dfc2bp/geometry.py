"""
Planar geometry shared by the arm simulation and the sensory encoders.

Everything here works in the world frame of the planar agent: x to the right,
y up, the torso a fixed axis-aligned rectangle.
"""
from typing import NamedTuple, Tuple

import numpy as np

EPSILON = 1e-12


class Rectangle(NamedTuple):
    center: Tuple[float, float]
    width: float
    height: float

    @property
    def lower(self) -> np.ndarray:
        return np.array(
            [self.center[0] - self.width / 2, self.center[1] - self.height / 2]
        )

    @property
    def upper(self) -> np.ndarray:
        return np.array(
            [self.center[0] + self.width / 2, self.center[1] + self.height / 2]
        )

    def corners(self) -> np.ndarray:
        """Corners counter-clockwise starting from the lower left one."""
        (x0, y0), (x1, y1) = self.lower, self.upper
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    def contains(self, point: np.ndarray) -> bool:
        return bool(np.all(point >= self.lower) and np.all(point <= self.upper))


def project_point_to_segment(point, a, b) -> Tuple[float, np.ndarray]:
    """Return (t, closest point) with t in [0, 1] the position along [a, b]."""
    ab = b - a
    denominator = float(np.dot(ab, ab))
    if denominator < EPSILON:
        return 0.0, a
    t = float(np.dot(point - a, ab)) / denominator
    t = min(1.0, max(0.0, t))
    return t, a + t * ab


def closest_points_between_segments(p0, p1, q0, q1):
    """
    Closest points between the segments [p0, p1] and [q0, q1].

    The minimum over the unit square of segment parameters is either interior
    or on one of its four edges, so every candidate is evaluated and the
    nearest pair wins.

    :return: (point on first segment, point on second segment, distance)
    """
    u = p1 - p0
    v = q1 - q0
    w0 = p0 - q0

    a = float(np.dot(u, u))
    b = float(np.dot(u, v))
    c = float(np.dot(v, v))
    d = float(np.dot(u, w0))
    e = float(np.dot(v, w0))
    denominator = a * c - b * b

    candidates = []
    if denominator > EPSILON:
        s = (b * e - c * d) / denominator
        t = (a * e - b * d) / denominator
        if 0.0 <= s <= 1.0 and 0.0 <= t <= 1.0:
            candidates.append((p0 + s * u, q0 + t * v))

    candidates.append((project_point_to_segment(q0, p0, p1)[1], q0))
    candidates.append((project_point_to_segment(q1, p0, p1)[1], q1))
    candidates.append((p0, project_point_to_segment(p0, q0, q1)[1]))
    candidates.append((p1, project_point_to_segment(p1, q0, q1)[1]))

    best = None
    best_squared = np.inf
    for p_near, q_near in candidates:
        delta = p_near - q_near
        squared = float(np.dot(delta, delta))
        if squared < best_squared:
            best_squared = squared
            best = (p_near, q_near)

    return best[0], best[1], float(np.sqrt(best_squared))


def closest_points_segment_rectangle(a, b, rectangle: Rectangle):
    """
    Closest points between the segment [a, b] and a filled rectangle.

    A segment with an endpoint inside the rectangle, or crossing its boundary,
    is at distance zero.

    :return: (point on segment, point on rectangle, distance)
    """
    for endpoint in (a, b):
        if rectangle.contains(endpoint):
            return endpoint, endpoint, 0.0

    corners = rectangle.corners()
    best = None
    for index in range(4):
        p_near, q_near, distance = closest_points_between_segments(
            a, b, corners[index], corners[(index + 1) % 4]
        )
        if best is None or distance < best[2]:
            best = (p_near, q_near, distance)
    return best


def rectangle_outward_normal(rectangle: Rectangle, point) -> np.ndarray:
    """Outward normal of the rectangle edge closest to point."""
    lower, upper = rectangle.lower, rectangle.upper
    gaps = np.array(
        [point[0] - lower[0], upper[0] - point[0], point[1] - lower[1], upper[1] - point[1]]
    )
    normals = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])
    return normals[int(np.argmin(np.abs(gaps)))]


def segments_intersect_boxes(starts, ends, box_lower, box_upper) -> np.ndarray:
    """
    Liang-Barsky clipping test of many segments against many boxes.

    :param starts: (..., 2) segment start points
    :param ends: (..., 2) segment end points
    :param box_lower: (P, 2) lower corners of the boxes
    :param box_upper: (P, 2) upper corners of the boxes
    :return: boolean array (..., P), True where the segment touches the box
    """
    starts = np.asarray(starts, dtype=float)[..., None, :]
    delta = np.asarray(ends, dtype=float)[..., None, :] - starts

    t_enter = np.zeros(starts.shape[:-2] + (box_lower.shape[0],))
    t_exit = np.ones_like(t_enter)
    hit = np.ones(t_enter.shape, dtype=bool)

    for axis in range(2):
        direction = np.broadcast_to(delta[..., axis], t_enter.shape)
        origin = np.broadcast_to(starts[..., axis], t_enter.shape)
        low = box_lower[:, axis]
        high = box_upper[:, axis]

        parallel = np.abs(direction) < EPSILON
        hit &= ~(parallel & ((origin < low) | (origin > high)))

        with np.errstate(divide="ignore", invalid="ignore"):
            t_low = (low - origin) / direction
            t_high = (high - origin) / direction
        t_near = np.where(parallel, -np.inf, np.minimum(t_low, t_high))
        t_far = np.where(parallel, np.inf, np.maximum(t_low, t_high))
        t_enter = np.maximum(t_enter, t_near)
        t_exit = np.minimum(t_exit, t_far)

    return hit & (t_enter <= t_exit)


def chain_joint_positions(
    q, lengths, base, mirror: float = 1.0, base_angle: float = 0.0
) -> np.ndarray:
    """
    Joint positions of a planar serial chain.

    :param q: relative joint angles, one per link
    :param lengths: link lengths
    :param base: world position of the first joint
    :param mirror: -1.0 mirrors the chain about the vertical axis through base
    :param base_angle: absolute angle of the first link when q is zero
    :return: (n_links + 1, 2) points from the base joint to the chain tip
    """
    absolute = base_angle + np.cumsum(q)
    steps = np.stack(
        [mirror * np.asarray(lengths) * np.cos(absolute), np.asarray(lengths) * np.sin(absolute)],
        axis=-1,
    )
    return np.vstack([np.asarray(base, dtype=float), base + np.cumsum(steps, axis=0)])


def chain_point_jacobian(
    q, lengths, link: int, distance: float, mirror: float = 1.0, base_angle: float = 0.0
):
    """
    World-frame linear Jacobian (2 x n) of the point located `distance` along
    link `link` of a planar serial chain.
    """
    absolute = base_angle + np.cumsum(q)
    n_links = len(q)
    jacobian = np.zeros((2, n_links))
    for joint in range(link + 1):
        for segment in range(joint, link + 1):
            reach = lengths[segment] if segment < link else distance
            jacobian[0, joint] += -mirror * reach * np.sin(absolute[segment])
            jacobian[1, joint] += reach * np.cos(absolute[segment])
    return jacobian
