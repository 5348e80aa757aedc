"""
Population-coded visuosomatosensory signals s = [p; r; v].
"""
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from dfc2bp import geometry
from dfc2bp.dynamics import (
    LINK_BODIES,
    TORSO,
    ContactEvent,
    JointState,
    RobotParams,
    Trajectory,
    link_segments,
)
from dfc2bp.errors import ConfigurationError

PROPRIO = "proprio"
TACTILE = "tactile"
VISUAL = "visual"
MODALITIES = (PROPRIO, TACTILE, VISUAL)

VISUAL_KERNEL = np.array(
    [
        [0.0, 0.25, 0.0],
        [0.25, 1.0, 0.25],
        [0.0, 0.25, 0.0],
    ]
)


class SensorConfig(NamedTuple):
    neurons_per_joint: int = 8
    n_tactile: int = 60
    # Receptive field width of every tactile sensor, as a share of the total
    # body perimeter
    tactile_width_fraction: float = 0.02
    # Penetration depth, as a share of the thinnest link radius, at which the
    # touch modulation saturates
    force_saturation_fraction: float = 0.05
    visual_dims: Tuple[int, int] = (15, 15)
    # (x, y, width, height) of the visual field; derived from the arm reach
    # when left empty
    visual_extent: Optional[Tuple[float, float, float, float]] = None

    def validate(self):
        if self.neurons_per_joint < 2:
            raise ConfigurationError("sensors.neurons_per_joint must be at least 2")
        if self.n_tactile < 0:
            raise ConfigurationError("sensors.n_tactile must be non-negative")
        if min(self.visual_dims) < 1:
            raise ConfigurationError("sensors.visual_dims must be positive")
        if self.tactile_width_fraction <= 0 or self.force_saturation_fraction <= 0:
            raise ConfigurationError("sensors fractions must be positive")
        return self


class ProprioLayout(NamedTuple):
    # (n_joints, neurons_per_joint) receptive field centers
    centers: np.ndarray
    # (n_joints,) receptive field width of each joint's neurons
    width: np.ndarray

    @property
    def neurons_per_joint(self) -> int:
        return self.centers.shape[1]

    @property
    def size(self) -> int:
        return self.centers.size

    @classmethod
    def from_limits(cls, joint_limits, neurons_per_joint: int = 8) -> "ProprioLayout":
        centers = np.array(
            [np.linspace(low, high, neurons_per_joint) for low, high in joint_limits]
        )
        spacings = np.array(
            [(high - low) / (neurons_per_joint - 1) for low, high in joint_limits]
        )
        return cls(centers=centers, width=spacings / 2)


class TactileSensor(NamedTuple):
    body: str
    position: float
    width: float


class TactileLayout(NamedTuple):
    sensors: Tuple[TactileSensor, ...]
    perimeters: Dict[str, float]
    force_saturation: float
    seed: int

    @property
    def size(self) -> int:
        return len(self.sensors)


class VisualField(NamedTuple):
    origin: Tuple[float, float]
    extent: Tuple[float, float]
    dims: Tuple[int, int]
    kernel: np.ndarray = VISUAL_KERNEL

    @property
    def size(self) -> int:
        return self.dims[0] * self.dims[1]

    def pixel_boxes(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Lower and upper corners of every pixel, in row-major order with row 0
        at the top of the field.
        """
        n_x, n_y = self.dims
        width = self.extent[0] / n_x
        height = self.extent[1] / n_y
        rows, cols = np.meshgrid(np.arange(n_y), np.arange(n_x), indexing="ij")
        x0 = self.origin[0] + cols.ravel() * width
        y0 = self.origin[1] + (n_y - 1 - rows.ravel()) * height
        lower = np.stack([x0, y0], axis=1)
        return lower, lower + np.array([width, height])


class SensoryLayouts(NamedTuple):
    proprio: ProprioLayout
    tactile: TactileLayout
    visual: VisualField

    @property
    def n_signals(self) -> int:
        return self.proprio.size + self.tactile.size + self.visual.size


class SignalInfo(NamedTuple):
    modality: str
    body: str
    # 1-based number of the signal within its modality group
    local: int
    location: Tuple[float, ...]


class SensorFrame(NamedTuple):
    p: np.ndarray
    r: np.ndarray
    v: np.ndarray
    t: float

    @property
    def s(self) -> np.ndarray:
        return np.concatenate([self.p, self.r, self.v])


def body_perimeters(params: RobotParams) -> Dict[str, float]:
    """Sensor-bearing perimeter of every body: both long sides of a link."""
    perimeters = {TORSO: 2 * (params.torso_width + params.torso_height)}
    for body, length in zip(LINK_BODIES, params.link_lengths):
        perimeters[body] = 2 * length
    return perimeters


def place_tactile_sensors(
    params: RobotParams, config: SensorConfig, seed: int
) -> TactileLayout:
    perimeters = body_perimeters(params)
    bodies = list(perimeters)
    total = sum(perimeters.values())
    offsets = np.concatenate([[0.0], np.cumsum([perimeters[b] for b in bodies])])

    rng = np.random.default_rng(seed)
    positions = np.sort(rng.uniform(0.0, total, size=config.n_tactile))
    width = config.tactile_width_fraction * total

    sensors = []
    for position in positions:
        index = min(int(np.searchsorted(offsets, position, side="right")) - 1, len(bodies) - 1)
        body = bodies[index]
        local = min(position - offsets[index], perimeters[body])
        sensors.append(TactileSensor(body=body, position=float(local), width=width))

    saturation = (
        params.contact_stiffness
        * config.force_saturation_fraction
        * min(params.link_radii)
    )
    return TactileLayout(
        sensors=tuple(sensors),
        perimeters=perimeters,
        force_saturation=saturation,
        seed=seed,
    )


def default_visual_field(params: RobotParams, dims=(15, 15)) -> VisualField:
    """Square field centered on the torso, large enough for the full reach."""
    center = np.asarray(params.torso_center, dtype=float)
    shoulder_offset = float(np.linalg.norm(params.shoulder("right") - center))
    half = shoulder_offset + params.reach
    return VisualField(
        origin=(float(center[0] - half), float(center[1] - half)),
        extent=(2 * half, 2 * half),
        dims=tuple(dims),
    )


def build_layouts(params: RobotParams, config: SensorConfig, seed: int) -> SensoryLayouts:
    if config.visual_extent is not None:
        x, y, width, height = config.visual_extent
        visual = VisualField(origin=(x, y), extent=(width, height), dims=tuple(config.visual_dims))
    else:
        visual = default_visual_field(params, config.visual_dims)
    return SensoryLayouts(
        proprio=ProprioLayout.from_limits(params.joint_limits, config.neurons_per_joint),
        tactile=place_tactile_sensors(params, config, seed),
        visual=visual,
    )


def encode_proprioception(q, layout: ProprioLayout) -> np.ndarray:
    """
    Gaussian receptive field responses, joint after joint.

    Accepts a single configuration (6,) or a batch (..., 6).
    """
    q = np.asarray(q, dtype=float)
    distances = q[..., :, None] - layout.centers
    widths = np.asarray(layout.width, dtype=float)[:, None]
    activations = np.exp(-(distances**2) / (2 * widths**2))
    return activations.reshape(q.shape[:-1] + (layout.size,))


def surface_position(body: str, point, segments, params: RobotParams) -> float:
    """
    Arc-length coordinate of the surface point nearest to `point` on `body`.

    Links are parametrized out along their left side (seen from the joint)
    and back along the right side; the torso counter-clockwise from its lower
    left corner.
    """
    point = np.asarray(point, dtype=float)
    if body == TORSO:
        corners = params.torso.corners()
        offset = 0.0
        best_distance, best_position = np.inf, 0.0
        for index in range(4):
            start, end = corners[index], corners[(index + 1) % 4]
            along, nearest = geometry.project_point_to_segment(point, start, end)
            edge_length = float(np.linalg.norm(end - start))
            distance = float(np.linalg.norm(point - nearest))
            if distance < best_distance:
                best_distance = distance
                best_position = offset + along * edge_length
            offset += edge_length
        return best_position

    start, end = segments[LINK_BODIES.index(body)]
    length = float(np.linalg.norm(end - start))
    along, _ = geometry.project_point_to_segment(point, start, end)
    direction = end - start
    offset = point - start
    cross = direction[0] * offset[1] - direction[1] * offset[0]
    if cross >= 0:
        return along * length
    return 2 * length - along * length


def surface_point(body: str, position: float, segments, params: RobotParams) -> np.ndarray:
    """World point at arc-length `position` on `body`; inverse of surface_position."""
    if body == TORSO:
        corners = params.torso.corners()
        for index in range(4):
            start, end = corners[index], corners[(index + 1) % 4]
            edge_length = float(np.linalg.norm(end - start))
            if position <= edge_length or index == 3:
                return start + min(position / edge_length, 1.0) * (end - start)
            position -= edge_length

    link = LINK_BODIES.index(body)
    start, end = np.asarray(segments[link], dtype=float)
    length = float(np.linalg.norm(end - start))
    direction = (end - start) / length
    side = params.link_radii[link] * np.array([-direction[1], direction[0]])
    if position <= length:
        return start + position * direction + side
    return start + (2 * length - position) * direction - side


def arc_distance(a: float, b: float, perimeter: float) -> float:
    gap = abs(a - b) % perimeter
    return min(gap, perimeter - gap)


def encode_touch(
    contacts: List[ContactEvent],
    layout: TactileLayout,
    state: JointState,
    params: RobotParams,
) -> np.ndarray:
    """
    Tactile responses: a Gaussian of the surface distance to the nearest
    contact on the sensor's body, scaled by that contact's saturating force.
    """
    activations = np.zeros(layout.size)
    if not contacts:
        return activations

    segments = link_segments(state.q, params)
    touches: Dict[str, List[Tuple[float, float]]] = {}
    for contact in contacts:
        modulation = min(contact.force / layout.force_saturation, 1.0)
        for body in contact.pair:
            position = surface_position(body, contact.point, segments, params)
            touches.setdefault(body, []).append((position, modulation))

    for index, sensor in enumerate(layout.sensors):
        if sensor.body not in touches:
            continue
        perimeter = layout.perimeters[sensor.body]
        distance, modulation = min(
            (arc_distance(sensor.position, position, perimeter), modulation)
            for position, modulation in touches[sensor.body]
        )
        activations[index] = modulation * np.exp(-(distance**2) / (2 * sensor.width**2))
    return activations


def rasterize(segments, field: VisualField) -> np.ndarray:
    """
    Binary images of link centerlines: (..., n_y, n_x).

    :param segments: (..., n_links, 2, 2) link start and end points
    """
    segments = np.asarray(segments, dtype=float)
    lower, upper = field.pixel_boxes()
    hits = geometry.segments_intersect_boxes(
        segments[..., 0, :], segments[..., 1, :], lower, upper
    )
    image = hits.any(axis=-2).astype(float)
    n_x, n_y = field.dims
    return image.reshape(image.shape[:-1] + (n_y, n_x))


def convolve_visual(images: np.ndarray, kernel: np.ndarray = VISUAL_KERNEL) -> np.ndarray:
    """Zero-padded convolution of the last two axes with the kernel."""
    images = np.asarray(images, dtype=float)
    full_kernel = kernel.reshape((1,) * (images.ndim - 2) + kernel.shape)
    return ndimage.convolve(images, full_kernel, mode="constant", cval=0.0)


def render_visual(state: JointState, params: RobotParams, field: VisualField) -> np.ndarray:
    image = rasterize(link_segments(state.q, params), field)
    return np.minimum(convolve_visual(image, field.kernel), 1.0).ravel()


def signal_index(layouts: SensoryLayouts) -> List[SignalInfo]:
    signals = []
    proprio = layouts.proprio
    for joint in range(proprio.centers.shape[0]):
        for neuron in range(proprio.neurons_per_joint):
            signals.append(
                SignalInfo(
                    modality=PROPRIO,
                    body=f"joint_{joint + 1}",
                    local=neuron + 1,
                    location=(float(proprio.centers[joint, neuron]),),
                )
            )
    for number, sensor in enumerate(layouts.tactile.sensors):
        signals.append(
            SignalInfo(
                modality=TACTILE,
                body=sensor.body,
                local=number + 1,
                location=(sensor.position,),
            )
        )
    n_x, _ = layouts.visual.dims
    for pixel in range(layouts.visual.size):
        signals.append(
            SignalInfo(
                modality=VISUAL,
                body="visual_field",
                local=pixel + 1,
                location=(float(pixel // n_x), float(pixel % n_x)),
            )
        )
    return signals


def assemble_frame(p, r, v, t: float, layouts: Optional[SensoryLayouts] = None) -> SensorFrame:
    p, r, v = (np.asarray(component, dtype=float) for component in (p, r, v))
    if layouts is not None:
        expected = (layouts.proprio.size, layouts.tactile.size, layouts.visual.size)
        if (p.size, r.size, v.size) != expected:
            raise ConfigurationError(
                f"sensor frame components have lengths {(p.size, r.size, v.size)}, "
                f"the layouts expect {expected}"
            )
    return SensorFrame(p=p, r=r, v=v, t=t)


def encode_stream(
    trajectory: Trajectory,
    params: RobotParams,
    layouts: SensoryLayouts,
    chunk: int = 1000,
) -> np.ndarray:
    """Signal matrix (n_frames, N_s) of a whole trajectory."""
    n_frames = len(trajectory)
    proprio = encode_proprioception(trajectory.q, layouts.proprio)

    tactile = np.zeros((n_frames, layouts.tactile.size))
    for index, contacts in enumerate(trajectory.contacts):
        if contacts:
            tactile[index] = encode_touch(
                contacts, layouts.tactile, trajectory.state(index), params
            )

    visual = np.zeros((n_frames, layouts.visual.size))
    for start in range(0, n_frames, chunk):
        stop = min(start + chunk, n_frames)
        segments = np.array([link_segments(q, params) for q in trajectory.q[start:stop]])
        images = convolve_visual(rasterize(segments, layouts.visual), layouts.visual.kernel)
        visual[start:stop] = np.minimum(images, 1.0).reshape(stop - start, -1)

    return np.hstack([proprio, tactile, visual])


def signal_index_to_json(signals: Sequence[SignalInfo]) -> List[Dict[str, Any]]:
    return [
        {"index": index, **signal._asdict(), "location": list(signal.location)}
        for index, signal in enumerate(signals)
    ]


def signal_index_from_json(data: List[Dict[str, Any]]) -> List[SignalInfo]:
    return [
        SignalInfo(
            modality=item["modality"],
            body=item["body"],
            local=int(item["local"]),
            location=tuple(item["location"]),
        )
        for item in data
    ]
