"""
Planar dual-arm agent: two independent 3-link chains on a fixed torso,
driven by antagonistic spring-damper muscles, with penalty self-contact.
"""
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from dfc2bp import geometry
from dfc2bp.geometry import Rectangle

N_JOINTS = 6
LINKS_PER_ARM = 3
ARMS = ("left", "right")
# Mirror factor of each arm about the torso's vertical axis
ARM_MIRROR = {"left": -1.0, "right": 1.0}
TORSO = "torso"
LINK_BODIES = tuple(
    f"{arm}_{link + 1}" for arm in ARMS for link in range(LINKS_PER_ARM)
)
BODIES = (TORSO,) + LINK_BODIES


class InvalidStateError(ValueError):
    pass


class SimulationDivergedError(RuntimeError):
    def __init__(self, step_index: int, max_velocity: float):
        super().__init__(
            f"simulation diverged at step {step_index}: "
            f"joint velocity {max_velocity:.4g} rad/s above the configured ceiling"
        )
        self.step_index = step_index


class MuscleGains(NamedTuple):
    """Torque gains of one joint. Damping follows the convention delta <= 0."""

    alpha: float = 3.0
    beta: float = -1.5
    gamma: float = 0.1
    delta: float = -0.25


class RobotParams(NamedTuple):
    link_lengths: Tuple[float, ...] = (0.30, 0.25, 0.20, 0.30, 0.25, 0.20)
    link_masses: Tuple[float, ...] = (1.0, 0.7, 0.4, 1.0, 0.7, 0.4)
    link_radii: Tuple[float, ...] = (0.04, 0.035, 0.03, 0.04, 0.035, 0.03)
    torso_radius: float = 0.01
    torso_center: Tuple[float, float] = (0.0, 0.0)
    torso_width: float = 0.3
    torso_height: float = 0.5
    # Height of both shoulder joints above the torso center
    shoulder_height: float = 0.2
    # Absolute angle of both upper arms at q = 0, from the outward horizontal;
    # the default raises the arms so positive angles fold them toward each other
    shoulder_angle: float = np.pi / 2
    muscle_gains: Tuple[MuscleGains, ...] = (MuscleGains(),) * N_JOINTS
    joint_limits: Tuple[Tuple[float, float], ...] = (
        (-2.6, 2.6),
        (-2.6, 2.6),
        (-2.0, 2.0),
    ) * 2
    contact_stiffness: float = 2000.0
    gravity: bool = False
    gravity_acceleration: float = 9.81
    velocity_ceiling: float = 100.0
    # Semi-implicit Euler sub-steps per frame
    substeps: int = 32

    def validate(self):
        for name in ("link_lengths", "link_masses", "link_radii", "joint_limits"):
            if len(getattr(self, name)) != N_JOINTS:
                raise ValueError(f"{name} needs {N_JOINTS} entries")
        if len(self.muscle_gains) != N_JOINTS:
            raise ValueError(f"muscle_gains needs {N_JOINTS} entries")
        positive = (
            list(self.link_lengths)
            + list(self.link_masses)
            + list(self.link_radii)
            + [self.torso_radius, self.torso_width, self.torso_height]
            + [self.contact_stiffness, self.velocity_ceiling]
        )
        if not all(value > 0 for value in positive):
            raise ValueError(
                "lengths, masses, radii, torso size, contact stiffness and "
                "velocity ceiling must be strictly positive"
            )
        for joint, gains in enumerate(self.muscle_gains):
            if gains.delta > 0:
                raise ValueError(
                    f"joint {joint + 1}: damping delta must be <= 0 "
                    "(the damping term is added, so it must oppose the velocity)"
                )
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")
        for joint, (low, high) in enumerate(self.joint_limits):
            if not low < high:
                raise ValueError(f"joint {joint + 1}: q_min must be below q_max")
        return self

    @property
    def torso(self) -> Rectangle:
        return Rectangle(tuple(self.torso_center), self.torso_width, self.torso_height)

    def shoulder(self, arm: str) -> np.ndarray:
        cx, cy = self.torso_center
        return np.array(
            [cx + ARM_MIRROR[arm] * self.torso_width / 2, cy + self.shoulder_height]
        )

    def arm_slice(self, arm: str) -> slice:
        start = ARMS.index(arm) * LINKS_PER_ARM
        return slice(start, start + LINKS_PER_ARM)

    def gains_array(self) -> np.ndarray:
        """(4, 6) array of alpha, beta, gamma, delta per joint."""
        return np.array([list(gains) for gains in self.muscle_gains]).T

    @property
    def lower_limits(self) -> np.ndarray:
        return np.array([low for low, _ in self.joint_limits])

    @property
    def upper_limits(self) -> np.ndarray:
        return np.array([high for _, high in self.joint_limits])

    @property
    def reach(self) -> float:
        return max(
            sum(self.link_lengths[self.arm_slice(arm)]) for arm in ARMS
        )


class JointState(NamedTuple):
    q: np.ndarray
    qd: np.ndarray
    t: float = 0.0

    @classmethod
    def at_rest(cls, q: Optional[Sequence[float]] = None, t: float = 0.0):
        q = np.zeros(N_JOINTS) if q is None else np.array(q, dtype=float)
        return cls(q=q, qd=np.zeros(N_JOINTS), t=t)

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.q))
            and np.all(np.isfinite(self.qd))
            and np.isfinite(self.t)
        )


class ContactEvent(NamedTuple):
    pair: Tuple[str, str]
    point: Tuple[float, float]
    depth: float
    force: float
    # Unit vector pushing the first body away from the second one
    normal: Tuple[float, float] = (0.0, 0.0)


class Trajectory(NamedTuple):
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    contacts: List[List[ContactEvent]]

    def __len__(self):
        return len(self.t)

    def state(self, index: int) -> JointState:
        return JointState(q=self.q[index], qd=self.qd[index], t=float(self.t[index]))


def body_arm_and_link(body: str) -> Tuple[str, int]:
    arm, link = body.rsplit("_", 1)
    return arm, int(link) - 1


def _contact_pairs() -> List[Tuple[str, str]]:
    pairs = []
    # Links of different arms
    for left in range(LINKS_PER_ARM):
        for right in range(LINKS_PER_ARM):
            pairs.append((f"left_{left + 1}", f"right_{right + 1}"))
    for arm in ARMS:
        # Non-adjacent links of the same arm
        pairs.append((f"{arm}_1", f"{arm}_3"))
        # The first link hangs off the torso, so it is adjacent to it
        for link in range(1, LINKS_PER_ARM):
            pairs.append((f"{arm}_{link + 1}", TORSO))
    return pairs


CONTACT_PAIRS = _contact_pairs()


def joint_torque(sigma_fx, sigma_ex, q, qd, gains) -> np.ndarray:
    """
    Antagonistic muscle torque:
    tau = alpha (s_fx - s_ex) + beta (s_fx + s_ex + gamma) q + delta qd

    Works element-wise, so it accepts either scalars with a single MuscleGains
    or per-joint arrays with a (4, n) gain array.
    """
    values = np.array([sigma_fx, sigma_ex, q, qd], dtype=float)
    if not np.all(np.isfinite(values)):
        raise InvalidStateError("joint torque requested for a non-finite input")
    alpha, beta, gamma, delta = (np.asarray(gain, dtype=float) for gain in gains)
    return (
        alpha * (values[0] - values[1])
        + beta * (values[0] + values[1] + gamma) * values[2]
        + delta * values[3]
    )


def link_segments(q, params: RobotParams) -> np.ndarray:
    """World-frame (start, end) of every link, ordered as LINK_BODIES: (6, 2, 2)."""
    segments = []
    for arm in ARMS:
        arm_slice = params.arm_slice(arm)
        points = geometry.chain_joint_positions(
            np.asarray(q)[arm_slice],
            params.link_lengths[arm_slice],
            params.shoulder(arm),
            mirror=ARM_MIRROR[arm],
            base_angle=params.shoulder_angle,
        )
        segments.extend(np.stack([points[:-1], points[1:]], axis=1))
    return np.array(segments)


def _reverse_cumsum(values, axis: int):
    return np.flip(np.cumsum(np.flip(values, axis=axis), axis=axis), axis=axis)


def chain_dynamics(q, qd, lengths, masses, gravity: float = 0.0, base_angle: float = 0.0):
    """
    Mass matrix and bias forces of planar chains of uniform rods.

    Each rod has its center of mass in the middle and m l^2 / 12 of rotational
    inertia about it. The equations of motion are M(q) qdd + h(q, qd) = tau.
    In absolute link angles theta = base_angle + cumsum(q) the chain obeys

        sum_m B_lm cos(theta_l - theta_m) theta_m'' + sum_m B_lm sin(theta_l - theta_m) theta_m'^2 = tau_theta_l

    with B_lm = sum_k m_k r_kl r_km + I_l [l = m], where r_kl is the lever of
    link l on the center of mass of link k. Leading axes of q and qd are
    batch axes; lengths and masses are shared by the whole batch.

    :return: (M, h) of shapes (..., n, n) and (..., n)
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    lengths = np.asarray(lengths, dtype=float)
    masses = np.asarray(masses, dtype=float)
    n_links = lengths.shape[0]

    # levers[k, l]: full length of the links before k, half length of k itself
    levers = np.tril(np.broadcast_to(lengths, (n_links, n_links)), k=-1) + np.diag(lengths / 2)
    inertia = masses * lengths**2 / 12
    coupling = levers.T @ (masses[:, None] * levers) + np.diag(inertia)

    absolute = base_angle + np.cumsum(q, axis=-1)
    absolute_rate = np.cumsum(qd, axis=-1)
    difference = absolute[..., :, None] - absolute[..., None, :]

    inertia_matrix = coupling * np.cos(difference)
    bias = np.sum(coupling * np.sin(difference) * absolute_rate[..., None, :] ** 2, axis=-1)
    if gravity:
        bias = bias + gravity * np.cos(absolute) * (masses @ levers)

    # Back to relative angles: theta = S q with S lower triangular ones
    mass_matrix = _reverse_cumsum(_reverse_cumsum(inertia_matrix, -1), -2)
    return mass_matrix, _reverse_cumsum(bias, -1)


def _arms_mass_and_bias(state: JointState, params: RobotParams):
    """Both arms at once: (2, 3, 3) mass matrices and (2, 3) bias forces."""
    shape = (len(ARMS), LINKS_PER_ARM)
    lengths = np.reshape(params.link_lengths, shape)
    masses = np.reshape(params.link_masses, shape)
    if np.array_equal(lengths[0], lengths[1]) and np.array_equal(masses[0], masses[1]):
        return chain_dynamics(
            np.reshape(state.q, shape),
            np.reshape(state.qd, shape),
            lengths[0],
            masses[0],
            gravity=params.gravity_acceleration if params.gravity else 0.0,
            base_angle=params.shoulder_angle,
        )
    parts = [_arm_mass_and_bias(state, params, arm) for arm in ARMS]
    return np.stack([part[0] for part in parts]), np.stack([part[1] for part in parts])


def _arm_mass_and_bias(state: JointState, params: RobotParams, arm: str):
    arm_slice = params.arm_slice(arm)
    return chain_dynamics(
        state.q[arm_slice],
        state.qd[arm_slice],
        params.link_lengths[arm_slice],
        params.link_masses[arm_slice],
        gravity=params.gravity_acceleration if params.gravity else 0.0,
        base_angle=params.shoulder_angle,
    )


def contact_torques(q, contacts: List[ContactEvent], params: RobotParams) -> np.ndarray:
    """Generalized joint torques produced by the penalty contact forces."""
    torques = np.zeros(N_JOINTS)
    segments = None
    for contact in contacts:
        if contact.force <= 0:
            continue
        if segments is None:
            segments = link_segments(q, params)
        force = contact.force * np.asarray(contact.normal)
        for body, sign in zip(contact.pair, (1.0, -1.0)):
            if body == TORSO:
                continue
            arm, link = body_arm_and_link(body)
            start, end = segments[LINK_BODIES.index(body)]
            along, _ = geometry.project_point_to_segment(
                np.asarray(contact.point), start, end
            )
            arm_slice = params.arm_slice(arm)
            lengths = params.link_lengths[arm_slice]
            jacobian = geometry.chain_point_jacobian(
                np.asarray(q)[arm_slice],
                lengths,
                link,
                along * lengths[link],
                mirror=ARM_MIRROR[arm],
                base_angle=params.shoulder_angle,
            )
            torques[arm_slice] += jacobian.T @ (sign * force)
    return torques


def _solve_accelerations(state: JointState, total_torques, params: RobotParams) -> np.ndarray:
    mass_matrices, bias = _arms_mass_and_bias(state, params)
    torques = np.reshape(total_torques, bias.shape)
    return np.linalg.solve(mass_matrices, (torques - bias)[..., None])[..., 0].ravel()


def forward_dynamics(
    state: JointState, torques, contacts: List[ContactEvent], params: RobotParams
) -> np.ndarray:
    """
    Joint accelerations of both arms. The arms share no joints, so each chain
    is solved on its own; contacts couple them only through the generalized
    contact torques.
    """
    torques = np.asarray(torques, dtype=float)
    if not np.all(np.isfinite(torques)) or not state.is_finite():
        raise InvalidStateError("forward dynamics requested for a non-finite state")
    total = torques + contact_torques(state.q, contacts, params)
    return _solve_accelerations(state, total, params)


def _link_link_contact(body_a, body_b, segment_a, segment_b, radius_a, radius_b, stiffness):
    p_near, q_near, distance = geometry.closest_points_between_segments(
        segment_a[0], segment_a[1], segment_b[0], segment_b[1]
    )
    depth = radius_a + radius_b - distance
    if depth <= 0:
        return None
    if distance > geometry.EPSILON:
        normal = (p_near - q_near) / distance
    else:
        direction = segment_b[1] - segment_b[0]
        normal = np.array([-direction[1], direction[0]])
        normal /= np.linalg.norm(normal)
        if np.dot(normal, segment_a.mean(axis=0) - q_near) < 0:
            normal = -normal
    point = (p_near + q_near) / 2 + normal * (radius_b - radius_a) / 2
    return ContactEvent(
        pair=(body_a, body_b),
        point=(float(point[0]), float(point[1])),
        depth=float(depth),
        force=float(stiffness * depth),
        normal=(float(normal[0]), float(normal[1])),
    )


def _link_torso_contact(body, segment, radius, params: RobotParams):
    torso = params.torso
    p_near, q_near, distance = geometry.closest_points_segment_rectangle(
        segment[0], segment[1], torso
    )
    depth = radius + params.torso_radius - distance
    if depth <= 0:
        return None
    if distance > geometry.EPSILON:
        normal = (p_near - q_near) / distance
    else:
        normal = geometry.rectangle_outward_normal(torso, p_near)
    point = (p_near + q_near) / 2 + normal * (params.torso_radius - radius) / 2
    return ContactEvent(
        pair=(body, TORSO),
        point=(float(point[0]), float(point[1])),
        depth=float(depth),
        force=float(params.contact_stiffness * depth),
        normal=(float(normal[0]), float(normal[1])),
    )


def detect_contacts(state: JointState, params: RobotParams) -> List[ContactEvent]:
    segments = link_segments(state.q, params)
    contacts = []
    for body_a, body_b in CONTACT_PAIRS:
        index_a = LINK_BODIES.index(body_a)
        if body_b == TORSO:
            contact = _link_torso_contact(
                body_a, segments[index_a], params.link_radii[index_a], params
            )
        else:
            index_b = LINK_BODIES.index(body_b)
            contact = _link_link_contact(
                body_a,
                body_b,
                segments[index_a],
                segments[index_b],
                params.link_radii[index_a],
                params.link_radii[index_b],
                params.contact_stiffness,
            )
        if contact is not None:
            contacts.append(contact)
    return contacts


def step(
    state: JointState,
    commands,
    params: RobotParams,
    dt: float = 0.001,
    contacts: Optional[List[ContactEvent]] = None,
) -> Tuple[JointState, List[ContactEvent]]:
    """
    Advance the agent by one frame of `params.substeps` semi-implicit Euler
    sub-steps, each updating the velocities first and the positions second.

    The muscle commands and the contact forces of `state` hold for the whole
    frame; muscle torques and joint limits are evaluated at every sub-step.

    :param commands: (6, 2) flexor/extensor activations per joint
    :param contacts: contacts of `state`, detected here when not given
    :return: the successor state and the contacts of its configuration
    """
    if dt <= 0:
        raise ValueError("the time step must be positive")
    commands = np.asarray(commands, dtype=float)
    if contacts is None:
        contacts = detect_contacts(state, params)
    if not state.is_finite():
        raise InvalidStateError("step requested from a non-finite state")

    gains = params.gains_array()
    external = contact_torques(state.q, contacts, params)
    lower, upper = params.lower_limits, params.upper_limits
    h = dt / params.substeps

    q, qd = state.q, state.qd
    for _ in range(params.substeps):
        torques = joint_torque(commands[:, 0], commands[:, 1], q, qd, gains)
        qd = qd + h * _solve_accelerations(JointState(q=q, qd=qd), torques + external, params)
        q = q + h * qd

        clamped = (q < lower) | (q > upper)
        q = np.clip(q, lower, upper)
        qd = np.where(clamped, 0.0, qd)

        max_velocity = float(np.max(np.abs(qd))) if np.all(np.isfinite(qd)) else np.inf
        if max_velocity > params.velocity_ceiling:
            raise SimulationDivergedError(int(round(state.t / dt)), max_velocity)

    successor = JointState(q=q, qd=qd, t=state.t + dt)
    return successor, detect_contacts(successor, params)


def kinetic_energy(state: JointState, params: RobotParams) -> float:
    mass_matrices, _ = _arms_mass_and_bias(state, params)
    velocities = np.reshape(state.qd, (len(ARMS), LINKS_PER_ARM))
    return float(0.5 * np.einsum("ai,aij,aj->", velocities, mass_matrices, velocities))


def mechanical_energy(state: JointState, params: RobotParams) -> float:
    """
    Kinetic energy plus the potential of the unactivated muscles (the tonic
    stiffness spring beta * gamma * q) and of gravity when it is enabled.
    """
    _, beta, gamma, _ = params.gains_array()
    energy = kinetic_energy(state, params) - 0.5 * float(
        np.sum(beta * gamma * state.q**2)
    )
    if params.gravity:
        for arm in ARMS:
            arm_slice = params.arm_slice(arm)
            lengths = params.link_lengths[arm_slice]
            points = geometry.chain_joint_positions(
                state.q[arm_slice],
                lengths,
                params.shoulder(arm),
                ARM_MIRROR[arm],
                base_angle=params.shoulder_angle,
            )
            centers = (points[:-1, 1] + points[1:, 1]) / 2
            energy += params.gravity_acceleration * float(
                np.dot(params.link_masses[arm_slice], centers)
            )
    return energy


def simulate(
    params: RobotParams,
    command_fn: Callable[[float], np.ndarray],
    duration: float = 30.0,
    dt: float = 0.001,
    initial_q: Optional[Sequence[float]] = None,
    on_progress: Optional[Callable[[int, int], None]] = None,
) -> Trajectory:
    """
    Run the agent for `duration` seconds, recording every frame.

    Frame n holds the state at t = n dt together with its contacts; the
    commands applied between frames n and n + 1 are `command_fn(t_n)`.
    """
    n_frames = int(round(duration / dt))
    state = JointState.at_rest(initial_q)
    contacts = detect_contacts(state, params)

    times = np.zeros(n_frames)
    positions = np.zeros((n_frames, N_JOINTS))
    velocities = np.zeros((n_frames, N_JOINTS))
    frame_contacts: List[List[ContactEvent]] = []
    for index in range(n_frames):
        times[index] = state.t
        positions[index] = state.q
        velocities[index] = state.qd
        frame_contacts.append(contacts)
        if index + 1 < n_frames:
            state, contacts = step(
                state, command_fn(state.t), params, dt=dt, contacts=contacts
            )
        if on_progress is not None:
            on_progress(index + 1, n_frames)

    return Trajectory(t=times, q=positions, qd=velocities, contacts=frame_contacts)
