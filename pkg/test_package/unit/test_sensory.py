import numpy as np
import pytest

from dfc2bp import dynamics, sensory
from dfc2bp.dynamics import ContactEvent, JointState, RobotParams, Trajectory
from dfc2bp.errors import ConfigurationError
from dfc2bp.sensory import (
    PROPRIO,
    TACTILE,
    VISUAL,
    ProprioLayout,
    SensorConfig,
    TactileLayout,
    TactileSensor,
    VisualField,
)

PARAMS = RobotParams()
REST = JointState.at_rest()


def _torso_layout(position: float, width: float = 0.05) -> TactileLayout:
    return TactileLayout(
        sensors=(TactileSensor(body="torso", position=position, width=width),),
        perimeters=sensory.body_perimeters(PARAMS),
        force_saturation=1.0,
        seed=0,
    )


def _torso_contact(force: float) -> ContactEvent:
    # On the bottom edge of the torso, 0.15 m along its perimeter
    return ContactEvent(
        pair=("right_2", "torso"), point=(0.0, -0.25), depth=0.01, force=force, normal=(0.0, 1.0)
    )


def test_proprio_layout_spans_joint_limits():
    layout = ProprioLayout.from_limits(PARAMS.joint_limits, neurons_per_joint=8)
    assert layout.size == 48
    assert layout.centers[0, 0] == pytest.approx(-2.6)
    assert layout.centers[0, -1] == pytest.approx(2.6)
    assert layout.centers[2, -1] == pytest.approx(2.0)


def test_proprioception_peaks_at_center():
    layout = ProprioLayout.from_limits(PARAMS.joint_limits)
    q = layout.centers[:, 3].copy()
    activations = sensory.encode_proprioception(q, layout).reshape(6, 8)
    assert np.all(activations[:, 3] == 1.0)
    assert np.all(activations <= 1.0)
    assert np.all(activations > 0.0)


def test_proprioception_one_width_off_center():
    layout = ProprioLayout.from_limits(PARAMS.joint_limits)
    q = layout.centers[:, 2] + layout.width
    activations = sensory.encode_proprioception(q, layout).reshape(6, 8)
    assert activations[:, 2] == pytest.approx(np.exp(-0.5))


def test_proprioception_symmetric_between_centers():
    layout = ProprioLayout.from_limits(PARAMS.joint_limits)
    q = (layout.centers[:, 4] + layout.centers[:, 5]) / 2
    activations = sensory.encode_proprioception(q, layout).reshape(6, 8)
    assert activations[:, 4] == pytest.approx(activations[:, 5])


def test_proprioception_batches():
    layout = ProprioLayout.from_limits(PARAMS.joint_limits)
    batch = np.array([[0.1] * 6, [-0.3] * 6])
    encoded = sensory.encode_proprioception(batch, layout)
    assert encoded.shape == (2, 48)
    assert encoded[1] == pytest.approx(sensory.encode_proprioception(batch[1], layout))


def test_touch_without_contacts():
    layout = sensory.place_tactile_sensors(PARAMS, SensorConfig(), seed=0)
    assert np.all(sensory.encode_touch([], layout, REST, PARAMS) == 0.0)


def test_touch_at_sensor_with_saturated_force():
    activations = sensory.encode_touch([_torso_contact(5.0)], _torso_layout(0.15), REST, PARAMS)
    assert activations[0] == pytest.approx(1.0)


def test_touch_one_width_away_at_half_force():
    activations = sensory.encode_touch(
        [_torso_contact(0.5)], _torso_layout(0.15 + 0.05, width=0.05), REST, PARAMS
    )
    assert activations[0] == pytest.approx(0.5 * np.exp(-0.5))


def test_touch_on_other_body_is_ignored():
    layout = TactileLayout(
        sensors=(TactileSensor(body="left_3", position=0.1, width=0.05),),
        perimeters=sensory.body_perimeters(PARAMS),
        force_saturation=1.0,
        seed=0,
    )
    assert sensory.encode_touch([_torso_contact(5.0)], layout, REST, PARAMS)[0] == 0.0


def test_arc_distance_wraps_around_the_perimeter():
    assert sensory.arc_distance(0.1, 1.9, 2.0) == pytest.approx(0.2)
    assert sensory.arc_distance(0.5, 0.7, 2.0) == pytest.approx(0.2)


def test_tactile_placement_is_seeded():
    first = sensory.place_tactile_sensors(PARAMS, SensorConfig(), seed=1)
    second = sensory.place_tactile_sensors(PARAMS, SensorConfig(), seed=1)
    other = sensory.place_tactile_sensors(PARAMS, SensorConfig(), seed=2)

    assert first.sensors == second.sensors
    assert first.sensors != other.sensors
    assert first.size == 60
    for sensor in first.sensors:
        assert 0.0 <= sensor.position <= first.perimeters[sensor.body]


def test_single_pixel_convolution():
    image = np.zeros((5, 5))
    image[2, 2] = 1.0
    convolved = sensory.convolve_visual(image)
    assert convolved[2, 2] == 1.0
    assert [convolved[1, 2], convolved[3, 2], convolved[2, 1], convolved[2, 3]] == [0.25] * 4
    assert [convolved[1, 1], convolved[1, 3], convolved[3, 1], convolved[3, 3]] == [0.0] * 4
    assert convolved.sum() == pytest.approx(2.0)


def test_rasterize_vertical_segment():
    field = VisualField(origin=(0.0, 0.0), extent=(3.0, 3.0), dims=(3, 3))
    segments = np.array([[[1.5, 0.1], [1.5, 2.9]]])
    image = sensory.rasterize(segments, field)
    assert image.tolist() == [[0.0, 1.0, 0.0]] * 3


def test_render_visual_outside_field():
    field = VisualField(origin=(10.0, 10.0), extent=(1.0, 1.0), dims=(15, 15))
    assert np.all(sensory.render_visual(REST, PARAMS, field) == 0.0)


def test_render_visual_saturates():
    field = sensory.default_visual_field(PARAMS)
    visual = sensory.render_visual(REST, PARAMS, field)
    assert visual.shape == (225,)
    assert visual.max() == 1.0
    assert visual.min() >= 0.0


def test_default_layout_signal_count_and_order():
    layouts = sensory.build_layouts(PARAMS, SensorConfig(), seed=0)
    signals = sensory.signal_index(layouts)

    assert layouts.n_signals == 333
    assert len(signals) == 333
    assert signals[47][:3] == (PROPRIO, "joint_6", 8)
    assert signals[48].modality == TACTILE
    assert signals[48].local == 1
    assert signals[108].modality == VISUAL
    assert signals[108].location == (0.0, 0.0)
    assert signals[-1].location == (14.0, 14.0)


def test_signal_index_json():
    layouts = sensory.build_layouts(PARAMS, SensorConfig(n_tactile=4, visual_dims=(2, 2)), seed=0)
    signals = sensory.signal_index(layouts)
    data = sensory.signal_index_to_json(signals)
    assert data[0]["index"] == 0
    assert sensory.signal_index_from_json(data) == signals


def test_assemble_frame():
    layouts = sensory.build_layouts(PARAMS, SensorConfig(), seed=0)
    frame = sensory.assemble_frame(np.zeros(48), np.zeros(60), np.zeros(225), 0.0, layouts)
    assert frame.s.shape == (333,)
    assert np.all(frame.s == 0.0)

    with pytest.raises(ConfigurationError):
        sensory.assemble_frame(np.zeros(48), np.zeros(59), np.zeros(225), 0.0, layouts)


def test_encode_stream_matches_single_frames():
    config = SensorConfig(neurons_per_joint=4, n_tactile=5, visual_dims=(6, 6))
    layouts = sensory.build_layouts(PARAMS, config, seed=0)
    q = np.array([[0.0] * 6, [0.4, -0.2, 0.3, -0.5, 0.1, 0.6], [1.0, 0.5, -0.5, 0.2, 0.2, 0.2]])
    trajectory = Trajectory(t=np.array([0.0, 0.001, 0.002]), q=q, qd=np.zeros_like(q), contacts=[[], [], []])

    frames = sensory.encode_stream(trajectory, PARAMS, layouts, chunk=2)

    assert frames.shape == (3, layouts.n_signals)
    for index in range(3):
        state = trajectory.state(index)
        expected = np.concatenate(
            [
                sensory.encode_proprioception(state.q, layouts.proprio),
                np.zeros(5),
                sensory.render_visual(state, PARAMS, layouts.visual),
            ]
        )
        assert frames[index] == pytest.approx(expected)


def test_sensor_config_validation():
    with pytest.raises(ConfigurationError):
        SensorConfig(neurons_per_joint=1).validate()
    with pytest.raises(ConfigurationError):
        SensorConfig(visual_dims=(0, 3)).validate()


def test_rest_pose_lights_the_arms():
    field = sensory.default_visual_field(PARAMS)
    visual = sensory.render_visual(REST, PARAMS, field)

    assert visual.shape == (225,)
    assert 0 < np.count_nonzero(visual) < 225
    assert visual.max() == 1.0
    assert np.all((visual >= 0.0) & (visual <= 1.0))


def test_rasterize_many_frames_at_once():
    field = sensory.default_visual_field(PARAMS)
    poses = [REST.q, np.full(6, 0.4), np.array([0.3, -0.4, 0.2, 0.1, 0.5, -0.3])]
    segments = np.stack([sensory.link_segments(q, PARAMS) for q in poses])

    images = sensory.rasterize(segments, field)

    assert images.shape == (3, 15, 15)
    for frame, q in enumerate(poses):
        assert np.array_equal(images[frame], sensory.rasterize(sensory.link_segments(q, PARAMS), field))


def test_every_modality_stays_in_the_unit_interval():
    layouts = sensory.build_layouts(PARAMS, SensorConfig(), seed=0)
    rng = np.random.default_rng(13)
    touched = 0
    for _ in range(200):
        state = JointState(
            q=rng.uniform(PARAMS.lower_limits, PARAMS.upper_limits),
            qd=rng.normal(scale=3.0, size=6),
        )
        contacts = dynamics.detect_contacts(state, PARAMS)
        touched += bool(contacts)
        for activations in (
            sensory.encode_proprioception(state.q, layouts.proprio),
            sensory.encode_touch(contacts, layouts.tactile, state, PARAMS),
            sensory.render_visual(state, PARAMS, layouts.visual),
        ):
            assert np.all((activations >= 0.0) & (activations <= 1.0))
    assert touched > 0


def test_proprioception_is_lipschitz():
    layout = ProprioLayout.from_limits(PARAMS.joint_limits)
    bound = 1.0 / (np.repeat(layout.width, layout.neurons_per_joint) * np.sqrt(np.e))
    rng = np.random.default_rng(14)
    for _ in range(1000):
        q = rng.uniform(PARAMS.lower_limits, PARAMS.upper_limits)
        step = rng.uniform(-0.05, 0.05, size=6)
        change = np.abs(
            sensory.encode_proprioception(q + step, layout)
            - sensory.encode_proprioception(q, layout)
        )
        assert np.all(change <= bound * np.repeat(np.abs(step), layout.neurons_per_joint) + 1e-12)


@pytest.mark.parametrize("body", ["torso", "left_1", "right_2", "right_3"])
def test_surface_point_inverts_surface_position(body):
    segments = sensory.link_segments(np.array([0.3, -0.2, 0.5, 0.1, 0.4, -0.6]), PARAMS)
    perimeter = sensory.body_perimeters(PARAMS)[body]
    for fraction in (0.1, 0.3, 0.45, 0.6, 0.85):
        point = sensory.surface_point(body, fraction * perimeter, segments, PARAMS)
        assert sensory.surface_position(body, point, segments, PARAMS) == pytest.approx(
            fraction * perimeter
        )
