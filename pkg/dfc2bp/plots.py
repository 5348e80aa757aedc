"""
Static SVG figures of a finished run.

Every figure is built from SvgTag nodes with sorted attributes and fixed
number formatting, so the same run directory always renders the same bytes.
"""
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from dfc2bp import artifacts, behavior, dynamics, imi, irm, nnmf, sensory
from dfc2bp.config import RunConfig
from dfc2bp.dynamics import RobotParams

PLOT_KINDS = ("modules", "linkdensity", "factors", "scores", "decomposition", "residual")

PALETTES = {
    sensory.PROPRIO: ["#1b5e20", "#2e7d32", "#43a047", "#66bb6a", "#81c784", "#a5d6a7"],
    sensory.TACTILE: ["#b71c1c", "#c62828", "#e53935", "#ef5350", "#e57373", "#ef9a9a"],
    sensory.VISUAL: ["#0d47a1", "#1565c0", "#1e88e5", "#42a5f5", "#64b5f6", "#90caf9"],
}
EPISODE_FILL = "#fff3e0"
MAX_COLUMNS = 300


def _number(value) -> str:
    text = f"{float(value):.2f}".rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


class SvgTag(object):
    def __init__(self, name, text="", attrib=None):
        self.name = name
        self.text = text
        if attrib is None:
            attrib = {}
        self.attrib = attrib
        self.children = []

    def render(self):
        attributes = " ".join(
            '{}="{}"'.format(name, _number(value) if isinstance(value, (int, float, np.number)) else escape(str(value), {'"': "&quot;"}))
            for name, value in sorted(self.attrib.items())
        )
        content = "<{}{}>{}{}</{}>".format(
            self.name,
            f" {attributes}" if attributes else "",
            "".join([child.render() for child in self.children]),
            escape(self.text),
            self.name,
        )
        return "{}\n".format(content)

    def append(self, child):
        self.children.append(child)
        return child

    def extend(self, children):
        for child in children:
            self.append(child)


def svg_document(width: float, height: float, title: str) -> SvgTag:
    root = SvgTag(
        "svg",
        attrib={
            "xmlns": "http://www.w3.org/2000/svg",
            "width": width,
            "height": height,
            "viewBox": f"0 0 {_number(width)} {_number(height)}",
            "font-family": "sans-serif",
            "font-size": 11,
        },
    )
    root.append(SvgTag("rect", attrib={"x": 0, "y": 0, "width": width, "height": height, "fill": "white"}))
    root.append(SvgTag("text", title, {"x": width / 2, "y": 18, "text-anchor": "middle", "font-size": 14}))
    return root


def _line(x1, y1, x2, y2, stroke="black", width=1.0, **extra) -> SvgTag:
    return SvgTag(
        "line",
        attrib={"x1": x1, "y1": y1, "x2": x2, "y2": y2, "stroke": stroke, "stroke-width": width, **extra},
    )


def _rect(x, y, width, height, fill, **extra) -> SvgTag:
    return SvgTag("rect", attrib={"x": x, "y": y, "width": width, "height": height, "fill": fill, **extra})


def _text(x, y, text, anchor="start", **extra) -> SvgTag:
    return SvgTag("text", str(text), {"x": x, "y": y, "text-anchor": anchor, **extra})


class Axes(object):
    """A plotting area mapping data coordinates to pixels."""

    def __init__(self, x, y, width, height, x_range, y_range):
        self.x, self.y, self.width, self.height = x, y, width, height
        self.x_range = x_range if x_range[1] > x_range[0] else (x_range[0], x_range[0] + 1)
        self.y_range = y_range if y_range[1] > y_range[0] else (y_range[0], y_range[0] + 1)

    def px(self, value) -> float:
        low, high = self.x_range
        return self.x + (float(value) - low) / (high - low) * self.width

    def py(self, value) -> float:
        low, high = self.y_range
        return self.y + self.height - (float(value) - low) / (high - low) * self.height

    def frame(self, x_label: str = "", y_label: str = "") -> List[SvgTag]:
        bottom = self.y + self.height
        tags = [
            _line(self.x, bottom, self.x + self.width, bottom),
            _line(self.x, self.y, self.x, bottom),
        ]
        for fraction in (0.0, 0.5, 1.0):
            x_value = self.x_range[0] + fraction * (self.x_range[1] - self.x_range[0])
            y_value = self.y_range[0] + fraction * (self.y_range[1] - self.y_range[0])
            tags.append(_text(self.px(x_value), bottom + 14, _number(x_value), "middle"))
            tags.append(_text(self.x - 4, self.py(y_value) + 4, _number(y_value), "end"))
        if x_label:
            tags.append(_text(self.x + self.width / 2, bottom + 30, x_label, "middle"))
        if y_label:
            tags.append(
                _text(
                    self.x - 36,
                    self.y + self.height / 2,
                    y_label,
                    "middle",
                    transform=f"rotate(-90 {_number(self.x - 36)} {_number(self.y + self.height / 2)})",
                )
            )
        return tags


def module_colors(modules: Sequence[behavior.ModuleModality]) -> List[str]:
    """Shades of the majority modality's palette, in cluster order."""
    seen: Dict[str, int] = {}
    colors = []
    for module in modules:
        rank = seen.get(module.modality, 0)
        seen[module.modality] = rank + 1
        palette = PALETTES[module.modality]
        colors.append(palette[rank % len(palette)])
    return colors


def factor_colors(factors: Sequence[behavior.FactorModality]) -> List[str]:
    seen: Dict[str, int] = {}
    colors = []
    for factor in factors:
        rank = seen.get(factor.dominant, 0)
        seen[factor.dominant] = rank + 1
        palette = PALETTES[factor.dominant]
        colors.append(palette[rank % len(palette)])
    return colors


def _column_bins(n_columns: int, max_columns: int = MAX_COLUMNS) -> List[np.ndarray]:
    if n_columns == 0:
        return []
    n_bins = min(n_columns, max_columns)
    return [chunk for chunk in np.array_split(np.arange(n_columns), n_bins) if chunk.size]


def _body_view(
    signals: Sequence[sensory.SignalInfo],
    assignment,
    colors: Sequence[str],
    params: RobotParams,
    field: sensory.VisualField,
) -> List[SvgTag]:
    """Receptive fields of every signal drawn on the body at its rest pose."""
    (x0, y0), (width, height) = field.origin, field.extent
    side = 400 * min(1.0, width / height), 400 * min(1.0, height / width)
    axes = Axes(20, 40, side[0], side[1], (x0, x0 + width), (y0, y0 + height))
    pixel_width = axes.width / field.dims[0]
    pixel_height = axes.height / field.dims[1]
    segments = dynamics.link_segments(np.zeros(dynamics.N_JOINTS), params)

    tags = [_text(20, 32, "receptive fields at the rest pose")]
    lower, _ = field.pixel_boxes()
    tactile = []
    for index, signal in enumerate(signals):
        color = colors[assignment[index]]
        if signal.modality == sensory.VISUAL:
            row, col = (int(value) for value in signal.location)
            x, y = lower[row * field.dims[0] + col]
            tags.append(
                _rect(axes.px(x), axes.py(y) - pixel_height, pixel_width, pixel_height, color, opacity=0.35)
            )
        elif signal.modality == sensory.TACTILE:
            tactile.append((index, signal))

    torso_lower = params.torso.lower
    tags.append(
        _rect(
            axes.px(torso_lower[0]),
            axes.py(torso_lower[1] + params.torso_height),
            params.torso_width / width * axes.width,
            params.torso_height / height * axes.height,
            "none",
            stroke="#424242",
        )
    )
    for start, end in segments:
        tags.append(_line(axes.px(start[0]), axes.py(start[1]), axes.px(end[0]), axes.py(end[1]), "#424242", 3.0))

    for index, signal in enumerate(signals):
        if signal.modality != sensory.PROPRIO:
            continue
        link = int(signal.body.split("_")[1]) - 1
        arm = dynamics.LINK_BODIES[link].split("_")[0]
        joint = segments[link][0]
        angle = params.shoulder_angle + signal.location[0]
        x = joint[0] + 0.06 * dynamics.ARM_MIRROR[arm] * math.cos(angle)
        y = joint[1] + 0.06 * math.sin(angle)
        tags.append(SvgTag("circle", attrib={"cx": axes.px(x), "cy": axes.py(y), "r": 3, "fill": colors[assignment[index]]}))

    for index, signal in tactile:
        x, y = sensory.surface_point(signal.body, signal.location[0], segments, params)
        tags.append(SvgTag("circle", attrib={"cx": axes.px(x), "cy": axes.py(y), "r": 4, "fill": colors[assignment[index]]}))
    return tags


def plot_modules(
    signals: Sequence[sensory.SignalInfo],
    assignment,
    modules,
    params: RobotParams,
    field: sensory.VisualField,
) -> str:
    colors = module_colors(modules)
    root = svg_document(1160, 460, f"Functional modules ({len(modules)})")
    root.extend(_body_view(signals, assignment, colors, params, field))

    proprio = [index for index, signal in enumerate(signals) if signal.modality == sensory.PROPRIO]
    tactile = [index for index, signal in enumerate(signals) if signal.modality == sensory.TACTILE]
    visual = [index for index, signal in enumerate(signals) if signal.modality == sensory.VISUAL]

    left = 440
    root.append(_text(left + 20, 48, "proprioception (joint x neuron)"))
    joints = sorted({signals[index].body for index in proprio})
    for index in proprio:
        row = joints.index(signals[index].body)
        root.append(_rect(left + 20 + 14 * (signals[index].local - 1), 56 + 14 * row, 12, 12, colors[assignment[index]]))

    root.append(_text(left + 20, 160, "touch (sensor order along each body)"))
    for position, index in enumerate(tactile):
        root.append(_rect(left + 20 + 6 * (position % 60), 168 + 14 * (position // 60), 5, 12, colors[assignment[index]]))
        if position == 0 or signals[tactile[position - 1]].body != signals[index].body:
            root.append(_text(left + 20 + 6 * (position % 60), 196 + 14 * (position // 60), signals[index].body, **{"font-size": 8}))

    root.append(_text(left + 420, 48, "vision (pixel grid)"))
    for index in visual:
        row, col = signals[index].location
        root.append(_rect(left + 420 + 16 * col, 56 + 16 * row, 15, 15, colors[assignment[index]]))

    for cluster, module in enumerate(modules):
        y = 240 + 14 * (cluster % 12)
        x = left + 20 + 130 * (cluster // 12)
        root.append(_rect(x, y - 9, 10, 10, colors[cluster]))
        root.append(_text(x + 14, y, f"m{cluster + 1} {module.modality} {module.purity:.2f}"))
    return root.render()


def plot_link_density(vectorized: nnmf.VectorizedSeries) -> str:
    root = svg_document(760, 420, "Inter-module link densities")
    axes = Axes(60, 40, 660, 320, (0, vectorized.n_windows), (0, vectorized.n_pairs))
    bins = _column_bins(vectorized.n_windows)
    if bins and vectorized.n_pairs:
        cell_width = axes.width / len(bins)
        cell_height = axes.height / vectorized.n_pairs
        for column, chunk in enumerate(bins):
            values = vectorized.Hbar[:, chunk].mean(axis=1)
            for row, value in enumerate(values):
                shade = int(round(255 * (1 - min(max(value, 0.0), 1.0))))
                root.append(
                    _rect(
                        axes.x + column * cell_width,
                        axes.y + row * cell_height,
                        cell_width,
                        cell_height,
                        f"#{shade:02x}{shade:02x}{shade:02x}",
                    )
                )
    root.extend(axes.frame("window", "module pair"))
    return root.render()


def plot_factors(
    model: nnmf.FactorModel,
    pair_index: np.ndarray,
    modules: Sequence[behavior.ModuleModality],
    top: int = 6,
) -> str:
    colors = module_colors(modules)
    n_shown = min(top, model.n_factors)
    columns = 3
    rows = max(1, math.ceil(n_shown / columns))
    root = svg_document(240 * columns, 40 + 240 * rows, "Factors as module graphs")
    n_clusters = len(modules)
    angles = [2 * math.pi * cluster / max(n_clusters, 1) for cluster in range(n_clusters)]
    for factor in range(n_shown):
        cx = 120 + 240 * (factor % columns)
        cy = 150 + 240 * (factor // columns)
        root.append(_text(cx, cy - 100, f"f{factor + 1}", "middle", **{"font-size": 13}))
        weights = model.F[factor]
        peak = weights.max() if weights.size else 0.0
        for row in np.flatnonzero(weights > 1e-3):
            c, d = pair_index[row]
            root.append(
                _line(
                    cx + 80 * math.cos(angles[c]),
                    cy + 80 * math.sin(angles[c]),
                    cx + 80 * math.cos(angles[d]),
                    cy + 80 * math.sin(angles[d]),
                    stroke="#555555",
                    width=0.3 + 5.0 * weights[row] / peak,
                )
            )
        for cluster in range(n_clusters):
            root.append(
                SvgTag(
                    "circle",
                    attrib={
                        "cx": cx + 80 * math.cos(angles[cluster]),
                        "cy": cy + 80 * math.sin(angles[cluster]),
                        "r": 6,
                        "fill": colors[cluster],
                    },
                )
            )
    return root.render()


def plot_scores(
    W: np.ndarray,
    window_times: np.ndarray,
    episodes: Sequence[behavior.TouchEpisode],
    colors: Sequence[str],
) -> str:
    root = svg_document(860, 480, "Factor scores")
    n_windows = W.shape[0]
    times = np.asarray(window_times, dtype=float)
    x_range = (float(times[0]), float(times[-1])) if n_windows else (0.0, 1.0)
    bins = _column_bins(n_windows)
    binned = np.array([W[chunk].mean(axis=0) for chunk in bins]) if bins else np.zeros((0, W.shape[1]))
    binned_times = np.array([times[chunk].mean() for chunk in bins]) if bins else np.zeros(0)
    stacked = np.cumsum(binned, axis=1) if binned.size else binned
    top = float(stacked[:, -1].max()) if stacked.size else 1.0
    axes = Axes(60, 40, 760, 280, x_range, (0.0, top))

    for episode in episodes:
        start = axes.px(min(max(episode.start_time, x_range[0]), x_range[1]))
        end = axes.px(min(max(episode.end_time, x_range[0]), x_range[1]))
        root.append(_rect(start, axes.y, max(end - start, 1.0), axes.height, EPISODE_FILL))

    for factor in range(stacked.shape[1] if stacked.size else 0):
        upper = stacked[:, factor]
        lower = stacked[:, factor - 1] if factor else np.zeros_like(upper)
        points = [(axes.px(t), axes.py(v)) for t, v in zip(binned_times, upper)]
        points += [(axes.px(t), axes.py(v)) for t, v in zip(binned_times[::-1], lower[::-1])]
        root.append(
            SvgTag(
                "polygon",
                attrib={
                    "points": " ".join(f"{_number(x)},{_number(y)}" for x, y in points),
                    "fill": colors[factor % len(colors)],
                    "fill-opacity": 0.85,
                },
            )
        )
    root.extend(axes.frame("time [s]", "score"))

    leading = Axes(60, 360, 760, 80, x_range, (0.0, max(W.shape[1], 1)))
    if n_windows:
        trace = np.argmax(W, axis=1)
        for chunk in bins:
            factor = int(np.bincount(trace[chunk]).argmax())
            root.append(
                _rect(
                    leading.px(times[chunk[0]]),
                    leading.py(factor + 1),
                    max(leading.px(times[chunk[-1]]) - leading.px(times[chunk[0]]), 1.0),
                    leading.height / max(W.shape[1], 1),
                    colors[factor % len(colors)],
                )
            )
    root.extend(leading.frame("", "leading"))
    return root.render()


def plot_decomposition(model: nnmf.FactorModel, window: int, colors: Sequence[str]) -> str:
    contributions = nnmf.decompose(model, window)
    root = svg_document(760, 360, f"Factor contributions at window {window}")
    peak = max((score for _, score in contributions), default=0.0)
    axes = Axes(60, 40, 660, 260, (0, max(len(contributions), 1)), (0.0, peak))
    bar_width = axes.width / max(len(contributions), 1)
    for position, (factor, score) in enumerate(contributions):
        root.append(
            _rect(
                axes.x + position * bar_width + 1,
                axes.py(score),
                max(bar_width - 2, 1.0),
                axes.y + axes.height - axes.py(score),
                colors[factor % len(colors)],
            )
        )
        root.append(_text(axes.x + (position + 0.5) * bar_width, axes.y + axes.height + 26, f"f{factor + 1}", "middle", **{"font-size": 8}))
    root.extend(axes.frame("", "score"))
    return root.render()


def plot_residual(rank_curve: Optional[Dict[str, List[float]]]) -> str:
    root = svg_document(560, 360, "Residual against rank")
    ranks = list(rank_curve["ranks"]) if rank_curve else []
    residuals = list(rank_curve["residuals"]) if rank_curve else []
    axes = Axes(
        60,
        40,
        460,
        260,
        (min(ranks), max(ranks)) if ranks else (0, 1),
        (0.0, max(residuals)) if residuals else (0.0, 1.0),
    )
    if ranks:
        root.append(
            SvgTag(
                "polyline",
                attrib={
                    "points": " ".join(f"{_number(axes.px(r))},{_number(axes.py(d))}" for r, d in zip(ranks, residuals)),
                    "fill": "none",
                    "stroke": "#0d47a1",
                    "stroke-width": 1.5,
                },
            )
        )
        for rank, value in zip(ranks, residuals):
            root.append(SvgTag("circle", attrib={"cx": axes.px(rank), "cy": axes.py(value), "r": 3, "fill": "#0d47a1"}))
    root.extend(axes.frame("rank", "D"))
    return root.render()


class RunArtifacts(object):
    """Lazily loaded artifacts of a run directory."""

    def __init__(self, run_dir: Path, config: RunConfig):
        self.run_dir = Path(run_dir)
        self.config = config

    def signals(self):
        return sensory.signal_index_from_json(
            artifacts.read_json(artifacts.require(self.run_dir, artifacts.SENSOR_INDEX))
        )

    def partition(self) -> irm.Partition:
        return irm.Partition.from_assignment(artifacts.read_partition(self.run_dir))

    def modules(self):
        return behavior.module_modalities(self.partition(), self.signals())

    def model(self) -> nnmf.FactorModel:
        F = artifacts.read_tensor(artifacts.require(self.run_dir, artifacts.FACTORS))
        W = artifacts.read_tensor(artifacts.require(self.run_dir, artifacts.SCORES))
        return nnmf.FactorModel(F=F, W=W, residual=float("nan"), energies=(W**2).sum(axis=0))

    def visual_field(self) -> sensory.VisualField:
        return sensory.build_layouts(
            self.config.sim.robot, self.config.sensors, self.config.stage_seed("tactile")
        ).visual

    def pair_index(self, n_clusters: int) -> np.ndarray:
        return np.stack(np.triu_indices(n_clusters, k=1), axis=1)

    def factor_colors(self, model: nnmf.FactorModel) -> List[str]:
        modules = self.modules()
        factors = behavior.factor_modalities(model, self.pair_index(len(modules)), modules)
        return factor_colors(factors) or [PALETTES[sensory.VISUAL][0]]


def render(kind: str, run: RunArtifacts, window: Optional[int] = None) -> str:
    if kind == "modules":
        partition = run.partition()
        return plot_modules(
            run.signals(), partition.assignment, run.modules(), run.config.sim.robot, run.visual_field()
        )
    if kind == "linkdensity":
        return plot_link_density(
            nnmf.vectorize_upper(artifacts.read_tensor(artifacts.require(run.run_dir, artifacts.LINK_DENSITY)))
        )
    if kind == "factors":
        modules = run.modules()
        return plot_factors(run.model(), run.pair_index(len(modules)), modules)
    if kind == "scores":
        model = run.model()
        trajectory = artifacts.read_trajectory(run.run_dir)
        spec = run.config.imi.window
        _, analysis_times = imi.downsample(trajectory.t, trajectory.t, run.config.sim.rate, spec)
        ends = np.arange(model.W.shape[0]) * spec.step + spec.window_len - 1
        window_times = analysis_times[ends] if model.W.shape[0] else np.zeros(0)
        episodes = behavior.touch_episodes(trajectory.contacts, trajectory.t)
        return plot_scores(model.W, window_times, episodes, run.factor_colors(model))
    if kind == "decomposition":
        model = run.model()
        if window is None:
            window = int(np.argmax(model.W.sum(axis=1))) if model.W.shape[0] else 0
        return plot_decomposition(model, window, run.factor_colors(model))
    if kind == "residual":
        diagnostics = artifacts.read_json(artifacts.require(run.run_dir, artifacts.NNMF_DIAGNOSTICS))
        return plot_residual(diagnostics.get("rank_curve"))
    raise ValueError(f"unknown plot kind {kind}; choose from {', '.join(PLOT_KINDS)}")


def render_plots(
    run_dir: Path, config: RunConfig, kinds: Sequence[str] = PLOT_KINDS, window: Optional[int] = None
) -> List[Path]:
    run = RunArtifacts(run_dir, config)
    plot_dir = Path(run_dir) / artifacts.PLOTS
    plot_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for kind in kinds:
        svg = render(kind, run, window)
        path = plot_dir / f"{kind}.svg"
        with open(path, "w") as handle:
            handle.write(svg)
        written.append(path)
    return written
