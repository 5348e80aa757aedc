"""
Relating the discovered modules and factors back to what the agent was doing.
"""
from collections import Counter
from typing import Dict, FrozenSet, List, NamedTuple, Sequence

import numpy as np

from dfc2bp.dynamics import TORSO, ContactEvent, body_arm_and_link
from dfc2bp.imi import WindowSpec
from dfc2bp.irm import Partition
from dfc2bp.nnmf import FactorModel, decompose, leading_factor
from dfc2bp.sensory import MODALITIES, TACTILE, SignalInfo

HANDS = "hands"
LEFT_TORSO = "left_torso"
RIGHT_TORSO = "right_torso"
BOTH_TORSO = "both_torso"
SELF = "self"
EPISODE_KINDS = (HANDS, LEFT_TORSO, RIGHT_TORSO, BOTH_TORSO, SELF)


class TouchEpisode(NamedTuple):
    start_frame: int
    # Inclusive
    end_frame: int
    start_time: float
    end_time: float
    kind: str
    bodies: FrozenSet[str]


class ModuleModality(NamedTuple):
    cluster: int
    modality: str
    purity: float
    counts: Dict[str, int]

    @property
    def pure(self) -> bool:
        return self.purity >= 1.0


class FactorModality(NamedTuple):
    factor: int
    modalities: FrozenSet[str]
    dominant: str

    @property
    def links_tactile(self) -> bool:
        return TACTILE in self.modalities


class EpisodeReport(NamedTuple):
    episode: int
    kind: str
    start_time: float
    end_time: float
    first_window: int
    last_window: int
    leading_factor: int
    # Share of the overlapping windows where a top factor links a tactile module
    tactile_share: float

    @property
    def n_windows(self) -> int:
        return max(self.last_window - self.first_window + 1, 0)


def contact_category(event: ContactEvent) -> str:
    body_a, body_b = event.pair
    if TORSO in event.pair:
        arm, _ = body_arm_and_link(body_b if body_a == TORSO else body_a)
        return LEFT_TORSO if arm == "left" else RIGHT_TORSO
    if body_arm_and_link(body_a)[0] != body_arm_and_link(body_b)[0]:
        return HANDS
    return SELF


def episode_kind(categories) -> str:
    categories = set(categories)
    if HANDS in categories:
        return HANDS
    if {LEFT_TORSO, RIGHT_TORSO} <= categories:
        return BOTH_TORSO
    if LEFT_TORSO in categories:
        return LEFT_TORSO
    if RIGHT_TORSO in categories:
        return RIGHT_TORSO
    return SELF


def touch_episodes(
    contacts: Sequence[Sequence[ContactEvent]], times, min_frames: int = 1
) -> List[TouchEpisode]:
    """Maximal runs of consecutive frames with at least one self contact."""
    times = np.asarray(times, dtype=float)
    episodes = []
    start = None
    categories, bodies = set(), set()
    for frame, events in enumerate(list(contacts) + [[]]):
        if events:
            if start is None:
                start = frame
                categories, bodies = set(), set()
            for event in events:
                categories.add(contact_category(event))
                bodies.update(event.pair)
        elif start is not None:
            end = frame - 1
            if end - start + 1 >= min_frames:
                episodes.append(
                    TouchEpisode(
                        start_frame=start,
                        end_frame=end,
                        start_time=float(times[start]),
                        end_time=float(times[end]),
                        kind=episode_kind(categories),
                        bodies=frozenset(bodies),
                    )
                )
            start = None
    return episodes


def module_modalities(partition: Partition, signals: Sequence[SignalInfo]) -> List[ModuleModality]:
    modules = []
    for cluster in range(partition.n_clusters):
        counts = Counter(signals[index].modality for index in partition.members(cluster))
        size = sum(counts.values())
        # Ties go to the earlier modality
        majority = max(MODALITIES, key=lambda modality: (counts[modality], -MODALITIES.index(modality)))
        modules.append(
            ModuleModality(
                cluster=cluster,
                modality=majority,
                purity=counts[majority] / size if size else 0.0,
                counts={modality: counts[modality] for modality in MODALITIES},
            )
        )
    return modules


def purity_fraction(modules: Sequence[ModuleModality]) -> float:
    if not modules:
        return 0.0
    return sum(module.pure for module in modules) / len(modules)


def factor_modalities(
    model: FactorModel,
    pair_index: np.ndarray,
    modules: Sequence[ModuleModality],
    relative_weight: float = 0.2,
) -> List[FactorModality]:
    """
    Modalities of the modules joined by the strong edges of every factor.

    An edge is strong when its weight reaches relative_weight times the
    largest weight of its factor; the dominant modality collects the most
    weight, each edge giving half to either end.
    """
    labels = [module.modality for module in modules]
    factors = []
    for factor in range(model.n_factors):
        weights = model.F[factor]
        peak = weights.max() if weights.size else 0.0
        linked = set()
        totals = dict.fromkeys(MODALITIES, 0.0)
        for row in np.flatnonzero(weights >= relative_weight * peak) if peak > 0 else []:
            c, d = pair_index[row]
            linked.update((labels[c], labels[d]))
            totals[labels[c]] += weights[row] / 2
            totals[labels[d]] += weights[row] / 2
        dominant = max(MODALITIES, key=lambda modality: (totals[modality], -MODALITIES.index(modality)))
        factors.append(FactorModality(factor=factor, modalities=frozenset(linked), dominant=dominant))
    return factors


def window_span(episode: TouchEpisode, analysis_times, spec: WindowSpec):
    """(first, last) window overlapping an episode; last < first when none does."""
    analysis_times = np.asarray(analysis_times, dtype=float)
    n_windows = spec.n_windows(analysis_times.size)
    if n_windows == 0:
        return 0, -1
    starts = analysis_times[np.arange(n_windows) * spec.step]
    ends = analysis_times[np.arange(n_windows) * spec.step + spec.window_len - 1]
    overlapping = np.flatnonzero((starts <= episode.end_time) & (ends >= episode.start_time))
    if overlapping.size == 0:
        return 0, -1
    return int(overlapping[0]), int(overlapping[-1])


def episode_report(
    episodes: Sequence[TouchEpisode],
    model: FactorModel,
    factors: Sequence[FactorModality],
    analysis_times,
    spec: WindowSpec,
    top: int = 3,
) -> List[EpisodeReport]:
    reports = []
    for number, episode in enumerate(episodes):
        first, last = window_span(episode, analysis_times, spec)
        leaders = Counter()
        tactile_windows = 0
        for window in range(first, last + 1):
            leaders[leading_factor(model, window)] += 1
            ranked = decompose(model, window)[:top]
            if any(factors[factor].links_tactile for factor, _ in ranked):
                tactile_windows += 1
        n_windows = last - first + 1
        reports.append(
            EpisodeReport(
                episode=number,
                kind=episode.kind,
                start_time=episode.start_time,
                end_time=episode.end_time,
                first_window=first,
                last_window=last,
                leading_factor=min(leaders, key=lambda factor: (-leaders[factor], factor)) if leaders else -1,
                tactile_share=tactile_windows / n_windows if n_windows > 0 else 0.0,
            )
        )
    return reports
