"""
The five stages of a run, each reading its inputs from and writing its
outputs to the run directory, with a manifest recording what produced what.
"""
import time
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from dfc2bp import artifacts, behavior, dynamics, imi, irm, nnmf, sensory
from dfc2bp.babbling import muscle_commands, sample_program
from dfc2bp.config import RunConfig, config_hash
from dfc2bp.console_output import error_console
from dfc2bp.errors import ConfigurationError, StageError, StaleArtifactError

STAGES = ("simulate", "sense", "imi", "irm", "nnmf")

Progress = Callable[[int, int], None]


class StageAction(Enum):
    CREATED = 1
    UPDATED = 2
    SKIPPED = 3


class StageResult(NamedTuple):
    stage: str
    action: StageAction
    seconds: float
    derived: Dict[str, Any]


class StageSpec(NamedTuple):
    # Configuration sections the outputs depend on
    sections: Sequence[str]
    inputs: Sequence[str]
    outputs: Sequence[str]


STAGE_SPECS = {
    "simulate": StageSpec(
        sections=("seed", "sim", "babbling"),
        inputs=(),
        outputs=(artifacts.TRAJECTORY, artifacts.CONTACTS, artifacts.BABBLING),
    ),
    "sense": StageSpec(
        sections=("seed", "sim", "sensors"),
        inputs=(artifacts.TRAJECTORY, artifacts.CONTACTS),
        outputs=(artifacts.SENSORS, artifacts.SENSOR_INDEX),
    ),
    "imi": StageSpec(
        sections=("sim", "imi"),
        inputs=(artifacts.SENSORS,),
        outputs=(artifacts.IMI, artifacts.GRAPHS),
    ),
    "irm": StageSpec(
        sections=("seed", "irm"),
        inputs=(artifacts.GRAPHS, artifacts.SENSOR_INDEX),
        outputs=(artifacts.PARTITION, artifacts.LINK_DENSITY, artifacts.IRM_DIAGNOSTICS),
    ),
    "nnmf": StageSpec(
        sections=("seed", "sim", "imi", "nnmf"),
        inputs=(
            artifacts.LINK_DENSITY,
            artifacts.PARTITION,
            artifacts.SENSOR_INDEX,
            artifacts.TRAJECTORY,
            artifacts.CONTACTS,
        ),
        outputs=(
            artifacts.FACTORS,
            artifacts.SCORES,
            artifacts.FACTOR_EDGES,
            artifacts.NNMF_DIAGNOSTICS,
            artifacts.EPISODES,
        ),
    ),
}


class RunManifest(NamedTuple):
    config_hash: str
    stages: Dict[str, Dict[str, Any]]
    derived: Dict[str, Any]

    def to_json(self) -> Dict[str, Any]:
        return {"config_hash": self.config_hash, "stages": self.stages, "derived": self.derived}

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "RunManifest":
        return cls(
            config_hash=data.get("config_hash", ""),
            stages=dict(data.get("stages", {})),
            derived=dict(data.get("derived", {})),
        )


def load_manifest(run_dir: Path) -> RunManifest:
    path = Path(run_dir) / artifacts.MANIFEST
    if not path.is_file():
        return RunManifest(config_hash="", stages={}, derived={})
    return RunManifest.from_json(artifacts.read_json(path))


def _no_progress(done: int, total: int):
    pass


def run_simulate(config: RunConfig, run_dir: Path, progress: Progress = _no_progress) -> Dict[str, Any]:
    params = config.sim.robot
    program = sample_program(
        config.stage_seed("babbling"), n_joints=dynamics.N_JOINTS, period=config.babbling.period
    )
    trajectory = dynamics.simulate(
        params,
        lambda t: muscle_commands(program, t),
        duration=config.sim.duration,
        dt=config.sim.dt,
        on_progress=progress,
    )
    artifacts.write_trajectory(run_dir, trajectory)
    artifacts.write_json(run_dir / artifacts.BABBLING, program.to_dict())
    episodes = behavior.touch_episodes(trajectory.contacts, trajectory.t)
    return {
        "n_frames": len(trajectory),
        "contact_frames": sum(1 for events in trajectory.contacts if events),
        "touch_episodes": len(episodes),
        "babbling": program.to_dict(),
    }


def run_sense(config: RunConfig, run_dir: Path, progress: Progress = _no_progress) -> Dict[str, Any]:
    params = config.sim.robot
    trajectory = artifacts.read_trajectory(run_dir)
    layouts = sensory.build_layouts(params, config.sensors, config.stage_seed("tactile"))
    progress(0, 1)
    frames = sensory.encode_stream(trajectory, params, layouts)
    artifacts.write_sensors(run_dir, trajectory.t, frames)
    artifacts.write_json(
        run_dir / artifacts.SENSOR_INDEX,
        sensory.signal_index_to_json(sensory.signal_index(layouts)),
    )
    progress(1, 1)
    return {"N_s": layouts.n_signals}


def run_imi(config: RunConfig, run_dir: Path, progress: Progress = _no_progress, workers: int = 1) -> Dict[str, Any]:
    spec = config.imi.window
    times, frames = artifacts.read_sensors(run_dir)
    frames, _ = imi.downsample(frames, times, config.sim.rate, spec)
    n_windows = spec.n_windows(frames.shape[0])
    if n_windows == 0:
        raise ConfigurationError(
            f"{frames.shape[0]} analysis samples are fewer than one window of {spec.window_len}"
        )

    stats = imi.IMIStats()
    imi_path = run_dir / artifacts.IMI
    with artifacts.ImiWriter(imi_path, n_windows, frames.shape[1]) as writer:
        for index, matrix in enumerate(imi.imi_series(frames, spec, workers=workers)):
            writer.write(matrix.values)
            stats.update(matrix.values)
            progress(index + 1, 2 * n_windows)

    if config.imi.threshold_mode == "adaptive":
        threshold = stats.adaptive_threshold()
    else:
        threshold = config.imi.fixed_threshold()

    # Binarize what was persisted, so the graphs follow from imi.bin alone
    graphs = []
    for index, values in enumerate(artifacts.read_imi(imi_path)):
        graphs.append(imi.binarize_matrix(values, threshold))
        progress(n_windows + index + 1, 2 * n_windows)
    series = imi.BinaryGraphSeries(adjacency=np.stack(graphs), threshold_used=threshold)
    artifacts.write_graphs(run_dir / artifacts.GRAPHS, series.adjacency)

    densities = series.densities()
    return {
        "N_windows": n_windows,
        "threshold_used": threshold,
        "graph_density_range": [float(densities.min()), float(densities.max())],
        "imi_mean": stats.mean,
        "imi_std": stats.std,
        "imi_max": stats.maximum,
    }


def run_irm(config: RunConfig, run_dir: Path, progress: Progress = _no_progress, workers: int = 1) -> Dict[str, Any]:
    adjacency = artifacts.read_graphs(artifacts.require(run_dir, artifacts.GRAPHS))
    signals = sensory.signal_index_from_json(
        artifacts.read_json(artifacts.require(run_dir, artifacts.SENSOR_INDEX))
    )
    if len(signals) != adjacency.shape[1]:
        raise StaleArtifactError(
            f"{artifacts.SENSOR_INDEX} lists {len(signals)} signals, "
            f"{artifacts.GRAPHS} has {adjacency.shape[1]}"
        )
    hyper = config.irm._replace(seed=config.stage_seed("irm"))
    total = hyper.n_restarts * hyper.n_sweeps
    done = [0]

    def on_sweep():
        done[0] += 1
        progress(done[0], total)

    partition, diagnostics = irm.fit(adjacency, hyper, workers=workers, on_sweep=on_sweep)
    densities = irm.link_densities(adjacency, partition, hyper)
    modules = behavior.module_modalities(partition, signals)

    artifacts.write_partition(run_dir, partition.assignment, signals)
    artifacts.write_tensor(run_dir / artifacts.LINK_DENSITY, densities.H)
    artifacts.write_json(
        run_dir / artifacts.IRM_DIAGNOSTICS,
        {
            "log_joint": partition.log_joint,
            "best_chain": diagnostics.best_chain,
            "traces": diagnostics.traces,
            "cluster_counts": diagnostics.cluster_counts,
            "warnings": diagnostics.warnings,
            "modules": [
                {
                    "cluster": module.cluster,
                    "modality": module.modality,
                    "purity": module.purity,
                    "counts": module.counts,
                }
                for module in modules
            ],
        },
    )
    progress(total, total)
    return {
        "N_c": partition.n_clusters,
        "log_joint": partition.log_joint,
        "modality_purity": behavior.purity_fraction(modules),
    }


def run_nnmf(config: RunConfig, run_dir: Path, progress: Progress = _no_progress) -> Dict[str, Any]:
    settings = config.nnmf
    seed = config.stage_seed("nnmf")
    vectorized = nnmf.vectorize_upper(
        artifacts.read_tensor(artifacts.require(run_dir, artifacts.LINK_DENSITY))
    )
    if vectorized.n_pairs == 0:
        raise ConfigurationError("a single functional module leaves no module pairs to factorize")

    rank_curve = None
    n_factors = settings.n_factors
    if settings.select_rank:
        candidates = [
            rank
            for rank in settings.rank_range()
            if rank <= min(vectorized.n_pairs, vectorized.n_windows)
        ]
        if not candidates:
            raise ConfigurationError("no candidate rank fits the link-density series")
        selection = nnmf.select_rank(
            vectorized,
            candidates,
            seed=seed,
            elbow_fraction=settings.elbow_fraction,
            max_iter=settings.max_iter,
            tol=settings.tol,
        )
        n_factors = selection.selected
        rank_curve = {"ranks": selection.ranks, "residuals": selection.residuals}
    progress(0, 2)

    model = nnmf.nnmf_fit(
        vectorized, n_factors, seed=seed, max_iter=settings.max_iter, tol=settings.tol
    )
    artifacts.write_tensor(run_dir / artifacts.FACTORS, model.F)
    artifacts.write_tensor(run_dir / artifacts.SCORES, model.W)
    artifacts.write_rows(
        run_dir / artifacts.FACTOR_EDGES,
        ["factor", "cluster_c", "cluster_d", "weight"],
        [
            {"factor": f"f{factor + 1}", "cluster_c": c, "cluster_d": d, "weight": repr(weight)}
            for factor, c, d, weight in nnmf.factor_edges(model, vectorized.pair_index)
        ],
    )
    progress(1, 2)

    trajectory = artifacts.read_trajectory(run_dir)
    _, analysis_times = imi.downsample(trajectory.t, trajectory.t, config.sim.rate, config.imi.window)
    partition = irm.Partition.from_assignment(artifacts.read_partition(run_dir))
    signals = sensory.signal_index_from_json(
        artifacts.read_json(artifacts.require(run_dir, artifacts.SENSOR_INDEX))
    )
    modules = behavior.module_modalities(partition, signals)
    factors = behavior.factor_modalities(model, vectorized.pair_index, modules)
    episodes = behavior.touch_episodes(trajectory.contacts, trajectory.t)
    reports = behavior.episode_report(episodes, model, factors, analysis_times, config.imi.window)
    artifacts.write_rows(
        run_dir / artifacts.EPISODES,
        list(behavior.EpisodeReport._fields),
        [
            dict(
                report._asdict(),
                leading_factor=f"f{report.leading_factor + 1}" if report.leading_factor >= 0 else "",
            )
            for report in reports
        ],
    )
    artifacts.write_json(
        run_dir / artifacts.NNMF_DIAGNOSTICS,
        {
            "n_factors": model.n_factors,
            "residual": model.residual,
            "energies": model.energies.tolist(),
            "objective_trace": list(model.objective_trace),
            "rank_curve": rank_curve,
            "factor_modalities": [
                {"factor": f"f{factor.factor + 1}", "modalities": sorted(factor.modalities), "dominant": factor.dominant}
                for factor in factors
            ],
        },
    )
    progress(2, 2)

    if not episodes:
        error_console.log(":warning-emoji: the trajectory contains no self-touch episode")
    return {
        "N_f": model.n_factors,
        "D": model.residual,
        "rank_curve": rank_curve,
        "episodes_with_tactile_factor": sum(1 for report in reports if report.tactile_share >= 1.0),
    }


STAGE_FUNCTIONS = {
    "simulate": run_simulate,
    "sense": run_sense,
    "imi": run_imi,
    "irm": run_irm,
    "nnmf": run_nnmf,
}
PARALLEL_STAGES = ("imi", "irm")


class Pipeline(object):
    def __init__(self, config: RunConfig, run_dir: Optional[Path] = None, resume: bool = False, tui=None):
        self.config = config
        self.run_dir = Path(run_dir if run_dir is not None else config.output_dir)
        self.resume = resume
        self.tui = tui
        self.manifest = load_manifest(self.run_dir)

    def _producer_checksum(self, name: str) -> Optional[str]:
        producer = artifacts.PRODUCED_BY.get(name)
        record = self.manifest.stages.get(producer)
        if record is None:
            return None
        return record["outputs"].get(name)

    def check_inputs(self, stage: str) -> Dict[str, str]:
        """Checksums of a stage's inputs, after checking them against their producers' records."""
        checksums = {}
        for name in STAGE_SPECS[stage].inputs:
            checksum = artifacts.file_sha1(artifacts.require(self.run_dir, name))
            recorded = self._producer_checksum(name)
            if recorded is not None and recorded != checksum:
                raise StaleArtifactError(
                    f"{name} changed since the '{artifacts.PRODUCED_BY[name]}' stage wrote it; "
                    "rerun that stage first"
                )
            checksums[name] = checksum
        return checksums

    def is_up_to_date(self, stage: str, stage_hash: str, inputs: Dict[str, str]) -> bool:
        record = self.manifest.stages.get(stage)
        if record is None:
            return False
        if record["config_hash"] != stage_hash or record["inputs"] != inputs:
            return False
        for name, checksum in record["outputs"].items():
            path = self.run_dir / name
            if not path.is_file() or artifacts.file_sha1(path) != checksum:
                return False
        return True

    def _progress(self, stage: str) -> Progress:
        if self.tui is None:
            return _no_progress

        def progress(done: int, total: int):
            self.tui.update_item_progress(stage, done, total)

        return progress

    def run_stage(self, stage: str) -> StageResult:
        spec = STAGE_SPECS[stage]
        stage_hash = config_hash(self.config, spec.sections)
        try:
            inputs = self.check_inputs(stage)
            if self.resume and self.is_up_to_date(stage, stage_hash, inputs):
                record = self.manifest.stages[stage]
                return StageResult(stage, StageAction.SKIPPED, record.get("seconds", 0.0), record.get("derived", {}))

            started = time.perf_counter()
            function = STAGE_FUNCTIONS[stage]
            if stage in PARALLEL_STAGES:
                derived = function(self.config, self.run_dir, self._progress(stage), workers=self.config.workers)
            else:
                derived = function(self.config, self.run_dir, self._progress(stage))
            seconds = time.perf_counter() - started
        except Exception as e:
            raise StageError(stage, e) from e

        action = StageAction.UPDATED if stage in self.manifest.stages else StageAction.CREATED
        self.manifest.stages[stage] = {
            "config_hash": stage_hash,
            "inputs": inputs,
            "outputs": {name: artifacts.file_sha1(self.run_dir / name) for name in spec.outputs},
            "seconds": seconds,
            "derived": derived,
        }
        self.save_manifest()
        return StageResult(stage, action, seconds, derived)

    def save_manifest(self):
        derived: Dict[str, Any] = {}
        for stage in STAGES:
            derived.update(self.manifest.stages.get(stage, {}).get("derived", {}))
        self.manifest = self.manifest._replace(config_hash=config_hash(self.config), derived=derived)
        artifacts.write_json(self.run_dir / artifacts.MANIFEST, self.manifest.to_json())

    def run(self, stages: Sequence[str] = STAGES) -> List[StageResult]:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        results = []
        for stage in stages:
            if self.tui is not None:
                self.tui.start_item_task(stage)
            result = self.run_stage(stage)
            results.append(result)
            if self.tui is not None:
                self.tui.finish_item_task(stage)
                self.tui.set_item_finished_text_from_result(stage, result)
                self.tui.tick_global_progress()
        return results


def run(config: RunConfig, resume: bool = False, tui=None) -> RunManifest:
    pipeline = Pipeline(config, resume=resume, tui=tui)
    pipeline.run()
    return pipeline.manifest
