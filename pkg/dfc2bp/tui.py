from typing import Dict, Sequence

import rich.live
import rich.progress
import rich.table
import rich.text
import rich.tree

from dfc2bp.console_output import console
from dfc2bp.pipeline import StageAction, StageResult

STAGE_ICONS = {
    "simulate": ":robot:",
    "sense": ":eye:",
    "imi": ":link:",
    "irm": ":jigsaw:",
    "nnmf": ":bar_chart:",
}


class PipelineTUI(object):
    def __init__(self, stages: Sequence[str]):
        tree = rich.tree.Tree("Stages", hide_root=True)
        progress_table = rich.table.Table.grid()
        progress_table.row_styles = ["dim", ""]
        self.stage_to_progress: Dict[str, rich.progress.Progress] = dict()
        for stage in stages:
            stage_progress = rich.progress.Progress(
                rich.progress.BarColumn(),
                rich.progress.SpinnerColumn(finished_text=""),
                rich.progress.TextColumn(""),
                console=console,
            )
            stage_progress.add_task(description="", total=1, start=False)
            self.stage_to_progress[stage] = stage_progress
            tree.add(f"{STAGE_ICONS.get(stage, ':gear:')} {stage}", style="bright")
            progress_table.add_row(stage_progress)

        self.overall_progress = rich.progress.Progress(console=console)
        self.overall_progress.add_task("Total progress", start=True, total=len(stages))
        table = rich.table.Table().grid(padding=1, pad_edge=True)
        tree_and_progress = rich.table.Table.grid("", rich.table.Column(""), expand=True)
        tree_and_progress.add_row(tree, progress_table)
        table.add_row(tree_and_progress)
        table.add_row(self.overall_progress)
        self.live = rich.live.Live(table, console=console, refresh_per_second=10)

    def __enter__(self):
        self.live.__enter__()
        return self

    def __exit__(self, *args, **kwargs):
        self.live.__exit__(*args, **kwargs)

    def set_item_progress_label(self, stage, label):
        self.stage_to_progress[stage].columns[2].text_format = label

    def set_item_finished_text(self, stage, finished_text):
        self.stage_to_progress[stage].columns[1].finished_text = finished_text

    def set_item_finished_text_from_result(self, stage, stage_result: StageResult):
        self.set_item_finished_text(stage, PipelineTUI.format_stage_result(stage_result))

    def start_item_task(self, stage):
        progress = self.stage_to_progress[stage]
        progress.start_task(task_id=progress.task_ids[0])

    def update_item_progress(self, stage, completed, total):
        progress = self.stage_to_progress[stage]
        progress.update(task_id=progress.task_ids[0], completed=completed, total=total)

    def finish_item_task(self, stage):
        progress = self.stage_to_progress[stage]
        task = progress.tasks[0]
        progress.update(task_id=task.id, completed=task.total)

    def tick_global_progress(self):
        self.overall_progress.update(task_id=self.overall_progress.task_ids[0], advance=1)

    @staticmethod
    def format_stage_result(stage_result: StageResult):
        if stage_result.action == StageAction.CREATED:
            return rich.text.Text.from_markup(
                f"[green]:heavy_check_mark-emoji: Done in {stage_result.seconds:.1f}s"
            )
        if stage_result.action == StageAction.UPDATED:
            return rich.text.Text.from_markup(
                f"[green]:heavy_check_mark-emoji: Recomputed in {stage_result.seconds:.1f}s"
            )
        return rich.text.Text.from_markup("[yellow]Up to date")
