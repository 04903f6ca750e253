# debug_utils.py
from rich.console import Console
from rich.table import Table
from rich.tree import Tree
from datetime import datetime

console = Console()

class RunTracker:
    """
    Records timestamped steps of a run (cell starts, finishes, failures) and
    prints them as a rich tree or table. The history also feeds the manifest.
    """
    def __init__(self):
        self.step_count = 0
        self.history = []

    def record(self, step_name: str, status: str = "ok", **data):
        """
        Append one step.

        Args:
            step_name: Name of the step, usually a cell id
            status: "ok", "partial" or a failure label
            data: Extra fields kept alongside the step (timings, counts)
        """
        self.step_count += 1
        self.history.append({
            "step": step_name,
            "status": status,
            "timestamp": datetime.now().isoformat(),
            **data,
        })

    def statuses(self) -> dict:
        return {entry["step"]: entry["status"] for entry in self.history}

    def print_tree(self):
        """Every recorded step as one tree, failures in red."""
        if not self.history:
            return
        tree = Tree("[bold yellow]📋 Run steps[/bold yellow]")
        for entry in self.history:
            style = "green" if entry["status"] == "ok" else "red"
            node = tree.add(f"[{style}]{entry['step']}[/{style}] [dim]{entry['status']}[/dim]")
            for key, value in entry.items():
                if key not in ("step", "status", "timestamp"):
                    node.add(f"[cyan]{key}:[/cyan] {value}")
        console.print(tree)

    def print_final_summary(self):
        """Print a summary of all steps taken."""
        if not self.history:
            return

        summary_table = Table(show_header=True, header_style="bold cyan")
        summary_table.add_column("#", style="dim", width=4)
        summary_table.add_column("Step", style="cyan")
        summary_table.add_column("Status")
        summary_table.add_column("Timestamp", style="dim")

        for idx, entry in enumerate(self.history, 1):
            timestamp = entry['timestamp'].split('T')[1].split('.')[0]  # HH:MM:SS
            summary_table.add_row(str(idx), entry['step'], entry['status'], timestamp)

        console.print(summary_table)
        failed = sum(1 for e in self.history if e["status"] != "ok")
        console.print(f"[bold green]✅ Steps: {len(self.history)}[/bold green]  [red]failed: {failed}[/red]\n")

    def reset(self):
        """Reset tracking for a new run."""
        self.step_count = 0
        self.history = []

# Global instance
tracker = RunTracker()
