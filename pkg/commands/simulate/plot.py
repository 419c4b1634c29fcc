import asyncio
from typing import TYPE_CHECKING

from utils.plotting import plot_trace_file

if TYPE_CHECKING:
    from main import RwmCli


class PlotCommand:
    name = "plot"
    description = "Render the six-panel overview of a trace CSV."

    def __init__(self, cli: "RwmCli"):
        self.cli = cli

    def add_arguments(self, parser) -> None:
        parser.add_argument("--trace", help="trace CSV (default: <out>/trace.csv)")
        parser.add_argument("--png", help="image path (default: next to the CSV)")

    async def run(self, args) -> int:
        trace = args.trace or self.cli.out_path("trace.csv")
        await asyncio.to_thread(plot_trace_file, trace, args.png)
        return 0


async def setup(cli: "RwmCli"):
    await cli.add_command(PlotCommand(cli))
