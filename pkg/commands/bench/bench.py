import asyncio
import logging
from typing import TYPE_CHECKING

from utils.artifacts import BenchDocument, BenchRow, load_design, write_document
from utils.host_info import host_info
from utils.pipeline import plant_from_config, reference_states
from utils.simloop import benchmark
from utils.solver import Backend

if TYPE_CHECKING:
    from main import RwmCli


class BenchCommand:
    name = "bench"
    description = "Time the solver backends on closed-loop state estimates."

    def __init__(self, cli: "RwmCli"):
        self.cli = cli

    def add_arguments(self, parser) -> None:
        parser.add_argument(
            "--samples", type=int, help="number of states (default: state-samples from config)"
        )
        parser.add_argument(
            "--only",
            choices=[b.value for b in Backend],
            action="append",
            help="restrict to one backend; repeatable",
        )

    async def run(self, args) -> int:
        cfg = self.cli.config
        design = load_design(self.cli.design_path())
        plant = plant_from_config(cfg)

        count = args.samples or cfg.scenario.state_samples
        states = await asyncio.to_thread(reference_states, cfg, plant, design, count)

        rows = []
        for backend in args.only or [b.value for b in Backend]:
            stats = benchmark(
                design,
                states,
                backend,
                repeats=cfg.scenario.bench_repeats,
                i_max=cfg.solver.i_max,
            )
            rows.append(
                BenchRow(
                    backend=str(stats.backend),
                    samples=stats.samples,
                    max_ms=stats.max_ms,
                    avg_ms=stats.avg_ms,
                    std_ms=stats.std_ms,
                    cv=stats.cv,
                    max_mse=stats.max_mse,
                    max_cost_gap=stats.max_cost_gap,
                    saturations=stats.saturations,
                )
            )

        host = host_info()
        write_document(
            BenchDocument(i_max=cfg.solver.i_max, rows=rows, host=host),
            self.cli.out_path("bench.json"),
        )

        logging.info(f"[BENCH] Host: {host['cpu']} ({host['os']}, Python {host['python_version']})")
        logging.info(f"[BENCH] {'backend':<8} {'max ms':>10} {'avg ms':>10} {'max MSE':>10} {'max dJ':>10}")
        for row in rows:
            logging.info(
                f"[BENCH] {row.backend:<8} {row.max_ms:>10.4f} {row.avg_ms:>10.4f} "
                f"{row.max_mse:>10.2e} {row.max_cost_gap:>10.2e}"
            )
        return 0


async def setup(cli: "RwmCli"):
    await cli.add_command(BenchCommand(cli))
