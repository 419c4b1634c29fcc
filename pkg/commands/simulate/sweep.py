import logging
import math
from typing import TYPE_CHECKING

from utils.artifacts import SweepDocument, SweepRow, load_design, write_document
from utils.pipeline import plant_from_config, scenario_from_config
from utils.simloop import amplitude_sweep

if TYPE_CHECKING:
    from main import RwmCli


class SweepCommand:
    name = "sweep"
    description = "Compare MPC and saturated LQ over a range of perturbation amplitudes."

    def __init__(self, cli: "RwmCli"):
        self.cli = cli

    def add_arguments(self, parser) -> None:
        parser.add_argument(
            "--amplitudes",
            type=lambda s: [float(v) for v in s.split(",") if v.strip()],
            help="comma separated amplitudes (default: from config)",
        )
        parser.add_argument(
            "--jobs", type=int, default=4, help="closed-loop runs in flight at once"
        )

    async def run(self, args) -> int:
        cfg = self.cli.config
        design = load_design(self.cli.design_path())
        plant = plant_from_config(cfg)

        amplitudes = args.amplitudes or list(cfg.scenario.sweep_amplitudes)
        scenario = scenario_from_config(cfg, plant, design)
        result = await amplitude_sweep(scenario, amplitudes, max_concurrency=args.jobs)

        ratio = result.margin_ratio
        write_document(
            SweepDocument(
                backend=str(scenario.backend),
                rows=[
                    SweepRow(amplitude=a, mpc_stabilized=m, lq_stabilized=q)
                    for a, m, q in zip(result.amplitudes, result.mpc_stable, result.lq_stable)
                ],
                max_mpc=result.max_mpc,
                max_lq=result.max_lq,
                margin_ratio=ratio if math.isfinite(ratio) else None,
            ),
            self.cli.out_path("sweep.json"),
        )

        logging.info(
            f"[SWEEP] Max stabilized amplitude: MPC {result.max_mpc:g}, LQ {result.max_lq:g}"
        )
        return 0


async def setup(cli: "RwmCli"):
    await cli.add_command(SweepCommand(cli))
