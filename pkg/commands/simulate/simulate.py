import asyncio
import logging
from typing import TYPE_CHECKING

from utils.artifacts import TraceSummaryDocument, load_design, write_document
from utils.pipeline import plant_from_config, scenario_from_config
from utils.plotting import plot_trace_file, write_trace_csv
from utils.simloop import Controller, run_closed_loop

if TYPE_CHECKING:
    from main import RwmCli


class SimulateCommand:
    name = "simulate"
    description = "Run the closed loop on the simulated plant and write the trace."

    def __init__(self, cli: "RwmCli"):
        self.cli = cli

    def add_arguments(self, parser) -> None:
        parser.add_argument(
            "--controller",
            choices=[c.value for c in Controller],
            default=Controller.MPC.value,
            help="mpc, saturated LQ baseline, or open loop",
        )
        parser.add_argument("--amplitude", type=float, help="initial perturbation amplitude")
        parser.add_argument("--phase", type=float, help="perturbation phase in degrees")
        parser.add_argument(
            "--track-accuracy",
            action="store_true",
            help="record per-step MSE against the reference QP solution",
        )
        parser.add_argument("--no-plot", action="store_true", help="skip the PNG overview")

    async def run(self, args) -> int:
        cfg = self.cli.config
        controller = Controller(args.controller)

        design = None if controller == Controller.OFF else load_design(self.cli.design_path())
        plant = await asyncio.to_thread(plant_from_config, cfg)

        changes = {"controller": controller, "track_accuracy": args.track_accuracy}
        if args.amplitude is not None:
            changes["amplitude"] = args.amplitude
        if args.phase is not None:
            changes["phase"] = args.phase

        scenario = scenario_from_config(cfg, plant, design, **changes)
        trace = await asyncio.to_thread(run_closed_loop, scenario)

        csv_path = write_trace_csv(trace, self.cli.out_path("trace.csv"))
        metrics = trace.metrics()
        write_document(
            TraceSummaryDocument(
                scenario={
                    "controller": str(controller),
                    "backend": str(scenario.backend),
                    "i_max": scenario.i_max,
                    "amplitude": scenario.amplitude,
                    "phase": scenario.phase,
                    "T_sim": scenario.T_sim,
                    "noise_seed": scenario.noise_seed,
                    "meas_noise_std": scenario.meas_noise_std,
                    "power_model": str(scenario.power_model),
                },
                metrics=metrics,
            ),
            self.cli.out_path("trace_summary.json"),
        )

        if not args.no_plot:
            await asyncio.to_thread(plot_trace_file, csv_path)

        if metrics["current_limit_exceeded"]:
            logging.warning(
                f"[SIM] Coil current {metrics['max_abs_i_elm']:.4g} A exceeds the "
                f"{scenario.current_limit:g} A limit"
            )

        logging.info(
            f"[SIM] {controller}: {'stabilized' if metrics['stabilized'] else 'not stabilized'}, "
            f"peak |y| {metrics['peak_y']:.4g}, max |u| {metrics['max_abs_u']:.4g} V"
        )
        return 0


async def setup(cli: "RwmCli"):
    await cli.add_command(SimulateCommand(cli))
