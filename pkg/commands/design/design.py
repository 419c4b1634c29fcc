import asyncio
import logging
import os
from typing import TYPE_CHECKING

import jinja2
import numpy as np

from utils.artifacts import save_design
from utils.design import MpcDesign, closed_loop_poles
from utils.pipeline import design_from_config, plant_from_config
from utils.solver import certified_iterations

if TYPE_CHECKING:
    from main import RwmCli

REPORT_GAP_TARGET = 1e-4


class DesignCommand:
    name = "design"
    description = "Build the MPC design from the config and write the design artifact."

    def __init__(self, cli: "RwmCli"):
        self.cli = cli

    def add_arguments(self, parser) -> None:
        parser.add_argument(
            "--no-report", action="store_true", help="skip the HTML design report"
        )

    async def render_report(self, design: MpcDesign, artifact: str) -> str:
        controller, observer = closed_loop_poles(design)
        fwl = design.fwl.to_dict()

        # Render Jinja2 template
        env = jinja2.Environment(
            enable_async=True,
            loader=jinja2.FileSystemLoader(
                os.path.join(self.cli.source_dir, "content", "templates")
            ),
            autoescape=True,
        )
        template = env.get_template("design_report.jinja")
        html = await template.render_async(
            artifact=artifact,
            design=design,
            n=design.model_s.n_states,
            m=design.n_inputs,
            p=design.model_s.n_outputs,
            open_loop_radius=float(np.abs(design.model_s.poles()).max()),
            controller_radius=float(np.abs(controller).max()),
            observer_radius=float(np.abs(observer).max()),
            certified=certified_iterations(
                design.pre.mu, design.pre.lip, 1.0, REPORT_GAP_TARGET
            ),
            gap_target=REPORT_GAP_TARGET,
            betas=[float(b) for b in design.beta[: design.i_max]],
            formats={k: v for k, v in fwl.items() if isinstance(v, dict) and "width" in v},
            provenance=design.provenance,
        )

        path = self.cli.out_path("design_report.html")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(html)

        logging.info(f"[ARTIFACT] Wrote {path}")
        return path

    async def run(self, args) -> int:
        cfg = self.cli.config

        plant = await asyncio.to_thread(plant_from_config, cfg)
        design = await asyncio.to_thread(design_from_config, cfg, plant)

        artifact = str(save_design(design, self.cli.design_path()))
        if not args.no_report:
            await self.render_report(design, artifact)

        logging.info(
            f"[DESIGN] Design ready: d={design.d}, mu={design.pre.mu:.4e}, "
            f"i_max={design.i_max}"
        )
        return 0


async def setup(cli: "RwmCli"):
    await cli.add_command(DesignCommand(cli))
