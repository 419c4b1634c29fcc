import csv
import logging
from typing import TYPE_CHECKING

import numpy as np

from utils.artifacts import (
    SolveDocument,
    StateDocument,
    load_design,
    read_document,
    write_document,
)
from utils.mpc_exceptions import ArtifactError, SolverError
from utils.pipeline import nominal_state
from utils.solver import fgm_solve

if TYPE_CHECKING:
    from main import RwmCli


class SolveCommand:
    name = "solve"
    description = "Run one FGM solve for a state estimate and write the solve report."

    def __init__(self, cli: "RwmCli"):
        self.cli = cli

    def add_arguments(self, parser) -> None:
        parser.add_argument(
            "--state",
            help="state document; defaults to the configured perturbation of the design model",
        )

    def state_for(self, design, state_path: str | None) -> np.ndarray:
        if state_path is None:
            return nominal_state(self.cli.config, design)

        doc = read_document(state_path, StateDocument)
        x = np.array(doc.x)
        if x.shape != (design.model_s.n_states,):
            raise ArtifactError(
                f"{state_path}: state has {x.shape[0]} entries, design expects "
                f"{design.model_s.n_states}"
            )
        return x if doc.scaled else x / design.scaling.k_x

    def dump_iterates(self, report, path: str) -> None:
        restarts = set(report.restarts)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["iteration", "cost", "restart", *[f"u{j + 1}" for j in range(len(report.u_opt))]]
            )
            for i, (u, cost) in enumerate(zip(report.iterates, report.cost_history), start=1):
                writer.writerow([i, repr(cost), int(i in restarts), *[repr(float(v)) for v in u]])

        logging.info(f"[ARTIFACT] Wrote {path}")

    async def run(self, args) -> int:
        cfg = self.cli.config
        design = load_design(self.cli.design_path())

        x = self.state_for(design, args.state)

        try:
            report = fgm_solve(
                design,
                x,
                cfg.solver.i_max,
                cfg.solver.backend,
                record_iterates=args.dump_iterates,
            )
        except SolverError:
            logging.critical("[FGM] Solve failed.")
            raise

        write_document(
            SolveDocument.from_report(report, design.fwl.base),
            self.cli.out_path("solve.json"),
        )
        if args.dump_iterates:
            self.dump_iterates(report, self.cli.out_path("iterates.csv"))

        logging.info(
            f"[FGM] {report.backend}: {report.iterations} iterations, "
            f"J={report.cost_history[-1]:.6e}, {len(report.restarts)} restarts"
        )
        return 0


async def setup(cli: "RwmCli"):
    await cli.add_command(SolveCommand(cli))
