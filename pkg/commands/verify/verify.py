import asyncio
import logging
from typing import TYPE_CHECKING

from utils import verify
from utils.artifacts import CheckRow, VerifyDocument, write_document
from utils.mpc_exceptions import VerificationError
from utils.pipeline import design_pair, plant_from_config, reference_states, scenario_from_config
from utils.solver import Backend

if TYPE_CHECKING:
    from main import RwmCli

BOUND_STATES = 12


class VerifyCommand:
    name = "verify"
    description = "Build a fresh design and run the full self-check battery."

    def __init__(self, cli: "RwmCli"):
        self.cli = cli

    def add_arguments(self, parser) -> None:
        parser.add_argument(
            "--skip",
            action="append",
            default=[],
            help="check name to skip; repeatable",
        )

    async def run(self, args) -> int:
        cfg = self.cli.config
        sc = cfg.scenario

        plant = await asyncio.to_thread(plant_from_config, cfg)
        unscaled, design = await asyncio.to_thread(design_pair, cfg, plant)
        states = await asyncio.to_thread(
            reference_states, cfg, plant, design, sc.state_samples
        )
        nominal = scenario_from_config(cfg, plant, design, backend=Backend.FULL)

        fwl = design.fwl
        tol = cfg.solver.oracle_tolerance
        battery = {
            "solver-accuracy": lambda: verify.oracle_accuracy(design, states, tol),
            "bound-domination": lambda: verify.bound_domination(
                design, verify.unpreconditioned_twin(design), states[:BOUND_STATES], tol
            ),
            "fwl-degradation": lambda: verify.fwl_degradation(design, states),
            "scaling-equivalence": lambda: verify.scaling_equivalence(
                plant, unscaled, design, nominal
            ),
            "condensing": lambda: verify.condensing_oracle(seed=cfg.model.seed),
            "riccati": lambda: verify.riccati(design),
            "preconditioner": lambda: verify.preconditioner_properties(seed=cfg.model.seed),
            "fwl-determinism": lambda: verify.fwl_determinism(design, states[:BOUND_STATES]),
            "quantization": lambda: verify.quantization_bounds(
                {"iterate": fwl.base, "hessian": fwl.hessian, "hv": fwl.hv},
                samples=sc.quantization_samples,
                seed=cfg.model.seed,
            ),
            "closed-loop": lambda: verify.closed_loop(
                nominal, cfg.model.gamma, cfg.tuning.u_max
            ),
            "throughput": lambda: verify.throughput(
                design, states, cfg.model.sample_time, sc.bench_repeats
            ),
        }

        checks = []
        for name, run_check in battery.items():
            if name in args.skip:
                logging.info(f"[VERIFY] Skipping {name}")
                continue
            checks.append((await asyncio.to_thread(run_check)).log())

        if "domain-of-attraction" not in args.skip:
            checks.append(
                (await verify.domain_of_attraction(nominal, sc.sweep_amplitudes)).log()
            )

        passed = all(c.passed for c in checks)
        write_document(
            VerifyDocument(
                passed=passed,
                checks=[CheckRow(name=c.name, passed=c.passed, detail=c.detail) for c in checks],
            ),
            self.cli.out_path("verify.json"),
        )

        if not passed:
            failed = ", ".join(c.name for c in checks if not c.passed)
            raise VerificationError(f"failed checks: {failed}")

        logging.info(f"[VERIFY] All {len(checks)} checks passed.")
        return 0


async def setup(cli: "RwmCli"):
    await cli.add_command(VerifyCommand(cli))
