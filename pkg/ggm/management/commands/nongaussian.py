from django.conf import settings

from ggm.management.base import ExperimentCommand, int_list
from ggm.services import sim_harness


class Command(ExperimentCommand):
    help = "Lasso support recovery with a skew-normal or log-normal design and planted sparsity."
    kind = "nongaussian"

    def add_arguments(self, parser):
        parser.add_argument("--dist", required=True, choices=sim_harness.DISTRIBUTIONS)
        parser.add_argument("--n", type=int_list, required=True, help="Comma-separated sample sizes.")
        parser.add_argument("--p", type=int, required=True, help="Number of predictors.")
        parser.add_argument("--s", type=int, required=True, help="Planted support size.")
        parser.add_argument("--reps", type=int, required=True)
        parser.add_argument("--out", default=None, help="Result CSV path.")
        parser.add_argument("--criteria", default="cv",
                            help="Comma-separated subset of cv,aic,bic,ebic.")
        self.add_common_arguments(parser)

    def handle(self, *args, **options):
        out = self.output(options, f"nongaussian_{options['dist']}.csv")
        criteria = [c.strip() for c in options["criteria"].split(",") if c.strip()]
        seed = options["seed"] or 0
        config = {"dist": options["dist"], "n": options["n"], "p": options["p"],
                  "s": options["s"], "reps": options["reps"], "criteria": criteria, "seed": seed}

        def work():
            records = sim_harness.nongaussian_experiment(
                options["dist"], options["n"], options["p"], options["s"], options["reps"],
                seed=seed, criteria=criteria, threads=self.threads(options),
                progress=settings.SIM_PROGRESS, output_path=out,
            )
            summaries = sim_harness.summarize(records)
            for s in summaries:
                self.stdout.write(f"  {s.criterion:>6} n={s.n:<7} SHD {s.mean_shd:.2f}±{s.sd_shd:.2f}")
            return len(records), [s.as_dict() for s in summaries]

        self.run_recorded(config, out, work)
