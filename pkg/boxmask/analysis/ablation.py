import os
from dataclasses import dataclass, field, replace
from multiprocessing import Pool, cpu_count
from typing import Optional, Sequence, Tuple

import pandas as pd
from tqdm import tqdm as progress_bar

from ..interfaces import SWEEPS, RunConfig, VideoDataset, parse_roi_size
from ..plotting import plot_sampling_curves, plot_sweep
from ..sampling import SamplingPlan
from .analysis import Analysis
from .evaluation import measure_fps
from .results import write_sweep

__all__ = ["Variant", "Ablation", "run_variant", "effectiveness_deltas", "SWEEP_FILE"]

SWEEP_FILE = "sweep.h5"

METRIC_COLUMNS = ("map_50", "map_75", "map_50_95", "params", "fps")

DESCRIPTIONS = {
    "lambda": "BoxMask loss weight, with the baseline arm",
    "n_conv": "number of 3x3 convolutions in the BoxMask head",
    "roi_size": "RoIAlign output size and upsampled size",
    "sampling": "support frame sampling at inference",
    "effectiveness": "baseline against BoxMask over shared seeds",
    "effectiveness_deltas": "per seed BoxMask gains",
}


@dataclass
class Variant:
    """
    One trained model of a sweep.

    :param sweep: sweep name
    :param name: variant name, also its run directory
    :param overrides: dotted config keys changed for this variant
    :param columns: values identifying the variant in the sweep table
    :param seed: run seed
    :param plans: sampling plans evaluated, the configured plan if empty
    """

    sweep: str
    name: str
    overrides: dict = field(default_factory=dict)
    columns: dict = field(default_factory=dict)
    seed: int = 0
    plans: Tuple[SamplingPlan, ...] = ()


def _or_nan(value):
    return float("nan") if value is None else value


def run_variant(args) -> list:
    """
    Train and evaluate one variant, returning one table row per plan.

    Takes a single tuple so it can be mapped over a process pool.
    """

    config_text, variant, run_root, verbose = args

    config = RunConfig.from_text(config_text).update(
        {**variant.overrides, "run.seed": variant.seed, "run.verbose": verbose}
    )

    train = VideoDataset.load(os.path.join(config.run.dataset, "train"))
    val = VideoDataset.load(os.path.join(config.run.dataset, "val"))

    analysis = Analysis(config, os.path.join(run_root, variant.sweep, variant.name))
    analysis.train(train, force=True)

    rows = []
    for plan in variant.plans or (config.sampling,):
        name = f"eval_{plan.mode}_T{plan.T}_S{plan.S}"
        result = analysis.evaluate(val, plan, name=name, plot=False)

        rows.append(
            {
                **variant.columns,
                "map_50": _or_nan(result.map_50),
                "map_75": _or_nan(result.map_75),
                "map_50_95": _or_nan(result.map_50_95),
                "params": analysis.detector.num_parameters(),
                "fps": measure_fps(analysis.detector, val.clips, plan, config.run.seed),
            }
        )

    return rows


def effectiveness_deltas(table: pd.DataFrame) -> pd.DataFrame:
    """
    Per seed gains of BoxMask over the baseline, and whether the gain at
    IoU 0.75 is at least the gain at IoU 0.5.
    """

    rows = []
    for seed, group in table.groupby("seed", sort=True):
        base = group[group["arm"] == "baseline"].iloc[0]
        box = group[group["arm"] == "boxmask"].iloc[0]

        delta_50 = box["map_50"] - base["map_50"]
        delta_75 = box["map_75"] - base["map_75"]

        rows.append(
            {
                "seed": seed,
                "delta_50": delta_50,
                "delta_75": delta_75,
                "delta_50_95": box["map_50_95"] - base["map_50_95"],
                "higher_iou_gain": bool(delta_75 >= delta_50),
            }
        )

    return pd.DataFrame(rows)


class Ablation:
    """
    Train and evaluate the variants of one or more sweeps.
    """

    nthreads = int(cpu_count() * 0.75)

    def __init__(self, config: RunConfig, run_dir: Optional[str] = None, verbose=None):
        """
        Train and evaluate the variants of one or more sweeps.

        Variants share the run seed, so they differ only in the swept
        setting. Tables go to sweep.h5 and tables/*.txt in the run directory.

        :param config: a RunConfig, its ablation section holds the grids
        :param run_dir: output directory, config.run.out if not given
        :param verbose: print progress, config.run.verbose if not given
        """

        self.config = config
        self.run_dir = run_dir if run_dir is not None else config.run.out
        self.verbose = config.run.verbose if verbose is None else verbose

        self.tables = {}

    @property
    def sweep_file(self) -> str:
        return os.path.join(self.run_dir, SWEEP_FILE)

    def variants(self, sweep: str) -> list:
        """
        The variants of a sweep, built from the ablation grids.
        """

        grid = self.config.ablation
        seed = self.config.run.seed

        if sweep == "lambda":
            variants = []
            if grid.lambdas:
                variants.append(
                    Variant(
                        sweep,
                        "baseline",
                        {"detector.boxmask_enabled": False},
                        {"variant": "baseline", "lambda": 0.0},
                        seed,
                    )
                )
            for value in grid.lambdas:
                variants.append(
                    Variant(
                        sweep,
                        f"lambda_{value}",
                        {"detector.boxmask_enabled": True, "detector.lambda_bm": value},
                        {"variant": "boxmask", "lambda": value},
                        seed,
                    )
                )
            return variants

        if sweep == "n_conv":
            return [
                Variant(sweep, f"n_conv_{n}", {"detector.n_conv": n}, {"n_conv": n}, seed)
                for n in grid.n_convs
            ]

        if sweep == "roi_size":
            variants = []
            for value in grid.roi_sizes:
                roi_size, up_size = parse_roi_size(value)
                variants.append(
                    Variant(
                        sweep,
                        f"roi_{roi_size}x{up_size}",
                        {"detector.roi_size": roi_size, "detector.up_size": up_size},
                        {"roi_size": roi_size, "up_size": up_size},
                        seed,
                    )
                )
            return variants

        if sweep == "sampling":
            plans = []
            for mode in grid.sampling_modes:
                for T in grid.support_counts:
                    strides = grid.strides if mode == "strided" else (1,)
                    for S in strides:
                        plans.append(replace(self.config.sampling, mode=mode, T=T, S=S))

            if not plans:
                return []

            # trained once, evaluated with every plan
            return [Variant(sweep, "sampling", {}, {}, seed, tuple(plans))]

        if sweep == "effectiveness":
            variants = []
            for s in grid.seeds:
                for arm, enabled in (("baseline", False), ("boxmask", True)):
                    variants.append(
                        Variant(
                            sweep,
                            f"{arm}_seed_{s}",
                            {"detector.boxmask_enabled": enabled},
                            {"seed": s, "arm": arm},
                            s,
                        )
                    )
            return variants

        raise ValueError(f"Sweep {sweep} is not recognised")

    def run_sweep(self, sweep: str, workers: int = 1) -> pd.DataFrame:
        """
        Train every variant of a sweep and tabulate the results.
        """

        variants = self.variants(sweep)

        if not variants:
            raise ValueError(f"Sweep {sweep} has no variants")

        args = [(self.config.to_text(), v, self.run_dir, False) for v in variants]
        desc = f"Sweep {sweep}"

        if workers > 1:
            processes = max(1, min(workers, len(variants), self.nthreads))
            with Pool(processes) as mpool:
                results = list(
                    progress_bar(
                        mpool.imap(run_variant, args),
                        total=len(args),
                        desc=desc,
                        disable=not self.verbose,
                    )
                )
        else:
            results = [
                run_variant(a) for a in progress_bar(args, desc=desc, disable=not self.verbose)
            ]

        rows = [row for variant_rows in results for row in variant_rows]

        if sweep == "sampling":
            plans = variants[0].plans
            for row, plan in zip(rows, plans):
                row.update({"mode": plan.mode, "T": plan.T, "S": plan.S})

        table = pd.DataFrame(rows)
        leading = [c for c in table.columns if c not in METRIC_COLUMNS]
        table = table[leading + list(METRIC_COLUMNS)]

        self._store(sweep, table)

        if sweep == "effectiveness":
            self._store("effectiveness_deltas", effectiveness_deltas(table))

        return table

    def _store(self, name: str, table: pd.DataFrame):

        self.tables[name] = table
        write_sweep(self.sweep_file, name, table, DESCRIPTIONS.get(name, ""))

        os.makedirs(os.path.join(self.run_dir, "tables"), exist_ok=True)
        with open(os.path.join(self.run_dir, "tables", f"{name}.txt"), "w") as f:
            f.write(f"# {DESCRIPTIONS.get(name, name)}\n")
            f.write(table.to_string(index=False, float_format=lambda v: f"{v:.4f}") + "\n")

        if self.verbose:
            print(table.to_string(index=False))

    def plot(self):
        """
        One figure per stored sweep table.
        """

        figure_dir = os.path.join(self.run_dir, "figures")
        os.makedirs(figure_dir, exist_ok=True)

        for name, table in self.tables.items():
            filename = os.path.join(figure_dir, f"{name}.png")

            if name == "sampling":
                plot_sampling_curves(table, filename)
            elif name != "effectiveness_deltas":
                plot_sweep(name, table, filename)

    def run(
        self,
        sweeps: Optional[Sequence[str]] = None,
        workers: Optional[int] = None,
        force: bool = False,
    ) -> dict:
        """
        Run the sweeps, all of them by default, and plot their tables.

        :param sweeps: names from SWEEPS, config.ablation.sweep if not given
        :param workers: processes, config.ablation.workers if not given
        :param force: allow reusing a non-empty run directory
        """

        if sweeps is None:
            sweep = self.config.ablation.sweep
            sweeps = SWEEPS if sweep == "all" else (sweep,)

        if not sweeps:
            raise ValueError("No sweep to run")

        workers = workers or self.config.ablation.workers

        if os.path.isdir(self.run_dir) and os.listdir(self.run_dir) and not force:
            raise FileExistsError(
                f"Run directory {self.run_dir} is not empty, use --force to overwrite"
            )

        os.makedirs(self.run_dir, exist_ok=True)
        self.config.save(os.path.join(self.run_dir, "config.txt"))

        for sweep in sweeps:
            if self.verbose:
                print(f"Running {sweep} sweep...")
            self.run_sweep(sweep, workers)

        self.plot()

        if self.verbose:
            print("Done!")

        return self.tables
