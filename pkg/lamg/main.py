import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from lamg.database.dataset_store import DatasetStore
from lamg.exceptions import LamgError
from lamg.mesher.sizing import SizingNormalizer
from lamg.models.config_models import ExperimentConfig
from lamg.models.run_models import MethodTag, RunRecord
from lamg.nnet.network import NetParams
from lamg.nnet.serialization import load_params, save_params
from lamg.nnet.trainer import Trainer
from lamg.processor.dataset_generator import DatasetGenerator, corpus_sizes, load_boundaries, training_examples
from lamg.processor.experiment import ExperimentRunner
from lamg.processor.metrics import Evaluator, load_runs, records_frame
from lamg.utils.cache_manager import CacheManager
from lamg.utils.rng import Rng

logger = logging.getLogger(__name__)

BASELINES = [MethodTag.AMR, MethodTag.WOS, MethodTag.UNIFORM, MethodTag.AMG]


class LamgPipeline:
    def __init__(self, cfg: ExperimentConfig):
        """
        Initialize the pipeline

        Args:
            cfg (ExperimentConfig): Experiment settings, environment overrides applied
        """
        self.cfg = cfg
        self.output_dir = Path(cfg.output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.store = DatasetStore(str(self.output_dir / "dataset"), save_meshes=cfg.save_meshes)
        self.cache = CacheManager(os.getenv("LAMG_CACHE_DIR", str(self.output_dir / "cache")))
        self.params_path = self.output_dir / "params.bin"

    def generate(self, seed: int) -> int:
        """Generate and persist the training corpus; returns the failed problem count"""
        records = DatasetGenerator(self.cfg, self.store).generate(Rng(seed))
        return self.cfg.n_problems - len(records)

    def train(self, seed: int) -> int:
        """
        Train on the stored corpus and save the parameters with their normalization.

        Args:
            seed (int): Training stream seed

        Returns:
            int: Number of stored problems that could not be loaded
        """
        boundaries = load_boundaries(self.cfg)
        records = []
        failures = 0
        for problem_id in self.store.problem_ids():
            try:
                records.append(self.store.load_record(problem_id, boundaries))
            except (OSError, KeyError, ValueError) as e:
                logger.error(f"Error loading problem {problem_id}: {str(e)}")
                failures += 1
        if not records:
            raise LamgError(f"no training problems under {self.store.root}")

        normalizer = SizingNormalizer.fit(corpus_sizes(records))
        self.store.save_normalizer(normalizer)
        examples = training_examples(records, normalizer, self.cfg.train.k_neighbors)
        trainer = Trainer(self.cfg.train, self.cfg.model_preset)
        params = trainer.train(examples, Rng(seed))
        params.normalizer = normalizer
        save_params(str(self.params_path), params)
        trainer.save_curve(str(self.output_dir / "training_curve.csv"))
        return failures

    def load_params(self, path: Optional[str] = None) -> NetParams:
        """Trained parameters; older files without a size normalization take the corpus one"""
        params = load_params(path or str(self.params_path))
        if params.normalizer is None:
            logger.warning(f"Parameters at {path or self.params_path} carry no normalization, using the corpus normalizer")
            params.normalizer = self.store.load_normalizer()
        return params

    def _save_runs(self, records: List[RunRecord], name: str) -> Path:
        path = self.output_dir / f"runs_{name}.csv"
        records_frame(records).to_csv(path, index=False, float_format="%.17g")
        logger.info(f"Wrote {len(records)} runs to {path}")
        return path

    def run(self, seed: int, eta: Optional[float] = None, sweep: Optional[str] = None,
            params_path: Optional[str] = None, export_fields: bool = False) -> int:
        """LAMG on the held-out problems, optionally sweeping eta, m or n"""
        params = self.load_params(params_path)
        runner = ExperimentRunner(self.cfg.model_copy(update={"eval_seed": seed}), cache=self.cache,
                                  field_dir=str(self.output_dir / "fields") if export_fields else None)
        problems = runner.heldout_problems()
        if sweep:
            records, failures = runner.collect(problems, lambda p: runner.run_lamg_sweep(p, params, sweep))
            self._save_runs(records, f"lamg_{sweep}")
        else:
            records, failures = runner.collect(problems, lambda p: [runner.run_lamg(p, params, eta=eta)[1]])
            self._save_runs(records, "lamg")
        return failures

    def baseline(self, seed: int, methods: List[MethodTag]) -> int:
        runner = ExperimentRunner(self.cfg.model_copy(update={"eval_seed": seed}), cache=self.cache)
        problems = runner.heldout_problems()
        failures = 0
        for method in methods:
            if method == MethodTag.UNIFORM:
                records, failed = runner.collect(problems, runner.run_uniform_sweep)
            else:
                records, failed = runner.collect(problems, lambda p, m=method: [runner.run_baseline(p, m)[1]])
            self._save_runs(records, method.value)
            failures += failed
        return failures

    def report(self) -> int:
        frame = load_runs(sorted(str(p) for p in self.output_dir.glob("runs_*.csv")))
        if frame.empty:
            logger.error(f"No run tables found in {self.output_dir}")
            return 1
        Evaluator(str(self.output_dir / "report")).evaluate_frame(frame)
        return 0


def load_config(path: Optional[str]) -> ExperimentConfig:
    """Config file (or defaults) with environment overrides from .env"""
    cfg = ExperimentConfig.from_file(path) if path else ExperimentConfig()
    overrides = {}
    if os.getenv("LAMG_OUTPUT_DIR"):
        overrides["output_dir"] = os.getenv("LAMG_OUTPUT_DIR")
    if os.getenv("LAMG_WORKERS"):
        overrides["workers"] = int(os.getenv("LAMG_WORKERS"))
    return ExperimentConfig(**{**cfg.model_dump(), **overrides}) if overrides else cfg


def setup_logging(output_dir: str) -> None:
    Path(output_dir).mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, os.getenv("LAMG_LOG_LEVEL", "INFO").upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(str(Path(output_dir) / "lamg.log")),
            logging.StreamHandler()
        ]
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Learned adaptive mesh generation for Poisson problems')
    subparsers = parser.add_subparsers(dest='command', required=True, help='Command to run')

    gen_parser = subparsers.add_parser('gen', help='Generate the training corpus')
    train_parser = subparsers.add_parser('train', help='Train the sizing network')
    run_parser = subparsers.add_parser('run', help='Run LAMG on held-out problems')
    run_parser.add_argument('--eta', '-e', type=float, default=None, help='Sizing field multiplier')
    run_parser.add_argument('--sweep', choices=['eta', 'm', 'n'], default=None, help='Sweep one setting')
    run_parser.add_argument('--params', '-p', type=str, default=None, help='Parameter file')
    run_parser.add_argument('--export-fields', action='store_true',
                            help='Write each predicted sizing field as a .pos background field')
    baseline_parser = subparsers.add_parser('baseline', help='Run baselines on held-out problems')
    baseline_parser.add_argument('--method', '-m', choices=[m.value for m in BASELINES], action='append',
                                 help='Baseline to run, repeatable; all by default')
    report_parser = subparsers.add_parser('report', help='Write tables and figures from stored runs')

    for sub, default_seed in ((gen_parser, 'dataset_seed'), (train_parser, 'train_seed'), (run_parser, 'eval_seed'),
                              (baseline_parser, 'eval_seed'), (report_parser, None)):
        sub.add_argument('--config', '-c', type=str, default=None, help='Experiment config (JSON)')
        sub.add_argument('--seed', '-s', type=int, default=None,
                         help=f'Seed, config {default_seed} by default' if default_seed else 'Unused; accepted for symmetry')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config)
    setup_logging(cfg.output_dir)
    pipeline = LamgPipeline(cfg)

    try:
        if args.command == 'gen':
            failures = pipeline.generate(cfg.dataset_seed if args.seed is None else args.seed)
        elif args.command == 'train':
            failures = pipeline.train(cfg.train_seed if args.seed is None else args.seed)
        elif args.command == 'run':
            failures = pipeline.run(cfg.eval_seed if args.seed is None else args.seed, args.eta, args.sweep, args.params,
                                    args.export_fields)
        elif args.command == 'baseline':
            methods = [MethodTag(m) for m in args.method] if args.method else BASELINES
            failures = pipeline.baseline(cfg.eval_seed if args.seed is None else args.seed, methods)
        else:
            failures = pipeline.report()
    except (LamgError, OSError) as e:
        logger.error(f"Error running {args.command}: {str(e)}")
        return 1

    if failures:
        logger.error(f"{args.command} finished with {failures} failed runs")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
