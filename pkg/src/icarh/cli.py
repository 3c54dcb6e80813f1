"""
Command-line interface for iCARH tools.

This module provides the icarh-simulate, icarh-fit, icarh-diagnose,
icarh-perturbation and icarh-calibrate-tau commands. Exit codes: 0 success,
2 invalid input, 3 numerical failure, 4 I/O problem, 1 anything else.
"""

import argparse
import json
import sys
from argparse import ArgumentParser
from dataclasses import dataclass
from pathlib import Path

from .analysis import (
    PPC_REPLICATE_AXIS,
    beta_summary,
    design_misspecification,
    phi_difference_test,
    phi_group_summary,
    ppc_mad,
    treatment_summary,
    waic,
    whitened_residuals,
)
from .baseapp import BaseApp
from .car import PathwayDesign, build_pathway_design, design_report
from .data import Dataset, PathwayGraph, load_dataset, load_pathways, standardize, write_dataset, write_pathways
from .exceptions import IcarhIOError, IcarhValidationError
from .manifest import RunManifest
from .model import IcarhModel, ModelConfig
from .sampler import PosteriorDraws, SamplerConfig, diagnostics, run_hmc, summarize
from .shrinkage import calibrate_tau, kappa_density_curve
from .simulator import SimulationConfig, load_truth, simulate_replicates

MODEL_FILE = 'model.json'
DEFAULT_PPC_COUNTS = (4, 8, 12, 16, 20)


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _write_json(path: Path, document: dict) -> Path:
    path.write_text(json.dumps(document, indent=2, default=_json_default), encoding='utf-8')
    return path


def _json_default(value):
    if hasattr(value, 'item'):
        return value.item()
    if hasattr(value, 'tolist'):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


@dataclass
class FitOutputs:
    """Everything icarh-fit leaves in its output directory, reloaded."""
    directory: Path
    data: Dataset
    graph: PathwayGraph
    design: PathwayDesign
    model_cfg: ModelConfig
    draws: PosteriorDraws


def load_fit(fit_dir: str) -> FitOutputs:
    directory = Path(fit_dir)
    if not (directory / MODEL_FILE).exists():
        raise IcarhIOError(f"{directory} has no {MODEL_FILE}; run icarh-fit with --output-dir {directory} first")
    data = load_dataset(directory / 'data.csv')
    graph = load_pathways(directory / 'pathways.json', data)
    settings = json.loads((directory / MODEL_FILE).read_text(encoding='utf-8'))
    return FitOutputs(directory, data, graph, build_pathway_design(graph),
                      ModelConfig.from_dict(settings['model']), PosteriorDraws.read(directory))


class IcarhSimulateCli(BaseApp):
    """Generate synthetic iCARH datasets with ground truth."""
    prog = 'icarh-simulate'

    def add_arg_definitions(self, parser: ArgumentParser) -> None:
        """Add argument definitions to the parser."""
        super().add_arg_definitions(parser)
        self.add_arg_definitions_output(parser)
        self.add_arg_definitions_threads(parser)
        self.add_arg_definitions_replay(parser)

        parser.add_argument(
            '-c',
            '--config',
            type=str,
            default=None,
            help='SimulationConfig JSON file (default: built-in settings N=22, T=7, M=40, K=1, P=11, tau=1.2)'
        )

        parser.add_argument('--replicates', type=int, default=None, help='Number of datasets (overrides config)')
        parser.add_argument('--seed', type=int, default=None, help='Root seed (overrides config)')
        parser.add_argument('--corruption', type=float, default=None,
                            help='Fraction y of falsely assigned pathway members (overrides config)')

    def go(self, argv: list) -> int:
        """Main execution method."""
        code = super().go(argv)
        if code:
            return code

        try:
            values = self.get_configuration(self.args.config) if self.args.config else {}
            overrides = {'replicates': self.args.replicates, 'seed': self.args.seed,
                         'corruption': self.args.corruption}
            values = dict(values, **{k: v for k, v in overrides.items() if v is not None})
            cfg = SimulationConfig.from_dict(values)

            out = self.prepare_output_dir(self.args.output_dir)
            manifest = RunManifest('simulate', self.argv, config=cfg.to_dict(), seed=cfg.seed)
            if self.args.config:
                manifest.record_input(Path(self.args.config))

            replicates = simulate_replicates(cfg, n_jobs=self.threads())
            for i, replicate in enumerate(replicates):
                target = out if len(replicates) == 1 else out / f"replicate_{i + 1:02d}"
                for path in replicate.write(target):
                    manifest.record_output(path, out)
                flags = replicate.truth.perturbed
                self.logger.info(f"Wrote {target}: {sum(flags.values())} of {len(flags)} pathway(s) perturbed")
            manifest.write(out)
            return 0

        except Exception as e:
            return self.handle_error(e)


def main_simulate():
    """Entry point for icarh-simulate command."""
    app = IcarhSimulateCli()
    return app.go(sys.argv[1:])


class IcarhFitCli(BaseApp):
    """Fit the iCARH model by Hamiltonian Monte Carlo."""
    prog = 'icarh-fit'

    def add_arg_definitions(self, parser: ArgumentParser) -> None:
        """Add argument definitions to the parser."""
        super().add_arg_definitions(parser)
        self.add_arg_definitions_output(parser)
        self.add_arg_definitions_threads(parser)
        self.add_arg_definitions_replay(parser)

        parser.add_argument('-d', '--data', type=str, required=True, help='Long-format data CSV')
        parser.add_argument('-p', '--pathways', type=str, required=True, help='Pathway JSON file')

        model = parser.add_argument_group('model')
        shrinkage = model.add_mutually_exclusive_group()
        shrinkage.add_argument('--tau', type=float, default=1.0,
                               help='Student-t degrees of freedom of the horseshoe scales (default: 1.0)')
        shrinkage.add_argument('--calibrate-target', type=float, default=None,
                               help='Choose tau so that the expected shrinkage equals this value')
        model.add_argument('--psi', type=float, default=None,
                           help='Shape of the inverse-gamma prior on sigma2 (default: N*T/4)')
        model.add_argument('--two-group', action=argparse.BooleanOptionalAction, default=True,
                           help='Separate phi for cases and controls (default: on)')
        model.add_argument('--treatment-covariate', type=str, default=None, metavar='NAME',
                           help='Covariate used as the treatment profile in the metabolite mean')
        model.add_argument('--phi-prior', type=str, choices=['beta', 'uniform'], default='beta',
                           help='Prior on phi over its admissible interval (default: beta)')
        model.add_argument('--non-centered', action=argparse.BooleanOptionalAction, default=True,
                           help='Non-centered subject and temporal effects (default: on)')

        sampler = parser.add_argument_group('sampler')
        sampler.add_argument('--iter', type=int, default=2000, help='Iterations per chain, warmup included (default: 2000)')
        sampler.add_argument('--warmup', type=int, default=1000, help='Warmup iterations (default: 1000)')
        sampler.add_argument('--chains', type=int, default=4, help='Number of chains (default: 4)')
        sampler.add_argument('--seed', type=int, default=0, help='Root seed (default: 0)')
        sampler.add_argument('--leapfrog-steps', type=int, default=16, help='Leapfrog steps per iteration (default: 16)')
        sampler.add_argument('--trajectory-length', type=float, default=None,
                             help='Target trajectory length; overrides --leapfrog-steps')
        sampler.add_argument('--target-accept', type=float, default=0.8, help='Target acceptance (default: 0.8)')
        sampler.add_argument('--thin', type=int, default=1, help='Keep every n-th draw (default: 1)')
        sampler.add_argument('--gradient-check', action=argparse.BooleanOptionalAction, default=True,
                             help='Finite-difference gradient self-check at the starting point (default: on)')

        parser.add_argument('--standardize', action=argparse.BooleanOptionalAction, default=True,
                            help='Scale every metabolite and covariate to mean 0, variance 1 (default: on)')
        parser.add_argument('--dump-design', action='store_true', help='Also write design.json (A_p, G_p, S_p, bounds)')

    def go(self, argv: list) -> int:
        """Main execution method."""
        code = super().go(argv)
        if code:
            return code

        try:
            args = self.args
            out = self.prepare_output_dir(args.output_dir)
            manifest = RunManifest('fit', self.argv, seed=args.seed)
            manifest.record_input(Path(args.data))
            manifest.record_input(Path(args.pathways))

            data = load_dataset(args.data)
            scaling = None
            if args.standardize:
                data, scaling = standardize(data)
            graph = load_pathways(args.pathways, data)
            design = build_pathway_design(graph)
            tau = calibrate_tau(args.calibrate_target) if args.calibrate_target is not None else args.tau
            model_cfg = ModelConfig(tau=tau, psi=args.psi, two_group=args.two_group,
                                    treatment_covariate=args.treatment_covariate, phi_prior=args.phi_prior,
                                    non_centered=args.non_centered)
            sampler_cfg = SamplerConfig(iterations=args.iter, warmup=args.warmup, chains=args.chains,
                                        seed=args.seed, leapfrog_steps=args.leapfrog_steps,
                                        trajectory_length=args.trajectory_length,
                                        target_accept=args.target_accept, thin=args.thin,
                                        gradient_check=args.gradient_check)
            model = IcarhModel(data, design, model_cfg)
            self.logger.info(f"{data!r}, P={design.n_pathways}, {sampler_cfg.iterations} iterations "
                             f"({sampler_cfg.warmup} warmup), tau={model.cfg.tau:.6g}")

            written = []
            write_dataset(data, out / 'data.csv')
            write_pathways(graph, out / 'pathways.json')
            written += [out / 'data.csv', out / 'pathways.json']
            settings = {'model': model.cfg.to_dict(), 'sampler': sampler_cfg.to_dict(),
                        'standardized': args.standardize,
                        'scaling': scaling.to_dict() if scaling is not None else None}
            written.append(_write_json(out / MODEL_FILE, settings))
            if args.dump_design:
                written.append(_write_json(out / 'design.json', design_report(design)))

            draws = run_hmc(model, sampler_cfg, n_jobs=min(self.threads(), sampler_cfg.chains))
            written += draws.write(out)
            summary = summarize(draws, diagnostics(draws))
            written.append(_write_json(out / 'summary.json', summary))

            if summary['divergence_warning']:
                manifest.warnings.append(f"divergence rate {summary['divergence_rate']:.1%}")
            if summary['rhat_flagged']:
                manifest.warnings.append(f"{len(summary['rhat_flagged'])} parameter(s) with R-hat above 1.05")
            if not summary['rhat_available']:
                manifest.warnings.append("R-hat unavailable")
            manifest.config = settings
            for path in written:
                manifest.record_output(path, out)
            manifest.write(out)
            return 0

        except Exception as e:
            return self.handle_error(e)


def main_fit():
    """Entry point for icarh-fit command."""
    app = IcarhFitCli()
    return app.go(sys.argv[1:])


class IcarhDiagnoseCli(BaseApp):
    """Model diagnostics of a fit: WAIC, posterior predictive covariance check, whitened residuals."""
    prog = 'icarh-diagnose'

    def add_arg_definitions(self, parser: ArgumentParser) -> None:
        """Add argument definitions to the parser."""
        super().add_arg_definitions(parser)
        self.add_arg_definitions_threads(parser)

        parser.add_argument('fit_dir', type=str, help='Output directory of icarh-fit')
        parser.add_argument('-o', '--output-dir', type=str, default=None,
                            help='Directory for the reports (default: the fit directory)')
        parser.add_argument('--force', action='store_true', help='Write into a non-empty output directory')
        parser.add_argument('--ppc-counts', type=_int_list, default=list(DEFAULT_PPC_COUNTS),
                            help='Metabolite counts for the covariance check (default: 4,8,12,16,20)')
        parser.add_argument('--ppc-replicates', type=int, default=100,
                            help='Posterior predictive replicates (default: 100)')
        parser.add_argument('--seed', type=int, default=0, help='Seed for predictive simulation (default: 0)')
        parser.add_argument('--level', type=float, default=0.95, help='Credible level (default: 0.95)')
        parser.add_argument('--misspecification-threshold', type=float, default=0.3,
                            help='|correlation| above which an unshared metabolite pair counts (default: 0.3)')

    def go(self, argv: list) -> int:
        """Main execution method."""
        code = super().go(argv)
        if code:
            return code

        try:
            fit = load_fit(self.args.fit_dir)
            out = self.prepare_output_dir(self.args.output_dir) if self.args.output_dir else fit.directory
            manifest = RunManifest('diagnose', self.argv, seed=self.args.seed,
                                   config={'model': fit.model_cfg.to_dict()})
            written = []

            result = waic(fit.draws, fit.data, fit.design, fit.model_cfg, n_jobs=self.threads())
            written.append(_write_json(out / 'waic.json', result.to_dict()))
            result.pointwise.to_csv(out / 'waic_pointwise.csv', index=False)
            written.append(out / 'waic_pointwise.csv')

            m = fit.data.n_metabolites
            counts = [c for c in self.args.ppc_counts if 2 <= c <= m] or ([m] if m >= 2 else [])
            if counts:
                mad = ppc_mad(fit.draws, fit.data, fit.design, fit.model_cfg, counts,
                              replicates=self.args.ppc_replicates, seed=self.args.seed)
                mad['replicate_axis'] = PPC_REPLICATE_AXIS
                mad.to_csv(out / 'ppc_mad.csv', index=False)
                written.append(out / 'ppc_mad.csv')
            else:
                self.logger.warning("Covariance check skipped: fewer than 2 metabolites")

            for group, result in whitened_residuals(fit.draws, fit.data, fit.design, fit.model_cfg).items():
                path = out / f"qq_{group}.csv"
                result['qq'].to_csv(path, index=False)
                written.append(path)

            beta_summary(fit.draws, fit.model_cfg.tau, self.args.level).to_csv(out / 'beta_summary.csv')
            written.append(out / 'beta_summary.csv')
            diagnostics(fit.draws).table.to_csv(out / 'diagnostics.csv')
            written.append(out / 'diagnostics.csv')
            written.append(_write_json(out / 'misspecification.json',
                                       design_misspecification(fit.data, fit.graph, self.args.misspecification_threshold)))

            for path in written:
                manifest.record_output(path, out)
            manifest.write(out)
            return 0

        except Exception as e:
            return self.handle_error(e)


def main_diagnose():
    """Entry point for icarh-diagnose command."""
    app = IcarhDiagnoseCli()
    return app.go(sys.argv[1:])


class IcarhPerturbationCli(BaseApp):
    """Pathway perturbation test phi^controls - phi^cases, with ROC/AUC against a truth file."""
    prog = 'icarh-perturbation'

    def add_arg_definitions(self, parser: ArgumentParser) -> None:
        """Add argument definitions to the parser."""
        super().add_arg_definitions(parser)

        parser.add_argument('fit_dir', type=str, help='Output directory of icarh-fit')
        parser.add_argument('-t', '--truth', type=str, default=None, help='truth.json written by icarh-simulate')
        parser.add_argument('--level', type=float, default=0.95, help='Credible level (default: 0.95)')
        parser.add_argument('-o', '--output-dir', type=str, default=None,
                            help='Directory for the reports (default: the fit directory)')
        parser.add_argument('--force', action='store_true', help='Write into a non-empty output directory')

    def go(self, argv: list) -> int:
        """Main execution method."""
        code = super().go(argv)
        if code:
            return code

        try:
            fit = load_fit(self.args.fit_dir)
            out = self.prepare_output_dir(self.args.output_dir) if self.args.output_dir else fit.directory
            manifest = RunManifest('perturbation', self.argv, config={'level': self.args.level})
            truth = None
            if self.args.truth:
                truth = load_truth(Path(self.args.truth))
                manifest.record_input(Path(self.args.truth))

            report = phi_difference_test(fit.draws, self.args.level, truth)
            written = [_write_json(out / 'perturbation.json', report.to_dict())]
            if report.roc is not None:
                report.roc.to_csv(out / 'roc.csv', index=False)
                written.append(out / 'roc.csv')
                self.logger.info(f"AUC {report.auc:.4f}")
            phi_group_summary(fit.draws, self.args.level).to_csv(out / 'phi_groups.csv')
            written.append(out / 'phi_groups.csv')
            if fit.model_cfg.treatment_covariate:
                treatment_summary(fit.draws, self.args.level).to_csv(out / 'treatment.csv')
                written.append(out / 'treatment.csv')

            for path in written:
                manifest.record_output(path, out)
            manifest.write(out)
            return 0

        except Exception as e:
            return self.handle_error(e)


def main_perturbation():
    """Entry point for icarh-perturbation command."""
    app = IcarhPerturbationCli()
    return app.go(sys.argv[1:])


class IcarhCalibrateTauCli(BaseApp):
    """Find tau giving a target expected shrinkage E(kappa)."""
    prog = 'icarh-calibrate-tau'

    def add_arg_definitions(self, parser: ArgumentParser) -> None:
        """Add argument definitions to the parser."""
        super().add_arg_definitions(parser)

        parser.add_argument('--target', type=float, required=True, help='Expected shrinkage in (0, 1)')
        parser.add_argument('--sigma-beta', type=float, default=1.0, help='sigma_beta (default: 1.0)')
        parser.add_argument('--curve-output', type=str, default=None,
                            help='Also write tabulated kappa prior densities to this CSV file')
        parser.add_argument('--curve-taus', type=_float_list, default=None,
                            help='tau values for the density table (default: 1,1.2,5,10 and the calibrated tau)')

    def go(self, argv: list) -> int:
        """Main execution method."""
        code = super().go(argv)
        if code:
            return code

        try:
            tau = calibrate_tau(self.args.target, self.args.sigma_beta)
            print(f"{tau:.10g}")
            if self.args.curve_output:
                taus = self.args.curve_taus or [1.0, 1.2, 5.0, 10.0, tau]
                if any(t <= 0 for t in taus):
                    raise IcarhValidationError("--curve-taus values must be positive")
                kappa_density_curve(taus, [self.args.sigma_beta]).to_csv(self.args.curve_output, index=False)
                self.logger.info(f"Wrote kappa densities to {self.args.curve_output}")
            return 0

        except Exception as e:
            return self.handle_error(e)


def main_calibrate_tau():
    """Entry point for icarh-calibrate-tau command."""
    app = IcarhCalibrateTauCli()
    return app.go(sys.argv[1:])
