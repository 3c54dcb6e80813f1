#!/usr/bin/env python
"""
Run the design-corruption benchmark grid through the CLI tools.

For every corruption fraction y and replicate, simulate a dataset, fit it
and score the perturbation test against the simulated truth. Failed runs
are reported by exit code and the grid continues. Writes auc_grid.csv
into the work directory.
"""

from argparse import ArgumentParser
import json
from pathlib import Path
import sys

import pandas as pd

from icarh.baseapp import BaseApp
from icarh.cli import IcarhFitCli, IcarhPerturbationCli, IcarhSimulateCli

FRACTIONS = '0,0.18,0.35,0.44,0.5,0.62'


class CorruptionGrid(BaseApp):
    """Simulate, fit and score datasets over a grid of corruption fractions."""
    prog = 'corruption_grid'

    def add_arg_definitions(self, parser: ArgumentParser) -> None:
        super().add_arg_definitions(parser)
        parser.add_argument('-w', '--workdir', type=str, required=True, help='directory for all runs')
        parser.add_argument('--fractions', type=str, default=FRACTIONS, help=f'corruption fractions (default: {FRACTIONS})')
        parser.add_argument('--replicates', type=int, default=10)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--iter', type=int, default=1000)
        parser.add_argument('--warmup', type=int, default=500)
        parser.add_argument('--chains', type=int, default=2)
        parser.add_argument('--phi-prior', type=str, choices=['beta', 'uniform'], default='beta')

# ------------------------------------------------------------------------------

    def run_cell(self, root: Path, y: float) -> list:
        sim = root / 'sim'
        code = IcarhSimulateCli().go(['-o', str(sim), '--replicates', str(self.args.replicates),
                                      '--seed', str(self.args.seed), '--corruption', str(y), '--force', '-s'])
        if code:
            self.logger.error(f"y={y}: icarh-simulate exited {code}")
            return []

        rows = []
        for i in range(1, self.args.replicates + 1):
            inputs = sim / f"replicate_{i:02d}" if self.args.replicates > 1 else sim
            fit = root / f"fit_{i:02d}"
            code = IcarhFitCli().go(['-d', str(inputs / 'data.csv'), '-p', str(inputs / 'pathways.json'),
                                     '-o', str(fit), '--iter', str(self.args.iter), '--warmup', str(self.args.warmup),
                                     '--chains', str(self.args.chains), '--phi-prior', self.args.phi_prior,
                                     '--seed', str(self.args.seed + i), '--force', '-s'])
            if not code:
                code = IcarhPerturbationCli().go([str(fit), '--truth', str(inputs / 'truth.json'), '-s'])
            auc = None
            if not code:
                auc = json.loads((fit / 'perturbation.json').read_text()).get('auc')
            rows.append({'corruption': y, 'replicate': i, 'exit_code': code, 'auc': auc})
            self.logger.info(f"y={y} replicate {i}: exit {code}, AUC {auc}")
        return rows

    def go(self, argv: list) -> int:
        code = super().go(argv)
        if code:
            return code

        workdir = Path(self.args.workdir)
        rows = []
        for y in (float(v) for v in self.args.fractions.split(',')):
            rows += self.run_cell(workdir / f"y_{y:g}", y)

        table = pd.DataFrame(rows)
        workdir.mkdir(parents=True, exist_ok=True)
        table.to_csv(workdir / 'auc_grid.csv', index=False)
        if not table.empty:
            print(table.groupby('corruption')['auc'].agg(['mean', 'std', 'count']).to_string())
        return 0

# ------------------------------------------------------------------------------
if __name__ == '__main__':
    app = CorruptionGrid()
    sys.exit(app.go(sys.argv[1:]))
