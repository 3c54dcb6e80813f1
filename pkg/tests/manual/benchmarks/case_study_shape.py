#!/usr/bin/env python3
"""
End-to-end run at the shape of a real metabolomics study.

Simulates N=24 subjects, T=9 time points, M=56 metabolites and K=6
covariates, then runs icarh-fit, icarh-diagnose and icarh-perturbation on
it. Every command must exit 0.
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path

from icarh.cli import IcarhDiagnoseCli, IcarhFitCli, IcarhPerturbationCli, IcarhSimulateCli


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument('--iter', type=int, default=400)
    parser.add_argument('--warmup', type=int, default=200)
    parser.add_argument('--workdir', type=str, default=None)
    args = parser.parse_args()

    root = Path(args.workdir or tempfile.mkdtemp(prefix='icarh-case-'))
    config = root / 'case.json'
    config.write_text(json.dumps({'dims': {'N': 24, 'T': 9, 'M': 56, 'K': 6, 'P': 11}, 'seed': 56}))

    steps = [
        (IcarhSimulateCli, ['-c', str(config), '-o', str(root / 'sim'), '--force']),
        (IcarhFitCli, ['-d', str(root / 'sim' / 'data.csv'), '-p', str(root / 'sim' / 'pathways.json'),
                       '-o', str(root / 'fit'), '--iter', str(args.iter), '--warmup', str(args.warmup),
                       '--chains', '2', '--threads', '2', '--force']),
        (IcarhDiagnoseCli, [str(root / 'fit'), '--ppc-replicates', '20']),
        (IcarhPerturbationCli, [str(root / 'fit'), '--truth', str(root / 'sim' / 'truth.json')]),
    ]
    for app, argv in steps:
        code = app().go(argv)
        print(f"{app.prog}: exit {code}")
        if code:
            sys.exit(code)
    print(f"outputs in {root}")


if __name__ == '__main__':
    main()
