"""Tests for icarh-calibrate-tau CLI."""

import pandas as pd
import pytest

from icarh.cli import IcarhCalibrateTauCli


@pytest.mark.unit
class TestIcarhCalibrateTauCli:
    """Tests for icarh-calibrate-tau command-line interface."""

    def test_beta_mean_inverse(self, capsys):
        """E(kappa) = 0.75 at sigma_beta = 1 is reached at tau = 3."""
        exit_code = IcarhCalibrateTauCli().go(['--target', '0.75', '--sigma-beta', '1', '-s'])

        assert exit_code == 0
        assert float(capsys.readouterr().out.strip()) == pytest.approx(3.0, abs=1e-3)

    def test_target_outside_unit_interval(self, capsys):
        """Targets outside (0, 1) are invalid input."""
        exit_code = IcarhCalibrateTauCli().go(['--target', '1.5', '-s'])

        assert exit_code == 2
        assert capsys.readouterr().out == ''

    def test_missing_target(self):
        """--target is required."""
        with pytest.raises(SystemExit) as excinfo:
            IcarhCalibrateTauCli().go(['-s'])

        assert excinfo.value.code == 2

    def test_curve_output(self, tmp_path):
        """The density table covers the requested tau values."""
        path = tmp_path / 'curve.csv'

        exit_code = IcarhCalibrateTauCli().go(['--target', '0.5', '--curve-output', str(path),
                                               '--curve-taus', '1,5', '-s'])

        assert exit_code == 0
        curve = pd.read_csv(path)
        assert sorted(curve['tau'].unique()) == [1.0, 5.0]
        assert (curve['density'] > 0).all()

    def test_curve_taus_must_be_positive(self, tmp_path):
        exit_code = IcarhCalibrateTauCli().go(['--target', '0.5', '--curve-output', str(tmp_path / 'c.csv'),
                                               '--curve-taus', '1,-2', '-s'])

        assert exit_code == 2
