# Tests for the icarh package
