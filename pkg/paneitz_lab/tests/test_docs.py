# Copyright (c) 2025, paneitz-lab developers.

import doctest
import importlib

import pytest

from paneitz_lab import blowup


@pytest.mark.parametrize(
    "name", ["utils", "geometry", "paneitz", "greenfn", "variational", "blowup"]
)
def test_module_examples(name):
    module = importlib.import_module(f"paneitz_lab.{name}")
    failed, attempted = doctest.testmod(module, verbose=False)
    assert attempted > 0
    assert failed == 0


@pytest.mark.parametrize(
    "obj",
    [
        blowup.TestFnParams,
        blowup.test_function,
        blowup.test_function_derivative,
        blowup.testfn_mass_expansion,
    ],
)
def test_library_helpers_are_not_collected(obj):
    assert obj.__test__ is False
