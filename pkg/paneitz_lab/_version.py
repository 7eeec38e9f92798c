# Copyright (c) 2025, paneitz-lab developers.
# SPDX-License-Identifier: Apache-2.0

import importlib.resources


def _read_package_file(name, default=None):
    """Read a small text file shipped next to this module.

    ``GIT_COMMIT`` only exists in built distributions, so a missing file
    falls back to ``default`` when one is given.
    """
    resource = importlib.resources.files(__package__).joinpath(name)
    try:
        return resource.read_text().strip()
    except FileNotFoundError:
        if default is None:
            raise
        return default


__version__ = _read_package_file("VERSION")
__git_commit__ = _read_package_file("GIT_COMMIT", default="")

__all__ = ["__git_commit__", "__version__"]
