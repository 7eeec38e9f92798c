# Configuration file for the Sphinx documentation builder.

import datetime

from paneitz_lab import __version__ as release

project = "paneitz-lab"
copyright = "2025-%s, paneitz-lab developers" % datetime.datetime.now().year
author = "paneitz-lab developers"
version = ".".join(release.split(".")[:2])

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.mathjax",
    "sphinx.ext.viewcode",
    "sphinx.ext.autosummary",
    "sphinx.ext.intersphinx",
    "numpydoc",
    "sphinx_click",
    "sphinx_rtd_theme",
]

numpydoc_show_class_members = False

source_suffix = ".rst"
master_doc = "index"
language = "en"

html_theme = "sphinx_rtd_theme"

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable", None),
    "scipy": ("https://docs.scipy.org/doc/scipy", None),
    "dask": ("https://docs.dask.org/en/stable", None),
}
