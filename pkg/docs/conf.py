# -*- coding: utf-8 -*-
#
# Sphinx configuration for mbf_amen.
import os
import sys
import inspect

__location__ = os.path.join(
    os.getcwd(), os.path.dirname(inspect.getfile(inspect.currentframe()))
)
sys.path.insert(0, os.path.join(__location__, "../src"))

import sphinx_bootstrap_theme

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.intersphinx",
    "sphinx.ext.autosummary",
    "sphinx.ext.viewcode",
    "sphinx.ext.mathjax",
    "sphinx.ext.napoleon",
]

templates_path = ["_templates"]
source_suffix = [".rst"]
master_doc = "index"

project = u"mbf_amen"
copyright = u"2019, Florian Finkernagel"
version = ""
release = ""

exclude_patterns = ["_build"]
pygments_style = "sphinx"

html_theme = "bootstrap"
html_theme_path = sphinx_bootstrap_theme.get_html_theme_path()
html_theme_options = {
    "navbar_title": "mbf_amen",
    "globaltoc_depth": 2,
    "globaltoc_includehidden": "true",
    "source_link_position": "footer",
    "navbar_sidebarrel": False,
    "navbar_links": [],
}

try:
    from mbf_amen import __version__ as version
except ImportError:
    pass
else:
    release = version

html_static_path = []
html_show_sourcelink = False
htmlhelp_basename = "mbf_amen-doc"

latex_elements = {}
latex_documents = [
    ("index", "user_guide.tex", u"mbf_amen Documentation", u"Florian Finkernagel", "manual")
]

python_version = ".".join(map(str, sys.version_info[0:2]))
intersphinx_mapping = {
    "python": ("https://docs.python.org/" + python_version, None),
    "numpy": ("https://docs.scipy.org/doc/numpy", None),
    "pandas": ("https://pandas.pydata.org/pandas-docs/stable", None),
}
