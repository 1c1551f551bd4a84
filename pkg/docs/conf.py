# Configuration file for the Sphinx documentation builder.
# http://www.sphinx-doc.org/en/master/config

# -- Project information -----------------------------------------------------

project = 'fw-merging'
copyright = '2026, FW-Merging contributors'
author = 'FW-Merging contributors'

# The short X.Y version
version = '0.4'
# The full version, including alpha/beta/rc tags
release = '0.4.0rc0'


# -- General configuration ---------------------------------------------------

extensions = ['myst_parser']

templates_path = ['_templates']

source_suffix = {
    '.rst': 'restructuredtext',
    '.md': 'markdown',
}

master_doc = 'index'

language = 'en'

exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']

pygments_style = None


# -- Options for HTML output -------------------------------------------------

html_theme = 'sphinx_rtd_theme'
# html_theme = 'press'

html_static_path = ['.']

htmlhelp_basename = f'{project}-doc'


# -- Options for LaTeX output ------------------------------------------------

latex_documents = [
    (master_doc, f'{project}.tex', f'{project} Documentation', author, 'manual'),
]


# -- Options for manual page output ------------------------------------------

man_pages = [
    (master_doc, 'fw-merge', f'{project} Documentation', [author], 1)
]


# -- Options for Epub output -------------------------------------------------

epub_title = project
epub_exclude_files = ['search.html']
