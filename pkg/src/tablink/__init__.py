"""Entity linking for table cells in scientific papers.

Sub-modules, in pipeline order: :mod:`tablink.kb` (target knowledge base),
:mod:`tablink.corpus` (annotated documents and folds), :mod:`tablink.context`
(cell/paper/entity representations), :mod:`tablink.encoder` (encoder core and
training objectives), :mod:`tablink.ctc` / :mod:`tablink.asm` /
:mod:`tablink.cer` / :mod:`tablink.ed` (the four sub-tasks),
:mod:`tablink.evaluation` (metrics) and :mod:`tablink.pipeline` +
:mod:`tablink.cli` (orchestration).
"""

__version__ = "0.1.0"
