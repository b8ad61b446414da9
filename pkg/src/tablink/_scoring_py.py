"""Pure-numpy fallback for the compiled scoring kernel.

Mirrors the contract of ``tablink._scoring`` exactly; which one is active is
decided at import time in :mod:`tablink.lexical`.
"""

import numpy as np

IMPLEMENTATION = "numpy"


def scatter_add(doc_idx, contribs, weight, scores):
    """scores[doc_idx[i]] += weight * contribs[i] for every posting i.

    ``doc_idx`` may contain repeated indices; accumulation must honour all of
    them, hence ``np.add.at`` rather than fancy-index assignment.
    """
    np.add.at(scores, doc_idx, weight * contribs)
