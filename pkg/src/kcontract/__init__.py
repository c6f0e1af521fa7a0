"""k-contraction analysis of generalized Lurie systems.

Submodules: ``expr`` (expression DSL), ``compound`` (compound matrices),
``spectral`` (eigen/singular-value kernels), ``model`` (systems and
metrics), ``certify`` (sufficient conditions and certificates), ``sim``
(trajectories and k-volumes) and ``cli``.
"""

__version__ = "0.1.0"
