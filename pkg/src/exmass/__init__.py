"""exmass: numerical workbench for quasi-local mass experiments on
asymptotically flat exterior domains.

Subpackage map (one bullet per concern):

* sphere geometry: :mod:`exmass.spheregrid`, :mod:`exmass.immersion`,
  :mod:`exmass.forms`
* exterior domains, curvature and masses: :mod:`exmass.extdomain`,
  :mod:`exmass.tensorcalc`, :mod:`exmass.masses`
* elliptic solves (conformal Laplacian): :mod:`exmass.kernels`,
  :mod:`exmass.mg`, :mod:`exmass.elliptic`
* boundary-derivative prescription: :mod:`exmass.prescribe`
* degenerating-family pipeline: :mod:`exmass.family`, :mod:`exmass.meridian`,
  :mod:`exmass.pipeline`
* scenario CLI and persistence: :mod:`exmass.scenario`, :mod:`exmass.fieldfile`,
  :mod:`exmass.report`, :mod:`exmass.cli`

Units: geometrized, G = c = 1; mass and length share units.
"""

__version__ = "0.1.0"
