"""lochrig: locally rigid regularizing-field dynamics, Dirac spectral kernels,
and the first- and second-order matter-creation rate formulas in flat spacetime,
with independent quadrature oracles for every closed form."""

__version__ = "0.1.0"
