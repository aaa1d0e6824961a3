"""Physical constants (SI, 2019 exact definitions)."""

from types import MappingProxyType

AVOGADRO = 6.02214076e23  # 1/mol
BOLTZMANN = 1.380649e-23  # J/K
STEFAN_BOLTZMANN = 5.670374419e-8  # W/m^2 K^4
GAS_CONSTANT = AVOGADRO * BOLTZMANN  # J/mol K
SPEED_OF_LIGHT = 2.99792458e8  # m/s
STANDARD_ATMOSPHERE = 101325.0  # Pa

CONSTANTS = MappingProxyType(
    {
        "N_A": AVOGADRO,
        "k_b": BOLTZMANN,
        "sigma_SB": STEFAN_BOLTZMANN,
        "R_gas": GAS_CONSTANT,
        "c_light": SPEED_OF_LIGHT,
    }
)
