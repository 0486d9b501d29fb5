"""Seeded simulator of tufted conductive-pile textile sensors."""

from .electrical import (DielectricState, ReadoutConfig, divider_voltage,
                         effective_permittivity, normalized_delta, sensor_capacitance,
                         snr_db)
from .geometry import (Bending, BendDirection, Compression, PileModel, PileShape, Rest,
                       SensorSpec, Strain, StrainAxis, YarnSpec, build_pile_model, deform)
from .network import (OpenCircuit, assemble_network, detect_contacts,
                      equivalent_resistance)
from .protocol import (BendingSweep, CompressionSweep, HumidityTest, Protocol,
                       ProtocolResult, TensileSweep, paper_suite, preset, run_protocol)

__version__ = "0.1.0"
