__version__ = "0.1.0"

from .defs import CouplingMode, RowTag
from .instance import GeneratorConfig, Instance, VariableLayout, Weights, generate, paper_example_instance
