"""P1 finite-element model of frictional contact with wear, damage and memory."""

from .mesh import CLAMPED, CONTACT, TRACTION, Mesh, parse_mesh, read_mesh, rectangle, write_mesh
from .model import (ContactModel, ContactOperators, MarginWarning, assemble_spaces,
                    compile_model, complementarity, damage_source, damage_source_values,
                    discrete_constants, discretize, functional_j, normal_compliance,
                    normal_compliance_difference, wear_rhs)

compile = compile_model

__all__ = [
    "CLAMPED", "CONTACT", "TRACTION", "Mesh", "parse_mesh", "read_mesh", "rectangle",
    "write_mesh", "ContactModel", "ContactOperators", "MarginWarning", "assemble_spaces",
    "compile_model", "compile", "complementarity", "damage_source", "damage_source_values",
    "discrete_constants", "discretize", "functional_j", "normal_compliance",
    "normal_compliance_difference", "wear_rhs",
]
