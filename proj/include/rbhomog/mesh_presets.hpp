#pragma once

#include <optional>

#include "rbhomog/mesh.hpp"

namespace rbhomog {

/// Geometry presets. Unit-cell presets live on [0,1]^2; the Cook membrane is
/// the standard tapered quadrilateral (0,0)-(48,44)-(48,60)-(0,44).
struct MeshSpec {
  enum class Preset { UnitSquare, Porous, Fiber, Cook };

  Preset preset = Preset::UnitSquare;
  int resolution = 0;                        // grid cells per side, 0 = preset default
  std::optional<ElementType> element_type;   // default: quad8 for fiber, quad4 otherwise
  double target_fraction = 0.0;              // pore/fiber area fraction, 0 = preset default
  bool periodic = false;                     // build periodic node pairing (unit cell presets)
  bool paper_scale = false;                  // use the full-size mesh resolution
};

/// Builds the preset mesh. Inclusion presets calibrate their radius so the
/// achieved area fraction lands within 0.5% of the target.
Mesh build_mesh(const MeshSpec& spec);

/// Measured pore fraction (porous: 1 - meshed area / cell area) or inclusion
/// fraction (fiber: phase-1 area / total area).
double measured_fraction(const Mesh& mesh);

}  // namespace rbhomog
