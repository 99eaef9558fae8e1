#pragma once

#include <string>

#include "core/error.hpp"
#include "core/tensor.hpp"

namespace pistm {

enum class FieldSource { Simulation, Koopman, Emulated };

std::string to_string(FieldSource s);
FieldSource field_source_from_string(const std::string& s);

// Time-ordered stack of 2D velocity-magnitude fields. fields is [n_t, H, W];
// frame i carries time index t_start + i.
struct FlowFieldSequence {
  Tensor fields{Shape{1, 1, 1}};
  long t_start = 0;
  FieldSource source = FieldSource::Simulation;

  std::size_t frames() const { return fields.dim(0); }
  std::size_t height() const { return fields.dim(1); }
  std::size_t width() const { return fields.dim(2); }
  long t_end() const { return t_start + static_cast<long>(frames()) - 1; }

  // Copy of one frame as an [H, W] tensor; t is an absolute time index.
  Tensor frame_at(long t) const {
    if (t < t_start || t > t_end()) {
      throw ContractError("time index " + std::to_string(t) +
                          " outside sequence range [" + std::to_string(t_start) +
                          ", " + std::to_string(t_end()) + "]");
    }
    const std::size_t i = static_cast<std::size_t>(t - t_start);
    const std::size_t hw = height() * width();
    Tensor out({height(), width()});
    const double* src = fields.data() + i * hw;
    for (std::size_t j = 0; j < hw; ++j) out[j] = src[j];
    return out;
  }
};

inline std::string to_string(FieldSource s) {
  switch (s) {
    case FieldSource::Simulation: return "simulation";
    case FieldSource::Koopman: return "koopman";
    case FieldSource::Emulated: return "emulated";
  }
  throw ContractError("unknown field source tag");
}

inline FieldSource field_source_from_string(const std::string& s) {
  if (s == "simulation") return FieldSource::Simulation;
  if (s == "koopman") return FieldSource::Koopman;
  if (s == "emulated") return FieldSource::Emulated;
  throw ContractError("unknown field source tag: " + s);
}

}  // namespace pistm
