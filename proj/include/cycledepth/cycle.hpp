#pragma once

#include <optional>

#include "cycledepth/networks.hpp"

namespace cycledepth {

// Everything produced by one pass around the synthesis cycle
// I_r -> d_l -> I_l_hat -> d_r -> I_r_hat -> inconsistency -> (d_l', I_l_hat').
// The refined fields are populated only when the teacher branch runs.
template <typename T>
struct CycleOutputs {
  ForwardOutputs<T> student;                      // d_l pyramid + xi
  Tensor<T> left_synth;                           // I_l_hat
  std::optional<ForwardOutputs<T>> backward_net;  // d_r pyramid
  Tensor<T> right_synth;                          // I_r_hat
  Tensor<T> inconsistency;                        // I_r - I_r_hat
  std::optional<ForwardOutputs<T>> refined;       // d_l' pyramid + xi'
  Tensor<T> left_synth_refined;                   // I_l_hat'
};

}  // namespace cycledepth
