#pragma once

#include <stdexcept>
#include <string>

namespace hermite_flow {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A student neuron with zero norm. The 2-homogeneous parameterization makes
// the origin absorbing, so this is never clamped.
class DegenerateNeuronError : public Error {
 public:
  explicit DegenerateNeuronError(int neuron)
      : Error("degenerate neuron: row " + std::to_string(neuron) + " has zero norm"),
        neuron_(neuron) {}
  int neuron() const { return neuron_; }

 private:
  int neuron_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(long step, int neuron, double norm_sq, double limit)
      : Error("divergence at t=" + std::to_string(step) + ": |v_" + std::to_string(neuron) +
              "|^2=" + std::to_string(norm_sq) + " exceeds " + std::to_string(limit)),
        step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace hermite_flow
