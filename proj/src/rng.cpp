#include "mddose/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace mddose {

double Rng::normal() {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(engine_);
}

void Rng::fill_normal(Tensor& t) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : t.data()) v = dist(engine_);
}

Tensor Rng::normal_like(const Shape& shape) {
  Tensor t(shape);
  fill_normal(t);
  return t;
}

double Rng::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(engine_);
}

std::size_t Rng::uniform_index(std::size_t lo, std::size_t hi) {
  std::uniform_int_distribution<std::size_t> dist(lo, hi);
  return dist(engine_);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (!is) throw std::runtime_error("Rng::restore: malformed engine state");
}

}  // namespace mddose
