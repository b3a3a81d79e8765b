#pragma once

#include <stdexcept>
#include <string>

namespace quadplan {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input handling
struct ParseError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct ReferenceError : Error {
  using Error::Error;
};

// Numerics
struct NonFiniteInput : Error {
  using Error::Error;
};
struct DimensionMismatch : Error {
  using Error::Error;
};
struct InvertedElement : Error {
  InvertedElement(const std::string& msg, int tet) : Error(msg), tetId(tet) {}
  int tetId;
};
struct SingularSystem : Error {
  using Error::Error;
};
struct ConstraintDivergence : Error {
  using Error::Error;
};

// Optimization
struct InfeasiblePattern : Error {
  using Error::Error;
};
struct QPInfeasible : Error {
  QPInfeasible(const std::string& msg, std::string fam) : Error(msg), family(std::move(fam)) {}
  std::string family;  // which constraint family was blamed
};
struct NoFeasibleLabeling : Error {
  using Error::Error;
};

}  // namespace quadplan
