#pragma once

#include "quadplan/errors.hpp"
#include "quadplan/types.hpp"

namespace quadplan {

// Dense strictly convex QP
//   min 1/2 x^T G x + a^T x
//   s.t. CE^T x + ce0 = 0,  CI^T x + ci0 >= 0
// solved with the Goldfarb-Idnani dual active-set method. G must be
// positive definite (add regularization upstream if necessary).
struct QpResult {
  VecX x;
  VecX eqMultipliers;
  VecX ineqMultipliers;  // zero for inactive rows
  double objective = 0.0;
  bool feasible = false;
  int iterations = 0;
};

QpResult solveQp(const MatX& g, const VecX& a, const MatX& ce, const VecX& ce0,
                 const MatX& ci, const VecX& ci0);

}  // namespace quadplan
