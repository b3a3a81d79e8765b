#include "quadplan/qp_solver.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <limits>

namespace quadplan {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double hypot2(double a, double b) { return std::hypot(a, b); }

// J  : n x n, starts as L^-T (G = L L^T)
// R  : triangular factor over the active set
// d  : J^T * np for the constraint normal being added
void computeD(VecX& d, const MatX& j, const VecX& np) { d.noalias() = j.transpose() * np; }

void updateZ(VecX& z, const MatX& j, const VecX& d, int iq) {
  z.noalias() = j.rightCols(j.cols() - iq) * d.tail(d.size() - iq);
}

void updateR(const MatX& r, VecX& rvec, const VecX& d, int iq) {
  rvec.head(iq) =
      r.topLeftCorner(iq, iq).triangularView<Eigen::Upper>().solve(d.head(iq));
}

bool addConstraint(MatX& r, MatX& j, VecX& d, int& iq, double& rNorm) {
  const int n = static_cast<int>(d.size());
  // zero out d[iq+1..n-1] with Givens rotations applied to columns of J
  for (int k = n - 1; k >= iq + 1; --k) {
    double cc = d[k - 1];
    double ss = d[k];
    const double h = hypot2(cc, ss);
    if (h == 0.0) continue;
    d[k] = 0.0;
    ss = ss / h;
    cc = cc / h;
    if (cc < 0.0) {
      cc = -cc;
      ss = -ss;
      d[k - 1] = -h;
    } else {
      d[k - 1] = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int i = 0; i < n; ++i) {
      const double t1 = j(i, k - 1);
      const double t2 = j(i, k);
      j(i, k - 1) = t1 * cc + t2 * ss;
      j(i, k) = xny * (t1 + j(i, k - 1)) - t2;
    }
  }
  ++iq;
  for (int i = 0; i < iq; ++i) r(i, iq - 1) = d[i];
  rNorm = std::max(rNorm, std::abs(d[iq - 1]));
  return std::abs(d[iq - 1]) > std::numeric_limits<double>::epsilon() * rNorm;
}

void deleteConstraint(MatX& r, MatX& j, Eigen::VectorXi& aSet, VecX& u, int p, int& iq,
                      int l) {
  const int n = static_cast<int>(j.rows());
  int qq = -1;
  for (int i = p; i < iq; ++i)
    if (aSet[i] == l) {
      qq = i;
      break;
    }
  for (int i = qq; i < iq - 1; ++i) {
    aSet[i] = aSet[i + 1];
    u[i] = u[i + 1];
    r.col(i) = r.col(i + 1);
  }
  aSet[iq - 1] = aSet[iq];
  u[iq - 1] = u[iq];
  aSet[iq] = 0;
  u[iq] = 0.0;
  for (int i = 0; i < iq; ++i) r(i, iq - 1) = 0.0;
  --iq;
  if (iq == 0) return;
  for (int k = qq; k < iq; ++k) {
    double cc = r(k, k);
    double ss = r(k + 1, k);
    const double h = hypot2(cc, ss);
    if (h == 0.0) continue;
    cc = cc / h;
    ss = ss / h;
    r(k + 1, k) = 0.0;
    if (cc < 0.0) {
      r(k, k) = -h;
      cc = -cc;
      ss = -ss;
    } else {
      r(k, k) = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int jj = k + 1; jj < iq; ++jj) {
      const double t1 = r(k, jj);
      const double t2 = r(k + 1, jj);
      r(k, jj) = t1 * cc + t2 * ss;
      r(k + 1, jj) = xny * (t1 + r(k, jj)) - t2;
    }
    for (int i = 0; i < n; ++i) {
      const double t1 = j(i, k);
      const double t2 = j(i, k + 1);
      j(i, k) = t1 * cc + t2 * ss;
      j(i, k + 1) = xny * (j(i, k) + t1) - t2;
    }
  }
}

}  // namespace

QpResult solveQp(const MatX& g, const VecX& a, const MatX& ce, const VecX& ce0,
                 const MatX& ci, const VecX& ci0) {
  const int n = static_cast<int>(g.rows());
  const int p = static_cast<int>(ce.cols());
  const int m = static_cast<int>(ci.cols());
  if (g.cols() != n || a.size() != n || ce.rows() != n || ci.rows() != n ||
      ce0.size() != p || ci0.size() != m)
    throw DimensionMismatch("qp solver: inconsistent dimensions");

  QpResult res;
  res.eqMultipliers = VecX::Zero(p);
  res.ineqMultipliers = VecX::Zero(m);

  Eigen::LLT<MatX> llt(g);
  if (llt.info() != Eigen::Success)
    throw SingularSystem("qp solver: Hessian is not positive definite");

  MatX j = MatX::Identity(n, n);
  llt.matrixU().solveInPlace(j);  // J = L^-T
  const double c1 = g.trace();
  const double c2 = j.trace();

  VecX x = llt.solve(-a);
  double f = 0.5 * a.dot(x);

  MatX r = MatX::Zero(n, n);
  VecX rvec(n), d(n), z(n), np(n);
  VecX u = VecX::Zero(m + p + 1);
  Eigen::VectorXi aSet = Eigen::VectorXi::Zero(m + p + 1);
  double rNorm = 1.0;
  int iq = 0;

  // mandatory equality constraints
  for (int i = 0; i < p; ++i) {
    np = ce.col(i);
    computeD(d, j, np);
    updateZ(z, j, d, iq);
    updateR(r, rvec, d, iq);
    double t2 = 0.0;
    if (std::abs(z.dot(z)) > std::numeric_limits<double>::epsilon())
      t2 = (-np.dot(x) - ce0[i]) / z.dot(np);
    x += t2 * z;
    u[iq] = t2;
    u.head(iq) -= t2 * rvec.head(iq);
    f += 0.5 * (t2 * t2) * z.dot(np);
    aSet[i] = -i - 1;
    if (!addConstraint(r, j, d, iq, rNorm)) {
      // dependent equality: acceptable only if it is satisfied
      if (std::abs(np.dot(x) + ce0[i]) > 1e-8 * (1.0 + std::abs(ce0[i])))
        throw QPInfeasible("inconsistent equality constraints", "equality");
    }
  }

  std::vector<char> iaexcl(m, 1);
  VecX s = VecX::Zero(m);
  VecX uOld, xOld;
  Eigen::VectorXi aOld;
  double fOld = 0.0;
  int iter = 0;
  const int maxIter = 50 * (n + m + p + 10);
  const double eps = std::numeric_limits<double>::epsilon();

  int ip = 0;
  double ss = 0.0, psiThreshold = 0.0;

l1:
  ++iter;
  if (iter > maxIter)
    throw QPInfeasible("qp solver iteration limit exceeded", "iterations");
  res.iterations = iter;
  // compute violations
  ss = 0.0;
  double psi = 0.0;
  ip = 0;
  for (int i = 0; i < m; ++i) {
    iaexcl[i] = 1;
    s[i] = ci.col(i).dot(x) + ci0[i];
    psi += std::min(0.0, s[i]);
  }
  psiThreshold = std::abs(psi);
  if (psiThreshold <= 100.0 * m * eps * c1 * c2) {
    res.x = x;
    res.objective = f;
    res.feasible = true;
    for (int i = p; i < iq; ++i) res.ineqMultipliers[aSet[i] - 1] = u[i];
    for (int i = 0; i < std::min(p, iq); ++i)
      if (aSet[i] < 0) res.eqMultipliers[-aSet[i] - 1] = u[i];
    return res;
  }

l2:
  // choose the most violated (eligible) constraint
  ss = 0.0;
  ip = -1;
  for (int i = 0; i < m; ++i) {
    if (s[i] < ss && iaexcl[i]) {
      bool active = false;
      for (int k = p; k < iq; ++k)
        if (aSet[k] - 1 == i) active = true;
      if (!active) {
        ss = s[i];
        ip = i;
      }
    }
  }
  if (ip < 0) {
    res.x = x;
    res.objective = f;
    res.feasible = true;
    for (int i = p; i < iq; ++i) res.ineqMultipliers[aSet[i] - 1] = u[i];
    for (int i = 0; i < std::min(p, iq); ++i)
      if (aSet[i] < 0) res.eqMultipliers[-aSet[i] - 1] = u[i];
    return res;
  }
  np = ci.col(ip);
  u[iq] = 0.0;
  aSet[iq] = ip + 1;

l2a:
  xOld = x;
  uOld = u.head(iq + 1);
  aOld = aSet.head(iq + 1);
  fOld = f;

  computeD(d, j, np);
  updateZ(z, j, d, iq);
  updateR(r, rvec, d, iq);

  double t1 = kInf;
  int l = 0;
  for (int k = p; k < iq; ++k) {
    if (rvec[k] > 0.0 && u[k] / rvec[k] < t1) {
      t1 = u[k] / rvec[k];
      l = aSet[k];
    }
  }
  double t2 = kInf;
  if (std::abs(z.dot(z)) > std::numeric_limits<double>::epsilon())
    t2 = -s[ip] / z.dot(np);
  const double t = std::min(t1, t2);
  if (t >= kInf) {
    res.feasible = false;
    res.x = x;
    res.objective = f;
    return res;  // dual unbounded: primal infeasible
  }
  if (t2 >= kInf) {
    // partial (dual) step only
    u.head(iq) -= t * rvec.head(iq);
    u[iq] += t;
    deleteConstraint(r, j, aSet, u, p, iq, l);
    goto l2a;
  }
  x += t * z;
  f += t * z.dot(np) * (0.5 * t + u[iq]);
  u.head(iq) -= t * rvec.head(iq);
  u[iq] += t;

  if (std::abs(t - t2) < std::numeric_limits<double>::epsilon()) {
    // full step: ip becomes active
    if (!addConstraint(r, j, d, iq, rNorm)) {
      iaexcl[ip] = 0;
      deleteConstraint(r, j, aSet, u, p, iq, ip + 1);
      for (int i = 0; i < m; ++i) s[i] = ci.col(i).dot(x) + ci0[i];
      goto l2;
    }
    s[ip] = ci.col(ip).dot(x) + ci0[ip];
    goto l1;
  }
  // partial step: drop l, stay on constraint ip
  deleteConstraint(r, j, aSet, u, p, iq, l);
  s[ip] = ci.col(ip).dot(x) + ci0[ip];
  goto l2a;
}

}  // namespace quadplan
