// Minimal absolute pose from three bearing / point pairs.
//
// The three squared-distance constraints between the unknown depths
//   |l_i x_i - l_j x_j|^2 = |X_i - X_j|^2
// are homogenized into two conics D1, D2 whose pencil contains a degenerate
// member (a real line pair). Intersecting each line with one conic gives the
// depth directions, the scale comes from the distance constraints, and a few
// Newton steps polish the depths before the rigid alignment.

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "imloc/geometry.h"

namespace imloc {
namespace {

double Det3(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  return a.dot(b.cross(c));
}

// Real roots of c3 x^3 + c2 x^2 + c1 x + c0 with c3 != 0, polished by Newton.
std::vector<double> SolveCubic(double c3, double c2, double c1, double c0) {
  const double a = c2 / c3;
  const double b = c1 / c3;
  const double c = c0 / c3;
  const double p = b - a * a / 3.0;
  const double q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
  const double disc = 0.25 * q * q + p * p * p / 27.0;

  std::vector<double> roots;
  if (disc > 0.0) {
    const double s = std::sqrt(disc);
    roots.push_back(std::cbrt(-0.5 * q + s) + std::cbrt(-0.5 * q - s) - a / 3.0);
  } else if (p == 0.0) {
    roots.push_back(-a / 3.0);
  } else {
    const double r = 2.0 * std::sqrt(-p / 3.0);
    const double arg = std::clamp(3.0 * q / (p * r), -1.0, 1.0);
    const double phi = std::acos(arg) / 3.0;
    for (int k = 0; k < 3; ++k) {
      roots.push_back(r * std::cos(phi - 2.0 * M_PI * k / 3.0) - a / 3.0);
    }
  }
  for (double& x : roots) {
    for (int it = 0; it < 4; ++it) {
      const double f = ((x + a) * x + b) * x + c;
      const double df = (3.0 * x + 2.0 * a) * x + b;
      if (df == 0.0) break;
      const double step = f / df;
      x -= step;
      if (std::abs(step) <= 1e-16 * std::max(1.0, std::abs(x))) break;
    }
  }
  return roots;
}

// Roots t of A t^2 + B t + C = 0 (A != 0), numerically stable form. Slightly
// negative discriminants are clamped so near-double roots are not lost.
int SolveQuadratic(double A, double B, double C, double* roots) {
  double disc = B * B - 4.0 * A * C;
  const double scale = B * B + std::abs(4.0 * A * C);
  if (disc < 0.0) {
    if (disc < -1e-10 * scale) return 0;
    disc = 0.0;
  }
  const double sq = std::sqrt(disc);
  const double q = -0.5 * (B + std::copysign(sq, B));
  if (q == 0.0) {
    roots[0] = 0.0;
    return 1;
  }
  roots[0] = q / A;
  roots[1] = C / q;
  return 2;
}

struct DepthProblem {
  double a01, a02, a12;
  double b01, b02, b12;

  Eigen::Vector3d Residual(const Eigen::Vector3d& l) const {
    return {l[0] * l[0] + l[1] * l[1] - 2.0 * b01 * l[0] * l[1] - a01,
            l[0] * l[0] + l[2] * l[2] - 2.0 * b02 * l[0] * l[2] - a02,
            l[1] * l[1] + l[2] * l[2] - 2.0 * b12 * l[1] * l[2] - a12};
  }

  void Polish(Eigen::Vector3d* l) const {
    for (int it = 0; it < 6; ++it) {
      const Eigen::Vector3d r = Residual(*l);
      if (r.cwiseAbs().maxCoeff() < 1e-15) break;
      Eigen::Matrix3d J;
      const Eigen::Vector3d& v = *l;
      J << 2.0 * (v[0] - b01 * v[1]), 2.0 * (v[1] - b01 * v[0]), 0.0,  //
          2.0 * (v[0] - b02 * v[2]), 0.0, 2.0 * (v[2] - b02 * v[0]),   //
          0.0, 2.0 * (v[1] - b12 * v[2]), 2.0 * (v[2] - b12 * v[1]);
      Eigen::FullPivLU<Eigen::Matrix3d> lu(J);
      if (!lu.isInvertible()) break;
      const Eigen::Vector3d step = lu.solve(r);
      *l -= step;
      if (step.norm() <= 1e-16 * l->norm()) break;
    }
  }
};

Eigen::Matrix3d OrthonormalFrame(const Eigen::Vector3d& p0, const Eigen::Vector3d& p1, const Eigen::Vector3d& p2) {
  const Eigen::Vector3d e1 = (p1 - p0).normalized();
  const Eigen::Vector3d d2 = p2 - p0;
  const Eigen::Vector3d e2 = (d2 - e1 * e1.dot(d2)).normalized();
  Eigen::Matrix3d F;
  F.col(0) = e1;
  F.col(1) = e2;
  F.col(2) = e1.cross(e2);
  return F;
}

}  // namespace

std::vector<Pose> SolveP3P(const std::array<Eigen::Vector3d, 3>& bearings,
                           const std::array<Eigen::Vector3d, 3>& points) {
  const Eigen::Vector3d& x0 = bearings[0];
  const Eigen::Vector3d& x1 = bearings[1];
  const Eigen::Vector3d& x2 = bearings[2];
  const Eigen::Vector3d& X0 = points[0];
  const Eigen::Vector3d& X1 = points[1];
  const Eigen::Vector3d& X2 = points[2];

  const double raw01 = (X0 - X1).squaredNorm();
  const double raw02 = (X0 - X2).squaredNorm();
  const double raw12 = (X1 - X2).squaredNorm();
  const double amax = std::max({raw01, raw02, raw12});
  if (!(amax > 0.0) || !std::isfinite(amax)) return {};
  // Collinear or coincident world points.
  const double area = (X1 - X0).cross(X2 - X0).norm();
  if (area <= 1e-10 * std::sqrt(raw01 * raw02)) return {};
  if (x0.cross(x1).norm() < 1e-12 || x0.cross(x2).norm() < 1e-12 || x1.cross(x2).norm() < 1e-12) {
    return {};
  }

  // Work with distances normalized to the largest side.
  DepthProblem prob{raw01 / amax, raw02 / amax, raw12 / amax, x0.dot(x1), x0.dot(x2), x1.dot(x2)};

  Eigen::Matrix3d Q01, Q02, Q12;
  Q01 << 1.0, -prob.b01, 0.0, -prob.b01, 1.0, 0.0, 0.0, 0.0, 0.0;
  Q02 << 1.0, 0.0, -prob.b02, 0.0, 0.0, 0.0, -prob.b02, 0.0, 1.0;
  Q12 << 0.0, 0.0, 0.0, 0.0, 1.0, -prob.b12, 0.0, -prob.b12, 1.0;
  const Eigen::Matrix3d D1 = prob.a12 * Q01 - prob.a01 * Q12;
  const Eigen::Matrix3d D2 = prob.a12 * Q02 - prob.a02 * Q12;

  // det(D1 + g D2) = c3 g^3 + c2 g^2 + c1 g + c0
  const double c0 = D1.determinant();
  const double c3 = D2.determinant();
  const double c1 = Det3(D2.col(0), D1.col(1), D1.col(2)) + Det3(D1.col(0), D2.col(1), D1.col(2)) +
                    Det3(D1.col(0), D1.col(1), D2.col(2));
  const double c2 = Det3(D1.col(0), D2.col(1), D2.col(2)) + Det3(D2.col(0), D1.col(1), D2.col(2)) +
                    Det3(D2.col(0), D2.col(1), D1.col(2));

  std::vector<Eigen::Matrix3d> degenerate;
  if (std::abs(c3) >= std::abs(c0) && c3 != 0.0) {
    for (const double g : SolveCubic(c3, c2, c1, c0)) degenerate.push_back(D1 + g * D2);
  } else if (c0 != 0.0) {
    for (const double m : SolveCubic(c0, c1, c2, c3)) degenerate.push_back(m * D1 + D2);
  } else {
    degenerate.push_back(D1);
  }

  // Pick the pencil member that is most clearly a real line pair.
  double best_score = 0.0;
  Eigen::Vector3d best_pos, best_neg;
  double best_s = 0.0;
  for (const Eigen::Matrix3d& D0 : degenerate) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(D0);
    const Eigen::Vector3d ev = eig.eigenvalues();
    std::array<int, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int i, int j) { return std::abs(ev[i]) > std::abs(ev[j]); });
    const double s1 = ev[order[0]];
    const double s2 = ev[order[1]];
    if (s1 * s2 > 0.0 || s1 == 0.0) continue;
    const double score = std::abs(s2) / std::abs(s1) + 1e-300;
    if (score <= best_score) continue;
    best_score = score;
    if (s2 == 0.0) {
      // Rank one: a double plane.
      best_pos = eig.eigenvectors().col(order[0]);
      best_neg = eig.eigenvectors().col(order[1]);
      best_s = 0.0;
      continue;
    }
    const int ipos = s1 > 0.0 ? order[0] : order[1];
    const int ineg = s1 > 0.0 ? order[1] : order[0];
    best_pos = eig.eigenvectors().col(ipos);
    best_neg = eig.eigenvectors().col(ineg);
    best_s = std::sqrt(-ev[ineg] / ev[ipos]);
  }
  if (best_score == 0.0) return {};

  std::vector<Pose> solutions;
  const double scale = std::sqrt(amax);
  const Eigen::Matrix3d Fx = OrthonormalFrame(X0, X1, X2);
  const std::array<const Eigen::Matrix3d*, 3> Qs{&Q01, &Q02, &Q12};
  const std::array<double, 3> as{prob.a01, prob.a02, prob.a12};

  for (const double sign : {1.0, -1.0}) {
    if (sign < 0.0 && best_s == 0.0) break;
    const Eigen::Vector3d n = (best_pos - sign * best_s * best_neg).normalized();
    // Orthonormal basis (u, v) of the plane n . L = 0.
    const Eigen::Vector3d u = n.unitOrthogonal();
    const Eigen::Vector3d v = n.cross(u);

    double A = u.dot(D1 * u), B = 2.0 * u.dot(D1 * v), C = v.dot(D1 * v);
    if (std::max({std::abs(A), std::abs(B), std::abs(C)}) < 1e-10 * D1.cwiseAbs().maxCoeff()) {
      A = u.dot(D2 * u);
      B = 2.0 * u.dot(D2 * v);
      C = v.dot(D2 * v);
    }

    double ratios[2];
    int nr;
    const bool ratio_is_u_over_v = std::abs(A) >= std::abs(C);
    if (ratio_is_u_over_v) {
      if (A == 0.0) continue;
      nr = SolveQuadratic(A, B, C, ratios);
    } else {
      nr = SolveQuadratic(C, B, A, ratios);
    }
    for (int k = 0; k < nr; ++k) {
      Eigen::Vector3d dir = ratio_is_u_over_v ? Eigen::Vector3d(ratios[k] * u + v) : Eigen::Vector3d(u + ratios[k] * v);
      dir.normalize();
      int best_pair = -1;
      double best_k = 0.0;
      for (int p = 0; p < 3; ++p) {
        const double kq = dir.dot(*Qs[p] * dir);
        if (kq > best_k) {
          best_k = kq;
          best_pair = p;
        }
      }
      if (best_pair < 0) continue;
      Eigen::Vector3d lambda = dir * std::sqrt(as[best_pair] / best_k);
      if (lambda.sum() < 0.0) lambda = -lambda;
      prob.Polish(&lambda);
      if (!(lambda.minCoeff() > 0.0)) continue;
      lambda *= scale;

      const Eigen::Vector3d Y0 = lambda[0] * x0;
      const Eigen::Vector3d Y1 = lambda[1] * x1;
      const Eigen::Vector3d Y2 = lambda[2] * x2;
      const Eigen::Matrix3d R = OrthonormalFrame(Y0, Y1, Y2) * Fx.transpose();
      const Eigen::Vector3d t = (Y0 + Y1 + Y2) / 3.0 - R * (X0 + X1 + X2) / 3.0;
      Pose pose(R, t);

      bool consistent = true;
      for (int i = 0; i < 3 && consistent; ++i) {
        const Eigen::Vector3d pc = pose.Apply(points[i]);
        consistent = pc.z() > 0.0 && AngularError(pc.normalized(), bearings[i]) < 1e-6;
      }
      if (!consistent) continue;

      const bool duplicate = std::any_of(solutions.begin(), solutions.end(), [&](const Pose& other) {
        return RotationAngle(pose.rotation * other.rotation.conjugate()) < 1e-9 &&
               (pose.translation - other.translation).norm() < 1e-9 * scale;
      });
      if (!duplicate) solutions.push_back(pose);
      if (solutions.size() == 4) return solutions;
    }
  }
  return solutions;
}

}  // namespace imloc
