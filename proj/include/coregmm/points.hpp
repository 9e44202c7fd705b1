#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "coregmm/errors.hpp"

namespace coregmm {

// Ordered multiset of points in R^d with strictly positive weights. The
// universal currency of every pipeline stage; duplicates are allowed and
// order is meaningful (schemes and samplers are index-deterministic).
class WeightedPointSet {
 public:
  WeightedPointSet() = default;

  explicit WeightedPointSet(int dim) : dim_(dim) {
    if (dim < 1) throw DimensionMismatch("WeightedPointSet: dim must be >= 1");
    points_.resize(0, dim);
    weights_.resize(0);
  }

  WeightedPointSet(Eigen::MatrixXd points, Eigen::VectorXd weights)
      : points_(std::move(points)), weights_(std::move(weights)) {
    if (points_.rows() != weights_.size()) {
      throw DimensionMismatch("WeightedPointSet: points/weights length mismatch");
    }
    if (points_.rows() > 0 && points_.cols() < 1) {
      throw DimensionMismatch("WeightedPointSet: dim must be >= 1");
    }
    dim_ = static_cast<int>(points_.cols());
    for (Eigen::Index i = 0; i < weights_.size(); ++i) {
      if (!(weights_[i] > 0.0)) {
        throw NonPositiveWeight("WeightedPointSet: weight must be > 0");
      }
    }
  }

  static WeightedPointSet with_unit_weights(Eigen::MatrixXd points) {
    Eigen::VectorXd w = Eigen::VectorXd::Ones(points.rows());
    return WeightedPointSet(std::move(points), std::move(w));
  }

  int size() const { return static_cast<int>(points_.rows()); }
  int dim() const { return dim_; }
  bool empty() const { return points_.rows() == 0; }

  const Eigen::MatrixXd& points() const { return points_; }
  const Eigen::VectorXd& weights() const { return weights_; }

  Eigen::VectorXd point(int i) const { return points_.row(i).transpose(); }
  double weight(int i) const { return weights_[i]; }

  double total_weight() const { return weights_.sum(); }
  double min_weight() const {
    if (empty()) throw EmptySet("min_weight: empty set");
    return weights_.minCoeff();
  }

  void append(const Eigen::VectorXd& p, double w = 1.0) {
    if (!(w > 0.0)) throw NonPositiveWeight("append: weight must be > 0");
    if (empty() && dim_ == 0) {
      dim_ = static_cast<int>(p.size());
      points_.resize(0, dim_);
    }
    if (p.size() != dim_) throw DimensionMismatch("append: wrong point dimension");
    const Eigen::Index n = points_.rows();
    points_.conservativeResize(n + 1, Eigen::NoChange);
    weights_.conservativeResize(n + 1);
    points_.row(n) = p.transpose();
    weights_[n] = w;
  }

  void append_all(const WeightedPointSet& other) {
    if (other.empty()) return;
    if (empty() && dim_ == 0) {
      *this = other;
      return;
    }
    if (other.dim() != dim_) {
      throw DimensionMismatch("append_all: dimension mismatch");
    }
    const Eigen::Index n = points_.rows();
    const Eigen::Index m = other.points_.rows();
    points_.conservativeResize(n + m, Eigen::NoChange);
    weights_.conservativeResize(n + m);
    points_.bottomRows(m) = other.points_;
    weights_.tail(m) = other.weights_;
  }

  WeightedPointSet subset(const std::vector<int>& indices) const {
    Eigen::MatrixXd pts(indices.size(), dim_);
    Eigen::VectorXd w(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      pts.row(r) = points_.row(indices[r]);
      w[r] = weights_[indices[r]];
    }
    return WeightedPointSet(std::move(pts), std::move(w));
  }

 private:
  Eigen::MatrixXd points_;
  Eigen::VectorXd weights_;
  int dim_ = 0;
};

// Total weight divided by the smallest weight; >= 1, and = n for unweighted
// sets. Drives the weighted peeling round counts.
inline double normalized_average_weight(const WeightedPointSet& p) {
  if (p.empty()) throw EmptySet("normalized_average_weight: empty set");
  return p.total_weight() / p.min_weight();
}

}  // namespace coregmm
