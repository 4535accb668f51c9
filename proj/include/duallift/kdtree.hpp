#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace duallift {

// Exact K-nearest-neighbor search over fixed-dimension float points using a
// median-split kd-tree. Distances are squared Euclidean, accumulated in double
// in dimension order; ties are ordered by lower point id.
class KdTree {
 public:
  struct Neighbor {
    std::uint32_t id;
    double sq_dist;
  };

  KdTree() = default;
  // `points` is row-major, size() == n * dim.
  KdTree(std::vector<float> points, int dim, int leaf_size = 12);

  std::vector<Neighbor> knn(std::span<const double> query, int k) const;

  std::size_t size() const { return dim_ > 0 ? points_.size() / static_cast<std::size_t>(dim_) : 0; }
  int dim() const { return dim_; }
  std::span<const float> point(std::size_t id) const {
    return {points_.data() + id * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
  }
  const std::vector<float>& points() const { return points_; }

  static double sq_distance(std::span<const double> q, std::span<const float> p);

 private:
  struct Node {
    int split_dim = -1;  // -1 marks a leaf
    float split = 0.0f;
    int left = -1;
    int right = -1;
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
  };

  int build(std::uint32_t begin, std::uint32_t end);
  void search(int node, std::span<const double> q, std::size_t k,
              std::vector<Neighbor>& heap) const;

  std::vector<float> points_;
  int dim_ = 0;
  int leaf_size_ = 12;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace duallift
