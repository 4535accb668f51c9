#include "duallift/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace duallift {
namespace {

bool closer(const KdTree::Neighbor& a, const KdTree::Neighbor& b) {
  return a.sq_dist < b.sq_dist || (a.sq_dist == b.sq_dist && a.id < b.id);
}

}  // namespace

KdTree::KdTree(std::vector<float> points, int dim, int leaf_size)
    : points_(std::move(points)), dim_(dim), leaf_size_(std::max(1, leaf_size)) {
  if (dim_ <= 0 || points_.size() % static_cast<std::size_t>(dim_) != 0) {
    throw std::invalid_argument("kd-tree: point buffer does not match dimension");
  }
  const std::size_t n = size();
  if (n > std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument("kd-tree: too many points");
  }
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * n / static_cast<std::size_t>(leaf_size_) + 1);
  if (n > 0) build(0, static_cast<std::uint32_t>(n));
}

int KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  nodes_[id].begin = begin;
  nodes_[id].end = end;
  if (end - begin <= static_cast<std::uint32_t>(leaf_size_)) return id;

  int best_dim = 0;
  float best_spread = -1.0f;
  for (int d = 0; d < dim_; ++d) {
    float lo = std::numeric_limits<float>::max();
    float hi = std::numeric_limits<float>::lowest();
    for (std::uint32_t i = begin; i < end; ++i) {
      const float v = points_[order_[i] * static_cast<std::size_t>(dim_) + d];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo > best_spread) {
      best_spread = hi - lo;
      best_dim = d;
    }
  }
  if (best_spread <= 0.0f) return id;  // all points coincide

  const std::uint32_t mid = begin + (end - begin) / 2;
  const auto value = [&](std::uint32_t p) {
    return points_[p * static_cast<std::size_t>(dim_) + best_dim];
  };
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     return value(a) < value(b) || (value(a) == value(b) && a < b);
                   });
  const float split = value(order_[mid]);
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].split_dim = best_dim;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

double KdTree::sq_distance(std::span<const double> q, std::span<const float> p) {
  double s = 0.0;
  for (std::size_t d = 0; d < q.size(); ++d) {
    const double diff = q[d] - static_cast<double>(p[d]);
    s += diff * diff;
  }
  return s;
}

void KdTree::search(int node_id, std::span<const double> q, std::size_t k,
                    std::vector<Neighbor>& heap) const {
  const Node& node = nodes_[node_id];
  if (node.split_dim < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::uint32_t pid = order_[i];
      const Neighbor cand{pid, sq_distance(q, point(pid))};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), closer);
      } else if (closer(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), closer);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), closer);
      }
    }
    return;
  }
  // Left holds values <= split, right holds values >= split.
  const double diff = q[node.split_dim] - static_cast<double>(node.split);
  const int near = diff < 0.0 ? node.left : node.right;
  const int far = diff < 0.0 ? node.right : node.left;
  search(near, q, k, heap);
  // Equal bounds are still visited: an equal distance with a lower id may win.
  if (heap.size() < k || diff * diff <= heap.front().sq_dist) search(far, q, k, heap);
}

std::vector<KdTree::Neighbor> KdTree::knn(std::span<const double> query, int k) const {
  if (static_cast<int>(query.size()) != dim_) {
    throw std::invalid_argument("kd-tree: query dimension mismatch");
  }
  std::vector<Neighbor> heap;
  if (k <= 0 || nodes_.empty()) return heap;
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), size());
  heap.reserve(kk + 1);
  search(0, query, kk, heap);
  std::sort_heap(heap.begin(), heap.end(), closer);
  return heap;
}

}  // namespace duallift
