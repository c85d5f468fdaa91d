#include "imloc/retrieval.h"

#include <algorithm>
#include <cmath>

namespace imloc {
namespace {

double Norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace

DescriptorIndex::DescriptorIndex(int dim) : dim_(dim) {
  if (dim <= 0) throw ValidationError("descriptor dimension must be positive");
}

std::span<const float> DescriptorIndex::vector(size_t i) const {
  return std::span<const float>(data_).subspan(i * dim_, dim_);
}

std::span<const float> DescriptorIndex::vector(const std::string& id) const {
  const auto it = slots_.find(id);
  if (it == slots_.end()) throw RetrievalError(RetrievalError::Reason::kUnknownId, "unknown descriptor id '" + id + "'");
  return vector(it->second);
}

void DescriptorIndex::Add(const std::string& id, std::span<const float> descriptor) {
  if (static_cast<int>(descriptor.size()) != dim_) {
    throw RetrievalError(RetrievalError::Reason::kDimensionMismatch,
                         "descriptor for '" + id + "' has dimension " + std::to_string(descriptor.size()) +
                             ", index expects " + std::to_string(dim_));
  }
  if (slots_.count(id)) {
    throw RetrievalError(RetrievalError::Reason::kDuplicateId, "duplicate descriptor id '" + id + "'");
  }
  const double norm = Norm(descriptor);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw RetrievalError(RetrievalError::Reason::kZeroVector, "descriptor for '" + id + "' is zero or non-finite");
  }
  slots_.emplace(id, ids_.size());
  ids_.push_back(id);
  for (float x : descriptor) data_.push_back(static_cast<float>(x / norm));
}

std::vector<RetrievalHit> DescriptorIndex::TopK(std::span<const float> query, int k) const {
  if (k < 1) throw RetrievalError(RetrievalError::Reason::kBadK, "top-k needs k >= 1");
  if (static_cast<int>(query.size()) != dim_) {
    throw RetrievalError(RetrievalError::Reason::kDimensionMismatch,
                         "query has dimension " + std::to_string(query.size()) + ", index expects " +
                             std::to_string(dim_));
  }
  const double qnorm = Norm(query);
  if (!(qnorm > 0.0) || !std::isfinite(qnorm)) {
    throw RetrievalError(RetrievalError::Reason::kZeroVector, "query descriptor is zero or non-finite");
  }
  std::vector<std::pair<double, size_t>> scored(ids_.size());
  for (size_t i = 0; i < ids_.size(); ++i) {
    const float* v = data_.data() + i * dim_;
    double dot = 0.0;
    for (int j = 0; j < dim_; ++j) dot += static_cast<double>(v[j]) * query[j];
    scored[i] = {dot / qnorm, i};
  }
  const auto better = [this](const std::pair<double, size_t>& a, const std::pair<double, size_t>& b) {
    if (a.first != b.first) return a.first > b.first;
    return ids_[a.second] < ids_[b.second];
  };
  const size_t n = std::min<size_t>(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + n, scored.end(), better);
  std::vector<RetrievalHit> hits;
  hits.reserve(n);
  for (size_t i = 0; i < n; ++i) hits.push_back({ids_[scored[i].second], scored[i].first});
  return hits;
}

}  // namespace imloc
