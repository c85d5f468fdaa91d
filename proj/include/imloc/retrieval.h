#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "imloc/errors.h"

namespace imloc {

class RetrievalError : public ValidationError {
 public:
  enum class Reason { kZeroVector, kDuplicateId, kDimensionMismatch, kUnknownId, kBadK };

  RetrievalError(Reason reason, const std::string& what) : ValidationError(what), reason_(reason) {}
  Reason reason() const { return reason_; }

 private:
  Reason reason_;
};

struct RetrievalHit {
  std::string id;
  double similarity = 0.0;  // cosine
};

// Exact nearest-descriptor search. Vectors are stored L2-normalized.
class DescriptorIndex {
 public:
  explicit DescriptorIndex(int dim);

  int dim() const { return dim_; }
  size_t size() const { return ids_.size(); }
  const std::string& id(size_t i) const { return ids_[i]; }
  std::span<const float> vector(size_t i) const;
  // Throws RetrievalError(kUnknownId).
  std::span<const float> vector(const std::string& id) const;
  bool contains(const std::string& id) const { return slots_.count(id) != 0; }

  void Add(const std::string& id, std::span<const float> descriptor);

  // min(k, size()) hits by descending similarity, ties by ascending id.
  std::vector<RetrievalHit> TopK(std::span<const float> query, int k) const;

 private:
  int dim_;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_map<std::string, size_t> slots_;
};

}  // namespace imloc
