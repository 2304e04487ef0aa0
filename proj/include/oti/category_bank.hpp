#pragma once

// Frozen table of unit category embeddings split into disjoint seen and
// unseen partitions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "oti/error.hpp"
#include "oti/feature_geometry.hpp"
#include "oti/tensor.hpp"

namespace oti {

enum class Partition { seen, unseen };

inline std::string_view to_string(Partition p) { return p == Partition::seen ? "seen" : "unseen"; }

inline Partition parse_partition(std::string_view label) {
  if (label == "seen") return Partition::seen;
  if (label == "unseen") return Partition::unseen;
  throw ParameterError("unknown partition '" + std::string(label) + "' (expected seen|unseen)");
}

struct CategoryEntry {
  std::int64_t id = 0;
  std::string name;
  Vector embedding;
  Partition partition = Partition::seen;

  friend bool operator==(const CategoryEntry&, const CategoryEntry&) = default;
};

// Rows are category embeddings in ascending id order.
struct BankMatrix {
  Tensor matrix;
  std::vector<std::int64_t> ids;

  std::size_t count() const { return ids.size(); }

  std::size_t row_of(std::int64_t id) const {
    auto it = std::lower_bound(ids.begin(), ids.end(), id);
    if (it == ids.end() || *it != id) {
      throw ParameterError("category " + std::to_string(id) + " is not in this candidate set");
    }
    return static_cast<std::size_t>(it - ids.begin());
  }
};

class CategoryBank {
 public:
  CategoryBank() = default;

  explicit CategoryBank(std::vector<CategoryEntry> entries) : entries_(std::move(entries)) {
    std::sort(entries_.begin(), entries_.end(),
              [](const CategoryEntry& a, const CategoryEntry& b) { return a.id < b.id; });
    validate();
  }

  const std::vector<CategoryEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t dim() const { return entries_.empty() ? 0 : entries_.front().embedding.size(); }

  std::size_t count(Partition p) const {
    return static_cast<std::size_t>(std::count_if(
        entries_.begin(), entries_.end(), [p](const CategoryEntry& e) { return e.partition == p; }));
  }
  std::size_t seen_count() const { return count(Partition::seen); }
  std::size_t unseen_count() const { return count(Partition::unseen); }

  const CategoryEntry* find(std::int64_t id) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), id,
                               [](const CategoryEntry& e, std::int64_t v) { return e.id < v; });
    if (it == entries_.end() || it->id != id) return nullptr;
    return &*it;
  }

  const CategoryEntry& at(std::int64_t id) const {
    const CategoryEntry* e = find(id);
    if (!e) throw ParameterError("unknown category id " + std::to_string(id));
    return *e;
  }

  BankMatrix embeddings_of(Partition p) const {
    BankMatrix out;
    std::vector<const CategoryEntry*> rows;
    for (const CategoryEntry& e : entries_)
      if (e.partition == p) rows.push_back(&e);
    if (rows.empty()) return out;
    out.matrix = Tensor::matrix(rows.size(), dim());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy(rows[r]->embedding.begin(), rows[r]->embedding.end(), out.matrix.row_span(r).begin());
      out.ids.push_back(rows[r]->id);
    }
    return out;
  }

  BankMatrix embeddings_of(std::string_view partition) const {
    return embeddings_of(parse_partition(partition));
  }

  // Rows for an explicit id list (sorted ascending in the result).
  BankMatrix embeddings_for(std::vector<std::int64_t> ids) const {
    std::sort(ids.begin(), ids.end());
    BankMatrix out;
    if (ids.empty()) return out;
    out.matrix = Tensor::matrix(ids.size(), dim());
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const CategoryEntry& e = at(ids[r]);
      std::copy(e.embedding.begin(), e.embedding.end(), out.matrix.row_span(r).begin());
    }
    out.ids = std::move(ids);
    return out;
  }

  friend bool operator==(const CategoryBank&, const CategoryBank&) = default;

 private:
  void validate() const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const CategoryEntry& e = entries_[i];
      if (i > 0 && entries_[i - 1].id == e.id) {
        // One id cannot sit in both partitions.
        throw ParameterError("duplicate category id " + std::to_string(e.id));
      }
      if (e.embedding.size() != dim()) {
        throw ShapeError("category " + std::to_string(e.id) + " embedding has dimension " +
                         std::to_string(e.embedding.size()) + ", expected " +
                         std::to_string(dim()));
      }
      if (std::abs(norm(e.embedding) - 1.0) > 1e-12) {
        throw ParameterError("category " + std::to_string(e.id) + " embedding is not unit norm");
      }
    }
  }

  std::vector<CategoryEntry> entries_;
};

}  // namespace oti
