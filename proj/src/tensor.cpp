#include "aacv/tensor.hpp"

#include <algorithm>

namespace aacv {

namespace {
thread_local AllocationAudit* active_audit = nullptr;
}

std::string to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

AllocationAudit::AllocationAudit() : previous_(active_audit) { active_audit = this; }

AllocationAudit::~AllocationAudit() { active_audit = previous_; }

void detail::note_allocation(std::size_t elements) {
  for (auto* a = active_audit; a != nullptr; a = a->previous_) {
    a->peak_ = std::max(a->peak_, elements);
    a->total_ += elements;
    ++a->count_;
  }
}

}  // namespace aacv
