#pragma once

// Reverse-mode differentiation over the kernel set.
//
// A Tape owns every intermediate value produced during one forward pass.
// Nodes are appended in evaluation order, so parents always precede their
// children and backward() is a single reverse sweep.

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "aacv/kernels.hpp"
#include "aacv/tensor.hpp"

namespace aacv {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool decay = true;  // subject to weight decay during training
};

/// Named parameters with stable addresses and unique names, kept in
/// insertion order.
template <typename T>
class ParameterStore {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value, bool decay = true);
  Parameter<T>& get(std::string_view name);
  const Parameter<T>& get(std::string_view name) const;
  Parameter<T>* find(std::string_view name);
  const Parameter<T>* find(std::string_view name) const;

  std::size_t size() const { return items_.size(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  std::size_t element_count() const;
  void zero_grad();

 private:
  std::deque<Parameter<T>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Var<T> constant(Tensor<T> value);
  /// Leaf whose gradient is written into `p.grad` by backward().
  Var<T> parameter(Parameter<T>& p);
  /// Leaf that tracks its own gradient (readable through grad()).
  Var<T> input(Tensor<T> value);

  Var<T> record(std::string_view tag, Tensor<T> value, std::vector<std::size_t> parents,
                Backward backward);

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  /// Gradient flowing into node `id` during backward (zeros if none).
  const Tensor<T>& grad(std::size_t id);
  const Tensor<T>& grad(Var<T> v) { return grad(v.id); }
  /// Adds `g` into the gradient of `id` if that node needs one.
  void accumulate(std::size_t id, const Tensor<T>& g);

  /// Reverse sweep from a scalar loss. Parameter gradients bound to this
  /// tape are zeroed first, so unreachable parameters end with zeros.
  void backward(Var<T> loss);

  std::size_t size() const { return nodes_.size(); }
  std::size_t backward_visits() const { return visits_; }
  std::string_view tag(std::size_t id) const { return nodes_.at(id).tag; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_.at(id).parents; }

 private:
  struct Node {
    std::string tag;
    Tensor<T> value;
    std::vector<std::size_t> parents;
    Backward backward;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
    bool leaf = false;
    std::optional<Tensor<T>> grad;
  };
  Var<T> push(Node node);

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

/// Differentiable operations. Each records one node whose backward rule is
/// expressed through the kernels in kernels.hpp.
namespace ad {

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> add_constant(Var<T> a, const Tensor<T>& c);
template <typename T> Var<T> scale(Var<T> a, T s);
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> matmul(Var<T> a, Var<T> b, bool transpose_a = false, bool transpose_b = false);
template <typename T> Var<T> softmax(Var<T> a);
template <typename T> Var<T> conv2d(Var<T> x, Var<T> w, std::size_t stride);
template <typename T> Var<T> avg_pool_3x3_s2(Var<T> x);
template <typename T> Var<T> bilinear_upsample(Var<T> x, std::size_t out_h, std::size_t out_w);
/// Batch-statistics normalisation; the statistics used are returned through
/// `stats` so callers can maintain running averages.
template <typename T>
Var<T> batchnorm_train(Var<T> x, Var<T> gamma, Var<T> beta, T eps, BatchStats<T>* stats = nullptr);
template <typename T>
Var<T> batchnorm_eval(Var<T> x, Var<T> gamma, Var<T> beta, std::span<const T> mean,
                      std::span<const T> var, T eps);
template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> global_avg_pool(Var<T> x);
template <typename T> Var<T> dense(Var<T> x, Var<T> w, Var<T> b);
template <typename T> Var<T> cross_entropy(Var<T> logits, std::vector<int> labels);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);
template <typename T> Var<T> permute(Var<T> x, std::vector<std::size_t> perm);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <typename T> Var<T> slice(Var<T> x, std::size_t axis, std::size_t begin, std::size_t len);
template <typename T> Var<T> pad_trailing(Var<T> x, std::size_t axis, std::size_t new_len);
template <typename T> Var<T> expand_tile(Var<T> x, std::size_t axis, std::size_t reps);

}  // namespace ad

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_coords = 200;  // sampled per parameter when larger
  std::uint64_t seed = 0;
  // Coordinates far below the tensor's largest gradient sit under the
  // finite-difference noise. When positive, errors are measured relative to
  // at least scale_floor * max|grad| of the parameter.
  double scale_floor = 0;
  // A coordinate whose +/- step flips the sign of any relu input straddles
  // a kink. It is retried with the step divided by 10 down to min_step, and
  // skipped (and counted) if it still straddles one.
  double min_step = 1e-8;
};

struct GradCheckEntry {
  std::string name;
  std::size_t coords_checked = 0;
  double max_rel_error = 0;     // with the scale floor applied
  double max_coord_error = 0;   // plain per-coordinate relative error
  std::size_t kinks_refined = 0;  // resolved with a smaller step
  std::size_t kinks_skipped = 0;  // excluded from the error maxima
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error() const;
  double max_coord_error() const;
  std::size_t coords_checked() const;
  std::size_t kinks_refined() const;
  std::size_t kinks_skipped() const;
};

/// Compares reverse-mode gradients against central differences for every
/// parameter in `params`. `loss` must build a scalar on the given tape and
/// bind parameters through Tape::parameter.
GradCheckReport check_gradients(std::span<Parameter<double>* const> params,
                                const std::function<Var<double>(Tape<double>&)>& loss,
                                const GradCheckOptions& opts = {});

}  // namespace aacv
