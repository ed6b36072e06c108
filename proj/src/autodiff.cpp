#include "aacv/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace aacv {

// ---------------------------------------------------------------- params

template <typename T>
Parameter<T>& ParameterStore<T>::add(std::string name, Tensor<T> value, bool decay) {
  if (index_.count(name) != 0) throw ContractError("duplicate parameter name: " + name);
  index_.emplace(name, items_.size());
  Tensor<T> grad(value.shape());
  items_.push_back(Parameter<T>{std::move(name), std::move(value), std::move(grad), decay});
  return items_.back();
}

template <typename T>
Parameter<T>* ParameterStore<T>::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &items_[it->second];
}

template <typename T>
const Parameter<T>* ParameterStore<T>::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &items_[it->second];
}

template <typename T>
Parameter<T>& ParameterStore<T>::get(std::string_view name) {
  auto* p = find(name);
  if (!p) throw ContractError("unknown parameter: " + std::string(name));
  return *p;
}

template <typename T>
const Parameter<T>& ParameterStore<T>::get(std::string_view name) const {
  const auto* p = find(name);
  if (!p) throw ContractError("unknown parameter: " + std::string(name));
  return *p;
}

template <typename T>
std::size_t ParameterStore<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.value.size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : items_) p.grad.fill(T{0});
}

// ------------------------------------------------------------------ tape

template <typename T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.tag = "constant";
  n.value = std::move(value);
  n.leaf = true;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  Node n;
  n.tag = "parameter";
  n.value = p.value;
  n.param = &p;
  n.needs_grad = true;
  n.leaf = true;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::input(Tensor<T> value) {
  Node n;
  n.tag = "input";
  n.value = std::move(value);
  n.needs_grad = true;
  n.leaf = true;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::record(std::string_view tag, Tensor<T> value, std::vector<std::size_t> parents,
                       Backward backward) {
  Node n;
  n.tag = std::string(tag);
  n.value = std::move(value);
  for (auto p : parents) {
    if (p >= nodes_.size()) throw ContractError("tape: parent recorded after child");
    n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
  }
  n.parents = std::move(parents);
  n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
const Tensor<T>& Tape<T>::grad(std::size_t id) {
  auto& n = nodes_.at(id);
  if (!n.grad) n.grad.emplace(n.value.shape());
  return *n.grad;
}

template <typename T>
void Tape<T>::accumulate(std::size_t id, const Tensor<T>& g) {
  auto& n = nodes_.at(id);
  if (!n.needs_grad) return;
  if (g.shape() != n.value.shape()) {
    throw ShapeError("tape: gradient shape " + to_string(g.shape()) + " does not match value " +
                     to_string(n.value.shape()) + " at node '" + n.tag + "'");
  }
  if (!n.grad) {
    n.grad = g;
  } else {
    add_into(*n.grad, g);
  }
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw ContractError("backward: loss belongs to another tape");
  if (value(loss.id).size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        to_string(value(loss.id).shape()));
  }
  for (auto& n : nodes_) {
    if (n.param) n.param->grad = Tensor<T>(n.param->value.shape());
  }
  for (auto& n : nodes_) n.grad.reset();
  visits_ = 0;
  {
    auto& l = nodes_[loss.id];
    l.grad.emplace(l.value.shape(), T{1});
  }
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    ++visits_;
    Node& n = nodes_[i];
    if (!n.grad || !n.needs_grad) continue;
    if (n.param) add_into(n.param->grad, *n.grad);
    if (n.backward) n.backward(*this, i);
    if (!n.leaf) n.grad.reset();
  }
  // Nodes after the loss are not part of its graph but still count as visited.
  visits_ += nodes_.size() - loss.id - 1;
}

// -------------------------------------------------------------------- ops

namespace ad {

namespace {

template <typename T>
void same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  same_tape(a, b);
  return a.tape->record("add", aacv::add(a.value(), b.value()), {a.id, b.id},
                        [a = a.id, b = b.id](Tape<T>& t, std::size_t self) {
                          const auto& g = t.grad(self);
                          t.accumulate(a, g);
                          t.accumulate(b, g);
                        });
}

template <typename T>
Var<T> add_constant(Var<T> a, const Tensor<T>& c) {
  return a.tape->record("add_constant", aacv::add(a.value(), c), {a.id},
                        [a = a.id](Tape<T>& t, std::size_t self) { t.accumulate(a, t.grad(self)); });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  return a.tape->record("scale", aacv::scale(a.value(), s), {a.id},
                        [a = a.id, s](Tape<T>& t, std::size_t self) {
                          t.accumulate(a, aacv::scale(t.grad(self), s));
                        });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T s{0};
  for (auto v : a.value().data()) s += v;
  return a.tape->record("sum", Tensor<T>::scalar(s), {a.id},
                        [a = a.id](Tape<T>& t, std::size_t self) {
                          const T g = t.grad(self)[0];
                          t.accumulate(a, Tensor<T>(t.value(a).shape(), g));
                        });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool ta, bool tb) {
  same_tape(a, b);
  return a.tape->record(
      "matmul", batched_matmul(a.value(), b.value(), ta, tb), {a.id, b.id},
      [a = a.id, b = b.id, ta, tb](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& av = t.value(a);
        const auto& bv = t.value(b);
        // C = op(A) op(B)
        if (t.needs_grad(a)) {
          t.accumulate(a, ta ? batched_matmul(bv, g, tb, true) : batched_matmul(g, bv, false, !tb));
        }
        if (t.needs_grad(b)) {
          t.accumulate(b, tb ? batched_matmul(g, av, true, ta) : batched_matmul(av, g, !ta, false));
        }
      });
}

template <typename T>
Var<T> softmax(Var<T> a) {
  return a.tape->record("softmax", softmax_rows(a.value()), {a.id},
                        [a = a.id](Tape<T>& t, std::size_t self) {
                          t.accumulate(a, softmax_rows_backward(t.value(self), t.grad(self)));
                        });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::size_t stride) {
  same_tape(x, w);
  return x.tape->record(
      "conv2d", aacv::conv2d(x.value(), w.value(), stride), {x.id, w.id},
      [x = x.id, w = w.id, stride](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        if (t.needs_grad(x)) {
          t.accumulate(x, conv2d_grad_input(g, t.value(w), t.value(x).shape(), stride));
        }
        if (t.needs_grad(w)) {
          t.accumulate(w, conv2d_grad_weight(t.value(x), g, t.value(w).shape(), stride));
        }
      });
}

template <typename T>
Var<T> avg_pool_3x3_s2(Var<T> x) {
  return x.tape->record("avg_pool_3x3_s2", aacv::avg_pool_3x3_s2(x.value()), {x.id},
                        [x = x.id](Tape<T>& t, std::size_t self) {
                          t.accumulate(x, avg_pool_3x3_s2_backward(t.grad(self), t.value(x).shape()));
                        });
}

template <typename T>
Var<T> bilinear_upsample(Var<T> x, std::size_t out_h, std::size_t out_w) {
  return x.tape->record("bilinear_upsample", aacv::bilinear_upsample(x.value(), out_h, out_w),
                        {x.id}, [x = x.id](Tape<T>& t, std::size_t self) {
                          t.accumulate(x, bilinear_upsample_backward(t.grad(self), t.value(x).shape()));
                        });
}

template <typename T>
Var<T> batchnorm_train(Var<T> x, Var<T> gamma, Var<T> beta, T eps, BatchStats<T>* stats_out) {
  same_tape(x, gamma);
  same_tape(x, beta);
  auto stats = channel_stats(x.value());
  auto y = batchnorm(x.value(), gamma.value().data(), beta.value().data(),
                     std::span<const T>(stats.mean), std::span<const T>(stats.var), eps);
  if (stats_out) *stats_out = stats;
  return x.tape->record(
      "batchnorm_train", std::move(y), {x.id, gamma.id, beta.id},
      [x = x.id, gm = gamma.id, bt = beta.id, stats = std::move(stats), eps](Tape<T>& t,
                                                                            std::size_t self) {
        const auto& g = t.grad(self);
        const auto& xv = t.value(x);
        const auto& gv = t.value(gm);
        const std::size_t c = xv.dim(xv.rank() - 1);
        const std::size_t n = xv.size() / c;
        std::vector<T> inv(c), sum_g(c, T{0}), sum_gx(c, T{0});
        for (std::size_t k = 0; k < c; ++k) inv[k] = T{1} / std::sqrt(stats.var[k] + eps);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < c; ++k) {
            const T xhat = (xv[i * c + k] - stats.mean[k]) * inv[k];
            sum_g[k] += g[i * c + k];
            sum_gx[k] += g[i * c + k] * xhat;
          }
        }
        if (t.needs_grad(gm)) t.accumulate(gm, Tensor<T>(Shape{c}, sum_gx));
        if (t.needs_grad(bt)) t.accumulate(bt, Tensor<T>(Shape{c}, sum_g));
        if (t.needs_grad(x)) {
          Tensor<T> dx(xv.shape());
          const T nn = static_cast<T>(n);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < c; ++k) {
              const T xhat = (xv[i * c + k] - stats.mean[k]) * inv[k];
              dx[i * c + k] = gv[k] * inv[k] / nn *
                              (nn * g[i * c + k] - sum_g[k] - xhat * sum_gx[k]);
            }
          }
          t.accumulate(x, dx);
        }
      });
}

template <typename T>
Var<T> batchnorm_eval(Var<T> x, Var<T> gamma, Var<T> beta, std::span<const T> mean,
                      std::span<const T> var, T eps) {
  same_tape(x, gamma);
  same_tape(x, beta);
  std::vector<T> m(mean.begin(), mean.end()), v(var.begin(), var.end());
  auto y = batchnorm(x.value(), gamma.value().data(), beta.value().data(), mean, var, eps);
  return x.tape->record(
      "batchnorm_eval", std::move(y), {x.id, gamma.id, beta.id},
      [x = x.id, gm = gamma.id, bt = beta.id, m = std::move(m), v = std::move(v), eps](
          Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& xv = t.value(x);
        const auto& gv = t.value(gm);
        const std::size_t c = xv.dim(xv.rank() - 1);
        const std::size_t n = xv.size() / c;
        Tensor<T> dx(xv.shape()), dg(Shape{c}), db(Shape{c});
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < c; ++k) {
            const T inv = T{1} / std::sqrt(v[k] + eps);
            dx[i * c + k] = g[i * c + k] * gv[k] * inv;
            dg[k] += g[i * c + k] * (xv[i * c + k] - m[k]) * inv;
            db[k] += g[i * c + k];
          }
        }
        t.accumulate(x, dx);
        t.accumulate(gm, dg);
        t.accumulate(bt, db);
      });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return x.tape->record("relu", aacv::relu(x.value()), {x.id},
                        [x = x.id](Tape<T>& t, std::size_t self) {
                          const auto& g = t.grad(self);
                          const auto& xv = t.value(x);
                          Tensor<T> dx(xv.shape());
                          for (std::size_t i = 0; i < xv.size(); ++i) {
                            dx[i] = xv[i] > T{0} ? g[i] : T{0};
                          }
                          t.accumulate(x, dx);
                        });
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  return x.tape->record("global_avg_pool", aacv::global_avg_pool(x.value()), {x.id},
                        [x = x.id](Tape<T>& t, std::size_t self) {
                          const auto& g = t.grad(self);
                          const auto d = dims4(t.value(x), "global_avg_pool");
                          Tensor<T> dx(t.value(x).shape());
                          const T inv = T{1} / static_cast<T>(d.h * d.w);
                          for (std::size_t b = 0; b < d.b; ++b) {
                            for (std::size_t p = 0; p < d.h * d.w; ++p) {
                              for (std::size_t c = 0; c < d.c; ++c) {
                                dx[(b * d.h * d.w + p) * d.c + c] = g[b * d.c + c] * inv;
                              }
                            }
                          }
                          t.accumulate(x, dx);
                        });
}

template <typename T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
  same_tape(x, w);
  same_tape(x, b);
  return x.tape->record(
      "dense", aacv::dense(x.value(), w.value(), b.value()), {x.id, w.id, b.id},
      [x = x.id, w = w.id, b = b.id](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        if (t.needs_grad(x)) t.accumulate(x, batched_matmul(g, t.value(w), false, true));
        if (t.needs_grad(w)) t.accumulate(w, batched_matmul(t.value(x), g, true, false));
        if (t.needs_grad(b)) t.accumulate(b, sum_axis(g, 0));
      });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::vector<int> labels) {
  const T loss = cross_entropy_with_logits(logits.value(), std::span<const int>(labels));
  return logits.tape->record(
      "cross_entropy", Tensor<T>::scalar(loss), {logits.id},
      [z = logits.id, labels = std::move(labels)](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0];
        auto p = softmax_rows(t.value(z));
        const std::size_t k = p.dim(1);
        const T inv_b = T{1} / static_cast<T>(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) {
          p[i * k + static_cast<std::size_t>(labels[i])] -= T{1};
        }
        t.accumulate(z, aacv::scale(p, g * inv_b));
      });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  return x.tape->record("reshape", x.value().reshaped(std::move(shape)), {x.id},
                        [x = x.id](Tape<T>& t, std::size_t self) {
                          t.accumulate(x, t.grad(self).reshaped(t.value(x).shape()));
                        });
}

template <typename T>
Var<T> permute(Var<T> x, std::vector<std::size_t> perm) {
  auto y = aacv::permute(x.value(), perm);
  return x.tape->record("permute", std::move(y), {x.id},
                        [x = x.id, perm = std::move(perm)](Tape<T>& t, std::size_t self) {
                          std::vector<std::size_t> inverse(perm.size());
                          for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
                          t.accumulate(x, aacv::permute(t.grad(self), inverse));
                        });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::vector<const Tensor<T>*> values;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    same_tape(parts.front(), p);
    values.push_back(&p.value());
    ids.push_back(p.id);
  }
  return parts.front().tape->record(
      "concat", aacv::concat(values, axis), ids, [ids, axis](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        std::size_t offset = 0;
        for (auto id : ids) {
          const std::size_t len = t.value(id).dim(axis);
          if (t.needs_grad(id)) t.accumulate(id, aacv::slice(g, axis, offset, len));
          offset += len;
        }
      });
}

template <typename T>
Var<T> slice(Var<T> x, std::size_t axis, std::size_t begin, std::size_t len) {
  return x.tape->record(
      "slice", aacv::slice(x.value(), axis, begin, len), {x.id},
      [x = x.id, axis, begin](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& xs = t.value(x).shape();
        // Scatter back into a zero tensor: pad on both sides via concat.
        std::vector<Tensor<T>> pieces;
        std::vector<const Tensor<T>*> ptrs;
        Shape s = xs;
        if (begin > 0) {
          s[axis] = begin;
          pieces.emplace_back(s);
        }
        const std::size_t after = xs[axis] - begin - g.dim(axis);
        pieces.push_back(g);
        if (after > 0) {
          s[axis] = after;
          pieces.emplace_back(s);
        }
        for (const auto& p : pieces) ptrs.push_back(&p);
        t.accumulate(x, aacv::concat(ptrs, axis));
      });
}

template <typename T>
Var<T> pad_trailing(Var<T> x, std::size_t axis, std::size_t new_len) {
  return x.tape->record("pad_trailing", aacv::pad_trailing(x.value(), axis, new_len), {x.id},
                        [x = x.id, axis](Tape<T>& t, std::size_t self) {
                          t.accumulate(x, aacv::slice(t.grad(self), axis, 0, t.value(x).dim(axis)));
                        });
}

template <typename T>
Var<T> expand_tile(Var<T> x, std::size_t axis, std::size_t reps) {
  return x.tape->record("expand_tile", aacv::expand_tile(x.value(), axis, reps), {x.id},
                        [x = x.id, axis](Tape<T>& t, std::size_t self) {
                          t.accumulate(x, sum_axis(t.grad(self), axis));
                        });
}

#define AACV_INSTANTIATE(T)                                                                   \
  template Var<T> add(Var<T>, Var<T>);                                                        \
  template Var<T> add_constant(Var<T>, const Tensor<T>&);                                     \
  template Var<T> scale(Var<T>, T);                                                           \
  template Var<T> sum(Var<T>);                                                                \
  template Var<T> matmul(Var<T>, Var<T>, bool, bool);                                         \
  template Var<T> softmax(Var<T>);                                                            \
  template Var<T> conv2d(Var<T>, Var<T>, std::size_t);                                        \
  template Var<T> avg_pool_3x3_s2(Var<T>);                                                    \
  template Var<T> bilinear_upsample(Var<T>, std::size_t, std::size_t);                        \
  template Var<T> batchnorm_train(Var<T>, Var<T>, Var<T>, T, BatchStats<T>*);                 \
  template Var<T> batchnorm_eval(Var<T>, Var<T>, Var<T>, std::span<const T>,                  \
                                 std::span<const T>, T);                                      \
  template Var<T> relu(Var<T>);                                                               \
  template Var<T> global_avg_pool(Var<T>);                                                    \
  template Var<T> dense(Var<T>, Var<T>, Var<T>);                                              \
  template Var<T> cross_entropy(Var<T>, std::vector<int>);                                    \
  template Var<T> reshape(Var<T>, Shape);                                                     \
  template Var<T> permute(Var<T>, std::vector<std::size_t>);                                  \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                            \
  template Var<T> slice(Var<T>, std::size_t, std::size_t, std::size_t);                       \
  template Var<T> pad_trailing(Var<T>, std::size_t, std::size_t);                             \
  template Var<T> expand_tile(Var<T>, std::size_t, std::size_t);
AACV_INSTANTIATE(float)
AACV_INSTANTIATE(double)
#undef AACV_INSTANTIATE

}  // namespace ad

// --------------------------------------------------------- gradient check

double GradCheckReport::max_rel_error() const {
  double m = 0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

double GradCheckReport::max_coord_error() const {
  double m = 0;
  for (const auto& e : entries) m = std::max(m, e.max_coord_error);
  return m;
}

std::size_t GradCheckReport::coords_checked() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.coords_checked;
  return n;
}

std::size_t GradCheckReport::kinks_refined() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.kinks_refined;
  return n;
}

std::size_t GradCheckReport::kinks_skipped() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.kinks_skipped;
  return n;
}

namespace {

// Sign of every relu input on the tape, in recording order.
std::vector<bool> relu_pattern(const Tape<double>& tape) {
  std::vector<bool> out;
  for (std::size_t id = 0; id < tape.size(); ++id) {
    if (tape.tag(id) != "relu") continue;
    for (double v : tape.value(tape.parents(id).front()).data()) out.push_back(v > 0);
  }
  return out;
}

}  // namespace

GradCheckReport check_gradients(std::span<Parameter<double>* const> params,
                                const std::function<Var<double>(Tape<double>&)>& loss,
                                const GradCheckOptions& opts) {
  GradCheckReport report;
  std::vector<bool> base_pattern;
  {
    Tape<double> tape;
    auto l = loss(tape);
    tape.backward(l);
    base_pattern = relu_pattern(tape);
  }
  std::vector<Tensor<double>> analytic;
  for (auto* p : params) analytic.push_back(p->grad);

  struct Eval {
    double loss;
    bool kink;
  };
  auto evaluate = [&](const Parameter<double>& p, std::size_t coord) {
    Tape<double> tape;
    const double v = loss(tape).value()[0];
    if (!std::isfinite(v)) {
      throw NumericError("check_gradients: non-finite loss when perturbing '" + p.name +
                         "' at coordinate " + std::to_string(coord));
    }
    return Eval{v, relu_pattern(tape) != base_pattern};
  };

  std::mt19937_64 rng(opts.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = *params[pi];
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opts.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    double scale = 0;
    for (double g : analytic[pi].data()) scale = std::max(scale, std::abs(g));
    const double floor = std::max(1e-8, opts.scale_floor * scale);
    GradCheckEntry entry{p.name, coords.size(), 0.0, 0.0, 0, 0};
    for (auto i : coords) {
      const double original = p.value[i];
      double step = opts.step, numeric = 0;
      bool kink = true;
      for (; step >= opts.min_step; step /= 10) {
        p.value[i] = original + step;
        const auto up = evaluate(p, i);
        p.value[i] = original - step;
        const auto down = evaluate(p, i);
        p.value[i] = original;
        numeric = (up.loss - down.loss) / (2 * step);
        kink = up.kink || down.kink;
        if (!kink) break;
      }
      if (kink) {
        ++entry.kinks_skipped;
        continue;
      }
      if (step != opts.step) ++entry.kinks_refined;
      const double a = analytic[pi][i];
      const double diff = std::isfinite(a) ? std::abs(a - numeric) : INFINITY;
      const double denom = std::max(std::abs(a), std::abs(numeric));
      entry.max_coord_error = std::max(entry.max_coord_error, diff / std::max(denom, 1e-8));
      entry.max_rel_error = std::max(entry.max_rel_error, diff / std::max(denom, floor));
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace aacv
