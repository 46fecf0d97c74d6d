#include "bnet/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace bnet {

Mlp::Mlp(int input_dim, std::vector<int> hidden, std::vector<HeadSpec> heads, std::uint64_t seed)
    : input_dim_(input_dim), hidden_(std::move(hidden)), head_specs_(std::move(heads)) {
  if (input_dim_ < 1) throw std::invalid_argument("Mlp: input_dim must be >= 1");
  std::mt19937_64 rng(seed);
  auto glorot = [&](Dense& d, double scale = 1.0) {
    const double lim = scale * std::sqrt(6.0 / (d.in() + d.out()));
    std::uniform_real_distribution<double> u(-lim, lim);
    for (Eigen::Index i = 0; i < d.W.size(); ++i) d.W.data()[i] = u(rng);
  };
  int prev = input_dim_;
  for (int w : hidden_) {
    if (w < 1) throw std::invalid_argument("Mlp: hidden widths must be >= 1");
    trunk_.emplace_back(prev, w);
    glorot(trunk_.back());
    prev = w;
  }
  for (const auto& h : head_specs_) {
    if (h.tap < 0 || h.tap > static_cast<int>(hidden_.size())) throw std::invalid_argument("Mlp: bad head tap");
    if (h.outputs < 1) throw std::invalid_argument("Mlp: head outputs must be >= 1");
    const int in = h.tap == 0 ? input_dim_ : hidden_[h.tap - 1];
    heads_.emplace_back(in, h.outputs);
    if (h.init_scale > 0.0) glorot(heads_.back(), h.init_scale);
  }
}

Mlp::Cache Mlp::forward(const Eigen::VectorXd& x) const {
  if (x.size() != input_dim_) throw std::invalid_argument("Mlp::forward: input has wrong size");
  Cache c;
  c.acts.reserve(trunk_.size() + 1);
  c.acts.push_back(x);
  for (const auto& layer : trunk_) {
    c.acts.push_back((layer.W * c.acts.back() + layer.b).array().tanh().matrix());
  }
  c.heads.reserve(heads_.size());
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    c.heads.push_back(heads_[i].W * c.acts[head_specs_[i].tap] + heads_[i].b);
  }
  return c;
}

int Mlp::num_params() const {
  int n = 0;
  for (const auto& d : trunk_) n += static_cast<int>(d.W.size() + d.b.size());
  for (const auto& d : heads_) n += static_cast<int>(d.W.size() + d.b.size());
  return n;
}

namespace {

template <typename Fn>
void for_each_layer(const std::vector<Dense>& trunk, const std::vector<Dense>& heads, Fn&& fn) {
  int off = 0;
  for (const auto& d : trunk) {
    fn(d, off);
    off += static_cast<int>(d.W.size() + d.b.size());
  }
  for (const auto& d : heads) {
    fn(d, off);
    off += static_cast<int>(d.W.size() + d.b.size());
  }
}

}  // namespace

// Layout per layer: W column-major (Eigen default), then b.
Eigen::VectorXd Mlp::flat() const {
  Eigen::VectorXd theta(num_params());
  for_each_layer(trunk_, heads_, [&](const Dense& d, int off) {
    theta.segment(off, d.W.size()) = Eigen::Map<const Eigen::VectorXd>(d.W.data(), d.W.size());
    theta.segment(off + d.W.size(), d.b.size()) = d.b;
  });
  return theta;
}

void Mlp::set_flat(const Eigen::VectorXd& theta) {
  if (theta.size() != num_params()) throw std::invalid_argument("Mlp::set_flat: wrong size");
  int off = 0;
  auto load = [&](Dense& d) {
    Eigen::Map<Eigen::VectorXd>(d.W.data(), d.W.size()) = theta.segment(off, d.W.size());
    off += static_cast<int>(d.W.size());
    d.b = theta.segment(off, d.b.size());
    off += static_cast<int>(d.b.size());
  };
  for (auto& d : trunk_) load(d);
  for (auto& d : heads_) load(d);
}

std::pair<int, int> Mlp::head_range(int i) const {
  int off = 0;
  for (const auto& d : trunk_) off += static_cast<int>(d.W.size() + d.b.size());
  for (int k = 0; k < i; ++k) off += static_cast<int>(heads_[k].W.size() + heads_[k].b.size());
  return {off, static_cast<int>(heads_[i].W.size() + heads_[i].b.size())};
}

void Mlp::backward(const Cache& cache, const std::vector<Eigen::VectorXd>& head_grads, Eigen::VectorXd& grad) const {
  if (grad.size() != num_params()) grad = Eigen::VectorXd::Zero(num_params());
  if (head_grads.size() != heads_.size()) throw std::invalid_argument("Mlp::backward: head gradient count");

  const int depth = static_cast<int>(trunk_.size());
  // Gradient w.r.t. each trunk activation (acts[k]).
  std::vector<Eigen::VectorXd> g_act(depth + 1);
  for (int k = 0; k <= depth; ++k) g_act[k] = Eigen::VectorXd::Zero(cache.acts[k].size());

  std::vector<int> offsets;
  for_each_layer(trunk_, heads_, [&](const Dense&, int off) { offsets.push_back(off); });

  for (std::size_t i = 0; i < heads_.size(); ++i) {
    const Eigen::VectorXd& gh = head_grads[i];
    if (gh.size() == 0) continue;
    const Dense& d = heads_[i];
    const Eigen::VectorXd& a = cache.acts[head_specs_[i].tap];
    const int off = offsets[depth + i];
    Eigen::Map<Eigen::MatrixXd>(grad.data() + off, d.out(), d.in()) += gh * a.transpose();
    grad.segment(off + d.W.size(), d.out()) += gh;
    g_act[head_specs_[i].tap] += d.W.transpose() * gh;
  }
  for (int k = depth; k >= 1; --k) {
    const Dense& d = trunk_[k - 1];
    const Eigen::VectorXd& y = cache.acts[k];
    const Eigen::VectorXd gz = g_act[k].cwiseProduct((1.0 - y.array().square()).matrix());
    const int off = offsets[k - 1];
    Eigen::Map<Eigen::MatrixXd>(grad.data() + off, d.out(), d.in()) += gz * cache.acts[k - 1].transpose();
    grad.segment(off + d.W.size(), d.out()) += gz;
    if (k > 1) g_act[k - 1] += d.W.transpose() * gz;
  }
}

Adam::Adam(int n, AdamConfig cfg) : cfg_(cfg), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

void Adam::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
  ++t_;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
  v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  theta.array() -= cfg_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
}

}  // namespace bnet
