#include "textbcs/optimizer.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "textbcs/errors.hpp"

namespace textbcs {

namespace {

constexpr char kMagic[8] = {'T', 'B', 'C', 'S', 'W', '0', '0', '1'};

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("truncated tensor file " + path.string());
  return v;
}

}  // namespace

void save_tensors(const std::filesystem::path& path, const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t->rank()));
    for (int d : t->shape()) put<std::int32_t>(out, d);
    out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<std::pair<std::string, Tensor>> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw DataError("not a tensor file: " + path.string());
  }
  const auto count = get<std::uint64_t>(in, path);
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(in, path), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw DataError("truncated " + path.string());
    Shape shape(get<std::uint32_t>(in, path));
    for (int& d : shape) d = get<std::int32_t>(in, path);
    Tensor t(shape);
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw DataError("truncated " + path.string());
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

Adam::Adam(std::vector<std::pair<std::string, ag::Var>> params) : params_(std::move(params)) {
  for (const auto& [name, p] : params_) {
    m_.push_back(Tensor::zeros_like(p->value));
    v_.push_back(Tensor::zeros_like(p->value));
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p->zero_grad();
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ag::Node& p = *params_[i].second;
    if (!p.has_grad()) continue;
    double* w = p.value.data();
    const double* g = p.grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g[j];
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + kEps);
    }
  }
}

nlohmann::json Adam::settings() const {
  return {{"name", "adam"}, {"beta1", kBeta1}, {"beta2", kBeta2}, {"eps", kEps}, {"weight_decay", 0.0}, {"steps", t_}};
}

void Adam::save(const std::filesystem::path& path) const {
  std::vector<std::pair<std::string, const Tensor*>> items;
  Tensor step_count({1}, static_cast<double>(t_));
  items.emplace_back("step", &step_count);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    items.emplace_back("m/" + params_[i].first, &m_[i]);
    items.emplace_back("v/" + params_[i].first, &v_[i]);
  }
  save_tensors(path, items);
}

void Adam::load(const std::filesystem::path& path) {
  const auto items = load_tensors(path);
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : items) by_name[name] = &t;
  auto fetch = [&](const std::string& name, const Tensor& like) {
    auto it = by_name.find(name);
    if (it == by_name.end() || !it->second->same_shape(like)) throw DataError("optimizer state mismatch at " + name);
    return *it->second;
  };
  const Tensor step_count = fetch("step", Tensor({1}));
  t_ = static_cast<long>(step_count[0]);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i] = fetch("m/" + params_[i].first, m_[i]);
    v_[i] = fetch("v/" + params_[i].first, v_[i]);
  }
}

double clip_grad_norm(const std::vector<std::pair<std::string, ag::Var>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    if (!p->has_grad()) continue;
    for (double g : p->grad.values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& [name, p] : params) {
      if (p->has_grad()) p->grad.scale_(scale);
    }
  }
  return norm;
}

}  // namespace textbcs
