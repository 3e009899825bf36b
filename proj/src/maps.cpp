#include "pwhf/maps.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>

#include "pwhf/parallel.hpp"

namespace pwhf {

namespace {

using ConstBlock = Eigen::Map<const RowMatrix>;
using Block = Eigen::Map<RowMatrix>;

ConstBlock block(const ParamVector& theta, Eigen::Index off, Eigen::Index rows, Eigen::Index cols) {
  return ConstBlock(theta.data() + off, rows, cols);
}
ConstBlock block(const Eigen::Ref<const Vector>& theta, Eigen::Index off, Eigen::Index rows,
                 Eigen::Index cols) {
  return ConstBlock(theta.data() + off, rows, cols);
}
Block block(Vector& out, Eigen::Index off, Eigen::Index rows, Eigen::Index cols) {
  return Block(out.data() + off, rows, cols);
}

}  // namespace

std::string_view to_string(MapKind kind) {
  switch (kind) {
    case MapKind::affine: return "affine";
    case MapKind::diagonal: return "diagonal";
    case MapKind::resnet: return "resnet";
  }
  return "?";
}

MapKind parse_map_kind(std::string_view name) {
  if (name == "affine") return MapKind::affine;
  if (name == "diagonal") return MapKind::diagonal;
  if (name == "resnet") return MapKind::resnet;
  throw ConfigError("unknown map kind '" + std::string(name) + "'");
}

MapDescriptor MapDescriptor::affine(Eigen::Index d) { return {MapKind::affine, d, {}}; }
MapDescriptor MapDescriptor::diagonal(Eigen::Index d) { return {MapKind::diagonal, d, {}}; }
MapDescriptor MapDescriptor::resnet(Eigen::Index d, Eigen::Index h1, Eigen::Index h2) {
  return {MapKind::resnet, d, {h1, h2}};
}
MapDescriptor MapDescriptor::resnet(Eigen::Index d) {
  const Eigen::Index w = d <= 2 ? 50 : 80;
  return resnet(d, w, w);
}

void MapDescriptor::validate() const {
  if (dim < 1) throw ConfigError("map dimension must be positive");
  if (kind == MapKind::resnet) {
    if (hidden_widths.size() != 2) throw ConfigError("resnet map needs exactly two hidden widths");
    for (auto w : hidden_widths)
      if (w < 1) throw ConfigError("resnet hidden widths must be positive");
  } else if (!hidden_widths.empty()) {
    throw ConfigError("hidden widths only apply to resnet maps");
  }
}

Eigen::Index MapDescriptor::param_count() const {
  switch (kind) {
    case MapKind::affine: return dim * (dim + 1);
    case MapKind::diagonal: return dim;
    case MapKind::resnet: return ResNetLayout(*this).size;
  }
  return 0;
}

ResNetLayout::ResNetLayout(const MapDescriptor& desc)
    : d(desc.dim), h1(desc.hidden_widths.at(0)), h2(desc.hidden_widths.at(1)) {
  w1 = 0;
  b1 = w1 + h1 * d;
  w2 = b1 + h1;
  b2 = w2 + h2 * h1;
  w3 = b2 + h2;
  size = w3 + d * h2;
}

// ---------------------------------------------------------------------------

Linearization::Linearization(const MapDescriptor& desc, const ParamVector& theta,
                             const Eigen::Ref<const Matrix>& z)
    : desc_(desc), theta_(theta), z_(z) {
  require_size(z.rows(), desc.dim, "Linearization: sample dimension");
  switch (desc_.kind) {
    case MapKind::affine: {
      const auto d = desc_.dim;
      out_ = block(theta_, 0, d, d) * z_;
      out_.colwise() += theta_.segment(d * d, d);
      break;
    }
    case MapKind::diagonal:
      out_ = theta_.asDiagonal() * z_;
      break;
    case MapKind::resnet: {
      const ResNetLayout L(desc_);
      h1_ = block(theta_, L.w1, L.h1, L.d) * z_;
      h1_.colwise() += theta_.segment(L.b1, L.h1);
      h1_ = h1_.array().tanh();
      h2_ = block(theta_, L.w2, L.h2, L.h1) * h1_;
      h2_.colwise() += theta_.segment(L.b2, L.h2);
      h2_ = h2_.array().tanh();
      s1_ = 1.0 - h1_.array().square();
      s2_ = 1.0 - h2_.array().square();
      out_ = z_ + block(theta_, L.w3, L.d, L.h2) * h2_;
      break;
    }
  }
}

Matrix Linearization::jvp(const Eigen::Ref<const Vector>& v) const {
  require_size(v.size(), theta_.size(), "jvp: tangent");
  switch (desc_.kind) {
    case MapKind::affine: {
      const auto d = desc_.dim;
      Matrix y = block(v, 0, d, d) * z_;
      y.colwise() += v.segment(d * d, d);
      return y;
    }
    case MapKind::diagonal:
      return v.asDiagonal() * z_;
    case MapKind::resnet: {
      const ResNetLayout L(desc_);
      Matrix da1 = block(v, L.w1, L.h1, L.d) * z_;
      da1.colwise() += v.segment(L.b1, L.h1);
      const Matrix dh1 = s1_.cwiseProduct(da1);
      Matrix da2 = block(v, L.w2, L.h2, L.h1) * h1_;
      da2.noalias() += block(theta_, L.w2, L.h2, L.h1) * dh1;
      da2.colwise() += v.segment(L.b2, L.h2);
      const Matrix dh2 = s2_.cwiseProduct(da2);
      Matrix y = block(v, L.w3, L.d, L.h2) * h2_;
      y.noalias() += block(theta_, L.w3, L.d, L.h2) * dh2;
      return y;
    }
  }
  return {};
}

Vector Linearization::vjp_sum(const Eigen::Ref<const Matrix>& u) const {
  require_size(u.rows(), desc_.dim, "vjp: cotangent");
  require_size(u.cols(), z_.cols(), "vjp: cotangent count");
  Vector g(theta_.size());
  switch (desc_.kind) {
    case MapKind::affine: {
      const auto d = desc_.dim;
      block(g, 0, d, d).noalias() = u * z_.transpose();
      g.segment(d * d, d) = u.rowwise().sum();
      break;
    }
    case MapKind::diagonal:
      g = u.cwiseProduct(z_).rowwise().sum();
      break;
    case MapKind::resnet: {
      const ResNetLayout L(desc_);
      block(g, L.w3, L.d, L.h2).noalias() = u * h2_.transpose();
      const Matrix g2 = (block(theta_, L.w3, L.d, L.h2).transpose() * u).cwiseProduct(s2_);
      block(g, L.w2, L.h2, L.h1).noalias() = g2 * h1_.transpose();
      g.segment(L.b2, L.h2) = g2.rowwise().sum();
      const Matrix g1 = (block(theta_, L.w2, L.h2, L.h1).transpose() * g2).cwiseProduct(s1_);
      block(g, L.w1, L.h1, L.d).noalias() = g1 * z_.transpose();
      g.segment(L.b1, L.h1) = g1.rowwise().sum();
      break;
    }
  }
  return g;
}

Vector Linearization::jvp_sq_grad_sum(const Eigen::Ref<const Vector>& v) const {
  require_size(v.size(), theta_.size(), "jvp_sq_grad: tangent");
  if (desc_.kind != MapKind::resnet) return Vector::Zero(theta_.size());

  const ResNetLayout L(desc_);
  const auto W2 = block(theta_, L.w2, L.h2, L.h1);
  const auto W3 = block(theta_, L.w3, L.d, L.h2);
  const auto V2 = block(v, L.w2, L.h2, L.h1);
  const auto V3 = block(v, L.w3, L.d, L.h2);

  // Tangent (forward-mode) sweep.
  Matrix da1 = block(v, L.w1, L.h1, L.d) * z_;
  da1.colwise() += v.segment(L.b1, L.h1);
  const Matrix dh1 = s1_.cwiseProduct(da1);
  Matrix da2 = V2 * h1_;
  da2.noalias() += W2 * dh1;
  da2.colwise() += v.segment(L.b2, L.h2);
  const Matrix dh2 = s2_.cwiseProduct(da2);
  Matrix y = V3 * h2_;
  y.noalias() += W3 * dh2;

  // Reverse sweep of ½|y|² through both the primal and the tangent graph.
  // tanh'' = −2·tanh·tanh'.
  Vector g(theta_.size());
  block(g, L.w3, L.d, L.h2).noalias() = y * dh2.transpose();
  const Matrix h2_bar = V3.transpose() * y;
  const Matrix dh2_bar = W3.transpose() * y;
  const Matrix da2_bar = s2_.cwiseProduct(dh2_bar);
  const Matrix a2_bar =
      (-2.0 * h2_.array() * s2_.array() * da2.array() * dh2_bar.array() +
       s2_.array() * h2_bar.array())
          .matrix();
  auto gW2 = block(g, L.w2, L.h2, L.h1);
  gW2.noalias() = da2_bar * dh1.transpose();
  gW2.noalias() += a2_bar * h1_.transpose();
  g.segment(L.b2, L.h2) = a2_bar.rowwise().sum();
  Matrix h1_bar = V2.transpose() * da2_bar;
  h1_bar.noalias() += W2.transpose() * a2_bar;
  const Matrix dh1_bar = W2.transpose() * da2_bar;
  const Matrix a1_bar =
      (-2.0 * h1_.array() * s1_.array() * da1.array() * dh1_bar.array() +
       s1_.array() * h1_bar.array())
          .matrix();
  block(g, L.w1, L.h1, L.d).noalias() = a1_bar * z_.transpose();
  g.segment(L.b1, L.h1) = a1_bar.rowwise().sum();
  return g;
}

// ---------------------------------------------------------------------------

PushForwardMap::PushForwardMap(MapDescriptor desc) : desc_(std::move(desc)) {
  desc_.validate();
  m_ = desc_.param_count();
}

void PushForwardMap::check_params(const ParamVector& theta) const {
  require_size(theta.size(), m_, "parameter vector");
}

Linearization PushForwardMap::linearize(const ParamVector& theta,
                                        const Eigen::Ref<const Matrix>& z) const {
  check_params(theta);
  return Linearization(desc_, theta, z);
}

Vector PushForwardMap::forward(const ParamVector& theta, const Eigen::Ref<const Vector>& z) const {
  require_size(z.size(), desc_.dim, "forward: point");
  return linearize(theta, z).outputs().col(0);
}

Matrix PushForwardMap::forward_batch(const ParamVector& theta,
                                     const Eigen::Ref<const Matrix>& z) const {
  return linearize(theta, z).outputs();
}

Vector PushForwardMap::jvp(const ParamVector& theta, const Eigen::Ref<const Vector>& z,
                           const Eigen::Ref<const Vector>& v) const {
  require_size(z.size(), desc_.dim, "jvp: point");
  return linearize(theta, z).jvp(v).col(0);
}

Vector PushForwardMap::vjp(const ParamVector& theta, const Eigen::Ref<const Vector>& z,
                           const Eigen::Ref<const Vector>& u) const {
  require_size(z.size(), desc_.dim, "vjp: point");
  require_size(u.size(), desc_.dim, "vjp: cotangent");
  return linearize(theta, z).vjp_sum(u);
}

Vector PushForwardMap::jvp_sq_grad(const ParamVector& theta, const Eigen::Ref<const Vector>& z,
                                   const Eigen::Ref<const Vector>& v) const {
  require_size(z.size(), desc_.dim, "jvp_sq_grad: point");
  return linearize(theta, z).jvp_sq_grad_sum(v);
}

ParamVector PushForwardMap::init_identity(std::uint64_t seed) const {
  const auto d = desc_.dim;
  ParamVector theta = ParamVector::Zero(m_);
  switch (desc_.kind) {
    case MapKind::affine:
      block(theta, 0, d, d).setIdentity();
      break;
    case MapKind::diagonal:
      theta.setOnes();
      break;
    case MapKind::resnet: {
      const ResNetLayout L(desc_);
      std::mt19937_64 rng(seed);
      auto fill = [&](Eigen::Index off, Eigen::Index count, Eigen::Index fan_in) {
        const double s = 0.1 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-s, s);
        for (Eigen::Index i = 0; i < count; ++i) theta[off + i] = u(rng);
      };
      fill(L.w1, L.h1 * L.d, L.d);
      fill(L.w2, L.h2 * L.h1, L.h1);
      fill(L.w3, L.d * L.h2, L.h2);
      break;
    }
  }
  return theta;
}

ParamVector PushForwardMap::affine_params(const Matrix& gamma, const Vector& b) const {
  if (desc_.kind != MapKind::affine) throw ConfigError("affine_params on a non-affine map");
  const auto d = desc_.dim;
  require_size(gamma.rows(), d, "affine Γ rows");
  require_size(gamma.cols(), d, "affine Γ cols");
  require_size(b.size(), d, "affine b");
  ParamVector theta(m_);
  block(theta, 0, d, d) = gamma;
  theta.segment(d * d, d) = b;
  return theta;
}

// ---------------------------------------------------------------------------

LinearizedBatch::LinearizedBatch(const PushForwardMap& map, const SampleBatch& batch,
                                 const ParamVector& theta)
    : n_(batch.size()), d_(map.dim()), m_(map.param_count()) {
  map.check_params(theta);
  require_size(batch.dim(), map.dim(), "batch dimension");
  if (n_ < 1) throw DimensionError("sample batch is empty");
  const Eigen::Index nchunks = (n_ + kChunk - 1) / kChunk;
  for (Eigen::Index c = 0; c < nchunks; ++c) offsets_.push_back(c * kChunk);
  std::vector<std::optional<Linearization>> tmp(static_cast<std::size_t>(nchunks));
  parallel_for(tmp.size(), [&](std::size_t c) {
    const Eigen::Index off = offsets_[c];
    tmp[c].emplace(map.linearize(theta, batch.points.middleCols(off, std::min(kChunk, n_ - off))));
  });
  chunks_.reserve(tmp.size());
  for (auto& t : tmp) chunks_.push_back(std::move(*t));
}

Matrix LinearizedBatch::pushed() const {
  Matrix out(d_, n_);
  for (std::size_t c = 0; c < chunks_.size(); ++c)
    out.middleCols(offsets_[c], chunks_[c].size()) = chunks_[c].outputs();
  return out;
}

Matrix LinearizedBatch::jvp_all(const Eigen::Ref<const Vector>& v) const {
  require_size(v.size(), m_, "jvp tangent");
  Matrix out(d_, n_);
  parallel_for(chunks_.size(), [&](std::size_t c) {
    out.middleCols(offsets_[c], chunks_[c].size()) = chunks_[c].jvp(v);
  });
  return out;
}

Vector LinearizedBatch::vjp_mean(const Eigen::Ref<const Matrix>& u) const {
  require_size(u.rows(), d_, "vjp cotangent rows");
  require_size(u.cols(), n_, "vjp cotangent count");
  std::vector<Vector> parts(chunks_.size());
  parallel_for(chunks_.size(), [&](std::size_t c) {
    parts[c] = chunks_[c].vjp_sum(u.middleCols(offsets_[c], chunks_[c].size()));
  });
  return pairwise_sum(std::move(parts)) / static_cast<double>(n_);
}

Vector LinearizedBatch::chunk_sum(const std::function<Vector(const Linearization&)>& fn) const {
  std::vector<Vector> parts(chunks_.size());
  parallel_for(chunks_.size(), [&](std::size_t c) { parts[c] = fn(chunks_[c]); });
  return pairwise_sum(std::move(parts));
}

}  // namespace pwhf
