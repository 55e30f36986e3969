#include "vtcd/backend.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "vtcd/random.hpp"

namespace vtcd {

using Eigen::MatrixXd;
using Eigen::VectorXd;

const char* target_kind_name(TargetKind kind) {
  switch (kind) {
    case TargetKind::kDenseMaskIou: return "dense_mask_iou";
    case TargetKind::kClassScore: return "class_score";
    case TargetKind::kScalarRegression: return "scalar_regression";
  }
  return "?";
}

TaskTarget TaskTarget::dense(BinaryMask groundtruth) {
  TaskTarget t;
  t.kind = TargetKind::kDenseMaskIou;
  t.mask = std::move(groundtruth);
  return t;
}

TaskTarget TaskTarget::class_score(int index) {
  TaskTarget t;
  t.kind = TargetKind::kClassScore;
  t.class_index = index;
  return t;
}

TaskTarget TaskTarget::regression(double value) {
  TaskTarget t;
  t.kind = TargetKind::kScalarRegression;
  t.scalar = value;
  return t;
}

void TaskTarget::validate() const {
  switch (kind) {
    case TargetKind::kDenseMaskIou:
      if (!mask) throw Error(ErrorCode::kInvalidArgument, "dense_mask_iou target needs a groundtruth mask");
      mask->validate();
      break;
    case TargetKind::kClassScore:
      if (class_index < 0) throw Error(ErrorCode::kInvalidArgument, "class index must be >= 0");
      break;
    case TargetKind::kScalarRegression:
      if (!std::isfinite(scalar)) throw Error(ErrorCode::kInvalidArgument, "regression target must be finite");
      break;
  }
}

Json target_to_json(const TaskTarget& target) {
  Json j{{"kind", target_kind_name(target.kind)}};
  switch (target.kind) {
    case TargetKind::kDenseMaskIou: j["payload"] = mask_to_json(*target.mask); break;
    case TargetKind::kClassScore: j["payload"] = target.class_index; break;
    case TargetKind::kScalarRegression: j["payload"] = target.scalar; break;
  }
  return j;
}

TaskTarget target_from_json(const Json& j) {
  const auto kind = j.at("kind").get<std::string>();
  TaskTarget t;
  if (kind == "dense_mask_iou") {
    t = TaskTarget::dense(mask_from_json(j.at("payload")));
  } else if (kind == "class_score") {
    t = TaskTarget::class_score(j.at("payload").get<int>());
  } else if (kind == "scalar_regression") {
    t = TaskTarget::regression(j.at("payload").get<double>());
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown target kind '" + kind + "'");
  }
  t.validate();
  return t;
}

void validate_request(const ModelBackend& backend, const MaskRequest& request) {
  const auto sites = backend.list_sites();
  const std::set<SiteId> known(sites.begin(), sites.end());
  const Dims3 grid = backend.grid();
  std::set<SiteId> seen;
  for (const auto& m : request.masks) {
    if (!known.contains(m.site))
      throw BackendError(ErrorCode::kInvalidArgument, "mask targets unknown site " + m.site.tag());
    if (!seen.insert(m.site).second)
      throw BackendError(ErrorCode::kInvalidArgument, "more than one mask for site " + m.site.tag());
    if (!(m.mask.dims == grid))
      throw BackendError(ErrorCode::kInvalidArgument, "mask dims differ from the site grid at " + m.site.tag());
    m.mask.validate();
  }
  request.target.validate();
}

double softmax_probability(std::span<const double> logits, int index) {
  if (index < 0 || index >= static_cast<int>(logits.size()))
    throw Error(ErrorCode::kInvalidArgument, "class index out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return std::exp(logits[index] - mx) / z;
}

double standard_metric(const Prediction& prediction, const TaskTarget& target) {
  switch (target.kind) {
    case TargetKind::kClassScore:
      return softmax_probability(prediction.logits, target.class_index);
    case TargetKind::kScalarRegression: {
      if (prediction.logits.empty()) throw Error(ErrorCode::kInvalidArgument, "prediction has no outputs");
      const double diff = prediction.logits[0] - target.scalar;
      return -diff * diff;
    }
    case TargetKind::kDenseMaskIou: {
      const Grid gt = decode_rle(*target.mask);
      if (gt.size() != prediction.dense.size())
        throw Error(ErrorCode::kInvalidArgument, "groundtruth mask does not match the dense prediction grid");
      Grid pred(gt.size());
      for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = prediction.dense[i] > 0.0 ? 1 : 0;
      if (union_count(pred, gt) == 0) return 1.0;
      return grid_iou(pred, gt);
    }
  }
  return 0.0;
}

double NativeBackend::evaluate(const MaskRequest& request) const {
  validate_request(*this, request);
  return metric(forward(request.video_id, request.masks), request.target);
}

// ---------------------------------------------------------------------------
// Toy transformer

void ToyConfig::validate() const {
  if (layers < 1 || heads < 1 || dim < 1 || in_channels < 1 || classes < 1 || mlp_ratio < 1)
    throw Error(ErrorCode::kInvalidArgument, "toy config sizes must be >= 1");
  if (dim % heads != 0) throw Error(ErrorCode::kInvalidArgument, "dim must be divisible by heads");
  if (grid.t < 1 || grid.h < 1 || grid.w < 1) throw Error(ErrorCode::kInvalidArgument, "grid dims must be >= 1");
  if (!(init_std >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "init_std must be >= 0");
}

ToyWeights ToyWeights::random(const ToyConfig& config) {
  config.validate();
  Rng rng(config.seed);
  auto mat = [&](int r, int c) {
    MatrixXd m(r, c);
    for (int j = 0; j < c; ++j)
      for (int i = 0; i < r; ++i) m(i, j) = rng.normal(0.0, config.init_std);
    return m;
  };
  auto vec = [&](int n) {
    VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.normal(0.0, config.init_std);
    return v;
  };
  const int d = config.dim;
  const int hidden = d * config.mlp_ratio;
  ToyWeights w;
  w.embed = mat(d, config.in_channels);
  w.embed_bias = vec(d);
  for (int l = 0; l < config.layers; ++l) {
    ToyLayerWeights lw;
    lw.wq = mat(d, d);
    lw.wk = mat(d, d);
    lw.wv = mat(d, d);
    lw.wo = mat(d, d);
    lw.bo = vec(d);
    lw.w1 = mat(hidden, d);
    lw.b1 = vec(hidden);
    lw.w2 = mat(d, hidden);
    lw.b2 = vec(d);
    w.layers.push_back(std::move(lw));
  }
  w.cls = mat(config.classes, d);
  w.cls_bias = vec(config.classes);
  w.dense = vec(d);
  w.dense_bias = rng.normal(0.0, config.init_std);
  return w;
}

namespace {

Json matrix_to_json(const MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) row[j] = m(i, j);
    rows.push_back(row);
  }
  return rows;
}

MatrixXd matrix_from_json(const Json& j, Eigen::Index rows, Eigen::Index cols) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw Error(ErrorCode::kInvalidArgument, "weight matrix has wrong row count");
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto row = j[i].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != cols)
      throw Error(ErrorCode::kInvalidArgument, "weight matrix has wrong column count");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row[c];
  }
  return m;
}

Json vector_to_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd vector_from_json(const Json& j, Eigen::Index n) {
  const auto values = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(values.size()) != n) throw Error(ErrorCode::kInvalidArgument, "bias has wrong length");
  return Eigen::Map<const VectorXd>(values.data(), n);
}

void layer_norm_rows(MatrixXd& x) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    x.row(i) = (x.row(i).array() - mean) / std::sqrt(var + 1e-5);
  }
}

double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

}  // namespace

Json toy_to_json(const ToyConfig& config, const ToyWeights& w) {
  Json cfg{{"layers", config.layers},   {"heads", config.heads},         {"dim", config.dim},
           {"grid", dims_to_json(config.grid)}, {"in_channels", config.in_channels}, {"classes", config.classes},
           {"mlp_ratio", config.mlp_ratio}, {"seed", config.seed},         {"init_std", config.init_std}};
  Json layers = Json::array();
  for (const auto& lw : w.layers)
    layers.push_back({{"wq", matrix_to_json(lw.wq)},
                      {"wk", matrix_to_json(lw.wk)},
                      {"wv", matrix_to_json(lw.wv)},
                      {"wo", matrix_to_json(lw.wo)},
                      {"bo", vector_to_json(lw.bo)},
                      {"w1", matrix_to_json(lw.w1)},
                      {"b1", vector_to_json(lw.b1)},
                      {"w2", matrix_to_json(lw.w2)},
                      {"b2", vector_to_json(lw.b2)}});
  return Json{{"config", cfg},
              {"weights",
               {{"embed", matrix_to_json(w.embed)},
                {"embed_bias", vector_to_json(w.embed_bias)},
                {"layers", layers},
                {"cls", matrix_to_json(w.cls)},
                {"cls_bias", vector_to_json(w.cls_bias)},
                {"dense", vector_to_json(w.dense)},
                {"dense_bias", w.dense_bias}}}};
}

std::pair<ToyConfig, ToyWeights> toy_from_json(const Json& j) {
  ToyConfig c;
  const Json& cfg = j.at("config");
  c.layers = cfg.at("layers").get<int>();
  c.heads = cfg.at("heads").get<int>();
  c.dim = cfg.at("dim").get<int>();
  c.grid = dims_from_json(cfg.at("grid"));
  c.in_channels = cfg.at("in_channels").get<int>();
  c.classes = cfg.at("classes").get<int>();
  c.mlp_ratio = cfg.value("mlp_ratio", 4);
  c.seed = cfg.value("seed", std::uint64_t{0});
  c.init_std = cfg.value("init_std", 0.02);
  c.validate();
  if (!j.contains("weights")) return {c, ToyWeights::random(c)};

  const Json& wj = j.at("weights");
  const int d = c.dim, hidden = c.dim * c.mlp_ratio;
  ToyWeights w;
  w.embed = matrix_from_json(wj.at("embed"), d, c.in_channels);
  w.embed_bias = vector_from_json(wj.at("embed_bias"), d);
  if (static_cast<int>(wj.at("layers").size()) != c.layers)
    throw Error(ErrorCode::kInvalidArgument, "weights list a different number of layers");
  for (const auto& lj : wj.at("layers")) {
    ToyLayerWeights lw;
    lw.wq = matrix_from_json(lj.at("wq"), d, d);
    lw.wk = matrix_from_json(lj.at("wk"), d, d);
    lw.wv = matrix_from_json(lj.at("wv"), d, d);
    lw.wo = matrix_from_json(lj.at("wo"), d, d);
    lw.bo = vector_from_json(lj.at("bo"), d);
    lw.w1 = matrix_from_json(lj.at("w1"), hidden, d);
    lw.b1 = vector_from_json(lj.at("b1"), hidden);
    lw.w2 = matrix_from_json(lj.at("w2"), d, hidden);
    lw.b2 = vector_from_json(lj.at("b2"), d);
    w.layers.push_back(std::move(lw));
  }
  w.cls = matrix_from_json(wj.at("cls"), c.classes, d);
  w.cls_bias = vector_from_json(wj.at("cls_bias"), c.classes);
  w.dense = vector_from_json(wj.at("dense"), d);
  w.dense_bias = wj.at("dense_bias").get<double>();
  return {c, std::move(w)};
}

MatrixXd sinusoidal_positions(std::int64_t tokens, int dim) {
  MatrixXd pe(tokens, dim);
  for (std::int64_t n = 0; n < tokens; ++n)
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -double(2 * (i / 2)) / double(dim));
      pe(n, i) = (i % 2 == 0) ? std::sin(double(n) * freq) : std::cos(double(n) * freq);
    }
  return pe;
}

ToyTransformer::ToyTransformer(ToyConfig config, std::shared_ptr<const VideoStore> videos, std::string model_id)
    : ToyTransformer(config, ToyWeights::random(config), std::move(videos), std::move(model_id)) {}

ToyTransformer::ToyTransformer(ToyConfig config, ToyWeights weights, std::shared_ptr<const VideoStore> videos,
                               std::string model_id)
    : config_(config),
      weights_(std::move(weights)),
      videos_(std::move(videos)),
      model_id_(std::move(model_id)),
      positions_(sinusoidal_positions(config.grid.cells(), config.dim)) {
  config_.validate();
  if (static_cast<int>(weights_.layers.size()) != config_.layers)
    throw Error(ErrorCode::kInvalidArgument, "weights hold a different number of layers than the config");
}

std::vector<SiteId> ToyTransformer::list_sites() const {
  std::vector<SiteId> sites;
  for (int l = 1; l <= config_.layers; ++l) {
    for (int h = 0; h < config_.heads; ++h)
      for (Facet f : {Facet::kKey, Facet::kQuery, Facet::kValue}) sites.push_back(SiteId::attention(model_id_, l, h, f));
    sites.push_back(SiteId::residual(model_id_, l));
  }
  return sites;
}

void ToyTransformer::zero_head_output(int layer, int head) {
  const int dh = config_.dim / config_.heads;
  weights_.layers.at(layer - 1).wo.middleCols(head * dh, dh).setZero();
}

Prediction ToyTransformer::forward(const std::string& video_id, std::span<const SiteMask> masks) const {
  if (!videos_) throw BackendError(ErrorCode::kBackend, "toy backend has no video store");
  auto it = videos_->find(video_id);
  if (it == videos_->end()) throw BackendError(ErrorCode::kBackend, "unknown video '" + video_id + "'");
  return forward_volume(it->second, masks);
}

Prediction ToyTransformer::forward_volume(const FeatureVolume& input, std::span<const SiteMask> masks) const {
  MaskRequest check{input.video_id, {masks.begin(), masks.end()}, TaskTarget::regression(0.0)};
  validate_request(*this, check);
  return run(input, masks, nullptr);
}

FeatureVolume ToyTransformer::site_features(const std::string& video_id, const SiteId& site) const {
  auto it = videos_ ? videos_->find(video_id) : VideoStore::const_iterator{};
  if (!videos_ || it == videos_->end()) throw BackendError(ErrorCode::kBackend, "unknown video '" + video_id + "'");
  std::map<SiteId, MatrixXd> capture;
  run(it->second, {}, &capture);
  auto c = capture.find(site);
  if (c == capture.end()) throw Error(ErrorCode::kInvalidArgument, "unknown site " + site.tag());
  const MatrixXd& feats = c->second;  // tokens × channels
  FeatureVolume out(video_id, site, feats.cols(), config_.grid);
  for (Eigen::Index ch = 0; ch < feats.cols(); ++ch)
    for (Eigen::Index n = 0; n < feats.rows(); ++n) out.at(ch, n) = static_cast<float>(feats(n, ch));
  return out;
}

Prediction ToyTransformer::run(const FeatureVolume& input, std::span<const SiteMask> masks,
                               std::map<SiteId, MatrixXd>* capture) const {
  if (input.channels != config_.in_channels || !(input.dims == config_.grid))
    throw BackendError(ErrorCode::kBackend, "input volume shape does not match the toy config");
  const std::int64_t n = config_.grid.cells();
  const int d = config_.dim;
  const int dh = d / config_.heads;

  std::map<SiteId, Grid> mask_grids;
  for (const auto& m : masks) mask_grids[m.site] = decode_rle(m.mask);
  auto apply = [&](const SiteId& site, auto&& block) {
    if (capture) (*capture)[site] = block;
    auto it = mask_grids.find(site);
    if (it == mask_grids.end()) return;
    for (std::int64_t t = 0; t < n; ++t)
      if (it->second[t]) block.row(t).setZero();
  };

  MatrixXd tokens(n, input.channels);
  for (std::int64_t c = 0; c < input.channels; ++c)
    for (std::int64_t t = 0; t < n; ++t) tokens(t, c) = input.at(c, t);
  MatrixXd x = tokens * weights_.embed.transpose();
  x.rowwise() += weights_.embed_bias.transpose();
  x += positions_;

  for (int l = 1; l <= config_.layers; ++l) {
    const auto& lw = weights_.layers[l - 1];
    MatrixXd h = x;
    layer_norm_rows(h);
    const MatrixXd q_all = h * lw.wq.transpose();
    const MatrixXd k_all = h * lw.wk.transpose();
    const MatrixXd v_all = h * lw.wv.transpose();
    MatrixXd attn_out(n, d);
    for (int head = 0; head < config_.heads; ++head) {
      MatrixXd q = q_all.middleCols(head * dh, dh);
      MatrixXd k = k_all.middleCols(head * dh, dh);
      MatrixXd v = v_all.middleCols(head * dh, dh);
      apply(SiteId::attention(model_id_, l, head, Facet::kQuery), q);
      apply(SiteId::attention(model_id_, l, head, Facet::kKey), k);
      apply(SiteId::attention(model_id_, l, head, Facet::kValue), v);
      MatrixXd scores = (q * k.transpose()) / std::sqrt(double(dh));
      for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        const double mx = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - mx).exp();
        scores.row(r) /= scores.row(r).sum();
      }
      attn_out.middleCols(head * dh, dh) = scores * v;
    }
    x += attn_out * lw.wo.transpose();
    x.rowwise() += lw.bo.transpose();

    MatrixXd h2 = x;
    layer_norm_rows(h2);
    MatrixXd hidden = h2 * lw.w1.transpose();
    hidden.rowwise() += lw.b1.transpose();
    hidden = hidden.unaryExpr([](double v) { return gelu(v); });
    x += hidden * lw.w2.transpose();
    x.rowwise() += lw.b2.transpose();
    apply(SiteId::residual(model_id_, l), x);
  }

  layer_norm_rows(x);
  const VectorXd pooled = x.colwise().mean().transpose();
  Prediction p;
  const VectorXd logits = weights_.cls * pooled + weights_.cls_bias;
  p.logits.assign(logits.data(), logits.data() + logits.size());
  const VectorXd dense = (x * weights_.dense).array() + weights_.dense_bias;
  p.dense.assign(dense.data(), dense.data() + dense.size());
  return p;
}

// ---------------------------------------------------------------------------
// Planted oracle

PlantedOracle::PlantedOracle(BinaryMask region, int site_layer, int layers, std::shared_ptr<const VideoStore> videos,
                             std::string model_id)
    : region_(std::move(region)),
      region_grid_(decode_rle(region_)),
      region_size_(count_cells(region_grid_)),
      site_layer_(site_layer),
      layers_(layers),
      videos_(std::move(videos)),
      model_id_(std::move(model_id)) {
  if (layers_ < 1 || site_layer_ < 1 || site_layer_ > layers_)
    throw Error(ErrorCode::kInvalidArgument, "planted site layer must lie in [1, layers]");
  if (region_size_ == 0) throw Error(ErrorCode::kInvalidArgument, "planted region is empty");
}

std::vector<SiteId> PlantedOracle::list_sites() const {
  std::vector<SiteId> sites;
  for (int l = 1; l <= layers_; ++l) sites.push_back(SiteId::residual(model_id_, l));
  return sites;
}

Prediction PlantedOracle::forward(const std::string& video_id, std::span<const SiteMask> masks) const {
  MaskRequest check{video_id, {masks.begin(), masks.end()}, TaskTarget::regression(0.0)};
  validate_request(*this, check);
  if (!videos_) throw BackendError(ErrorCode::kBackend, "planted backend has no video store");
  auto it = videos_->find(video_id);
  if (it == videos_->end()) throw BackendError(ErrorCode::kBackend, "unknown video '" + video_id + "'");
  const FeatureVolume& volume = it->second;
  if (!(volume.dims == region_.dims)) throw BackendError(ErrorCode::kBackend, "video grid differs from region grid");

  Grid masked(region_grid_.size(), 0);
  const SiteId read = read_site();
  for (const auto& m : masks)
    if (m.site == read) masked = decode_rle(m.mask);
  double sum = 0.0;
  for (std::size_t cell = 0; cell < region_grid_.size(); ++cell)
    if (region_grid_[cell] && !masked[cell]) sum += volume.at(0, static_cast<std::int64_t>(cell));
  return Prediction{{sum / double(region_size_)}, {}};
}

double PlantedOracle::metric(const Prediction& prediction, const TaskTarget&) const {
  return std::clamp(prediction.logits.at(0), 0.0, 1.0);
}

}  // namespace vtcd
