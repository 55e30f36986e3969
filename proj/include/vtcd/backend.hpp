#pragma once

#include <Eigen/Dense>

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vtcd/json_io.hpp"
#include "vtcd/tensor_store.hpp"

namespace vtcd {

enum class TargetKind { kDenseMaskIou, kClassScore, kScalarRegression };

const char* target_kind_name(TargetKind kind);

// What "performing well" means for one video. Metrics are higher-is-better.
struct TaskTarget {
  TargetKind kind = TargetKind::kScalarRegression;
  std::optional<BinaryMask> mask;  // kDenseMaskIou
  int class_index = 0;             // kClassScore
  double scalar = 0.0;             // kScalarRegression

  static TaskTarget dense(BinaryMask groundtruth);
  static TaskTarget class_score(int index);
  static TaskTarget regression(double value);

  void validate() const;
};

Json target_to_json(const TaskTarget& target);
TaskTarget target_from_json(const Json& j);

// Zero the masked cells of `site` before whatever consumes that tensor.
struct SiteMask {
  SiteId site;
  BinaryMask mask;
};

struct MaskRequest {
  std::string video_id;
  std::vector<SiteMask> masks;
  TaskTarget target;
};

// The contract importance estimation relies on.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  virtual std::string model_id() const = 0;
  virtual std::vector<SiteId> list_sites() const = 0;
  // Token grid shared by every site.
  virtual Dims3 grid() const = 0;
  // Metric of the masked forward pass. Throws BackendError on failure.
  virtual double evaluate(const MaskRequest& request) const = 0;
};

// Rejects unknown sites, duplicate sites and mismatched mask dims.
void validate_request(const ModelBackend& backend, const MaskRequest& request);

struct Prediction {
  std::vector<double> logits;
  // One score per token; a cell is predicted "on" when its score is > 0.
  std::vector<double> dense;
};

double softmax_probability(std::span<const double> logits, int index);
double standard_metric(const Prediction& prediction, const TaskTarget& target);

using VideoStore = std::map<std::string, FeatureVolume>;

// Backends that run in-process and expose their raw prediction.
class NativeBackend : public ModelBackend {
 public:
  virtual Prediction forward(const std::string& video_id, std::span<const SiteMask> masks) const = 0;
  virtual double metric(const Prediction& prediction, const TaskTarget& target) const {
    return standard_metric(prediction, target);
  }
  double evaluate(const MaskRequest& request) const override;
};

// ---------------------------------------------------------------------------
// Toy video transformer

struct ToyConfig {
  int layers = 2;
  int heads = 2;
  int dim = 16;
  Dims3 grid{2, 4, 4};
  int in_channels = 4;
  int classes = 4;
  int mlp_ratio = 4;
  std::uint64_t seed = 0;
  double init_std = 0.02;

  void validate() const;
};

struct ToyLayerWeights {
  Eigen::MatrixXd wq, wk, wv;  // dim × dim, rows grouped by head
  Eigen::MatrixXd wo;          // dim × dim, columns grouped by head
  Eigen::VectorXd bo;
  Eigen::MatrixXd w1;  // hidden × dim
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // dim × hidden
  Eigen::VectorXd b2;
};

struct ToyWeights {
  Eigen::MatrixXd embed;  // dim × in_channels
  Eigen::VectorXd embed_bias;
  std::vector<ToyLayerWeights> layers;
  Eigen::MatrixXd cls;  // classes × dim
  Eigen::VectorXd cls_bias;
  Eigen::VectorXd dense;
  double dense_bias = 0.0;

  static ToyWeights random(const ToyConfig& config);
};

Json toy_to_json(const ToyConfig& config, const ToyWeights& weights);
std::pair<ToyConfig, ToyWeights> toy_from_json(const Json& j);

// Sinusoidal encoding over the flattened token index.
Eigen::MatrixXd sinusoidal_positions(std::int64_t tokens, int dim);

class ToyTransformer : public NativeBackend {
 public:
  ToyTransformer(ToyConfig config, std::shared_ptr<const VideoStore> videos, std::string model_id = "toy");
  ToyTransformer(ToyConfig config, ToyWeights weights, std::shared_ptr<const VideoStore> videos,
                 std::string model_id = "toy");

  std::string model_id() const override { return model_id_; }
  std::vector<SiteId> list_sites() const override;
  Dims3 grid() const override { return config_.grid; }
  Prediction forward(const std::string& video_id, std::span<const SiteMask> masks) const override;

  // Forward pass on an explicit input volume (channels × grid).
  Prediction forward_volume(const FeatureVolume& input, std::span<const SiteMask> masks) const;
  // Activations at a site for an unmasked forward (C × grid volume).
  FeatureVolume site_features(const std::string& video_id, const SiteId& site) const;

  const ToyConfig& config() const { return config_; }
  const ToyWeights& weights() const { return weights_; }
  ToyWeights& mutable_weights() { return weights_; }

  // Weight surgery used to build fixtures.
  void zero_head_output(int layer, int head);

 private:
  Prediction run(const FeatureVolume& input, std::span<const SiteMask> masks,
                 std::map<SiteId, Eigen::MatrixXd>* capture) const;

  ToyConfig config_;
  ToyWeights weights_;
  std::shared_ptr<const VideoStore> videos_;
  std::string model_id_;
  Eigen::MatrixXd positions_;
};

// ---------------------------------------------------------------------------
// Planted oracle

// Metric = clamp(Σ channel-0 over surviving region cells / |region|, 0, 1),
// read at one residual site; other listed sites are accepted and ignored.
class PlantedOracle : public NativeBackend {
 public:
  PlantedOracle(BinaryMask region, int site_layer, int layers, std::shared_ptr<const VideoStore> videos,
                std::string model_id = "planted");

  std::string model_id() const override { return model_id_; }
  std::vector<SiteId> list_sites() const override;
  Dims3 grid() const override { return region_.dims; }
  Prediction forward(const std::string& video_id, std::span<const SiteMask> masks) const override;
  double metric(const Prediction& prediction, const TaskTarget& target) const override;

  SiteId read_site() const { return SiteId::residual(model_id_, site_layer_); }
  const BinaryMask& region() const { return region_; }

 private:
  BinaryMask region_;
  Grid region_grid_;
  std::int64_t region_size_;
  int site_layer_;
  int layers_;
  std::shared_ptr<const VideoStore> videos_;
  std::string model_id_;
};

}  // namespace vtcd
