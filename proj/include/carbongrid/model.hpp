#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "carbongrid/geogrid.hpp"
#include "carbongrid/tensor.hpp"

namespace carbongrid {

/// Key/value source for the grid-neighborhood cross-attention.
enum class KvMode {
  neighborhood_cells,  // the M×M fused cell representations (masked slots dropped)
  center_only,         // {X_g} alone
};

/// Which terms enter each NT-Xent denominator.
enum class Denominator {
  paper,     // negatives only (k != i)
  standard,  // negatives plus the positive pair
};

struct ModelConfig {
  std::size_t embed_dim = 16;     // m
  std::size_t neighborhood = 3;   // M
  double temperature = 0.5;       // tau
  std::size_t se_ratio = 2;       // n
  std::size_t categories = 6;     // C
  std::size_t image_height = 16;
  std::size_t image_width = 16;
  std::size_t poi_height = 16;
  std::size_t poi_width = 16;
  std::size_t image_channels = 8;
  std::size_t image_blocks = 2;
  std::size_t image_stem_stride = 2;
  std::vector<std::size_t> poi_channels = {8, 8};
  std::size_t poi_stride = 2;
  std::size_t neighborhood_channels = 16;
  std::size_t neighborhood_layers = 1;
  std::size_t neighborhood_kernel = 3;
  std::size_t attention_dim = 16;
  std::size_t head_hidden = 16;
  KvMode kv_mode = KvMode::neighborhood_cells;
  Denominator denominator = Denominator::paper;
  bool use_neighborhood = true;

  void validate() const;
};

nlohmann::json model_config_to_json(const ModelConfig& config);
/// Strict parse; unknown keys are appended to `problems`.
ModelConfig model_config_from_json(const nlohmann::json& json, std::vector<std::string>& problems);

/// Named learnable tensors in a fixed insertion order.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor tensor);
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::string>& names() const { return names_; }
  std::span<Tensor> tensors() { return tensors_; }
  std::span<const Tensor> tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();
  /// Independent copy of the values.
  ParameterStore clone() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Building blocks

/// Channel gates s = sigmoid(W2 · relu(W1 · gap(x))).
Tensor se_gates(const Tensor& x, const Tensor& w1, const Tensor& w2);
/// Squeeze-and-excitation: channel c of x scaled by s_c.
Tensor se_block(const Tensor& x, const Tensor& w1, const Tensor& w2);

struct Fusion {
  Tensor weights;  // 2-simplex over (first, second)
  Tensor fused;    // weights[0]*first + weights[1]*second
};

/// Scores m_k = a · tanh(W x_k + b), softmax over the two modalities, then the
/// convex combination of the inputs.
Fusion aggregate_attention(const Tensor& first, const Tensor& second, const Tensor& a,
                           const Tensor& w, const Tensor& b);

constexpr double kCosineEps = 1e-12;

/// Symmetric NT-Xent between paired N×m batches (row i of each is a positive
/// pair). Mean over i of the image→POI and POI→image terms.
Tensor ntxent(const Tensor& image_batch, const Tensor& poi_batch, double temperature,
              Denominator denominator = Denominator::paper);

struct Attended {
  Tensor weights;  // over the key/value tokens
  Tensor output;   // attention result + x_g
};

/// Scaled dot-product attention with query W_q x_n over `tokens` (keys W_k t,
/// values W_v t), plus the residual x_g.
Attended cross_attention(const Tensor& x_n, std::span<const Tensor> tokens, const Tensor& x_g,
                         const Tensor& w_query, const Tensor& w_key, const Tensor& w_value);

Tensor mae_loss(const Tensor& predictions, const Tensor& targets);

struct LossTerms {
  Tensor total;
  double mae = 0.0;
  std::optional<double> contrastive;  // set when the term is active
};

/// MAE, plus alpha · NT-Xent once epoch >= gate_epoch.
LossTerms total_loss(const Tensor& predictions, const Tensor& targets, const Tensor& image_batch,
                     const Tensor& poi_batch, double alpha, std::size_t epoch,
                     std::size_t gate_epoch, double temperature,
                     Denominator denominator = Denominator::paper);

// ---------------------------------------------------------------------------
// Network

struct CellOutput {
  std::size_t cell = 0;
  Tensor x_s, x_p, x_g;
  std::optional<Tensor> x_n;
  Tensor x_final;
  std::array<double, 2> grid_weights{0.5, 0.5};
  std::array<double, 2> nbhd_weights{0.5, 0.5};
  std::vector<double> attention_weights;
};

struct BatchOutput {
  Tensor predictions;       // [B] log-emission
  Tensor image_embeddings;  // B×m
  Tensor poi_embeddings;    // B×m
  std::vector<CellOutput> cells;
};

class CarbonModel {
 public:
  CarbonModel(ModelConfig config, std::uint64_t seed);
  /// Adopts existing parameters; names and shapes must match the config.
  CarbonModel(ModelConfig config, ParameterStore parameters);

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  Tensor encode_image(const Tensor& image) const;
  Tensor encode_poi(const Tensor& poi) const;
  Fusion fuse_grid(const Tensor& x_s, const Tensor& x_p) const;
  /// M×M×m neighborhood matrices to X_n (weights from the neighborhood-level
  /// aggregate attention).
  Fusion neighborhood_context(const Tensor& nbhd_s, const Tensor& nbhd_p) const;
  Attended attend(const Tensor& x_n, std::span<const Tensor> tokens, const Tensor& x_g) const;
  /// Log-emission estimate, shape [1].
  Tensor predict(const Tensor& x_final) const;

  /// Full forward for the target cells of `dataset`; neighbors are encoded
  /// with the same weights.
  BatchOutput forward(const RegionDataset& dataset, std::span<const std::size_t> targets) const;

  /// Expected parameter shapes for a config, in creation order.
  static std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& config);

 private:
  Tensor neighborhood_branch(const Tensor& nbhd, const std::string& prefix) const;

  ModelConfig config_;
  ParameterStore params_;
};

/// Throws IncompatibleError unless the dataset matches the model's category
/// count and tile sizes.
void check_compatible(const ModelConfig& config, const RegionDataset& dataset);

}  // namespace carbongrid
