#include "carbongrid/model.hpp"

#include <cmath>
#include <memory>

#include "carbongrid/errors.hpp"
#include "carbongrid/json_util.hpp"
#include "carbongrid/ops.hpp"
#include "carbongrid/random.hpp"

namespace carbongrid {

using nlohmann::json;

void ModelConfig::validate() const {
  std::vector<std::string> problems;
  if (embed_dim < 1) problems.emplace_back("embed_dim must be >= 1");
  if (neighborhood < 1 || neighborhood % 2 == 0) problems.emplace_back("neighborhood must be odd");
  if (!(temperature > 0.0)) problems.emplace_back("temperature must be > 0");
  if (se_ratio < 1) problems.emplace_back("se_ratio must be >= 1");
  if (categories < 1) problems.emplace_back("categories must be >= 1");
  if (image_height < 1 || image_width < 1) problems.emplace_back("image size must be positive");
  if (poi_height < 1 || poi_width < 1) problems.emplace_back("poi size must be positive");
  if (image_channels < 1) problems.emplace_back("image_channels must be >= 1");
  if (image_stem_stride < 1 || poi_stride < 1) problems.emplace_back("strides must be >= 1");
  if (poi_channels.empty()) problems.emplace_back("poi_channels needs at least one layer");
  for (std::size_t c : poi_channels) {
    if (c < 1) problems.emplace_back("poi_channels entries must be >= 1");
  }
  if (neighborhood_kernel < 1 || neighborhood_kernel % 2 == 0) {
    problems.emplace_back("neighborhood_kernel must be odd");
  }
  if (neighborhood_channels < 1) problems.emplace_back("neighborhood_channels must be >= 1");
  if (attention_dim < 1) problems.emplace_back("attention_dim must be >= 1");
  if (head_hidden < 1) problems.emplace_back("head_hidden must be >= 1");
  throw_if_problems(problems, "invalid model config");
}

json model_config_to_json(const ModelConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"neighborhood", c.neighborhood},
          {"temperature", c.temperature},
          {"se_ratio", c.se_ratio},
          {"categories", c.categories},
          {"image_size", {c.image_height, c.image_width}},
          {"poi_size", {c.poi_height, c.poi_width}},
          {"image_channels", c.image_channels},
          {"image_blocks", c.image_blocks},
          {"image_stem_stride", c.image_stem_stride},
          {"poi_channels", c.poi_channels},
          {"poi_stride", c.poi_stride},
          {"neighborhood_channels", c.neighborhood_channels},
          {"neighborhood_layers", c.neighborhood_layers},
          {"neighborhood_kernel", c.neighborhood_kernel},
          {"attention_dim", c.attention_dim},
          {"head_hidden", c.head_hidden},
          {"attention_kv_mode",
           c.kv_mode == KvMode::center_only ? "center_only" : "neighborhood_cells"},
          {"denominator", c.denominator == Denominator::standard ? "standard" : "paper"},
          {"use_neighborhood", c.use_neighborhood}};
}

ModelConfig model_config_from_json(const json& j, std::vector<std::string>& problems) {
  ModelConfig c;
  StrictObject obj(j, "model", problems);
  obj.read("embed_dim", c.embed_dim);
  obj.read("neighborhood", c.neighborhood);
  obj.read("temperature", c.temperature);
  obj.read("se_ratio", c.se_ratio);
  obj.read("categories", c.categories);
  std::vector<std::size_t> image{c.image_height, c.image_width};
  std::vector<std::size_t> poi{c.poi_height, c.poi_width};
  obj.read("image_size", image);
  obj.read("poi_size", poi);
  if (image.size() == 2 && poi.size() == 2) {
    c.image_height = image[0];
    c.image_width = image[1];
    c.poi_height = poi[0];
    c.poi_width = poi[1];
  } else {
    problems.emplace_back("model: image_size and poi_size take [height, width]");
  }
  obj.read("image_channels", c.image_channels);
  obj.read("image_blocks", c.image_blocks);
  obj.read("image_stem_stride", c.image_stem_stride);
  obj.read("poi_channels", c.poi_channels);
  obj.read("poi_stride", c.poi_stride);
  obj.read("neighborhood_channels", c.neighborhood_channels);
  obj.read("neighborhood_layers", c.neighborhood_layers);
  obj.read("neighborhood_kernel", c.neighborhood_kernel);
  obj.read("attention_dim", c.attention_dim);
  obj.read("head_hidden", c.head_hidden);
  std::string kv = "neighborhood_cells";
  obj.read("attention_kv_mode", kv);
  if (kv == "neighborhood_cells") {
    c.kv_mode = KvMode::neighborhood_cells;
  } else if (kv == "center_only") {
    c.kv_mode = KvMode::center_only;
  } else {
    problems.emplace_back("model.attention_kv_mode: expected neighborhood_cells or center_only");
  }
  std::string denom = "paper";
  obj.read("denominator", denom);
  if (denom == "paper") {
    c.denominator = Denominator::paper;
  } else if (denom == "standard") {
    c.denominator = Denominator::standard;
  } else {
    problems.emplace_back("model.denominator: expected paper or standard");
  }
  obj.read("use_neighborhood", c.use_neighborhood);
  obj.finish();
  return c;
}

// ---------------------------------------------------------------------------
// ParameterStore

Tensor& ParameterStore::add(const std::string& name, Tensor tensor) {
  if (contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(tensor));
  return tensors_.back();
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return tensors_[it->second];
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return tensors_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors_) n += t.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (Tensor& t : tensors_) t.zero_grad();
}

ParameterStore ParameterStore::clone() const {
  ParameterStore out;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const Tensor& t = tensors_[i];
    out.add(names_[i], Tensor(t.shape(), {t.data().begin(), t.data().end()}, t.requires_grad()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Building blocks

Tensor se_gates(const Tensor& x, const Tensor& w1, const Tensor& w2) {
  const Tensor z = global_avg_pool(x);
  return sigmoid(dense(relu(dense(z, w1)), w2));
}

Tensor se_block(const Tensor& x, const Tensor& w1, const Tensor& w2) {
  return scale_channels(x, se_gates(x, w1, w2));
}

Fusion aggregate_attention(const Tensor& first, const Tensor& second, const Tensor& a,
                           const Tensor& w, const Tensor& b) {
  if (first.shape() != second.shape() || first.rank() != 1) {
    throw DimensionError("aggregate_attention: inputs must be vectors of equal length");
  }
  if (a.rank() != 1) throw DimensionError("aggregate_attention: a must be a vector");
  const Tensor a_row = reshape(a, Shape{1, a.size()});
  auto score = [&](const Tensor& x) { return dense(tanh(dense(x, w, b)), a_row); };
  const std::vector<Tensor> scores{score(first), score(second)};
  const Tensor weights = softmax(reshape(stack(scores), Shape{2}));
  const std::vector<Tensor> inputs{first, second};
  const Tensor fused = dense(weights, transpose(stack(inputs)));
  return {weights, fused};
}

Tensor ntxent(const Tensor& image_batch, const Tensor& poi_batch, double temperature,
              Denominator denominator) {
  if (image_batch.rank() != 2 || image_batch.shape() != poi_batch.shape()) {
    throw DimensionError("ntxent: batches must be N×m matrices of equal shape");
  }
  if (!(temperature > 0.0)) throw ContractError("ntxent: temperature must be positive");
  const std::size_t n = image_batch.extent(0), m = image_batch.extent(1);
  if (n < 2) throw ContractError("ntxent: batch needs at least 2 samples");
  auto check_norms = [&](const Tensor& batch, const char* which) {
    for (std::size_t i = 0; i < n; ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < m; ++j) sq += batch[i * m + j] * batch[i * m + j];
      if (std::sqrt(sq) <= kCosineEps) {
        throw ContractError(std::string("ntxent: zero-norm ") + which + " embedding at sample " +
                            std::to_string(i));
      }
    }
  };
  check_norms(image_batch, "image");
  check_norms(poi_batch, "poi");

  const Tensor s = l2_normalize_rows(image_batch, kCosineEps);
  const Tensor p = l2_normalize_rows(poi_batch, kCosineEps);
  const Tensor logits = scale(matmul(s, transpose(p)), 1.0 / temperature);
  const auto keep = std::make_unique<bool[]>(n * n);
  for (std::size_t i = 0; i < n * n; ++i) {
    keep[i] = denominator == Denominator::standard || i % (n + 1) != 0;
  }
  const std::span<const bool> mask(keep.get(), n * n);
  // Image anchor i against POI candidates k, and POI anchor i against image candidates k.
  const Tensor image_to_poi = logsumexp_rows(logits, mask);
  const Tensor poi_to_image = logsumexp_rows(transpose(logits), mask);
  const Tensor positives = diagonal(logits);
  const Tensor per_sample =
      sub(add(image_to_poi, poi_to_image), scale(positives, 2.0));
  return mean(per_sample);
}

Attended cross_attention(const Tensor& x_n, std::span<const Tensor> tokens, const Tensor& x_g,
                         const Tensor& w_query, const Tensor& w_key, const Tensor& w_value) {
  if (tokens.empty()) throw ContractError("cross_attention: every key/value slot is masked");
  const Tensor query = dense(x_n, w_query);
  // (W_k t_l) · q == t_l · (W_k^T q)
  const Tensor key_query = dense(query, transpose(w_key));
  const Tensor token_matrix = stack(tokens);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(w_query.extent(0)));
  const Tensor weights = softmax(scale(dense(key_query, token_matrix), inv_sqrt_d));
  // Σ_l w_l W_v t_l == W_v (T^T w)
  const Tensor context = dense(weights, transpose(token_matrix));
  return {weights, add(dense(context, w_value), x_g)};
}

Tensor mae_loss(const Tensor& predictions, const Tensor& targets) {
  return mean(abs(sub(predictions, targets)));
}

LossTerms total_loss(const Tensor& predictions, const Tensor& targets, const Tensor& image_batch,
                     const Tensor& poi_batch, double alpha, std::size_t epoch,
                     std::size_t gate_epoch, double temperature, Denominator denominator) {
  if (!(alpha >= 0.0)) throw ContractError("total_loss: alpha must be >= 0");
  LossTerms terms;
  const Tensor mae = mae_loss(predictions, targets);
  terms.mae = mae.item();
  terms.total = mae;
  if (epoch >= gate_epoch && alpha > 0.0) {
    if (image_batch.rank() != 2 || image_batch.extent(0) < 2) {
      throw ContractError("total_loss: contrastive term needs a batch of at least 2");
    }
    const Tensor contrastive = ntxent(image_batch, poi_batch, temperature, denominator);
    terms.contrastive = contrastive.item();
    terms.total = add(mae, scale(contrastive, alpha));
  }
  return terms;
}

// ---------------------------------------------------------------------------
// CarbonModel

namespace {

std::size_t se_hidden(std::size_t channels, std::size_t ratio) {
  return std::max<std::size_t>(1, (channels + ratio - 1) / ratio);
}

bool is_bias(const std::string& name) {
  return name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
}

}  // namespace

std::vector<std::pair<std::string, Shape>> CarbonModel::parameter_layout(const ModelConfig& c) {
  std::vector<std::pair<std::string, Shape>> layout;
  const std::size_t m = c.embed_dim;
  const std::size_t ic = c.image_channels;
  layout.push_back({"image.stem", {3, 3, 3, ic}});
  for (std::size_t b = 0; b < c.image_blocks; ++b) {
    layout.push_back({"image.block" + std::to_string(b) + ".conv1", {3, 3, ic, ic}});
    layout.push_back({"image.block" + std::to_string(b) + ".conv2", {3, 3, ic, ic}});
  }
  layout.push_back({"image.proj.weight", {m, ic}});
  layout.push_back({"image.proj.bias", {m}});

  std::size_t in = c.categories;
  for (std::size_t l = 0; l < c.poi_channels.size(); ++l) {
    const std::size_t out = c.poi_channels[l];
    const std::string p = "poi.layer" + std::to_string(l);
    layout.push_back({p + ".kernel", {3, 3, in, out}});
    layout.push_back({p + ".se.w1", {se_hidden(out, c.se_ratio), out}});
    layout.push_back({p + ".se.w2", {out, se_hidden(out, c.se_ratio)}});
    in = out;
  }
  layout.push_back({"poi.proj.weight", {m, in}});
  layout.push_back({"poi.proj.bias", {m}});

  auto fusion = [&](const std::string& p) {
    layout.push_back({p + ".a", {m}});
    layout.push_back({p + ".W", {m, m}});
    layout.push_back({p + ".b", {m}});
  };
  fusion("fuse_grid");

  for (const char* branch : {"nbhd_image", "nbhd_poi"}) {
    std::size_t ch = m;
    for (std::size_t l = 0; l < c.neighborhood_layers; ++l) {
      layout.push_back({std::string(branch) + ".conv" + std::to_string(l),
                        {c.neighborhood_kernel, c.neighborhood_kernel, ch,
                         c.neighborhood_channels}});
      ch = c.neighborhood_channels;
    }
    layout.push_back({std::string(branch) + ".proj.weight", {m, ch}});
    layout.push_back({std::string(branch) + ".proj.bias", {m}});
  }
  fusion("fuse_nbhd");

  layout.push_back({"cross.query", {c.attention_dim, m}});
  layout.push_back({"cross.key", {c.attention_dim, m}});
  layout.push_back({"cross.value", {m, m}});

  layout.push_back({"head.hidden.weight", {c.head_hidden, m}});
  layout.push_back({"head.hidden.bias", {c.head_hidden}});
  layout.push_back({"head.out.weight", {1, c.head_hidden}});
  layout.push_back({"head.out.bias", {1}});
  return layout;
}

CarbonModel::CarbonModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(derive_seed(seed, "model.init"));
  for (auto& [name, shape] : parameter_layout(config_)) {
    if (is_bias(name) || name.ends_with(".b")) {
      params_.add(name, Tensor::zeros(shape, true));
      continue;
    }
    // Conv kernels fan in over K·K·C_in, matrices over their columns.
    std::size_t fan_in = shape.size() == 4 ? shape[0] * shape[1] * shape[2] : shape.back();
    params_.add(name, he_uniform(shape, fan_in, rng));
  }
}

CarbonModel::CarbonModel(ModelConfig config, ParameterStore parameters)
    : config_(std::move(config)), params_(std::move(parameters)) {
  config_.validate();
  const auto layout = parameter_layout(config_);
  if (layout.size() != params_.size()) {
    throw IncompatibleError("checkpoint has " + std::to_string(params_.size()) +
                            " parameters, config expects " + std::to_string(layout.size()));
  }
  for (const auto& [name, shape] : layout) {
    if (!params_.contains(name)) throw IncompatibleError("missing parameter '" + name + "'");
    if (params_.at(name).shape() != shape) {
      throw IncompatibleError("parameter '" + name + "' has shape " +
                              shape_string(params_.at(name).shape()) + ", expected " +
                              shape_string(shape));
    }
  }
}

Tensor CarbonModel::encode_image(const Tensor& image) const {
  if (image.rank() != 3 || image.extent(2) != 3) {
    throw DimensionError("encode_image: expected H×W×3, got " + shape_string(image.shape()));
  }
  Tensor x = relu(conv2d(image, params_.at("image.stem"), config_.image_stem_stride, 1));
  for (std::size_t b = 0; b < config_.image_blocks; ++b) {
    const std::string p = "image.block" + std::to_string(b);
    Tensor y = relu(conv2d(x, params_.at(p + ".conv1"), 1, 1));
    y = conv2d(y, params_.at(p + ".conv2"), 1, 1);
    x = relu(add(x, y));
  }
  return dense(global_avg_pool(x), params_.at("image.proj.weight"),
               params_.at("image.proj.bias"));
}

Tensor CarbonModel::encode_poi(const Tensor& poi) const {
  if (poi.rank() != 3 || poi.extent(2) != config_.categories) {
    throw DimensionError("encode_poi: expected H'×W'×" + std::to_string(config_.categories) +
                         ", got " + shape_string(poi.shape()));
  }
  Tensor x = poi;
  for (std::size_t l = 0; l < config_.poi_channels.size(); ++l) {
    const std::string p = "poi.layer" + std::to_string(l);
    x = conv2d(x, params_.at(p + ".kernel"), l == 0 ? config_.poi_stride : 1, 1);
    x = relu(se_block(x, params_.at(p + ".se.w1"), params_.at(p + ".se.w2")));
  }
  return dense(global_avg_pool(x), params_.at("poi.proj.weight"), params_.at("poi.proj.bias"));
}

Fusion CarbonModel::fuse_grid(const Tensor& x_s, const Tensor& x_p) const {
  return aggregate_attention(x_s, x_p, params_.at("fuse_grid.a"), params_.at("fuse_grid.W"),
                             params_.at("fuse_grid.b"));
}

Tensor CarbonModel::neighborhood_branch(const Tensor& nbhd, const std::string& prefix) const {
  const std::size_t pad = config_.neighborhood_kernel / 2;
  Tensor x = nbhd;
  for (std::size_t l = 0; l < config_.neighborhood_layers; ++l) {
    x = relu(conv2d(x, params_.at(prefix + ".conv" + std::to_string(l)), 1, pad));
  }
  return dense(global_avg_pool(x), params_.at(prefix + ".proj.weight"),
               params_.at(prefix + ".proj.bias"));
}

Fusion CarbonModel::neighborhood_context(const Tensor& nbhd_s, const Tensor& nbhd_p) const {
  const Shape expected{config_.neighborhood, config_.neighborhood, config_.embed_dim};
  if (nbhd_s.shape() != expected || nbhd_p.shape() != expected) {
    throw DimensionError("neighborhood_context: expected " + shape_string(expected));
  }
  const Tensor s = neighborhood_branch(nbhd_s, "nbhd_image");
  const Tensor p = neighborhood_branch(nbhd_p, "nbhd_poi");
  return aggregate_attention(s, p, params_.at("fuse_nbhd.a"), params_.at("fuse_nbhd.W"),
                             params_.at("fuse_nbhd.b"));
}

Attended CarbonModel::attend(const Tensor& x_n, std::span<const Tensor> tokens,
                             const Tensor& x_g) const {
  return cross_attention(x_n, tokens, x_g, params_.at("cross.query"), params_.at("cross.key"),
                         params_.at("cross.value"));
}

Tensor CarbonModel::predict(const Tensor& x_final) const {
  const Tensor h = relu(dense(x_final, params_.at("head.hidden.weight"),
                              params_.at("head.hidden.bias")));
  return dense(h, params_.at("head.out.weight"), params_.at("head.out.bias"));
}

BatchOutput CarbonModel::forward(const RegionDataset& dataset,
                                 std::span<const std::size_t> targets) const {
  if (targets.empty()) throw ContractError("forward: empty batch");
  const std::size_t m = config_.embed_dim;
  const std::size_t nb = config_.use_neighborhood ? config_.neighborhood : 1;

  std::vector<Neighborhood> blocks;
  std::map<std::size_t, std::size_t> slot_of;  // cell index -> position in `encoded`
  for (std::size_t t : targets) {
    if (t >= dataset.cells.size()) throw ContractError("forward: target index out of range");
    const GridCell& cell = dataset.cells[t];
    blocks.push_back(neighborhood(dataset, cell.row, cell.col, nb));
    for (const auto& slot : blocks.back().slots) {
      if (slot) slot_of.emplace(*slot, 0);
    }
  }

  struct Encoded {
    Tensor x_s, x_p;
    Fusion grid;
  };
  std::vector<Encoded> encoded;
  encoded.reserve(slot_of.size());
  for (auto& [cell_index, pos] : slot_of) {
    const GridCell& cell = dataset.cells[cell_index];
    Tensor x_s = encode_image(cell.image);
    Tensor x_p = encode_poi(cell.poi);
    Fusion grid = fuse_grid(x_s, x_p);
    pos = encoded.size();
    encoded.push_back({std::move(x_s), std::move(x_p), std::move(grid)});
  }

  BatchOutput out;
  std::vector<Tensor> predictions, image_rows, poi_rows;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const Neighborhood& block = blocks[k];
    const Encoded& center = encoded.at(slot_of.at(targets[k]));
    CellOutput co;
    co.cell = targets[k];
    co.x_s = center.x_s;
    co.x_p = center.x_p;
    co.x_g = center.grid.fused;
    co.grid_weights = {center.grid.weights[0], center.grid.weights[1]};

    if (config_.use_neighborhood) {
      std::vector<std::optional<Tensor>> s_slots, p_slots;
      std::vector<Tensor> tokens;
      for (const auto& slot : block.slots) {
        if (!slot) {
          s_slots.emplace_back(std::nullopt);
          p_slots.emplace_back(std::nullopt);
          continue;
        }
        const Encoded& e = encoded.at(slot_of.at(*slot));
        s_slots.emplace_back(e.x_s);
        p_slots.emplace_back(e.x_p);
        if (config_.kv_mode == KvMode::neighborhood_cells) tokens.push_back(e.grid.fused);
      }
      if (config_.kv_mode == KvMode::center_only) tokens.push_back(co.x_g);
      const Shape grid_shape{nb, nb, m};
      const Tensor nbhd_s = reshape(stack(s_slots, Shape{m}), grid_shape);
      const Tensor nbhd_p = reshape(stack(p_slots, Shape{m}), grid_shape);
      const Fusion ctx = neighborhood_context(nbhd_s, nbhd_p);
      co.x_n = ctx.fused;
      co.nbhd_weights = {ctx.weights[0], ctx.weights[1]};
      const Attended att = attend(ctx.fused, tokens, co.x_g);
      co.attention_weights.assign(att.weights.data().begin(), att.weights.data().end());
      co.x_final = att.output;
    } else {
      co.x_final = co.x_g;
    }
    predictions.push_back(predict(co.x_final));
    image_rows.push_back(co.x_s);
    poi_rows.push_back(co.x_p);
    out.cells.push_back(std::move(co));
  }
  out.predictions = reshape(stack(predictions), Shape{targets.size()});
  out.image_embeddings = stack(image_rows);
  out.poi_embeddings = stack(poi_rows);
  return out;
}

void check_compatible(const ModelConfig& config, const RegionDataset& dataset) {
  if (config.categories != dataset.categories) {
    throw IncompatibleError("model expects " + std::to_string(config.categories) +
                            " POI categories but the dataset has " +
                            std::to_string(dataset.categories) +
                            "; POI categories from different sources are not aligned");
  }
  if (config.image_height != dataset.image_height || config.image_width != dataset.image_width) {
    throw IncompatibleError("model image tiles are " + std::to_string(config.image_height) + "x" +
                            std::to_string(config.image_width) + " but the dataset's are " +
                            std::to_string(dataset.image_height) + "x" +
                            std::to_string(dataset.image_width));
  }
  if (config.poi_height != dataset.poi_height || config.poi_width != dataset.poi_width) {
    throw IncompatibleError("model POI rasters are " + std::to_string(config.poi_height) + "x" +
                            std::to_string(config.poi_width) + " but the dataset's are " +
                            std::to_string(dataset.poi_height) + "x" +
                            std::to_string(dataset.poi_width));
  }
}

}  // namespace carbongrid
