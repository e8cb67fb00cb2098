// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "diaformer/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "diaformer/ops.hpp"
#include "json.hpp"

namespace diaformer {

using json = nlohmann::ordered_json;

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("model needs at least one layer");
  if (hidden < 1 || heads < 1) throw ConfigError("hidden size and head count must be positive");
  if (hidden % heads != 0) {
    throw ConfigError("hidden size " + std::to_string(hidden) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (ffn_multiplier < 1) throw ConfigError("ffn multiplier must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (!(init_std >= 0.0)) throw ConfigError("init_std must be >= 0");
  if (num_symptoms == 0 || num_diseases == 0) {
    throw ConfigError("vocabulary sizes must be positive (empty vocabulary?)");
  }
}

namespace {

// Normal(0, std) truncated at two standard deviations.
real truncated_normal(Rng& rng, double std) {
  for (;;) {
    const double u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    if (u1 <= 0.0) continue;
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    if (std::abs(z) <= 2.0) return static_cast<real>(z * std);
  }
}

}  // namespace

std::size_t DiaformerModel::add_param(std::string name, Shape shape, Init init, Rng& rng) {
  std::vector<real> values(numel(shape));
  switch (init) {
    case Init::Normal:
      for (auto& v : values) v = truncated_normal(rng, config_.init_std);
      break;
    case Init::Zeros: break;
    case Init::Ones:
      for (auto& v : values) v = real{1};
      break;
  }
  by_name_.emplace(name, params_.size());
  params_.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values), true));
  return params_.size() - 1;
}

DiaformerModel::DiaformerModel(ModelConfig config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const std::size_t h = config_.hidden;
  const std::size_t f = h * config_.ffn_multiplier;
  tok_emb_ = add_param("embed.token", {config_.token_count(), h}, Init::Normal, rng);
  state_emb_ = add_param("embed.state", {kStateCount, h}, Init::Normal, rng);
  type_emb_ = add_param("embed.type", {kTypeCount, h}, Init::Normal, rng);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string pre = "block" + std::to_string(l) + ".";
    Block b{};
    b.ln1_gain = add_param(pre + "ln1.gain", {h}, Init::Ones, rng);
    b.ln1_bias = add_param(pre + "ln1.bias", {h}, Init::Zeros, rng);
    b.wq = add_param(pre + "attn.wq", {h, h}, Init::Normal, rng);
    b.bq = add_param(pre + "attn.bq", {h}, Init::Zeros, rng);
    b.wk = add_param(pre + "attn.wk", {h, h}, Init::Normal, rng);
    b.bk = add_param(pre + "attn.bk", {h}, Init::Zeros, rng);
    b.wv = add_param(pre + "attn.wv", {h, h}, Init::Normal, rng);
    b.bv = add_param(pre + "attn.bv", {h}, Init::Zeros, rng);
    b.wo = add_param(pre + "attn.wo", {h, h}, Init::Normal, rng);
    b.bo = add_param(pre + "attn.bo", {h}, Init::Zeros, rng);
    b.ln2_gain = add_param(pre + "ln2.gain", {h}, Init::Ones, rng);
    b.ln2_bias = add_param(pre + "ln2.bias", {h}, Init::Zeros, rng);
    b.w1 = add_param(pre + "ffn.w1", {h, f}, Init::Normal, rng);
    b.b1 = add_param(pre + "ffn.b1", {f}, Init::Zeros, rng);
    b.w2 = add_param(pre + "ffn.w2", {f, h}, Init::Normal, rng);
    b.b2 = add_param(pre + "ffn.b2", {h}, Init::Zeros, rng);
    blocks_.push_back(b);
  }
  lnf_gain_ = add_param("final_ln.gain", {h}, Init::Ones, rng);
  lnf_bias_ = add_param("final_ln.bias", {h}, Init::Zeros, rng);
  w_sym_ = add_param("head.symptom.weight", {h, config_.inquiry_classes()}, Init::Normal, rng);
  b_sym_ = add_param("head.symptom.bias", {config_.inquiry_classes()}, Init::Zeros, rng);
  w_dis_ = add_param("head.disease.weight", {h, config_.num_diseases}, Init::Normal, rng);
  b_dis_ = add_param("head.disease.bias", {config_.num_diseases}, Init::Zeros, rng);
}

Parameter& DiaformerModel::parameter(std::string_view name) {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw std::out_of_range("no parameter named " + std::string(name));
  return params_[it->second];
}

const Parameter& DiaformerModel::parameter(std::string_view name) const {
  return const_cast<DiaformerModel*>(this)->parameter(name);
}

Tensor additive_mask(const TrainingSequence& seq) {
  const std::size_t t = seq.length();
  std::vector<real> values(t * t);
  for (std::size_t i = 0; i < t * t; ++i) {
    values[i] = seq.visibility[i] ? real{0} : kMaskedScore;
  }
  return Tensor::from({t, t}, std::move(values));
}

ForwardOutput DiaformerModel::forward(const TrainingSequence& seq, Rng* dropout_rng) const {
  using namespace ops;
  const std::size_t t = seq.length();
  if (t == 0) throw std::invalid_argument("forward: empty sequence");
  if (seq.visibility.size() != t * t) throw std::invalid_argument("forward: visibility size mismatch");
  const bool train = dropout_rng != nullptr && config_.dropout > 0.0;
  const auto drop_rate = static_cast<real>(config_.dropout);
  auto maybe_dropout = [&](const Tensor& x) { return train ? dropout(x, drop_rate, *dropout_rng) : x; };

  Tensor x = add(add(embedding(p(tok_emb_), seq.token_ids), embedding(p(state_emb_), seq.state_ids)),
                 embedding(p(type_emb_), seq.type_ids));
  x = maybe_dropout(x);
  const Tensor mask = additive_mask(seq);
  const std::size_t heads = config_.heads;
  const real inv_sqrt_d =
      real{1} / std::sqrt(static_cast<real>(config_.hidden / heads));

  for (const Block& b : blocks_) {
    const Tensor hn = layer_norm(x, p(b.ln1_gain), p(b.ln1_bias));
    const Tensor q = split_heads(add(matmul(hn, p(b.wq)), p(b.bq)), heads);
    const Tensor k = split_heads(add(matmul(hn, p(b.wk)), p(b.bk)), heads);
    const Tensor v = split_heads(add(matmul(hn, p(b.wv)), p(b.bv)), heads);
    Tensor weights = masked_softmax(scale(matmul(q, transpose(k)), inv_sqrt_d), mask);
    weights = maybe_dropout(weights);
    const Tensor context = merge_heads(matmul(weights, v));
    x = add(x, maybe_dropout(add(matmul(context, p(b.wo)), p(b.bo))));

    const Tensor hn2 = layer_norm(x, p(b.ln2_gain), p(b.ln2_bias));
    const Tensor inner = gelu(add(matmul(hn2, p(b.w1)), p(b.b1)));
    x = add(x, maybe_dropout(add(matmul(inner, p(b.w2)), p(b.b2))));
  }
  x = layer_norm(x, p(lnf_gain_), p(lnf_bias_));

  ForwardOutput out;
  if (!seq.s_positions.empty()) {
    out.s_logits = add(matmul(gather_rows(x, seq.s_positions), p(w_sym_)), p(b_sym_));
  }
  if (seq.d_position) {
    const std::size_t row[] = {*seq.d_position};
    out.d_logits = reshape(add(matmul(gather_rows(x, row), p(w_dis_)), p(b_dis_)),
                           {config_.num_diseases});
  }
  return out;
}

LossParts DiaformerModel::loss(const ForwardOutput& out, const TrainingSequence& seq) const {
  if (!out.s_logits.defined() || !out.d_logits.defined()) {
    throw std::invalid_argument("loss: forward output lacks [S] or [D] logits");
  }
  if (seq.s_labels.size() != seq.s_positions.size()) {
    throw std::invalid_argument("loss: sequence has no label set for some [S] token");
  }
  LossParts parts;
  parts.symptom = ops::concurrent_softmax_loss_rows(out.s_logits, seq.s_labels);
  parts.disease = ops::cross_entropy(out.d_logits, seq.disease_label);
  parts.total = ops::add(parts.disease, parts.symptom);
  return parts;
}

DiaformerModel DiaformerModel::clone() const {
  DiaformerModel copy(config_);
  copy.copy_values_from(*this);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    copy.params_[i].adam_m = params_[i].adam_m;
    copy.params_[i].adam_v = params_[i].adam_v;
    copy.params_[i].step_count = params_[i].step_count;
  }
  return copy;
}

void DiaformerModel::copy_values_from(const DiaformerModel& other) {
  if (!(other.config_ == config_)) throw ConfigError("copy_values_from: configuration mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].tensor.mutable_data();
    auto src = other.params_[i].tensor.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

// ---------------------------------------------------------------------------

std::string config_to_json(const ModelConfig& c) {
  json j;
  j["layers"] = c.layers;
  j["hidden"] = c.hidden;
  j["heads"] = c.heads;
  j["ffn_multiplier"] = c.ffn_multiplier;
  j["dropout"] = c.dropout;
  j["init_std"] = c.init_std;
  j["num_symptoms"] = c.num_symptoms;
  j["num_diseases"] = c.num_diseases;
  j["seed"] = c.seed;
  return j.dump();
}

ModelConfig config_from_json(const std::string& json_text) {
  ModelConfig c;
  try {
    const auto j = json::parse(json_text);
    c.layers = j.value("layers", c.layers);
    c.hidden = j.value("hidden", c.hidden);
    c.heads = j.value("heads", c.heads);
    c.ffn_multiplier = j.value("ffn_multiplier", c.ffn_multiplier);
    c.dropout = j.value("dropout", c.dropout);
    c.init_std = j.value("init_std", c.init_std);
    c.num_symptoms = j.value("num_symptoms", c.num_symptoms);
    c.num_diseases = j.value("num_diseases", c.num_diseases);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config JSON: ") + e.what());
  }
  return c;
}

namespace {

constexpr char kMagic[8] = {'D', 'I', 'A', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kByteOrderMark = 0x01020304;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw CheckpointError("truncated checkpoint");
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DiaformerModel& model,
                     const SymptomVocab& vocab) {
  json header;
  header["config"] = json::parse(config_to_json(model.config()));
  header["vocab"] = json::parse(vocab.to_json());
  header["tensors"] = json::array();
  for (const auto& p : model.parameters()) {
    header["tensors"].push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  }
  const std::string meta = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kCheckpointVersion);
  write_pod(out, kByteOrderMark);
  write_pod(out, static_cast<std::uint32_t>(sizeof(real)));
  write_pod(out, static_cast<std::uint64_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  for (const auto& p : model.parameters()) {
    const auto data = p.tensor.data();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(real)));
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  if (read_pod<std::uint32_t>(in) != kByteOrderMark) {
    throw CheckpointError("checkpoint byte order does not match this host");
  }
  const auto real_bytes = read_pod<std::uint32_t>(in);
  if (real_bytes != sizeof(real)) {
    throw CheckpointError("checkpoint stores " + std::to_string(real_bytes * 8) +
                          "-bit values but this build uses " + std::to_string(sizeof(real) * 8));
  }
  const auto meta_len = read_pod<std::uint64_t>(in);
  std::string meta(meta_len, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw CheckpointError("truncated checkpoint header");

  Checkpoint ckpt;
  json header;
  try {
    header = json::parse(meta);
    ckpt.vocab = SymptomVocab::from_json(header.at("vocab").dump());
    ckpt.model = std::make_unique<DiaformerModel>(config_from_json(header.at("config").dump()));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  if (ckpt.model->config().num_symptoms != ckpt.vocab.num_symptoms() ||
      ckpt.model->config().num_diseases != ckpt.vocab.num_diseases()) {
    throw CheckpointError("checkpoint vocabulary does not match its model configuration");
  }
  auto& params = ckpt.model->parameters();
  const auto& tensors = header.at("tensors");
  if (tensors.size() != params.size()) throw CheckpointError("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto name = tensors[i].at("name").get<std::string>();
    const auto shape = tensors[i].at("shape").get<Shape>();
    if (name != params[i].name || shape != params[i].tensor.shape()) {
      throw CheckpointError("checkpoint tensor " + name + " does not match the model layout");
    }
    auto data = params[i].tensor.mutable_data();
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(real)));
    if (!in) throw CheckpointError("truncated checkpoint data at " + name);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes in checkpoint");
  return ckpt;
}

}  // namespace diaformer
