#include "fairehr/model.hpp"

#include <atomic>

#include <cmath>

#include "fairehr/autodiff/layers.hpp"
#include "fairehr/error.hpp"

namespace fairehr {

using nlohmann::json;

void ModelConfig::validate() const {
  auto check = [](bool ok, const std::string &what) { require(ok, ErrorKind::kConfig, "model: " + what); };
  check(embedding_dim >= 1 && fused_dim >= 1 && hidden >= 1 && ff_dim >= 1, "layer widths must be >= 1");
  check(conv_channels >= 1 && conv_width >= 1, "conv_channels and conv_width must be >= 1");
  check(heads >= 1 && conv_channels % heads == 0,
        "conv_channels (" + std::to_string(conv_channels) + ") must be divisible by heads (" +
            std::to_string(heads) + ")");
}

json ModelConfig::to_json() const {
  return {{"embedding_dim", embedding_dim}, {"fused_dim", fused_dim},   {"hidden", hidden},
          {"conv_channels", conv_channels}, {"conv_width", conv_width}, {"heads", heads},
          {"ff_dim", ff_dim},               {"pooling", "mean"},        {"activation", "relu"}};
}

ModelConfig ModelConfig::from_json(const json &doc) {
  ModelConfig c;
  try {
    c.embedding_dim = doc.value("embedding_dim", c.embedding_dim);
    c.fused_dim = doc.value("fused_dim", c.fused_dim);
    c.hidden = doc.value("hidden", c.hidden);
    c.conv_channels = doc.value("conv_channels", c.conv_channels);
    c.conv_width = doc.value("conv_width", c.conv_width);
    c.heads = doc.value("heads", c.heads);
    c.ff_dim = doc.value("ff_dim", c.ff_dim);
  } catch (const json::exception &e) {
    fail(ErrorKind::kConfig, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string ModalityFlags::label() const {
  std::string out;
  auto append = [&](bool on, const char *tag) {
    if (on) {
      out += out.empty() ? tag : std::string("+") + tag;
    }
  };
  append(demographics, "D");
  append(longitudinal, "L");
  append(notes, "N");
  return out.empty() ? "none" : out;
}

int ModelParams::demographic_width() const {
  return vocab_sizes[0] + vocab_sizes[1] + vocab_sizes[2] + vocab_sizes[3] + 1;
}

ModelParams ModelParams::initialize(const CohortSchema &schema, const ModelConfig &config,
                                    const Eigen::RowVectorXd &feature_mean, const Eigen::RowVectorXd &feature_sd,
                                    Rng &rng) {
  config.validate();
  ModelParams m;
  m.config = config;
  m.time_steps = schema.time_steps;
  m.features = schema.feature_count();
  m.note_dim = schema.note_dim;
  for (std::size_t i = 0; i < kCategoricalAttributes.size(); ++i) {
    m.vocab_sizes[i] = static_cast<int>(schema.vocabularies.of(kCategoricalAttributes[i]).size());
  }
  require(feature_mean.size() == m.features && feature_sd.size() == m.features, ErrorKind::kDimension,
          "model: feature statistics must have one entry per feature");
  require(m.time_steps >= config.conv_width, ErrorKind::kDimension,
          "model: sequence length " + std::to_string(m.time_steps) + " shorter than conv width " +
              std::to_string(config.conv_width));
  m.feature_mean = feature_mean;
  m.feature_sd = feature_sd;

  const int d_e = config.embedding_dim;
  auto &p = m.params;
  p.add_linear("demo.l1", m.demographic_width(), config.hidden, rng);
  p.add_linear("demo.l2", config.hidden, d_e, rng);
  {
    const int fan_in = config.conv_width * m.features;
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + config.conv_channels));
    Eigen::MatrixXd kernels(config.conv_channels, fan_in);
    for (Eigen::Index r = 0; r < kernels.rows(); ++r) {
      for (Eigen::Index c = 0; c < kernels.cols(); ++c) {
        kernels(r, c) = rng.uniform(-limit, limit);
      }
    }
    p.set("long.conv.weight", std::move(kernels));
    p.set("long.conv.bias", Eigen::MatrixXd::Zero(1, config.conv_channels));
  }
  ad::add_transformer_block(p, "long.block", config.conv_channels, config.ff_dim, rng);
  p.add_linear("long.proj", config.conv_channels, d_e, rng);
  p.add_linear("note.proj", m.note_dim, d_e, rng);
  p.add_linear("fusion.l1", 3 * d_e, config.hidden, rng);
  p.add_linear("fusion.l2", config.hidden, config.fused_dim, rng);
  p.set("dr.w", Eigen::MatrixXd::Zero(1, config.fused_dim));
  p.add_linear("clf.l1", config.fused_dim, config.hidden, rng);
  p.add_linear("clf.l2", config.hidden, 2, rng);
  return m;
}

json ModelParams::to_json() const {
  return {{"format", "fairehr-model"},
          {"config", config.to_json()},
          {"time_steps", time_steps},
          {"features", features},
          {"note_dim", note_dim},
          {"vocab_sizes", vocab_sizes},
          {"feature_mean", std::vector<double>(feature_mean.data(), feature_mean.data() + feature_mean.size())},
          {"feature_sd", std::vector<double>(feature_sd.data(), feature_sd.data() + feature_sd.size())},
          {"params", ad::parameters_to_json(params)}};
}

ModelParams ModelParams::from_json(const json &doc) {
  ModelParams m;
  try {
    require(doc.value("format", std::string()) == "fairehr-model", ErrorKind::kSchema,
            "model checkpoint: unexpected format");
    m.config = ModelConfig::from_json(doc.at("config"));
    m.time_steps = doc.at("time_steps").get<int>();
    m.features = doc.at("features").get<int>();
    m.note_dim = doc.at("note_dim").get<int>();
    m.vocab_sizes = doc.at("vocab_sizes").get<std::array<int, 4>>();
    const auto mean = doc.at("feature_mean").get<std::vector<double>>();
    const auto sd = doc.at("feature_sd").get<std::vector<double>>();
    m.feature_mean = Eigen::Map<const Eigen::RowVectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    m.feature_sd = Eigen::Map<const Eigen::RowVectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
    m.params = ad::parameters_from_json(doc.at("params"));
  } catch (const json::exception &e) {
    fail(ErrorKind::kSchema, std::string("model checkpoint: ") + e.what());
  }
  require(m.feature_mean.size() == m.features && m.feature_sd.size() == m.features, ErrorKind::kSchema,
          "model checkpoint: feature statistics do not match feature count");
  require(m.params.contains("dr.w") && m.params.at("dr.w").cols() == m.config.fused_dim, ErrorKind::kSchema,
          "model checkpoint: gate must have fused_dim entries");
  return m;
}

Eigen::RowVectorXd demographic_features(const SensitiveAttributes &s, const AttributeVocabularies &vocabularies) {
  Eigen::Index width = 1;
  for (const Attribute a : kCategoricalAttributes) {
    width += static_cast<Eigen::Index>(vocabularies.of(a).size());
  }
  Eigen::RowVectorXd x = Eigen::RowVectorXd::Zero(width);
  Eigen::Index offset = 0;
  for (const Attribute a : kCategoricalAttributes) {
    const int size = static_cast<int>(vocabularies.of(a).size());
    const int id = s.category(a);
    require(id >= 0 && id < size, ErrorKind::kSchema,
            std::string(attribute_name(a)) + " category " + std::to_string(id) + " outside vocabulary of size " +
                std::to_string(size));
    x(offset + id) = 1.0;
    offset += size;
  }
  x(offset) = s.age / 100.0;
  return x;
}

Var encode_demographics(const Var &x, const BoundParams &p) {
  return ad::linear(ad::relu(ad::linear(x, p, "demo.l1")), p, "demo.l2");
}

Var encode_longitudinal(const Var &x, const BoundParams &p, const ModelParams &shape) {
  require(x.cols() == shape.features, ErrorKind::kDimension,
          "longitudinal encoder: expected " + std::to_string(shape.features) + " features, got " +
              std::to_string(x.cols()));
  const Eigen::Index width = shape.config.conv_width;
  const Var conv = ad::relu(ad::add_row(ad::conv1d(x, p["long.conv.weight"], width, 1, shape.time_steps),
                                        p["long.conv.bias"]));
  const Eigen::Index out_len = shape.time_steps - width + 1;
  const Var h = ad::transformer_block(conv, p, "long.block", shape.config.heads, out_len);
  return ad::linear(ad::sequence_mean(h, out_len), p, "long.proj");
}

Var encode_notes(const Var &notes, const BoundParams &p, const ModelParams &shape) {
  require(notes.cols() == shape.note_dim, ErrorKind::kSchema,
          "note encoder: embedding dimension " + std::to_string(notes.cols()) + " != " +
              std::to_string(shape.note_dim));
  return ad::relu(ad::linear(notes, p, "note.proj"));
}

Var fuse(const Var &e_d, const Var &e_l, const Var &e_n, const BoundParams &p, const ModelParams &shape) {
  const int d_e = shape.config.embedding_dim;
  for (const Var *part : {&e_d, &e_l, &e_n}) {
    require(part->cols() == d_e && part->rows() == e_d.rows(), ErrorKind::kContract,
            "fuse: modality embeddings must all be " + std::to_string(e_d.rows()) + " x " + std::to_string(d_e));
  }
  return ad::linear(ad::relu(ad::linear(ad::concat_cols<double>({e_d, e_l, e_n}), p, "fusion.l1")), p,
                    "fusion.l2");
}

Var dynamic_relevance(const Var &e, const Var &w) {
  require(w.rows() == 1 && w.cols() == e.cols(), ErrorKind::kContract,
          "dynamic relevance: gate has " + std::to_string(w.cols()) + " entries for embeddings of width " +
              std::to_string(e.cols()));
  return ad::mul_row(e, ad::sigmoid(w));
}

Var classify(const Var &e_adj, const BoundParams &p) {
  return ad::softmax(ad::linear(ad::relu(ad::linear(e_adj, p, "clf.l1")), p, "clf.l2"), 1);
}

namespace {

void append_standardized(Eigen::MatrixXd &out, Eigen::Index row, const Eigen::MatrixXd &x, const ModelParams &m,
                         const std::string &who) {
  require(x.rows() == m.time_steps && x.cols() == m.features, ErrorKind::kDimension,
          who + ": longitudinal block must be " + std::to_string(m.time_steps) + " x " + std::to_string(m.features));
  require(x.allFinite(), ErrorKind::kPipeline, who + ": longitudinal values must be imputed before training");
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    for (Eigen::Index f = 0; f < x.cols(); ++f) {
      const double sd = m.feature_sd(f) > 1e-12 ? m.feature_sd(f) : 1.0;
      out(row + t, f) = (x(t, f) - m.feature_mean(f)) / sd;
    }
  }
}

template <typename Item, typename Attrs, typename Long, typename Note>
ModelInputs gather(const std::vector<const Item *> &items, const CohortSchema &schema, const ModelParams &m,
                   const ModalityFlags &flags, DataAccess *access, Attrs attrs, Long longitudinal, Note note) {
  ModelInputs in;
  in.batch = static_cast<Eigen::Index>(items.size());
  if (flags.demographics) {
    in.demographics.resize(in.batch, m.demographic_width());
  }
  if (flags.longitudinal) {
    in.longitudinal.resize(in.batch * m.time_steps, m.features);
  }
  if (flags.notes) {
    in.notes.resize(in.batch, m.note_dim);
  }
  for (Eigen::Index b = 0; b < in.batch; ++b) {
    const Item &item = *items[static_cast<std::size_t>(b)];
    if (flags.demographics) {
      const Eigen::RowVectorXd x = demographic_features(attrs(item), schema.vocabularies);
      require(x.size() == m.demographic_width(), ErrorKind::kSchema,
              "demographic encoding width does not match the model's vocabularies");
      in.demographics.row(b) = x;
      if (access) ++access->demographics;
    }
    if (flags.longitudinal) {
      append_standardized(in.longitudinal, b * m.time_steps, longitudinal(item), m, "model input");
      if (access) ++access->longitudinal;
    }
    if (flags.notes) {
      const Eigen::VectorXd &v = note(item);
      require(v.size() == m.note_dim, ErrorKind::kSchema,
              "note embedding dimension " + std::to_string(v.size()) + " != " + std::to_string(m.note_dim));
      in.notes.row(b) = v.transpose();
      if (access) ++access->notes;
    }
  }
  return in;
}

} // namespace

ModelInputs record_inputs(const std::vector<const PatientRecord *> &records, const CohortSchema &schema,
                          const ModelParams &params, const ModalityFlags &flags, DataAccess *access) {
  return gather(
      records, schema, params, flags, access, [](const PatientRecord &r) -> const SensitiveAttributes & { return r.s; },
      [](const PatientRecord &r) -> const Eigen::MatrixXd & { return r.longitudinal; },
      [](const PatientRecord &r) -> const Eigen::VectorXd & { return r.note_embedding; });
}

namespace {
std::atomic<std::size_t> g_counterpart_reads{0};
}

std::size_t counterpart_records_read() { return g_counterpart_reads.load(); }

ModelInputs counterpart_inputs(const std::vector<const CounterpartRecord *> &counterparts,
                               const CohortSchema &schema, const ModelParams &params, const ModalityFlags &flags,
                               DataAccess *access) {
  g_counterpart_reads += counterparts.size();
  return gather(
      counterparts, schema, params, flags, access,
      [](const CounterpartRecord &r) -> const SensitiveAttributes & { return r.s_syn; },
      [](const CounterpartRecord &r) -> const Eigen::MatrixXd & { return r.longitudinal_syn; },
      [](const CounterpartRecord &r) -> const Eigen::VectorXd & { return r.note_embedding_syn; });
}

Var embed(const ModelInputs &inputs, const BoundParams &p, const ModelParams &shape, const ModalityFlags &flags) {
  require(flags.any(), ErrorKind::kConfig, "at least one modality must be enabled");
  require(inputs.batch >= 1, ErrorKind::kContract, "embed: empty batch");
  auto &tape = p["dr.w"].tape();
  const int d_e = shape.config.embedding_dim;
  auto zeros = [&] { return tape.constant(Eigen::MatrixXd::Zero(inputs.batch, d_e)); };
  const Var e_d = flags.demographics ? encode_demographics(tape.constant(inputs.demographics), p) : zeros();
  const Var e_l = flags.longitudinal ? encode_longitudinal(tape.constant(inputs.longitudinal), p, shape) : zeros();
  const Var e_n = flags.notes ? encode_notes(tape.constant(inputs.notes), p, shape) : zeros();
  return fuse(e_d, e_l, e_n, p, shape);
}

ForwardOutput forward_batch(const ModelInputs &real, const ModelInputs &synthetic, const BoundParams &p,
                            const ModelParams &shape, const ModalityFlags &flags, bool use_dr) {
  ForwardOutput out;
  const Var &w = p["dr.w"];
  out.bundle.e = embed(real, p, shape, flags);
  out.bundle.e_adj = use_dr ? dynamic_relevance(out.bundle.e, w) : out.bundle.e;
  if (synthetic.batch > 0) {
    out.bundle.e_syn = embed(synthetic, p, shape, flags);
    out.bundle.e_adj_syn = use_dr ? dynamic_relevance(out.bundle.e_syn, w) : out.bundle.e_syn;
  }
  out.probabilities = classify(out.bundle.e_adj, p);
  return out;
}

ForwardOutput forward_pair(const PatientRecord &record, const CounterpartRecord &counterpart,
                           const CohortSchema &schema, const BoundParams &p, const ModelParams &shape,
                           const ModalityFlags &flags, bool use_dr) {
  require(counterpart.source_id == record.id, ErrorKind::kContract,
          "counterpart of '" + counterpart.source_id + "' paired with record '" + record.id + "'");
  const ModelInputs real = record_inputs({&record}, schema, shape, flags);
  const ModelInputs synthetic = counterpart_inputs({&counterpart}, schema, shape, flags);
  return forward_batch(real, synthetic, p, shape, flags, use_dr);
}

Prediction predict(const ModelInputs &real, const ModelParams &params, const ModalityFlags &flags, bool use_dr) {
  ad::Tape<double> tape;
  const BoundParams p(tape, params.params, false);
  const ForwardOutput out = forward_batch(real, ModelInputs{}, p, params, flags, use_dr);
  return {out.bundle.e_adj.value(), out.probabilities.value()};
}

} // namespace fairehr
