// SPDX-License-Identifier: Apache-2.0

#include "attnmpc/model_zoo.h"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "attnmpc/rng.h"

namespace attnmpc {

namespace {
// Encoded targets live in [0, 1]; a mid-range output bias keeps the relu
// output units active on every row at initialization.
constexpr double kOutputBiasInit = 0.5;
}  // namespace

EncodedControls ControlCodec::encode(const ControlVector& u) const {
  return {(u.tap - limits.tap_min) / (limits.tap_max - limits.tap_min),
          u.capacitor ? 1.0 : 0.0, u.pv_angle / limits.max_angle};
}

EncodedControls ControlCodec::decode(const EncodedControls& e) const {
  return {limits.tap_min + e[0] * (limits.tap_max - limits.tap_min), e[1],
          e[2] * limits.max_angle};
}

const char* category_name(Category c) {
  switch (c) {
    case Category::kA:
      return "A";
    case Category::kAM:
      return "AM";
    case Category::kAMSimple:
      return "AM_simple";
    case Category::kB:
      return "B";
    case Category::kC:
      return "C";
  }
  return "?";
}

const char* cell_name(CellKind c) {
  switch (c) {
    case CellKind::kDense:
      return "Dense";
    case CellKind::kLstm:
      return "LSTM";
    case CellKind::kBiLstm:
      return "BiLSTM";
  }
  return "?";
}

Category parse_category(const std::string& s) {
  for (Category c : {Category::kA, Category::kAM, Category::kAMSimple,
                     Category::kB, Category::kC}) {
    if (s == category_name(c)) return c;
  }
  throw std::invalid_argument(fmt::format("unknown model category '{}'", s));
}

CellKind parse_cell(const std::string& s) {
  for (CellKind c : {CellKind::kDense, CellKind::kLstm, CellKind::kBiLstm}) {
    if (s == cell_name(c)) return c;
  }
  throw std::invalid_argument(fmt::format("unknown cell kind '{}'", s));
}

std::string ModelSpec::name() const {
  return fmt::format("{}-{}", category_name(category), cell_name(cell));
}

void validate_model_spec(const ModelSpec& spec) {
  if (spec.category == Category::kAMSimple && spec.cell != CellKind::kLstm) {
    throw std::invalid_argument("AM_simple is defined only with the LSTM cell");
  }
  if (spec.sequence_length < 1 || spec.state_width < 1 || spec.control_width < 1 ||
      spec.hidden_width < 1 || spec.key_width < 1 || spec.heads < 1 ||
      spec.recurrent_layers < 1) {
    throw std::invalid_argument(
        fmt::format("model {} has a zero width, length or count", spec.name()));
  }
}

std::vector<double> FeatureScaler::apply(const std::vector<double>& x) const {
  if (mean.empty()) return x;
  if (x.size() != mean.size()) {
    throw ShapeError(fmt::format("scaler expects {} features, got {}", mean.size(),
                                 x.size()));
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean[i]) / scale[i];
  return out;
}

std::vector<Tensor> Model::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

void Model::register_parameters() {
  params_.clear();
  auto add_dense = [&](const std::string& prefix, const DenseParams& d) {
    params_.push_back({prefix + ".weight", d.weight});
    params_.push_back({prefix + ".bias", d.bias});
  };
  auto add_lstm = [&](const std::string& prefix, const LstmParams& p) {
    static constexpr const char* kGates[] = {"input", "forget", "candidate", "output"};
    for (std::size_t g = 0; g < 4; ++g) {
      params_.push_back({fmt::format("{}.{}.input_weight", prefix, kGates[g]),
                         p.input_weights[g]});
      params_.push_back({fmt::format("{}.{}.recurrent_weight", prefix, kGates[g]),
                         p.recurrent_weights[g]});
      params_.push_back({fmt::format("{}.{}.bias", prefix, kGates[g]), p.biases[g]});
    }
  };
  if (attention_) {
    for (std::size_t j = 0; j < attention_->heads.size(); ++j) {
      const AttentionHead& h = attention_->heads[j];
      params_.push_back({fmt::format("attention.head{}.query", j), h.query});
      params_.push_back({fmt::format("attention.head{}.key", j), h.key});
      params_.push_back({fmt::format("attention.head{}.value", j), h.value});
    }
    if (attention_->output.defined()) {
      params_.push_back({"attention.output", attention_->output});
    }
  }
  if (sequence_dense_) add_dense("cell.dense", *sequence_dense_);
  for (std::size_t l = 0; l < forward_cells_.size(); ++l) {
    add_lstm(fmt::format("cell.lstm{}.forward", l), forward_cells_[l]);
  }
  for (std::size_t l = 0; l < backward_cells_.size(); ++l) {
    add_lstm(fmt::format("cell.lstm{}.backward", l), backward_cells_[l]);
  }
  if (control_dense_) add_dense("control.dense", *control_dense_);
  for (std::size_t l = 0; l < hidden_.size(); ++l) {
    add_dense(fmt::format("hidden{}", l), hidden_[l]);
  }
  add_dense("output", output_);
}

Model build_model(const ModelSpec& spec) {
  validate_model_spec(spec);
  Rng rng(spec.seed);
  Model m;
  m.spec_ = spec;
  const std::size_t t = spec.sequence_length;
  const std::size_t h = spec.hidden_width;

  // Width of each step fed to the cell.
  std::size_t step_width = spec.state_width;
  switch (spec.category) {
    case Category::kA:
      m.attention_ = make_attention(spec.state_width, spec.key_width, 1, t, 0, rng);
      step_width = spec.key_width;
      break;
    case Category::kAM:
    case Category::kAMSimple:
      // W_O maps the flattened heads back to t steps of width d_k.
      m.attention_ = make_attention(spec.state_width, spec.key_width, spec.heads, t,
                                    t * spec.key_width, rng);
      step_width = spec.key_width;
      break;
    case Category::kB:
    case Category::kC:
      break;
  }

  std::size_t cell_out = h;
  switch (spec.cell) {
    case CellKind::kDense:
      m.sequence_dense_ = make_dense(t * step_width, h, Activation::kTanh, rng);
      break;
    case CellKind::kLstm:
      for (std::size_t l = 0; l < spec.recurrent_layers; ++l) {
        m.forward_cells_.push_back(make_lstm(l == 0 ? step_width : h, h, rng));
      }
      break;
    case CellKind::kBiLstm:
      for (std::size_t l = 0; l < spec.recurrent_layers; ++l) {
        const std::size_t in = l == 0 ? step_width : 2 * h;
        m.forward_cells_.push_back(make_lstm(in, h, rng));
        m.backward_cells_.push_back(make_lstm(in, h, rng));
      }
      cell_out = 2 * h;
      break;
  }

  std::size_t junction = cell_out;
  if (spec.category == Category::kAMSimple) {
    junction += spec.control_width;
  } else if (spec.uses_controls()) {
    m.control_dense_ = make_dense(spec.control_width, h, Activation::kTanh, rng);
    junction += h;
  }
  const std::size_t n_hidden = spec.category == Category::kAMSimple ? 1 : 2;
  for (std::size_t l = 0; l < n_hidden; ++l) {
    m.hidden_.push_back(make_dense(l == 0 ? junction : h, h, Activation::kTanh, rng));
  }
  m.output_ = make_dense(h, spec.control_width, Activation::kRelu, rng);
  for (double& b : m.output_.bias.mutable_values()) b = kOutputBiasInit;
  m.register_parameters();
  return m;
}

std::vector<Tensor> Model::state_features(const std::vector<Tensor>& states) const {
  if (states.size() != spec_.sequence_length) {
    throw ShapeError(fmt::format("{} expects {} states, got {}", spec_.name(),
                                 spec_.sequence_length, states.size()));
  }
  if (!attention_) return states;
  if (spec_.category == Category::kA) return single_head_attention(*attention_, states);
  const Tensor flat = multi_head_attention(*attention_, states);
  std::vector<Tensor> steps;
  for (std::size_t i = 0; i < spec_.sequence_length; ++i) {
    steps.push_back(slice_cols(flat, i * spec_.key_width, spec_.key_width));
  }
  return steps;
}

Tensor Model::forward(const Tensor& u_prev, const std::vector<Tensor>& states) const {
  std::vector<Tensor> seq = state_features(states);

  Tensor features;
  switch (spec_.cell) {
    case CellKind::kDense:
      features = dense_forward(*sequence_dense_, concat(seq));
      break;
    case CellKind::kLstm:
      for (std::size_t l = 0; l + 1 < forward_cells_.size(); ++l) {
        seq = lstm_sequence_states(forward_cells_[l], seq);
      }
      features = lstm_sequence_forward(forward_cells_.back(), seq);
      break;
    case CellKind::kBiLstm:
      for (std::size_t l = 0; l + 1 < forward_cells_.size(); ++l) {
        seq = bilstm_sequence_states(forward_cells_[l], backward_cells_[l], seq);
      }
      features = bilstm_sequence_forward(forward_cells_.back(), backward_cells_.back(),
                                         seq);
      break;
  }

  if (spec_.uses_controls()) {
    if (!u_prev.defined() || u_prev.rank() != 2 ||
        u_prev.cols() != spec_.control_width || u_prev.rows() != features.rows()) {
      throw ShapeError(fmt::format("{}: control input must be [{}x{}]", spec_.name(),
                                   features.rows(), spec_.control_width));
    }
    const Tensor control =
        control_dense_ ? dense_forward(*control_dense_, u_prev) : u_prev;
    features = concat({features, control});
  }
  for (const DenseParams& layer : hidden_) features = dense_forward(layer, features);
  return dense_forward(output_, features);
}

Model Model::clone() const {
  Model copy = build_model(spec_);
  copy.assign_parameters(*this);
  copy.codec = codec;
  copy.scaler = scaler;
  return copy;
}

void Model::assign_parameters(const Model& other) {
  if (other.params_.size() != params_.size()) {
    throw ShapeError("assign_parameters: models differ in structure");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& src = other.params_[i].tensor;
    Tensor dst = params_[i].tensor;
    if (src.shape() != dst.shape()) {
      throw ShapeError(fmt::format("assign_parameters: {} shape mismatch",
                                   params_[i].name));
    }
    std::copy(src.values().begin(), src.values().end(), dst.mutable_values().begin());
  }
}

Tensor predict_controls(const Model& m, const ControlVector& u_prev,
                        const std::vector<StateVector>& states) {
  const ModelSpec& spec = m.spec();
  if (states.size() != spec.sequence_length) {
    throw ShapeError(fmt::format("predict_controls: {} states for sequence length {}",
                                 states.size(), spec.sequence_length));
  }
  std::vector<Tensor> xs;
  for (const StateVector& s : states) {
    std::vector<double> f = m.scaler.apply(s.features());
    if (f.size() != spec.state_width) {
      throw ShapeError(fmt::format("predict_controls: state width {} != {}", f.size(),
                                   spec.state_width));
    }
    const std::size_t width = f.size();
    xs.push_back(Tensor::matrix(1, width, std::move(f)));
  }
  const EncodedControls e = m.codec.encode(u_prev);
  const Tensor u = Tensor::matrix(1, kControlWidth, {e.begin(), e.end()});
  return m.forward(u, xs);
}

std::size_t parameter_count(const Model& m) {
  std::size_t n = 0;
  for (const auto& p : m.parameters()) n += p.tensor.size();
  return n;
}

namespace {

std::string shortest(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_number(const std::string& token, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw FormatError(fmt::format("{}: bad number '{}'", where, token));
  }
  return v;
}

constexpr const char* kCheckpointMagic = "attnmpc-checkpoint";
constexpr int kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const Model& m, const std::string& path,
                     const std::string& provenance) {
  std::ofstream out(path);
  if (!out) throw FormatError(fmt::format("cannot write checkpoint {}", path));
  const ModelSpec& s = m.spec();
  if (!provenance.empty()) out << "# " << provenance << '\n';
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << fmt::format(
      "spec category={} cell={} t={} state_width={} control_width={} hidden={} "
      "dk={} heads={} layers={} seed={}\n",
      category_name(s.category), cell_name(s.cell), s.sequence_length, s.state_width,
      s.control_width, s.hidden_width, s.key_width, s.heads, s.recurrent_layers,
      s.seed);
  const ControlLimits& l = m.codec.limits;
  out << "codec " << shortest(l.tap_min) << ' ' << shortest(l.tap_max) << ' '
      << l.tap_positions << ' ' << shortest(l.max_angle) << '\n';
  out << "scaler " << m.scaler.mean.size();
  for (double v : m.scaler.mean) out << ' ' << shortest(v);
  for (double v : m.scaler.scale) out << ' ' << shortest(v);
  out << '\n';
  for (const auto& p : m.parameters()) {
    out << "param " << p.name << ' ' << p.tensor.rank();
    for (std::size_t d : p.tensor.shape()) out << ' ' << d;
    out << '\n';
    bool first = true;
    for (double v : p.tensor.values()) {
      if (!first) out << ' ';
      out << shortest(v);
      first = false;
    }
    out << '\n';
  }
  out << "end\n";
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open checkpoint {}", path));
  std::string line;
  std::size_t number = 0;
  auto next_line = [&]() -> std::string& {
    while (std::getline(in, line)) {
      ++number;
      if (!line.empty() && line.front() != '#') return line;
    }
    throw FormatError(fmt::format("{}: unexpected end of file", path));
  };
  auto where = [&] { return fmt::format("{}:{}", path, number); };

  {
    std::istringstream header(next_line());
    std::string magic;
    int version = 0;
    header >> magic >> version;
    if (magic != kCheckpointMagic || version != kCheckpointVersion) {
      throw FormatError(fmt::format("{}: not a version {} checkpoint", where(),
                                    kCheckpointVersion));
    }
  }

  ModelSpec spec;
  {
    std::istringstream ss(next_line());
    std::string tag, kv;
    ss >> tag;
    if (tag != "spec") throw FormatError(fmt::format("{}: expected spec line", where()));
    std::map<std::string, std::string> fields;
    while (ss >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        throw FormatError(fmt::format("{}: bad spec field '{}'", where(), kv));
      }
      fields[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    try {
      auto size = [&](const char* key) {
        return static_cast<std::size_t>(std::stoull(fields.at(key)));
      };
      spec.category = parse_category(fields.at("category"));
      spec.cell = parse_cell(fields.at("cell"));
      spec.sequence_length = size("t");
      spec.state_width = size("state_width");
      spec.control_width = size("control_width");
      spec.hidden_width = size("hidden");
      spec.key_width = size("dk");
      spec.heads = size("heads");
      spec.recurrent_layers = size("layers");
      spec.seed = std::stoull(fields.at("seed"));
    } catch (const std::exception& e) {
      throw FormatError(fmt::format("{}: invalid spec line ({})", where(), e.what()));
    }
  }

  Model m = build_model(spec);
  {
    std::istringstream ss(next_line());
    std::string tag, a, b, d;
    int positions = 0;
    ss >> tag >> a >> b >> positions >> d;
    if (tag != "codec" || !ss) throw FormatError(fmt::format("{}: expected codec", where()));
    m.codec.limits = {parse_number(a, where()), parse_number(b, where()), positions,
                      parse_number(d, where())};
  }
  {
    std::istringstream ss(next_line());
    std::string tag, token;
    std::size_t n = 0;
    ss >> tag >> n;
    if (tag != "scaler") throw FormatError(fmt::format("{}: expected scaler", where()));
    for (std::size_t i = 0; i < 2 * n; ++i) {
      if (!(ss >> token)) throw FormatError(fmt::format("{}: short scaler", where()));
      (i < n ? m.scaler.mean : m.scaler.scale).push_back(parse_number(token, where()));
    }
  }

  std::map<std::string, Tensor> by_name;
  for (const auto& p : m.parameters()) by_name.emplace(p.name, p.tensor);
  std::size_t loaded = 0;
  while (true) {
    std::istringstream ss(next_line());
    std::string tag, name;
    ss >> tag;
    if (tag == "end") break;
    if (tag != "param") throw FormatError(fmt::format("{}: expected param", where()));
    std::size_t rank = 0;
    ss >> name >> rank;
    Shape shape(rank);
    for (auto& dim : shape) ss >> dim;
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw FormatError(fmt::format("{}: unknown parameter '{}'", where(), name));
    }
    if (it->second.shape() != shape) {
      throw FormatError(fmt::format("{}: parameter '{}' has shape {}, expected {}",
                                    where(), name, shape_string(shape),
                                    shape_string(it->second.shape())));
    }
    std::istringstream values(next_line());
    std::string token;
    auto dst = it->second.mutable_values();
    for (double& v : dst) {
      if (!(values >> token)) {
        throw FormatError(fmt::format("{}: too few values for '{}'", where(), name));
      }
      v = parse_number(token, where());
    }
    if (values >> token) {
      throw FormatError(fmt::format("{}: too many values for '{}'", where(), name));
    }
    ++loaded;
  }
  if (loaded != by_name.size()) {
    throw FormatError(fmt::format("{}: {} of {} parameters present", path, loaded,
                                  by_name.size()));
  }
  return m;
}

}  // namespace attnmpc
