#include "turl/store.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <type_traits>

#include "turl/binio.hpp"
#include "turl/errors.hpp"
#include "turl/tokenizer.hpp"

namespace turl::store {

namespace {

std::string format_value(const std::string& v) { return v; }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(int v) { return std::to_string(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
void parse_number(const std::string& key, const std::string& text, T& out) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError("bad value for " + key + ": '" + text + "'");
  out = v;
}

void parse_value(const std::string&, const std::string& text, std::string& out) { out = text; }
void parse_value(const std::string& key, const std::string& text, bool& out) {
  if (text == "true" || text == "1" || text == "on")
    out = true;
  else if (text == "false" || text == "0" || text == "off")
    out = false;
  else
    throw ConfigError("bad boolean for " + key + ": '" + text + "'");
}
void parse_value(const std::string& key, const std::string& text, int& out) { parse_number(key, text, out); }
void parse_value(const std::string& key, const std::string& text, std::uint64_t& out) { parse_number(key, text, out); }
void parse_value(const std::string& key, const std::string& text, double& out) {
  // from_chars for double is not available in every libstdc++; strtod is exact enough.
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) throw ConfigError("bad value for " + key + ": '" + text + "'");
  out = v;
}

std::string read_file(const std::string& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoError("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

}  // namespace

void Config::set(const std::string& key, const std::string& value) {
  bool found = false;
  visit([&](const char* k, auto& field) {
    if (key != k) return;
    found = true;
    parse_value(key, value, field);
  });
  if (!found) throw ConfigError("unknown config key '" + key + "'");
}

std::string Config::get(const std::string& key) const {
  std::optional<std::string> out;
  visit([&](const char* k, const auto& field) {
    if (key == k) out = format_value(field);
  });
  if (!out) throw ConfigError("unknown config key '" + key + "'");
  return *out;
}

std::vector<std::string> Config::keys() const {
  std::vector<std::string> out;
  visit([&](const char* k, const auto&) { out.emplace_back(k); });
  return out;
}

void Config::merge_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw ConfigError("line " + std::to_string(n) + ": expected key=value");
    set(std::string(trim(body.substr(0, eq))), std::string(trim(body.substr(eq + 1))));
  }
}

Config Config::from_text(const std::string& text) {
  Config c;
  c.merge_text(text);
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  return from_text(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
}

std::string Config::to_text() const {
  std::string out;
  visit([&](const char* k, const auto& field) { out += std::string(k) + "=" + format_value(field) + "\n"; });
  return out;
}

void Config::save(const std::string& path) const { write_file(path, to_text()); }

std::string Config::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(binio::fnv1a(to_text())));
  return buf;
}

void Config::validate() const {
  encoder_config(1, 1).validate();
  ratios().validate();
  const auto positive = [](const char* key, double v) {
    if (!(v > 0)) throw ConfigError(std::string(key) + " must be positive");
  };
  positive("pretrain_lr", pretrain_lr);
  positive("finetune_lr", finetune_lr);
  positive("pretrain_batch_size", pretrain_batch_size);
  positive("finetune_batch_size", finetune_batch_size);
  positive("candidate_cap", candidate_cap);
  if (pretrain_epochs < 0 || finetune_epochs < 0 || sa_epochs < 0) throw ConfigError("epochs must be >= 0");
  if (heldout_cap < 0 || rp_seeds < 0 || sa_seeds < 0 || min_label_instances < 0 || rp_top_k_tables < 0)
    throw ConfigError("counts must be >= 0");
}

encoder::EncoderConfig Config::encoder_config(int token_vocab, int entity_vocab) const {
  encoder::EncoderConfig c;
  c.num_blocks = num_blocks;
  c.d_model = d_model;
  c.d_intermediate = d_intermediate;
  c.num_heads = num_heads;
  c.max_len = max_len;
  c.token_vocab = token_vocab;
  c.entity_vocab = entity_vocab;
  return c;
}

pretrain::MaskRatios Config::ratios() const {
  pretrain::MaskRatios r;
  r.mlm_select = mlm_select;
  r.mlm_mask = mlm_mask;
  r.mlm_random = mlm_random;
  r.mer_select = mer_select;
  r.mer_keep = mer_keep;
  r.mer_mask_both = mer_mask_both;
  r.mer_random_sub = mer_random_sub;
  return r;
}

pretrain::PretrainConfig Config::pretrain_config() const {
  pretrain::PretrainConfig p;
  p.epochs = pretrain_epochs;
  p.lr = pretrain_lr;
  p.batch_size = pretrain_batch_size;
  p.ratios = ratios();
  p.candidate_cap = static_cast<std::size_t>(candidate_cap);
  p.use_visibility = use_visibility;
  p.seed = seed;
  return p;
}

tasks::FinetuneConfig Config::finetune_config(tasks::Task task) const {
  tasks::FinetuneConfig f;
  f.epochs = task == tasks::Task::sa ? sa_epochs : finetune_epochs;
  f.lr = finetune_lr;
  f.batch_size = finetune_batch_size;
  f.use_visibility = use_visibility;
  f.seed = seed;
  f.max_len = static_cast<std::size_t>(max_len);
  return f;
}

tasks::TaskThresholds Config::thresholds() const {
  tasks::TaskThresholds t;
  t.cta_min_linked = static_cast<std::size_t>(cta_min_linked);
  t.min_label_instances = static_cast<std::size_t>(min_label_instances);
  t.cf_min_pairs = static_cast<std::size_t>(cf_min_pairs);
  t.cf_filter_candidates = cf_filter_candidates;
  t.sa_min_tables = static_cast<std::size_t>(sa_min_tables);
  t.rp_top_k_tables = static_cast<std::size_t>(rp_top_k_tables);
  return t;
}

corpus::FilterThresholds Config::filter_thresholds() const {
  corpus::FilterThresholds f;
  f.min_entities = static_cast<std::size_t>(min_entities);
  f.max_columns = static_cast<std::size_t>(max_columns);
  return f;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'T', 'U', 'R', 'L', 'C', 'K', 'P', 'T'};

void write_matrix(binio::Writer& w, const Matrix<float>& m) {
  w.u64(m.rows);
  w.u64(m.cols);
  for (float v : m.data) w.f32(v);
}

Matrix<float> read_matrix(binio::Reader<CorruptCheckpoint>& r) {
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  if (cols != 0 && rows > r.remaining() / 4 / cols) throw CorruptCheckpoint("tensor dimensions exceed file size");
  Matrix<float> m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  for (auto& v : m.data) v = r.f32();
  return m;
}

void write_encoder(binio::Writer& w, const encoder::EncoderConfig& c) {
  for (int v : {c.num_blocks, c.d_model, c.d_intermediate, c.num_heads, c.max_len, c.token_vocab, c.entity_vocab})
    w.u32(static_cast<std::uint32_t>(v));
}

encoder::EncoderConfig read_encoder(binio::Reader<CorruptCheckpoint>& r) {
  encoder::EncoderConfig c;
  for (int* v : {&c.num_blocks, &c.d_model, &c.d_intermediate, &c.num_heads, &c.max_len, &c.token_vocab,
                 &c.entity_vocab})
    *v = static_cast<int>(r.u32());
  return c;
}

/// Checks magic, version and trailing hash; returns the payload length (without hash).
std::size_t check_envelope(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + 4 + 8) throw CorruptCheckpoint("file too short");
  if (bytes.compare(0, sizeof kMagic, kMagic, sizeof kMagic) != 0) throw CorruptCheckpoint("bad magic");
  binio::Reader<CorruptCheckpoint> head(bytes.data() + sizeof kMagic, 4);
  const std::uint32_t version = head.u32();
  if (version != kCheckpointVersion)
    throw VersionMismatch("checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  const std::size_t payload = bytes.size() - 8;
  binio::Reader<CorruptCheckpoint> tail(bytes.data() + payload, 8);
  if (tail.u64() != binio::fnv1a(bytes.data(), payload)) throw CorruptCheckpoint("content hash mismatch");
  return payload;
}

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void Checkpoint::restore(Tensor<float>& dst) const {
  const auto* src = find(dst.name);
  if (!src) throw CorruptCheckpoint("missing tensor " + dst.name);
  if (src->rows() != dst.rows() || src->cols() != dst.cols())
    throw ShapeMismatch("tensor " + dst.name + " has a different shape in the checkpoint");
  dst.value = src->value;
  dst.grad = Matrix<float>(dst.rows(), dst.cols());
}

std::uint64_t save_checkpoint(const std::string& path, const std::string& config_text,
                              const encoder::EncoderConfig& encoder, const std::vector<const Tensor<float>*>& tensors,
                              const numeric::AdamState<float>* adam,
                              const std::map<std::string, std::string>& metadata) {
  binio::Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str(config_text);
  write_encoder(w, encoder);
  w.u64(metadata.size());
  for (const auto& [k, v] : metadata) {
    w.str(k);
    w.str(v);
  }
  w.u64(tensors.size());
  for (const auto* t : tensors) {
    w.str(t->name);
    write_matrix(w, t->value);
  }
  w.u8(adam ? 1 : 0);
  if (adam) {
    w.f64(adam->beta1);
    w.f64(adam->beta2);
    w.f64(adam->eps);
    w.i64(adam->step);
    w.u64(adam->first_moment.size());
    for (std::size_t i = 0; i < adam->first_moment.size(); ++i) {
      write_matrix(w, adam->first_moment[i]);
      write_matrix(w, adam->second_moment.at(i));
    }
  }
  const std::uint64_t h = binio::fnv1a(w.bytes().data(), w.bytes().size());
  w.u64(h);
  // Write to a sibling file first so an interrupted save never leaves a torn checkpoint.
  const std::string tmp = path + ".tmp";
  write_file(tmp, w.bytes());
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into " + path);
  return h;
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path, true);
  const std::size_t payload = check_envelope(bytes);
  binio::Reader<CorruptCheckpoint> r(bytes.data() + sizeof kMagic + 4, payload - sizeof kMagic - 4);
  Checkpoint c;
  c.config_text = r.str();
  c.encoder = read_encoder(r);
  const std::uint64_t n_meta = r.u64();
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    c.metadata[k] = r.str();
  }
  const std::uint64_t n = r.u64();
  if (n > r.remaining()) throw CorruptCheckpoint("tensor count exceeds file size");
  for (std::uint64_t i = 0; i < n; ++i) {
    Tensor<float> t;
    t.name = r.str();
    t.value = read_matrix(r);
    c.tensors.push_back(std::move(t));
  }
  if (r.u8()) {
    numeric::AdamState<float> a;
    a.beta1 = r.f64();
    a.beta2 = r.f64();
    a.eps = r.f64();
    a.step = r.i64();
    const std::uint64_t m = r.u64();
    if (m > r.remaining()) throw CorruptCheckpoint("moment count exceeds file size");
    for (std::uint64_t i = 0; i < m; ++i) {
      a.first_moment.push_back(read_matrix(r));
      a.second_moment.push_back(read_matrix(r));
    }
    c.adam = std::move(a);
  }
  if (r.remaining() != 0) throw CorruptCheckpoint("trailing bytes after checkpoint payload");
  return c;
}

std::uint64_t checkpoint_hash(const std::string& path) {
  const std::string bytes = read_file(path, true);
  const std::size_t payload = check_envelope(bytes);
  binio::Reader<CorruptCheckpoint> tail(bytes.data() + payload, 8);
  return tail.u64();
}

encoder::ModelWeights<float> weights_from(const Checkpoint& ckpt) {
  auto w = encoder::ModelWeights<float>::zeros(ckpt.encoder);
  for (auto* t : w.parameters()) ckpt.restore(*t);
  return w;
}

std::vector<const Tensor<float>*> const_view(const std::vector<Tensor<float>*>& tensors) {
  return {tensors.begin(), tensors.end()};
}

}  // namespace turl::store
