#include "turl/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "turl/baselines.hpp"
#include "turl/corpus.hpp"
#include "turl/encoding.hpp"
#include "turl/errors.hpp"
#include "turl/pretrain.hpp"
#include "turl/store.hpp"
#include "turl/tasks.hpp"
#include "turl/tokenizer.hpp"

namespace fs = std::filesystem;

namespace turl::cli {

namespace {

using corpus::ProcessedTable;
using corpus::Vocabulary;
using corpus::VocabKind;
using encoder::ModelWeights;
using nlohmann::json;
using tasks::Task;

/// Raised for bad flag combinations discovered after parsing; maps to exit 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string input;
  std::string side;
  std::string task;
  std::string checkpoint;
  std::string split = "test";
  std::string resume;
  std::vector<std::string> dump_visibility;
  std::optional<int> epochs;
  bool rebuild_index = false;
  bool no_oep = false;
};

struct Context {
  Options opt;
  store::Config config;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
  const std::atomic<bool>* stop = nullptr;

  bool stop_requested() const { return stop && stop->load(); }
};

store::Config resolve_config(const Options& opt, const Environment& env) {
  store::Config c = opt.config_path.empty() ? store::Config() : store::Config::load(opt.config_path);
  if (opt.seed) {
    c.seed = *opt.seed;
  } else if (env.seed) {
    try {
      c.set("seed", *env.seed);
    } catch (const ConfigError&) {
      throw UsageError("TURL_SEED is not an unsigned integer: '" + *env.seed + "'");
    }
  }
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string vocab_text(const Vocabulary& v) {
  std::ostringstream os;
  v.write(os);
  return os.str();
}

Vocabulary vocab_from_text(const std::string& text, VocabKind kind) {
  std::istringstream is(text);
  return Vocabulary::read(is, kind);
}

// ---------------------------------------------------------------- data directory

struct DataDir {
  fs::path dir;
  corpus::Partition split;
  corpus::Vocabularies vocab;

  const std::vector<ProcessedTable>& tables(const std::string& name) const {
    if (name == "train") return split.train;
    if (name == "valid") return split.valid;
    if (name == "test") return split.test;
    throw UsageError("unknown split '" + name + "' (expected train, valid or test)");
  }
};

DataDir load_data(const std::string& dir) {
  DataDir d;
  d.dir = dir;
  if (!fs::is_directory(d.dir)) throw IoError("data directory " + dir + " does not exist");
  d.split.train = corpus::read_processed((d.dir / "train.jsonl").string());
  d.split.valid = corpus::read_processed((d.dir / "valid.jsonl").string());
  d.split.test = corpus::read_processed((d.dir / "test.jsonl").string());
  d.vocab.tokens = Vocabulary::load((d.dir / "tokens.vocab").string(), VocabKind::token);
  d.vocab.entities = Vocabulary::load((d.dir / "entities.vocab").string(), VocabKind::entity);
  return d;
}

baselines::BaselineIndex load_index(Context& ctx, const DataDir& data) {
  const fs::path path = data.dir / "index.bin";
  if (!ctx.opt.rebuild_index && fs::exists(path)) {
    try {
      return baselines::BaselineIndex::load(path.string());
    } catch (const Error& e) {
      *ctx.err << "index " << path.string() << " unusable (" << e.what() << "); rebuilding\n";
    }
  }
  auto index = baselines::BaselineIndex::build(data.split.train);
  index.save(path.string());
  return index;
}

fs::path side_path(const Context& ctx, const DataDir& data, const char* file) {
  const fs::path dir = !ctx.opt.side.empty() ? fs::path(ctx.opt.side)
                       : !ctx.config.side_dir.empty() ? fs::path(ctx.config.side_dir)
                                                      : data.dir;
  const fs::path p = dir / file;
  if (!fs::exists(p)) throw MissingSideData("side-data file " + p.string() + " not found");
  return p;
}

// ---------------------------------------------------------------- preprocess

std::string hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int cmd_preprocess(Context& ctx) {
  if (ctx.opt.input.empty() || ctx.opt.out.empty()) throw UsageError("preprocess needs --input and --out");
  const fs::path out(ctx.opt.out);
  fs::create_directories(out);
  BasicTokenizer tokenizer;
  const auto raw = corpus::read_raw_corpus(ctx.opt.input);
  const auto result = corpus::preprocess(raw, tokenizer, ctx.config.seed, ctx.config.filter_thresholds(),
                                         static_cast<std::size_t>(ctx.config.heldout_cap));
  corpus::write_processed((out / "train.jsonl").string(), result.partition.train);
  corpus::write_processed((out / "valid.jsonl").string(), result.partition.valid);
  corpus::write_processed((out / "test.jsonl").string(), result.partition.test);
  result.vocabularies.tokens.save((out / "tokens.vocab").string());
  result.vocabularies.entities.save((out / "entities.vocab").string());
  baselines::BaselineIndex::build(result.partition.train).save((out / "index.bin").string());
  ctx.config.save((out / "config.txt").string());

  const auto& s = result.stats;
  json stats = {{"raw", s.raw},         {"relational", s.relational},
                {"train", s.train},     {"valid", s.valid},
                {"test", s.test},       {"token_vocab", result.vocabularies.tokens.size()},
                {"entity_vocab", result.vocabularies.entities.size()},
                {"config_hash", ctx.config.hash()}};
  write_text(out / "stats.json", stats.dump(2) + "\n");

  for (const auto& id : ctx.opt.dump_visibility) {
    const ProcessedTable* found = nullptr;
    for (const auto* part : {&result.partition.train, &result.partition.valid, &result.partition.test})
      for (const auto& t : *part)
        if (t.table_id == id) found = &t;
    if (!found) throw UnknownId("table " + id + " is not in the processed corpus");
    const auto seq = encoding::linearize(*found, result.vocabularies.tokens, result.vocabularies.entities,
                                         static_cast<std::size_t>(ctx.config.max_len));
    std::ofstream f(out / ("visibility_" + id + ".txt"));
    encoding::build_visibility(seq).dump(f);
  }
  *ctx.out << stats.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------- pretrain

std::vector<const numeric::Tensor<float>*> all_params(ModelWeights<float>& w) {
  return store::const_view(w.parameters());
}

json epoch_json(const pretrain::EpochMetrics& m) {
  json j = {{"epoch", m.epoch}, {"loss", m.loss}, {"mlm_acc", m.mlm_acc}, {"mer_acc", m.mer_acc}};
  if (m.oep_acc) j["oep_acc"] = *m.oep_acc;
  return j;
}

int cmd_pretrain(Context& ctx) {
  if (ctx.opt.data.empty() || ctx.opt.out.empty()) throw UsageError("pretrain needs --data and --out");
  if (ctx.opt.epochs) ctx.config.pretrain_epochs = *ctx.opt.epochs;
  const auto data = load_data(ctx.opt.data);
  const fs::path out(ctx.opt.out);
  fs::create_directories(out);

  const auto ecfg = ctx.config.encoder_config(static_cast<int>(data.vocab.tokens.size()),
                                              static_cast<int>(data.vocab.entities.size()));
  ecfg.validate();
  const auto max_len = static_cast<std::size_t>(ecfg.max_len);
  Rng rng(ctx.config.seed);
  auto w = ModelWeights<float>::init(ecfg, rng, pretrain::entity_name_ids(data.split.train, data.vocab));

  std::optional<store::Checkpoint> resumed;
  if (!ctx.opt.resume.empty()) {
    resumed = store::load_checkpoint(ctx.opt.resume);
    if (!(resumed->encoder == ecfg)) throw ConfigError("checkpoint encoder shape differs from the configuration");
    for (auto* t : w.parameters()) resumed->restore(*t);
  }

  const auto sizes = pretrain::vocab_sizes(data.vocab);
  pretrain::Pretrainer trainer(w, pretrain::make_examples(data.split.train, data.vocab, max_len), sizes,
                               ctx.config.pretrain_config());
  if (trainer.examples().empty()) throw TableTooSmall("no training table fits the encoder");
  if (resumed) {
    if (resumed->adam) trainer.adam() = *resumed->adam;
    if (auto it = resumed->metadata.find("epoch"); it != resumed->metadata.end())
      trainer.set_epoch(std::stoi(it->second));
  }
  const auto valid = pretrain::make_examples(data.split.valid, data.vocab, max_len);

  const fs::path ckpt = out / "model.ckpt";
  auto save = [&] {
    return store::save_checkpoint(ckpt.string(), ctx.config.to_text(), ecfg, all_params(w), &trainer.adam(),
                                  {{"epoch", std::to_string(trainer.epoch())}, {"kind", "pretrain"}});
  };

  std::ofstream metrics(out / "metrics.jsonl", resumed ? std::ios::app : std::ios::trunc);
  const auto t0 = std::chrono::steady_clock::now();
  bool interrupted = false;
  while (trainer.epoch() < ctx.config.pretrain_epochs) {
    auto m = trainer.run_epoch();
    if (!ctx.opt.no_oep && !valid.empty()) {
      pretrain::OepOptions oo;
      oo.use_visibility = ctx.config.use_visibility;
      oo.candidate_cap = static_cast<std::size_t>(ctx.config.candidate_cap);
      oo.seed = ctx.config.seed;
      m.oep_acc = pretrain::validate_object_entity_prediction(valid, w, trainer.cooccurrence(), sizes, oo).accuracy;
    }
    metrics << epoch_json(m).dump() << "\n" << std::flush;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    *ctx.err << "epoch " << m.epoch << "/" << ctx.config.pretrain_epochs << " loss " << m.loss << " mer_acc "
             << m.mer_acc << " (" << secs << "s)\n";
    if (ctx.stop_requested()) {
      interrupted = true;
      break;
    }
  }
  const auto h = save();
  json summary = {{"checkpoint", ckpt.string()}, {"epochs", trainer.epoch()},
                  {"hash", hex(h)},                   {"config_hash", ctx.config.hash()},
                  {"interrupted", interrupted}};
  *ctx.out << summary.dump() << "\n";
  if (interrupted) {
    *ctx.err << "interrupted; checkpoint saved at epoch " << trainer.epoch() << "\n";
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------- task plumbing

struct Heads {
  std::optional<tasks::ElHead> el;
  std::optional<tasks::LabelHead> label;
  std::optional<tasks::RpHead> rp;
  Vocabulary labels{VocabKind::type_label};

  std::vector<numeric::Tensor<float>*> parameters() {
    if (el) return el->parameters();
    if (label) return label->parameters();
    if (rp) return rp->parameters();
    return {};
  }
};

VocabKind label_kind(Task task) {
  switch (task) {
    case Task::re: return VocabKind::relation_label;
    case Task::sa: return VocabKind::header_label;
    default: return VocabKind::type_label;
  }
}

Vocabulary kb_type_vocab(const tasks::KnowledgeBase& kb) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& [id, e] : kb)
    for (const auto& t : e.types) ++counts[t];
  return Vocabulary::from_counts(VocabKind::type_label, counts, 1);
}

struct SideData {
  std::optional<tasks::TypeMap> types;
  std::optional<baselines::RelationMap> relations;
  std::optional<tasks::KnowledgeBase> kb;
  std::optional<tasks::ElCandidateMap> candidates;
};

SideData load_side(const Context& ctx, const DataDir& data, Task task, const Tokenizer& tokenizer) {
  SideData s;
  if (task == Task::cta) s.types = tasks::load_type_map(side_path(ctx, data, "types.jsonl").string());
  if (task == Task::re) s.relations = tasks::load_relation_map(side_path(ctx, data, "relations.jsonl").string());
  if (task == Task::el) {
    s.kb = tasks::load_kb(side_path(ctx, data, "kb.jsonl").string(), tokenizer);
    s.candidates = tasks::load_el_candidates(side_path(ctx, data, "el_candidates.jsonl").string());
  }
  return s;
}

void require_nonempty(std::size_t n, Task task, const std::string& split) {
  if (n == 0)
    throw TableTooSmall("no " + tasks::task_name(task) + " instances could be derived from the " + split +
                        " split (check thresholds and side data)");
}

int cmd_finetune(Context& ctx) {
  if (ctx.opt.data.empty() || ctx.opt.out.empty() || ctx.opt.checkpoint.empty())
    throw UsageError("finetune needs --task, --data, --checkpoint and --out");
  const Task task = tasks::parse_task(ctx.opt.task);
  if (ctx.opt.epochs) (task == Task::sa ? ctx.config.sa_epochs : ctx.config.finetune_epochs) = *ctx.opt.epochs;
  const auto data = load_data(ctx.opt.data);
  const auto ckpt = store::load_checkpoint(ctx.opt.checkpoint);
  auto w = store::weights_from(ckpt);
  const auto fcfg = ctx.config.finetune_config(task);
  const auto th = ctx.config.thresholds();
  BasicTokenizer tokenizer;
  const SideData side = load_side(ctx, data, task, tokenizer);
  const auto& train = data.split.train;
  tasks::TaskContext tctx{&train, &data.vocab, &tokenizer, side.kb ? &*side.kb : nullptr};
  const int d = w.config.d_model;

  Heads heads;
  std::vector<double> losses;
  std::size_t n = 0;
  Rng rng(ctx.config.seed);
  switch (task) {
    case Task::el: {
      heads.labels = kb_type_vocab(*side.kb);
      heads.el = tasks::ElHead::init(d, heads.labels, rng);
      const auto ds = tasks::derive_el(train, *side.candidates);
      require_nonempty(n = ds.size(), task, "train");
      losses = tasks::finetune_el(w, *heads.el, ds, tctx, fcfg);
      break;
    }
    case Task::cta:
    case Task::re: {
      const auto ds = task == Task::cta ? tasks::derive_cta(train, *side.types, th)
                                        : tasks::derive_re(train, *side.relations, th);
      require_nonempty(n = ds.instances.size(), task, "train");
      heads.labels = ds.labels;
      heads.label = tasks::LabelHead::init("head." + tasks::task_name(task), (task == Task::cta ? 2 : 4) * d,
                                           static_cast<int>(ds.labels.size()));
      losses = task == Task::cta ? tasks::finetune_cta(w, *heads.label, ds, tctx, fcfg)
                                 : tasks::finetune_re(w, *heads.label, ds, tctx, fcfg);
      break;
    }
    case Task::rp: {
      const auto index = load_index(ctx, data);
      const auto ds = tasks::derive_rp(train, index, static_cast<std::size_t>(ctx.config.rp_seeds),
                                       tasks::Split::train, th);
      require_nonempty(n = ds.size(), task, "train");
      heads.rp = tasks::RpHead::from_mer(w);
      losses = tasks::finetune_rp(w, *heads.rp, ds, tctx, fcfg);
      break;
    }
    case Task::sa: {
      heads.labels = tasks::build_header_vocab(train, th);
      const auto ds = tasks::derive_sa(train, heads.labels, static_cast<std::size_t>(ctx.config.sa_seeds));
      require_nonempty(n = ds.size(), task, "train");
      heads.label = tasks::LabelHead::init("head.sa", d, static_cast<int>(heads.labels.size()));
      losses = tasks::finetune_sa(w, *heads.label, ds, heads.labels, tctx, fcfg);
      break;
    }
    case Task::cf: throw UsageError("cell filling is evaluate-only");
  }

  const fs::path out(ctx.opt.out);
  fs::create_directories(out);
  auto tensors = all_params(w);
  for (const auto* t : heads.parameters()) tensors.push_back(t);
  const fs::path path = out / (tasks::task_name(task) + ".ckpt");
  const auto h = store::save_checkpoint(path.string(), ctx.config.to_text(), w.config, tensors, nullptr,
                                        {{"kind", "finetune"},
                                         {"task", tasks::task_name(task)},
                                         {"labels", vocab_text(heads.labels)}});
  std::ofstream log(out / ("finetune_" + tasks::task_name(task) + ".jsonl"));
  for (std::size_t e = 0; e < losses.size(); ++e) log << json{{"epoch", e + 1}, {"loss", losses[e]}}.dump() << "\n";
  *ctx.out << json{{"checkpoint", path.string()}, {"task", tasks::task_name(task)}, {"n_instances", n},
                   {"hash", hex(h)}, {"config_hash", ctx.config.hash()}}
                  .dump()
           << "\n";
  return 0;
}

// ---------------------------------------------------------------- evaluate

Heads heads_from(const store::Checkpoint& ckpt, Task task, int d) {
  const auto it = ckpt.metadata.find("task");
  if (it == ckpt.metadata.end() || it->second != tasks::task_name(task))
    throw ConfigError("checkpoint holds no fine-tuned " + tasks::task_name(task) + " head");
  Heads h;
  h.labels = vocab_from_text(ckpt.metadata.at("labels"), label_kind(task));
  switch (task) {
    case Task::el: {
      Rng rng(0);
      h.el = tasks::ElHead::init(d, h.labels, rng);
      break;
    }
    case Task::cta: h.label = tasks::LabelHead::init("head.cta", 2 * d, static_cast<int>(h.labels.size())); break;
    case Task::re: h.label = tasks::LabelHead::init("head.re", 4 * d, static_cast<int>(h.labels.size())); break;
    case Task::sa: h.label = tasks::LabelHead::init("head.sa", d, static_cast<int>(h.labels.size())); break;
    case Task::rp: h.rp = tasks::RpHead::from_mer(encoder::ModelWeights<float>::zeros(ckpt.encoder)); break;
    case Task::cf: break;
  }
  for (auto* t : h.parameters()) ckpt.restore(*t);
  return h;
}

void merge(std::map<std::string, double>& dst, const tasks::EvalReport& r, const std::string& prefix) {
  for (const auto& [k, v] : r.metrics) dst[prefix + k] = v;
}

int cmd_evaluate(Context& ctx) {
  if (ctx.opt.data.empty() || ctx.opt.checkpoint.empty()) throw UsageError("evaluate needs --task, --data and --checkpoint");
  const Task task = tasks::parse_task(ctx.opt.task);
  const auto data = load_data(ctx.opt.data);
  const auto& tables = data.tables(ctx.opt.split);
  const auto ckpt = store::load_checkpoint(ctx.opt.checkpoint);
  auto w = store::weights_from(ckpt);
  const auto fcfg = ctx.config.finetune_config(task);
  const auto th = ctx.config.thresholds();
  BasicTokenizer tokenizer;
  const SideData side = load_side(ctx, data, task, tokenizer);
  tasks::TaskContext tctx{&tables, &data.vocab, &tokenizer, side.kb ? &*side.kb : nullptr};
  const int d = w.config.d_model;

  tasks::EvalReport report;
  report.task = tasks::task_name(task);
  switch (task) {
    case Task::el: {
      auto heads = heads_from(ckpt, task, d);
      const auto ds = tasks::derive_el(tables, *side.candidates);
      tasks::ElOptions eo;
      eo.reweight = ctx.config.el_reweight;
      report = tasks::evaluate_el(w, *heads.el, ds, tctx, fcfg, eo);
      merge(report.metrics, tasks::evaluate_el_lookup(ds), "lookup.");
      break;
    }
    case Task::cta:
    case Task::re: {
      auto heads = heads_from(ckpt, task, d);
      const auto ds = task == Task::cta ? tasks::derive_cta(tables, *side.types, th, &heads.labels)
                                        : tasks::derive_re(tables, *side.relations, th, &heads.labels);
      report = task == Task::cta ? tasks::evaluate_cta(w, *heads.label, ds, tctx, fcfg)
                                 : tasks::evaluate_re(w, *heads.label, ds, tctx, fcfg);
      if (task == Task::re) merge(report.metrics, tasks::evaluate_re_vote(ds, tctx, *side.relations, {0.5}), "vote.");
      break;
    }
    case Task::rp: {
      auto heads = heads_from(ckpt, task, d);
      const auto index = load_index(ctx, data);
      const auto ds = tasks::derive_rp(tables, index, static_cast<std::size_t>(ctx.config.rp_seeds),
                                       tasks::Split::eval, th);
      report = tasks::evaluate_rp(w, *heads.rp, ds, tctx, fcfg);
      // BM25 baseline: candidates in retrieval order.
      std::vector<metrics::RankedPrediction> bm25;
      std::map<std::string, std::int64_t> ids;
      auto id = [&](const std::string& s) { return ids.emplace(s, ids.size()).first->second; };
      for (const auto& inst : ds) {
        metrics::RankedPrediction p;
        for (const auto& g : inst.golds) p.gold.insert(id(g));
        for (const auto& c : inst.candidates) p.ranked.push_back(id(c));
        bm25.push_back(std::move(p));
      }
      report.metrics["bm25.map"] = metrics::mean_average_precision(bm25);
      break;
    }
    case Task::cf: {
      const auto index = load_index(ctx, data);
      const auto ds = tasks::derive_cf(tables, index.header_stats, th);
      report = tasks::evaluate_cf(w, ds, tctx, fcfg);
      merge(report.metrics, tasks::evaluate_cf_baseline(ds, index.header_stats, baselines::FillMode::exact), "exact.");
      merge(report.metrics, tasks::evaluate_cf_baseline(ds, index.header_stats, baselines::FillMode::h2h), "h2h.");
      break;
    }
    case Task::sa: {
      auto heads = heads_from(ckpt, task, d);
      const auto index = load_index(ctx, data);
      const auto ds = tasks::derive_sa(tables, heads.labels, static_cast<std::size_t>(ctx.config.sa_seeds));
      report = tasks::evaluate_sa(w, *heads.label, ds, heads.labels, tctx, fcfg);
      merge(report.metrics, tasks::evaluate_sa_knn(ds, heads.labels, tctx, index), "knn.");
      break;
    }
  }

  json j = {{"task", report.task},
            {"split", ctx.opt.split},
            {"metrics", report.metrics},
            {"n_instances", report.n_instances},
            {"config_hash", ctx.config.hash()}};
  if (!ctx.opt.out.empty()) {
    const fs::path p(ctx.opt.out);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_text(p, j.dump(2) + "\n");
  }
  *ctx.out << j.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------- ablate

int cmd_ablate(Context& ctx) {
  if (ctx.opt.data.empty()) throw UsageError("ablate needs --data");
  if (ctx.opt.epochs) ctx.config.pretrain_epochs = *ctx.opt.epochs;
  const auto data = load_data(ctx.opt.data);
  const auto ecfg = ctx.config.encoder_config(static_cast<int>(data.vocab.tokens.size()),
                                              static_cast<int>(data.vocab.entities.size()));
  ecfg.validate();
  const auto max_len = static_cast<std::size_t>(ecfg.max_len);
  const auto train = pretrain::make_examples(data.split.train, data.vocab, max_len);
  auto eval = pretrain::make_examples(data.split.valid, data.vocab, max_len);
  std::string eval_split = "valid";
  if (eval.empty()) {
    eval = train;
    eval_split = "train";
  }
  const auto sizes = pretrain::vocab_sizes(data.vocab);
  const auto names = pretrain::entity_name_ids(data.split.train, data.vocab);

  json grid = json::array();
  for (bool vis : {true, false}) {
    for (double ratio : {0.2, 0.4, 0.6, 0.8}) {
      Rng rng(ctx.config.seed);
      auto w = ModelWeights<float>::init(ecfg, rng, names);
      auto pc = ctx.config.pretrain_config();
      pc.use_visibility = vis;
      pc.ratios.mer_select = ratio;
      pretrain::Pretrainer trainer(w, train, sizes, pc);
      for (int e = 0; e < pc.epochs; ++e) trainer.run_epoch();
      pretrain::OepOptions oo;
      oo.use_visibility = vis;
      oo.candidate_cap = pc.candidate_cap;
      oo.seed = ctx.config.seed;
      const auto r = pretrain::validate_object_entity_prediction(eval, w, trainer.cooccurrence(), sizes, oo);
      grid.push_back({{"visibility", vis}, {"mer_select", ratio}, {"oep_acc", r.accuracy}, {"n", r.count}});
      *ctx.err << "visibility " << (vis ? "on " : "off") << " mer " << ratio << " oep " << r.accuracy << "\n";
      if (ctx.stop_requested()) throw Error("interrupted during ablation");
    }
  }
  json j = {{"grid", grid},
            {"epochs", ctx.config.pretrain_epochs},
            {"eval_split", eval_split},
            {"config_hash", ctx.config.hash()}};
  if (!ctx.opt.out.empty()) {
    const fs::path p(ctx.opt.out);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_text(p, j.dump(2) + "\n");
  }
  *ctx.out << j.dump() << "\n";
  return 0;
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--seed", o.seed, "Random seed (overrides TURL_SEED and the config file)");
  sub->add_option("--config", o.config_path, "key=value configuration file")->check(CLI::ExistingFile);
  sub->add_option("--out", o.out, "Output directory or file");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const Environment& env) {
  Options o;
  CLI::App app{"Structure-aware table encoder: preprocessing, pre-training, fine-tuning and evaluation", "turl"};
  app.require_subcommand(1);
  const std::vector<std::string> finetune_tasks = {"el", "cta", "re", "rp", "sa"};
  const std::vector<std::string> eval_tasks = {"el", "cta", "re", "rp", "cf", "sa"};

  auto* pre = app.add_subcommand("preprocess", "Parse, filter, partition and index a raw corpus");
  add_common(pre, o);
  pre->add_option("--input", o.input, "Raw corpus JSONL")->required()->check(CLI::ExistingFile);
  pre->add_option("--dump-visibility", o.dump_visibility, "Write the visibility matrix of these table ids");

  auto* pt = app.add_subcommand("pretrain", "MLM + MER pre-training");
  add_common(pt, o);
  pt->add_option("--data", o.data, "Preprocessed data directory")->required();
  pt->add_option("--epochs", o.epochs, "Override pretrain_epochs");
  pt->add_option("--resume", o.resume, "Continue from a pre-training checkpoint")->check(CLI::ExistingFile);
  pt->add_flag("--no-oep", o.no_oep, "Skip per-epoch object entity prediction on the valid split");

  auto* ft = app.add_subcommand("finetune", "Fine-tune a task head");
  add_common(ft, o);
  ft->add_option("--task", o.task, "Task")->required()->check(CLI::IsMember(finetune_tasks));
  ft->add_option("--data", o.data, "Preprocessed data directory")->required();
  ft->add_option("--checkpoint", o.checkpoint, "Pre-trained checkpoint")->required()->check(CLI::ExistingFile);
  ft->add_option("--side", o.side, "Directory with side-data files");
  ft->add_option("--epochs", o.epochs, "Override the fine-tune epochs");
  ft->add_flag("--rebuild-index", o.rebuild_index, "Rebuild the baseline index from the train split");

  auto* ev = app.add_subcommand("evaluate", "Evaluate a task and its baselines");
  add_common(ev, o);
  ev->add_option("--task", o.task, "Task")->required()->check(CLI::IsMember(eval_tasks));
  ev->add_option("--data", o.data, "Preprocessed data directory")->required();
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint (fine-tuned, or pre-trained for cf)")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--split", o.split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  ev->add_option("--side", o.side, "Directory with side-data files");
  ev->add_flag("--rebuild-index", o.rebuild_index, "Rebuild the baseline index from the train split");

  auto* ab = app.add_subcommand("ablate", "Visibility x MER-ratio object entity prediction grid");
  add_common(ab, o);
  ab->add_option("--data", o.data, "Preprocessed data directory")->required();
  ab->add_option("--epochs", o.epochs, "Override pretrain_epochs");

  std::vector<std::string> argv(args.rbegin(), args.rend());  // CLI11 consumes reversed vectors
  try {
    app.parse(argv);
  } catch (const CLI::Success&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "turl: " << e.what() << "\n" << "run 'turl --help' for usage\n";
    return 2;
  }

  Context ctx;
  ctx.opt = o;
  ctx.out = &out;
  ctx.err = &err;
  ctx.stop = env.stop;
  try {
    ctx.config = resolve_config(o, env);
    if (pre->parsed()) return cmd_preprocess(ctx);
    if (pt->parsed()) return cmd_pretrain(ctx);
    if (ft->parsed()) return cmd_finetune(ctx);
    if (ev->parsed()) return cmd_evaluate(ctx);
    if (ab->parsed()) return cmd_ablate(ctx);
  } catch (const UsageError& e) {
    err << "turl: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "turl: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace turl::cli
