#include "cli.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "mddc/condense.hpp"
#include "mddc/dam.hpp"
#include "mddc/dataset.hpp"
#include "mddc/error.hpp"
#include "mddc/eval_harness.hpp"
#include "mddc/freq_labeler.hpp"
#include "mddc/kv_config.hpp"
#include "mddc/synthetic_io.hpp"

namespace fs = std::filesystem;

namespace mddc::cli {
namespace {

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::size_t env_threads() {
  const char* v = std::getenv("MDDC_THREADS");
  if (!v || !*v) return 1;
  const auto n = parse_u64("MDDC_THREADS", v);
  return n == 0 ? 1 : static_cast<std::size_t>(n);
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
// written by index so that output order never depends on scheduling.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(m);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
}

// Condensation settings shared by condense, sweep and eval --protocol lodo.
struct CondenseFlags {
  std::string config_file;
  std::string labels_file;
  std::map<std::string, std::optional<std::string>> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key = value configuration file")->check(CLI::ExistingFile);
    app->add_option("--labels", labels_file, "pseudo-domain labels file (default: FFT mean-sort)")
        ->check(CLI::ExistingFile);
    app->add_option("--backend", overrides["backend"], "dm | gm-linear")
        ->check(CLI::IsMember({"dm", "gm-linear"}));
    app->add_option("--dam", overrides["dam"], "on | off")->check(CLI::IsMember({"on", "off"}));
    const std::vector<std::pair<const char*, const char*>> plain = {
        {"--ipc", "ipc"},           {"--D", "D"},
        {"--lambda", "lambda"},     {"--tau", "tau"},
        {"--zinit", "mask_init"},   {"--iterations", "iterations"},
        {"--lr-images", "lr_images"}, {"--lr-masks", "lr_masks"},
        {"--init", "init"},         {"--embedder-resample", "embedder_resample"},
        {"--batch-real", "batch_real"}, {"--width", "width"},
        {"--seed", "seed"},         {"--flip-augment", "flip_augment"},
        {"--separate-domain-embedder", "separate_domain_embedder"},
        {"--check-every", "check_every"},
    };
    // Defaults for the help text, with round-trip digits trimmed.
    auto defaults = to_settings(CondensationConfig{});
    for (auto& [k, v] : defaults) {
      char* end = nullptr;
      const double d = std::strtod(v.c_str(), &end);
      if (end != v.c_str() && *end == '\0') {
        std::ostringstream os;
        os << d;
        v = os.str();
      }
    }
    for (const auto& [flag, key] : plain) {
      const auto d = defaults.find(key);
      app->add_option(flag, overrides[key],
                      d != defaults.end()           ? "default " + d->second
                      : std::string(key) == "seed"  ? "base seed for the init/embedder/batching/masks streams"
                                                    : std::string());
    }
  }

  CondensationConfig resolve() const {
    CondensationConfig cfg;
    if (!config_file.empty()) apply_settings(cfg, read_kv_file(config_file));
    if (auto it = overrides.find("seed"); it != overrides.end() && it->second) {
      apply_setting(cfg, "seed", *it->second);
    }
    for (const auto& [k, v] : overrides) {
      if (v && k != "seed") apply_setting(cfg, k, *v);
    }
    cfg.validate();
    return cfg;
  }
};

std::optional<PseudoDomainAssignment> resolve_labels(const CondensationConfig& cfg,
                                                     const ImageSet& images,
                                                     const std::string& labels_file,
                                                     std::string& source) {
  if (!cfg.dam) {
    source = "none";
    return std::nullopt;
  }
  if (!labels_file.empty()) {
    PseudoDomainAssignment a = read_labels(labels_file);
    if (a.labels.size() != images.size()) {
      throw InvalidArgument("labels file " + labels_file + " covers " +
                            std::to_string(a.labels.size()) + " images, dataset has " +
                            std::to_string(images.size()));
    }
    if (a.num_domains() != cfg.num_domains) {
      throw InvalidArgument("labels file has D=" + std::to_string(a.num_domains()) +
                            ", configuration has D=" + std::to_string(cfg.num_domains));
    }
    source = labels_file;
    return a;
  }
  LabelingConfig lc;
  lc.num_domains = cfg.num_domains;
  source = "auto:fft-meansort";
  return assign_pseudo_domains(images, lc);
}

struct CondenseOutput {
  CondensationResult result;
  fs::path container;
};

CondenseOutput condense_to(const CondensationConfig& cfg, const RealDataset& data,
                           const std::string& labels_file, const fs::path& out_dir,
                           const std::string& dataset_name) {
  std::string label_source;
  const auto labels = resolve_labels(cfg, data.images, labels_file, label_source);
  CondenseOutput o;
  o.result = run_condensation(cfg, data.images, labels ? &*labels : nullptr);
  fs::create_directories(out_dir);
  o.container = out_dir / "syn.mddc";
  const DomainMaskBank* masks = o.result.masks ? &*o.result.masks : nullptr;
  export_synthetic(o.result.syn, o.container, masks,
                   masks ? std::optional<fs::path>(out_dir / "masks.mddm") : std::nullopt);
  write_text(out_dir / "loss.csv", o.result.report.to_csv());
  write_text(out_dir / "run.meta",
             format_run_meta(cfg, {{"dataset", dataset_name},
                                   {"labels", label_source},
                                   {"classes", std::to_string(data.images.num_classes)},
                                   {"written_at", utc_now()}}));
  return o;
}

struct EvalFlags {
  std::size_t runs = 10;
  std::vector<std::uint64_t> seeds;
  EvalConfig config;
  std::optional<std::size_t> threads;

  void attach(CLI::App* app) {
    app->add_option("--runs", runs, "number of evaluation runs")->capture_default_str();
    app->add_option("--seeds", seeds, "explicit evaluation seeds (overrides --runs)")->delimiter(',');
    app->add_option("--epochs", config.epochs)->capture_default_str();
    app->add_option("--eval-lr", config.lr)->capture_default_str();
    app->add_option("--eval-batch", config.batch)->capture_default_str();
    app->add_option("--eval-width", config.width)->capture_default_str();
    app->add_option("--weight-decay", config.weight_decay)->capture_default_str();
    app->add_option("--threads", threads, "parallel jobs (default: MDDC_THREADS or 1)");
  }
  std::vector<std::uint64_t> seed_list() const {
    return seeds.empty() ? default_eval_seeds(runs) : seeds;
  }
  std::size_t thread_count() const { return threads ? *threads : env_threads(); }
};

ResultRow row_template(const std::string& protocol, const std::string& dataset,
                       const std::map<std::string, std::string>& meta, const SyntheticDataset* syn) {
  ResultRow r;
  r.protocol = protocol;
  r.dataset = dataset;
  auto get = [&](const char* k, const std::string& fallback) {
    auto it = meta.find(k);
    return it == meta.end() ? fallback : it->second;
  };
  r.backend = get("backend", "unknown");
  r.dam = parse_bool(get("dam", "off"));
  r.ipc = syn ? syn->ipc : static_cast<std::size_t>(parse_u64("ipc", get("ipc", "0")));
  r.num_domains = r.dam ? static_cast<std::size_t>(parse_u64("D", get("D", "0"))) : 0;
  r.lambda = parse_double("lambda", get("lambda", "0"));
  r.tau = parse_double("tau", get("tau", "0"));
  return r;
}

void emit_results(const fs::path& out_dir, const std::vector<ResultRow>& rows, std::ostream& out) {
  fs::create_directories(out_dir);
  write_text(out_dir / "results.csv", results_csv(rows));
  const std::string summary = summary_csv(rows);
  write_text(out_dir / "summary.csv", summary);
  out << summary;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const ToyCorpusConfig& cfg, const std::string& out_dir, std::ostream& out) {
  const ToyCorpus corpus = gen_toy_multidomain(cfg);
  write_corpus(corpus, cfg, out_dir);
  out << "wrote " << corpus.train.size() << " train and " << corpus.test.size()
      << " test images to " << out_dir << "\n";
  return 0;
}

int cmd_label(const std::string& dataset, const LabelingConfig& lc, const std::string& out_file,
              std::ostream& out) {
  const RealDataset data = load_dataset(dataset, Split::train);
  const PseudoDomainAssignment a = assign_pseudo_domains(data.images, lc);
  write_labels(a, out_file);
  std::vector<std::size_t> counts(lc.num_domains, 0);
  for (int l : a.labels) ++counts[static_cast<std::size_t>(l)];
  out << "labelled " << a.labels.size() << " images with " << method_name(lc.method) << ":";
  for (auto c : counts) out << " " << c;
  out << "\n";
  return 0;
}

int cmd_condense(const CondenseFlags& flags, const std::string& dataset, const std::string& out_dir,
                 std::ostream& out) {
  const CondensationConfig cfg = flags.resolve();
  const RealDataset data = load_dataset(dataset, Split::train);
  const auto o = condense_to(cfg, data, flags.labels_file, out_dir, dataset);
  const auto& rows = o.result.report.rows;
  out << "condensed " << data.size() << " images into " << o.result.syn.size() << " (";
  if (!rows.empty()) out << "l_total " << rows.front().l_total << " -> " << rows.back().l_total;
  out << ") at " << o.container.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& protocol, const std::string& syn_path, const std::string& test_path,
             const std::string& dataset_path, const std::vector<int>& targets,
             const CondenseFlags& cflags, EvalFlags eflags, const std::string& out_dir,
             std::ostream& out) {
  eflags.config.threads = eflags.thread_count();
  const auto seeds = eflags.seed_list();
  std::vector<ResultRow> rows;

  if (protocol == "lodo") {
    if (dataset_path.empty()) throw InvalidArgument("--protocol lodo requires --dataset");
    const CondensationConfig cfg = cflags.resolve();
    const RealDataset train = load_dataset(dataset_path, Split::train);
    const RealDataset test = load_dataset(dataset_path, Split::test);
    if (!train.domain_labels) throw InvalidArgument("lodo needs a dataset with domain directories");
    std::vector<int> todo = targets;
    if (todo.empty()) {
      for (std::size_t d = 0; d < train.num_domains(); ++d) todo.push_back(static_cast<int>(d));
    }
    std::map<std::string, std::string> meta = to_settings(cfg);
    for (int t : todo) {
      const LodoResult r = leave_one_domain_out(train, test, t, cfg, LabelingConfig{}, eflags.config, seeds);
      const std::string name = static_cast<std::size_t>(t) < test.domain_names.size()
                                   ? test.domain_names[static_cast<std::size_t>(t)]
                                   : std::to_string(t);
      ResultRow base = row_template("lodo:" + name, dataset_path, meta, &r.condensation.syn);
      for (std::size_t i = 0; i < seeds.size(); ++i) {
        ResultRow row = base;
        row.seed = seeds[i];
        row.accuracy = r.eval.accuracies[i];
        rows.push_back(row);
      }
    }
    emit_results(out_dir, rows, out);
    return 0;
  }

  if (syn_path.empty() || test_path.empty()) {
    throw InvalidArgument("--protocol " + protocol + " requires --syn and --test");
  }
  const SyntheticDataset syn = read_container(syn_path);
  const RealDataset test = load_dataset(test_path, Split::test);
  if (test.images.num_classes != syn.num_classes || test.images.height != syn.height ||
      test.images.width != syn.width || test.images.channels != syn.channels) {
    throw ShapeError("synthetic set (" + std::to_string(syn.num_classes) + " classes, " +
                     std::to_string(syn.height) + "x" + std::to_string(syn.width) +
                     ") does not match the test set");
  }
  std::map<std::string, std::string> meta;
  const fs::path meta_path = fs::path(syn_path).parent_path() / "run.meta";
  if (fs::exists(meta_path)) meta = read_kv_file(meta_path);

  if (protocol == "plain") {
    const RepeatResult r = repeat_protocol(syn, test, eflags.config, seeds);
    const ResultRow base = row_template("plain", test_path, meta, &syn);
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      ResultRow row = base;
      row.seed = seeds[i];
      row.accuracy = r.accuracies[i];
      rows.push_back(row);
    }
  } else {
    if (!test.domain_labels) throw InvalidArgument("per-domain evaluation needs domain labels");
    const std::size_t domains = test.num_domains();
    std::vector<std::vector<double>> acc(seeds.size(), std::vector<double>(domains + 1));
    parallel_for(seeds.size(), eflags.config.threads, [&](std::size_t i) {
      const TrainedClassifier c = train_on_synthetic(syn, eflags.config, seeds[i]);
      acc[i][0] = evaluate(c.model, test);
      for (std::size_t d = 0; d < domains; ++d) acc[i][d + 1] = evaluate(c.model, test, static_cast<int>(d));
    });
    for (std::size_t d = 0; d <= domains; ++d) {
      const std::string name = d == 0 ? "all" : test.domain_names[d - 1];
      const ResultRow base = row_template("per-domain:" + name, test_path, meta, &syn);
      for (std::size_t i = 0; i < seeds.size(); ++i) {
        ResultRow row = base;
        row.seed = seeds[i];
        row.accuracy = acc[i][d];
        rows.push_back(row);
      }
    }
  }
  emit_results(out_dir, rows, out);
  return 0;
}

int cmd_sweep(const std::string& param, const std::vector<std::string>& values,
              const CondenseFlags& cflags, EvalFlags eflags, const std::string& dataset,
              const std::string& out_dir, std::ostream& out) {
  static const std::map<std::string, std::string> keys = {
      {"D", "D"}, {"lambda", "lambda"}, {"tau", "tau"}, {"zinit", "mask_init"}};
  const CondensationConfig base = cflags.resolve();
  std::vector<CondensationConfig> cells;
  for (const auto& v : values) {
    CondensationConfig c = base;
    apply_setting(c, keys.at(param), v);
    c.validate();
    cells.push_back(c);
  }
  const RealDataset train = load_dataset(dataset, Split::train);
  const RealDataset test = load_dataset(dataset, Split::test);
  const auto seeds = eflags.seed_list();
  EvalConfig ecfg = eflags.config;
  ecfg.threads = 1;
  // Labels files carry a fixed D, so a D sweep always relabels.
  const std::string labels = param == "D" ? std::string() : cflags.labels_file;

  std::vector<std::vector<ResultRow>> cell_rows(cells.size());
  parallel_for(cells.size(), eflags.thread_count(), [&](std::size_t i) {
    const fs::path dir = fs::path(out_dir) / (param + "-" + values[i]);
    const CondenseOutput o = condense_to(cells[i], train, labels, dir, dataset);
    const RepeatResult r = repeat_protocol(o.result.syn, test, ecfg, seeds);
    const ResultRow tmpl =
        row_template("sweep:" + param + "=" + values[i], dataset, to_settings(cells[i]), &o.result.syn);
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      ResultRow row = tmpl;
      row.seed = seeds[k];
      row.accuracy = r.accuracies[k];
      cell_rows[i].push_back(row);
    }
  });
  std::vector<ResultRow> rows;
  for (auto& c : cell_rows) rows.insert(rows.end(), c.begin(), c.end());
  emit_results(out_dir, rows, out);
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-domain dataset condensation"};
  app.name("mddc");
  app.require_subcommand(1);

  ToyCorpusConfig toy;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "write a procedural multi-domain toy corpus");
  gen->add_option("--classes", toy.classes)->capture_default_str();
  gen->add_option("--domains", toy.domains)->capture_default_str();
  gen->add_option("--per-cell", toy.per_cell, "train images per (class, domain)")->capture_default_str();
  gen->add_option("--test-per-cell", toy.test_per_cell, "0 means per-cell / 5")->capture_default_str();
  gen->add_option("--hw", toy.hw)->capture_default_str();
  gen->add_option("--seed", toy.seed)->capture_default_str();
  gen->add_option("--out", gen_out)->required();

  LabelingConfig lc;
  std::string label_dataset, label_out, label_method = "fft-meansort", label_order = "ascending";
  auto* label = app.add_subcommand("label", "assign pseudo-domain labels");
  label->add_option("--dataset", label_dataset)->required();
  label->add_option("--method", label_method)
      ->check(CLI::IsMember({"fft-meansort", "fft-kmeans", "logvar-meansort", "logvar-kmeans", "random"}))
      ->capture_default_str();
  label->add_option("--D", lc.num_domains)->capture_default_str();
  label->add_option("--beta", lc.beta)->capture_default_str();
  label->add_option("--order", label_order)->check(CLI::IsMember({"ascending", "descending"}))
      ->capture_default_str();
  label->add_option("--seed", lc.seed)->capture_default_str();
  label->add_option("--logvar-width", lc.logvar_width)->capture_default_str();
  label->add_option("--out", label_out)->required();

  CondenseFlags cflags;
  std::string condense_dataset, condense_out;
  auto* condense = app.add_subcommand("condense", "condense a dataset into a synthetic set");
  condense->add_option("--dataset", condense_dataset)->required();
  condense->add_option("--out", condense_out)->required();
  cflags.attach(condense);

  CondenseFlags lodo_flags;
  EvalFlags eflags;
  std::string eval_protocol = "plain", eval_syn, eval_test, eval_dataset, eval_out;
  std::vector<int> eval_targets;
  auto* eval = app.add_subcommand("eval", "train classifiers on a synthetic set and report accuracy");
  eval->add_option("--protocol", eval_protocol)->check(CLI::IsMember({"plain", "per-domain", "lodo"}))
      ->capture_default_str();
  eval->add_option("--syn", eval_syn, "synthetic container")->check(CLI::ExistingFile);
  eval->add_option("--test", eval_test, "dataset whose test split is evaluated");
  eval->add_option("--dataset", eval_dataset, "lodo: dataset with train and test splits");
  eval->add_option("--target", eval_targets, "lodo: held-out domain indices (default all)")->delimiter(',');
  eval->add_option("--out", eval_out)->required();
  eflags.attach(eval);
  lodo_flags.attach(eval);

  CondenseFlags sweep_flags;
  EvalFlags sweep_eval;
  std::string sweep_param, sweep_dataset, sweep_out;
  std::vector<std::string> sweep_values;
  auto* sweep = app.add_subcommand("sweep", "condense and evaluate over a parameter grid");
  sweep->add_option("--param", sweep_param)->required()->check(CLI::IsMember({"D", "lambda", "tau", "zinit"}));
  sweep->add_option("--values", sweep_values)->required()->delimiter(',');
  sweep->add_option("--dataset", sweep_dataset)->required();
  sweep->add_option("--out", sweep_out)->required();
  sweep_flags.attach(sweep);
  sweep_eval.attach(sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen) return cmd_gen_data(toy, gen_out, out);
    if (*label) {
      lc.method = parse_method(label_method);
      lc.order = parse_order(label_order);
      return cmd_label(label_dataset, lc, label_out, out);
    }
    if (*condense) return cmd_condense(cflags, condense_dataset, condense_out, out);
    if (*eval) {
      return cmd_eval(eval_protocol, eval_syn, eval_test, eval_dataset, eval_targets, lodo_flags,
                      eflags, eval_out, out);
    }
    if (*sweep) return cmd_sweep(sweep_param, sweep_values, sweep_flags, sweep_eval, sweep_dataset, sweep_out, out);
  } catch (const std::exception& e) {
    err << "mddc: error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace mddc::cli
