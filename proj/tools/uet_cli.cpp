#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "uet/ablation.hpp"
#include "uet/config_io.hpp"
#include "uet/gradcheck_suite.hpp"
#include "uet/train.hpp"

namespace fs = std::filesystem;
using namespace uet;

namespace {

nlohmann::json maybe_load(const std::string& path) {
  return path.empty() ? nlohmann::json::object() : load_json_file(path);
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << text;
}

template <typename T>
std::vector<T> axis(const nlohmann::json& j, const char* key, std::vector<T> fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_array() || v.empty())
    throw ConfigError(std::string("grid axis \"") + key + "\" must be a non-empty array");
  try {
    return v.get<std::vector<T>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad grid axis \"") + key + "\": " + e.what());
  }
}

// grid config: every DistillConfig axis as a list; cartesian expansion
AblationSuite suite_from_json(const nlohmann::json& j) {
  for (const auto& [key, _] : j.items()) {
    static const std::set<std::string> known{"n",     "strategy", "source", "residual",
                                             "extraction", "distance", "width",  "depth",
                                             "seeds", "train",    "teacher",  "data"};
    if (!known.count(key)) throw ConfigError("grid: unknown field \"" + key + "\"");
  }
  AblationAxes axes;
  axes.n_values = axis<int>(j, "n", axes.n_values);
  axes.strategies.clear();
  for (const std::string& s : axis<std::string>(j, "strategy", {"b"}))
    axes.strategies.push_back(ratio_strategy_from(s));
  axes.sources.clear();
  for (const std::string& s : axis<std::string>(j, "source", {"teacher"}))
    axes.sources.push_back(knowledge_source_from(s));
  axes.residuals.clear();
  for (const std::string& s : axis<std::string>(j, "residual", {"on"})) {
    if (s != "on" && s != "off") throw ConfigError("grid: residual values must be on/off");
    axes.residuals.push_back(s == "on");
  }
  axes.extractions.clear();
  for (const std::string& s : axis<std::string>(j, "extraction", {"identity"}))
    axes.extractions.push_back(extract_kind_from(s));
  axes.distances.clear();
  for (const std::string& s : axis<std::string>(j, "distance", {"l2"}))
    axes.distances.push_back(distance_kind_from(s));
  axes.student_dims.clear();
  for (int w : axis<int>(j, "width", {16}))
    for (int d : axis<int>(j, "depth", {2})) axes.student_dims.emplace_back(w, d);

  AblationSuite suite;
  suite.cells = expand_axes(axes);
  suite.seeds = axis<uint64_t>(j, "seeds", suite.seeds);
  if (j.contains("train")) suite.student_train = train_config_from_json(j.at("train"));
  if (j.contains("teacher")) suite.teacher_train = train_config_from_json(j.at("teacher"));
  if (j.contains("data")) suite.data = data_config_from_json(j.at("data"));
  return suite;
}

Dataset dataset_for(const nlohmann::json& cfg, uint64_t seed, bool seed_given) {
  DataConfig dc = cfg.contains("data") ? data_config_from_json(cfg.at("data")) : DataConfig{};
  if (seed_given || !cfg.contains("data")) dc.seed = seed;
  return gen_split(dc);
}

TrainConfig train_cfg_for(const nlohmann::json& cfg, uint64_t seed, bool seed_given,
                          bool deterministic) {
  TrainConfig tc = cfg.contains("train") ? train_config_from_json(cfg.at("train"))
                                         : train_config_from_json(cfg);
  if (seed_given) tc.seed = seed;
  if (deterministic) tc.deterministic = true;
  return tc;
}

int run(int argc, char** argv) {
  CLI::App app{"uncertainty-aware feature distillation harness"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", teacher_path;
  uint64_t seed = 0;
  int jobs = 1;
  bool deterministic = false;
  auto add_common = [&](CLI::App* sub, bool* seed_given) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", seed, "RNG seed")->each([seed_given](const std::string&) {
      *seed_given = true;
    });
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--jobs", jobs, "worker threads");
    sub->add_flag("--deterministic", deterministic, "single-threaded bit-reproducible mode");
  };
  bool seed_given = false;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  add_common(gen, &seed_given);
  auto* teach = app.add_subcommand("train-teacher", "train and checkpoint a teacher");
  add_common(teach, &seed_given);
  auto* dist = app.add_subcommand("distill", "distill a student from a teacher");
  add_common(dist, &seed_given);
  dist->add_option("--teacher", teacher_path, "teacher checkpoint (trained fresh if omitted)");
  auto* abl = app.add_subcommand("ablate", "run an ablation grid");
  add_common(abl, &seed_given);
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  add_common(gc, &seed_given);
  auto* rep = app.add_subcommand("report", "merge TrainReports into a convergence CSV");
  add_common(rep, &seed_given);
  std::vector<std::string> report_files;
  rep->add_option("files", report_files, "TrainReport JSON files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the parse diagnostic
    return code == 0 ? 0 : 1;
  }

  if (deterministic) jobs = 1;
  const nlohmann::json cfg = maybe_load(config_path);

  if (*gen) {
    DataConfig dc = cfg.is_object() && !cfg.empty() ? data_config_from_json(cfg) : DataConfig{};
    if (seed_given) dc.seed = seed;
    Dataset ds = gen_split(dc);
    fs::create_directories(out_dir);
    dump_dataset((fs::path(out_dir) / "dataset.txt").string(), ds);
    nlohmann::json meta{{"config", to_json(dc)},
                        {"train_samples", ds.train.size()},
                        {"eval_samples", ds.eval.size()},
                        {"digest", dataset_digest(ds)},
                        {"background_fraction", background_fraction(ds.train)}};
    write_text(fs::path(out_dir) / "dataset.json", meta.dump(2) + "\n");
    std::cout << meta.dump(2) << "\n";
  } else if (*teach) {
    TrainConfig tc = train_cfg_for(cfg, seed, seed_given, deterministic);
    if (tc.distill) throw ConfigError("train-teacher: distill config not allowed");
    Dataset ds = dataset_for(cfg, tc.seed, seed_given);
    TrainResult tr = train_teacher(tc, ds);
    fs::create_directories(out_dir);
    save_detnet((fs::path(out_dir) / "teacher.ckpt").string(), tr.net);
    write_text(fs::path(out_dir) / "teacher_report.json", tr.report.to_json().dump(2) + "\n");
    std::cout << "teacher digest " << tr.net.digest() << ", mean eval accuracy "
              << tr.report.final_eval_acc_mean << "\n";
  } else if (*dist) {
    TrainConfig tc = train_cfg_for(cfg, seed, seed_given, deterministic);
    if (!tc.distill) tc.distill = DistillConfig{};
    Dataset ds = dataset_for(cfg, tc.seed, seed_given);
    DetNet teacher;
    if (!teacher_path.empty()) {
      teacher = load_detnet(teacher_path);
    } else {
      TrainConfig teacher_cfg;
      teacher_cfg.seed = tc.seed;
      teacher_cfg.deterministic = tc.deterministic;
      std::cout << "no --teacher given; training a default teacher first\n";
      teacher = train_teacher(teacher_cfg, ds).net;
    }
    teacher.set_requires_grad(false);
    TrainResult tr = distill_student(tc, teacher, ds);
    fs::create_directories(out_dir);
    save_detnet((fs::path(out_dir) / "student.ckpt").string(), tr.net);
    write_text(fs::path(out_dir) / "report.json", tr.report.to_json().dump(2) + "\n");
    std::cout << tr.report.label << ": mean eval accuracy " << tr.report.final_eval_acc_mean
              << ", teacher digest " << tr.report.teacher_digest_after << "\n";
  } else if (*abl) {
    AblationSuite suite =
        cfg.is_object() && !cfg.empty() ? suite_from_json(cfg) : default_suite();
    if (seed_given) suite.seeds = {seed};
    AblationResults res = run_ablation(suite, out_dir, jobs, deterministic, true);
    int failed = 0;
    for (const AblationRow& r : res.rows) failed += r.status != "ok";
    std::cout << "wrote " << (fs::path(out_dir) / "results.csv").string() << " (" << res.rows.size()
              << " runs, " << failed << " failed)\n";
    if (failed == static_cast<int>(res.rows.size()))
      throw NumericError("ablate: every cell failed");
  } else if (*gc) {
    const auto cases = run_gradcheck_suite(seed_given ? seed : 7);
    bool ok = true;
    for (const GradcheckCase& c : cases) {
      std::cout << (c.pass ? "pass" : "FAIL") << "  " << c.name << "  max rel err " << c.max_err
                << " (tolerance " << c.tolerance << ")\n";
      ok = ok && c.pass;
    }
    std::cout << cases.size() << " checks, " << (ok ? "all passed" : "FAILURES above") << "\n";
    if (!ok) throw NumericError("gradcheck failures");
  } else if (*rep) {
    std::vector<TrainReport> reports;
    for (const std::string& f : report_files)
      reports.push_back(TrainReport::from_json(load_json_file(f)));
    const std::string csv = emit_convergence(reports);
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "convergence.csv", csv);
    std::cout << csv;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
