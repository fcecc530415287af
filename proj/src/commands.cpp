#include "dagh/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "dagh/checkpoint.hpp"
#include "dagh/errors.hpp"
#include "dagh/plot.hpp"

#ifndef DAGH_VERSION
#define DAGH_VERSION "unknown"
#endif

namespace dagh::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

fs::path meta_path(const fs::path& codes) { return fs::path(codes.string() + ".json"); }

std::optional<json> read_meta(const fs::path& codes) {
  const auto p = meta_path(codes);
  if (!fs::exists(p)) return std::nullopt;
  return read_json(p);
}

std::string absolute_string(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

/// Output dir when no config is given: env override, else the default.
fs::path default_output_dir() {
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return ExperimentConfig{}.output_dir;
}

std::vector<std::pair<double, double>> read_csv_pairs(const fs::path& path,
                                                      const std::string& header) {
  std::ifstream in(path);
  if (!in) throw IoError("missing " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != header)
    throw IoError(path.string() + ": expected header '" + header + "'");
  std::vector<std::pair<double, double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream cells(line);
    double a = 0.0, b = 0.0;
    char comma = 0;
    if (!(cells >> a >> comma >> b) || comma != ',')
      throw IoError(path.string() + ": malformed row '" + line + "'");
    rows.emplace_back(a, b);
  }
  return rows;
}

double stage_total(const std::vector<EpochRecord>& h, bool last) {
  if (h.empty()) return 0.0;
  return last ? h.back().total : h.front().total;
}

}  // namespace

int guarded(std::ostream& err, const std::function<void()>& fn) {
  try {
    fn();
    return kOk;
  } catch (const TrainingDivergence& e) {
    err << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 1;
  }
}

std::string version() { return DAGH_VERSION; }

TrainOutcome train_experiment(const ExperimentConfig& config, std::ostream& log) {
  config.validate();
  TrainOutcome outcome;
  outcome.out_dir = config.output_dir;
  fs::create_directories(outcome.out_dir);
  outcome.data = load_experiment_data(config.dataset);
  const auto& data = outcome.data;
  save_dataset(data.train, outcome.out_dir / "data" / "train");
  save_dataset(data.query, outcome.out_dir / "data" / "query");
  save_dataset(data.gallery, outcome.out_dir / "data" / "gallery");
  write_text(outcome.out_dir / "config.ini", to_ini(config));
  log << "training on " << data.train.size() << " images (" << data.train.num_classes()
      << " classes), K=" << config.train.code_length << ", T1=" << config.train.epochs_stage1
      << ", T2=" << config.train.epochs_stage2 << '\n';

  outcome.state = run_pipeline(data.train, config.train, outcome.out_dir);
  const auto& state = outcome.state;
  outcome.agreement = bit_agreement(data.train, state.stage2, state.targets);

  std::size_t clipped = 0;
  for (const auto& r : state.history_stage1) clipped += r.clipped;
  json manifest{
      {"format", "dagh-run"},
      {"version", 1},
      {"code_version", version()},
      {"seed", config.train.seed},
      {"dataset_seed", config.dataset.seed},
      {"config", to_json(config)},
      {"stage1",
       {{"epochs", state.epochs_stage1},
        {"beta", state.beta},
        {"loss_first", stage_total(state.history_stage1, false)},
        {"loss_last", stage_total(state.history_stage1, true)},
        {"clipped_steps", clipped}}},
      {"stage2",
       {{"epochs", state.epochs_stage2},
        {"loss_first", stage_total(state.history_stage2, false)},
        {"loss_last", stage_total(state.history_stage2, true)},
        {"bit_agreement", outcome.agreement}}}};
  write_text(outcome.out_dir / "run.json", manifest.dump(2) + "\n");
  log << "stage 1 loss " << stage_total(state.history_stage1, false) << " -> "
      << stage_total(state.history_stage1, true) << " (" << clipped << " clipped steps)\n"
      << "stage 2 guide loss " << stage_total(state.history_stage2, false) << " -> "
      << stage_total(state.history_stage2, true) << ", bit agreement " << outcome.agreement
      << '\n';
  return outcome;
}

Stage2Checkpoint load_encoder(const fs::path& checkpoint) {
  if (fs::exists(checkpoint / "stage2" / "manifest.json"))
    return load_stage2_checkpoint(checkpoint / "stage2");
  return load_stage2_checkpoint(checkpoint);
}

Encoded encode_dataset(const HashNet<Real>& hash, const Dataset& dataset) {
  if (!(dataset.image_shape().height == hash.config().input.height &&
        dataset.image_shape().width == hash.config().input.width &&
        dataset.image_shape().channels == hash.config().input.channels))
    throw InvalidInput("dataset images do not match the network input shape");
  Encoded out;
  out.codes.resize(static_cast<Eigen::Index>(dataset.size()), hash.code_length());
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < dataset.size(); ++i)
    out.codes.row(static_cast<Eigen::Index>(i)) =
        encode_final(to_feature_map<Real>(dataset[i].pixels, dataset.image_shape()), hash)
            .transpose();
  const std::chrono::duration<double, std::micro> elapsed =
      std::chrono::steady_clock::now() - start;
  if (dataset.size() > 0) out.us_per_image = elapsed.count() / static_cast<double>(dataset.size());
  return out;
}

void write_encoded(const fs::path& path, const Encoded& encoded, const json& meta) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_codes(path, pack(encoded.codes));
  json j = meta;
  j["format"] = "dagh-codes-meta";
  j["n"] = encoded.codes.rows();
  j["k"] = encoded.codes.cols();
  j["encode_us_per_image"] = encoded.us_per_image;
  write_text(meta_path(path), j.dump(2) + "\n");
}

void write_eval_outputs(const fs::path& dir, const EvalReport& report,
                        const json& config_snapshot) {
  fs::create_directories(dir);
  json j = to_json(report);
  j["config"] = config_snapshot;
  write_text(dir / "report.json", j.dump(2) + "\n");

  std::ostringstream pr;
  pr << std::setprecision(17) << "recall,precision\n";
  for (const auto& p : report.pr) pr << p.recall << ',' << p.precision << '\n';
  write_text(dir / "pr_curve.csv", pr.str());

  std::ostringstream pn;
  pn << std::setprecision(17) << "n,precision\n";
  for (const auto& [n, p] : report.p_at_n) pn << n << ',' << p << '\n';
  write_text(dir / "p_at_n.csv", pn.str());
}

int cmd_train(const fs::path& config_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto config = load_config(config_path);
    const auto outcome = train_experiment(config, out);
    out << "wrote " << (outcome.out_dir / "run.json").string() << '\n';
  });
}

int cmd_encode(const fs::path& checkpoint, const fs::path& dataset, const fs::path& out_path,
               std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto ckpt = load_encoder(checkpoint);
    const auto data = load_dataset(dataset);
    const auto encoded = encode_dataset(ckpt.hash, data);
    write_encoded(out_path, encoded,
                  {{"checkpoint", absolute_string(checkpoint)},
                   {"dataset", absolute_string(dataset)},
                   {"split", to_string(data.split())},
                   {"train_config", to_json(ckpt.config)}});
    out << "encoded " << data.size() << " images (K=" << ckpt.hash.code_length() << ") to "
        << out_path.string() << '\n'
        << "mean encode time " << std::fixed << std::setprecision(3) << encoded.us_per_image
        << " us/image\n";
  });
}

int cmd_retrieve(const fs::path& query_codes, const fs::path& gallery_codes,
                 const fs::path& out_csv, int top, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (top < 0) throw ConfigError("--top must be >= 0");
    const auto queries = read_codes(query_codes);
    const auto gallery = read_codes(gallery_codes);
    if (queries.code_length() != gallery.code_length())
      throw InvalidInput("code length mismatch: query codes have K=" +
                         std::to_string(queries.code_length()) + ", gallery codes have K=" +
                         std::to_string(gallery.code_length()));
    const CodeMatrix q = unpack(queries);
    if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
    std::ofstream csv(out_csv);
    if (!csv) throw IoError("cannot write " + out_csv.string());
    csv << "query_id,rank,gallery_id,distance\n";
    const std::size_t keep = top == 0 ? gallery.size()
                                      : std::min(gallery.size(), static_cast<std::size_t>(top));
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      const auto ranking = rank_gallery(q.row(i).transpose(), gallery, i);
      for (std::size_t r = 0; r < keep; ++r)
        csv << i << ',' << r + 1 << ',' << ranking.ids[r] << ',' << ranking.distances[r] << '\n';
    }
    if (!csv) throw IoError("failed writing " + out_csv.string());
    write_text(meta_path(out_csv), json{{"format", "dagh-ranking-meta"},
                                        {"query_codes", absolute_string(query_codes)},
                                        {"gallery_codes", absolute_string(gallery_codes)},
                                        {"top", keep}}
                                           .dump(2) +
                                       "\n");
    out << "ranked " << q.rows() << " queries against " << gallery.size() << " items to "
        << out_csv.string() << '\n';
  });
}

int cmd_evaluate(const EvaluateArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto queries = read_codes(args.query_codes);
    const auto gallery = read_codes(args.gallery_codes);
    if (queries.code_length() != gallery.code_length())
      throw InvalidInput("code length mismatch: query codes have K=" +
                         std::to_string(queries.code_length()) + ", gallery codes have K=" +
                         std::to_string(gallery.code_length()));
    const auto query_meta = read_meta(args.query_codes);
    const auto gallery_meta = read_meta(args.gallery_codes);

    const auto labels_from = [](const std::optional<fs::path>& given,
                                const std::optional<json>& meta, const char* which) {
      if (given) return load_labels(*given);
      if (meta && meta->contains("dataset"))
        return load_labels(meta->at("dataset").get<std::string>());
      throw ConfigError(std::string("no ") + which +
                        " labels: pass them explicitly or encode with this tool");
    };
    const auto qlabels = labels_from(args.query_labels, query_meta, "query");
    const auto glabels = labels_from(args.gallery_labels, gallery_meta, "gallery");
    if (qlabels.size() != queries.size() || glabels.size() != gallery.size())
      throw InvalidInput("label counts (" + std::to_string(qlabels.size()) + ", " +
                         std::to_string(glabels.size()) + ") do not match code counts (" +
                         std::to_string(queries.size()) + ", " + std::to_string(gallery.size()) +
                         ")");

    ExperimentConfig config;
    if (args.config) config = load_config(*args.config);
    else config.output_dir = default_output_dir();
    const fs::path dir = args.out_dir ? *args.out_dir : config.output_dir / "eval";

    auto report = evaluate(unpack(queries), gallery, label_relevance(qlabels, glabels),
                           config.eval.cutoff, config.eval.ns);
    if (query_meta && query_meta->contains("encode_us_per_image"))
      report.encode_us_per_image = query_meta->at("encode_us_per_image").get<double>();

    json snapshot{{"eval", {{"cutoff", config.eval.cutoff}, {"ns", config.eval.ns}}},
                  {"query_codes", absolute_string(args.query_codes)},
                  {"gallery_codes", absolute_string(args.gallery_codes)}};
    if (args.config) snapshot["experiment"] = to_json(config);
    if (query_meta && query_meta->contains("train_config"))
      snapshot["train_config"] = query_meta->at("train_config");
    write_eval_outputs(dir, report, snapshot);
    out << "K=" << report.code_length << " mAP@" << report.map_cutoff << " " << report.map
        << " P@H<=2 " << report.p_at_h2 << " mean|bit corr| " << report.bit_correlation_mean_abs
        << '\n'
        << "wrote " << (dir / "report.json").string() << '\n';
  });
}

namespace {

struct ReportSeries {
  std::string label;
  EvalReport report;
  std::vector<std::pair<double, double>> pr;
  std::vector<std::pair<double, double>> p_at_n;
};

std::vector<ReportSeries> collect_reports(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("report directory not found: " + root.string());
  std::vector<fs::path> dirs;
  if (fs::exists(root / "report.json")) dirs.push_back(root);
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file() && entry.path().filename() == "report.json" &&
        entry.path().parent_path() != root)
      dirs.push_back(entry.path().parent_path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw IoError("no report.json under " + root.string());

  std::vector<ReportSeries> out;
  for (const auto& dir : dirs) {
    ReportSeries s;
    const auto rel = fs::relative(dir, root).generic_string();
    s.label = rel == "." ? root.filename().string() : rel;
    s.report = report_from_json(read_json(dir / "report.json"));
    s.pr = read_csv_pairs(dir / "pr_curve.csv", "recall,precision");
    s.p_at_n = read_csv_pairs(dir / "p_at_n.csv", "n,precision");
    out.push_back(std::move(s));
  }
  return out;
}

void export_attention(const PlotArgs& args, std::ostream& out) {
  if (!args.attention_dataset) throw ConfigError("--attention needs --dataset");
  if (args.attention_count < 1) throw ConfigError("--count must be >= 1");
  const fs::path ckpt_dir = fs::exists(*args.attention_checkpoint / "stage1" / "manifest.json")
                                ? *args.attention_checkpoint / "stage1"
                                : *args.attention_checkpoint;
  const auto ckpt = load_stage1_checkpoint(ckpt_dir);
  const auto data = load_dataset(*args.attention_dataset);
  const fs::path dir = args.report_dir / "attention";
  fs::create_directories(dir);
  const auto n = std::min(data.size(), static_cast<std::size_t>(args.attention_count));
  for (std::size_t i = 0; i < n; ++i) {
    const auto image = to_feature_map<Real>(data[i].pixels, data.image_shape());
    const AttentionMap<Real> map = normalize_map(as_map(ckpt.model.attention.forward(image)));
    std::ostringstream name;
    name << "attention_" << std::setw(4) << std::setfill('0') << i << ".png";
    write_gray_png(dir / name.str(), map);
  }
  out << "wrote " << n << " attention maps to " << dir.string() << '\n';
}

}  // namespace

int cmd_plot(const PlotArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto reports = collect_reports(args.report_dir);
    std::vector<Series> pr, pn;
    std::map<int, std::pair<double, int>> by_bits;
    for (const auto& r : reports) {
      pr.push_back({r.label, r.pr, false});
      pn.push_back({r.label, r.p_at_n, false});
      auto& [sum, count] = by_bits[r.report.code_length];
      sum += r.report.p_at_h2;
      ++count;
    }
    Series bits{"P@H<=2", {}, false};
    for (const auto& [k, acc] : by_bits)
      bits.points.emplace_back(static_cast<double>(k), acc.first / acc.second);

    const auto& dir = args.report_dir;
    write_text(dir / "pr_curve.svg",
               line_chart_svg({"Precision-recall (Hamming ranking)", "recall", "precision"}, pr));
    write_text(dir / "p_at_n.svg",
               line_chart_svg({"Precision at top N", "N", "precision"}, pn));
    write_text(dir / "p_at_h2_bits.svg",
               line_chart_svg({"Precision within Hamming radius 2", "bits", "precision"}, {bits}));
    out << "wrote pr_curve.svg, p_at_n.svg, p_at_h2_bits.svg to " << dir.string() << '\n';
    if (args.attention_checkpoint) export_attention(args, out);
  });
}

int cmd_sweep(const fs::path& config_path, const std::vector<std::string>& grid,
              std::ostream& out, std::ostream& err) {
  int status = kOk;
  const int rc = guarded(err, [&] {
    const auto base = load_config(config_path);
    if (grid.empty()) throw ConfigError("sweep needs at least one --grid key=v1,v2,...");

    std::vector<std::pair<std::string, std::vector<std::string>>> axes;
    for (const auto& entry : grid) {
      const auto eq = entry.find('=');
      if (eq == std::string::npos || eq == 0 || eq + 1 == entry.size())
        throw ConfigError("grid entry must look like section.key=v1,v2: " + entry);
      // list-valued keys separate points with ';'
      const char sep = entry.find(';') != std::string::npos ? ';' : ',';
      std::vector<std::string> values;
      std::stringstream in(entry.substr(eq + 1));
      std::string v;
      while (std::getline(in, v, sep))
        if (!v.empty()) values.push_back(v);
      if (values.empty()) throw ConfigError("grid entry has no values: " + entry);
      axes.emplace_back(entry.substr(0, eq), std::move(values));
    }

    std::size_t points = 1;
    for (const auto& a : axes) points *= a.second.size();

    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header{"point"};
    for (const auto& a : axes) header.push_back(a.first);
    const int first_n = base.eval.ns.front();
    for (const char* h : {"status", "map", "p_at_h2"}) header.emplace_back(h);
    header.push_back("p_at_" + std::to_string(first_n));
    for (const char* h : {"bit_corr", "agreement", "stage1_loss_first", "stage1_loss_last", "dir"})
      header.emplace_back(h);

    bool any_diverged = false;
    for (std::size_t p = 0; p < points; ++p) {
      ExperimentConfig cfg = base;
      std::vector<std::string> row{std::to_string(p)};
      std::size_t rest = p;
      for (auto a = axes.rbegin(); a != axes.rend(); ++a) {
        const auto& v = a->second[rest % a->second.size()];
        rest /= a->second.size();
        apply_override(cfg, a->first, v);
      }
      for (const auto& a : axes) row.push_back(config_value(cfg, a.first));
      std::ostringstream name;
      name << "point_" << std::setw(2) << std::setfill('0') << p;
      cfg.output_dir = base.output_dir / name.str();
      cfg.validate();
      out << "sweep point " << p + 1 << "/" << points << " -> " << cfg.output_dir.string() << '\n';
      try {
        const auto outcome = train_experiment(cfg, out);
        const auto& hash = outcome.state.stage2;
        const auto q = encode_dataset(hash, outcome.data.query);
        const auto g = encode_dataset(hash, outcome.data.gallery);
        const json meta{{"checkpoint", absolute_string(cfg.output_dir)},
                        {"train_config", to_json(cfg.train)}};
        auto qmeta = meta, gmeta = meta;
        qmeta["dataset"] = absolute_string(cfg.output_dir / "data" / "query");
        gmeta["dataset"] = absolute_string(cfg.output_dir / "data" / "gallery");
        write_encoded(cfg.output_dir / "codes" / "query.dagh", q, qmeta);
        write_encoded(cfg.output_dir / "codes" / "gallery.dagh", g, gmeta);
        const PackedCodes gallery = pack(g.codes);
        auto report = evaluate(q.codes, gallery,
                               label_relevance(outcome.data.query.labels(),
                                               outcome.data.gallery.labels()),
                               cfg.eval.cutoff, cfg.eval.ns);
        report.encode_us_per_image = q.us_per_image;
        write_eval_outputs(cfg.output_dir / "eval", report, to_json(cfg));
        const auto p_first = report.p_at_n.empty() ? 0.0 : report.p_at_n.front().second;
        row.push_back("ok");
        for (double v : {report.map, report.p_at_h2, p_first, report.bit_correlation_mean_abs,
                         outcome.agreement,
                         stage_total(outcome.state.history_stage1, false),
                         stage_total(outcome.state.history_stage1, true)})
          row.push_back(std::to_string(v));
      } catch (const TrainingDivergence& e) {
        any_diverged = true;
        out << "  " << e.what() << '\n';
        row.push_back("diverged");
        for (int i = 0; i < 7; ++i) row.emplace_back("");
      }
      row.push_back(name.str());
      rows.push_back(std::move(row));
    }

    std::ostringstream csv;
    for (std::size_t c = 0; c < header.size(); ++c) csv << (c ? "," : "") << header[c];
    csv << '\n';
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) csv << (c ? "," : "") << row[c];
      csv << '\n';
    }
    fs::create_directories(base.output_dir);
    write_text(base.output_dir / "sweep.csv", csv.str());

    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
      width[c] = header[c].size();
      for (const auto& row : rows) width[c] = std::max(width[c], row[c].size());
    }
    const auto print_row = [&](const std::vector<std::string>& row) {
      for (std::size_t c = 0; c < row.size(); ++c)
        out << (c ? "  " : "") << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      out << '\n';
    };
    print_row(header);
    for (const auto& row : rows) print_row(row);
    out << "wrote " << (base.output_dir / "sweep.csv").string() << '\n';
    if (any_diverged) {
      err << "error: at least one sweep point diverged\n";
      status = kDiverged;
    }
  });
  return rc != kOk ? rc : status;
}

}  // namespace dagh::cli
