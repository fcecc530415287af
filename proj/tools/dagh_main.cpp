#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dagh/commands.hpp"

namespace cli = dagh::cli;

int main(int argc, char** argv) {
  CLI::App app{"Two-stream attention-guided deep hashing: train, encode, retrieve, evaluate."};
  app.set_version_flag("--version", cli::version());
  app.require_subcommand(1);

  std::string config;
  auto* train = app.add_subcommand("train", "Train both stages from an INI experiment config");
  train->add_option("config", config, "Experiment config (.ini)")->required();

  std::string checkpoint, dataset, out_path;
  auto* encode = app.add_subcommand("encode", "Encode a dataset with a trained second network");
  encode->add_option("checkpoint", checkpoint, "Run directory or stage2 checkpoint")->required();
  encode->add_option("dataset", dataset, "Dataset directory (e.g. <run>/data/query)")->required();
  encode->add_option("output", out_path, "Output code file (.dagh)")->required();

  std::string query_codes, gallery_codes, ranking_csv;
  int top = 0;
  auto* retrieve = app.add_subcommand("retrieve", "Rank the gallery by Hamming distance");
  retrieve->add_option("query_codes", query_codes, "Query code file")->required();
  retrieve->add_option("gallery_codes", gallery_codes, "Gallery code file")->required();
  retrieve->add_option("output", ranking_csv, "Ranking CSV")->required();
  retrieve->add_option("--top", top, "Rows kept per query (0 = whole gallery)");

  cli::EvaluateArgs eval_args;
  std::string eval_q, eval_g, eval_ql, eval_gl, eval_config, eval_out;
  auto* evaluate = app.add_subcommand("evaluate", "mAP, P@H<=2, PR curve and P@N");
  evaluate->add_option("query_codes", eval_q, "Query code file")->required();
  evaluate->add_option("gallery_codes", eval_g, "Gallery code file")->required();
  evaluate->add_option("--query-labels", eval_ql, "Query dataset directory");
  evaluate->add_option("--gallery-labels", eval_gl, "Gallery dataset directory");
  evaluate->add_option("--config", eval_config, "Experiment config for [eval] and output dir");
  evaluate->add_option("--out", eval_out, "Output directory (default <output dir>/eval)");

  cli::PlotArgs plot_args;
  std::string plot_dir, plot_ckpt, plot_data;
  auto* plot = app.add_subcommand("plot", "SVG plots from evaluation outputs");
  plot->add_option("report_dir", plot_dir, "Directory holding report.json files")->required();
  plot->add_option("--attention", plot_ckpt, "Run directory or stage1 checkpoint for map PNGs");
  plot->add_option("--dataset", plot_data, "Dataset whose attention maps are exported");
  plot->add_option("--count", plot_args.attention_count, "Number of attention maps");

  std::string sweep_config;
  std::vector<std::string> grid;
  auto* sweep = app.add_subcommand("sweep", "Train, encode and evaluate over a parameter grid");
  sweep->add_option("config", sweep_config, "Base experiment config (.ini)")->required();
  sweep->add_option("--grid", grid,
                    "section.key=v1,v2,... (use ';' between values of list-valued keys)")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kUsage;
  }

  if (*train) return cli::cmd_train(config, std::cout, std::cerr);
  if (*encode) return cli::cmd_encode(checkpoint, dataset, out_path, std::cout, std::cerr);
  if (*retrieve)
    return cli::cmd_retrieve(query_codes, gallery_codes, ranking_csv, top, std::cout, std::cerr);
  if (*evaluate) {
    eval_args.query_codes = eval_q;
    eval_args.gallery_codes = eval_g;
    if (!eval_ql.empty()) eval_args.query_labels = eval_ql;
    if (!eval_gl.empty()) eval_args.gallery_labels = eval_gl;
    if (!eval_config.empty()) eval_args.config = eval_config;
    if (!eval_out.empty()) eval_args.out_dir = eval_out;
    return cli::cmd_evaluate(eval_args, std::cout, std::cerr);
  }
  if (*plot) {
    plot_args.report_dir = plot_dir;
    if (!plot_ckpt.empty()) plot_args.attention_checkpoint = plot_ckpt;
    if (!plot_data.empty()) plot_args.attention_dataset = plot_data;
    return cli::cmd_plot(plot_args, std::cout, std::cerr);
  }
  if (*sweep) return cli::cmd_sweep(sweep_config, grid, std::cout, std::cerr);
  return cli::kUsage;
}
