// Command line front end: train baselines, search pruning ratios, prune,
// joint prune+quantize, evaluate, compare curves, report and plot.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "eval/bdrate.hpp"
#include "eval/plot.hpp"
#include "json.hpp"
#include "pipeline/dataset.hpp"
#include "pipeline/pipeline.hpp"
#include "util/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace licprune;

namespace {

// Config flags shared by the pipeline subcommands. Effective precedence is
// command line > config file > preset defaults: flags that were actually
// passed are merged over the file's json before the config is built.
struct ConfigCli {
  std::string file;
  std::string preset, train_dir, calib_dir, eval_dir, output_dir;
  std::string mode, criterion, lr_schedule;
  std::vector<double> lambdas;
  double lr = 0, s_target = 0, alpha_init = 0, delta = 0;
  std::uint64_t seed = 0;
  int64_t n = 0, m = 0;
  int64_t baseline_epochs = 0, steps_per_epoch = 0, ft_epochs = 0;
  int64_t pq_pre = 0, pq_post = 0, batch = 0, crop = 0;
  int64_t weight_bits = 0, act_bits = 0, group_size = 0, finetune_steps = 0;
  bool filters_only = false, no_quant = false;
  std::map<std::string, CLI::Option*> opt;

  void attach(CLI::App* c) {
    opt["config"] = c->add_option("-c,--config", file, "json config file");
    opt["preset"] = c->add_option("--preset", preset, "desk or paper_like");
    opt["train_dir"] = c->add_option("--train-dir", train_dir, "training images");
    opt["calib_dir"] = c->add_option("--calib-dir", calib_dir, "calibration images");
    opt["eval_dir"] = c->add_option("--eval-dir", eval_dir, "evaluation images");
    opt["output"] = c->add_option("-o,--output", output_dir, "run directory");
    opt["lambdas"] = c->add_option("--lambdas", lambdas, "rate-distortion weights");
    opt["seed"] = c->add_option("--seed", seed, "master seed");
    opt["n"] = c->add_option("--n-channels", n, "codec width N");
    opt["m"] = c->add_option("--m-channels", m, "latent width M");
    opt["baseline_epochs"] =
        c->add_option("--baseline-epochs", baseline_epochs, "baseline epochs");
    opt["steps_per_epoch"] =
        c->add_option("--steps-per-epoch", steps_per_epoch, "steps per epoch");
    opt["ft_epochs"] =
        c->add_option("--finetune-epochs", ft_epochs, "post-prune finetune epochs");
    opt["pq_pre"] = c->add_option("--pq-pre-epochs", pq_pre,
                                  "finetune epochs before quantization");
    opt["pq_post"] =
        c->add_option("--pq-post-epochs", pq_post, "finetune epochs after quantization");
    opt["batch"] = c->add_option("--batch-size", batch, "training batch size");
    opt["crop"] = c->add_option("--crop-size", crop, "training crop size");
    opt["lr"] = c->add_option("--lr", lr, "initial learning rate");
    opt["lr_schedule"] =
        c->add_option("--lr-schedule", lr_schedule, "cosine or constant");
    opt["s_target"] = c->add_option("--s-target", s_target, "target sparsity (0,1)");
    opt["alpha_init"] = c->add_option("--alpha-init", alpha_init, "initial threshold");
    opt["delta"] = c->add_option("--delta", delta, "sparsity convergence band");
    opt["group_size"] = c->add_option("--group-size", group_size, "channel group step");
    opt["finetune_steps"] = c->add_option("--search-finetune-steps", finetune_steps,
                                          "finetune steps per measurement");
    opt["criterion"] = c->add_option("--criterion", criterion, "l2, hrank or chip");
    opt["mode"] = c->add_option("--mode", mode, "nas or fixed");
    opt["filters_only"] =
        c->add_flag("--filters-only", filters_only, "prune output maps only");
    opt["no_quant"] = c->add_flag("--no-quant", no_quant, "disable quantization");
    opt["weight_bits"] = c->add_option("--weight-bits", weight_bits, "weight bit width");
    opt["act_bits"] = c->add_option("--act-bits", act_bits, "activation bit width");
  }

  bool given(const char* k) const { return opt.at(k)->count() > 0; }

  ExperimentConfig resolve() const {
    json j = json::object();
    if (given("config")) {
      std::ifstream in(file);
      if (!in) throw IoError("cannot open config: " + file);
      in >> j;
    }
    if (given("preset")) j["preset"] = preset;
    if (given("train_dir")) j["data"]["train_dir"] = train_dir;
    if (given("calib_dir")) j["data"]["calib_dir"] = calib_dir;
    if (given("eval_dir")) j["data"]["eval_dir"] = eval_dir;
    if (given("output")) j["output_dir"] = output_dir;
    if (given("lambdas")) j["lambdas"] = lambdas;
    if (given("seed")) j["schedule"]["seed"] = seed;
    if (given("n")) j["codec"]["n_channels"] = n;
    if (given("m")) j["codec"]["m_channels"] = m;
    if (given("baseline_epochs")) j["schedule"]["baseline_epochs"] = baseline_epochs;
    if (given("steps_per_epoch")) j["schedule"]["steps_per_epoch"] = steps_per_epoch;
    if (given("ft_epochs")) j["schedule"]["prune_finetune_epochs"] = ft_epochs;
    if (given("pq_pre")) j["schedule"]["pq_pre_epochs"] = pq_pre;
    if (given("pq_post")) j["schedule"]["pq_post_epochs"] = pq_post;
    if (given("batch")) j["schedule"]["batch_size"] = batch;
    if (given("crop")) j["schedule"]["crop_size"] = crop;
    if (given("lr")) j["schedule"]["lr"] = lr;
    if (given("lr_schedule")) j["schedule"]["lr_schedule"] = lr_schedule;
    if (given("s_target")) j["search"]["s_target"] = s_target;
    if (given("alpha_init")) j["search"]["alpha_init"] = alpha_init;
    if (given("delta")) j["search"]["delta"] = delta;
    if (given("group_size")) j["search"]["group_size"] = group_size;
    if (given("finetune_steps")) j["search"]["finetune_steps"] = finetune_steps;
    if (given("criterion")) j["search"]["criterion"] = criterion;
    if (given("mode")) j["prune"]["mode"] = mode;
    if (given("filters_only")) j["prune"]["filters_only"] = filters_only;
    if (given("no_quant")) j["quant"]["enabled"] = !no_quant;
    if (given("weight_bits")) j["quant"]["weight_bits"] = weight_bits;
    if (given("act_bits")) j["quant"]["act_bits"] = act_bits;

    auto cfg = ExperimentConfig::from_json(j);
    if (const char* root = std::getenv("LICPRUNE_OUTPUT_ROOT")) {
      fs::path od = cfg.output_dir;
      if (od.is_relative()) cfg.output_dir = (fs::path(root) / od).string();
    }
    return cfg;
  }
};

json outcome_json(double lambda, const CompressOutcome& o) {
  json stages = json::array();
  for (const auto& s : o.stage_losses) {
    stages.push_back(
        {{"stage", s.stage}, {"loss", s.loss}, {"bpp", s.bpp}, {"psnr", s.psnr}});
  }
  return {{"lambda", lambda},
          {"checkpoint", o.checkpoint.string()},
          {"achieved_s", o.achieved_s},
          {"converged", o.search_converged},
          {"bytes", o.size.bytes},
          {"compression_ratio", o.size.compression_ratio},
          {"stage_losses", stages}};
}

json curve_json(const RdCurve& c) {
  json pts = json::array();
  for (const auto& p : c.points) {
    pts.push_back({{"lambda", p.lambda}, {"bpp", p.bpp}, {"psnr", p.psnr}});
  }
  return {{"label", c.label}, {"points", pts}};
}

const RdCurve& pick_curve(const std::vector<RdCurve>& curves, const std::string& label,
                          const std::string& file) {
  if (label.empty()) return curves.front();
  for (const auto& c : curves) {
    if (c.label == label) return c;
  }
  throw std::invalid_argument("no curve labeled '" + label + "' in " + file);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compression toolkit for learned image codecs: structured "
               "pruning with ratio search, quantization and evaluation"};
  app.require_subcommand(1);
  std::function<int()> action;

  ConfigCli train_cfg;
  auto* cmd_train = app.add_subcommand("train", "train one baseline per lambda");
  train_cfg.attach(cmd_train);
  cmd_train->callback([&] {
    action = [&] {
      Pipeline pipe(train_cfg.resolve());
      json out = json::array();
      for (const auto& p : pipe.train_baselines()) out.push_back(p.string());
      std::cout << json{{"checkpoints", out}}.dump(2) << "\n";
      return 0;
    };
  });

  ConfigCli search_cfg;
  auto* cmd_search =
      app.add_subcommand("search", "run the ratio search, write plan and trace");
  search_cfg.attach(cmd_search);
  cmd_search->callback([&] {
    action = [&] {
      Pipeline pipe(search_cfg.resolve());
      json out = json::array();
      for (double lam : pipe.config().lambdas) {
        auto res = pipe.search_only(lam);
        out.push_back({{"lambda", lam},
                       {"achieved_s", res.achieved_s},
                       {"converged", res.trace.converged}});
      }
      std::cout << out.dump(2) << "\n";
      return 0;
    };
  });

  ConfigCli prune_cfg;
  std::string prune_variant = "pruned";
  auto* cmd_prune =
      app.add_subcommand("prune", "prune, finetune and compact each baseline");
  prune_cfg.attach(cmd_prune);
  cmd_prune->add_option("--variant", prune_variant, "artifact name for this run");
  cmd_prune->callback([&] {
    action = [&] {
      Pipeline pipe(prune_cfg.resolve());
      json out = json::array();
      for (double lam : pipe.config().lambdas) {
        out.push_back(outcome_json(lam, pipe.run_prune_pipeline(lam, prune_variant)));
      }
      std::cout << out.dump(2) << "\n";
      return 0;
    };
  });

  ConfigCli pq_cfg;
  std::string pq_variant = "joint_pq";
  auto* cmd_pq = app.add_subcommand(
      "joint-pq", "prune, finetune, quantize and finetune again per baseline");
  pq_cfg.attach(cmd_pq);
  cmd_pq->add_option("--variant", pq_variant, "artifact name for this run");
  cmd_pq->callback([&] {
    action = [&] {
      Pipeline pipe(pq_cfg.resolve());
      json out = json::array();
      for (double lam : pipe.config().lambdas) {
        out.push_back(outcome_json(lam, pipe.run_joint_pq(lam, pq_variant)));
      }
      std::cout << out.dump(2) << "\n";
      return 0;
    };
  });

  ConfigCli eval_cfg;
  std::string eval_variant = "baseline";
  auto* cmd_eval =
      app.add_subcommand("eval", "rate-distortion curve of a variant's checkpoints");
  eval_cfg.attach(cmd_eval);
  cmd_eval->add_option("--variant", eval_variant, "baseline or a pruned variant name");
  cmd_eval->callback([&] {
    action = [&] {
      Pipeline pipe(eval_cfg.resolve());
      std::cout << curve_json(pipe.evaluate_variant(eval_variant)).dump(2) << "\n";
      return 0;
    };
  });

  std::string bd_ref, bd_test, bd_ref_label, bd_test_label;
  auto* cmd_bd = app.add_subcommand("bdrate", "average rate difference of two curves");
  cmd_bd->add_option("--reference", bd_ref, "reference curve csv")->required();
  cmd_bd->add_option("--test", bd_test, "test curve csv")->required();
  cmd_bd->add_option("--reference-label", bd_ref_label, "curve label in the file");
  cmd_bd->add_option("--test-label", bd_test_label, "curve label in the file");
  cmd_bd->callback([&] {
    action = [&] {
      auto ref_curves = read_curves_csv(bd_ref);
      auto test_curves = read_curves_csv(bd_test);
      const auto& ref = pick_curve(ref_curves, bd_ref_label, bd_ref);
      const auto& test = pick_curve(test_curves, bd_test_label, bd_test);
      double bd = bd_rate_percent(ref, test);
      std::cout << json{{"reference", ref.label},
                        {"test", test.label},
                        {"bd_rate_percent", bd}}
                       .dump(2)
                << "\n";
      return 0;
    };
  });

  ConfigCli report_cfg;
  auto* cmd_report =
      app.add_subcommand("report", "summary tables and plot for a run directory");
  report_cfg.attach(cmd_report);
  cmd_report->callback([&] {
    action = [&] {
      Pipeline pipe(report_cfg.resolve());
      pipe.write_report();
      std::cout << json{{"report", (pipe.out() / "report" / "report.txt").string()}}
                       .dump(2)
                << "\n";
      return 0;
    };
  });

  std::vector<std::string> plot_inputs;
  std::string plot_output = "rd_curves.svg";
  auto* cmd_plot = app.add_subcommand("plot", "svg plot from curve csv files");
  cmd_plot->add_option("--input", plot_inputs, "curve csv files")->required();
  cmd_plot->add_option("--output", plot_output, "output svg path");
  cmd_plot->callback([&] {
    action = [&] {
      std::vector<RdCurve> curves;
      for (const auto& f : plot_inputs) {
        for (auto& c : read_curves_csv(f)) curves.push_back(c);
      }
      emit_plot(curves, plot_output);
      std::cout << json{{"plot", plot_output}}.dump(2) << "\n";
      return 0;
    };
  });

  std::string gen_dir;
  int64_t gen_count = 64, gen_h = 256, gen_w = 256;
  std::uint64_t gen_seed = 0;
  auto* cmd_gen =
      app.add_subcommand("gen-data", "write a synthetic training/eval image corpus");
  cmd_gen->add_option("--dir", gen_dir, "output directory")->required();
  cmd_gen->add_option("--count", gen_count, "number of images");
  cmd_gen->add_option("--height", gen_h, "image height");
  cmd_gen->add_option("--width", gen_w, "image width");
  cmd_gen->add_option("--seed", gen_seed, "generator seed");
  cmd_gen->callback([&] {
    action = [&] {
      generate_synthetic_corpus(gen_dir, gen_count, gen_h, gen_w, gen_seed);
      std::cout << json{{"dir", gen_dir}, {"count", gen_count}}.dump(2) << "\n";
      return 0;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() != 0) {
      std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    }
    return app.exit(e);
  }

  auto fail = [](const char* kind, const std::exception& e) {
    std::cerr << json{{"error", kind}, {"message", e.what()}}.dump() << "\n";
    return 1;
  };
  try {
    return action();
  } catch (const IoError& e) {
    return fail("io_error", e);
  } catch (const StateError& e) {
    return fail("state_error", e);
  } catch (const NumericalError& e) {
    return fail("numerical_error", e);
  } catch (const StructuralError& e) {
    return fail("structural_error", e);
  } catch (const std::invalid_argument& e) {
    return fail("invalid_argument", e);
  } catch (const std::exception& e) {
    return fail("error", e);
  }
}
